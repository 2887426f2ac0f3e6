//! Line-based schema descriptor parser.
//!
//! Grammar (one feature per line, `#` comments and blank lines ignored):
//!
//! ```text
//! version <tag>
//! <name> <kind> <role> [values=a|b|c] [range=lo..hi] [unit=text]
//! ```
//!
//! `kind` is `continuous`, `categorical`, or `binary`; `role` is `covariate`,
//! `label`, or `group`. Discrete kinds require `values=`; `range=` applies to
//! continuous features only.

use super::{FeatureKind, FeatureRole, FeatureSpec, SchemaError, TableSchema};

pub(super) fn parse(text: &str) -> Result<TableSchema, SchemaError> {
    let mut version = String::from("v1");
    let mut features = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line = match line.find('#') {
            Some(pos) => line[..pos].trim_end(),
            None => line,
        };
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let first = tokens.next().unwrap();
        if first == "version" {
            version = tokens
                .next()
                .ok_or_else(|| err(lineno, "version line needs a tag"))?
                .to_string();
            if tokens.next().is_some() {
                return Err(err(lineno, "trailing tokens after version tag"));
            }
            continue;
        }

        let name = first.to_string();
        let kind = match tokens.next() {
            Some("continuous") => FeatureKind::Continuous,
            Some("categorical") => FeatureKind::Categorical,
            Some("binary") => FeatureKind::Binary,
            Some(other) => return Err(err(lineno, &format!("unknown kind {other:?}"))),
            None => return Err(err(lineno, "missing feature kind")),
        };
        let role = match tokens.next() {
            Some("covariate") => FeatureRole::Covariate,
            Some("label") => FeatureRole::Label,
            Some("group") => FeatureRole::Group,
            Some(other) => return Err(err(lineno, &format!("unknown role {other:?}"))),
            None => return Err(err(lineno, "missing feature role")),
        };

        let mut spec = FeatureSpec {
            name,
            kind,
            role,
            unit: None,
            allowed_values: Vec::new(),
            range: None,
        };
        for token in tokens {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| err(lineno, &format!("expected key=value, got {token:?}")))?;
            match key {
                "values" => {
                    spec.allowed_values = value.split('|').map(|v| v.to_string()).collect();
                    if spec.allowed_values.iter().any(|v| v.is_empty()) {
                        return Err(err(lineno, "empty entry in values list"));
                    }
                }
                "range" => {
                    let (lo, hi) = value
                        .split_once("..")
                        .ok_or_else(|| err(lineno, "range must be lo..hi"))?;
                    let lo: f64 = lo.parse().map_err(|_| err(lineno, "bad range lower bound"))?;
                    let hi: f64 = hi.parse().map_err(|_| err(lineno, "bad range upper bound"))?;
                    spec.range = Some((lo, hi));
                }
                "unit" => spec.unit = Some(value.to_string()),
                other => return Err(err(lineno, &format!("unknown key {other:?}"))),
            }
        }
        features.push(spec);
    }

    TableSchema::new(features, version)
}

fn err(lineno: usize, msg: &str) -> SchemaError {
    SchemaError::Descriptor {
        line: lineno + 1,
        msg: msg.to_string(),
    }
}
