//! Dataset and schema data model: typed feature specs, columnar tables with
//! missing-value masks, CSV ingestion, deterministic splits, and summary
//! statistics.

mod csv_io;
mod descriptor;
mod split;
mod table;

pub use split::{split, SplitResult};
pub use table::{
    CellRef, ColumnData, DataTable, DatasetSummary, RowViolation, TableBuilder, TableError, Value,
};

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

/// Kind of values a feature holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical,
    Binary,
}

impl FeatureKind {
    pub fn is_discrete(self) -> bool {
        matches!(self, FeatureKind::Categorical | FeatureKind::Binary)
    }
}

/// Role a feature plays in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    Covariate,
    Label,
    Group,
}

/// Typed description of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub role: FeatureRole,
    pub unit: Option<String>,
    /// Allowed values for categorical/binary features. For binary labels the
    /// second value is the positive class.
    pub allowed_values: Vec<String>,
    /// Optional inclusive bounds for continuous features.
    pub range: Option<(f64, f64)>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            role: FeatureRole::Covariate,
            unit: None,
            allowed_values: Vec::new(),
            range: None,
        }
    }

    pub fn categorical(name: impl Into<String>, values: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            role: FeatureRole::Covariate,
            unit: None,
            allowed_values: values.iter().map(|v| v.to_string()).collect(),
            range: None,
        }
    }

    pub fn binary(name: impl Into<String>, negative: &str, positive: &str) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Binary,
            role: FeatureRole::Covariate,
            unit: None,
            allowed_values: vec![negative.to_string(), positive.to_string()],
            range: None,
        }
    }

    pub fn with_role(mut self, role: FeatureRole) -> Self {
        self.role = role;
        self
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some((lo, hi));
        self
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.name.is_empty() {
            return Err(SchemaError::EmptyName);
        }
        match self.kind {
            FeatureKind::Continuous => {
                if !self.allowed_values.is_empty() {
                    return Err(SchemaError::ValuesOnContinuous(self.name.clone()));
                }
                if let Some((lo, hi)) = self.range {
                    // NaN bounds must fail too
                    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                        return Err(SchemaError::BadRange {
                            feature: self.name.clone(),
                            lo,
                            hi,
                        });
                    }
                }
            }
            FeatureKind::Categorical | FeatureKind::Binary => {
                if self.allowed_values.is_empty() {
                    return Err(SchemaError::MissingValues(self.name.clone()));
                }
                if self.kind == FeatureKind::Binary && self.allowed_values.len() != 2 {
                    return Err(SchemaError::BinaryArity(self.name.clone()));
                }
                if self.range.is_some() {
                    return Err(SchemaError::RangeOnDiscrete(self.name.clone()));
                }
                let mut seen = std::collections::HashSet::new();
                for v in &self.allowed_values {
                    if !seen.insert(v.as_str()) {
                        return Err(SchemaError::DuplicateValue {
                            feature: self.name.clone(),
                            value: v.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ordered, validated collection of feature specs. Feature order is stable
/// and defines the conditional-generation order.
#[derive(Debug, Clone)]
pub struct TableSchema {
    features: Vec<FeatureSpec>,
    version: String,
    index: HashMap<String, usize>,
    label: usize,
}

impl PartialEq for TableSchema {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features && self.version == other.version
    }
}

impl TableSchema {
    pub fn new(features: Vec<FeatureSpec>, version: impl Into<String>) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::NoFeatures);
        }
        let mut index = HashMap::new();
        for (i, spec) in features.iter().enumerate() {
            spec.validate()?;
            if index.insert(spec.name.clone(), i).is_some() {
                return Err(SchemaError::DuplicateFeature(spec.name.clone()));
            }
        }
        let labels: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.role == FeatureRole::Label)
            .map(|(i, _)| i)
            .collect();
        let label = match labels.as_slice() {
            [one] => *one,
            [] => return Err(SchemaError::NoLabel),
            many => {
                return Err(SchemaError::MultipleLabels(
                    many.iter().map(|&i| features[i].name.clone()).collect(),
                ))
            }
        };
        if features[label].kind != FeatureKind::Binary {
            return Err(SchemaError::LabelNotBinary(features[label].name.clone()));
        }
        for f in &features {
            if f.role == FeatureRole::Group && !f.kind.is_discrete() {
                return Err(SchemaError::GroupNotDiscrete(f.name.clone()));
            }
        }
        Ok(TableSchema {
            features,
            version: version.into(),
            index,
            label,
        })
    }

    /// Parse a schema descriptor file. One feature per line; grammar
    /// documented in the repository README.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)?;
        descriptor::parse(&text)
    }

    pub fn from_descriptor(text: &str) -> Result<Self, SchemaError> {
        descriptor::parse(text)
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn feature(&self, idx: usize) -> &FeatureSpec {
        &self.features[idx]
    }

    pub fn label_index(&self) -> usize {
        self.label
    }

    pub fn label_feature(&self) -> &FeatureSpec {
        &self.features[self.label]
    }

    /// The label value counted as positive (second allowed value).
    pub fn positive_label(&self) -> &str {
        &self.label_feature().allowed_values[1]
    }

    pub fn group_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.role == FeatureRole::Group)
    }

    pub fn covariate_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.features.len()).filter(move |&i| i != self.label)
    }

    /// True when `other` has a feature of the same name and kind for every
    /// feature named in `names`.
    pub fn compatible_on<'a>(&self, other: &TableSchema, names: impl IntoIterator<Item = &'a str>) -> bool {
        names.into_iter().all(|n| {
            match (self.index_of(n), other.index_of(n)) {
                (Some(a), Some(b)) => {
                    let (fa, fb) = (&self.features[a], &other.features[b]);
                    fa.kind == fb.kind && fa.allowed_values == fb.allowed_values
                }
                _ => false,
            }
        })
    }

    pub fn into_arc(self) -> Arc<TableSchema> {
        Arc::new(self)
    }
}

/// Schema definition and validation failures.
#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("descriptor line {line}: {msg}")]
    Descriptor { line: usize, msg: String },
    #[error("schema has no features")]
    NoFeatures,
    #[error("feature name is empty")]
    EmptyName,
    #[error("duplicate feature name {0:?}")]
    DuplicateFeature(String),
    #[error("schema has no label feature")]
    NoLabel,
    #[error("schema has multiple label features: {0:?}")]
    MultipleLabels(Vec<String>),
    #[error("label feature {0:?} must be binary")]
    LabelNotBinary(String),
    #[error("group feature {0:?} must be categorical or binary")]
    GroupNotDiscrete(String),
    #[error("continuous feature {0:?} must not declare allowed values")]
    ValuesOnContinuous(String),
    #[error("feature {0:?} needs a non-empty allowed value list")]
    MissingValues(String),
    #[error("binary feature {0:?} must list exactly two values")]
    BinaryArity(String),
    #[error("feature {0:?} must not declare a range")]
    RangeOnDiscrete(String),
    #[error("feature {feature:?}: range lo {lo} must be below hi {hi}")]
    BadRange { feature: String, lo: f64, hi: f64 },
    #[error("feature {feature:?}: duplicate allowed value {value:?}")]
    DuplicateValue { feature: String, value: String },
}
