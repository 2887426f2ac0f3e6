//! Controlled distribution drift for test fixtures: shifts and inflates
//! continuous features, mixes categorical features toward uniform. Severity 0
//! is the identity, so fixtures can dial drift per feature.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::schema::{ColumnData, DataTable, TableBuilder, Value};

use super::GenerateError;

/// Apply per-feature drift.
///
/// Continuous features with severity `f` are shifted by `f` times their
/// standard deviation and get extra noise of the same scale (variance
/// inflation), then clamp to any declared range. Categorical cells are
/// replaced by a uniform draw over the allowed values with probability
/// `min(f, 1)`. Missing cells stay missing; features not named keep severity
/// 0 and pass through untouched.
pub fn degrade(
    table: &DataTable,
    severity_per_feature: &BTreeMap<String, f64>,
    rng_seed: u64,
) -> Result<DataTable, GenerateError> {
    let schema = table.schema();
    for (name, &severity) in severity_per_feature {
        if schema.index_of(name).is_none() {
            return Err(GenerateError::UnknownFeature(name.clone()));
        }
        if severity < 0.0 {
            return Err(GenerateError::NegativeSeverity {
                feature: name.clone(),
                value: severity,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n_rows = table.n_rows();

    // Transform column by column so severity-0 features stay bit-identical.
    let mut new_columns: Vec<Vec<Option<Value>>> = Vec::with_capacity(schema.n_features());
    for (idx, spec) in schema.features().iter().enumerate() {
        let severity = severity_per_feature.get(&spec.name).copied().unwrap_or(0.0);
        let mut column: Vec<Option<Value>> = Vec::with_capacity(n_rows);
        match table.column(idx) {
            ColumnData::Continuous(values) => {
                let shift_scale = if severity > 0.0 {
                    let observed = table.non_missing_continuous(idx);
                    severity * std_dev(&observed)
                } else {
                    0.0
                };
                for (row, &v) in values.iter().enumerate() {
                    if table.is_missing(idx, row) {
                        column.push(None);
                    } else if severity == 0.0 {
                        column.push(Some(Value::Continuous(v)));
                    } else {
                        let mut out = v + shift_scale + shift_scale * normal.sample(&mut rng);
                        if let Some((lo, hi)) = spec.range {
                            out = out.clamp(lo, hi);
                        }
                        column.push(Some(Value::Continuous(out)));
                    }
                }
            }
            ColumnData::Categorical(values) => {
                let mix = severity.min(1.0);
                let k = spec.allowed_values.len() as u32;
                for (row, &v) in values.iter().enumerate() {
                    if table.is_missing(idx, row) {
                        column.push(None);
                    } else if severity == 0.0 {
                        column.push(Some(Value::Categorical(v)));
                    } else {
                        let out = if rng.random::<f64>() < mix {
                            rng.random_range(0..k)
                        } else {
                            v
                        };
                        column.push(Some(Value::Categorical(out)));
                    }
                }
            }
        }
        new_columns.push(column);
    }

    let mut builder = TableBuilder::new(table.schema_arc());
    let mut row_buf: Vec<Option<Value>> = Vec::with_capacity(schema.n_features());
    for row in 0..n_rows {
        row_buf.clear();
        row_buf.extend(new_columns.iter().map(|col| col[row].clone()));
        builder
            .push_values(&row_buf)
            .expect("degraded values are clamped to the schema");
    }
    Ok(builder.finish())
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}
