//! Simulated ground-truth datasets for offline benchmarking: Gaussian
//! covariates with geometrically decaying label weights, an optional
//! two-group mean shift, and a Bernoulli mortality-style label. The
//! paper-trends benchmark config runs entirely on data from here.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::schema::{DataTable, FeatureRole, FeatureSpec, TableBuilder, TableSchema, Value};

/// Ground-truth generating process.
#[derive(Debug, Clone)]
pub struct SimSpec {
    /// Number of continuous covariates x1..xN.
    pub n_features: usize,
    /// Label weight of x_j is `weight_scale * weight_decay^j`.
    pub weight_scale: f64,
    pub weight_decay: f64,
    /// Log-odds intercept; around -2 gives a mortality-like positive rate.
    pub intercept: f64,
    /// Mean shift of every covariate by group: M gets +shift, F gets -shift.
    pub group_shift: f64,
    /// Probability that a covariate cell is missing.
    pub missing_rate: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            n_features: 20,
            weight_scale: 1.2,
            weight_decay: 0.9,
            intercept: -2.0,
            group_shift: 0.0,
            missing_rate: 0.0,
        }
    }
}

impl SimSpec {
    pub fn weight(&self, j: usize) -> f64 {
        self.weight_scale * self.weight_decay.powi(j as i32)
    }
}

/// Schema of the simulated dataset: group column first, then covariates in
/// weight order, label last.
pub fn sim_schema(spec: &SimSpec) -> Arc<TableSchema> {
    let mut specs = Vec::with_capacity(spec.n_features + 2);
    specs.push(FeatureSpec::binary("gender", "F", "M").with_role(FeatureRole::Group));
    for j in 0..spec.n_features {
        specs.push(FeatureSpec::continuous(format!("x{:02}", j + 1)));
    }
    specs.push(FeatureSpec::binary("death", "0", "1").with_role(FeatureRole::Label));
    TableSchema::new(specs, "sim-v1").expect("sim schema is valid").into_arc()
}

/// Draw `n_rows` records from the generating process.
pub fn simulate(spec: &SimSpec, n_rows: usize, seed: u64) -> DataTable {
    let schema = sim_schema(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut builder = TableBuilder::new(Arc::clone(&schema));
    let mut row: Vec<Option<Value>> = Vec::with_capacity(spec.n_features + 2);

    for _ in 0..n_rows {
        row.clear();
        let male = rng.random::<f64>() < 0.5;
        let shift = if male { spec.group_shift } else { -spec.group_shift };
        row.push(Some(Value::Categorical(u32::from(male))));

        let mut logit = spec.intercept;
        for j in 0..spec.n_features {
            let x: f64 = shift + normal.sample(&mut rng);
            logit += spec.weight(j) * x;
            if spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate {
                row.push(None);
            } else {
                row.push(Some(Value::Continuous(x)));
            }
        }
        let p = 1.0 / (1.0 + (-logit).exp());
        let y = u32::from(rng.random::<f64>() < p);
        row.push(Some(Value::Categorical(y)));
        builder.push_values(&row).expect("simulated row is schema-valid");
    }
    builder.finish()
}

/// Schema descriptor text for the simulated dataset.
pub fn sim_schema_descriptor(spec: &SimSpec) -> String {
    let mut out = String::from("version sim-v1\n\ngender binary group values=F|M\n");
    for j in 0..spec.n_features {
        out.push_str(&format!("x{:02} continuous covariate\n", j + 1));
    }
    out.push_str("death binary label values=0|1\n");
    out
}

/// Write a demo dataset: `real.csv` plus its `schema.txt` descriptor.
pub fn write_fixture(
    spec: &SimSpec,
    n_rows: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> std::io::Result<(std::path::PathBuf, std::path::PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("real.csv");
    let schema_path = dir.join("schema.txt");
    let table = simulate(spec, n_rows, seed);
    table
        .write_csv_path(&csv_path)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    std::fs::write(&schema_path, sim_schema_descriptor(spec))?;
    Ok((csv_path, schema_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_is_deterministic_and_labeled() {
        let spec = SimSpec::default();
        let a = simulate(&spec, 500, 3);
        let b = simulate(&spec, 500, 3);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let rate = a.summary().positive_label_rate;
        assert!(rate > 0.02 && rate < 0.6, "positive rate {rate}");
    }

    #[test]
    fn descriptor_parses_back_to_the_same_schema() {
        let spec = SimSpec {
            n_features: 4,
            ..SimSpec::default()
        };
        let text = sim_schema_descriptor(&spec);
        let parsed = TableSchema::from_descriptor(&text).unwrap();
        assert_eq!(&parsed, sim_schema(&spec).as_ref());
    }

    #[test]
    fn group_shift_separates_means() {
        let spec = SimSpec {
            n_features: 2,
            group_shift: 1.5,
            ..SimSpec::default()
        };
        let t = simulate(&spec, 4000, 9);
        let f_rows = t.rows_with_category(0, 0);
        let m_rows = t.rows_with_category(0, 1);
        let mean = |rows: &[usize]| {
            let part = t.take_rows(rows);
            let v = part.non_missing_continuous(1);
            v.iter().sum::<f64>() / v.len() as f64
        };
        let gap = mean(&m_rows) - mean(&f_rows);
        assert!((gap - 3.0).abs() < 0.2, "gap {gap}");
    }

    #[test]
    fn missing_rate_produces_missing_cells() {
        let spec = SimSpec {
            n_features: 5,
            missing_rate: 0.1,
            ..SimSpec::default()
        };
        let t = simulate(&spec, 1000, 4);
        let frac = t.missing_total() as f64 / (1000.0 * 5.0);
        assert!((frac - 0.1).abs() < 0.03, "missing fraction {frac}");
    }
}
