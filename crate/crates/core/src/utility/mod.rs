//! Downstream-utility evaluation: a from-scratch gradient-boosted tree
//! classifier plus AUROC/AUPRC with bootstrap confidence intervals, in
//! within-dataset and across-dataset (train on synthetic, test on real)
//! scenarios.

mod gbm;
mod metrics;

pub use gbm::{GbmConfig, GbmModel, Tree, TreeNode, MODEL_FORMAT_VERSION};
pub use metrics::{auprc, auroc, bootstrap_ci, Metric};

use serde::Serialize;
use thiserror::Error;

use crate::schema::{ColumnData, DataTable, FeatureKind, TableError};

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("table error: {0}")]
    Table(#[from] TableError),
    #[error("labels contain fewer than 2 rows of one class")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("bootstrap could not draw two-class resamples")]
    BootstrapDegenerate,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("feature {0:?} missing from table")]
    MissingFeature(String),
    #[error("rank size {k} exceeds {available} model features")]
    RankTooLarge { k: usize, available: usize },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("no labeled rows in table")]
    NoLabeledRows,
}

/// Per-covariate fill-in values learned on a training table: median for
/// continuous features, mode for categorical ones.
#[derive(Debug, Clone)]
pub struct Imputer {
    feature_names: Vec<String>,
    fill: Vec<f64>,
}

impl Imputer {
    pub fn fit(table: &DataTable, feature_names: &[String]) -> Result<Self, UtilityError> {
        let mut fill = Vec::with_capacity(feature_names.len());
        for name in feature_names {
            let idx = table
                .schema()
                .index_of(name)
                .ok_or_else(|| UtilityError::MissingFeature(name.clone()))?;
            let value = match table.schema().feature(idx).kind {
                FeatureKind::Continuous => {
                    let mut values = table.non_missing_continuous(idx);
                    if values.is_empty() {
                        0.0
                    } else {
                        values.sort_by(f64::total_cmp);
                        values[values.len() / 2]
                    }
                }
                FeatureKind::Categorical | FeatureKind::Binary => {
                    let counts = table.category_counts(idx);
                    let spec = table.schema().feature(idx);
                    // mode; ties broken by allowed-value order
                    let mut best = (0usize, -1.0);
                    for (vi, value) in spec.allowed_values.iter().enumerate() {
                        let c = counts.get(value).copied().unwrap_or(0.0);
                        if c > best.1 {
                            best = (vi, c);
                        }
                    }
                    best.0 as f64
                }
            };
            fill.push(value);
        }
        Ok(Imputer {
            feature_names: feature_names.to_vec(),
            fill,
        })
    }

    fn fill_for(&self, name: &str) -> Option<f64> {
        self.feature_names.iter().position(|n| n == name).map(|i| self.fill[i])
    }
}

/// Feature-major numeric design matrix. Categorical cells hold the index of
/// their value in `allowed_values`; missing cells are NaN unless an imputer
/// fills them.
pub(crate) struct DesignMatrix {
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
}

pub(crate) fn design_matrix(
    table: &DataTable,
    feature_names: &[String],
    imputer: Option<&Imputer>,
) -> Result<DesignMatrix, UtilityError> {
    // Rows with a missing label are unusable for supervised fit/eval.
    let labels_all = table.labels01();
    let keep: Vec<usize> = labels_all
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_some())
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(UtilityError::NoLabeledRows);
    }
    let labels: Vec<u8> = keep.iter().map(|&i| labels_all[i].unwrap()).collect();

    let mut columns = Vec::with_capacity(feature_names.len());
    for name in feature_names {
        let idx = table
            .schema()
            .index_of(name)
            .ok_or_else(|| UtilityError::MissingFeature(name.clone()))?;
        let fill = imputer.and_then(|imp| imp.fill_for(name)).unwrap_or(f64::NAN);
        let col: Vec<f64> = match table.column(idx) {
            ColumnData::Continuous(values) => keep
                .iter()
                .map(|&r| {
                    if table.is_missing(idx, r) {
                        fill
                    } else {
                        values[r]
                    }
                })
                .collect(),
            ColumnData::Categorical(values) => keep
                .iter()
                .map(|&r| {
                    if table.is_missing(idx, r) {
                        fill
                    } else {
                        values[r] as f64
                    }
                })
                .collect(),
        };
        columns.push(col);
    }
    Ok(DesignMatrix {
        columns,
        labels,
        feature_names: feature_names.to_vec(),
    })
}

fn covariate_names(table: &DataTable) -> Vec<String> {
    table
        .schema()
        .covariate_indices()
        .map(|i| table.schema().feature(i).name.clone())
        .collect()
}

/// How training handles missing covariate cells. Rows with a missing label
/// are always dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Fill with the training table's per-feature median/mode.
    #[default]
    ImputeMedianMode,
    /// Train only on rows with every covariate present.
    DropIncompleteRows,
}

/// Train a boosted classifier on a table with the default missing-value
/// policy (median/mode imputation).
pub fn train(table: &DataTable, config: &GbmConfig) -> Result<GbmModel, UtilityError> {
    train_with_missing_policy(table, config, MissingPolicy::default())
}

pub fn train_with_missing_policy(
    table: &DataTable,
    config: &GbmConfig,
    policy: MissingPolicy,
) -> Result<GbmModel, UtilityError> {
    let features = covariate_names(table);
    match policy {
        MissingPolicy::ImputeMedianMode => {
            let imputer = Imputer::fit(table, &features)?;
            let matrix = design_matrix(table, &features, Some(&imputer))?;
            gbm::fit(&matrix.columns, &matrix.labels, &matrix.feature_names, config)
        }
        MissingPolicy::DropIncompleteRows => {
            let complete: Vec<usize> = (0..table.n_rows())
                .filter(|&r| (0..table.schema().n_features()).all(|f| !table.is_missing(f, r)))
                .collect();
            if complete.is_empty() {
                return Err(UtilityError::NoLabeledRows);
            }
            let subset = table.take_rows(&complete);
            let matrix = design_matrix(&subset, &features, None)?;
            gbm::fit(&matrix.columns, &matrix.labels, &matrix.feature_names, config)
        }
    }
}

/// Positive-class probabilities for every row of `table`, in row order.
/// Rows with missing split features route along each node's learned default
/// direction.
pub fn predict_proba(model: &GbmModel, table: &DataTable) -> Result<Vec<f64>, UtilityError> {
    for name in &model.feature_names {
        if table.schema().index_of(name).is_none() {
            return Err(UtilityError::MissingFeature(name.clone()));
        }
    }
    let mut columns = Vec::with_capacity(model.feature_names.len());
    for name in &model.feature_names {
        let idx = table.schema().index_of(name).unwrap();
        let col: Vec<f64> = match table.column(idx) {
            ColumnData::Continuous(values) => (0..table.n_rows())
                .map(|r| if table.is_missing(idx, r) { f64::NAN } else { values[r] })
                .collect(),
            ColumnData::Categorical(values) => (0..table.n_rows())
                .map(|r| if table.is_missing(idx, r) { f64::NAN } else { values[r] as f64 })
                .collect(),
        };
        columns.push(col);
    }
    Ok((0..table.n_rows())
        .map(|row| gbm::sigmoid(model.raw_score(row, &columns)))
        .collect())
}

/// Evaluation scenario tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Within,
    Across,
}

/// Classifier performance with bootstrap intervals.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub auroc: f64,
    pub auroc_ci: (f64, f64),
    pub auprc: f64,
    pub auprc_ci: (f64, f64),
    pub n_train: usize,
    pub n_test: usize,
}

fn evaluate(
    model: &GbmModel,
    test: &DataTable,
    scenario: Scenario,
    n_train: usize,
    n_boot: usize,
    seed: u64,
) -> Result<EvalReport, UtilityError> {
    let probs = predict_proba(model, test)?;
    let labels_all = test.labels01();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (p, l) in probs.into_iter().zip(labels_all) {
        if let Some(y) = l {
            scores.push(p);
            labels.push(y);
        }
    }
    let auroc_value = auroc(&scores, &labels)?;
    let auprc_value = auprc(&scores, &labels)?;
    let auroc_ci = bootstrap_ci(&scores, &labels, Metric::Auroc, n_boot, seed)?;
    let auprc_ci = bootstrap_ci(&scores, &labels, Metric::Auprc, n_boot, seed.wrapping_add(1))?;
    // percentile intervals are widened, when necessary, to contain the point
    // estimate
    let bracket = |value: f64, (lo, hi): (f64, f64)| (lo.min(value), hi.max(value));
    Ok(EvalReport {
        scenario,
        auroc: auroc_value,
        auroc_ci: bracket(auroc_value, auroc_ci),
        auprc: auprc_value,
        auprc_ci: bracket(auprc_value, auprc_ci),
        n_train,
        n_test: labels.len(),
    })
}

/// Within-dataset evaluation: stratified 80/20 split of `synthetic`, train on
/// the 80, report metrics with bootstrap intervals on the 20.
pub fn eval_within(
    synthetic: &DataTable,
    config: &GbmConfig,
    n_boot: usize,
) -> Result<EvalReport, UtilityError> {
    let parts = crate::schema::split(synthetic, 0.8, config.rng_seed)?;
    let model = train(&parts.first, config)?;
    evaluate(
        &model,
        &parts.second,
        Scenario::Within,
        parts.first.n_rows(),
        n_boot,
        config.rng_seed.wrapping_add(101),
    )
}

/// Across-dataset evaluation: train on all synthetic rows, test on real rows.
pub fn eval_across(
    synthetic: &DataTable,
    real_test: &DataTable,
    config: &GbmConfig,
    n_boot: usize,
) -> Result<EvalReport, UtilityError> {
    let model = train(synthetic, config)?;
    eval_across_with_model(&model, synthetic.n_rows(), real_test, config, n_boot)
}

/// Across-dataset evaluation reusing an already-trained model.
pub fn eval_across_with_model(
    model: &GbmModel,
    n_train: usize,
    real_test: &DataTable,
    config: &GbmConfig,
    n_boot: usize,
) -> Result<EvalReport, UtilityError> {
    evaluate(
        model,
        real_test,
        Scenario::Across,
        n_train,
        n_boot,
        config.rng_seed.wrapping_add(211),
    )
}

/// Feature names by descending total split gain; ties break lexicographically.
pub fn top_k_features(model: &GbmModel, k: usize) -> Result<Vec<String>, UtilityError> {
    let available = model.feature_importance.len();
    if k > available {
        return Err(UtilityError::RankTooLarge { k, available });
    }
    let mut ranked: Vec<(&String, f64)> =
        model.feature_importance.iter().map(|(n, &g)| (n, g)).collect();
    // map iteration is name-ordered; stable sort keeps the lexicographic tie rule
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked.into_iter().take(k).map(|(n, _)| n.clone()).collect())
}
