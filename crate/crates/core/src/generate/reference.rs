//! Offline statistical reference backend: histogram/frequency marginals plus
//! sequential linear-Gaussian conditionals fitted on the seed sample.
//!
//! Continuous features draw from their marginal histogram, or, under the
//! conditional and group-based strategies, from a Gaussian around a linear
//! function of the continuous features already sampled for the row (schema
//! order). Categorical features draw from frequency tables, per group when
//! group-based. Everything is deterministic given the request seed.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::schema::{
    DataTable, FeatureKind, TableBuilder, TableSchema, Value,
};

use super::{
    BackendBatch, GenerateError, GenerationRequest, GenerationStrategy, GeneratorBackend,
    StrategyKind,
};

/// Minimum complete rows to fit a conditional; below this the feature falls
/// back to its marginal, flagged in the model warnings.
const MIN_CONDITIONAL_ROWS: usize = 30;
/// Ridge added to the normal equations for numerical stability.
const RIDGE: f64 = 1e-6;

/// Histogram marginal with Freedman-Diaconis bin count (1-bin floor).
#[derive(Debug, Clone)]
pub(crate) struct HistogramMarginal {
    lo: f64,
    bin_width: f64,
    /// Normalized bin probabilities.
    probs: Vec<f64>,
}

impl HistogramMarginal {
    fn fit(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let lo = sorted[0];
        let hi = sorted[n - 1];
        if lo == hi {
            return HistogramMarginal {
                lo,
                bin_width: 0.0,
                probs: vec![1.0],
            };
        }
        let q1 = sorted[n / 4];
        let q3 = sorted[(3 * n) / 4];
        let iqr = q3 - q1;
        let fd_width = 2.0 * iqr / (n as f64).cbrt();
        let n_bins = if fd_width > 0.0 {
            (((hi - lo) / fd_width).ceil() as usize).clamp(1, 512)
        } else {
            1
        };
        let counts = crate::fidelity::histogram(&sorted, lo, hi, n_bins);
        let total: f64 = counts.iter().sum();
        HistogramMarginal {
            lo,
            bin_width: (hi - lo) / n_bins as f64,
            probs: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.bin_width == 0.0 {
            return self.lo;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut bin = self.probs.len() - 1;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                bin = i;
                break;
            }
        }
        let within: f64 = rng.random();
        self.lo + (bin as f64 + within) * self.bin_width
    }
}

/// Frequency table over a feature's allowed values.
#[derive(Debug, Clone)]
pub(crate) struct FrequencyMarginal {
    /// Probability per allowed-value index; sums to 1.
    probs: Vec<f64>,
}

impl FrequencyMarginal {
    fn fit(counts: &BTreeMap<String, f64>, allowed: &[String]) -> Self {
        let total: f64 = counts.values().sum();
        let probs: Vec<f64> = if total > 0.0 {
            allowed
                .iter()
                .map(|v| counts.get(v).copied().unwrap_or(0.0) / total)
                .collect()
        } else {
            vec![1.0 / allowed.len() as f64; allowed.len()]
        };
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        FrequencyMarginal { probs }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u32;
            }
        }
        (self.probs.len() - 1) as u32
    }
}

/// Linear-Gaussian conditional of a continuous feature on the continuous
/// features before it in schema order.
#[derive(Debug, Clone)]
pub(crate) struct LinearConditional {
    intercept: f64,
    /// (predecessor feature index, weight)
    weights: Vec<(usize, f64)>,
    residual_std: f64,
}

/// Bernoulli conditional of the label on the continuous features before it.
/// Non-label categorical features stay predecessor-blind; the label is the
/// one discrete feature whose dependence on covariates the downstream
/// evaluation hinges on.
#[derive(Debug, Clone)]
pub(crate) struct LogisticConditional {
    intercept: f64,
    weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) enum Conditional {
    Linear(LinearConditional),
    Logistic(LogisticConditional),
}

#[derive(Debug, Clone)]
pub(crate) enum Marginal {
    Histogram(HistogramMarginal),
    Frequency(FrequencyMarginal),
}

#[derive(Debug, Clone)]
pub(crate) struct FeatureModel {
    pub(crate) marginal: Marginal,
    pub(crate) conditional: Option<Conditional>,
}

/// The per-feature estimates for one data slice (everything, or one group).
#[derive(Debug, Clone)]
pub(crate) struct SliceModel {
    features: Vec<FeatureModel>,
}

/// Fitted parameters the reference backend samples from.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    schema: Arc<TableSchema>,
    strategy: GenerationStrategy,
    base: SliceModel,
    /// For group-based fits: the group feature index and a slice model per
    /// observed group value index.
    per_group: Option<(usize, Vec<(u32, SliceModel)>)>,
    warnings: Vec<String>,
    degenerate_group: bool,
}

impl ReferenceModel {
    pub fn strategy(&self) -> &GenerationStrategy {
        &self.strategy
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// True when a group-based fit found a single observed group value and
    /// fell back to a plain conditional fit.
    pub fn is_degenerate_group(&self) -> bool {
        self.degenerate_group
    }

    /// Fitted conditional weights of a feature on its predecessors, as
    /// (predecessor name, weight) pairs. None when the feature has no
    /// conditional (marginal-only fit).
    pub fn conditional_weights(&self, feature: &str) -> Option<Vec<(String, f64)>> {
        let idx = self.schema.index_of(feature)?;
        let weights = match self.base.features[idx].conditional.as_ref()? {
            Conditional::Linear(c) => &c.weights,
            Conditional::Logistic(c) => &c.weights,
        };
        Some(
            weights
                .iter()
                .map(|&(j, w)| (self.schema.feature(j).name.clone(), w))
                .collect(),
        )
    }

    /// Marginal probabilities of a discrete feature, aligned with its
    /// allowed values.
    pub fn marginal_probs(&self, feature: &str) -> Option<Vec<(String, f64)>> {
        let idx = self.schema.index_of(feature)?;
        match &self.base.features[idx].marginal {
            Marginal::Frequency(f) => Some(
                self.schema
                    .feature(idx)
                    .allowed_values
                    .iter()
                    .cloned()
                    .zip(f.probs.iter().copied())
                    .collect(),
            ),
            Marginal::Histogram(_) => None,
        }
    }
}

/// Fit the reference model on a seed sample for a strategy.
///
/// Naive and schema-constrained fits estimate marginals only; conditional
/// adds sequential conditionals in schema order; group-based fits everything
/// per observed group value. Features with too few complete rows fall back to
/// marginal-only fits and are flagged.
pub fn fit_reference(
    seed_sample: &DataTable,
    strategy: &GenerationStrategy,
) -> Result<ReferenceModel, GenerateError> {
    if seed_sample.n_rows() == 0 {
        return Err(GenerateError::EmptySeed);
    }
    let schema = seed_sample.schema_arc();
    strategy.validate(&schema)?;

    let mut warnings = Vec::new();
    let conditionals = matches!(
        strategy.kind,
        StrategyKind::Conditional | StrategyKind::GroupBased
    );

    let mut degenerate_group = false;
    let mut per_group = None;
    if strategy.kind == StrategyKind::GroupBased {
        let gi = schema
            .index_of(strategy.group_feature.as_deref().unwrap())
            .expect("validated above");
        let observed: Vec<u32> = (0..schema.feature(gi).allowed_values.len() as u32)
            .filter(|&vi| !seed_sample.rows_with_category(gi, vi).is_empty())
            .collect();
        match observed.len() {
            0 => return Err(GenerateError::GroupUnobserved),
            1 => {
                degenerate_group = true;
                warnings.push(format!(
                    "group feature {:?} has a single observed value; falling back to a \
                     plain conditional fit",
                    schema.feature(gi).name
                ));
            }
            _ => {
                let mut slices = Vec::with_capacity(observed.len());
                for vi in observed {
                    let rows = seed_sample.rows_with_category(gi, vi);
                    let part = seed_sample.take_rows(&rows);
                    let slice = fit_slice(&part, conditionals, &mut warnings, Some(vi))?;
                    slices.push((vi, slice));
                }
                per_group = Some((gi, slices));
            }
        }
    }

    let base = fit_slice(seed_sample, conditionals, &mut warnings, None)?;

    Ok(ReferenceModel {
        schema,
        strategy: strategy.clone(),
        base,
        per_group,
        warnings,
        degenerate_group,
    })
}

fn fit_slice(
    table: &DataTable,
    conditionals: bool,
    warnings: &mut Vec<String>,
    group_value: Option<u32>,
) -> Result<SliceModel, GenerateError> {
    let schema = table.schema();
    let mut features = Vec::with_capacity(schema.n_features());
    for (idx, spec) in schema.features().iter().enumerate() {
        let marginal = match spec.kind {
            FeatureKind::Continuous => {
                let values = table.non_missing_continuous(idx);
                if values.is_empty() {
                    // nothing observed; fall back to the declared range when
                    // there is one, otherwise the fit is impossible
                    match spec.range {
                        Some((lo, hi)) => {
                            warnings.push(format!(
                                "feature {:?} has no observed values; sampling uniformly \
                                 from its declared range",
                                spec.name
                            ));
                            Marginal::Histogram(HistogramMarginal {
                                lo,
                                bin_width: hi - lo,
                                probs: vec![1.0],
                            })
                        }
                        None => {
                            return Err(GenerateError::UnfittableFeature {
                                feature: spec.name.clone(),
                                reason: "no observed values and no declared range".into(),
                            })
                        }
                    }
                } else {
                    Marginal::Histogram(HistogramMarginal::fit(&values))
                }
            }
            FeatureKind::Categorical | FeatureKind::Binary => {
                let counts = table.category_counts(idx);
                Marginal::Frequency(FrequencyMarginal::fit(&counts, &spec.allowed_values))
            }
        };

        let wants_conditional = conditionals
            && (spec.kind == FeatureKind::Continuous || idx == schema.label_index())
            && continuous_predecessors(schema, idx).next().is_some();
        let conditional = if wants_conditional {
            let fitted = if spec.kind == FeatureKind::Continuous {
                fit_conditional(table, idx).map(Conditional::Linear)
            } else {
                fit_label_conditional(table, idx).map(Conditional::Logistic)
            };
            match fitted {
                Some(c) => Some(c),
                None => {
                    let scope = match group_value {
                        Some(v) => format!(" (group value #{v})"),
                        None => String::new(),
                    };
                    warnings.push(format!(
                        "feature {:?}{scope}: fewer than {MIN_CONDITIONAL_ROWS} complete rows; \
                         using its marginal only",
                        spec.name
                    ));
                    None
                }
            }
        } else {
            None
        };

        features.push(FeatureModel { marginal, conditional });
    }
    Ok(SliceModel { features })
}

fn continuous_predecessors(schema: &TableSchema, target: usize) -> impl Iterator<Item = usize> + '_ {
    (0..target).filter(move |&j| schema.feature(j).kind == FeatureKind::Continuous)
}

fn complete_rows(table: &DataTable, target: usize, predecessors: &[usize]) -> Vec<usize> {
    (0..table.n_rows())
        .filter(|&r| {
            !table.is_missing(target, r) && predecessors.iter().all(|&j| !table.is_missing(j, r))
        })
        .collect()
}

/// Ordinary least squares of feature `target` on the continuous features
/// before it, over rows where all involved cells are present. Returns None
/// when there are too few complete rows.
#[allow(clippy::needless_range_loop)]
fn fit_conditional(table: &DataTable, target: usize) -> Option<LinearConditional> {
    let schema = table.schema();
    let predecessors: Vec<usize> = continuous_predecessors(schema, target).collect();
    if predecessors.is_empty() {
        return None;
    }

    let rows = complete_rows(table, target, &predecessors);
    if rows.len() < MIN_CONDITIONAL_ROWS {
        return None;
    }

    let k = predecessors.len() + 1; // intercept column first
    let mut xtx = vec![vec![0.0f64; k]; k];
    let mut xty = vec![0.0f64; k];
    for &r in &rows {
        let mut x = Vec::with_capacity(k);
        x.push(1.0);
        for &j in &predecessors {
            x.push(table.continuous_at(j, r));
        }
        let y = table.continuous_at(target, r);
        for a in 0..k {
            for b in a..k {
                xtx[a][b] += x[a] * x[b];
            }
            xty[a] += x[a] * y;
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[a][b] = xtx[b][a];
        }
        xtx[a][a] += RIDGE * rows.len() as f64;
    }

    let beta = solve(xtx, xty)?;

    // residual spread
    let mut ss = 0.0;
    for &r in &rows {
        let mut pred = beta[0];
        for (p, &j) in predecessors.iter().enumerate() {
            pred += beta[p + 1] * table.continuous_at(j, r);
        }
        let resid = table.continuous_at(target, r) - pred;
        ss += resid * resid;
    }
    let dof = (rows.len() - k).max(1);
    let residual_std = (ss / dof as f64).sqrt();

    Some(LinearConditional {
        intercept: beta[0],
        weights: predecessors
            .iter()
            .enumerate()
            .map(|(p, &j)| (j, beta[p + 1]))
            .collect(),
        residual_std,
    })
}

/// Logistic regression of the (binary) label on its continuous predecessors,
/// fitted by batch gradient descent on standardized inputs. Returns None for
/// too few complete rows or a single observed class.
#[allow(clippy::needless_range_loop)]
fn fit_label_conditional(table: &DataTable, target: usize) -> Option<LogisticConditional> {
    let schema = table.schema();
    let predecessors: Vec<usize> = continuous_predecessors(schema, target).collect();
    if predecessors.is_empty() {
        return None;
    }
    let rows = complete_rows(table, target, &predecessors);
    if rows.len() < MIN_CONDITIONAL_ROWS {
        return None;
    }

    let labels = table.labels01();
    let y: Vec<f64> = rows.iter().map(|&r| labels[r].unwrap() as f64).collect();
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return None;
    }

    let n = rows.len();
    let k = predecessors.len();
    let mut mean = vec![0.0; k];
    let mut std = vec![0.0; k];
    let x_raw: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| predecessors.iter().map(|&j| table.continuous_at(j, r)).collect())
        .collect();
    for row in &x_raw {
        for d in 0..k {
            mean[d] += row[d];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in &x_raw {
        for d in 0..k {
            std[d] += (row[d] - mean[d]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt().max(1e-9));

    let mut w = vec![0.0f64; k];
    let mut b = 0.0f64;
    let lr = 0.5;
    let l2 = 1e-4;
    for _ in 0..300 {
        let mut gw = vec![0.0f64; k];
        let mut gb = 0.0f64;
        for (row, &yi) in x_raw.iter().zip(&y) {
            let mut z = b;
            for d in 0..k {
                z += w[d] * (row[d] - mean[d]) / std[d];
            }
            let g = 1.0 / (1.0 + (-z).exp()) - yi;
            for d in 0..k {
                gw[d] += g * (row[d] - mean[d]) / std[d];
            }
            gb += g;
        }
        for d in 0..k {
            w[d] -= lr * (gw[d] / n as f64 + l2 * w[d]);
        }
        b -= lr * gb / n as f64;
    }

    // fold standardization back into raw-space coefficients
    let mut intercept = b;
    let mut weights = Vec::with_capacity(k);
    for d in 0..k {
        let raw_w = w[d] / std[d];
        intercept -= raw_w * mean[d];
        weights.push((predecessors[d], raw_w));
    }
    Some(LogisticConditional { intercept, weights })
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in (row + 1)..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Draw `request.n_samples` rows from a fitted model. Group-based sampling
/// assigns a uniform quota of rows per observed group (remainder to the
/// earliest group values), then samples each row's features in schema order.
pub fn sample(model: &ReferenceModel, request: &GenerationRequest) -> Result<DataTable, GenerateError> {
    if model.strategy != request.strategy {
        return Err(GenerateError::StrategyMismatch {
            fitted: format!("{:?}", model.strategy),
            requested: format!("{:?}", request.strategy),
        });
    }
    if model.schema.as_ref() != request.schema.as_ref() {
        return Err(GenerateError::InvalidRequest(
            "model schema differs from request schema".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(request.rng_seed);
    let mut builder = TableBuilder::new(Arc::clone(&request.schema));

    match &model.per_group {
        Some((gi, slices)) => {
            let k = slices.len();
            let quota = request.n_samples / k;
            let remainder = request.n_samples % k;
            for (pos, (value_idx, slice)) in slices.iter().enumerate() {
                let n = quota + usize::from(pos < remainder);
                for _ in 0..n {
                    let row = sample_row(slice, &model.schema, Some((*gi, *value_idx)), &mut rng);
                    builder.push_values(&row).expect("sampled row is schema-valid");
                }
            }
        }
        None => {
            for _ in 0..request.n_samples {
                let row = sample_row(&model.base, &model.schema, None, &mut rng);
                builder.push_values(&row).expect("sampled row is schema-valid");
            }
        }
    }
    Ok(builder.finish())
}

fn sample_row(
    slice: &SliceModel,
    schema: &TableSchema,
    group: Option<(usize, u32)>,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<Value>> {
    let mut row: Vec<Option<Value>> = Vec::with_capacity(schema.n_features());
    for (idx, spec) in schema.features().iter().enumerate() {
        if let Some((gi, value_idx)) = group {
            if idx == gi {
                row.push(Some(Value::Categorical(value_idx)));
                continue;
            }
        }
        let fm = &slice.features[idx];
        let value = match (&fm.marginal, &fm.conditional) {
            (_, Some(Conditional::Linear(cond))) => {
                let mut mean = cond.intercept;
                for &(j, w) in &cond.weights {
                    if let Some(Value::Continuous(v)) = &row[j] {
                        mean += w * v;
                    }
                }
                let draw = if cond.residual_std > 0.0 {
                    Normal::new(mean, cond.residual_std).unwrap().sample(rng)
                } else {
                    mean
                };
                let clamped = match spec.range {
                    Some((lo, hi)) => draw.clamp(lo, hi),
                    None => draw,
                };
                Value::Continuous(clamped)
            }
            (_, Some(Conditional::Logistic(cond))) => {
                let mut logit = cond.intercept;
                for &(j, w) in &cond.weights {
                    if let Some(Value::Continuous(v)) = &row[j] {
                        logit += w * v;
                    }
                }
                let p = 1.0 / (1.0 + (-logit).exp());
                Value::Categorical(u32::from(rng.random::<f64>() < p))
            }
            (Marginal::Histogram(h), None) => {
                let draw = h.sample(rng);
                let clamped = match spec.range {
                    Some((lo, hi)) => draw.clamp(lo, hi),
                    None => draw,
                };
                Value::Continuous(clamped)
            }
            (Marginal::Frequency(f), None) => Value::Categorical(f.sample(rng)),
        };
        row.push(Some(value));
    }
    row
}

/// [`GeneratorBackend`] that fits the reference model on the request's seed
/// sample and samples from it. Retries re-seed deterministically, though the
/// first batch already contains only valid rows.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceBackend;

impl GeneratorBackend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }

    fn generate_batch(
        &self,
        request: &GenerationRequest,
        n_rows: usize,
        attempt: u32,
    ) -> Result<BackendBatch, GenerateError> {
        let model = fit_reference(&request.seed_sample, &request.strategy)?;
        let mut batch_request = request.clone();
        batch_request.n_samples = n_rows;
        batch_request.rng_seed = request
            .rng_seed
            .wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let table = sample(&model, &batch_request)?;
        let rows = (0..table.n_rows()).map(|r| table.raw_row(r)).collect();
        Ok(BackendBatch {
            rows,
            transcript: None,
            pre_rejected: Vec::new(),
        })
    }
}
