//! Per-feature KL divergence between a real table (P) and a synthetic table
//! (Q), with per-group breakdowns and best/worst feature ranking.
//!
//! Continuous features are histogrammed on shared equal-width bins computed
//! from the pooled sample; both estimators apply additive smoothing so every
//! divergence is finite. Divergences are reported in nats and always in the
//! direction D(real || synthetic).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{DataTable, FeatureKind, FeatureRole};

/// Default number of histogram bins for continuous features.
pub const DEFAULT_BINS: usize = 64;
/// Default smoothing mass added to every bin/category count.
pub const DEFAULT_EPSILON: f64 = 0.5;
/// Features with fewer non-missing values than this on either side are
/// skipped rather than estimated.
pub const MIN_SAMPLE: usize = 30;

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("both frequency tables are empty")]
    EmptyDistributions,
    #[error("smoothing epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("need at least {MIN_SAMPLE} values per side, got {p} vs {q}")]
    InsufficientSample { p: usize, q: usize },
    #[error("no evaluable features")]
    NoEvaluableFeatures,
    #[error("rank size {k} exceeds {available} evaluated features")]
    RankTooLarge { k: usize, available: usize },
    #[error("feature {0:?} does not have the group role")]
    NotAGroupFeature(String),
}

/// Per-feature divergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlReport {
    /// Divergence in nats per evaluated feature.
    pub per_feature: BTreeMap<String, f64>,
    /// Arithmetic mean over all evaluated features.
    pub average: f64,
    /// Mean over evaluated continuous features only, when any. This is the
    /// headline figure used by the experiment harness.
    pub continuous_average: Option<f64>,
    pub evaluated_features: Vec<String>,
    pub skipped_features: Vec<SkippedFeature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedFeature {
    pub name: String,
    pub reason: String,
}

/// [`KlReport`] per demographic group value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupKlReport {
    pub group_feature: String,
    pub per_group: BTreeMap<String, KlReport>,
}

/// KL divergence between two frequency tables over the union of their
/// categories. Counts get `epsilon` added and are renormalized, so the result
/// is finite even when Q misses categories present in P.
pub fn kl_categorical(
    p_counts: &BTreeMap<String, f64>,
    q_counts: &BTreeMap<String, f64>,
    epsilon: f64,
) -> Result<f64, FidelityError> {
    if epsilon <= 0.0 {
        return Err(FidelityError::BadEpsilon(epsilon));
    }
    let mut categories: Vec<&str> = p_counts.keys().map(|s| s.as_str()).collect();
    for k in q_counts.keys() {
        if !p_counts.contains_key(k) {
            categories.push(k);
        }
    }
    if categories.is_empty() {
        return Err(FidelityError::EmptyDistributions);
    }
    let p_total: f64 = p_counts.values().sum();
    let q_total: f64 = q_counts.values().sum();
    if p_total <= 0.0 && q_total <= 0.0 {
        return Err(FidelityError::EmptyDistributions);
    }
    let k = categories.len() as f64;
    let p_norm = p_total + epsilon * k;
    let q_norm = q_total + epsilon * k;
    let mut divergence = 0.0;
    for cat in categories {
        let p = (p_counts.get(cat).copied().unwrap_or(0.0) + epsilon) / p_norm;
        let q = (q_counts.get(cat).copied().unwrap_or(0.0) + epsilon) / q_norm;
        divergence += p * (p / q).ln();
    }
    // Smoothed distributions can make tiny negative rounding noise.
    Ok(divergence.max(0.0))
}

/// Binned KL divergence between two continuous samples. Shared equal-width
/// bin edges span the pooled min/max; the estimate then reduces to
/// [`kl_categorical`] over bin counts.
pub fn kl_continuous(
    p_sample: &[f64],
    q_sample: &[f64],
    n_bins: usize,
    epsilon: f64,
) -> Result<f64, FidelityError> {
    if n_bins < 2 {
        return Err(FidelityError::TooFewBins(n_bins));
    }
    if p_sample.len() < MIN_SAMPLE || q_sample.len() < MIN_SAMPLE {
        return Err(FidelityError::InsufficientSample {
            p: p_sample.len(),
            q: q_sample.len(),
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in p_sample.iter().chain(q_sample) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        // all values identical in both samples: distributions coincide
        return Ok(0.0);
    }
    let p_hist = histogram(p_sample, lo, hi, n_bins);
    let q_hist = histogram(q_sample, lo, hi, n_bins);

    let p_counts: BTreeMap<String, f64> = p_hist
        .iter()
        .enumerate()
        .map(|(i, &c)| (format!("{i:04}"), c))
        .collect();
    let q_counts: BTreeMap<String, f64> = q_hist
        .iter()
        .enumerate()
        .map(|(i, &c)| (format!("{i:04}"), c))
        .collect();
    kl_categorical(&p_counts, &q_counts, epsilon)
}

pub(crate) fn histogram(sample: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0.0; n_bins];
    for &v in sample {
        let mut bin = ((v - lo) / width) as usize;
        if bin >= n_bins {
            bin = n_bins - 1;
        }
        counts[bin] += 1.0;
    }
    counts
}

/// Settings for table-level divergence estimation.
#[derive(Debug, Clone, Copy)]
pub struct KlSettings {
    pub n_bins: usize,
    pub epsilon: f64,
}

impl Default for KlSettings {
    fn default() -> Self {
        KlSettings {
            n_bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Per-feature divergence between two tables. `features` limits evaluation to
/// the named features; by default every real-schema feature also present in
/// the synthetic schema is evaluated. Features failing preconditions are
/// reported as skipped, and the average covers evaluated features only.
pub fn kl_table(
    real: &DataTable,
    synthetic: &DataTable,
    features: Option<&[&str]>,
    settings: KlSettings,
) -> Result<KlReport, FidelityError> {
    let names: Vec<String> = match features {
        Some(list) => list.iter().map(|s| s.to_string()).collect(),
        None => real
            .schema()
            .features()
            .iter()
            .map(|f| f.name.clone())
            .collect(),
    };

    let mut per_feature = BTreeMap::new();
    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();
    let mut continuous_sum = 0.0;
    let mut continuous_n = 0usize;

    for name in names {
        let (ri, si) = match (real.schema().index_of(&name), synthetic.schema().index_of(&name)) {
            (Some(r), Some(s)) => (r, s),
            _ => {
                skipped.push(SkippedFeature {
                    name,
                    reason: "feature absent from one schema".into(),
                });
                continue;
            }
        };
        let spec = real.schema().feature(ri);
        if spec.kind != synthetic.schema().feature(si).kind {
            skipped.push(SkippedFeature {
                name,
                reason: "feature kind differs between schemas".into(),
            });
            continue;
        }
        let outcome = match spec.kind {
            FeatureKind::Continuous => {
                let p = real.non_missing_continuous(ri);
                let q = synthetic.non_missing_continuous(si);
                kl_continuous(&p, &q, settings.n_bins, settings.epsilon)
            }
            FeatureKind::Categorical | FeatureKind::Binary => {
                let p = real.category_counts(ri);
                let q = synthetic.category_counts(si);
                if count_total(&p) < MIN_SAMPLE as f64 || count_total(&q) < MIN_SAMPLE as f64 {
                    Err(FidelityError::InsufficientSample {
                        p: count_total(&p) as usize,
                        q: count_total(&q) as usize,
                    })
                } else {
                    kl_categorical(&p, &q, settings.epsilon)
                }
            }
        };
        match outcome {
            Ok(div) => {
                if spec.kind == FeatureKind::Continuous {
                    continuous_sum += div;
                    continuous_n += 1;
                }
                per_feature.insert(name.clone(), div);
                evaluated.push(name);
            }
            Err(e) => skipped.push(SkippedFeature {
                name,
                reason: e.to_string(),
            }),
        }
    }

    if evaluated.is_empty() {
        return Err(FidelityError::NoEvaluableFeatures);
    }
    let average = per_feature.values().sum::<f64>() / per_feature.len() as f64;
    let continuous_average = (continuous_n > 0).then(|| continuous_sum / continuous_n as f64);
    Ok(KlReport {
        per_feature,
        average,
        continuous_average,
        evaluated_features: evaluated,
        skipped_features: skipped,
    })
}

fn count_total(counts: &BTreeMap<String, f64>) -> f64 {
    counts.values().sum()
}

/// Best (lowest divergence) and worst (highest divergence) `k` features.
/// Best is ascending, worst descending; ties break by name.
pub fn rank_features(report: &KlReport, k: usize) -> Result<(Vec<String>, Vec<String>), FidelityError> {
    let available = report.per_feature.len();
    if k > available {
        return Err(FidelityError::RankTooLarge { k, available });
    }
    let mut ranked: Vec<(&String, f64)> = report.per_feature.iter().map(|(n, &d)| (n, d)).collect();
    // BTreeMap iteration is already name-ordered, so a stable sort on the
    // divergence gives the lexicographic tie rule.
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let best = ranked.iter().take(k).map(|(n, _)| (*n).clone()).collect();
    let worst = ranked.iter().rev().take(k).map(|(n, _)| (*n).clone()).collect();
    Ok((best, worst))
}

/// Divergence per demographic group: rows of each table are partitioned by
/// the group feature's value and compared pairwise. Group values observed in
/// the real table but absent from the synthetic table produce a report whose
/// features are all skipped.
pub fn kl_by_group(
    real: &DataTable,
    synthetic: &DataTable,
    group_feature: &str,
    settings: KlSettings,
) -> Result<GroupKlReport, FidelityError> {
    let gi_real = real
        .schema()
        .index_of(group_feature)
        .filter(|&i| real.schema().feature(i).role == FeatureRole::Group)
        .ok_or_else(|| FidelityError::NotAGroupFeature(group_feature.to_string()))?;
    let gi_syn = synthetic
        .schema()
        .index_of(group_feature)
        .filter(|&i| synthetic.schema().feature(i).role == FeatureRole::Group)
        .ok_or_else(|| FidelityError::NotAGroupFeature(group_feature.to_string()))?;

    let spec = real.schema().feature(gi_real);
    let mut per_group = BTreeMap::new();
    for (vi, value) in spec.allowed_values.iter().enumerate() {
        let real_rows = real.rows_with_category(gi_real, vi as u32);
        if real_rows.is_empty() {
            continue; // group value not observed in real data
        }
        let syn_value = synthetic
            .schema()
            .feature(gi_syn)
            .allowed_values
            .iter()
            .position(|v| v == value);
        let syn_rows = syn_value
            .map(|svi| synthetic.rows_with_category(gi_syn, svi as u32))
            .unwrap_or_default();

        let report = if syn_rows.is_empty() {
            KlReport {
                per_feature: BTreeMap::new(),
                average: 0.0,
                continuous_average: None,
                evaluated_features: Vec::new(),
                skipped_features: real
                    .schema()
                    .features()
                    .iter()
                    .map(|f| SkippedFeature {
                        name: f.name.clone(),
                        reason: "no synthetic rows".into(),
                    })
                    .collect(),
            }
        } else {
            let real_part = real.take_rows(&real_rows);
            let syn_part = synthetic.take_rows(&syn_rows);
            // The group column itself is constant within a partition.
            let names: Vec<&str> = real
                .schema()
                .features()
                .iter()
                .map(|f| f.name.as_str())
                .filter(|&n| n != group_feature)
                .collect();
            match kl_table(&real_part, &syn_part, Some(&names), settings) {
                Ok(r) => r,
                Err(FidelityError::NoEvaluableFeatures) => KlReport {
                    per_feature: BTreeMap::new(),
                    average: 0.0,
                    continuous_average: None,
                    evaluated_features: Vec::new(),
                    skipped_features: names
                        .iter()
                        .map(|&n| SkippedFeature {
                            name: n.to_string(),
                            reason: "insufficient rows in group".into(),
                        })
                        .collect(),
                },
                Err(e) => return Err(e),
            }
        };
        per_group.insert(value.clone(), report);
    }

    Ok(GroupKlReport {
        group_feature: group_feature.to_string(),
        per_group,
    })
}

/// Write a report as the two-column CSV used for plots.
pub fn write_report_csv<W: std::io::Write>(report: &KlReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "feature,kl_divergence")?;
    for (name, div) in &report.per_feature {
        writeln!(w, "{name},{div}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn counts(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn gaussian(n: usize, mean: f64, std: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, std).unwrap();
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_categorical_is_zero() {
        let p = counts(&[("A", 50.0), ("B", 50.0)]);
        assert_eq!(kl_categorical(&p, &p, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn categorical_formula_value() {
        // 0.75 ln 1.5 + 0.25 ln 0.5 = 0.130812... nats in the epsilon -> 0 limit
        let p = counts(&[("A", 7500.0), ("B", 2500.0)]);
        let q = counts(&[("A", 5000.0), ("B", 5000.0)]);
        let d = kl_categorical(&p, &q, 1e-9).unwrap();
        assert!((d - 0.1308).abs() < 1e-3, "got {d}");
    }

    #[test]
    fn smoothing_is_monotone_when_q_misses_mass() {
        let p = counts(&[("A", 60.0), ("B", 40.0)]);
        let q = counts(&[("A", 100.0)]);
        let d1 = kl_categorical(&p, &q, 1e-3).unwrap();
        let d2 = kl_categorical(&p, &q, 1e-2).unwrap();
        let d3 = kl_categorical(&p, &q, 1e-1).unwrap();
        assert!(d1.is_finite() && d1 > 0.0);
        assert!(d1 > d2 && d2 > d3, "{d1} {d2} {d3}");
    }

    #[test]
    fn empty_tables_error() {
        let empty = BTreeMap::new();
        assert!(matches!(
            kl_categorical(&empty, &empty, 0.5),
            Err(FidelityError::EmptyDistributions)
        ));
    }

    #[test]
    fn continuous_identity_is_tiny() {
        let p = gaussian(10_000, 0.0, 1.0, 11);
        let d = kl_continuous(&p, &p, 64, 0.5).unwrap();
        assert!(d <= 1e-12, "got {d}");
    }

    #[test]
    fn continuous_gaussian_shift_estimate() {
        // analytic KL(N(0,1) || N(0.5,1)) = 0.5^2 / 2 = 0.125
        let p = gaussian(50_000, 0.0, 1.0, 1);
        let q = gaussian(50_000, 0.5, 1.0, 2);
        let d = kl_continuous(&p, &q, 64, 0.5).unwrap();
        assert!((d - 0.125).abs() < 0.02, "got {d}");
    }

    #[test]
    fn continuous_monotone_in_shift() {
        let p = gaussian(20_000, 0.0, 1.0, 3);
        let q_near = gaussian(20_000, 0.5, 1.0, 4);
        let q_far = gaussian(20_000, 3.0, 1.0, 5);
        let d_near = kl_continuous(&p, &q_near, 64, 0.5).unwrap();
        let d_far = kl_continuous(&p, &q_far, 64, 0.5).unwrap();
        assert!(d_far > d_near, "{d_far} vs {d_near}");
    }

    #[test]
    fn continuous_insufficient_sample() {
        let p = vec![0.0; 10];
        let q = vec![0.0; 100];
        assert!(matches!(
            kl_continuous(&p, &q, 64, 0.5),
            Err(FidelityError::InsufficientSample { .. })
        ));
    }

    #[test]
    fn continuous_zero_range_is_zero() {
        let p = vec![2.5; 100];
        let q = vec![2.5; 100];
        assert_eq!(kl_continuous(&p, &q, 64, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn estimator_consistency_in_sample_size() {
        // mean |estimate - analytic| over replicates shrinks as n grows at fixed bins
        let analytic = 0.125;
        let mut errs = Vec::new();
        for (i, n) in [1_000usize, 5_000, 50_000].into_iter().enumerate() {
            let mut total = 0.0;
            for rep in 0..5u64 {
                let p = gaussian(n, 0.0, 1.0, 100 + 10 * i as u64 + rep);
                let q = gaussian(n, 0.5, 1.0, 200 + 10 * i as u64 + rep);
                let d = kl_continuous(&p, &q, 64, 0.5).unwrap();
                total += (d - analytic).abs();
            }
            errs.push(total / 5.0);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
    }

    #[test]
    fn rank_features_orders_and_breaks_ties() {
        let mk = |pairs: &[(&str, f64)]| KlReport {
            per_feature: pairs.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
            average: 0.0,
            continuous_average: None,
            evaluated_features: pairs.iter().map(|(n, _)| n.to_string()).collect(),
            skipped_features: Vec::new(),
        };
        let report = mk(&[("a", 0.1), ("b", 0.5), ("c", 0.3)]);
        let (best, worst) = rank_features(&report, 1).unwrap();
        assert_eq!(best, ["a"]);
        assert_eq!(worst, ["b"]);

        let (best, _) = rank_features(&report, 3).unwrap();
        assert_eq!(best, ["a", "c", "b"]);

        let tied = mk(&[("b", 0.2), ("a", 0.2)]);
        let (best, _) = rank_features(&tied, 1).unwrap();
        assert_eq!(best, ["a"]);

        assert!(matches!(
            rank_features(&report, 9),
            Err(FidelityError::RankTooLarge { .. })
        ));
    }

    #[test]
    fn non_negativity_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let p = gaussian(100, rng.random_range(-2.0..2.0), 1.0, rng.random());
            let q = gaussian(100, rng.random_range(-2.0..2.0), 1.0, rng.random());
            let d = kl_continuous(&p, &q, 16, 0.5).unwrap();
            assert!(d >= 0.0, "negative divergence {d}");
        }
    }

    #[test]
    fn direction_is_not_symmetrized() {
        // P concentrated, Q spread: D(P||Q) != D(Q||P)
        let p = gaussian(20_000, 0.0, 0.5, 7);
        let q = gaussian(20_000, 0.0, 2.0, 8);
        let d_pq = kl_continuous(&p, &q, 64, 0.5).unwrap();
        let d_qp = kl_continuous(&q, &p, 64, 0.5).unwrap();
        assert!((d_pq - d_qp).abs() > 0.1, "{d_pq} vs {d_qp}");
    }
}
