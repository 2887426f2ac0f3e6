//! Ranking metrics for binary classifiers: AUROC (pairwise form with ties
//! counted half), AUPRC (average precision), and percentile bootstrap
//! confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::UtilityError;

/// AUROC in the pairwise form: the probability that a random positive scores
/// above a random negative, with ties counted 0.5. Computed via average
/// ranks, which is algebraically identical.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, UtilityError> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(UtilityError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    // Sum of average ranks (1-based) over positives.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1) + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let n1 = n_pos as f64;
    let u = rank_sum_pos - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n_neg as f64))
}

/// AUPRC as average precision: step-wise integration of precision over
/// recall at every distinct score threshold, descending.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, UtilityError> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(UtilityError::NoPositives);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut ap = 0.0;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let precision = tp / (tp + fp);
        let recall = tp / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Metric selector for [`bootstrap_ci`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Auroc,
    Auprc,
}

impl Metric {
    fn compute(self, scores: &[f64], labels: &[u8]) -> Result<f64, UtilityError> {
        match self {
            Metric::Auroc => auroc(scores, labels),
            Metric::Auprc => auprc(scores, labels),
        }
    }
}

/// Percentile (2.5%, 97.5%) interval over `n_boot` resamples of
/// (score, label) pairs. Resamples that collapse to a single class are
/// redrawn. Deterministic given the seed.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[u8],
    metric: Metric,
    n_boot: usize,
    rng_seed: u64,
) -> Result<(f64, f64), UtilityError> {
    metric.compute(scores, labels)?; // fail fast if infeasible on the full sample
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut stats = Vec::with_capacity(n_boot);
    let mut s = vec![0.0; n];
    let mut y = vec![0u8; n];
    let max_attempts = n_boot.saturating_mul(20).max(1000);
    let mut attempts = 0;
    while stats.len() < n_boot {
        attempts += 1;
        if attempts > max_attempts {
            return Err(UtilityError::BootstrapDegenerate);
        }
        for k in 0..n {
            let pick = rng.random_range(0..n);
            s[k] = scores[pick];
            y[k] = labels[pick];
        }
        match metric.compute(&s, &y) {
            Ok(v) => stats.push(v),
            Err(_) => continue, // single-class resample, redraw
        }
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    Ok((percentile(&stats, 0.025), percentile(&stats, 0.975)))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_perfect_ranking() {
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1, 1, 0, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auroc_three_of_four_pairs() {
        // positives {0.9, 0.4}, negatives {0.7, 0.1}: 3 of 4 pairs correct
        let scores = [0.9, 0.4, 0.7, 0.1];
        let labels = [1, 1, 0, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn auroc_tie_counts_half() {
        let scores = [0.5, 0.5];
        let labels = [1, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auroc_single_class_errors() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[1, 1]),
            Err(UtilityError::SingleClass)
        ));
    }

    #[test]
    fn auroc_monotone_transform_invariant() {
        let scores = [0.3, 0.1, 0.9, 0.4, 0.2, 0.8];
        let labels = [0, 0, 1, 1, 0, 1];
        let base = auroc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-5.0 * s).exp())).collect();
        assert!((auroc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn auprc_perfect() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        assert_eq!(auprc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auprc_threshold_enumeration_case() {
        // thresholds at 0.9, 0.8, 0.7: AP = 0.5 * 1 + 0 + 0.5 * (2/3)
        let scores = [0.9, 0.8, 0.7];
        let labels = [1, 0, 1];
        let ap = auprc(&scores, &labels).unwrap();
        assert!((ap - 0.833333).abs() < 1e-6, "got {ap}");
    }

    #[test]
    fn auprc_baseline_is_prevalence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.10)).collect();
        let ap = auprc(&scores, &labels).unwrap();
        assert!((ap - 0.10).abs() < 0.02, "got {ap}");
    }

    #[test]
    fn auprc_no_positives_errors() {
        assert!(matches!(
            auprc(&[0.5, 0.4], &[0, 0]),
            Err(UtilityError::NoPositives)
        ));
    }

    #[test]
    fn bootstrap_perfect_separation_degenerate_interval() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let (lo, hi) = bootstrap_ci(&scores, &labels, Metric::Auroc, 200, 0).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_deterministic() {
        let scores: Vec<f64> = (0..100).map(|i| (i as f64 * 0.61) % 1.0).collect();
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 3 == 0)).collect();
        let a = bootstrap_ci(&scores, &labels, Metric::Auprc, 300, 42).unwrap();
        let b = bootstrap_ci(&scores, &labels, Metric::Auprc, 300, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_width_shrinks_with_n() {
        use rand::{Rng, SeedableRng};
        let make = |n: usize, seed: u64| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
            let scores: Vec<f64> = labels
                .iter()
                .map(|&y| rng.random::<f64>() + if y == 1 { 0.3 } else { 0.0 })
                .collect();
            (scores, labels)
        };
        let (s_small, y_small) = make(200, 1);
        let (s_big, y_big) = make(5000, 2);
        let (lo1, hi1) = bootstrap_ci(&s_small, &y_small, Metric::Auroc, 400, 3).unwrap();
        let (lo2, hi2) = bootstrap_ci(&s_big, &y_big, Metric::Auroc, 400, 3).unwrap();
        assert!(hi1 - lo1 > hi2 - lo2, "{} vs {}", hi1 - lo1, hi2 - lo2);
    }
}
