//! Membership inference attacks against models trained on synthetic data:
//! attack AUROC, membership advantage, and member/non-member empirical risk.
//!
//! The default attack thresholds the per-record logistic loss (low loss
//! suggests membership); a logistic attack model over all derived features is
//! available as an alternative. Membership advantage is the exact maximum of
//! |TPR - FPR| over every threshold position, the CDF realization of the
//! score-distribution gap.

use serde::Serialize;
use thiserror::Error;

use crate::fidelity::{self, KlSettings};
use crate::schema::DataTable;
use crate::utility::{self, GbmConfig, GbmModel, UtilityError};

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("utility error: {0}")]
    Utility(#[from] UtilityError),
    #[error("need at least {min} members and non-members, got {members} / {nonmembers}")]
    TooFewRows {
        min: usize,
        members: usize,
        nonmembers: usize,
    },
    #[error("rows have no usable labels")]
    NoLabels,
}

/// Minimum member/non-member set size for a meaningful attack.
pub const MIN_SET: usize = 30;

/// Per-record values the attack sees, all derived from target-model outputs.
#[derive(Debug, Clone, Serialize)]
pub struct AttackFeatures {
    /// Predicted probability of the record's true class.
    pub p_true: f64,
    /// Logistic loss with the probability clamped to [1e-7, 1 - 1e-7].
    pub loss: f64,
    /// Max-class confidence, max(p, 1 - p).
    pub confidence: f64,
}

/// Which attack scores records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Threshold on the loss feature; lower loss reads as member.
    LossThreshold,
    /// Logistic model over all three derived features.
    Logistic,
}

/// Everything the attack needs: the target model plus disjoint member and
/// non-member row sets drawn from the same distribution.
#[derive(Debug)]
pub struct MiaSetup<'a> {
    pub target_model: &'a GbmModel,
    pub member_rows: &'a DataTable,
    pub nonmember_rows: &'a DataTable,
    pub attack: AttackKind,
}

/// Attack outcome.
#[derive(Debug, Clone, Serialize)]
pub struct MiaReport {
    pub attack: AttackKind,
    pub attack_auroc: f64,
    /// max over thresholds of |TPR - FPR|, in [0, 1].
    pub membership_advantage: f64,
    pub empirical_risk_member: f64,
    pub empirical_risk_nonmember: f64,
    /// member risk minus non-member risk (may be negative).
    pub risk_gap: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    /// Set when all attack scores are identical; metrics then default to
    /// auroc 0.5 and advantage 0.
    pub degenerate: bool,
    /// Set when a protocol precondition looks violated, e.g. member and
    /// non-member rows do not appear to share a distribution.
    pub protocol_warning: Option<String>,
}

/// Compute per-record attack features from target-model outputs. Rows with a
/// missing label are skipped.
pub fn derive_attack_features(
    model: &GbmModel,
    rows: &DataTable,
) -> Result<Vec<AttackFeatures>, PrivacyError> {
    let probs = utility::predict_proba(model, rows)?;
    let labels = rows.labels01();
    let mut features = Vec::new();
    for (p, label) in probs.into_iter().zip(labels) {
        let Some(y) = label else { continue };
        let y = y as f64;
        let p_true = if y == 1.0 { p } else { 1.0 - p };
        let clamped = p.clamp(1e-7, 1.0 - 1e-7);
        let loss = -(y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln());
        features.push(AttackFeatures {
            p_true,
            loss,
            confidence: p.max(1.0 - p),
        });
    }
    if features.is_empty() {
        return Err(PrivacyError::NoLabels);
    }
    Ok(features)
}

/// Exact maximum of |TPR(t) - FPR(t)| over all member/non-member score
/// threshold positions, with "member" predicted for scores above t.
pub fn membership_advantage(member_scores: &[f64], nonmember_scores: &[f64]) -> f64 {
    // Sweep thresholds downward through every distinct score; TPR/FPR move in
    // steps of 1/n at each boundary, so checking after each group of equal
    // scores covers all n_m + n_n + 1 threshold positions.
    let mut all: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (s, true))
        .chain(nonmember_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_m = member_scores.len() as f64;
    let n_n = nonmember_scores.len() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut best = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let gap = (tp / n_m - fp / n_n).abs();
        if gap > best {
            best = gap;
        }
        i = j;
    }
    best
}

/// Run a membership inference attack over a prepared setup.
pub fn run_attack(setup: &MiaSetup<'_>, rng_seed: u64) -> Result<MiaReport, PrivacyError> {
    let members = derive_attack_features(setup.target_model, setup.member_rows)?;
    let nonmembers = derive_attack_features(setup.target_model, setup.nonmember_rows)?;
    if members.len() < MIN_SET || nonmembers.len() < MIN_SET {
        return Err(PrivacyError::TooFewRows {
            min: MIN_SET,
            members: members.len(),
            nonmembers: nonmembers.len(),
        });
    }
    let report = score_and_report(&members, &nonmembers, setup.attack, rng_seed, None)?;
    Ok(report)
}

fn score_and_report(
    members: &[AttackFeatures],
    nonmembers: &[AttackFeatures],
    attack: AttackKind,
    rng_seed: u64,
    protocol_warning: Option<String>,
) -> Result<MiaReport, PrivacyError> {
    let (member_scores, nonmember_scores) = match attack {
        AttackKind::LossThreshold => {
            // higher score = more member-like
            let m: Vec<f64> = members.iter().map(|f| -f.loss).collect();
            let n: Vec<f64> = nonmembers.iter().map(|f| -f.loss).collect();
            (m, n)
        }
        AttackKind::Logistic => logistic_attack_scores(members, nonmembers, rng_seed),
    };

    let all_equal = member_scores
        .iter()
        .chain(&nonmember_scores)
        .all(|&s| s == member_scores[0]);

    let (attack_auroc, advantage) = if all_equal {
        (0.5, 0.0)
    } else {
        let scores: Vec<f64> = member_scores
            .iter()
            .chain(&nonmember_scores)
            .copied()
            .collect();
        let labels: Vec<u8> = std::iter::repeat_n(1u8, member_scores.len())
            .chain(std::iter::repeat_n(0u8, nonmember_scores.len()))
            .collect();
        (
            utility::auroc(&scores, &labels)?,
            membership_advantage(&member_scores, &nonmember_scores),
        )
    };

    let risk_member = members.iter().map(|f| f.loss).sum::<f64>() / members.len() as f64;
    let risk_nonmember = nonmembers.iter().map(|f| f.loss).sum::<f64>() / nonmembers.len() as f64;

    Ok(MiaReport {
        attack,
        attack_auroc,
        membership_advantage: advantage,
        empirical_risk_member: risk_member,
        empirical_risk_nonmember: risk_nonmember,
        risk_gap: risk_member - risk_nonmember,
        n_members: members.len(),
        n_nonmembers: nonmembers.len(),
        degenerate: all_equal,
        protocol_warning,
    })
}

/// Plain batch-gradient logistic regression over standardized attack
/// features. The attack model is fit and scored in-sample, mirroring the
/// threshold attack's use of the same records it evaluates.
fn logistic_attack_scores(
    members: &[AttackFeatures],
    nonmembers: &[AttackFeatures],
    _rng_seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<[f64; 3]> = members
        .iter()
        .chain(nonmembers)
        .map(|f| [f.p_true, f.loss, f.confidence])
        .collect();
    let n = rows.len();
    let n_m = members.len();

    // standardize
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for row in &rows {
        for d in 0..3 {
            mean[d] += row[d];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in &rows {
        for d in 0..3 {
            std[d] += (row[d] - mean[d]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt().max(1e-12));
    let x: Vec<[f64; 3]> = rows
        .iter()
        .map(|r| [0, 1, 2].map(|d| (r[d] - mean[d]) / std[d]))
        .collect();

    let mut w = [0.0f64; 3];
    let mut b = 0.0f64;
    let lr = 0.5;
    for _ in 0..200 {
        let mut gw = [0.0f64; 3];
        let mut gb = 0.0f64;
        for (i, xi) in x.iter().enumerate() {
            let y = if i < n_m { 1.0 } else { 0.0 };
            let z = w[0] * xi[0] + w[1] * xi[1] + w[2] * xi[2] + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let g = p - y;
            for d in 0..3 {
                gw[d] += g * xi[d];
            }
            gb += g;
        }
        for d in 0..3 {
            w[d] -= lr * gw[d] / n as f64;
        }
        b -= lr * gb / n as f64;
    }

    let score = |xi: &[f64; 3]| w[0] * xi[0] + w[1] * xi[1] + w[2] * xi[2] + b;
    let m: Vec<f64> = x[..n_m].iter().map(score).collect();
    let nm: Vec<f64> = x[n_m..].iter().map(score).collect();
    (m, nm)
}

/// Full experiment protocol: train the target model on synthetic rows, then
/// attack with the generator's real seed rows as members and held-out real
/// rows (never shown to the generator) as non-members.
///
/// A large distributional gap between member and non-member rows confounds
/// membership with distribution shift, so it is flagged in the report.
pub fn mia_experiment(
    member_rows: &DataTable,
    nonmember_rows: &DataTable,
    synthetic: &DataTable,
    config: &GbmConfig,
    rng_seed: u64,
) -> Result<MiaReport, PrivacyError> {
    if member_rows.n_rows() < MIN_SET || nonmember_rows.n_rows() < MIN_SET {
        return Err(PrivacyError::TooFewRows {
            min: MIN_SET,
            members: member_rows.n_rows(),
            nonmembers: nonmember_rows.n_rows(),
        });
    }
    let target = utility::train(synthetic, config)?;
    mia_experiment_with_model(&target, member_rows, nonmember_rows, rng_seed)
}

/// Same protocol with an already-trained target model.
pub fn mia_experiment_with_model(
    target: &GbmModel,
    member_rows: &DataTable,
    nonmember_rows: &DataTable,
    rng_seed: u64,
) -> Result<MiaReport, PrivacyError> {
    let warning = distribution_mismatch_warning(member_rows, nonmember_rows);
    let members = derive_attack_features(target, member_rows)?;
    let nonmembers = derive_attack_features(target, nonmember_rows)?;
    if members.len() < MIN_SET || nonmembers.len() < MIN_SET {
        return Err(PrivacyError::TooFewRows {
            min: MIN_SET,
            members: members.len(),
            nonmembers: nonmembers.len(),
        });
    }
    score_and_report(&members, &nonmembers, AttackKind::LossThreshold, rng_seed, warning)
}

/// Member and non-member sets must come from one distribution; a big average
/// KL between them means any attack signal may just be distribution shift.
fn distribution_mismatch_warning(members: &DataTable, nonmembers: &DataTable) -> Option<String> {
    let settings = KlSettings {
        n_bins: 16,
        ..KlSettings::default()
    };
    match fidelity::kl_table(members, nonmembers, None, settings) {
        Ok(report) if report.average > 0.25 => Some(format!(
            "member vs non-member average KL {:.3} suggests the sets are not \
             drawn from the same distribution; attack results are confounded",
            report.average
        )),
        _ => None,
    }
}

/// Write per-record attack features as CSV for auditing.
pub fn write_attack_features_csv<W: std::io::Write>(
    members: &[AttackFeatures],
    nonmembers: &[AttackFeatures],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "set,p_true,loss,confidence")?;
    for f in members {
        writeln!(w, "member,{},{},{}", f.p_true, f.loss, f.confidence)?;
    }
    for f in nonmembers {
        writeln!(w, "nonmember,{},{},{}", f.p_true, f.loss, f.confidence)?;
    }
    Ok(())
}
