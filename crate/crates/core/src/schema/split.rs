//! Deterministic label-stratified row splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::table::{DataTable, TableError};

/// Outcome of [`split`]. `stratified` is false when a label class was too
/// small to appear on both sides and the split fell back to a plain shuffle.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub first: DataTable,
    pub second: DataTable,
    pub stratified: bool,
}

/// Partition rows into disjoint parts of approximately `fraction` and
/// `1 - fraction` of the table, stratified by label so both sides keep the
/// label rate. Same seed means the identical partition.
pub fn split(table: &DataTable, fraction: f64, seed: u64) -> Result<SplitResult, TableError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TableError::InvalidFraction(fraction));
    }
    let labels = table.labels01();

    // Strata: label 0, label 1, missing label.
    let mut strata: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (row, label) in labels.iter().enumerate() {
        match label {
            Some(0) => strata[0].push(row),
            Some(_) => strata[1].push(row),
            None => strata[2].push(row),
        }
    }

    // Feasible only when each observed label class can land at least one row
    // on each side.
    let stratified = strata[..2].iter().all(|s| {
        if s.is_empty() {
            return true;
        }
        let k = take_count(s.len(), fraction);
        k >= 1 && s.len() - k >= 1
    }) && strata[..2].iter().any(|s| !s.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first_rows = Vec::new();
    let mut second_rows = Vec::new();

    if stratified {
        for stratum in &strata {
            if stratum.is_empty() {
                continue;
            }
            let mut rows = stratum.clone();
            rows.shuffle(&mut rng);
            let k = take_count(rows.len(), fraction);
            first_rows.extend_from_slice(&rows[..k]);
            second_rows.extend_from_slice(&rows[k..]);
        }
    } else {
        let mut rows: Vec<usize> = (0..table.n_rows()).collect();
        rows.shuffle(&mut rng);
        let k = take_count(rows.len(), fraction);
        first_rows.extend_from_slice(&rows[..k]);
        second_rows.extend_from_slice(&rows[k..]);
    }

    // Keep original row order within each side.
    first_rows.sort_unstable();
    second_rows.sort_unstable();

    Ok(SplitResult {
        first: table.take_rows(&first_rows),
        second: table.take_rows(&second_rows),
        stratified,
    })
}

fn take_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}
