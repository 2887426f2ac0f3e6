//! Result reporting: markdown tables shaped like the benchmark's result
//! layout, histogram overlay data for distribution plots, attack-metric
//! bar-chart data, and a provenance cross-check that every master CSV number
//! matches its persisted per-cell report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::fidelity::GroupKlReport;
use crate::schema::{ColumnData, DataTable, FeatureKind, TableSchema};

use super::{
    cells_of, master_rows, CellResult, CellStatus, ExperimentConfig, HarnessError, MASTER_HEADER,
};

/// Artifacts produced by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub report_md: PathBuf,
    pub mia_chart_csv: PathBuf,
    pub histogram_files: Vec<PathBuf>,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Build the markdown report and plot-data files for a finished run.
/// Fails when no cell succeeded or when a master CSV value disagrees with
/// the persisted per-cell report it came from.
pub fn emit_report(config: &ExperimentConfig) -> Result<ReportOutput, HarnessError> {
    let output_dir = &config.output_dir;
    let results = load_results(config)?;
    let n_ok = results.iter().filter(|r| r.status == CellStatus::Ok).count();
    let n_failed = results.len() - n_ok;

    verify_provenance(output_dir, &results)?;

    if n_ok == 0 {
        // still describe the failures before erroring out
        let mut md = String::from("# Experiment report\n\nAll cells failed.\n\n");
        for r in &results {
            let _ = writeln!(
                md,
                "- `{}` {} / {} features / {} samples: {}",
                r.cell_id,
                r.spec.strategy,
                r.spec.n_features,
                r.spec.n_samples,
                r.error.as_deref().unwrap_or("unknown error")
            );
        }
        std::fs::write(output_dir.join("report.md"), md)?;
        return Err(HarnessError::NoSuccessfulCells);
    }

    let mut md = String::from("# Experiment report\n");

    let _ = writeln!(
        md,
        "\n{} of {} cells succeeded. Metrics: average KL divergence (real vs synthetic, \
         nats, continuous features), AUROC/AUPRC with bootstrap 95% intervals, \
         membership-inference attack AUROC and advantage.\n",
        n_ok,
        results.len()
    );

    strategy_table(&mut md, &results);
    feature_count_table(&mut md, &results);
    sample_size_table(&mut md, &results);
    fairness_table(&mut md, output_dir, &results)?;
    mia_table(&mut md, &results);

    if n_failed > 0 {
        let _ = writeln!(md, "\n## Failed cells\n");
        for r in results.iter().filter(|r| r.status == CellStatus::Failed) {
            let _ = writeln!(
                md,
                "- `{}` {} / {} features / {} samples: {}",
                r.cell_id,
                r.spec.strategy,
                r.spec.n_features,
                r.spec.n_samples,
                r.error.as_deref().unwrap_or("unknown error")
            );
        }
    }

    let report_md = output_dir.join("report.md");
    std::fs::write(&report_md, md)?;

    let mia_chart_csv = write_mia_chart(output_dir, &results)?;
    let histogram_files = write_histograms(config, &results)?;

    Ok(ReportOutput {
        report_md,
        mia_chart_csv,
        histogram_files,
        n_ok,
        n_failed,
    })
}

fn load_results(config: &ExperimentConfig) -> Result<Vec<CellResult>, HarnessError> {
    let mut results = Vec::new();
    for cell in cells_of(config) {
        let path = config.output_dir.join("cells").join(cell.id()).join("result.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            HarnessError::Report(format!("missing cell result {path:?}: {e}; run first"))
        })?;
        let result: CellResult = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Report(format!("corrupt {path:?}: {e}")))?;
        results.push(result);
    }
    Ok(results)
}

/// Every number in the master CSV must equal the value in the per-cell
/// report it came from.
fn verify_provenance(output_dir: &Path, results: &[CellResult]) -> Result<(), HarnessError> {
    let path = output_dir.join("master.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| HarnessError::Report(format!("missing master CSV {path:?}: {e}")))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(crate::schema::TableError::from)?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if header != MASTER_HEADER {
        return Err(HarnessError::Provenance("master CSV header drifted".into()));
    }
    let mut actual: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(crate::schema::TableError::from)?;
        actual.push(record.iter().map(|c| c.to_string()).collect());
    }
    let expected: Vec<Vec<String>> = results.iter().flat_map(master_rows).collect();
    if actual != expected {
        return Err(HarnessError::Provenance(
            "master CSV rows do not match persisted cell reports".into(),
        ));
    }
    Ok(())
}

fn fmt3(v: f64) -> String {
    format!("{v:.4}")
}

fn metric_cell(auroc: f64, lo: f64, hi: f64) -> String {
    format!("{} [{}, {}]", fmt3(auroc), fmt3(lo), fmt3(hi))
}

fn ok_results(results: &[CellResult]) -> impl Iterator<Item = &CellResult> {
    results.iter().filter(|r| r.status == CellStatus::Ok)
}

/// Strategy comparison at fixed dimensions, the headline layout.
fn strategy_table(md: &mut String, results: &[CellResult]) {
    let _ = writeln!(md, "\n## Performance by generation strategy\n");
    let _ = writeln!(
        md,
        "| Strategy/Features/Samples | Scenario | Avg. KL | AUROC [95% CI] | AUPRC [95% CI] |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|");
    for r in ok_results(results) {
        let label = format!("{}/{}/{}", r.spec.strategy, r.spec.n_features, r.spec.n_samples);
        if let Some(w) = &r.within {
            let _ = writeln!(
                md,
                "| {label} | within | --- | {} | {} |",
                metric_cell(w.auroc, w.auroc_lo, w.auroc_hi),
                metric_cell(w.auprc, w.auprc_lo, w.auprc_hi),
            );
        }
        if let Some(a) = &r.across {
            let _ = writeln!(
                md,
                "| {label} | across | {} | {} | {} |",
                r.avg_kl.map(fmt3).unwrap_or_else(|| "---".into()),
                metric_cell(a.auroc, a.auroc_lo, a.auroc_hi),
                metric_cell(a.auprc, a.auprc_lo, a.auprc_hi),
            );
        }
    }
}

fn feature_count_table(md: &mut String, results: &[CellResult]) {
    let counts: std::collections::BTreeSet<usize> =
        ok_results(results).map(|r| r.spec.n_features).collect();
    if counts.len() < 2 {
        return;
    }
    let _ = writeln!(md, "\n## Performance by number of features\n");
    let _ = writeln!(md, "| Features | Strategy/Samples | Avg. KL (across) | Across AUROC [95% CI] |");
    let _ = writeln!(md, "|---|---|---|---|");
    for r in ok_results(results) {
        if let Some(a) = &r.across {
            let _ = writeln!(
                md,
                "| {} | {}/{} | {} | {} |",
                r.spec.n_features,
                r.spec.strategy,
                r.spec.n_samples,
                r.avg_kl.map(fmt3).unwrap_or_else(|| "---".into()),
                metric_cell(a.auroc, a.auroc_lo, a.auroc_hi),
            );
        }
    }
}

fn sample_size_table(md: &mut String, results: &[CellResult]) {
    let sizes: std::collections::BTreeSet<usize> =
        ok_results(results).map(|r| r.spec.n_samples).collect();
    if sizes.len() < 2 {
        return;
    }
    let _ = writeln!(md, "\n## Performance by sample size\n");
    let _ = writeln!(md, "| Samples | Strategy/Features | Avg. KL (across) | Across AUROC [95% CI] |");
    let _ = writeln!(md, "|---|---|---|---|");
    for r in ok_results(results) {
        if let Some(a) = &r.across {
            let _ = writeln!(
                md,
                "| {} | {}/{} | {} | {} |",
                r.spec.n_samples,
                r.spec.strategy,
                r.spec.n_features,
                r.avg_kl.map(fmt3).unwrap_or_else(|| "---".into()),
                metric_cell(a.auroc, a.auroc_lo, a.auroc_hi),
            );
        }
    }
}

/// Per-group average KL with one column per strategy, comparable across
/// strategies at the same dimensions.
fn fairness_table(
    md: &mut String,
    output_dir: &Path,
    results: &[CellResult],
) -> Result<(), HarnessError> {
    // (group value -> (strategy label -> avg KL)) per (features, samples)
    let mut tables: BTreeMap<(usize, usize), BTreeMap<String, BTreeMap<String, f64>>> =
        BTreeMap::new();
    for r in ok_results(results) {
        let path = output_dir.join("cells").join(&r.cell_id).join("group_kl.json");
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let report: GroupKlReport = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Report(format!("corrupt {path:?}: {e}")))?;
        let slot = tables.entry((r.spec.n_features, r.spec.n_samples)).or_default();
        for (value, kl) in &report.per_group {
            if !kl.evaluated_features.is_empty() {
                slot.entry(value.clone())
                    .or_default()
                    .insert(r.spec.strategy.to_string(), kl.average);
            }
        }
    }
    if tables.is_empty() {
        return Ok(());
    }
    for ((n_features, n_samples), by_group) in tables {
        let strategies: std::collections::BTreeSet<String> = by_group
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect();
        let _ = writeln!(
            md,
            "\n## Average KL divergence per demographic group ({n_features} features, {n_samples} samples)\n"
        );
        let header: Vec<String> = strategies.iter().map(|s| format!("Avg. KL ({s})")).collect();
        let _ = writeln!(md, "| Group | {} |", header.join(" | "));
        let _ = writeln!(md, "|---|{}|", "---|".repeat(strategies.len()));
        for (value, by_strategy) in by_group {
            let cells: Vec<String> = strategies
                .iter()
                .map(|s| by_strategy.get(s).map(|&v| fmt3(v)).unwrap_or_else(|| "---".into()))
                .collect();
            let _ = writeln!(md, "| {value} | {} |", cells.join(" | "));
        }
    }
    Ok(())
}

fn mia_table(md: &mut String, results: &[CellResult]) {
    let _ = writeln!(md, "\n## Membership inference attack results\n");
    let _ = writeln!(
        md,
        "| Strategy/Features/Samples | Attack AUROC | Advantage | Risk gap (member - non-member) |"
    );
    let _ = writeln!(md, "|---|---|---|---|");
    for r in ok_results(results) {
        if let Some(mia) = &r.mia {
            let _ = writeln!(
                md,
                "| {}/{}/{} | {} | {} | {} |",
                r.spec.strategy,
                r.spec.n_features,
                r.spec.n_samples,
                fmt3(mia.attack_auroc),
                fmt3(mia.membership_advantage),
                fmt3(mia.risk_gap),
            );
        }
    }
}

/// Bar-chart data: attack metrics by feature count.
fn write_mia_chart(output_dir: &Path, results: &[CellResult]) -> Result<PathBuf, HarnessError> {
    let path = output_dir.join("mia_by_features.csv");
    let mut out = String::from(
        "strategy,n_features,n_samples,attack_auroc,membership_advantage,risk_member,risk_nonmember,risk_gap\n",
    );
    for r in ok_results(results) {
        if let Some(mia) = &r.mia {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.spec.strategy,
                r.spec.n_features,
                r.spec.n_samples,
                mia.attack_auroc,
                mia.membership_advantage,
                mia.risk_member,
                mia.risk_nonmember,
                mia.risk_gap
            );
        }
    }
    std::fs::write(&path, out)?;
    Ok(path)
}

/// Real-vs-synthetic histogram overlay data per continuous feature, one CSV
/// per feature under each cell's `plots/` directory.
fn write_histograms(
    config: &ExperimentConfig,
    results: &[CellResult],
) -> Result<Vec<PathBuf>, HarnessError> {
    let schema = TableSchema::from_path(&config.schema)?.into_arc();
    let real = DataTable::from_csv_path(&config.real_data, Arc::clone(&schema))?;
    let mut written = Vec::new();

    for r in ok_results(results) {
        let cell_dir = config.output_dir.join("cells").join(&r.cell_id);
        let names: Vec<&str> = r.selected_features.iter().map(|s| s.as_str()).collect();
        let real_sel = real.select_features(&names)?;
        let synthetic =
            DataTable::from_csv_path(cell_dir.join("synthetic.csv"), real_sel.schema_arc())?;
        let plots = cell_dir.join("plots");
        std::fs::create_dir_all(&plots)?;

        for (idx, spec) in real_sel.schema().features().iter().enumerate() {
            if spec.kind != FeatureKind::Continuous {
                continue;
            }
            let ColumnData::Continuous(_) = real_sel.column(idx) else {
                continue;
            };
            let p = real_sel.non_missing_continuous(idx);
            let q = synthetic.non_missing_continuous(real_sel.schema().index_of(&spec.name).unwrap());
            if p.is_empty() || q.is_empty() {
                continue;
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in p.iter().chain(&q) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo == hi {
                continue;
            }
            let bins = config.fidelity.bins;
            let width = (hi - lo) / bins as f64;
            let p_hist = crate::fidelity::histogram(&p, lo, hi, bins);
            let q_hist = crate::fidelity::histogram(&q, lo, hi, bins);
            let mut out = String::from("bin_lo,bin_hi,real_density,synthetic_density\n");
            for b in 0..bins {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    lo + b as f64 * width,
                    lo + (b + 1) as f64 * width,
                    p_hist[b] / (p.len() as f64 * width),
                    q_hist[b] / (q.len() as f64 * width),
                );
            }
            let path = plots.join(format!("hist_{}.csv", spec.name));
            std::fs::write(&path, out)?;
            written.push(path);
        }
    }
    Ok(written)
}
