//! Declarative experiment orchestration: strategy x feature-count x
//! sample-size sweeps over a shared real dataset, with per-cell artifact
//! directories, a deterministic master CSV, and resumable execution
//! (completed cells are skipped on re-run).

mod config;
mod report;

pub use config::{BackendConfig, DegradeConfig, ExperimentConfig, FidelityConfig};
pub use report::emit_report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fidelity::{self, KlSettings};
use crate::generate::{self, GenerationRequest, GenerationStrategy, ReferenceBackend, StrategyKind};
use crate::llm::RemoteBackend;
use crate::privacy;
use crate::schema::{self, DataTable, FeatureRole, TableSchema};
use crate::utility;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(#[from] crate::schema::SchemaError),
    #[error("table: {0}")]
    Table(#[from] crate::schema::TableError),
    #[error("utility: {0}")]
    Utility(#[from] crate::utility::UtilityError),
    #[error("report: {0}")]
    Report(String),
    #[error("no successful cells")]
    NoSuccessfulCells,
    #[error("provenance check failed: {0}")]
    Provenance(String),
    #[error("unknown cell id {0:?}")]
    UnknownCell(String),
}

/// One sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub strategy: StrategyKind,
    pub group_feature: Option<String>,
    pub n_features: usize,
    pub n_samples: usize,
    pub backend: String,
    pub rng_seed: u64,
}

impl CellSpec {
    /// Stable identity used for artifact directories and resumability.
    pub fn id(&self) -> String {
        let canonical = format!(
            "{}|{}|{}|{}|{}|{}",
            self.strategy,
            self.group_feature.as_deref().unwrap_or("-"),
            self.n_features,
            self.n_samples,
            self.backend,
            self.rng_seed
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Deterministic per-cell seed derived from the identity.
    fn cell_seed(&self) -> u64 {
        let digest = Sha256::digest(self.id().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Persisted outcome of one cell, the source of truth for the master CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_id: String,
    pub spec: CellSpec,
    pub status: CellStatus,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub selected_features: Vec<String>,
    /// Headline average KL (continuous features when any, otherwise all).
    #[serde(default)]
    pub avg_kl: Option<f64>,
    /// Average KL over all evaluated features.
    #[serde(default)]
    pub avg_kl_all: Option<f64>,
    #[serde(default)]
    pub within: Option<MetricBlock>,
    #[serde(default)]
    pub across: Option<MetricBlock>,
    #[serde(default)]
    pub mia: Option<MiaBlock>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Wall-clock cost; excluded from the master CSV so runs stay
    /// byte-identical.
    #[serde(default)]
    pub timing_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricBlock {
    pub auroc: f64,
    pub auroc_lo: f64,
    pub auroc_hi: f64,
    pub auprc: f64,
    pub auprc_lo: f64,
    pub auprc_hi: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl MetricBlock {
    fn from_eval(report: &utility::EvalReport) -> Self {
        MetricBlock {
            auroc: report.auroc,
            auroc_lo: report.auroc_ci.0,
            auroc_hi: report.auroc_ci.1,
            auprc: report.auprc,
            auprc_lo: report.auprc_ci.0,
            auprc_hi: report.auprc_ci.1,
            n_train: report.n_train,
            n_test: report.n_test,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiaBlock {
    pub attack_auroc: f64,
    pub membership_advantage: f64,
    pub risk_member: f64,
    pub risk_nonmember: f64,
    pub risk_gap: f64,
}

/// In-memory result table of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: Vec<CellResult>,
    pub master_csv: PathBuf,
    pub output_dir: PathBuf,
}

/// Inputs shared by every cell, prepared once per run.
struct Workbench {
    schema: Arc<TableSchema>,
    real: DataTable,
    /// Generator seed rows (MIA members).
    seed_sample: DataTable,
    /// Held-out rows (across-test set and MIA non-members).
    real_test: DataTable,
    /// Covariates ranked by real-data feature importance.
    ranked_features: Vec<String>,
}

fn prepare(config: &ExperimentConfig) -> Result<Workbench, HarnessError> {
    let schema = TableSchema::from_path(&config.schema)?.into_arc();
    let real = DataTable::from_csv_path(&config.real_data, Arc::clone(&schema))?;

    let parts = schema::split(&real, 1.0 - config.test_fraction, config.rng_seed)?;
    let pool = parts.first;
    let real_test = parts.second;

    // Seed sample: a deterministic shuffle of the training pool.
    let mut rows: Vec<usize> = (0..pool.n_rows()).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1)));
    rows.truncate(config.seed_rows.min(pool.n_rows()));
    rows.sort_unstable();
    let seed_sample = pool.take_rows(&rows);

    // Feature importance from a full-feature model on real training data.
    let importance_model = utility::train(&pool, &config.gbm)?;
    let ranked_features =
        utility::top_k_features(&importance_model, importance_model.feature_importance.len())?;

    Ok(Workbench {
        schema,
        real,
        seed_sample,
        real_test,
        ranked_features,
    })
}

/// The sweep cells in deterministic config order.
pub fn cells_of(config: &ExperimentConfig) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for strategy in &config.strategies {
        for &n_features in &config.feature_counts {
            for &n_samples in &config.sample_sizes {
                // group_feature rides along on every cell when configured:
                // group-based cells condition on it, the rest keep it for
                // per-group fidelity breakdowns.
                cells.push(CellSpec {
                    strategy: *strategy,
                    group_feature: config.group_feature.clone(),
                    n_features,
                    n_samples,
                    backend: config.backend.kind_str().to_string(),
                    rng_seed: config.rng_seed,
                });
            }
        }
    }
    cells
}

/// Run every cell of the sweep, skipping cells whose artifact directory
/// already holds a result. Failures are recorded per cell; the run continues.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(config.output_dir.join("cells"))?;
    let bench = prepare(config)?;
    let cells = cells_of(config);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if config.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            config.workers
        })
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;

    let results: Vec<CellResult> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|cell| run_or_resume_cell(config, &bench, cell))
            .collect()
    });

    let master_csv = write_master(&config.output_dir, &results)?;
    Ok(RunOutcome {
        results,
        master_csv,
        output_dir: config.output_dir.clone(),
    })
}

/// Run a single cell by id prefix, regardless of any persisted result.
/// Used by the `gen` CLI command.
pub fn run_single_cell(config: &ExperimentConfig, id_prefix: &str) -> Result<CellResult, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(config.output_dir.join("cells"))?;
    let cells = cells_of(config);
    let cell = cells
        .iter()
        .find(|c| c.id().starts_with(id_prefix))
        .ok_or_else(|| HarnessError::UnknownCell(id_prefix.to_string()))?;
    let bench = prepare(config)?;
    Ok(execute_cell(config, &bench, cell))
}

fn cell_dir(output_dir: &Path, cell_id: &str) -> PathBuf {
    output_dir.join("cells").join(cell_id)
}

fn run_or_resume_cell(config: &ExperimentConfig, bench: &Workbench, cell: &CellSpec) -> CellResult {
    let dir = cell_dir(&config.output_dir, &cell.id());
    let result_path = dir.join("result.json");
    if result_path.exists() {
        match std::fs::read_to_string(&result_path)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str::<CellResult>(&text).map_err(|e| e.to_string()))
        {
            // only completed cells are skipped; failed ones retry
            Ok(result) if result.spec == *cell && result.status == CellStatus::Ok => return result,
            _ => {} // failed, stale, or corrupt: recompute
        }
    }
    execute_cell(config, bench, cell)
}

fn execute_cell(config: &ExperimentConfig, bench: &Workbench, cell: &CellSpec) -> CellResult {
    let start = Instant::now();
    let dir = cell_dir(&config.output_dir, &cell.id());
    let mut result = match cell_body(config, bench, cell, &dir) {
        Ok(result) => result,
        Err(message) => CellResult {
            cell_id: cell.id(),
            spec: cell.clone(),
            status: CellStatus::Failed,
            error: Some(message),
            selected_features: Vec::new(),
            avg_kl: None,
            avg_kl_all: None,
            within: None,
            across: None,
            mia: None,
            warnings: Vec::new(),
            timing_ms: 0,
        },
    };
    result.timing_ms = start.elapsed().as_millis() as u64;
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = std::fs::write(
            dir.join("result.json"),
            serde_json::to_vec_pretty(&result).expect("serializable"),
        );
    }
    result
}

/// Feature selection for a cell: top-k ranked covariates, with the group
/// feature retained when the cell needs it for conditioning or grouping.
fn select_for_cell(
    bench: &Workbench,
    cell: &CellSpec,
) -> Result<Vec<String>, String> {
    let k = cell.n_features.min(bench.ranked_features.len());
    let mut selected: Vec<String> = bench.ranked_features[..k].to_vec();
    if let Some(group) = &cell.group_feature {
        if !selected.iter().any(|f| f == group) {
            let gi = bench
                .schema
                .index_of(group)
                .ok_or_else(|| format!("group feature {group:?} not in schema"))?;
            if bench.schema.feature(gi).role != FeatureRole::Group {
                return Err(format!("feature {group:?} does not have the group role"));
            }
            selected.push(group.clone());
        }
    }
    Ok(selected)
}

fn cell_body(
    config: &ExperimentConfig,
    bench: &Workbench,
    cell: &CellSpec,
    dir: &Path,
) -> Result<CellResult, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let mut warnings = Vec::new();

    let selected = select_for_cell(bench, cell)?;
    let names: Vec<&str> = selected.iter().map(|s| s.as_str()).collect();
    let seed_sel = bench.seed_sample.select_features(&names).map_err(|e| e.to_string())?;
    let test_sel = bench.real_test.select_features(&names).map_err(|e| e.to_string())?;
    let real_sel = bench.real.select_features(&names).map_err(|e| e.to_string())?;

    // generation
    let strategy = match cell.strategy {
        StrategyKind::Naive => GenerationStrategy::naive(),
        StrategyKind::SchemaConstrained => GenerationStrategy::schema_constrained(),
        StrategyKind::Conditional => GenerationStrategy::conditional(),
        StrategyKind::GroupBased => {
            GenerationStrategy::group_based(cell.group_feature.clone().expect("validated"))
        }
    };
    let request = GenerationRequest::new(
        seed_sel.schema_arc(),
        cell.n_samples,
        strategy,
        seed_sel.clone(),
        cell.cell_seed(),
    )
    .map_err(|e| e.to_string())?;

    let generated = match &config.backend {
        BackendConfig::Reference => generate::generate(&request, &ReferenceBackend),
        BackendConfig::Remote(client_config) => {
            let backend = RemoteBackend::new(client_config.clone());
            generate::generate(&request, &backend)
        }
    }
    .map_err(|e| e.to_string())?;

    std::fs::write(
        dir.join("generation_log.json"),
        serde_json::to_vec_pretty(&generated.log).expect("serializable"),
    )
    .map_err(|e| e.to_string())?;

    // optional drift emulating high-dimensional degradation; the group
    // column is conditioning infrastructure and stays clean
    let synthetic = if config.degrade.slope > 0.0 {
        let severities: BTreeMap<String, f64> = selected
            .iter()
            .filter(|name| Some(name.as_str()) != cell.group_feature.as_deref())
            .enumerate()
            .map(|(i, name)| (name.clone(), config.degrade.severity(i, cell.n_features)))
            .collect();
        generate::degrade(&generated.table, &severities, cell.cell_seed().wrapping_add(7))
            .map_err(|e| e.to_string())?
    } else {
        generated.table
    };
    synthetic
        .write_csv_path(dir.join("synthetic.csv"))
        .map_err(|e| e.to_string())?;

    // fidelity
    let settings = KlSettings {
        n_bins: config.fidelity.bins,
        epsilon: config.fidelity.epsilon,
    };
    let kl = fidelity::kl_table(&real_sel, &synthetic, None, settings).map_err(|e| e.to_string())?;
    write_json(dir.join("kl_report.json"), &kl)?;
    let mut kl_csv = Vec::new();
    fidelity::write_report_csv(&kl, &mut kl_csv).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("kl_report.csv"), kl_csv).map_err(|e| e.to_string())?;

    if let Some(group) = cell
        .group_feature
        .as_ref()
        .filter(|g| real_sel.schema().index_of(g).is_some())
    {
        match fidelity::kl_by_group(&real_sel, &synthetic, group, settings) {
            Ok(group_kl) => write_json(dir.join("group_kl.json"), &group_kl)?,
            Err(e) => warnings.push(format!("group KL skipped: {e}")),
        }
    }

    // utility
    let mut gbm = config.gbm.clone();
    gbm.rng_seed = cell.cell_seed().wrapping_add(13);
    let within = utility::eval_within(&synthetic, &gbm, config.n_boot).map_err(|e| e.to_string())?;
    write_json(dir.join("eval_within.json"), &within)?;

    let across_model = utility::train(&synthetic, &gbm).map_err(|e| e.to_string())?;
    across_model
        .save(dir.join("target_model.json"))
        .map_err(|e| e.to_string())?;
    let across = utility::eval_across_with_model(
        &across_model,
        synthetic.n_rows(),
        &test_sel,
        &gbm,
        config.n_boot,
    )
    .map_err(|e| e.to_string())?;
    write_json(dir.join("eval_across.json"), &across)?;

    // privacy: members are the generator's seed rows, non-members held-out
    // real rows; the across-model doubles as the attack target.
    let mia = privacy::mia_experiment_with_model(
        &across_model,
        &seed_sel,
        &test_sel,
        cell.cell_seed().wrapping_add(23),
    )
    .map_err(|e| e.to_string())?;
    write_json(dir.join("mia.json"), &mia)?;
    if let Some(w) = &mia.protocol_warning {
        warnings.push(w.clone());
    }
    let member_features =
        privacy::derive_attack_features(&across_model, &seed_sel).map_err(|e| e.to_string())?;
    let nonmember_features =
        privacy::derive_attack_features(&across_model, &test_sel).map_err(|e| e.to_string())?;
    let mut attack_csv = Vec::new();
    privacy::write_attack_features_csv(&member_features, &nonmember_features, &mut attack_csv)
        .map_err(|e| e.to_string())?;
    std::fs::write(dir.join("attack_features.csv"), attack_csv).map_err(|e| e.to_string())?;

    Ok(CellResult {
        cell_id: cell.id(),
        spec: cell.clone(),
        status: CellStatus::Ok,
        error: None,
        selected_features: selected,
        avg_kl: Some(kl.continuous_average.unwrap_or(kl.average)),
        avg_kl_all: Some(kl.average),
        within: Some(MetricBlock::from_eval(&within)),
        across: Some(MetricBlock::from_eval(&across)),
        mia: Some(MiaBlock {
            attack_auroc: mia.attack_auroc,
            membership_advantage: mia.membership_advantage,
            risk_member: mia.empirical_risk_member,
            risk_nonmember: mia.empirical_risk_nonmember,
            risk_gap: mia.risk_gap,
        }),
        warnings,
        timing_ms: 0,
    })
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<(), String> {
    std::fs::write(path, serde_json::to_vec_pretty(value).expect("serializable"))
        .map_err(|e| e.to_string())
}

pub(crate) const MASTER_HEADER: [&str; 20] = [
    "cell_id",
    "strategy",
    "group_feature",
    "n_features",
    "n_samples",
    "scenario",
    "status",
    "avg_kl",
    "avg_kl_all",
    "auroc",
    "auroc_lo",
    "auroc_hi",
    "auprc",
    "auprc_lo",
    "auprc_hi",
    "attack_auroc",
    "membership_advantage",
    "risk_gap",
    "n_test",
    "error",
];

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One master row per (cell, scenario): the within row carries classifier
/// metrics only; the across row adds fidelity and attack columns.
pub(crate) fn master_rows(result: &CellResult) -> Vec<Vec<String>> {
    let base = |scenario: &str| -> Vec<String> {
        vec![
            result.cell_id.clone(),
            result.spec.strategy.to_string(),
            result.spec.group_feature.clone().unwrap_or_default(),
            result.spec.n_features.to_string(),
            result.spec.n_samples.to_string(),
            scenario.to_string(),
            match result.status {
                CellStatus::Ok => "ok".to_string(),
                CellStatus::Failed => "failed".to_string(),
            },
        ]
    };
    if result.status == CellStatus::Failed {
        let mut row = base("");
        row.extend(std::iter::repeat_n(String::new(), 12));
        row.push(result.error.clone().unwrap_or_default());
        return vec![row];
    }

    let metric_cols = |m: &MetricBlock| {
        vec![
            format!("{}", m.auroc),
            format!("{}", m.auroc_lo),
            format!("{}", m.auroc_hi),
            format!("{}", m.auprc),
            format!("{}", m.auprc_lo),
            format!("{}", m.auprc_hi),
        ]
    };

    let mut rows = Vec::new();
    if let Some(within) = &result.within {
        let mut row = base("within");
        row.push(String::new()); // avg_kl
        row.push(String::new()); // avg_kl_all
        row.extend(metric_cols(within));
        row.extend(std::iter::repeat_n(String::new(), 3)); // mia columns
        row.push(within.n_test.to_string());
        row.push(String::new());
        rows.push(row);
    }
    if let Some(across) = &result.across {
        let mut row = base("across");
        row.push(fmt_opt(result.avg_kl));
        row.push(fmt_opt(result.avg_kl_all));
        row.extend(metric_cols(across));
        match &result.mia {
            Some(mia) => {
                row.push(format!("{}", mia.attack_auroc));
                row.push(format!("{}", mia.membership_advantage));
                row.push(format!("{}", mia.risk_gap));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        row.push(across.n_test.to_string());
        row.push(String::new());
        rows.push(row);
    }
    rows
}

fn write_master(output_dir: &Path, results: &[CellResult]) -> Result<PathBuf, HarnessError> {
    let path = output_dir.join("master.csv");
    let mut wtr = csv::Writer::from_writer(std::fs::File::create(&path)?);
    wtr.write_record(MASTER_HEADER)
        .map_err(crate::schema::TableError::from)?;
    for result in results {
        for row in master_rows(result) {
            wtr.write_record(&row).map_err(crate::schema::TableError::from)?;
        }
    }
    wtr.flush()?;
    Ok(path)
}
