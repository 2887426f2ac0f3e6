//! Command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tabsynth_core::harness::{self, BackendConfig, CellStatus, ExperimentConfig};
use tabsynth_core::schema::{DataTable, TableSchema};
use tabsynth_core::sim::{self, SimSpec};

#[derive(Parser)]
#[command(name = "tabsynth", version, about = "Synthetic tabular data generation and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment sweep (resumes completed cells).
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        #[command(flatten)]
        overrides: BackendOverrides,
    },
    /// Build the markdown report and plot data for a finished run.
    Report {
        /// Experiment config the run was started with.
        config: PathBuf,
    },
    /// Validate a CSV against a schema descriptor and print its summary.
    Validate {
        schema: PathBuf,
        csv: PathBuf,
    },
    /// Generate the synthetic table for a single sweep cell.
    Gen {
        config: PathBuf,
        /// Cell id (prefix) as shown by `run` and in master.csv.
        #[arg(long)]
        cell: String,
        #[command(flatten)]
        overrides: BackendOverrides,
    },
    /// Write a simulated ground-truth dataset (real.csv + schema.txt).
    Simulate {
        /// Output directory.
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        features: usize,
        /// Per-group mean shift on every covariate.
        #[arg(long, default_value_t = 0.0)]
        group_shift: f64,
        /// Fraction of covariate cells made missing.
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
        /// Label weight of covariate j is scale * decay^j.
        #[arg(long, default_value_t = 1.2)]
        weight_scale: f64,
        #[arg(long, default_value_t = 0.9)]
        weight_decay: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

/// Remote-backend settings that can be set or overridden from the command
/// line instead of the config file.
#[derive(Args, Default)]
struct BackendOverrides {
    /// Backend kind: reference or remote.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let outcome = harness::run(&config).map_err(|e| e.to_string())?;
            let mut failed = 0;
            for result in &outcome.results {
                match result.status {
                    CellStatus::Ok => println!(
                        "ok     {}  {}/{}f/{}n  avg_kl={} across_auroc={}",
                        result.cell_id,
                        result.spec.strategy,
                        result.spec.n_features,
                        result.spec.n_samples,
                        result.avg_kl.map(|v| format!("{v:.4}")).unwrap_or_default(),
                        result
                            .across
                            .as_ref()
                            .map(|a| format!("{:.4}", a.auroc))
                            .unwrap_or_default(),
                    ),
                    CellStatus::Failed => {
                        failed += 1;
                        println!(
                            "FAILED {}  {}/{}f/{}n  {}",
                            result.cell_id,
                            result.spec.strategy,
                            result.spec.n_features,
                            result.spec.n_samples,
                            result.error.as_deref().unwrap_or("unknown error"),
                        );
                    }
                }
            }
            println!("master: {}", outcome.master_csv.display());
            Ok(if failed == outcome.results.len() && failed > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Report { config } => {
            let config = load_config(&config, &BackendOverrides::default())?;
            let output = harness::emit_report(&config).map_err(|e| e.to_string())?;
            println!("report: {}", output.report_md.display());
            println!("mia chart data: {}", output.mia_chart_csv.display());
            println!(
                "histogram overlays: {} files, cells ok/failed: {}/{}",
                output.histogram_files.len(),
                output.n_ok,
                output.n_failed
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { schema, csv } => {
            let schema = TableSchema::from_path(&schema).map_err(|e| e.to_string())?.into_arc();
            let table = DataTable::from_csv_path(&csv, schema).map_err(|e| e.to_string())?;
            let summary = table.summary();
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            println!(
                "ok: {} rows x {} features validate against the schema",
                summary.n_rows, summary.n_features
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { config, cell, overrides } => {
            let config = load_config(&config, &overrides)?;
            let result = harness::run_single_cell(&config, &cell).map_err(|e| e.to_string())?;
            match result.status {
                CellStatus::Ok => {
                    println!(
                        "cell {} written under {}",
                        result.cell_id,
                        config.output_dir.join("cells").join(&result.cell_id).display()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                CellStatus::Failed => Err(result.error.unwrap_or_else(|| "cell failed".into())),
            }
        }
        Command::Simulate {
            out,
            rows,
            features,
            group_shift,
            missing_rate,
            weight_scale,
            weight_decay,
            seed,
        } => {
            let spec = SimSpec {
                n_features: features,
                group_shift,
                missing_rate,
                weight_scale,
                weight_decay,
                ..SimSpec::default()
            };
            let (csv, schema) = sim::write_fixture(&spec, rows, seed, &out).map_err(|e| e.to_string())?;
            println!("wrote {} and {}", csv.display(), schema.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &PathBuf, overrides: &BackendOverrides) -> Result<ExperimentConfig, String> {
    let mut config = ExperimentConfig::from_path(path).map_err(|e| e.to_string())?;
    if let Some(kind) = &overrides.backend {
        match kind.as_str() {
            "reference" => config.backend = BackendConfig::Reference,
            "remote" => {
                if !matches!(config.backend, BackendConfig::Remote(_)) {
                    return Err(
                        "backend remote requires a [backend] section with endpoint and model".into(),
                    );
                }
            }
            other => return Err(format!("unknown backend {other:?}")),
        }
    }
    if let BackendConfig::Remote(client) = &mut config.backend {
        if let Some(endpoint) = &overrides.endpoint {
            client.endpoint = endpoint.clone();
        }
        if let Some(model) = &overrides.model {
            client.model = model.clone();
        }
        if let Some(temperature) = overrides.temperature {
            client.temperature = temperature;
        }
        if let Some(cache_dir) = &overrides.cache_dir {
            client.cache_dir = Some(cache_dir.clone());
        }
    }
    Ok(config)
}
