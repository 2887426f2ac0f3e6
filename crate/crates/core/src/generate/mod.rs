//! The four generation strategies over a pluggable backend contract.
//!
//! Strategies: naive and schema-constrained sample feature marginals
//! independently; conditional samples each feature given the features already
//! drawn for the row, in schema order; group-based conditions the whole chain
//! on a demographic group value and allocates a uniform quota of rows per
//! observed group.
//!
//! Backends yield candidate rows as raw cells. Every row is validated against
//! the schema before acceptance; rejected rows are counted with reasons,
//! never silently dropped.

mod degrade;
mod reference;

pub use degrade::degrade;
pub use reference::{fit_reference, sample, ReferenceBackend, ReferenceModel};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{DataTable, FeatureRole, RowViolation, TableBuilder, TableSchema};

/// Strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Naive,
    SchemaConstrained,
    Conditional,
    GroupBased,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::SchemaConstrained => "schema_constrained",
            StrategyKind::Conditional => "conditional",
            StrategyKind::GroupBased => "group_based",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A strategy plus, for group-based generation, the conditioning feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStrategy {
    pub kind: StrategyKind,
    pub group_feature: Option<String>,
}

impl GenerationStrategy {
    pub fn naive() -> Self {
        GenerationStrategy {
            kind: StrategyKind::Naive,
            group_feature: None,
        }
    }

    pub fn schema_constrained() -> Self {
        GenerationStrategy {
            kind: StrategyKind::SchemaConstrained,
            group_feature: None,
        }
    }

    pub fn conditional() -> Self {
        GenerationStrategy {
            kind: StrategyKind::Conditional,
            group_feature: None,
        }
    }

    pub fn group_based(group_feature: impl Into<String>) -> Self {
        GenerationStrategy {
            kind: StrategyKind::GroupBased,
            group_feature: Some(group_feature.into()),
        }
    }

    /// Group-based strategies need a group feature with the group role;
    /// other strategies must not name one.
    pub fn validate(&self, schema: &TableSchema) -> Result<(), GenerateError> {
        match (self.kind, &self.group_feature) {
            (StrategyKind::GroupBased, Some(name)) => {
                let idx = schema
                    .index_of(name)
                    .ok_or_else(|| GenerateError::UnknownFeature(name.clone()))?;
                if schema.feature(idx).role != FeatureRole::Group {
                    return Err(GenerateError::NotAGroupFeature(name.clone()));
                }
                Ok(())
            }
            (StrategyKind::GroupBased, None) => Err(GenerateError::MissingGroupFeature),
            (_, Some(name)) => Err(GenerateError::UnexpectedGroupFeature(name.clone())),
            (_, None) => Ok(()),
        }
    }
}

/// A request for `n_samples` synthetic rows under a strategy, carrying a
/// small exemplar of real rows for the backend to learn from.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub schema: Arc<TableSchema>,
    pub n_samples: usize,
    pub strategy: GenerationStrategy,
    pub seed_sample: DataTable,
    pub rng_seed: u64,
}

impl GenerationRequest {
    pub fn new(
        schema: Arc<TableSchema>,
        n_samples: usize,
        strategy: GenerationStrategy,
        seed_sample: DataTable,
        rng_seed: u64,
    ) -> Result<Self, GenerateError> {
        if n_samples == 0 {
            return Err(GenerateError::InvalidRequest("n_samples must be positive".into()));
        }
        strategy.validate(&schema)?;
        if seed_sample.schema() != schema.as_ref() {
            return Err(GenerateError::InvalidRequest(
                "seed_sample schema differs from request schema".into(),
            ));
        }
        Ok(GenerationRequest {
            schema,
            n_samples,
            strategy,
            seed_sample,
            rng_seed,
        })
    }
}

/// One batch of candidate rows from a backend, plus the raw output it was
/// parsed from (kept verbatim for the log).
#[derive(Debug, Clone, Default)]
pub struct BackendBatch {
    pub rows: Vec<Vec<Option<String>>>,
    pub transcript: Option<String>,
    /// Rows the backend already rejected while parsing its raw output.
    pub pre_rejected: Vec<RowViolation>,
}

/// A source of candidate rows. `attempt` starts at 0 and increments on each
/// re-query for shortfall; backends should produce fresh rows per attempt.
pub trait GeneratorBackend {
    fn name(&self) -> &str;

    fn generate_batch(
        &self,
        request: &GenerationRequest,
        n_rows: usize,
        attempt: u32,
    ) -> Result<BackendBatch, GenerateError>;
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("seed sample is empty")]
    EmptySeed,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0:?} does not have the group role")]
    NotAGroupFeature(String),
    #[error("group-based strategy needs a group feature")]
    MissingGroupFeature,
    #[error("strategy {0:?} must not name a group feature")]
    UnexpectedGroupFeature(String),
    #[error("group feature has no observed values in the seed sample")]
    GroupUnobserved,
    #[error("model was fitted for {fitted} but the request asks for {requested}")]
    StrategyMismatch { fitted: String, requested: String },
    #[error("feature {feature:?} cannot be fitted: {reason}")]
    UnfittableFeature { feature: String, reason: String },
    #[error("backend {backend}: {message}")]
    Backend { backend: String, message: String },
    #[error(
        "backend exhausted after {attempts} attempts: produced {produced} of {wanted} valid rows"
    )]
    Exhausted {
        attempts: u32,
        produced: usize,
        wanted: usize,
        /// Partial result: whatever valid rows were collected, plus the log.
        partial: Box<Generated>,
    },
    #[error("degrade severity for {feature:?} must be >= 0, got {value}")]
    NegativeSeverity { feature: String, value: f64 },
}

/// Accounting of one generation run.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationLog {
    pub backend: String,
    pub strategy: StrategyKind,
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Valid rows beyond the requested count, discarded unlooked-at.
    pub surplus: usize,
    pub attempts: u32,
    pub rng_seed: u64,
    pub rejection_reasons: Vec<RowViolation>,
    pub rejections_by_feature: BTreeMap<String, usize>,
    pub transcripts: Vec<String>,
}

/// A validated synthetic table plus its generation log.
#[derive(Debug, Clone)]
pub struct Generated {
    pub table: DataTable,
    pub log: GenerationLog,
}

/// Retry budget for backends that come up short.
#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    pub max_retries: u32,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { max_retries: 5 }
    }
}

/// Produce exactly `request.n_samples` schema-valid rows from a backend,
/// re-querying for shortfall up to the retry budget. Returns the table and a
/// log with raw transcripts and per-feature rejection counts.
pub fn generate<B: GeneratorBackend + ?Sized>(
    request: &GenerationRequest,
    backend: &B,
) -> Result<Generated, GenerateError> {
    generate_with_options(request, backend, GenerateOptions::default())
}

pub fn generate_with_options<B: GeneratorBackend + ?Sized>(
    request: &GenerationRequest,
    backend: &B,
    options: GenerateOptions,
) -> Result<Generated, GenerateError> {
    request.strategy.validate(&request.schema)?;
    let mut builder = TableBuilder::new(Arc::clone(&request.schema));
    let mut log = GenerationLog {
        backend: backend.name().to_string(),
        strategy: request.strategy.kind,
        requested: request.n_samples,
        accepted: 0,
        rejected: 0,
        surplus: 0,
        attempts: 0,
        rng_seed: request.rng_seed,
        rejection_reasons: Vec::new(),
        rejections_by_feature: BTreeMap::new(),
        transcripts: Vec::new(),
    };

    for attempt in 0..=options.max_retries {
        let shortfall = request.n_samples - builder.n_rows();
        if shortfall == 0 {
            break;
        }
        log.attempts = attempt + 1;
        let batch = backend.generate_batch(request, shortfall, attempt)?;
        if let Some(t) = batch.transcript {
            log.transcripts.push(t);
        }
        for violation in batch.pre_rejected {
            if let Some(feature) = violation.feature() {
                *log.rejections_by_feature.entry(feature.to_string()).or_insert(0) += 1;
            }
            log.rejected += 1;
            log.rejection_reasons.push(violation);
        }
        for row in &batch.rows {
            if builder.n_rows() == request.n_samples {
                log.surplus += 1;
                continue;
            }
            match builder.push_raw(row) {
                Ok(()) => {}
                Err(violation) => {
                    if let Some(feature) = violation.feature() {
                        *log.rejections_by_feature.entry(feature.to_string()).or_insert(0) += 1;
                    }
                    log.rejected += 1;
                    log.rejection_reasons.push(violation);
                }
            }
        }
    }

    log.accepted = builder.n_rows();
    let generated = Generated {
        table: builder.finish(),
        log,
    };
    if generated.table.n_rows() < request.n_samples {
        return Err(GenerateError::Exhausted {
            attempts: generated.log.attempts,
            produced: generated.table.n_rows(),
            wanted: request.n_samples,
            partial: Box::new(generated),
        });
    }
    Ok(generated)
}
