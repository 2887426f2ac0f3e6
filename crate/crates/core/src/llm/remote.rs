//! Remote text-generation backend: renders the strategy's prompt template,
//! calls the endpoint, extracts CSV rows from the response, and hands
//! validated candidates to the generation pipeline.
//!
//! The conditional strategy runs as a multi-turn protocol: features are
//! produced in blocks (default 5 per turn), each turn's prompt carrying the
//! columns generated so far so the model can condition on them.


use crate::generate::{
    BackendBatch, GenerateError, GenerationRequest, GeneratorBackend, StrategyKind,
};
use crate::schema::RowViolation;

use super::client::{LlmClient, LlmClientConfig};
use super::extract::{self, extract_rows};
use super::prompt::{render_prompt, PromptTemplate, RenderContext, DEFAULT_EXEMPLAR_CAP};
use super::LlmError;

/// Features per conditional turn.
pub const DEFAULT_BLOCK_SIZE: usize = 5;

pub struct RemoteBackend {
    client: LlmClient,
    pub exemplar_cap: usize,
    pub block_size: usize,
}

impl RemoteBackend {
    pub fn new(config: LlmClientConfig) -> Self {
        RemoteBackend {
            client: LlmClient::new(config),
            exemplar_cap: DEFAULT_EXEMPLAR_CAP,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    fn complete(&self, prompt: String) -> Result<(String, String), GenerateError> {
        let request = self.client.request(prompt);
        let response = self.client.call(&request).map_err(|e| self.backend_err(e))?;
        let transcript = format!(
            "[status {} attempts {} cached {}]\n{}",
            response.http_status, response.attempts, response.from_cache, response.text
        );
        Ok((response.text, transcript))
    }

    fn backend_err(&self, e: LlmError) -> GenerateError {
        GenerateError::Backend {
            backend: "remote".to_string(),
            message: e.to_string(),
        }
    }

    /// Single-call strategies: one prompt, one CSV block back.
    fn flat_batch(
        &self,
        request: &GenerationRequest,
        n_rows: usize,
        attempt: u32,
        template: &PromptTemplate,
        group_value: Option<String>,
    ) -> Result<BackendBatch, GenerateError> {
        let ctx = RenderContext {
            n_rows,
            group_value,
            batch: attempt,
            exemplar_cap: Some(self.exemplar_cap),
            ..RenderContext::default()
        };
        let prompt = render_prompt(template, request, &ctx).map_err(|e| self.backend_err(e))?;
        let (text, transcript) = self.complete(prompt)?;
        let extraction = extract_rows(&text, &request.schema);
        let mut transcript = transcript;
        if let Some(reason) = &extraction.failure {
            transcript.push_str(&format!("\n[extraction failed: {reason}]"));
        }
        Ok(BackendBatch {
            rows: extraction.rows,
            transcript: Some(transcript),
            pre_rejected: extraction.rejects.into_iter().map(|r| r.violation).collect(),
        })
    }

    /// Group-based strategy: one call per group value observed in the seed
    /// sample, each asked for an even share of the rows.
    fn group_batch(
        &self,
        request: &GenerationRequest,
        n_rows: usize,
        attempt: u32,
    ) -> Result<BackendBatch, GenerateError> {
        let template = PromptTemplate::builtin(StrategyKind::GroupBased);
        let schema = &request.schema;
        let gi = schema
            .index_of(request.strategy.group_feature.as_deref().unwrap())
            .expect("strategy validated");
        let spec = schema.feature(gi);
        let observed: Vec<&String> = spec
            .allowed_values
            .iter()
            .enumerate()
            .filter(|(vi, _)| !request.seed_sample.rows_with_category(gi, *vi as u32).is_empty())
            .map(|(_, v)| v)
            .collect();
        if observed.is_empty() {
            return Err(GenerateError::GroupUnobserved);
        }

        let mut combined = BackendBatch::default();
        let mut transcripts = Vec::new();
        let quota = n_rows / observed.len();
        let remainder = n_rows % observed.len();
        for (pos, value) in observed.iter().enumerate() {
            let share = quota + usize::from(pos < remainder);
            if share == 0 {
                continue;
            }
            let batch = self.flat_batch(request, share, attempt, &template, Some((*value).clone()))?;
            combined.rows.extend(batch.rows);
            combined.pre_rejected.extend(batch.pre_rejected);
            if let Some(t) = batch.transcript {
                transcripts.push(format!("[group {value}]\n{t}"));
            }
        }
        combined.transcript = Some(transcripts.join("\n---\n"));
        Ok(combined)
    }

    /// Conditional strategy: feature blocks generated turn by turn, each turn
    /// conditioned on the columns produced so far. Rows that a later turn
    /// fails to extend are dropped as incomplete.
    #[allow(clippy::needless_range_loop)]
    fn conditional_batch(
        &self,
        request: &GenerationRequest,
        n_rows: usize,
        attempt: u32,
    ) -> Result<BackendBatch, GenerateError> {
        let template = PromptTemplate::builtin(StrategyKind::Conditional);
        let schema = &request.schema;
        let all_names: Vec<String> = schema.features().iter().map(|f| f.name.clone()).collect();
        let blocks: Vec<Vec<String>> = all_names
            .chunks(self.block_size.max(1))
            .map(|c| c.to_vec())
            .collect();

        // columns[i][row]: cell for generated feature i
        let mut generated_names: Vec<String> = Vec::new();
        let mut columns: Vec<Vec<Option<String>>> = Vec::new();
        let mut alive = n_rows;
        let mut transcripts = Vec::new();
        let mut pre_rejected: Vec<RowViolation> = Vec::new();

        for block in &blocks {
            if alive == 0 {
                break;
            }
            let prior = render_prior(&generated_names, &columns, alive);
            let ctx = RenderContext {
                n_rows: alive,
                columns: Some(block.clone()),
                prior_features: Some(prior),
                batch: attempt,
                exemplar_cap: Some(self.exemplar_cap),
                ..RenderContext::default()
            };
            let prompt = render_prompt(&template, request, &ctx).map_err(|e| self.backend_err(e))?;
            let (text, transcript) = self.complete(prompt)?;
            transcripts.push(transcript);

            let names: Vec<&str> = block.iter().map(|s| s.as_str()).collect();
            let Some(located) = extract::locate_csv(&text, &names) else {
                transcripts.push("[turn produced no matching CSV block]".to_string());
                alive = 0;
                break;
            };
            let mut turn_rows: Vec<Vec<Option<String>>> = Vec::with_capacity(alive);
            for record in located.records {
                if turn_rows.len() == alive {
                    break;
                }
                if record.cells.len() != located.header_len {
                    pre_rejected.push(RowViolation::Arity {
                        expected: located.header_len,
                        got: record.cells.len(),
                    });
                    continue;
                }
                turn_rows.push(
                    located
                        .col_of_name
                        .iter()
                        .map(|col| {
                            col.and_then(|c| {
                                let v = record.cells[c].trim();
                                (!v.is_empty()).then(|| v.to_string())
                            })
                        })
                        .collect(),
                );
            }
            // rows this turn failed to extend are dropped
            alive = alive.min(turn_rows.len());
            for (bi, name) in block.iter().enumerate() {
                generated_names.push(name.clone());
                columns.push(turn_rows.iter().take(alive).map(|r| r[bi].clone()).collect());
            }
            for col in &mut columns {
                col.truncate(alive);
            }
        }

        // assemble rows in schema order
        let mut rows = Vec::with_capacity(alive);
        for row in 0..alive {
            let cells: Vec<Option<String>> = all_names
                .iter()
                .map(|name| {
                    generated_names
                        .iter()
                        .position(|g| g == name)
                        .and_then(|gi| columns[gi][row].clone())
                })
                .collect();
            rows.push(cells);
        }
        Ok(BackendBatch {
            rows,
            transcript: Some(transcripts.join("\n---\n")),
            pre_rejected,
        })
    }
}

fn render_prior(names: &[String], columns: &[Vec<Option<String>>], n_rows: usize) -> String {
    if names.is_empty() {
        return "(none yet; this is the first block)".to_string();
    }
    let mut out = names.join(",");
    out.push('\n');
    for row in 0..n_rows {
        let line: Vec<&str> = columns
            .iter()
            .map(|col| col[row].as_deref().unwrap_or(""))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

impl GeneratorBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate_batch(
        &self,
        request: &GenerationRequest,
        n_rows: usize,
        attempt: u32,
    ) -> Result<BackendBatch, GenerateError> {
        match request.strategy.kind {
            StrategyKind::Naive => {
                let template = PromptTemplate::builtin(StrategyKind::Naive);
                self.flat_batch(request, n_rows, attempt, &template, None)
            }
            StrategyKind::SchemaConstrained => {
                let template = PromptTemplate::builtin(StrategyKind::SchemaConstrained);
                self.flat_batch(request, n_rows, attempt, &template, None)
            }
            StrategyKind::GroupBased => self.group_batch(request, n_rows, attempt),
            StrategyKind::Conditional => self.conditional_batch(request, n_rows, attempt),
        }
    }
}
