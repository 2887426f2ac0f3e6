//! Prompt templates for the four generation strategies and their rendering.
//!
//! Templates are plain text with `{placeholder}` markers. Rendering is a pure
//! function of the request and context, so prompts (and therefore cache keys)
//! are reproducible.

use crate::generate::{GenerationRequest, StrategyKind};
use crate::schema::{DataTable, FeatureKind, TableSchema};

use super::LlmError;

/// Default cap on exemplar rows embedded in a prompt. A few dozen rows are
/// enough to convey the structure.
pub const DEFAULT_EXEMPLAR_CAP: usize = 50;

pub const PLACEHOLDER_SCHEMA_BLOCK: &str = "{schema_block}";
pub const PLACEHOLDER_EXEMPLAR_ROWS: &str = "{exemplar_rows}";
pub const PLACEHOLDER_CONSTRAINTS: &str = "{constraints}";
pub const PLACEHOLDER_GROUP_VALUE: &str = "{group_value}";
pub const PLACEHOLDER_PRIOR_FEATURES: &str = "{prior_features}";
pub const PLACEHOLDER_N_ROWS: &str = "{n_rows}";
pub const PLACEHOLDER_BATCH: &str = "{batch}";

const NAIVE_BODY: &str = "\
You are an advanced AI model tasked with generating realistic synthetic \
Electronic Health Records (EHR) while ensuring privacy: no real patient row \
may be replicated.

Below is a sample of the structured dataset (batch {batch}):

{exemplar_rows}

Generate {n_rows} synthetic patient rows that preserve the statistical and \
structural properties of the sample above.

Output the synthetic EHR in a structured format such as CSV, using exactly \
this header:
{schema_block}
";

const SCHEMA_BODY: &str = "\
You are an advanced AI model tasked with generating realistic synthetic \
Electronic Health Records (EHR) while ensuring privacy: no real patient row \
may be replicated.

Below is a sample of the structured dataset (batch {batch}):

{exemplar_rows}

Generate {n_rows} synthetic patient rows. Strictly follow the data types, \
value sets, and numeric ranges below, and keep attributes logically \
consistent with one another.

Constraints:
{constraints}

Output the synthetic EHR in a structured format such as CSV, using exactly \
this header:
{schema_block}
";

const CONDITIONAL_BODY: &str = "\
You are an advanced AI model generating realistic synthetic Electronic \
Health Records (EHR) with a conditional strategy: each new feature must be \
sampled while conditioning on the features generated so far, so that values \
stay mutually consistent (for example, vitals consistent with age).

Below is a sample of the structured dataset (batch {batch}):

{exemplar_rows}

Columns generated so far for the rows in progress:
{prior_features}

Now generate the next columns for the same {n_rows} rows, in the same row \
order, conditioning each value on that row's earlier columns.

Output the synthetic EHR in a structured format such as CSV, using exactly \
this header:
{schema_block}
";

const GROUP_BODY: &str = "\
You are an advanced AI model generating realistic synthetic Electronic \
Health Records (EHR) with a group-based strategy: every generated row must \
belong to the {group_value} group, and feature values must follow the \
distributions observed for that group (for example, group-appropriate lab \
values and risk profiles).

Below is a sample of the structured dataset (batch {batch}):

{exemplar_rows}

Generate {n_rows} synthetic patient rows for the {group_value} group only.

Output the synthetic EHR in a structured format such as CSV, using exactly \
this header:
{schema_block}
";

/// A prompt body bound to the strategy it serves.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub strategy: StrategyKind,
    pub body: String,
}

impl PromptTemplate {
    /// The built-in template for a strategy.
    pub fn builtin(strategy: StrategyKind) -> Self {
        let body = match strategy {
            StrategyKind::Naive => NAIVE_BODY,
            StrategyKind::SchemaConstrained => SCHEMA_BODY,
            StrategyKind::Conditional => CONDITIONAL_BODY,
            StrategyKind::GroupBased => GROUP_BODY,
        };
        PromptTemplate {
            strategy,
            body: body.to_string(),
        }
    }

    /// Check that every placeholder the strategy needs is present.
    pub fn validate(&self) -> Result<(), LlmError> {
        let mut required = vec![PLACEHOLDER_EXEMPLAR_ROWS, PLACEHOLDER_SCHEMA_BLOCK, PLACEHOLDER_N_ROWS];
        match self.strategy {
            StrategyKind::SchemaConstrained => required.push(PLACEHOLDER_CONSTRAINTS),
            StrategyKind::Conditional => required.push(PLACEHOLDER_PRIOR_FEATURES),
            StrategyKind::GroupBased => required.push(PLACEHOLDER_GROUP_VALUE),
            StrategyKind::Naive => {}
        }
        for placeholder in required {
            if !self.body.contains(placeholder) {
                return Err(LlmError::MissingPlaceholder {
                    placeholder: placeholder.to_string(),
                    detail: "not present in template body".into(),
                });
            }
        }
        Ok(())
    }
}

/// Per-render inputs beyond the request: which columns to ask for, group
/// conditioning, previously generated columns, and the batch nonce.
#[derive(Debug, Clone, Default)]
pub struct RenderContext {
    pub n_rows: usize,
    /// Columns requested this turn; defaults to the full schema.
    pub columns: Option<Vec<String>>,
    pub group_value: Option<String>,
    /// CSV of the columns generated in earlier turns.
    pub prior_features: Option<String>,
    /// Retry/batch counter folded into the prompt so repeated attempts are
    /// distinct requests.
    pub batch: u32,
    /// Cap on exemplar rows; defaults to [`DEFAULT_EXEMPLAR_CAP`].
    pub exemplar_cap: Option<usize>,
}

/// Render a template against a request. Deterministic; fails when the
/// template references a placeholder the context cannot fill.
pub fn render_prompt(
    template: &PromptTemplate,
    request: &GenerationRequest,
    context: &RenderContext,
) -> Result<String, LlmError> {
    template.validate()?;
    let schema = request.schema.as_ref();
    let columns: Vec<String> = match &context.columns {
        Some(cols) => cols.clone(),
        None => schema.features().iter().map(|f| f.name.clone()).collect(),
    };
    for c in &columns {
        if schema.index_of(c).is_none() {
            return Err(LlmError::UnknownColumn(c.clone()));
        }
    }

    let cap = context.exemplar_cap.unwrap_or(DEFAULT_EXEMPLAR_CAP);
    let mut out = template.body.clone();

    if out.contains(PLACEHOLDER_GROUP_VALUE) {
        let value = context.group_value.as_deref().ok_or_else(|| LlmError::MissingPlaceholder {
            placeholder: PLACEHOLDER_GROUP_VALUE.to_string(),
            detail: "no group value in context".into(),
        })?;
        out = out.replace(PLACEHOLDER_GROUP_VALUE, value);
    }
    if out.contains(PLACEHOLDER_PRIOR_FEATURES) {
        let prior = context.prior_features.as_deref().ok_or_else(|| LlmError::MissingPlaceholder {
            placeholder: PLACEHOLDER_PRIOR_FEATURES.to_string(),
            detail: "no prior feature data in context".into(),
        })?;
        out = out.replace(PLACEHOLDER_PRIOR_FEATURES, prior);
    }
    if out.contains(PLACEHOLDER_CONSTRAINTS) {
        out = out.replace(PLACEHOLDER_CONSTRAINTS, &constraints_block(schema));
    }

    out = out.replace(PLACEHOLDER_SCHEMA_BLOCK, &columns.join(","));
    out = out.replace(PLACEHOLDER_EXEMPLAR_ROWS, &exemplar_block(&request.seed_sample, cap));
    out = out.replace(PLACEHOLDER_N_ROWS, &context.n_rows.to_string());
    out = out.replace(PLACEHOLDER_BATCH, &context.batch.to_string());
    Ok(out)
}

/// One rule line per feature.
fn constraints_block(schema: &TableSchema) -> String {
    let mut lines = Vec::with_capacity(schema.n_features());
    for spec in schema.features() {
        let rule = match spec.kind {
            FeatureKind::Continuous => match spec.range {
                Some((lo, hi)) => format!("numeric in [{lo}, {hi}]"),
                None => "numeric".to_string(),
            },
            FeatureKind::Categorical | FeatureKind::Binary => {
                format!("one of {}", spec.allowed_values.join("|"))
            }
        };
        let unit = spec.unit.as_deref().map(|u| format!(" ({u})")).unwrap_or_default();
        lines.push(format!("- {}: {rule}{unit}", spec.name));
    }
    lines.join("\n")
}

fn exemplar_block(seed: &DataTable, cap: usize) -> String {
    let rows: Vec<usize> = (0..seed.n_rows().min(cap)).collect();
    seed.take_rows(&rows).to_csv_string()
}
