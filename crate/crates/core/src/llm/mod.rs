//! Remote text-generation integration: prompt templates per strategy, a
//! caching HTTP client for chat-completion endpoints, and CSV extraction
//! from model responses.

mod client;
mod extract;
mod prompt;
mod remote;

pub use client::{cache_key, CompletionRequest, CompletionResponse, LlmClient, LlmClientConfig};
pub use extract::{extract_rows, Extraction, RowReject, HEADER_MATCH_THRESHOLD};
pub use prompt::{render_prompt, PromptTemplate, RenderContext, DEFAULT_EXEMPLAR_CAP};
pub use remote::{RemoteBackend, DEFAULT_BLOCK_SIZE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("placeholder {placeholder} cannot be filled: {detail}")]
    MissingPlaceholder { placeholder: String, detail: String },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("retry budget exhausted after {attempts} attempts; last failure: {last}")]
    RetryBudgetExhausted { attempts: u32, last: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("cache: {0}")]
    Cache(String),
}
