//! Chat-model access: conversations, prompt templates, reply parsing,
//! pluggable backends and the usage-accounting gateway.

mod backend;
mod conversation;
mod gateway;
mod http;
mod parse;
mod template;

pub use backend::{
    approx_tokens, ChatReply, LlmBackend, RecordingBackend, ResponderBackend, ScriptedBackend,
    TranscriptRecord,
};
pub use conversation::{Conversation, Role, Turn};
pub use gateway::{LlmGateway, Rates, UsageRecord, UsageTotals};
pub use http::{HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use parse::{
    extract_sql, parse_equivalence_verdict, parse_group_selection, parse_rewrite_response,
    EquivalenceVerdict, ParsedRewrite,
};
pub use template::{render, suggestion_prompt, Bindings, SlotValue, TemplateId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),

    #[error("template slot `{0}` is not bound")]
    MissingSlot(String),

    #[error("reply contains no SQL")]
    NoSqlFound,

    #[error("transport error: {0}")]
    Transport(String),

    #[error("no scripted reply for {template} prompt {digest}")]
    ScriptMiss { template: TemplateId, digest: String },

    #[error("budget exhausted")]
    BudgetExhausted,

    #[error("llm configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}
