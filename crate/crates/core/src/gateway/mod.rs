//! Chat-completion backends, request digests, and token-budget admission.

mod chat;
mod live;
mod replay;
mod tokens;

pub use chat::{
    canonical_digest, is_digest, ChatMessage, ChatProvider, ChatRequest, ChatResponse, ChatRole, CountingProvider,
    FnProvider, GatewayError, ProviderKind, RequestError, DEFAULT_TEMPERATURE,
};
pub use live::{LiveConfig, LiveProvider, RetryPolicy, DEFAULT_BASE_URL, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use replay::{encode_record, RecordingProvider, ReplayProvider, ReplayStore};
pub use tokens::{
    admit_contract, estimate_tokens, segment_source, top_level_declarations, Admission, BudgetError, Declaration,
    DeclarationKind, Rejection, SourceSegment, TokenBudget, DEFAULT_ORCHESTRATION_RESERVE, GPT35_CONTEXT_LIMIT,
    GPT4_CONTEXT_LIMIT,
};
