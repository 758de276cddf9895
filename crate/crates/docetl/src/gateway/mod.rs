//! Pluggable completion and embedding backend with caching, validated
//! retries, and prompt truncation. Includes a deterministic scripted mock
//! backend for tests and offline runs.

mod backend;
mod cache;
mod core;
mod http;
mod mock;
mod truncate;
mod validate;

pub use backend::{
    Backend, CompletionRequest, CompletionResponse, GatewayError, Message, RawCompletion, Role,
};
pub use cache::LruCache;
pub use core::{Gateway, GatewayStats, ValidatedResponse};
pub use http::HttpBackend;
pub use mock::{cosine, fnv1a, hashed_bag_of_words, MockRule, ScriptedBackend, MOCK_EMBED_DIM};
pub use truncate::{truncate_to_fit, PromptPart, TRUNCATION_MARKER};
pub use validate::ValidationStatement;
