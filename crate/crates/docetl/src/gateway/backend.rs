use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{canonical_json, Document, SchemaSpec, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    User,
    Assistant,
    ValidatorFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn validator_feedback(content: impl Into<String>) -> Self {
        Self {
            role: Role::ValidatorFeedback,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system: String,
    pub messages: Vec<Message>,
    pub output_schema: SchemaSpec,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, system: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            system: system.into(),
            messages: Vec::new(),
            output_schema: SchemaSpec::new(),
        }
    }

    pub fn with_user(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message::user(content));
        self
    }

    pub fn with_schema(mut self, schema: SchemaSpec) -> Self {
        self.output_schema = schema;
        self
    }

    /// Everything the model would see, concatenated. Scripted backends
    /// match their rules against this text.
    pub fn rendered_prompt(&self) -> String {
        let mut out = self.system.clone();
        for msg in &self.messages {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&msg.content);
        }
        out
    }

    /// A stable cache key: identical requests always hash identically.
    pub fn cache_key(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update([0]);
        hasher.update(self.system.as_bytes());
        for msg in &self.messages {
            hasher.update([0]);
            hasher.update(format!("{:?}", msg.role).as_bytes());
            hasher.update([0]);
            hasher.update(msg.content.as_bytes());
        }
        let schema: serde_json::Value =
            serde_json::to_value(&self.output_schema).expect("schema serializes");
        hasher.update([0]);
        hasher.update(canonical_json(&schema).as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Raw output of one backend invocation, before parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Structured output parsed from the reply.
    pub attributes: Document,
    pub raw: String,
    pub token_usage: (u64, u64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("response is not parseable as a JSON object: {0}")]
    Parse(String),
    #[error("response does not conform to output schema: {}",
        .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Schema(Vec<Violation>),
    #[error("priority-1 prompt parts alone exceed the token limit")]
    CannotFit,
    #[error("embed called with no texts")]
    EmptyEmbed,
}

/// A completion/embedding provider. Implementations must be pure functions
/// of the request for reproducible runs.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, GatewayError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Extracts the first balanced `{...}` from a reply and parses it as a JSON
/// object. Works with any chat backend regardless of surrounding prose.
pub fn parse_structured(raw: &str) -> Result<Document, GatewayError> {
    let start = raw
        .find('{')
        .ok_or_else(|| GatewayError::Parse(format!("no '{{' in reply: {raw:.80}")))?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in raw[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    let candidate = &raw[start..start + offset + c.len_utf8()];
                    let value: serde_json::Value = serde_json::from_str(candidate)
                        .map_err(|e| GatewayError::Parse(e.to_string()))?;
                    return Document::from_value(value)
                        .ok_or_else(|| GatewayError::Parse("not a JSON object".into()));
                }
            }
            _ => {}
        }
    }
    Err(GatewayError::Parse("unbalanced braces in reply".into()))
}
