use serde_json::json;

use super::backend::{Backend, CompletionRequest, GatewayError, RawCompletion, Role};

pub const API_KEY_ENV: &str = "DOCETL_API_KEY";
pub const BASE_URL_ENV: &str = "DOCETL_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Chat-completions backend speaking the de-facto OpenAI schema. The bearer
/// token comes from `DOCETL_API_KEY`, the base URL from `DOCETL_BASE_URL`.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    embedding_model: String,
}

impl HttpBackend {
    pub fn from_env() -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Backend(format!("{API_KEY_ENV} is not set")))?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self {
            base_url,
            api_key,
            embedding_model: "text-embedding-3-small".to_string(),
        })
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}{path}", self.base_url.trim_end_matches('/'));
        let response = ureq::post(&url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string())
            .map_err(|e| GatewayError::Backend(e.to_string()))?;
        let text = response
            .into_string()
            .map_err(|e| GatewayError::Backend(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Backend(e.to_string()))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        let mut messages = Vec::new();
        if !req.system.is_empty() {
            messages.push(json!({"role": "system", "content": req.system}));
        }
        for msg in &req.messages {
            // Validator feedback rides as a user turn on the wire.
            let role = match msg.role {
                Role::User | Role::ValidatorFeedback => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": msg.content}));
        }
        let body = json!({"model": req.model, "messages": messages});
        let reply = self.post("/chat/completions", &body)?;
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Backend("malformed chat response".into()))?
            .to_string();
        Ok(RawCompletion {
            text,
            input_tokens: reply["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: reply["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyEmbed);
        }
        let body = json!({"model": self.embedding_model, "input": texts});
        let reply = self.post("/embeddings", &body)?;
        let data = reply["data"]
            .as_array()
            .ok_or_else(|| GatewayError::Backend("malformed embeddings response".into()))?;
        let mut out = Vec::with_capacity(data.len());
        for item in data {
            let vector: Vec<f64> = item["embedding"]
                .as_array()
                .ok_or_else(|| GatewayError::Backend("malformed embedding vector".into()))?
                .iter()
                .filter_map(|v| v.as_f64())
                .collect();
            out.push(vector);
        }
        Ok(out)
    }
}
