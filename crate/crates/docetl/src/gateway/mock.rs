use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, CompletionRequest, GatewayError, RawCompletion};

pub const MOCK_EMBED_DIM: usize = 64;

/// One scripted rule: a substring or regex matched against the rendered
/// prompt, and the raw reply to return. First matching rule wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#match: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    pub respond: String,
}

/// A deterministic scripted backend: a pure function of the request.
/// Records every request so tests can count and inspect backend traffic.
pub struct ScriptedBackend {
    rules: Vec<(MockRule, Option<Regex>)>,
    requests: Mutex<Vec<CompletionRequest>>,
    /// Artificial delay per call; lets tests exercise call coalescing.
    pub delay: Option<std::time::Duration>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, String> {
        let rules = rules
            .into_iter()
            .map(|rule| {
                let compiled = match &rule.regex {
                    Some(pattern) => Some(
                        Regex::new(pattern).map_err(|e| format!("bad rule regex: {e}"))?,
                    ),
                    None => None,
                };
                Ok((rule, compiled))
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Self {
            rules,
            requests: Mutex::new(Vec::new()),
            delay: None,
        })
    }

    /// Loads a YAML or JSON rules file: a list of
    /// `{match: <substring> | regex: <pattern>, respond: <raw reply>}`.
    pub fn from_rules_file(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read mock rules {}: {e}", path.display()))?;
        let rules: Vec<MockRule> =
            serde_yaml::from_str(&text).map_err(|e| format!("bad mock rules file: {e}"))?;
        Self::new(rules)
    }

    /// Convenience for tests: substring rules only.
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|(m, r)| MockRule {
                    r#match: Some(m.to_string()),
                    regex: None,
                    respond: r.to_string(),
                })
                .collect(),
        )
        .expect("substring rules always compile")
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, GatewayError> {
        self.requests.lock().unwrap().push(req.clone());
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        let prompt = req.rendered_prompt();
        for (rule, compiled) in &self.rules {
            let hit = match (&rule.r#match, compiled) {
                (Some(substr), _) => prompt.contains(substr.as_str()),
                (None, Some(regex)) => regex.is_match(&prompt),
                (None, None) => false,
            };
            if hit {
                return Ok(RawCompletion {
                    text: rule.respond.clone(),
                    input_tokens: prompt.split_whitespace().count() as u64,
                    output_tokens: rule.respond.split_whitespace().count() as u64,
                });
            }
        }
        Err(GatewayError::Backend(format!(
            "no mock rule matched prompt: {:.120}",
            prompt
        )))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyEmbed);
        }
        Ok(texts.iter().map(|t| hashed_bag_of_words(t)).collect())
    }
}

/// Dimension-64 hashed bag-of-words embedding: token -> FNV-1a hash mod 64,
/// count occurrences, L2-normalize. Deterministic across platforms.
pub fn hashed_bag_of_words(text: &str) -> Vec<f64> {
    let mut counts = vec![0.0f64; MOCK_EMBED_DIM];
    for token in text.split_whitespace() {
        counts[fnv1a(token) as usize % MOCK_EMBED_DIM] += 1.0;
    }
    let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for c in counts.iter_mut() {
            *c /= norm;
        }
    } else {
        // Empty text maps to a fixed unit vector.
        counts[0] = 1.0;
    }
    counts
}

pub fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in s.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
