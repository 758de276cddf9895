use serde::{Deserialize, Serialize};

use crate::model::Tokenizer;

use super::backend::GatewayError;

pub const TRUNCATION_MARKER: &str = "[...truncated...]";

/// A piece of a prompt with a truncation priority: 1 = output-schema
/// attributes, 2 = prompt-referenced attributes, 3 = remaining attributes.
/// Lower priorities are never truncated before all higher ones are intact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPart {
    pub priority: u8,
    pub content: String,
}

impl PromptPart {
    pub fn new(priority: u8, content: impl Into<String>) -> Self {
        Self {
            priority,
            content: content.into(),
        }
    }
}

/// Fits `parts` into `limit_tokens` by middle-truncating parts in removal
/// order priority 3 then 2 (never 1). A truncated part keeps an
/// equal-token head and tail around the marker. Parts appear in the output
/// in their original order.
pub fn truncate_to_fit(
    parts: &[PromptPart],
    limit_tokens: usize,
    tok: &Tokenizer,
) -> Result<String, GatewayError> {
    let sizes: Vec<usize> = parts.iter().map(|p| tok.count(&p.content)).collect();
    let p1_total: usize = parts
        .iter()
        .zip(&sizes)
        .filter(|(p, _)| p.priority == 1)
        .map(|(_, s)| *s)
        .sum();
    if p1_total > limit_tokens {
        return Err(GatewayError::CannotFit);
    }

    // Budget is handed out in priority order (1, then 2, then 3; original
    // order within a priority), so lower priorities starve first.
    let mut remaining = limit_tokens;
    let mut rendered: Vec<Option<String>> = vec![None; parts.len()];
    for priority in 1..=3u8 {
        for (idx, part) in parts.iter().enumerate() {
            if part.priority != priority {
                continue;
            }
            let size = sizes[idx];
            if size <= remaining {
                rendered[idx] = Some(part.content.clone());
                remaining -= size;
            } else if remaining > 1 {
                // Reserve one token for the marker; split the rest evenly.
                let content_budget = remaining - 1;
                let head = content_budget / 2 + content_budget % 2;
                let tail = content_budget / 2;
                let (head_text, tail_text) = tok.head_tail(&part.content, head, tail);
                let mut text = head_text;
                text.push(' ');
                text.push_str(TRUNCATION_MARKER);
                if !tail_text.is_empty() {
                    text.push(' ');
                    text.push_str(&tail_text);
                }
                rendered[idx] = Some(text);
                remaining = 0;
            } else {
                // Nothing left for this part; drop it entirely.
                rendered[idx] = Some(String::new());
                remaining = 0;
            }
        }
    }

    Ok(rendered
        .into_iter()
        .flatten()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n"))
}
