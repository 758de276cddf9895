use serde::{Deserialize, Serialize};

/// Deterministic, backend-free token counting. Whitespace mode counts
/// maximal non-whitespace runs; `CharsPerToken(n)` counts `ceil(len/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Whitespace,
    CharsPerToken(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub mode: TokenizerMode,
    /// Model context limit in tokens.
    pub context_limit: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            mode: TokenizerMode::Whitespace,
            context_limit: 8192,
        }
    }
}

impl Tokenizer {
    pub fn whitespace(context_limit: usize) -> Self {
        Self {
            mode: TokenizerMode::Whitespace,
            context_limit,
        }
    }

    pub fn chars_per_token(n: usize, context_limit: usize) -> Self {
        Self {
            mode: TokenizerMode::CharsPerToken(n),
            context_limit,
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match self.mode {
            TokenizerMode::Whitespace => text.split_whitespace().count(),
            TokenizerMode::CharsPerToken(n) => text.chars().count().div_ceil(n.max(1)),
        }
    }

    /// Splits `text` into maximal runs of at most `max_tokens` tokens, in
    /// order. Whitespace mode rejoins tokens with single spaces, so the
    /// token sequence is preserved exactly across chunks.
    pub fn chunk(&self, text: &str, max_tokens: usize) -> Vec<String> {
        let max_tokens = max_tokens.max(1);
        match self.mode {
            TokenizerMode::Whitespace => {
                let tokens: Vec<&str> = text.split_whitespace().collect();
                if tokens.is_empty() {
                    return vec![String::new()];
                }
                tokens
                    .chunks(max_tokens)
                    .map(|chunk| chunk.join(" "))
                    .collect()
            }
            TokenizerMode::CharsPerToken(n) => {
                let chars: Vec<char> = text.chars().collect();
                if chars.is_empty() {
                    return vec![String::new()];
                }
                chars
                    .chunks(max_tokens * n.max(1))
                    .map(|c| c.iter().collect())
                    .collect()
            }
        }
    }

    /// Keeps the first `head` and last `tail` tokens, dropping the middle.
    pub fn head_tail(&self, text: &str, head: usize, tail: usize) -> (String, String) {
        match self.mode {
            TokenizerMode::Whitespace => {
                let tokens: Vec<&str> = text.split_whitespace().collect();
                let head_part = tokens[..head.min(tokens.len())].join(" ");
                let tail_start = tokens.len().saturating_sub(tail);
                let tail_part = tokens[tail_start..].join(" ");
                (head_part, tail_part)
            }
            TokenizerMode::CharsPerToken(n) => {
                let chars: Vec<char> = text.chars().collect();
                let n = n.max(1);
                let head_chars = (head * n).min(chars.len());
                let tail_chars = (tail * n).min(chars.len());
                let head_part: String = chars[..head_chars].iter().collect();
                let tail_part: String = chars[chars.len() - tail_chars..].iter().collect();
                (head_part, tail_part)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitespace_counts_runs() {
        let tok = Tokenizer::whitespace(100);
        assert_eq!(tok.count("a b  c"), 3);
        assert_eq!(tok.count(""), 0);
        assert_eq!(tok.count("  \t\n "), 0);
    }

    #[test]
    fn chars_per_token_is_ceil() {
        let tok = Tokenizer::chars_per_token(4, 100);
        let text = "x".repeat(1000);
        // Arithmetic oracle: ceil(1000 / 4) = 250.
        assert_eq!(tok.count(&text), 250);
        assert_eq!(tok.count("abcde"), 2);
    }

    #[test]
    fn chunk_preserves_token_sequence() {
        let tok = Tokenizer::whitespace(100);
        let text = (0..25).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let chunks = tok.chunk(&text, 10);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks.join(" "), text);
    }

    proptest! {
        #[test]
        fn count_is_subadditive(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
            let tok = Tokenizer::whitespace(100);
            let joined = format!("{a}{b}");
            prop_assert!(tok.count(&joined) <= tok.count(&a) + tok.count(&b) + 1);
        }

        #[test]
        fn chars_mode_subadditive(a in ".{0,40}", b in ".{0,40}") {
            let tok = Tokenizer::chars_per_token(4, 100);
            let joined = format!("{a}{b}");
            prop_assert!(tok.count(&joined) <= tok.count(&a) + tok.count(&b) + 1);
        }
    }
}
