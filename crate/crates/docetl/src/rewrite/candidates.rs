use serde::{Deserialize, Serialize};

use crate::ops::{GatherSection, GatherSubsection, PeripheralSpec};

/// Placeholder content key used by generated gather configurations before
/// the chunk attribute name is known. The chunking rewrite substitutes the
/// real `<split_key>_chunk` attribute when it instantiates a candidate.
pub const CHUNK_CONTENT_PLACEHOLDER: &str = "__chunk_content__";

/// One point in the chunking sweep: a chunk size plus the peripheral
/// context to gather around each chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkCandidate {
    pub chunk_tokens: usize,
    pub gather: PeripheralSpec,
}

fn subsection(count: usize) -> GatherSubsection {
    GatherSubsection {
        count: Some(count),
        content_key: CHUNK_CONTENT_PLACEHOLDER.to_string(),
    }
}

fn config(previous_full: usize, next_full: usize) -> PeripheralSpec {
    PeripheralSpec {
        previous: (previous_full > 0).then(|| GatherSection {
            head: None,
            middle: None,
            tail: Some(subsection(previous_full)),
        }),
        next: (next_full > 0).then(|| GatherSection {
            head: Some(subsection(next_full)),
            middle: None,
            tail: None,
        }),
    }
}

/// The chunking parameter sweep: chunk sizes at 20/40/60/80% of the
/// context limit, each with three base gather configurations (no context,
/// one previous chunk, one previous plus one next) plus — when documents
/// span multiple chunks — one expanded configuration whose peripheral
/// counts grow with the square root of the document/chunk ratio, capped at
/// 5 previous and 2 next chunks.
pub fn gen_chunk_candidates(context_limit: usize, avg_doc_tokens: usize) -> Vec<ChunkCandidate> {
    assert!(context_limit > 0, "context_limit must be positive");
    let mut out = Vec::new();
    for k in 1..=4usize {
        // round(k/5 × limit) in exact integer arithmetic.
        let chunk_tokens = ((k * context_limit + 2) / 5).max(1);
        let mut configs = vec![config(0, 0), config(1, 0), config(1, 1)];
        let ratio = avg_doc_tokens as f64 / chunk_tokens as f64;
        if ratio > 1.0 {
            let previous_full = (ratio.sqrt().floor() as usize).min(5);
            let next_full = (((ratio.sqrt()) / 2.0).floor() as usize).min(2);
            let expanded = config(previous_full, next_full);
            if !configs.contains(&expanded) {
                configs.push(expanded);
            }
        }
        out.extend(configs.into_iter().map(|gather| ChunkCandidate {
            chunk_tokens,
            gather,
        }));
    }
    out
}

/// Fold batch-size candidates for a reduce: 20% to 100% of the maximum
/// number of items fitting the context limit, deduplicated and at least 1.
pub fn gen_fold_batch_candidates(context_limit: usize, avg_item_tokens: usize) -> Vec<usize> {
    assert!(avg_item_tokens > 0, "avg_item_tokens must be positive");
    let max_items = (context_limit / avg_item_tokens).max(1);
    let mut out = Vec::new();
    for k in 1..=5usize {
        // ceil(k/5 × max_items) in exact integer arithmetic.
        let candidate = (k * max_items).div_ceil(5).max(1);
        if !out.contains(&candidate) {
            out.push(candidate);
        }
    }
    out
}
