use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Dataset, Document, Tokenizer, Value};

/// Observed per-operation selectivities (output/input document ratio), in
/// pipeline order, used to size optimization samples upstream of an
/// optimization target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectivityLedger {
    pub entries: Vec<(String, f64)>,
}

impl SelectivityLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: impl Into<String>, selectivity: f64) {
        self.entries.push((op.into(), selectivity));
    }

    pub fn product(&self) -> f64 {
        self.entries.iter().map(|(_, s)| s).product()
    }
}

/// The sample size needed at the pipeline head so that roughly `base`
/// documents survive the recorded selectivities: ceil(base / Π s).
/// A zero (or negative) selectivity would starve sampling entirely.
pub fn required_sample_size(
    base: usize,
    ledger: &SelectivityLedger,
) -> Result<usize, ZeroSelectivity> {
    if let Some((op, s)) = ledger.entries.iter().find(|(_, s)| *s <= 0.0) {
        return Err(ZeroSelectivity {
            op: op.clone(),
            selectivity: *s,
        });
    }
    Ok((base as f64 / ledger.product()).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("operation '{op}' has selectivity {selectivity}; cannot size a sample through it")]
pub struct ZeroSelectivity {
    pub op: String,
    pub selectivity: f64,
}

/// A document's sampling weight: the token count of its largest string
/// attribute, floored at 1 so no document is unreachable.
pub fn document_weight(doc: &Document, tokenizer: &Tokenizer) -> usize {
    doc.attributes
        .values()
        .filter_map(Value::as_str)
        .map(|s| tokenizer.count(s))
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Draws `size` documents without replacement, each selection weighted by
/// document size. Deterministic under the seed.
pub fn draw_sample(ds: &Dataset, size: usize, seed: u64, tokenizer: &Tokenizer) -> Dataset {
    let size = size.min(ds.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<(usize, f64)> = ds
        .iter()
        .enumerate()
        .map(|(i, d)| (i, document_weight(d, tokenizer) as f64))
        .collect();
    let mut picked = Vec::with_capacity(size);
    for _ in 0..size {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut x = rng.gen_range(0.0..total);
        let mut chosen = remaining.len() - 1;
        for (pos, (_, w)) in remaining.iter().enumerate() {
            if x < *w {
                chosen = pos;
                break;
            }
            x -= w;
        }
        let (idx, _) = remaining.remove(chosen);
        picked.push(ds.documents[idx].clone());
    }
    Dataset::new(picked)
}
