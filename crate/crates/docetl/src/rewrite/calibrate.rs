use std::collections::BTreeMap;

use crate::gateway::{CompletionRequest, Gateway};
use crate::model::{Dataset, Document, SchemaSpec, TemplateString, Value};
use crate::ops::{llm::system_prompt, OpError};

/// How many likely-duplicate pairs the calibration labels by default.
pub const DEFAULT_CALIBRATION_PAIRS: usize = 300;

/// A candidate duplicate pair and its embedding cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub similarity: f64,
    pub left: Document,
    pub right: Document,
}

fn embedding_text(doc: &Document, keys: &[String]) -> String {
    keys.iter()
        .filter_map(|k| doc.get(k))
        .map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The `n` document pairs most likely to be duplicates: all pairs ranked
/// by embedding cosine over the given keys, descending. Ties keep the
/// earlier (by index) pair first.
pub fn top_pairs_by_cosine(
    ds: &Dataset,
    embedding_keys: &[String],
    gateway: &Gateway,
    n: usize,
) -> Result<Vec<ScoredPair>, OpError> {
    if ds.len() < 2 {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = ds.iter().map(|d| embedding_text(d, embedding_keys)).collect();
    let vectors = gateway.embed(&texts)?;
    let mut pairs = Vec::new();
    for i in 0..ds.len() {
        for j in (i + 1)..ds.len() {
            pairs.push(ScoredPair {
                similarity: cosine(&vectors[i], &vectors[j]),
                left: ds.documents[i].clone(),
                right: ds.documents[j].clone(),
            });
        }
    }
    pairs.sort_by(|a, b| b.similarity.partial_cmp(&a.similarity).unwrap());
    pairs.truncate(n);
    Ok(pairs)
}

/// Calibrates an embedding-similarity blocking threshold against a target
/// recall: labels each sampled pair with the comparison prompt, then
/// returns the largest threshold that still admits at least
/// `target_recall` of the labeled positives. No positives yields 0.0
/// (blocking admits everything). Gateway errors propagate so the caller
/// can disable blocking with a warning.
pub fn calibrate_blocking_threshold(
    pairs_sample: &[ScoredPair],
    gateway: &Gateway,
    model: &str,
    comparison_prompt: &TemplateString,
    target_recall: f64,
) -> Result<f64, OpError> {
    let schema = SchemaSpec::parse_entries([("is_match", "bool")]).expect("static schema");
    let mut positives: Vec<f64> = Vec::new();
    for pair in pairs_sample {
        let bindings = BTreeMap::from([
            ("input1".to_string(), pair.left.as_value()),
            ("input2".to_string(), pair.right.as_value()),
        ]);
        let user = comparison_prompt.render(&bindings)?;
        let req = CompletionRequest::new(model, system_prompt(&schema))
            .with_user(user)
            .with_schema(schema.clone());
        let resp = gateway.complete(&req)?;
        if resp.attributes.get("is_match").and_then(Value::as_bool) == Some(true) {
            positives.push(pair.similarity);
        }
    }
    if positives.is_empty() {
        return Ok(0.0);
    }
    positives.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total = positives.len() as f64;
    for &threshold in &positives {
        let admitted = positives.iter().filter(|s| **s >= threshold).count() as f64;
        if admitted / total >= target_recall {
            return Ok(threshold);
        }
    }
    Ok(*positives.last().expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use serde_json::json;
    use std::sync::Arc;

    fn pair(similarity: f64, name: &str) -> ScoredPair {
        let doc = Document::from_value(json!({ "name": name })).unwrap();
        ScoredPair {
            similarity,
            left: doc.clone(),
            right: doc,
        }
    }

    fn prompt() -> TemplateString {
        TemplateString::new("Same entity? {{ input1.name }} vs {{ input2.name }}")
    }

    #[test]
    fn must_keep_all_four_positives() {
        // Positives at 0.9, 0.8, 0.7, 0.3: cutting the lowest keeps only
        // 3/4 = 0.75 < 0.95, so the threshold must drop to 0.3.
        let gw = Gateway::new(Arc::new(ScriptedBackend::from_pairs(&[(
            "Same entity?",
            r#"{"is_match": true}"#,
        )])));
        let pairs = vec![pair(0.9, "a"), pair(0.8, "b"), pair(0.7, "c"), pair(0.3, "d")];
        let t = calibrate_blocking_threshold(&pairs, &gw, "m", &prompt(), 0.95).unwrap();
        assert_eq!(t, 0.3);
    }

    #[test]
    fn nineteen_of_twenty_is_exactly_enough() {
        // 19 positives at 0.9, one at 0.1: 19/20 = 0.95 meets the target,
        // so 0.9 is the largest admissible threshold.
        let gw = Gateway::new(Arc::new(ScriptedBackend::from_pairs(&[(
            "Same entity?",
            r#"{"is_match": true}"#,
        )])));
        let mut pairs: Vec<ScoredPair> =
            (0..19).map(|i| pair(0.9, &format!("p{i}"))).collect();
        pairs.push(pair(0.1, "straggler"));
        let t = calibrate_blocking_threshold(&pairs, &gw, "m", &prompt(), 0.95).unwrap();
        assert_eq!(t, 0.9);
    }

    #[test]
    fn zero_positives_yield_zero() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::from_pairs(&[(
            "Same entity?",
            r#"{"is_match": false}"#,
        )])));
        let pairs = vec![pair(0.9, "a"), pair(0.8, "b")];
        let t = calibrate_blocking_threshold(&pairs, &gw, "m", &prompt(), 0.95).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn gateway_failure_aborts_calibration() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::from_pairs(&[])));
        let pairs = vec![pair(0.9, "a")];
        let err = calibrate_blocking_threshold(&pairs, &gw, "m", &prompt(), 0.95);
        assert!(matches!(err, Err(OpError::Gateway(_))));
    }

    #[test]
    fn top_pairs_rank_identical_texts_first() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::from_pairs(&[])));
        let ds = Dataset::from_json(
            r#"[{"name": "alpha beta"}, {"name": "gamma delta"}, {"name": "alpha beta"}]"#,
        )
        .unwrap();
        let pairs = top_pairs_by_cosine(&ds, &["name".to_string()], &gw, 2).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!((pairs[0].similarity - 1.0).abs() < 1e-9);
        assert_eq!(pairs[0].left, pairs[0].right);
    }
}
