use std::collections::BTreeMap;

use crate::gateway::CompletionRequest;
use crate::model::{Dataset, Document, Value};

use super::def::OperationDef;
use super::resolve::{comparison_schema, embedding_text, pair_blocked_in};
use super::{ExecContext, OpError};

/// Inner join of two datasets on an LLM pairwise judgment. Matched pairs
/// produce one merged document each (left attributes first; colliding
/// right attribute names gain a `_right` suffix), ordered by left index
/// then right index.
pub fn exec_equijoin(
    op: &OperationDef,
    left: &Dataset,
    right: &Dataset,
    ctx: &ExecContext,
) -> Result<Dataset, OpError> {
    let comparison = op
        .comparison_prompt
        .as_ref()
        .ok_or_else(|| OpError::MissingField {
            op: op.name.clone(),
            field: "comparison_prompt",
        })?;
    let model = ctx.model_for(op);

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    match &op.blocking {
        None => {
            for i in 0..left.len() {
                for j in 0..right.len() {
                    candidates.push((i, j));
                }
            }
        }
        Some(blocking) => {
            if blocking.embedding_keys.is_empty() {
                return Err(OpError::BadConfig {
                    op: op.name.clone(),
                    reason: "equijoin blocking requires embedding_keys".into(),
                });
            }
            let embed_side = |ds: &Dataset| -> Result<Vec<Vec<f64>>, OpError> {
                if ds.is_empty() {
                    return Ok(Vec::new());
                }
                let texts: Vec<String> = ds
                    .iter()
                    .map(|d| embedding_text(d, &blocking.embedding_keys))
                    .collect();
                Ok(ctx.gateway.embed(&texts)?)
            };
            let left_vecs = embed_side(left)?;
            let right_vecs = embed_side(right)?;
            for i in 0..left.len() {
                for j in 0..right.len() {
                    let sim = crate::gateway::cosine(&left_vecs[i], &right_vecs[j]);
                    if pair_blocked_in(blocking, sim, &left.documents[i], &right.documents[j]) {
                        candidates.push((i, j));
                    }
                }
            }
        }
    }

    let verdicts = ctx.gateway.run_concurrently(candidates.clone(), |(i, j)| {
        let bindings = BTreeMap::from([
            ("left".to_string(), left.documents[i].as_value()),
            ("right".to_string(), right.documents[j].as_value()),
        ]);
        let req = CompletionRequest::new(
            model.clone(),
            "You are judging whether two records should join. Respond with a \
             single JSON object with these attributes: is_match: bool.",
        )
        .with_user(comparison.render(&bindings)?)
        .with_schema(comparison_schema());
        let resp = ctx.gateway.complete(&req)?;
        Ok::<bool, OpError>(
            resp.attributes
                .get("is_match")
                .and_then(Value::as_bool)
                .unwrap_or(false),
        )
    });

    let mut out = Vec::new();
    for ((i, j), verdict) in candidates.into_iter().zip(verdicts) {
        if verdict? {
            out.push(merge_pair(&left.documents[i], &right.documents[j]));
        }
    }
    Ok(Dataset::new(out))
}

fn merge_pair(left: &Document, right: &Document) -> Document {
    let mut merged = left.clone();
    for (k, v) in &right.attributes {
        if left.contains_key(k) {
            merged.insert(format!("{k}_right"), v.clone());
        } else {
            merged.insert(k.clone(), v.clone());
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ScriptedBackend};
    use crate::model::TemplateString;
    use crate::ops::def::{BlockingConfig, OperatorKind};
    use serde_json::json;
    use std::sync::Arc;

    fn join_op() -> OperationDef {
        let mut op = OperationDef::new("link", OperatorKind::Equijoin);
        op.comparison_prompt = Some(TemplateString::new(
            "Join? L={{ left.id }} R={{ right.ref }}",
        ));
        op
    }

    fn side(key: &str, values: &[&str]) -> Dataset {
        Dataset::new(
            values
                .iter()
                .map(|v| Document::from_value(json!({key: v})).unwrap())
                .collect(),
        )
    }

    #[test]
    fn join_matches_exhaustive_pairwise_oracle() {
        // Scripted verdict: match iff the id and ref agree case-insensitively.
        let lefts = ["A", "B", "C"];
        let rights = ["a", "b", "x"];
        let mut rules = Vec::new();
        for l in lefts {
            for r in rights {
                let verdict = l.eq_ignore_ascii_case(r);
                rules.push((format!("L={l} R={r}"), format!("{{\"is_match\": {verdict}}}")));
            }
        }
        let pairs: Vec<(&str, &str)> = rules.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let backend = Arc::new(ScriptedBackend::from_pairs(&pairs));
        let gw = Gateway::new(backend.clone());
        let ctx = ExecContext::new(&gw);
        let out = exec_equijoin(&join_op(), &side("id", &lefts), &side("ref", &rights), &ctx)
            .unwrap();

        // Oracle: every pair compared, matches in (left, right) order.
        assert_eq!(backend.calls(), 9);
        assert_eq!(
            serde_json::to_value(&out).unwrap(),
            json!([
                {"id": "A", "ref": "a"},
                {"id": "B", "ref": "b"},
            ])
        );
    }

    #[test]
    fn colliding_attribute_gains_right_suffix() {
        let backend = Arc::new(ScriptedBackend::from_pairs(&[("Join?", r#"{"is_match": true}"#)]));
        let gw = Gateway::new(backend);
        let ctx = ExecContext::new(&gw);
        let left = Dataset::new(vec![
            Document::from_value(json!({"id": "A", "name": "left-name"})).unwrap(),
        ]);
        let right = Dataset::new(vec![
            Document::from_value(json!({"ref": "a", "name": "right-name"})).unwrap(),
        ]);
        let out = exec_equijoin(&join_op(), &left, &right, &ctx).unwrap();
        assert_eq!(
            serde_json::to_value(&out).unwrap(),
            json!([{
                "id": "A",
                "name": "left-name",
                "ref": "a",
                "name_right": "right-name",
            }])
        );
    }

    #[test]
    fn blocking_limits_comparisons_to_similar_pairs() {
        let backend = Arc::new(ScriptedBackend::from_pairs(&[("Join?", r#"{"is_match": true}"#)]));
        let gw = Gateway::new(backend.clone());
        let ctx = ExecContext::new(&gw);
        let mut op = join_op();
        op.comparison_prompt = Some(TemplateString::new(
            "Join? L={{ left.text }} R={{ right.text }}",
        ));
        op.blocking = Some(BlockingConfig {
            embedding_keys: vec!["text".into()],
            threshold: 0.5,
            code_rules: vec![],
        });
        let left = side("text", &["apple pie recipe", "quantum physics"]);
        let right = side("text", &["apple pie recipe", "gardening tips"]);
        let out = exec_equijoin(&op, &left, &right, &ctx).unwrap();
        assert_eq!(backend.calls(), 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out.documents[0].get("text"), Some(&json!("apple pie recipe")));
    }
}
