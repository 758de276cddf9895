use std::collections::BTreeMap;

use crate::gateway::CompletionRequest;
use crate::model::{Dataset, Document, SchemaSpec, Value};

use super::def::{BlockingConfig, OperationDef, INVALID_FLAG};
use super::llm::{complete_with_gleaning, system_prompt};
use super::{ExecContext, OpError};

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Root at the smaller index so cluster identity is stable.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

pub(crate) fn comparison_schema() -> SchemaSpec {
    SchemaSpec::parse_entries([("is_match", "bool")]).expect("static schema parses")
}

/// Text embedded for blocking: the values of `embedding_keys` (or the given
/// defaults when unset) rendered and joined with single spaces.
pub(crate) fn embedding_text(doc: &Document, keys: &[String]) -> String {
    let mut parts = Vec::new();
    for key in keys {
        if let Some(v) = doc.get(key) {
            parts.push(match v {
                Value::String(s) => s.clone(),
                other => crate::model::canonical_json(other),
            });
        }
    }
    parts.join(" ")
}

pub(crate) fn pair_blocked_in(
    blocking: &BlockingConfig,
    similarity: f64,
    left: &Document,
    right: &Document,
) -> bool {
    if similarity >= blocking.threshold {
        return true;
    }
    let bindings = BTreeMap::from([
        ("left".to_string(), left.as_value()),
        ("right".to_string(), right.as_value()),
    ]);
    blocking.code_rules.iter().any(|rule| rule.evaluate(&bindings))
}

/// Canonicalizes entity references: LLM pairwise comparisons (restricted by
/// blocking) feed a union-find, and each multi-member cluster gets one
/// resolution call whose output overwrites the schema attributes on every
/// member. Document order is unchanged.
pub fn exec_resolve(op: &OperationDef, ds: &Dataset, ctx: &ExecContext) -> Result<Dataset, OpError> {
    let comparison = op
        .comparison_prompt
        .as_ref()
        .ok_or_else(|| OpError::MissingField {
            op: op.name.clone(),
            field: "comparison_prompt",
        })?;
    let resolution = op
        .resolution_prompt
        .as_ref()
        .ok_or_else(|| OpError::MissingField {
            op: op.name.clone(),
            field: "resolution_prompt",
        })?;
    let schema = op.output_schema();
    if schema.is_empty() {
        return Err(OpError::MissingField {
            op: op.name.clone(),
            field: "output.schema",
        });
    }
    for (index, doc) in ds.iter().enumerate() {
        for key in schema.attribute_names() {
            if !doc.contains_key(key) {
                return Err(OpError::MissingKey {
                    op: op.name.clone(),
                    key: key.to_string(),
                    index,
                });
            }
        }
    }
    let model = ctx.model_for(op);
    let n = ds.len();

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    match &op.blocking {
        None => {
            for i in 0..n {
                for j in i + 1..n {
                    candidates.push((i, j));
                }
            }
        }
        Some(blocking) => {
            let keys: Vec<String> = if blocking.embedding_keys.is_empty() {
                schema.attribute_names().map(str::to_string).collect()
            } else {
                blocking.embedding_keys.clone()
            };
            let texts: Vec<String> = ds
                .iter()
                .map(|d| embedding_text(d, &keys))
                .collect();
            let vectors = if n == 0 {
                Vec::new()
            } else {
                ctx.gateway.embed(&texts)?
            };
            for i in 0..n {
                for j in i + 1..n {
                    let sim = crate::gateway::cosine(&vectors[i], &vectors[j]);
                    if pair_blocked_in(blocking, sim, &ds.documents[i], &ds.documents[j]) {
                        candidates.push((i, j));
                    }
                }
            }
        }
    }

    let verdicts = ctx.gateway.run_concurrently(candidates.clone(), |(i, j)| {
        let bindings = BTreeMap::from([
            ("input1".to_string(), ds.documents[i].as_value()),
            ("input2".to_string(), ds.documents[j].as_value()),
        ]);
        let req = CompletionRequest::new(
            model.clone(),
            "You are judging whether two records refer to the same entity. \
             Respond with a single JSON object with these attributes: is_match: bool.",
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

    let mut uf = UnionFind::new(n);
    for ((i, j), verdict) in candidates.into_iter().zip(verdicts) {
        if verdict? {
            uf.union(i, j);
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        clusters.entry(uf.find(i)).or_default().push(i);
    }

    let mut out: Vec<Document> = ds.iter().cloned().collect();
    let multi: Vec<&Vec<usize>> = clusters.values().filter(|m| m.len() > 1).collect();
    let resolutions = ctx.gateway.run_concurrently(multi.clone(), |members| {
        let inputs = Value::Array(members.iter().map(|&i| ds.documents[i].as_value()).collect());
        let bindings = BTreeMap::from([("inputs".to_string(), inputs)]);
        let req = CompletionRequest::new(model.clone(), system_prompt(&schema))
            .with_user(resolution.render(&bindings)?)
            .with_schema(schema.clone());
        complete_with_gleaning(ctx, req, &op.validate, None)
    });
    for (members, resolved) in multi.into_iter().zip(resolutions) {
        let resolved = resolved?;
        for &i in members {
            if resolved.valid {
                for key in schema.attribute_names() {
                    if let Some(v) = resolved.response.attributes.get(key) {
                        out[i].insert(key, v.clone());
                    }
                }
            } else {
                out[i].insert(INVALID_FLAG, Value::Bool(true));
            }
        }
    }
    Ok(Dataset::new(out))
}
