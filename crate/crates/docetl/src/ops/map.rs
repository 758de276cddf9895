use std::collections::BTreeMap;

use crate::gateway::CompletionRequest;
use crate::model::{Dataset, Document, Value};

use super::def::{OperationDef, INVALID_FLAG};
use super::llm::{complete_with_gleaning, system_prompt};
use super::{ExecContext, OpError};

/// Applies the map prompt to every document independently and merges the
/// structured reply into it. Documents whose retries were exhausted are
/// carried through flagged `_docetl_invalid`.
pub fn exec_map(op: &OperationDef, ds: &Dataset, ctx: &ExecContext) -> Result<Dataset, OpError> {
    let prompt = op.prompt.as_ref().ok_or_else(|| OpError::MissingField {
        op: op.name.clone(),
        field: "prompt",
    })?;
    let schema = op.output_schema();
    let model = ctx.model_for(op);
    let system = system_prompt(&schema);

    let results = ctx.gateway.run_concurrently(
        ds.iter().collect::<Vec<_>>(),
        |doc: &Document| -> Result<Document, OpError> {
            let bindings = BTreeMap::from([("input".to_string(), doc.as_value())]);
            let req = CompletionRequest::new(model.clone(), system.clone())
                .with_user(prompt.render(&bindings)?)
                .with_schema(schema.clone());
            let out = complete_with_gleaning(ctx, req, &op.validate, op.gleaning.as_ref())?;
            let mut merged = doc.clone();
            merged.merge(&out.response.attributes);
            if !out.valid {
                merged.insert(INVALID_FLAG, Value::Bool(true));
            }
            for key in &op.drop_keys {
                merged.remove(key);
            }
            Ok(merged)
        },
    );
    Ok(Dataset::new(results.into_iter().collect::<Result<_, _>>()?))
}

/// Runs each projection prompt independently (fanning out across documents
/// and projections alike) and merges the replies in projection order.
/// Projection schemas must not overlap.
pub fn exec_parallel_map(
    op: &OperationDef,
    ds: &Dataset,
    ctx: &ExecContext,
) -> Result<Dataset, OpError> {
    if op.prompts.is_empty() {
        return Err(OpError::MissingField {
            op: op.name.clone(),
            field: "prompts",
        });
    }
    let mut seen: Vec<&str> = Vec::new();
    for projection in &op.prompts {
        for name in projection.output.schema.attribute_names() {
            if seen.contains(&name) {
                return Err(OpError::BadConfig {
                    op: op.name.clone(),
                    reason: format!("projections overlap on attribute '{name}'"),
                });
            }
            seen.push(name);
        }
    }
    let model = ctx.model_for(op);

    let mut tasks = Vec::new();
    for (doc_idx, doc) in ds.iter().enumerate() {
        for projection in &op.prompts {
            tasks.push((doc_idx, doc, projection));
        }
    }
    let results = ctx.gateway.run_concurrently(tasks, |(doc_idx, doc, projection)| {
        let bindings = BTreeMap::from([("input".to_string(), doc.as_value())]);
        let schema = projection.output.schema.clone();
        let req = CompletionRequest::new(model.clone(), system_prompt(&schema))
            .with_user(projection.prompt.render(&bindings)?)
            .with_schema(schema);
        Ok::<_, OpError>((doc_idx, ctx.gateway.complete(&req)?))
    });

    let mut merged: Vec<Document> = ds.iter().cloned().collect();
    for result in results {
        let (doc_idx, response) = result?;
        merged[doc_idx].merge(&response.attributes);
    }
    for doc in &mut merged {
        // Validation statements see the fully merged projection output;
        // there is no single request to retry, so failures only flag.
        let bindings = BTreeMap::from([("output".to_string(), doc.as_value())]);
        if op.validate.iter().any(|v| !v.evaluate(&bindings)) {
            doc.insert(INVALID_FLAG, Value::Bool(true));
        }
        for key in &op.drop_keys {
            doc.remove(key);
        }
    }
    Ok(Dataset::new(merged))
}

/// Keeps exactly the documents for which the single boolean output
/// attribute comes back true. The boolean itself is not added to surviving
/// documents.
pub fn exec_filter(op: &OperationDef, ds: &Dataset, ctx: &ExecContext) -> Result<Dataset, OpError> {
    let prompt = op.prompt.as_ref().ok_or_else(|| OpError::MissingField {
        op: op.name.clone(),
        field: "prompt",
    })?;
    let schema = op.output_schema();
    let decision_key = {
        let names: Vec<&str> = schema.attribute_names().collect();
        match names.as_slice() {
            [single] if schema.entries[*single] == crate::model::TypeExpr::Bool => {
                single.to_string()
            }
            _ => {
                return Err(OpError::BadConfig {
                    op: op.name.clone(),
                    reason: "filter output schema must be exactly one boolean attribute".into(),
                })
            }
        }
    };
    let model = ctx.model_for(op);
    let system = system_prompt(&schema);

    let results = ctx.gateway.run_concurrently(
        ds.iter().collect::<Vec<_>>(),
        |doc: &Document| -> Result<Option<Document>, OpError> {
            let bindings = BTreeMap::from([("input".to_string(), doc.as_value())]);
            let req = CompletionRequest::new(model.clone(), system.clone())
                .with_user(prompt.render(&bindings)?)
                .with_schema(schema.clone());
            let out = complete_with_gleaning(ctx, req, &op.validate, op.gleaning.as_ref())?;
            if !out.valid {
                let mut kept = doc.clone();
                kept.insert(INVALID_FLAG, Value::Bool(true));
                return Ok(Some(kept));
            }
            let keep = out
                .response
                .attributes
                .get(&decision_key)
                .and_then(Value::as_bool)
                .unwrap_or(false);
            Ok(if keep { Some(doc.clone()) } else { None })
        },
    );
    let mut kept = Vec::new();
    for result in results {
        if let Some(doc) = result? {
            kept.push(doc);
        }
    }
    Ok(Dataset::new(kept))
}
