use std::collections::BTreeMap;

use crate::gateway::CompletionRequest;
use crate::model::{canonical_json, Dataset, Document, Value};

use super::def::{OperationDef, GLOBAL_REDUCE_KEY, INVALID_FLAG};
use super::llm::{complete_with_gleaning, system_prompt};
use super::{ExecContext, OpError};

/// Aggregates each group into one document. Small groups get a single call
/// over all members; larger ones fold batch by batch when
/// `fold_batch_size` is set, threading an optional scratchpad string
/// between batches. Groups appear in first-encounter order.
pub fn exec_reduce(op: &OperationDef, ds: &Dataset, ctx: &ExecContext) -> Result<Dataset, OpError> {
    let global = op.reduce_key.is_empty()
        || op.reduce_key == [GLOBAL_REDUCE_KEY.to_string()];
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&Document>> = BTreeMap::new();
    for (index, doc) in ds.iter().enumerate() {
        let key = if global {
            GLOBAL_REDUCE_KEY.to_string()
        } else {
            let mut values = Vec::new();
            for k in &op.reduce_key {
                let v = doc.get(k).ok_or_else(|| OpError::MissingKey {
                    op: op.name.clone(),
                    key: k.clone(),
                    index,
                })?;
                values.push(v.clone());
            }
            canonical_json(&Value::Array(values))
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(doc);
    }

    let tasks: Vec<Vec<&Document>> = order.iter().map(|k| groups[k].clone()).collect();
    let results = ctx
        .gateway
        .run_concurrently(tasks, |members| reduce_group(op, &members, ctx, global));
    Ok(Dataset::new(results.into_iter().collect::<Result<_, _>>()?))
}

fn reduce_group(
    op: &OperationDef,
    members: &[&Document],
    ctx: &ExecContext,
    global: bool,
) -> Result<Document, OpError> {
    let schema = op.output_schema();
    let model = ctx.model_for(op);
    let key_doc: Document = if global {
        Document::new()
    } else {
        op.reduce_key
            .iter()
            .map(|k| (k.clone(), members[0].get(k).cloned().unwrap_or(Value::Null)))
            .collect()
    };
    let inputs_value = |docs: &[&Document]| {
        Value::Array(docs.iter().map(|d| d.as_value()).collect())
    };

    let batch = op.fold_batch_size.unwrap_or(usize::MAX).max(1);
    let out = if members.len() > batch {
        let fold_prompt = op.fold_prompt.as_ref().ok_or_else(|| OpError::MissingField {
            op: op.name.clone(),
            field: "fold_prompt",
        })?;
        let system = format!(
            "{} You may also include a string attribute named \"scratchpad\" \
             holding intermediate state; it is carried to the next batch and \
             excluded from the final output.",
            system_prompt(&schema)
        );
        let mut accumulator = Document::new();
        let mut scratchpad = String::new();
        let batches: Vec<&[&Document]> = members.chunks(batch).collect();
        let last = batches.len() - 1;
        let mut final_out = None;
        for (i, chunk) in batches.iter().enumerate() {
            let bindings = BTreeMap::from([
                ("inputs".to_string(), inputs_value(chunk)),
                ("output".to_string(), accumulator.as_value()),
                ("reduce_key".to_string(), key_doc.as_value()),
                ("scratchpad".to_string(), Value::String(scratchpad.clone())),
            ]);
            let req = CompletionRequest::new(model.clone(), system.clone())
                .with_user(fold_prompt.render(&bindings)?)
                .with_schema(schema.clone());
            // Validation statements describe the final aggregate; only the
            // last fold is validated (and gleaned).
            let out = if i == last {
                complete_with_gleaning(ctx, req, &op.validate, op.gleaning.as_ref())?
            } else {
                complete_with_gleaning(ctx, req, &[], None)?
            };
            let mut attrs = out.response.attributes.clone();
            scratchpad = match attrs.remove("scratchpad") {
                Some(Value::String(s)) => s,
                Some(other) => canonical_json(&other),
                None => String::new(),
            };
            accumulator = attrs;
            if i == last {
                final_out = Some(out);
            }
        }
        let out = final_out.expect("at least one batch");
        let mut doc = accumulator;
        if !out.valid {
            doc.insert(INVALID_FLAG, Value::Bool(true));
        }
        doc
    } else {
        let prompt = op.prompt.as_ref().ok_or_else(|| OpError::MissingField {
            op: op.name.clone(),
            field: "prompt",
        })?;
        let bindings = BTreeMap::from([
            ("inputs".to_string(), inputs_value(members)),
            ("reduce_key".to_string(), key_doc.as_value()),
        ]);
        let req = CompletionRequest::new(model.clone(), system_prompt(&schema))
            .with_user(prompt.render(&bindings)?)
            .with_schema(schema.clone());
        let out = complete_with_gleaning(ctx, req, &op.validate, op.gleaning.as_ref())?;
        let mut doc = out.response.attributes.clone();
        if !out.valid {
            doc.insert(INVALID_FLAG, Value::Bool(true));
        }
        doc
    };

    let mut doc = out;
    // Group-key attributes always survive, overriding any model output.
    doc.merge(&key_doc);
    for key in &op.drop_keys {
        doc.remove(key);
    }
    Ok(doc)
}
