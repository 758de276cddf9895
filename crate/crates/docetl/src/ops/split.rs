use crate::model::{Dataset, Value};

use super::def::{OperationDef, SplitMethodKind};
use super::{ExecContext, OpError};

/// Splits the text under `split_key` into chunks, emitting one document per
/// chunk. Each carries the inherited attributes (minus the original text),
/// the chunk under `<split_key>_chunk`, a stable `<name>_id` shared by all
/// chunks of one original document, and a 1-based `<name>_chunk_num`.
pub fn exec_split(op: &OperationDef, ds: &Dataset, ctx: &ExecContext) -> Result<Dataset, OpError> {
    let split_key = op.split_key.as_ref().ok_or_else(|| OpError::MissingField {
        op: op.name.clone(),
        field: "split_key",
    })?;
    let method = op.method.ok_or_else(|| OpError::MissingField {
        op: op.name.clone(),
        field: "method",
    })?;
    let kwargs = op.method_kwargs.clone().unwrap_or_default();
    let chunker: Box<dyn Fn(&str) -> Vec<String>> = match method {
        SplitMethodKind::TokenCount => {
            let num_tokens = kwargs.num_tokens.ok_or_else(|| OpError::MissingField {
                op: op.name.clone(),
                field: "method_kwargs.num_tokens",
            })?;
            let tokenizer = ctx.tokenizer;
            Box::new(move |text| tokenizer.chunk(text, num_tokens))
        }
        SplitMethodKind::Delimiter => {
            let delimiter = kwargs.delimiter.clone().ok_or_else(|| OpError::MissingField {
                op: op.name.clone(),
                field: "method_kwargs.delimiter",
            })?;
            Box::new(move |text| text.split(&delimiter).map(str::to_string).collect())
        }
    };

    let chunk_attr = op.split_chunk_attr().expect("split_key present");
    let id_attr = op.split_id_attr();
    let num_attr = op.split_chunk_num_attr();
    let mut out = Vec::new();
    for (index, doc) in ds.iter().enumerate() {
        let text = match doc.get(split_key) {
            None => {
                return Err(OpError::MissingKey {
                    op: op.name.clone(),
                    key: split_key.clone(),
                    index,
                })
            }
            Some(Value::String(s)) => s,
            Some(_) => {
                return Err(OpError::WrongType {
                    op: op.name.clone(),
                    key: split_key.clone(),
                    index,
                    expected: "a string",
                })
            }
        };
        let doc_id = format!("{}-doc-{index}", op.name);
        for (chunk_index, chunk) in chunker(text).into_iter().enumerate() {
            let mut new_doc = doc.clone();
            new_doc.remove(split_key);
            new_doc.insert(chunk_attr.clone(), Value::String(chunk));
            new_doc.insert(id_attr.clone(), Value::String(doc_id.clone()));
            new_doc.insert(num_attr.clone(), Value::from(chunk_index as u64 + 1));
            out.push(new_doc);
        }
    }
    Ok(Dataset::new(out))
}
