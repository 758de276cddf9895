use crate::model::{Dataset, Value};

use super::def::OperationDef;
use super::OpError;

/// Flattens the attribute under `unnest_key`. An array yields one document
/// per element with the element in place of the array (empty arrays yield
/// nothing); an object promotes its entries to the top level, keeping the
/// original attribute. Anything else is a type error.
pub fn exec_unnest(op: &OperationDef, ds: &Dataset) -> Result<Dataset, OpError> {
    let key = op.unnest_key.as_ref().ok_or_else(|| OpError::MissingField {
        op: op.name.clone(),
        field: "unnest_key",
    })?;
    let mut out = Vec::new();
    for (index, doc) in ds.iter().enumerate() {
        let value = doc.get(key).ok_or_else(|| OpError::MissingKey {
            op: op.name.clone(),
            key: key.clone(),
            index,
        })?;
        match value {
            Value::Array(items) => {
                for item in items {
                    let mut new_doc = doc.clone();
                    new_doc.insert(key.clone(), item.clone());
                    out.push(new_doc);
                }
            }
            Value::Object(entries) => {
                let mut new_doc = doc.clone();
                for (k, v) in entries {
                    new_doc.insert(k.clone(), v.clone());
                }
                out.push(new_doc);
            }
            _ => {
                return Err(OpError::WrongType {
                    op: op.name.clone(),
                    key: key.clone(),
                    index,
                    expected: "an array or object",
                })
            }
        }
    }
    Ok(Dataset::new(out))
}
