use std::collections::BTreeMap;

use crate::model::{canonical_json, Dataset, Document, Value};

use super::def::{GatherSection, GatherSpec, GatherSubsection, OperationDef};
use super::OpError;

pub const PREVIOUS_MARKER: &str = "--- Previous Context ---";
pub const BEGIN_MAIN_MARKER: &str = "--- Begin Main Chunk ---";
pub const END_MAIN_MARKER: &str = "--- End Main Chunk ---";
pub const NEXT_MARKER: &str = "--- Next Context ---";
pub const SUMMARY_PREFIX: &str = "[summary] ";
pub const HEADER_PREFIX: &str = "[header context] ";

/// Builds a concrete [`GatherSpec`] from an operation definition.
pub fn resolve_gather_spec(op: &OperationDef) -> Result<GatherSpec, OpError> {
    let field = |opt: &Option<String>, name: &'static str| {
        opt.clone().ok_or_else(|| OpError::MissingField {
            op: op.name.clone(),
            field: name,
        })
    };
    Ok(GatherSpec {
        content_key: field(&op.content_key, "content_key")?,
        doc_id_key: field(&op.doc_id_key, "doc_id_key")?,
        order_key: field(&op.order_key, "order_key")?,
        doc_header_key: op.doc_header_key.clone(),
        peripheral: op.peripheral_chunks.clone().unwrap_or_default(),
    })
}

/// Augments each chunk with rendered peripheral context under
/// `<content_key>_rendered`: header lineage, previous context, the main
/// chunk between begin/end markers, and next context. Chunks rendered from
/// an attribute other than the main content key are prefixed `[summary] `.
pub fn exec_gather(op_name: &str, spec: &GatherSpec, ds: &Dataset) -> Result<Dataset, OpError> {
    // Group chunk indices by document id, order of first appearance.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (index, doc) in ds.iter().enumerate() {
        let id = doc.get(&spec.doc_id_key).ok_or_else(|| OpError::MissingKey {
            op: op_name.to_string(),
            key: spec.doc_id_key.clone(),
            index,
        })?;
        let id = canonical_json(id);
        let slot = *by_id.entry(id).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(index);
    }
    for group in &groups {
        let mut prev: Option<f64> = None;
        for &index in group {
            let order = ds.documents[index]
                .get(&spec.order_key)
                .ok_or_else(|| OpError::MissingKey {
                    op: op_name.to_string(),
                    key: spec.order_key.clone(),
                    index,
                })?
                .as_f64()
                .ok_or_else(|| OpError::WrongType {
                    op: op_name.to_string(),
                    key: spec.order_key.clone(),
                    index,
                    expected: "a number",
                })?;
            if let Some(p) = prev {
                if order <= p {
                    let id = ds.documents[index]
                        .get(&spec.doc_id_key)
                        .map(canonical_json)
                        .unwrap_or_default();
                    return Err(OpError::UnorderedGroup {
                        op: op_name.to_string(),
                        key: id,
                    });
                }
            }
            prev = Some(order);
        }
    }

    let rendered_attr = format!("{}_rendered", spec.content_key);
    let mut out: Vec<Document> = ds.iter().cloned().collect();
    for group in &groups {
        for (pos, &index) in group.iter().enumerate() {
            let rendered = render_chunk(op_name, spec, ds, group, pos)?;
            out[index].insert(rendered_attr.clone(), Value::String(rendered));
        }
    }
    Ok(Dataset::new(out))
}

fn chunk_text<'a>(
    op_name: &str,
    ds: &'a Dataset,
    index: usize,
    key: &str,
) -> Result<&'a str, OpError> {
    ds.documents[index]
        .get(key)
        .ok_or_else(|| OpError::MissingKey {
            op: op_name.to_string(),
            key: key.to_string(),
            index,
        })?
        .as_str()
        .ok_or_else(|| OpError::WrongType {
            op: op_name.to_string(),
            key: key.to_string(),
            index,
            expected: "a string",
        })
}

fn render_chunk(
    op_name: &str,
    spec: &GatherSpec,
    ds: &Dataset,
    group: &[usize],
    pos: usize,
) -> Result<String, OpError> {
    let mut lines: Vec<String> = Vec::new();
    if let Some(header_key) = &spec.doc_header_key {
        for (level, header) in header_lineage(ds, group, pos, header_key) {
            let _ = level;
            lines.push(format!("{HEADER_PREFIX}{header}"));
        }
    }

    let previous = render_side(
        op_name,
        spec,
        ds,
        &group[..pos],
        spec.peripheral.previous.as_ref(),
    )?;
    if !previous.is_empty() {
        lines.push(PREVIOUS_MARKER.to_string());
        lines.extend(previous);
    }

    lines.push(BEGIN_MAIN_MARKER.to_string());
    lines.push(chunk_text(op_name, ds, group[pos], &spec.content_key)?.to_string());
    lines.push(END_MAIN_MARKER.to_string());

    let next = render_side(
        op_name,
        spec,
        ds,
        &group[pos + 1..],
        spec.peripheral.next.as_ref(),
    )?;
    if !next.is_empty() {
        lines.push(NEXT_MARKER.to_string());
        lines.extend(next);
    }
    Ok(lines.join("\n"))
}

/// Selects and renders one side's chunks in document order: `head` takes
/// the chunks closest to the document boundary, `tail` the chunks closest
/// to the main chunk (for `previous`; mirrored for `next`), and `middle`
/// everything between when configured.
fn render_side(
    op_name: &str,
    spec: &GatherSpec,
    ds: &Dataset,
    chunks: &[usize],
    section: Option<&GatherSection>,
) -> Result<Vec<String>, OpError> {
    let Some(section) = section else {
        return Ok(Vec::new());
    };
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let head_count = section
        .head
        .as_ref()
        .map(|s| s.count.unwrap_or(1))
        .unwrap_or(0)
        .min(chunks.len());
    let tail_count = section
        .tail
        .as_ref()
        .map(|s| s.count.unwrap_or(1))
        .unwrap_or(0)
        .min(chunks.len() - head_count);
    let (head, rest) = chunks.split_at(head_count);
    let (middle, tail) = rest.split_at(rest.len() - tail_count);

    let mut lines = Vec::new();
    let mut render = |selected: &[usize], sub: &GatherSubsection| -> Result<(), OpError> {
        for &index in selected {
            let text = chunk_text(op_name, ds, index, &sub.content_key)?;
            if sub.content_key == spec.content_key {
                lines.push(text.to_string());
            } else {
                lines.push(format!("{SUMMARY_PREFIX}{text}"));
            }
        }
        Ok(())
    };
    if let Some(sub) = &section.head {
        render(head, sub)?;
    }
    if let Some(sub) = &section.middle {
        render(middle, sub)?;
    }
    if let Some(sub) = &section.tail {
        render(tail, sub)?;
    }
    Ok(lines)
}

/// Walks the headers of all chunks before the current one, maintaining the
/// most recent header per level as a stack (a shallower header clears the
/// deeper ones). Returns the ancestors of the current chunk: the stack
/// entries shallower than the current chunk's first header, or the whole
/// stack when the current chunk has no headers.
fn header_lineage(
    ds: &Dataset,
    group: &[usize],
    pos: usize,
    header_key: &str,
) -> Vec<(i64, String)> {
    let headers_of = |index: usize| -> Vec<(i64, String)> {
        ds.documents[index]
            .get(header_key)
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|item| {
                        let level = item.get("level")?.as_i64()?;
                        let text = item.get("header")?.as_str()?.to_string();
                        Some((level, text))
                    })
                    .collect()
            })
            .unwrap_or_default()
    };
    let mut stack: Vec<(i64, String)> = Vec::new();
    for &index in &group[..pos] {
        for (level, text) in headers_of(index) {
            while stack.last().is_some_and(|(l, _)| *l >= level) {
                stack.pop();
            }
            stack.push((level, text));
        }
    }
    let cutoff = headers_of(group[pos])
        .first()
        .map(|(l, _)| *l)
        .unwrap_or(i64::MAX);
    stack.retain(|(l, _)| *l < cutoff);
    stack
}
