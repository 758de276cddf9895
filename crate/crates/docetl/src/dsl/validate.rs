use std::collections::{BTreeMap, BTreeSet};

use crate::model::{TemplateString, TypeExpr};
use crate::ops::{OperationDef, OperatorKind};

use super::spec::{check_kind_fields, PipelineSpec, StepDef};

/// What is known about the attributes flowing between operations. Dataset
/// files are `Open` unless the caller sampled them, so checks never produce
/// false positives on unknown sources.
#[derive(Debug, Clone)]
pub enum AttrInfo {
    Open,
    Known(BTreeSet<String>),
}

impl AttrInfo {
    fn contains(&self, attr: &str) -> bool {
        match self {
            AttrInfo::Open => true,
            AttrInfo::Known(set) => set.contains(attr),
        }
    }

    fn add(&mut self, attr: String) {
        if let AttrInfo::Known(set) = self {
            set.insert(attr);
        }
    }

    fn remove(&mut self, attr: &str) {
        if let AttrInfo::Known(set) = self {
            set.remove(attr);
        }
    }
}

/// Validates a parsed pipeline without touching dataset files; attributes
/// of datasets are treated as unknown.
pub fn validate_pipeline(spec: &PipelineSpec) -> Vec<String> {
    validate_pipeline_with(spec, &BTreeMap::new())
}

/// Validates with known attribute sets for (some) datasets, enabling
/// dataflow checks from the very first operation. Returns an empty list
/// iff the pipeline is executable.
pub fn validate_pipeline_with(
    spec: &PipelineSpec,
    dataset_attrs: &BTreeMap<String, BTreeSet<String>>,
) -> Vec<String> {
    let mut diags = Vec::new();

    let mut seen = BTreeSet::new();
    for op in &spec.operations {
        if !seen.insert(&op.name) {
            diags.push(format!("duplicate operation name '{}'", op.name));
        }
        if let Err(e) = check_kind_fields(op) {
            diags.push(e.to_string());
        }
    }
    let mut step_names = BTreeSet::new();
    for step in &spec.steps {
        if !step_names.insert(&step.name) {
            diags.push(format!("duplicate step name '{}'", step.name));
        }
        if spec.datasets.contains_key(&step.name) {
            diags.push(format!(
                "step '{}' shadows a dataset of the same name",
                step.name
            ));
        }
    }
    if spec.steps.is_empty() {
        diags.push("pipeline has no steps".to_string());
    }

    let mut env: BTreeMap<String, AttrInfo> = BTreeMap::new();
    for name in spec.datasets.keys() {
        let info = match dataset_attrs.get(name) {
            Some(attrs) => AttrInfo::Known(attrs.clone()),
            None => AttrInfo::Open,
        };
        env.insert(name.clone(), info);
    }

    let mut prev_step: Option<String> = None;
    // The most recent split operation in execution order, for defaulting
    // gather's id/order keys.
    let mut last_split: Option<OperationDef> = None;
    for step in &spec.steps {
        let ops: Vec<Option<&OperationDef>> = step
            .operations
            .iter()
            .map(|name| {
                let op = spec.operation(name);
                if op.is_none() {
                    diags.push(format!(
                        "step '{}' references unknown operation '{name}'",
                        step.name
                    ));
                }
                op
            })
            .collect();
        let is_join = ops
            .first()
            .and_then(|op| *op)
            .is_some_and(|op| op.kind == OperatorKind::Equijoin);

        let mut attrs = if is_join {
            join_step_inputs(step, &env, &mut diags)
        } else {
            if step.left_input.is_some() || step.right_input.is_some() {
                diags.push(format!(
                    "step '{}' has left/right inputs but does not start with an equijoin",
                    step.name
                ));
            }
            let input = step
                .input
                .clone()
                .or_else(|| prev_step.clone())
                .or_else(|| {
                    (spec.datasets.len() == 1)
                        .then(|| spec.datasets.keys().next().unwrap().clone())
                });
            match input {
                None => {
                    diags.push(format!("step '{}' has no resolvable input", step.name));
                    AttrInfo::Open
                }
                Some(name) => match env.get(&name) {
                    Some(info) => info.clone(),
                    None => {
                        diags.push(format!(
                            "step '{}' input '{name}' is neither a dataset nor an earlier step",
                            step.name
                        ));
                        AttrInfo::Open
                    }
                },
            }
        };

        for (position, op) in ops.iter().enumerate() {
            let Some(op) = op else { continue };
            if op.kind == OperatorKind::Equijoin && position != 0 {
                diags.push(format!(
                    "equijoin '{}' must be the first operation of its step",
                    op.name
                ));
            }
            check_operation(op, &mut attrs, &last_split, &mut diags);
            if op.kind == OperatorKind::Split {
                last_split = Some((*op).clone());
            }
        }
        env.insert(step.name.clone(), attrs);
        prev_step = Some(step.name.clone());
    }
    diags
}

fn join_step_inputs(
    step: &StepDef,
    env: &BTreeMap<String, AttrInfo>,
    diags: &mut Vec<String>,
) -> AttrInfo {
    let mut side = |field: &Option<String>, label: &str| -> AttrInfo {
        match field {
            None => {
                diags.push(format!(
                    "equijoin step '{}' requires {label}_input",
                    step.name
                ));
                AttrInfo::Open
            }
            Some(name) => match env.get(name) {
                Some(info) => info.clone(),
                None => {
                    diags.push(format!(
                        "step '{}' {label}_input '{name}' is neither a dataset nor an earlier step",
                        step.name
                    ));
                    AttrInfo::Open
                }
            },
        }
    };
    let left = side(&step.left_input, "left");
    let right = side(&step.right_input, "right");
    match (left, right) {
        (AttrInfo::Known(l), AttrInfo::Known(r)) => {
            let mut merged = l.clone();
            for attr in r {
                if l.contains(&attr) {
                    merged.insert(format!("{attr}_right"));
                } else {
                    merged.insert(attr);
                }
            }
            AttrInfo::Known(merged)
        }
        _ => AttrInfo::Open,
    }
}

fn check_template(
    op: &OperationDef,
    label: &str,
    template: &TemplateString,
    allowed_roots: &[&str],
    input_root: Option<(&str, &AttrInfo)>,
    diags: &mut Vec<String>,
) {
    for root in template.root_bindings() {
        if !allowed_roots.contains(&root.as_str()) {
            diags.push(format!(
                "operation '{}': {label} references '{root}' but may only bind {}",
                op.name,
                allowed_roots.join(", ")
            ));
        }
    }
    if let Some((root, attrs)) = input_root {
        check_paths(op, label, template, root, attrs, diags);
    }
}

/// Checks that every `<root>.<attr>...` path the template reads names an
/// attribute known to exist upstream.
fn check_paths(
    op: &OperationDef,
    label: &str,
    template: &TemplateString,
    root: &str,
    attrs: &AttrInfo,
    diags: &mut Vec<String>,
) {
    let prefix = format!("{root}.");
    for path in template.referenced_paths() {
        if let Some(rest) = path.strip_prefix(&prefix) {
            let attr = rest.split('.').next().unwrap_or(rest);
            if !attrs.contains(attr) {
                diags.push(format!(
                    "operation '{}': {label} references '{path}' but upstream \
                     documents have no attribute '{attr}'",
                    op.name
                ));
            }
        }
    }
}

fn check_operation(
    op: &OperationDef,
    attrs: &mut AttrInfo,
    last_split: &Option<OperationDef>,
    diags: &mut Vec<String>,
) {
    for statement in &op.validate {
        if let Err(e) = statement.check_syntax() {
            diags.push(format!(
                "operation '{}': validation '{}': {e}",
                op.name, statement.expression
            ));
        }
    }
    if let Some(gleaning) = &op.gleaning {
        check_template(
            op,
            "gleaning validator_prompt",
            &gleaning.validator_prompt,
            &["output"],
            None,
            diags,
        );
    }

    match op.kind {
        OperatorKind::Map | OperatorKind::Filter => {
            if let Some(prompt) = &op.prompt {
                check_template(op, "prompt", prompt, &["input"], Some(("input", attrs)), diags);
            }
            if op.kind == OperatorKind::Filter {
                let schema = op.output_schema();
                let names: Vec<&str> = schema.attribute_names().collect();
                let single_bool = matches!(names.as_slice(),
                    [one] if schema.entries[*one] == TypeExpr::Bool);
                if !single_bool {
                    diags.push(format!(
                        "operation '{}': filter output schema must be exactly one boolean attribute",
                        op.name
                    ));
                }
            } else {
                for name in op.output_schema().attribute_names() {
                    attrs.add(name.to_string());
                }
                for key in &op.drop_keys {
                    attrs.remove(key);
                }
            }
        }
        OperatorKind::ParallelMap => {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            for projection in &op.prompts {
                check_template(
                    op,
                    "prompt",
                    &projection.prompt,
                    &["input"],
                    Some(("input", attrs)),
                    diags,
                );
                for name in projection.output.schema.attribute_names() {
                    if !seen.insert(name) {
                        diags.push(format!(
                            "operation '{}': projections overlap on attribute '{name}'",
                            op.name
                        ));
                    }
                }
            }
            for projection in &op.prompts {
                for name in projection.output.schema.attribute_names() {
                    attrs.add(name.to_string());
                }
            }
            for key in &op.drop_keys {
                attrs.remove(key);
            }
        }
        OperatorKind::Reduce => {
            if let Some(prompt) = &op.prompt {
                check_template(
                    op,
                    "prompt",
                    prompt,
                    &["inputs", "reduce_key"],
                    Some(("inputs", attrs)),
                    diags,
                );
            }
            if let Some(fold) = &op.fold_prompt {
                check_template(
                    op,
                    "fold_prompt",
                    fold,
                    &["inputs", "output", "reduce_key", "scratchpad"],
                    Some(("inputs", attrs)),
                    diags,
                );
            }
            let mut out = BTreeSet::new();
            for key in &op.reduce_key {
                if key != crate::ops::GLOBAL_REDUCE_KEY {
                    if !attrs.contains(key) {
                        diags.push(format!(
                            "operation '{}': reduce_key '{key}' is not an upstream attribute",
                            op.name
                        ));
                    }
                    out.insert(key.clone());
                }
            }
            out.extend(op.output_schema().attribute_names().map(str::to_string));
            for key in &op.drop_keys {
                out.remove(key);
            }
            // Reduce replaces the document set wholesale.
            *attrs = AttrInfo::Known(out);
        }
        OperatorKind::Resolve => {
            if let Some(prompt) = &op.comparison_prompt {
                check_template(op, "comparison_prompt", prompt, &["input1", "input2"], None, diags);
                for root in ["input1", "input2"] {
                    check_paths(op, "comparison_prompt", prompt, root, attrs, diags);
                }
            }
            if let Some(prompt) = &op.resolution_prompt {
                check_template(op, "resolution_prompt", prompt, &["inputs"],
                    Some(("inputs", attrs)), diags);
            }
            for name in op.output_schema().attribute_names() {
                if !attrs.contains(name) {
                    diags.push(format!(
                        "operation '{}': resolve attribute '{name}' is not an upstream attribute",
                        op.name
                    ));
                }
                attrs.add(name.to_string());
            }
        }
        OperatorKind::Equijoin => {
            if let Some(prompt) = &op.comparison_prompt {
                check_template(op, "comparison_prompt", prompt, &["left", "right"], None, diags);
            }
        }
        OperatorKind::Split => {
            if let Some(split_key) = &op.split_key {
                if !attrs.contains(split_key) {
                    diags.push(format!(
                        "operation '{}': split_key '{split_key}' is not an upstream attribute",
                        op.name
                    ));
                }
                attrs.remove(split_key);
            }
            if let Some(chunk) = op.split_chunk_attr() {
                attrs.add(chunk);
            }
            attrs.add(op.split_id_attr());
            attrs.add(op.split_chunk_num_attr());
        }
        OperatorKind::Gather => {
            let mut require = |key: &Option<String>, label: &str| {
                if let Some(key) = key {
                    if !attrs.contains(key) {
                        diags.push(format!(
                            "operation '{}': {label} '{key}' is not an upstream attribute",
                            op.name
                        ));
                    }
                }
            };
            require(&op.content_key, "content_key");
            require(&op.doc_header_key, "doc_header_key");
            if let Some(peripheral) = &op.peripheral_chunks {
                for section in [&peripheral.previous, &peripheral.next].into_iter().flatten() {
                    for sub in [&section.head, &section.middle, &section.tail]
                        .into_iter()
                        .flatten()
                    {
                        require(&Some(sub.content_key.clone()), "peripheral content_key");
                    }
                }
            }
            let inferable = last_split.is_some();
            for (key, label) in [(&op.doc_id_key, "doc_id_key"), (&op.order_key, "order_key")] {
                match key {
                    Some(key) => {
                        if !attrs.contains(key) {
                            diags.push(format!(
                                "operation '{}': {label} '{key}' is not an upstream attribute",
                                op.name
                            ));
                        }
                    }
                    None if !inferable => diags.push(format!(
                        "operation '{}': {label} is not set and no upstream split \
                         operation exists to infer it from",
                        op.name
                    )),
                    None => {}
                }
            }
            if let Some(content_key) = &op.content_key {
                attrs.add(format!("{content_key}_rendered"));
            }
        }
        OperatorKind::Unnest => {
            if let Some(key) = &op.unnest_key {
                if !attrs.contains(key) {
                    diags.push(format!(
                        "operation '{}': unnest_key '{key}' is not an upstream attribute",
                        op.name
                    ));
                }
            }
            // Dict unnest promotes attributes we cannot name statically.
            *attrs = AttrInfo::Open;
        }
    }
}
