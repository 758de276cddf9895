use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::model::{Dataset, Tokenizer};
use crate::ops::{
    exec_equijoin, execute_operation, ExecContext, OperationDef, OperatorKind,
};

use super::spec::{DslError, PipelineSpec};
use super::validate::validate_pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpStats {
    pub operation: String,
    pub input_count: usize,
    pub output_count: usize,
    /// output_count / input_count; 0 when the input was empty.
    pub selectivity: f64,
    pub llm_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub retries: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub operations: Vec<OpStats>,
}

impl RunStats {
    pub fn for_operation(&self, name: &str) -> Option<&OpStats> {
        self.operations.iter().find(|s| s.operation == name)
    }

    pub fn total_llm_calls(&self) -> u64 {
        self.operations.iter().map(|s| s.llm_calls).sum()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// An aborted execution: the first hard operator error plus the statistics
/// gathered up to that point.
#[derive(Debug)]
pub struct ExecFailure {
    pub error: DslError,
    pub stats: RunStats,
}

impl std::fmt::Display for ExecFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for ExecFailure {}

/// Validates and executes a pipeline: steps in order, operators in step
/// order, final dataset written to the output path with a
/// `<output>.stats.json` sidecar.
pub fn execute_pipeline(
    spec: &PipelineSpec,
    gateway: &Gateway,
    tokenizer: Tokenizer,
) -> Result<(Dataset, RunStats), ExecFailure> {
    let mut stats = RunStats::default();
    run(spec, gateway, tokenizer, &mut stats)
        .map(|ds| (ds, std::mem::take(&mut stats)))
        .map_err(|error| ExecFailure {
            error,
            stats: std::mem::take(&mut stats),
        })
}

fn run(
    spec: &PipelineSpec,
    gateway: &Gateway,
    tokenizer: Tokenizer,
    stats: &mut RunStats,
) -> Result<Dataset, DslError> {
    let diags = validate_pipeline(spec);
    if !diags.is_empty() {
        return Err(DslError::Invalid(diags));
    }

    let mut ctx = ExecContext::new(gateway);
    ctx.tokenizer = tokenizer;
    if let Some(model) = &spec.default_model {
        ctx.default_model = model.clone();
    }

    let mut env: BTreeMap<String, Dataset> = BTreeMap::new();
    let resolve_source = |name: &str,
                          env: &mut BTreeMap<String, Dataset>|
     -> Result<Dataset, DslError> {
        if let Some(ds) = env.get(name) {
            return Ok(ds.clone());
        }
        let dataset = spec
            .datasets
            .get(name)
            .ok_or_else(|| DslError::UnknownName(name.to_string(), "a step input".into()))?;
        let ds = load_dataset(&dataset.path)?;
        env.insert(name.to_string(), ds.clone());
        Ok(ds)
    };

    let mut prev_step: Option<String> = None;
    let mut last_split: Option<OperationDef> = None;
    let mut current = Dataset::default();
    for step in &spec.steps {
        let ops: Vec<&OperationDef> = step
            .operations
            .iter()
            .map(|name| {
                spec.operation(name)
                    .ok_or_else(|| DslError::UnknownName(name.clone(), format!("step '{}'", step.name)))
            })
            .collect::<Result<_, _>>()?;
        let is_join = ops.first().is_some_and(|op| op.kind == OperatorKind::Equijoin);

        let mut rest = ops.as_slice();
        if is_join {
            let join = ops[0];
            let left_name = step.left_input.as_ref().expect("validated");
            let right_name = step.right_input.as_ref().expect("validated");
            let left = resolve_source(left_name, &mut env)?;
            let right = resolve_source(right_name, &mut env)?;
            let before = gateway.stats();
            let input_count = left.len() + right.len();
            current = exec_equijoin(join, &left, &right, &ctx)?;
            stats
                .operations
                .push(op_stats(join, input_count, current.len(), before, gateway));
            rest = &ops[1..];
        } else {
            let input = step
                .input
                .clone()
                .or_else(|| prev_step.clone())
                .or_else(|| {
                    (spec.datasets.len() == 1)
                        .then(|| spec.datasets.keys().next().unwrap().clone())
                })
                .expect("validated");
            current = resolve_source(&input, &mut env)?;
        }

        for op in rest {
            let effective = effective_op(op, &last_split);
            let before = gateway.stats();
            let input_count = current.len();
            current = execute_operation(&effective, &current, &ctx)?;
            stats
                .operations
                .push(op_stats(op, input_count, current.len(), before, gateway));
            if op.kind == OperatorKind::Split {
                last_split = Some((*op).clone());
            }
        }
        env.insert(step.name.clone(), current.clone());
        prev_step = Some(step.name.clone());
    }

    write_output(spec, &current, stats)?;
    Ok(current)
}

/// Fills in gather's id/order keys from the most recent upstream split
/// when the operation leaves them implicit.
fn effective_op(op: &OperationDef, last_split: &Option<OperationDef>) -> OperationDef {
    if op.kind != OperatorKind::Gather {
        return op.clone();
    }
    let mut op = op.clone();
    if let Some(split) = last_split {
        op.doc_id_key = op.doc_id_key.or_else(|| Some(split.split_id_attr()));
        op.order_key = op.order_key.or_else(|| Some(split.split_chunk_num_attr()));
    }
    op
}

fn op_stats(
    op: &OperationDef,
    input_count: usize,
    output_count: usize,
    before: crate::gateway::GatewayStats,
    gateway: &Gateway,
) -> OpStats {
    let after = gateway.stats();
    OpStats {
        operation: op.name.clone(),
        input_count,
        output_count,
        selectivity: if input_count == 0 {
            0.0
        } else {
            output_count as f64 / input_count as f64
        },
        llm_calls: after.backend_calls - before.backend_calls,
        input_tokens: after.input_tokens - before.input_tokens,
        output_tokens: after.output_tokens - before.output_tokens,
        retries: after.retries - before.retries,
    }
}

/// Loads every dataset declared by the pipeline into memory, keyed by name.
pub fn load_datasets(spec: &PipelineSpec) -> Result<BTreeMap<String, Dataset>, DslError> {
    spec.datasets
        .iter()
        .map(|(name, dataset)| Ok((name.clone(), load_dataset(&dataset.path)?)))
        .collect()
}

fn load_dataset(path: &str) -> Result<Dataset, DslError> {
    let text = std::fs::read_to_string(path).map_err(|source| DslError::Io {
        path: path.to_string(),
        source,
    })?;
    Dataset::from_json(&text).map_err(|e| DslError::BadDataset {
        path: path.to_string(),
        message: e.to_string(),
    })
}

fn write_output(spec: &PipelineSpec, ds: &Dataset, stats: &RunStats) -> Result<(), DslError> {
    let path = &spec.output.path;
    let io = |source: std::io::Error| DslError::Io {
        path: path.clone(),
        source,
    };
    if let Some(parent) = Path::new(path).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
    }
    std::fs::write(path, ds.to_json_pretty()).map_err(io)?;
    std::fs::write(format!("{path}.stats.json"), stats.to_json_pretty()).map_err(io)?;
    Ok(())
}
