use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::dsl::{validate_pipeline, DslError, PipelineSpec, StepDef};
use crate::gateway::Gateway;
use crate::model::{Dataset, TemplateString, Tokenizer};
use crate::ops::{
    exec_equijoin, execute_operation, ExecContext, OpError, OperationDef, OperatorKind,
};
use crate::rewrite::{
    apply_directive, gen_fold_batch_candidates, match_directives, DirectiveId, RewriteParams,
    SubPipeline, ALL_DIRECTIVES,
};

use super::agent::{AgentError, AgentInterface};
use super::sample::{document_weight, draw_sample, required_sample_size, SelectivityLedger, ZeroSelectivity};
use super::select::{select_plan, PlanSelection};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Target number of sample documents surviving to each optimization
    /// target.
    pub base_sample_size: usize,
    /// Candidates advancing from rating to pairwise comparison.
    pub top_k: usize,
    /// Maximum depth of opportunistic recursion when a rewrite's output
    /// itself admits further rewrites.
    pub max_rewrite_depth: usize,
    /// Refinement rounds granted by the gleaning directives.
    pub gleaning_k: u32,
    pub seed: u64,
    pub tokenizer: Tokenizer,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_sample_size: 20,
            top_k: 6,
            max_rewrite_depth: 2,
            gleaning_k: 1,
            seed: 0,
            tokenizer: Tokenizer::default(),
        }
    }
}

impl OptimizerConfig {
    fn check(&self) -> Result<(), OptimizeError> {
        if self.top_k < 2 {
            return Err(OptimizeError::BadConfig(
                "top_k must be at least 2 so the winner is chosen pairwise".into(),
            ));
        }
        if self.max_rewrite_depth < 1 {
            return Err(OptimizeError::BadConfig(
                "max_rewrite_depth must be at least 1".into(),
            ));
        }
        if self.base_sample_size == 0 {
            return Err(OptimizeError::BadConfig(
                "base_sample_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer configuration: {0}")]
    BadConfig(String),
    #[error("pipeline is not valid:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("no data provided for dataset '{0}'")]
    MissingData(String),
    #[error("dataset '{0}' has no documents to sample")]
    EmptyData(String),
    #[error(transparent)]
    Sample(#[from] ZeroSelectivity),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dsl(#[from] DslError),
}

/// One optimization decision: the sub-pipeline targeted, what was tried,
/// and how the winner was chosen. Serialized as a JSON line in the build
/// decisions log.
#[derive(Debug, Clone, Serialize)]
pub struct DecisionRecord {
    pub step: String,
    pub target_ops: Vec<String>,
    pub directives: Vec<DirectiveId>,
    pub satisfactory: bool,
    pub candidates: Vec<Vec<String>>,
    pub selection: Option<PlanSelection>,
    pub winner_ops: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub pipeline: PipelineSpec,
    pub decisions: Vec<DecisionRecord>,
    /// Sub-pipeline executions performed while rating candidates.
    pub candidate_executions: usize,
    /// Directive instantiation attempts across all recursion levels.
    pub directive_applications: usize,
}

#[derive(Default)]
struct Counters {
    candidate_executions: usize,
    directive_applications: usize,
}

/// A sub-pipeline's input: one dataset, or the two sides of a join.
enum SpInput {
    Single(Dataset),
    Join(Dataset, Dataset),
}

/// The state of a (sampled) dataset as optimization walks a chain of
/// operations: the current sample, the selectivities observed so far, and
/// enough provenance to enlarge the sample when selectivities shrink it.
#[derive(Clone)]
struct ChainState {
    sample: Dataset,
    ledger: SelectivityLedger,
    /// Root dataset to re-draw from; `None` when the chain starts at a
    /// join, which cannot be resampled.
    root: Option<String>,
    root_drawn: usize,
    /// Optimized operations applied since the root, for re-execution after
    /// a re-draw.
    chain: Vec<OperationDef>,
    last_split: Option<OperationDef>,
}

/// Optimizes a pipeline: walks each step left to right, forms sub-pipelines
/// from the longest directive-matching operator window, asks the validation
/// agent whether the original output is satisfactory, and otherwise
/// generates, rates, and pairwise-compares rewrite candidates on a
/// size-weighted sample. Returns the original spec unchanged (clone) when
/// every sub-pipeline is satisfactory.
pub fn optimize_pipeline(
    spec: &PipelineSpec,
    data: &BTreeMap<String, Dataset>,
    gateway: &Gateway,
    agent: &dyn AgentInterface,
    config: &OptimizerConfig,
) -> Result<OptimizeOutcome, OptimizeError> {
    config.check()?;
    let diags = validate_pipeline(spec);
    if !diags.is_empty() {
        return Err(OptimizeError::Invalid(diags));
    }
    for name in spec.datasets.keys() {
        let ds = data
            .get(name)
            .ok_or_else(|| OptimizeError::MissingData(name.clone()))?;
        if ds.documents.is_empty() {
            return Err(OptimizeError::EmptyData(name.clone()));
        }
    }

    let mut ctx = ExecContext::new(gateway);
    ctx.tokenizer = config.tokenizer;
    if let Some(model) = &spec.default_model {
        ctx.default_model = model.clone();
    }

    let mut env: BTreeMap<String, ChainState> = BTreeMap::new();
    let mut decisions = Vec::new();
    let mut counters = Counters::default();
    let mut changed = false;
    let mut new_steps: Vec<StepDef> = Vec::new();
    let mut new_operations: Vec<OperationDef> = Vec::new();
    let mut prev_step: Option<String> = None;

    let state_for = |name: &str, env: &BTreeMap<String, ChainState>| -> Result<ChainState, OptimizeError> {
        if let Some(state) = env.get(name) {
            return Ok(state.clone());
        }
        let base = data
            .get(name)
            .ok_or_else(|| OptimizeError::MissingData(name.to_string()))?;
        let sample = draw_sample(base, config.base_sample_size, config.seed, &config.tokenizer);
        Ok(ChainState {
            root_drawn: sample.len(),
            sample,
            ledger: SelectivityLedger::new(),
            root: Some(name.to_string()),
            chain: Vec::new(),
            last_split: None,
        })
    };

    for step in &spec.steps {
        let ops: Vec<OperationDef> = step
            .operations
            .iter()
            .map(|name| spec.operation(name).expect("validated").clone())
            .collect();
        let is_join = ops.first().is_some_and(|op| op.kind == OperatorKind::Equijoin);

        let mut step_def = step.clone();
        let mut step_ops: Vec<OperationDef> = Vec::new();
        let mut state;
        let mut rest = ops.as_slice();

        if is_join {
            let left_name = step.left_input.as_ref().expect("validated");
            let right_name = step.right_input.as_ref().expect("validated");
            let left = state_for(left_name, &env)?;
            let right = state_for(right_name, &env)?;
            let join_op = ops[0].clone();
            let sp = SubPipeline::new(vec![join_op.clone()]);
            let input = SpInput::Join(left.sample.clone(), right.sample.clone());
            let (winner, out, record) =
                optimize_subpipeline(&sp, &input, None, &step.name, agent, &ctx, config, &mut counters)?;
            if winner.ops != sp.ops {
                changed = true;
            }
            let in_len = left.sample.len() + right.sample.len();
            let selectivity = if in_len == 0 { 0.0 } else { out.len() as f64 / in_len as f64 };
            decisions.push(record);

            // A pre-join winner carries per-side projection maps; splice
            // them in as prep steps feeding the join.
            let join_at = winner
                .ops
                .iter()
                .position(|op| op.kind == OperatorKind::Equijoin)
                .expect("join preserved by join-pattern directives");
            let pre = &winner.ops[..join_at];
            let (left_pre, right_pre) = if pre.len() == 2 {
                (&pre[..1], &pre[1..])
            } else {
                (pre, &pre[..0])
            };
            if !left_pre.is_empty() {
                let name = format!("{}_left_prep", step.name);
                new_steps.push(StepDef {
                    name: name.clone(),
                    input: Some(left_name.clone()),
                    left_input: None,
                    right_input: None,
                    operations: left_pre.iter().map(|op| op.name.clone()).collect(),
                });
                step_def.left_input = Some(name);
            }
            if !right_pre.is_empty() {
                let name = format!("{}_right_prep", step.name);
                new_steps.push(StepDef {
                    name: name.clone(),
                    input: Some(right_name.clone()),
                    left_input: None,
                    right_input: None,
                    operations: right_pre.iter().map(|op| op.name.clone()).collect(),
                });
                step_def.right_input = Some(name);
            }
            new_operations.extend(winner.ops.iter().cloned());
            step_ops.push(winner.ops[join_at].clone());

            let mut ledger = SelectivityLedger::new();
            ledger.push(winner.op_names().join("+"), selectivity);
            state = ChainState {
                sample: out,
                ledger,
                root: None,
                root_drawn: 0,
                chain: Vec::new(),
                last_split: None,
            };
            rest = &ops[1..];
        } else {
            let input_name = step
                .input
                .clone()
                .or_else(|| prev_step.clone())
                .or_else(|| {
                    (spec.datasets.len() == 1)
                        .then(|| spec.datasets.keys().next().unwrap().clone())
                })
                .expect("validated");
            state = state_for(&input_name, &env)?;
        }

        let mut i = 0;
        while i < rest.len() {
            let take_two = i + 1 < rest.len()
                && ALL_DIRECTIVES
                    .iter()
                    .any(|d| d.pattern() == [rest[i].kind, rest[i + 1].kind]);
            let window: Vec<OperationDef> = rest[i..i + if take_two { 2 } else { 1 }].to_vec();
            i += window.len();

            let mut warnings = Vec::new();
            maybe_resample(&mut state, data, config, &ctx, &mut warnings)?;

            let sp = SubPipeline::new(window.clone());
            let input = SpInput::Single(state.sample.clone());
            let (winner, out, mut record) = optimize_subpipeline(
                &sp,
                &input,
                state.last_split.as_ref(),
                &step.name,
                agent,
                &ctx,
                config,
                &mut counters,
            )?;
            record.warnings.extend(warnings);
            if winner.ops != window {
                changed = true;
            }
            let in_len = state.sample.len();
            let selectivity = if in_len == 0 { 0.0 } else { out.len() as f64 / in_len as f64 };
            state.ledger.push(winner.op_names().join("+"), selectivity);
            for op in &winner.ops {
                if op.kind == OperatorKind::Split {
                    state.last_split = Some(op.clone());
                }
            }
            state.chain.extend(winner.ops.iter().cloned());
            state.sample = out;
            step_ops.extend(winner.ops.iter().cloned());
            new_operations.extend(winner.ops.iter().cloned());
            decisions.push(record);
        }

        // Pre-join winners live in their own prep steps pushed above; the
        // step itself keeps the join plus whatever followed it.
        step_def.operations = step_ops.iter().map(|op| op.name.clone()).collect();
        new_steps.push(step_def);
        env.insert(step.name.clone(), state);
        prev_step = Some(step.name.clone());
    }

    let pipeline = if changed {
        let mut seen = std::collections::BTreeSet::new();
        let operations: Vec<OperationDef> = new_operations
            .into_iter()
            .filter(|op| seen.insert(op.name.clone()))
            .collect();
        PipelineSpec {
            version: spec.version,
            default_model: spec.default_model.clone(),
            datasets: spec.datasets.clone(),
            operations,
            steps: new_steps,
            output: spec.output.clone(),
        }
    } else {
        spec.clone()
    };

    Ok(OptimizeOutcome {
        pipeline,
        decisions,
        candidate_executions: counters.candidate_executions,
        directive_applications: counters.directive_applications,
    })
}

/// Enlarges the chain's sample when observed selectivities imply fewer
/// than `base_sample_size` documents will reach the current target. Only
/// chains rooted at a dataset can be enlarged; the redrawn sample is
/// re-run through the chain's already-optimized operations.
fn maybe_resample(
    state: &mut ChainState,
    data: &BTreeMap<String, Dataset>,
    config: &OptimizerConfig,
    ctx: &ExecContext,
    warnings: &mut Vec<String>,
) -> Result<(), OptimizeError> {
    if state.ledger.entries.is_empty() {
        return Ok(());
    }
    let needed = required_sample_size(config.base_sample_size, &state.ledger)?;
    if state.sample.len() >= config.base_sample_size.min(needed) {
        return Ok(());
    }
    let Some(root) = state.root.clone() else {
        warnings.push(format!(
            "sample of {} documents is below the target {}; cannot resample across a join",
            state.sample.len(),
            config.base_sample_size
        ));
        return Ok(());
    };
    let base = &data[&root];
    let draw = needed.min(base.len());
    if draw <= state.root_drawn {
        warnings.push(format!(
            "dataset '{root}' is exhausted at {} documents; wanted {needed}",
            base.len()
        ));
        return Ok(());
    }
    let fresh = draw_sample(base, draw, config.seed, &config.tokenizer);
    let sp = SubPipeline::new(state.chain.clone());
    match exec_sub(&sp, &SpInput::Single(fresh), None, ctx) {
        Ok(out) => {
            state.root_drawn = draw;
            state.sample = out;
        }
        Err(e) => warnings.push(format!("resampling failed, keeping the smaller sample: {e}")),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn optimize_subpipeline(
    sp: &SubPipeline,
    input: &SpInput,
    prior_split: Option<&OperationDef>,
    step: &str,
    agent: &dyn AgentInterface,
    ctx: &ExecContext,
    config: &OptimizerConfig,
    counters: &mut Counters,
) -> Result<(SubPipeline, Dataset, DecisionRecord), OptimizeError> {
    let mut record = DecisionRecord {
        step: step.to_string(),
        target_ops: sp.op_names(),
        directives: Vec::new(),
        satisfactory: false,
        candidates: Vec::new(),
        selection: None,
        winner_ops: sp.op_names(),
        warnings: Vec::new(),
    };

    counters.candidate_executions += 1;
    let orig_out = exec_sub(sp, input, prior_split, ctx).map_err(DslError::Op)?;

    let directives = match_directives(sp);
    if directives.is_empty() {
        record.satisfactory = true;
        return Ok((sp.clone(), orig_out, record));
    }
    record.directives = directives;

    let sample_in = match input {
        SpInput::Single(ds) => ds.clone(),
        SpInput::Join(l, r) => {
            let mut docs = l.documents.clone();
            docs.extend(r.documents.clone());
            Dataset::new(docs)
        }
    };

    let vprompt = agent.synthesize_validator_prompt(&sample_in, &orig_out, sp)?;
    let validation = agent.validate(&orig_out, &vprompt)?;
    if validation.satisfactory {
        record.satisfactory = true;
        return Ok((sp.clone(), orig_out, record));
    }

    let avg_tokens = if sample_in.documents.is_empty() {
        1
    } else {
        (sample_in
            .iter()
            .map(|d| document_weight(d, &ctx.tokenizer))
            .sum::<usize>()
            / sample_in.len())
        .max(1)
    };
    let params = RewriteParams::derive(ctx.tokenizer.context_limit, avg_tokens, config.gleaning_k);

    let mut candidates = vec![sp.clone()];
    gen_candidates(
        sp,
        agent,
        &sample_in,
        &params,
        1,
        config.max_rewrite_depth,
        counters,
        &mut candidates,
    )?;
    add_fold_variants(sp, ctx, avg_tokens, &mut candidates);
    record.candidates = candidates.iter().map(|c| c.op_names()).collect();

    let outputs: RefCell<Vec<Option<Dataset>>> = RefCell::new(vec![None; candidates.len()]);
    let execs = Cell::new(0usize);
    let selection = select_plan(
        candidates.len(),
        1,
        |c, _| {
            if c == 0 {
                outputs.borrow_mut()[0] = Some(orig_out.clone());
                return Ok(orig_out.clone());
            }
            execs.set(execs.get() + 1);
            match exec_sub(&candidates[c], input, prior_split, ctx) {
                Ok(ds) => {
                    outputs.borrow_mut()[c] = Some(ds.clone());
                    Ok(ds)
                }
                Err(e) => Err(e.to_string()),
            }
        },
        &vprompt,
        config.top_k,
        agent,
    )?;
    counters.candidate_executions += execs.get();

    let Some(selection) = selection else {
        record
            .warnings
            .push("every candidate failed on the sample; keeping the original".into());
        return Ok((sp.clone(), orig_out, record));
    };
    let winner = candidates[selection.winner].clone();
    let winner_out = outputs.borrow()[selection.winner]
        .clone()
        .expect("winner was executed");
    record.winner_ops = winner.op_names();
    record.selection = Some(selection);
    Ok((winner, winner_out, record))
}

/// Generates rewrite candidates for a sub-pipeline, recursing (up to
/// `max_depth`) into candidates that introduce new operations, since those
/// may themselves admit profitable rewrites.
#[allow(clippy::too_many_arguments)]
fn gen_candidates(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
    params: &RewriteParams,
    depth: usize,
    max_depth: usize,
    counters: &mut Counters,
    out: &mut Vec<SubPipeline>,
) -> Result<(), AgentError> {
    for d in match_directives(sp) {
        counters.directive_applications += 1;
        for cand in apply_directive(d, sp, agent, sample, params)? {
            if cand == *sp || out.contains(&cand) {
                continue;
            }
            let introduces_new = cand
                .ops
                .iter()
                .any(|op| !sp.ops.iter().any(|o| o.name == op.name));
            out.push(cand.clone());
            if depth < max_depth && introduces_new {
                gen_candidates(&cand, agent, sample, params, depth + 1, max_depth, counters, out)?;
            }
        }
    }
    Ok(())
}

const DEFAULT_FOLD_PROMPT: &str = "Merge the accumulated result with this batch of new items.\n\
     Accumulated result: {{ output }}\nNew items: {{ inputs }}";

/// Batched-folding variants of a trailing reduce: same aggregation, but
/// folding `fold_batch_size` members at a time.
fn add_fold_variants(
    sp: &SubPipeline,
    ctx: &ExecContext,
    avg_tokens: usize,
    candidates: &mut Vec<SubPipeline>,
) {
    let Some(last) = sp.ops.last() else { return };
    if last.kind != OperatorKind::Reduce || last.fold_batch_size.is_some() {
        return;
    }
    for batch in gen_fold_batch_candidates(ctx.tokenizer.context_limit, avg_tokens.max(1)) {
        let mut variant = sp.clone();
        let reduce = variant.ops.last_mut().expect("non-empty");
        reduce.fold_batch_size = Some(batch);
        if reduce.fold_prompt.is_none() {
            reduce.fold_prompt = Some(TemplateString::new(DEFAULT_FOLD_PROMPT));
        }
        if !candidates.contains(&variant) && variant.validate().is_empty() {
            candidates.push(variant);
        }
    }
}

/// Executes a sub-pipeline on its (sampled) input. Joins split their
/// preceding maps across the two sides the same way the wrapper pipeline
/// does: two maps mean one per side, otherwise all feed the left.
fn exec_sub(
    sp: &SubPipeline,
    input: &SpInput,
    prior_split: Option<&OperationDef>,
    ctx: &ExecContext,
) -> Result<Dataset, OpError> {
    let run_linear = |ops: &[OperationDef],
                      start: &Dataset,
                      mut last_split: Option<OperationDef>|
     -> Result<Dataset, OpError> {
        let mut cur = start.clone();
        for op in ops {
            let effective = effective_gather(op, last_split.as_ref());
            cur = execute_operation(&effective, &cur, ctx)?;
            if op.kind == OperatorKind::Split {
                last_split = Some(op.clone());
            }
        }
        Ok(cur)
    };
    let join_at = sp.ops.iter().position(|op| op.kind == OperatorKind::Equijoin);
    match (join_at, input) {
        (None, SpInput::Single(ds)) => run_linear(&sp.ops, ds, prior_split.cloned()),
        (Some(j), SpInput::Join(left, right)) => {
            let pre = &sp.ops[..j];
            let (left_pre, right_pre) = if pre.len() == 2 {
                (&pre[..1], &pre[1..])
            } else {
                (pre, &pre[..0])
            };
            let l = run_linear(left_pre, left, None)?;
            let r = run_linear(right_pre, right, None)?;
            let joined = exec_equijoin(&sp.ops[j], &l, &r, ctx)?;
            run_linear(&sp.ops[j + 1..], &joined, None)
        }
        _ => Err(OpError::BadConfig {
            op: sp.op_names().join("+"),
            reason: "sub-pipeline shape does not match its input arity".into(),
        }),
    }
}

/// Fills in gather's id/order keys from the nearest upstream split when
/// left implicit, mirroring pipeline execution.
fn effective_gather(op: &OperationDef, last_split: Option<&OperationDef>) -> OperationDef {
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
