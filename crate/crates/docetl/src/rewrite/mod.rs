//! The rewrite catalog: thirteen abstract directives matched syntactically
//! against operator sequences and instantiated concretely by an agent,
//! plus the deterministic parameter-candidate generators that drive them.

mod apply;
mod calibrate;
mod candidates;

pub use apply::{apply_directive, RewriteParams};
pub use calibrate::{
    calibrate_blocking_threshold, top_pairs_by_cosine, ScoredPair, DEFAULT_CALIBRATION_PAIRS,
};
pub use candidates::{
    gen_chunk_candidates, gen_fold_batch_candidates, ChunkCandidate, CHUNK_CONTENT_PLACEHOLDER,
};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dsl::{validate_pipeline_with, DatasetKind, DatasetRef, OutputTarget, PipelineSpec, StepDef};
use crate::model::{SchemaSpec, TypeExpr};
use crate::ops::{OperationDef, OperatorKind};

/// The thirteen rewrite directives. Each is an abstract pattern over
/// operator kinds; applying one replaces the matched suffix of a
/// sub-pipeline with the directive's expansion, with an agent supplying
/// prompts, schemas, and keys for any newly created operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DirectiveId {
    /// Map ⇒ Split → Gather → Map → Reduce: process long documents chunk
    /// by chunk, then merge the per-chunk results per original document.
    Chunking,
    /// Split ⇒ Map → Split: extract document-level metadata once so every
    /// chunk carries it.
    Metadata,
    /// Split → Gather ⇒ Split → Map → Gather: extract per-chunk headers so
    /// gathering can prepend header lineage.
    HeaderExtraction,
    /// Gather ⇒ Gather → Filter: discard chunks that cannot contain
    /// relevant information before the expensive per-chunk work.
    ChunkFiltering,
    /// Gather → Map ⇒ Gather → Map → Unnest, when the map emits a single
    /// list attribute: flatten so downstream operators see one element per
    /// document.
    FlattenList,
    /// Reduce ⇒ Reduce → Reduce: aggregate at a finer key first, then roll
    /// the partial aggregates up to the original key.
    MultiLevelReduce,
    /// Attach a validator-guided refinement loop to a map.
    GleanMap,
    /// Attach a validator-guided refinement loop to a reduce.
    GleanReduce,
    /// Reduce ⇒ Resolve → Reduce: consolidate semantically equivalent key
    /// values before grouping.
    ResolveBeforeReduce,
    /// Map ⇒ Map → Map: split one extraction into a chain whose composed
    /// output schema equals the original.
    MapChaining,
    /// Map ⇒ ParallelMap: isolate each output attribute into its own
    /// projection; the combining step degenerates to an attribute merge.
    ParallelizeMap,
    /// Reduce ⇒ Map → Reduce: condense each document before aggregation.
    PreAggregation,
    /// Equijoin ⇒ Map ∥ Map → Equijoin: project each side onto
    /// join-relevant fields before comparing pairs.
    PreJoinMap,
}

pub const ALL_DIRECTIVES: [DirectiveId; 13] = [
    DirectiveId::Chunking,
    DirectiveId::Metadata,
    DirectiveId::HeaderExtraction,
    DirectiveId::ChunkFiltering,
    DirectiveId::FlattenList,
    DirectiveId::MultiLevelReduce,
    DirectiveId::GleanMap,
    DirectiveId::GleanReduce,
    DirectiveId::ResolveBeforeReduce,
    DirectiveId::MapChaining,
    DirectiveId::ParallelizeMap,
    DirectiveId::PreAggregation,
    DirectiveId::PreJoinMap,
];

impl DirectiveId {
    /// The operator-kind suffix this directive rewrites.
    pub fn pattern(&self) -> &'static [OperatorKind] {
        use OperatorKind::*;
        match self {
            DirectiveId::Chunking => &[Map],
            DirectiveId::Metadata => &[Split],
            DirectiveId::HeaderExtraction => &[Split, Gather],
            DirectiveId::ChunkFiltering => &[Gather],
            DirectiveId::FlattenList => &[Gather, Map],
            DirectiveId::MultiLevelReduce => &[Reduce],
            DirectiveId::GleanMap => &[Map],
            DirectiveId::GleanReduce => &[Reduce],
            DirectiveId::ResolveBeforeReduce => &[Reduce],
            DirectiveId::MapChaining => &[Map],
            DirectiveId::ParallelizeMap => &[Map],
            DirectiveId::PreAggregation => &[Reduce],
            DirectiveId::PreJoinMap => &[Equijoin],
        }
    }

    /// Whether instantiation needs the agent to supply prompts or schemas.
    /// Matching is always purely syntactic; even agent-backed directives
    /// may still be declined at instantiation time.
    pub fn requires_agent(&self) -> bool {
        !matches!(self, DirectiveId::FlattenList)
    }
}

/// A contiguous operator sequence targeted by one optimization step,
/// together with what is known about its input attributes (empty schema
/// means unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct SubPipeline {
    pub ops: Vec<OperationDef>,
    pub input_schema: SchemaSpec,
}

impl SubPipeline {
    pub fn new(ops: Vec<OperationDef>) -> Self {
        Self {
            ops,
            input_schema: SchemaSpec::new(),
        }
    }

    pub fn with_input_schema(mut self, schema: SchemaSpec) -> Self {
        self.input_schema = schema;
        self
    }

    pub fn kinds(&self) -> Vec<OperatorKind> {
        self.ops.iter().map(|op| op.kind).collect()
    }

    pub fn op_names(&self) -> Vec<String> {
        self.ops.iter().map(|op| op.name.clone()).collect()
    }

    /// Diagnostics from splicing this sub-pipeline into a synthetic
    /// pipeline over its input schema. Empty iff the sub-pipeline is
    /// executable on such an input.
    pub fn validate(&self) -> Vec<String> {
        let spec = self.wrapper_pipeline();
        let mut dataset_attrs = std::collections::BTreeMap::new();
        if !self.input_schema.is_empty() {
            let attrs: std::collections::BTreeSet<String> = self
                .input_schema
                .attribute_names()
                .map(str::to_string)
                .collect();
            dataset_attrs.insert("source".to_string(), attrs);
        }
        validate_pipeline_with(&spec, &dataset_attrs)
    }

    /// Wraps the operator list into a synthetic one-output pipeline. An
    /// equijoin (always last) turns any preceding maps into per-side prep
    /// steps: two maps mean one per side, otherwise all go to the left.
    fn wrapper_pipeline(&self) -> PipelineSpec {
        let file = |_: &str| DatasetRef {
            kind: DatasetKind::File,
            path: "unused.json".to_string(),
        };
        let join_at = self.ops.iter().position(|op| op.kind == OperatorKind::Equijoin);
        let (datasets, steps) = match join_at {
            None => {
                let datasets: IndexMap<String, DatasetRef> =
                    [("source".to_string(), file("source"))].into_iter().collect();
                let steps = vec![StepDef {
                    name: "spliced".to_string(),
                    input: Some("source".to_string()),
                    left_input: None,
                    right_input: None,
                    operations: self.ops.iter().map(|op| op.name.clone()).collect(),
                }];
                (datasets, steps)
            }
            Some(j) => {
                let datasets: IndexMap<String, DatasetRef> = [
                    ("left_source".to_string(), file("left")),
                    ("right_source".to_string(), file("right")),
                ]
                .into_iter()
                .collect();
                let pre = &self.ops[..j];
                let (left_pre, right_pre) = if pre.len() == 2 {
                    (&pre[..1], &pre[1..])
                } else {
                    (pre, &pre[..0])
                };
                let mut steps = Vec::new();
                let mut left_input = "left_source".to_string();
                let mut right_input = "right_source".to_string();
                if !left_pre.is_empty() {
                    steps.push(StepDef {
                        name: "left_prep".to_string(),
                        input: Some(left_input.clone()),
                        left_input: None,
                        right_input: None,
                        operations: left_pre.iter().map(|op| op.name.clone()).collect(),
                    });
                    left_input = "left_prep".to_string();
                }
                if !right_pre.is_empty() {
                    steps.push(StepDef {
                        name: "right_prep".to_string(),
                        input: Some(right_input.clone()),
                        left_input: None,
                        right_input: None,
                        operations: right_pre.iter().map(|op| op.name.clone()).collect(),
                    });
                    right_input = "right_prep".to_string();
                }
                steps.push(StepDef {
                    name: "spliced".to_string(),
                    input: None,
                    left_input: Some(left_input),
                    right_input: Some(right_input),
                    operations: self.ops[j..].iter().map(|op| op.name.clone()).collect(),
                });
                (datasets, steps)
            }
        };
        PipelineSpec {
            version: crate::dsl::PIPELINE_VERSION,
            default_model: None,
            datasets,
            operations: self.ops.clone(),
            steps,
            output: OutputTarget {
                path: "unused_out.json".to_string(),
            },
        }
    }
}

/// All directives whose pattern matches a suffix of the sub-pipeline, in
/// catalog order. Flattening additionally requires the map to emit exactly
/// one attribute of list type, since it is meaningless otherwise.
pub fn match_directives(sp: &SubPipeline) -> Vec<DirectiveId> {
    let kinds = sp.kinds();
    ALL_DIRECTIVES
        .iter()
        .copied()
        .filter(|d| {
            let pattern = d.pattern();
            if pattern.len() > kinds.len() || !kinds.ends_with(pattern) {
                return false;
            }
            if *d == DirectiveId::FlattenList {
                let map = sp.ops.last().expect("pattern matched");
                let schema = map.output_schema();
                return schema.entries.len() == 1
                    && matches!(schema.entries[0], TypeExpr::List(_));
            }
            true
        })
        .collect()
}
