//! The YAML pipeline language: parsing, static validation with schema
//! propagation, and execution with per-operation statistics.

mod execute;
mod spec;
mod validate;

pub use execute::{execute_pipeline, load_datasets, ExecFailure, OpStats, RunStats};
pub use spec::{
    parse_pipeline, print_pipeline, DatasetKind, DatasetRef, DslError, OutputTarget, PipelineSpec,
    StepDef, PIPELINE_VERSION,
};
pub use validate::{validate_pipeline, validate_pipeline_with, AttrInfo};
