//! The operator algebra: typed executors over datasets of documents.
//! Split, gather, and unnest are pure; the rest drive the gateway.

mod def;
mod equijoin;
mod gather;
pub(crate) mod llm;
mod map;
mod reduce;
mod resolve;
mod split;
mod unnest;

pub use def::{
    BlockingConfig, GatherSection, GatherSpec, GatherSubsection, GleaningConfig, OperationDef,
    OperatorKind, OutputSpec, ParallelPrompt, PeripheralSpec, SplitMethodKind, SplitMethodKwargs,
    GLOBAL_REDUCE_KEY, INVALID_FLAG,
};
pub use equijoin::exec_equijoin;
pub use gather::exec_gather;
pub use map::{exec_filter, exec_map, exec_parallel_map};
pub use reduce::exec_reduce;
pub use resolve::exec_resolve;
pub use split::exec_split;
pub use unnest::exec_unnest;

use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::model::{TemplateError, Tokenizer};

#[derive(Debug, Error)]
pub enum OpError {
    #[error("operation '{op}': document {index} is missing attribute '{key}'")]
    MissingKey {
        op: String,
        key: String,
        index: usize,
    },
    #[error("operation '{op}': attribute '{key}' on document {index} is not {expected}")]
    WrongType {
        op: String,
        key: String,
        index: usize,
        expected: &'static str,
    },
    #[error("operation '{op}' requires '{field}'")]
    MissingField { op: String, field: &'static str },
    #[error("operation '{op}': {reason}")]
    BadConfig { op: String, reason: String },
    #[error("operation '{op}': group {key} is not ordered by the order key")]
    UnorderedGroup { op: String, key: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Everything an executor needs besides the operation and its input.
pub struct ExecContext<'a> {
    pub gateway: &'a Gateway,
    pub default_model: String,
    /// Maximum validated retries per request.
    pub max_retries: u32,
    pub tokenizer: Tokenizer,
}

impl<'a> ExecContext<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Self {
            gateway,
            default_model: "gpt-4o-mini".to_string(),
            max_retries: 2,
            tokenizer: Tokenizer::default(),
        }
    }

    pub fn model_for(&self, op: &OperationDef) -> String {
        op.model.clone().unwrap_or_else(|| self.default_model.clone())
    }
}

/// Dispatches one operation against a dataset.
pub fn execute_operation(
    op: &OperationDef,
    ds: &crate::model::Dataset,
    ctx: &ExecContext,
) -> Result<crate::model::Dataset, OpError> {
    match op.kind {
        OperatorKind::Map => exec_map(op, ds, ctx),
        OperatorKind::ParallelMap => exec_parallel_map(op, ds, ctx),
        OperatorKind::Filter => exec_filter(op, ds, ctx),
        OperatorKind::Reduce => exec_reduce(op, ds, ctx),
        OperatorKind::Resolve => exec_resolve(op, ds, ctx),
        OperatorKind::Equijoin => Err(OpError::BadConfig {
            op: op.name.clone(),
            reason: "equijoin takes two inputs; use exec_equijoin".into(),
        }),
        OperatorKind::Split => exec_split(op, ds, ctx),
        OperatorKind::Gather => {
            let spec = gather::resolve_gather_spec(op)?;
            exec_gather(&op.name, &spec, ds)
        }
        OperatorKind::Unnest => exec_unnest(op, ds),
    }
}
