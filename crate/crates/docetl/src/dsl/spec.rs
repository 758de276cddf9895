use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::{OpError, OperationDef, OperatorKind};

pub const PIPELINE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DslError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported pipeline version {0} (expected {PIPELINE_VERSION})")]
    Version(u32),
    #[error("operation '{op}' ({kind:?}) requires '{field}'")]
    MissingField {
        op: String,
        kind: OperatorKind,
        field: &'static str,
    },
    #[error("pipeline is not valid:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("unknown name '{0}' referenced by {1}")]
    UnknownName(String, String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset {path}: {message}")]
    BadDataset { path: String, message: String },
    #[error(transparent)]
    Op(#[from] OpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    #[serde(rename = "type")]
    pub kind: DatasetKind,
    pub path: String,
}

/// One pipeline step: a named stage applying operations in order to its
/// input. `input` names a dataset or an earlier step and defaults to the
/// previous step (or the sole dataset for the first step). Steps whose
/// first operation is an equijoin use `left_input`/`right_input` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_input: Option<String>,
    pub operations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTarget {
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_model: Option<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub datasets: IndexMap<String, DatasetRef>,
    pub operations: Vec<OperationDef>,
    pub steps: Vec<StepDef>,
    pub output: OutputTarget,
}

impl PipelineSpec {
    pub fn operation(&self, name: &str) -> Option<&OperationDef> {
        self.operations.iter().find(|op| op.name == name)
    }
}

/// Parses and structurally checks a pipeline. Unknown keys and type
/// mismatches are rejected with their YAML location; kind-required fields
/// are checked for every operation.
pub fn parse_pipeline(yaml_text: &str) -> Result<PipelineSpec, DslError> {
    let spec: PipelineSpec = serde_yaml::from_str(yaml_text).map_err(|e| {
        let location = e.location();
        DslError::Parse {
            line: location.as_ref().map(|l| l.line()).unwrap_or(0),
            column: location.as_ref().map(|l| l.column()).unwrap_or(0),
            message: e.to_string(),
        }
    })?;
    if spec.version != PIPELINE_VERSION {
        return Err(DslError::Version(spec.version));
    }
    for op in &spec.operations {
        check_kind_fields(op)?;
    }
    Ok(spec)
}

/// Serializes a spec back to YAML. `parse_pipeline(print_pipeline(s)) == s`.
pub fn print_pipeline(spec: &PipelineSpec) -> String {
    serde_yaml::to_string(spec).expect("pipeline spec serializes")
}

pub(crate) fn check_kind_fields(op: &OperationDef) -> Result<(), DslError> {
    let missing = |field: &'static str| DslError::MissingField {
        op: op.name.clone(),
        kind: op.kind,
        field,
    };
    let require = |present: bool, field: &'static str| {
        if present {
            Ok(())
        } else {
            Err(missing(field))
        }
    };
    match op.kind {
        OperatorKind::Map | OperatorKind::Filter => {
            require(op.prompt.is_some(), "prompt")?;
            require(
                op.output.as_ref().is_some_and(|o| !o.schema.is_empty()),
                "output.schema",
            )?;
        }
        OperatorKind::ParallelMap => {
            require(!op.prompts.is_empty(), "prompts")?;
        }
        OperatorKind::Reduce => {
            require(op.prompt.is_some(), "prompt")?;
            require(
                op.output.as_ref().is_some_and(|o| !o.schema.is_empty()),
                "output.schema",
            )?;
            if op.fold_batch_size.is_some() {
                require(op.fold_prompt.is_some(), "fold_prompt")?;
            }
        }
        OperatorKind::Resolve => {
            require(op.comparison_prompt.is_some(), "comparison_prompt")?;
            require(op.resolution_prompt.is_some(), "resolution_prompt")?;
            require(
                op.output.as_ref().is_some_and(|o| !o.schema.is_empty()),
                "output.schema",
            )?;
        }
        OperatorKind::Equijoin => {
            require(op.comparison_prompt.is_some(), "comparison_prompt")?;
        }
        OperatorKind::Split => {
            require(op.split_key.is_some(), "split_key")?;
            require(op.method.is_some(), "method")?;
            match op.method {
                Some(crate::ops::SplitMethodKind::TokenCount) => require(
                    op.method_kwargs.as_ref().is_some_and(|k| k.num_tokens.is_some()),
                    "method_kwargs.num_tokens",
                )?,
                Some(crate::ops::SplitMethodKind::Delimiter) => require(
                    op.method_kwargs.as_ref().is_some_and(|k| k.delimiter.is_some()),
                    "method_kwargs.delimiter",
                )?,
                None => {}
            }
        }
        OperatorKind::Gather => {
            require(op.content_key.is_some(), "content_key")?;
        }
        OperatorKind::Unnest => {
            require(op.unnest_key.is_some(), "unnest_key")?;
        }
    }
    Ok(())
}
