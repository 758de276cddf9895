use serde::{Deserialize, Serialize};

use crate::gateway::ValidationStatement;
use crate::model::{SchemaSpec, TemplateString};

/// The nine operator kinds of the engine. Split, Gather, and Unnest never
/// call the completion backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Map,
    ParallelMap,
    Filter,
    Reduce,
    Resolve,
    Equijoin,
    Split,
    Gather,
    Unnest,
}

impl OperatorKind {
    pub fn uses_llm(&self) -> bool {
        !matches!(
            self,
            OperatorKind::Split | OperatorKind::Gather | OperatorKind::Unnest
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub schema: SchemaSpec,
}

/// One projection of a parallel map: an independent prompt with its own
/// output schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelPrompt {
    pub prompt: TemplateString,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethodKind {
    TokenCount,
    Delimiter,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMethodKwargs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<String>,
}

/// A gather subsection: how many chunks to include and which attribute to
/// render for them. Middle subsections take all remaining chunks and
/// ignore `count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatherSubsection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub content_key: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatherSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<GatherSubsection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub middle: Option<GatherSubsection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<GatherSubsection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeripheralSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<GatherSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<GatherSection>,
}

/// Fully-resolved gather configuration (id/order keys known).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatherSpec {
    pub content_key: String,
    pub doc_id_key: String,
    pub order_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_header_key: Option<String>,
    #[serde(default)]
    pub peripheral: PeripheralSpec,
}

/// Blocking for resolve/equijoin: a pair reaches the LLM comparison iff
/// its embedding cosine meets the threshold or any code rule fires.
/// Absent config means all pairs are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockingConfig {
    #[serde(default)]
    pub embedding_keys: Vec<String>,
    #[serde(default)]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub code_rules: Vec<ValidationStatement>,
}

/// Gleaning: up to `k` validator-guided refinement rounds attached to a
/// map or reduce operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GleaningConfig {
    pub validator_prompt: TemplateString,
    pub k: u32,
}

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

/// One typed operator instance, as authored in the DSL or synthesized by
/// the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationDef {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<TemplateString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison_prompt: Option<TemplateString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_prompt: Option<TemplateString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_prompt: Option<TemplateString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validate: Vec<ValidationStatement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drop_keys: Vec<String>,
    /// Parallel map projections.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompts: Vec<ParallelPrompt>,
    #[serde(
        default,
        skip_serializing_if = "Vec::is_empty",
        deserialize_with = "string_or_seq"
    )]
    pub reduce_key: Vec<String>,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub associative: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<SplitMethodKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method_kwargs: Option<SplitMethodKwargs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_header_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peripheral_chunks: Option<PeripheralSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unnest_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocking: Option<BlockingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gleaning: Option<GleaningConfig>,
}

impl OperationDef {
    pub fn new(name: impl Into<String>, kind: OperatorKind) -> Self {
        Self {
            name: name.into(),
            kind,
            model: None,
            prompt: None,
            comparison_prompt: None,
            resolution_prompt: None,
            fold_prompt: None,
            output: None,
            validate: Vec::new(),
            drop_keys: Vec::new(),
            prompts: Vec::new(),
            reduce_key: Vec::new(),
            associative: true,
            fold_batch_size: None,
            split_key: None,
            method: None,
            method_kwargs: None,
            content_key: None,
            doc_id_key: None,
            order_key: None,
            doc_header_key: None,
            peripheral_chunks: None,
            unnest_key: None,
            blocking: None,
            gleaning: None,
        }
    }

    pub fn output_schema(&self) -> SchemaSpec {
        self.output
            .as_ref()
            .map(|o| o.schema.clone())
            .unwrap_or_default()
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = Some(TemplateString::new(prompt));
        self
    }

    pub fn with_schema(mut self, schema: SchemaSpec) -> Self {
        self.output = Some(OutputSpec { schema });
        self
    }

    /// Conventional attribute names emitted by a split operation.
    pub fn split_chunk_attr(&self) -> Option<String> {
        self.split_key.as_ref().map(|k| format!("{k}_chunk"))
    }

    pub fn split_id_attr(&self) -> String {
        format!("{}_id", self.name)
    }

    pub fn split_chunk_num_attr(&self) -> String {
        format!("{}_chunk_num", self.name)
    }
}

fn string_or_seq<'de, D>(deserializer: D) -> Result<Vec<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum StringOrSeq {
        One(String),
        Many(Vec<String>),
    }
    Ok(match StringOrSeq::deserialize(deserializer)? {
        StringOrSeq::One(s) => vec![s],
        StringOrSeq::Many(v) => v,
    })
}

/// The attribute set on documents whose retries were exhausted; they are
/// carried through rather than dropped.
pub const INVALID_FLAG: &str = "_docetl_invalid";

/// Reduce key meaning "one global group".
pub const GLOBAL_REDUCE_KEY: &str = "_all";
