use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, GatewayError};
use crate::model::{canonical_json, Dataset, SchemaSpec, TemplateString, Value};
use crate::ops::OperationDef;
use crate::rewrite::{DirectiveId, SubPipeline};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("agent reply malformed: {0}")]
    Malformed(String),
}

/// Output-quality criteria synthesized by the validation agent: a prompt
/// over `output` plus the rating scale it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPromptSpec {
    pub prompt: TemplateString,
    pub scale_max: u32,
}

impl ValidationPromptSpec {
    pub fn new(prompt: impl Into<String>, scale_max: u32) -> Self {
        Self {
            prompt: TemplateString::new(prompt),
            scale_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentValidation {
    pub satisfactory: bool,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareOutcome {
    A,
    B,
    Tie,
}

/// Call counters exposed by agent implementations so tests can assert the
/// exact number of exchanges the optimizer performs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentCallCounts {
    pub synthesize_config: u64,
    pub synthesize_validator_prompt: u64,
    pub validate: u64,
    pub rate: u64,
    pub compare: u64,
}

/// The two LLM roles driving optimization: a generation agent that
/// instantiates rewrites, and a validation agent that synthesizes and
/// applies output-quality checks. Every exchange is a structured JSON
/// object, so a scripted implementation can drive the whole optimizer
/// deterministically.
pub trait AgentInterface: Send + Sync {
    /// Completes (or adjusts) the configuration of an operation proposed by
    /// a rewrite. Returning `None` declines the rewrite.
    fn synthesize_config(
        &self,
        directive: DirectiveId,
        skeleton: &OperationDef,
        sample: &Dataset,
    ) -> Result<Option<OperationDef>, AgentError>;

    fn synthesize_validator_prompt(
        &self,
        sample_in: &Dataset,
        sample_out: &Dataset,
        sp: &SubPipeline,
    ) -> Result<ValidationPromptSpec, AgentError>;

    fn validate(
        &self,
        outputs: &Dataset,
        vprompt: &ValidationPromptSpec,
    ) -> Result<AgentValidation, AgentError>;

    /// Rates one output on a 1..=scale_max scale.
    fn rate(&self, output: &Dataset, vprompt: &ValidationPromptSpec) -> Result<u32, AgentError>;

    fn compare(
        &self,
        a: &Dataset,
        b: &Dataset,
        vprompt: &ValidationPromptSpec,
    ) -> Result<CompareOutcome, AgentError>;

    fn calls(&self) -> AgentCallCounts {
        AgentCallCounts::default()
    }
}

type ConfigFn = dyn Fn(DirectiveId, &OperationDef, &Dataset) -> Option<OperationDef> + Send + Sync;
type ValidatorPromptFn = dyn Fn(&SubPipeline) -> ValidationPromptSpec + Send + Sync;
type JudgeFn = dyn Fn(&Dataset) -> AgentValidation + Send + Sync;
type ScoreFn = dyn Fn(&Dataset) -> u32 + Send + Sync;
type PreferFn = dyn Fn(&Dataset, &Dataset) -> CompareOutcome + Send + Sync;

/// A fully programmable agent for tests and embedders: each exchange is a
/// plain closure. Defaults accept every skeleton unchanged, judge every
/// output satisfactory, rate 3, and call every comparison a tie.
pub struct ScriptedAgent {
    pub config: Box<ConfigFn>,
    pub validator_prompt: Box<ValidatorPromptFn>,
    pub judge: Box<JudgeFn>,
    pub score: Box<ScoreFn>,
    pub prefer: Box<PreferFn>,
    counts: Mutex<AgentCallCounts>,
}

impl Default for ScriptedAgent {
    fn default() -> Self {
        Self {
            config: Box::new(|_, skeleton, _| Some(skeleton.clone())),
            validator_prompt: Box::new(|_| {
                ValidationPromptSpec::new("Assess the quality of this output: {{ output }}", 5)
            }),
            judge: Box::new(|_| AgentValidation {
                satisfactory: true,
                notes: String::new(),
            }),
            score: Box::new(|_| 3),
            prefer: Box::new(|_, _| CompareOutcome::Tie),
            counts: Mutex::new(AgentCallCounts::default()),
        }
    }
}

impl ScriptedAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AgentInterface for ScriptedAgent {
    fn synthesize_config(
        &self,
        directive: DirectiveId,
        skeleton: &OperationDef,
        sample: &Dataset,
    ) -> Result<Option<OperationDef>, AgentError> {
        self.counts.lock().unwrap().synthesize_config += 1;
        Ok((self.config)(directive, skeleton, sample))
    }

    fn synthesize_validator_prompt(
        &self,
        _sample_in: &Dataset,
        _sample_out: &Dataset,
        sp: &SubPipeline,
    ) -> Result<ValidationPromptSpec, AgentError> {
        self.counts.lock().unwrap().synthesize_validator_prompt += 1;
        Ok((self.validator_prompt)(sp))
    }

    fn validate(
        &self,
        outputs: &Dataset,
        _vprompt: &ValidationPromptSpec,
    ) -> Result<AgentValidation, AgentError> {
        self.counts.lock().unwrap().validate += 1;
        Ok((self.judge)(outputs))
    }

    fn rate(&self, output: &Dataset, _vprompt: &ValidationPromptSpec) -> Result<u32, AgentError> {
        self.counts.lock().unwrap().rate += 1;
        Ok((self.score)(output))
    }

    fn compare(
        &self,
        a: &Dataset,
        b: &Dataset,
        _vprompt: &ValidationPromptSpec,
    ) -> Result<CompareOutcome, AgentError> {
        self.counts.lock().unwrap().compare += 1;
        Ok((self.prefer)(a, b))
    }

    fn calls(&self) -> AgentCallCounts {
        *self.counts.lock().unwrap()
    }
}

const AGENT_SYSTEM: &str =
    "You are a pipeline optimization agent. Respond with a single JSON object and nothing else.";

/// The gateway-backed agent: every exchange is one completion request with
/// a JSON reply. With a scripted backend this is fully deterministic; with
/// an HTTP backend it is the production path.
pub struct LlmAgent<'g> {
    pub gateway: &'g Gateway,
    pub model: String,
    pub scale_max: u32,
    trace: Option<Mutex<Vec<Value>>>,
    counts: Mutex<AgentCallCounts>,
}

impl<'g> LlmAgent<'g> {
    pub fn new(gateway: &'g Gateway, model: impl Into<String>) -> Self {
        Self {
            gateway,
            model: model.into(),
            scale_max: 5,
            trace: None,
            counts: Mutex::new(AgentCallCounts::default()),
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn with_scale_max(mut self, scale_max: u32) -> Self {
        self.scale_max = scale_max;
        self
    }

    /// The recorded exchanges, in order, when tracing is enabled.
    pub fn transcript(&self) -> Vec<Value> {
        self.trace
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }

    fn exchange(&self, user: String, schema: SchemaSpec) -> Result<Value, AgentError> {
        let req = CompletionRequest::new(&self.model, AGENT_SYSTEM)
            .with_user(user.clone())
            .with_schema(schema);
        let resp = self.gateway.complete(&req)?;
        let value = resp.attributes.as_value();
        if let Some(trace) = &self.trace {
            trace.lock().unwrap().push(serde_json::json!({
                "request": user,
                "response": value,
            }));
        }
        Ok(value)
    }

    fn sample_excerpt(sample: &Dataset) -> String {
        sample
            .iter()
            .take(3)
            .map(|d| canonical_json(&d.as_value()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn rendered_criteria(
        outputs: &Dataset,
        vprompt: &ValidationPromptSpec,
    ) -> Result<String, AgentError> {
        let bindings = std::collections::BTreeMap::from([(
            "output".to_string(),
            serde_json::to_value(outputs).expect("dataset serializes"),
        )]);
        vprompt
            .prompt
            .render(&bindings)
            .map_err(|e| AgentError::Malformed(e.to_string()))
    }
}

impl AgentInterface for LlmAgent<'_> {
    fn synthesize_config(
        &self,
        directive: DirectiveId,
        skeleton: &OperationDef,
        sample: &Dataset,
    ) -> Result<Option<OperationDef>, AgentError> {
        self.counts.lock().unwrap().synthesize_config += 1;
        let user = format!(
            "The {directive:?} rewrite proposes a new pipeline operation. Review it against \
             the sample documents. Reply with the full operation object (adjusting prompts, \
             schemas, or keys as needed), or with {{\"decline\": true}} if the rewrite is not \
             beneficial here.\nProposed operation:\n{}\nSample documents:\n{}",
            serde_json::to_string_pretty(skeleton).expect("operation serializes"),
            Self::sample_excerpt(sample),
        );
        let value = self.exchange(user, SchemaSpec::new())?;
        if value.get("decline").and_then(Value::as_bool) == Some(true) {
            return Ok(None);
        }
        serde_json::from_value(value)
            .map(Some)
            .map_err(|e| AgentError::Malformed(format!("not an operation object: {e}")))
    }

    fn synthesize_validator_prompt(
        &self,
        sample_in: &Dataset,
        sample_out: &Dataset,
        sp: &SubPipeline,
    ) -> Result<ValidationPromptSpec, AgentError> {
        self.counts.lock().unwrap().synthesize_validator_prompt += 1;
        let ops: Vec<&str> = sp.ops.iter().map(|op| op.name.as_str()).collect();
        let user = format!(
            "Write a validation prompt that assesses whether outputs of the sub-pipeline \
             [{}] are complete and accurate. The prompt may reference {{{{ output }}}}. Reply \
             as {{\"prompt\": \"...\", \"scale_max\": {}}}.\nSample input:\n{}\nSample output:\n{}",
            ops.join(", "),
            self.scale_max,
            Self::sample_excerpt(sample_in),
            Self::sample_excerpt(sample_out),
        );
        let schema = SchemaSpec::parse_entries([("prompt", "str"), ("scale_max", "int")])
            .expect("static schema");
        let value = self.exchange(user, schema)?;
        serde_json::from_value(value).map_err(|e| AgentError::Malformed(e.to_string()))
    }

    fn validate(
        &self,
        outputs: &Dataset,
        vprompt: &ValidationPromptSpec,
    ) -> Result<AgentValidation, AgentError> {
        self.counts.lock().unwrap().validate += 1;
        let user = format!(
            "{}\nIs this output satisfactory? Reply as {{\"satisfactory\": bool, \"notes\": \"...\"}}.",
            Self::rendered_criteria(outputs, vprompt)?,
        );
        let schema = SchemaSpec::parse_entries([("satisfactory", "bool")]).expect("static schema");
        let value = self.exchange(user, schema)?;
        serde_json::from_value(value).map_err(|e| AgentError::Malformed(e.to_string()))
    }

    fn rate(&self, output: &Dataset, vprompt: &ValidationPromptSpec) -> Result<u32, AgentError> {
        self.counts.lock().unwrap().rate += 1;
        let user = format!(
            "{}\nRate this output on a scale of 1 (very bad) to {}. Reply as {{\"score\": int}}.",
            Self::rendered_criteria(output, vprompt)?,
            vprompt.scale_max,
        );
        let schema = SchemaSpec::parse_entries([("score", "int")]).expect("static schema");
        let value = self.exchange(user, schema)?;
        let score = value
            .get("score")
            .and_then(Value::as_u64)
            .ok_or_else(|| AgentError::Malformed("no integer score".into()))?;
        Ok((score as u32).clamp(1, vprompt.scale_max))
    }

    fn compare(
        &self,
        a: &Dataset,
        b: &Dataset,
        vprompt: &ValidationPromptSpec,
    ) -> Result<CompareOutcome, AgentError> {
        self.counts.lock().unwrap().compare += 1;
        let criteria = {
            let bindings = std::collections::BTreeMap::from([(
                "output".to_string(),
                Value::String("the two outputs below".into()),
            )]);
            vprompt
                .prompt
                .render(&bindings)
                .unwrap_or_else(|_| vprompt.prompt.source.clone())
        };
        let user = format!(
            "{criteria}\nOutput A:\n{}\nOutput B:\n{}\nWhich output is better? Reply as \
             {{\"winner\": \"A\" | \"B\" | \"tie\"}}.",
            serde_json::to_string(a).expect("dataset serializes"),
            serde_json::to_string(b).expect("dataset serializes"),
        );
        let value = self.exchange(user, SchemaSpec::new())?;
        match value.get("winner").and_then(Value::as_str) {
            Some("A") | Some("a") => Ok(CompareOutcome::A),
            Some("B") | Some("b") => Ok(CompareOutcome::B),
            Some("tie") | Some("Tie") | Some("TIE") => Ok(CompareOutcome::Tie),
            other => Err(AgentError::Malformed(format!("bad winner: {other:?}"))),
        }
    }

    fn calls(&self) -> AgentCallCounts {
        *self.counts.lock().unwrap()
    }
}
