//! Shared plumbing for LLM-backed operators: system prompts derived from
//! output schemas and the gleaning refinement loop.

use std::collections::BTreeMap;

use crate::gateway::{CompletionRequest, Message, ValidatedResponse, ValidationStatement};
use crate::model::{SchemaSpec, Value};

use super::def::GleaningConfig;
use super::{ExecContext, OpError};

/// Builds the system prompt for a structured-output request. The attribute
/// list keeps scripted and real backends honest about the expected shape.
pub fn system_prompt(schema: &SchemaSpec) -> String {
    if schema.is_empty() {
        return "You are a document processing assistant. \
                Respond with a single JSON object."
            .to_string();
    }
    let fields: Vec<String> = schema
        .entries
        .iter()
        .map(|(name, ty)| format!("{name}: {ty}"))
        .collect();
    format!(
        "You are a document processing assistant. Respond with a single JSON \
         object with these attributes: {}.",
        fields.join(", ")
    )
}

pub fn validator_schema() -> SchemaSpec {
    SchemaSpec::parse_entries([("satisfactory", "bool"), ("feedback", "str")])
        .expect("static schema parses")
}

/// Completes `req` with validated retries, then runs up to `k` gleaning
/// rounds: a validator call judges the output, and while unsatisfactory the
/// generation request is re-issued carrying the prior reply plus the
/// validator's feedback.
pub fn complete_with_gleaning(
    ctx: &ExecContext,
    mut req: CompletionRequest,
    validations: &[ValidationStatement],
    gleaning: Option<&GleaningConfig>,
) -> Result<ValidatedResponse, OpError> {
    let mut out = ctx
        .gateway
        .execute_with_validation(&req, validations, ctx.max_retries)?;
    let Some(gleaning) = gleaning else {
        return Ok(out);
    };
    for _ in 0..gleaning.k {
        let bindings = BTreeMap::from([(
            "output".to_string(),
            Value::Object(out.response.attributes.attributes.clone()),
        )]);
        let judge_req = CompletionRequest::new(
            req.model.clone(),
            "You are a validation agent judging the output of another model. \
             Respond with a single JSON object with these attributes: \
             satisfactory: bool, feedback: str.",
        )
        .with_user(gleaning.validator_prompt.render(&bindings)?)
        .with_schema(validator_schema());
        let verdict = ctx.gateway.complete(&judge_req)?;
        let satisfactory = verdict
            .attributes
            .get("satisfactory")
            .and_then(Value::as_bool)
            .unwrap_or(true);
        if satisfactory {
            break;
        }
        let feedback = verdict
            .attributes
            .get("feedback")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string();
        req.messages.push(Message::assistant(out.response.raw.clone()));
        req.messages.push(Message::validator_feedback(feedback));
        out = ctx
            .gateway
            .execute_with_validation(&req, validations, ctx.max_retries)?;
    }
    Ok(out)
}
