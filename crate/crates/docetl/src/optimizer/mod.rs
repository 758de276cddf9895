//! Agent-driven pipeline optimization: top-down traversal with
//! opportunistic recursion, validator synthesis, candidate rating, and
//! pairwise plan selection over selectivity-aware samples.

mod agent;
mod sample;
mod search;
mod select;

pub use agent::{
    AgentCallCounts, AgentError, AgentInterface, AgentValidation, CompareOutcome, LlmAgent,
    ScriptedAgent, ValidationPromptSpec,
};
pub use sample::{
    document_weight, draw_sample, required_sample_size, SelectivityLedger, ZeroSelectivity,
};
pub use search::{
    optimize_pipeline, DecisionRecord, OptimizeError, OptimizeOutcome, OptimizerConfig,
};
pub use select::{select_plan, PlanSelection};
