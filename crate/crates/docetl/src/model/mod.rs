//! Core vocabulary: documents, datasets, output schemas, prompt templates,
//! and token counting.

mod document;
mod schema;
mod template;
mod tokenizer;

pub use document::{canonical_json, Dataset, Document, Value};
pub use schema::{SchemaSpec, TypeExpr, Violation};
pub use template::{TemplateError, TemplateString};
pub use tokenizer::{Tokenizer, TokenizerMode};
