use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::document::{canonical_json, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unbound path '{0}' in template")]
    UnboundPath(String),
    #[error("template syntax error: {0}")]
    Syntax(String),
    #[error("loop target '{0}' is not an array")]
    NotIterable(String),
}

/// A prompt template: literal text with `{{ path }}` interpolation sites and
/// an optional `{% for x in path %}...{% endfor %}` loop form. Paths are
/// dotted accessors rooted at a named binding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateString {
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Site(String),
    For {
        var: String,
        path: String,
        body: Vec<Segment>,
    },
}

impl TemplateString {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
        }
    }

    /// The root binding names referenced by this template (e.g. `input`,
    /// `inputs`, `left`). Loop variables do not count as roots.
    pub fn root_bindings(&self) -> Vec<String> {
        fn walk(segments: &[Segment], shadowed: &mut Vec<String>, roots: &mut Vec<String>) {
            for seg in segments {
                match seg {
                    Segment::Literal(_) => {}
                    Segment::Site(path) => {
                        let root = path.split('.').next().unwrap_or(path).to_string();
                        if !shadowed.contains(&root) && !roots.contains(&root) {
                            roots.push(root);
                        }
                    }
                    Segment::For { var, path, body } => {
                        let root = path.split('.').next().unwrap_or(path).to_string();
                        if !shadowed.contains(&root) && !roots.contains(&root) {
                            roots.push(root);
                        }
                        shadowed.push(var.clone());
                        walk(body, shadowed, roots);
                        shadowed.pop();
                    }
                }
            }
        }
        let mut roots = Vec::new();
        if let Ok(segments) = parse_segments(&self.source) {
            walk(&segments, &mut Vec::new(), &mut roots);
        }
        roots
    }

    /// Every dotted path the template reads, loop targets included. Paths
    /// rooted at a loop variable are reported rooted at the loop's target
    /// path (e.g. `{% for e in inputs %}{{ e.name }}` yields `inputs.name`
    /// alongside `inputs`), so callers can check attribute existence.
    pub fn referenced_paths(&self) -> Vec<String> {
        fn walk(
            segments: &[Segment],
            aliases: &mut Vec<(String, String)>,
            paths: &mut Vec<String>,
        ) {
            let rebase = |path: &str, aliases: &[(String, String)]| -> String {
                let mut parts = path.splitn(2, '.');
                let root = parts.next().unwrap_or(path);
                let rest = parts.next();
                for (var, target) in aliases.iter().rev() {
                    if var == root {
                        return match rest {
                            Some(rest) => format!("{target}.{rest}"),
                            None => target.clone(),
                        };
                    }
                }
                path.to_string()
            };
            for seg in segments {
                match seg {
                    Segment::Literal(_) => {}
                    Segment::Site(path) => {
                        let p = rebase(path, aliases);
                        if !paths.contains(&p) {
                            paths.push(p);
                        }
                    }
                    Segment::For { var, path, body } => {
                        let target = rebase(path, aliases);
                        if !paths.contains(&target) {
                            paths.push(target.clone());
                        }
                        aliases.push((var.clone(), target));
                        walk(body, aliases, paths);
                        aliases.pop();
                    }
                }
            }
        }
        let mut paths = Vec::new();
        if let Ok(segments) = parse_segments(&self.source) {
            walk(&segments, &mut Vec::new(), &mut paths);
        }
        paths
    }

    /// Renders the template. Literal text is preserved byte-for-byte; each
    /// site is replaced by the bound value (strings verbatim, composites as
    /// canonical JSON).
    pub fn render(&self, bindings: &BTreeMap<String, Value>) -> Result<String, TemplateError> {
        let segments = parse_segments(&self.source)?;
        let mut out = String::new();
        render_segments(&segments, bindings, &mut out)?;
        Ok(out)
    }
}

fn render_segments(
    segments: &[Segment],
    bindings: &BTreeMap<String, Value>,
    out: &mut String,
) -> Result<(), TemplateError> {
    for seg in segments {
        match seg {
            Segment::Literal(text) => out.push_str(text),
            Segment::Site(path) => {
                let value = resolve(path, bindings)?;
                out.push_str(&render_value(value));
            }
            Segment::For { var, path, body } => {
                let value = resolve(path, bindings)?;
                let items = value
                    .as_array()
                    .ok_or_else(|| TemplateError::NotIterable(path.clone()))?;
                for item in items {
                    let mut inner = bindings.clone();
                    inner.insert(var.clone(), item.clone());
                    render_segments(body, &inner, out)?;
                }
            }
        }
    }
    Ok(())
}

fn render_value(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => canonical_json(other),
    }
}

fn resolve<'a>(path: &str, bindings: &'a BTreeMap<String, Value>) -> Result<&'a Value, TemplateError> {
    let mut parts = path.split('.');
    let root = parts
        .next()
        .ok_or_else(|| TemplateError::UnboundPath(path.to_string()))?;
    let mut cur = bindings
        .get(root)
        .ok_or_else(|| TemplateError::UnboundPath(path.to_string()))?;
    for part in parts {
        cur = cur
            .as_object()
            .and_then(|o| o.get(part))
            .ok_or_else(|| TemplateError::UnboundPath(path.to_string()))?;
    }
    Ok(cur)
}

fn parse_segments(source: &str) -> Result<Vec<Segment>, TemplateError> {
    let tokens = lex(source)?;
    let mut pos = 0;
    let segments = parse_block(&tokens, &mut pos, false)?;
    if pos != tokens.len() {
        return Err(TemplateError::Syntax("unexpected {% endfor %}".into()));
    }
    Ok(segments)
}

#[derive(Debug)]
enum Token {
    Literal(String),
    Site(String),
    ForOpen { var: String, path: String },
    ForClose,
}

fn lex(source: &str) -> Result<Vec<Token>, TemplateError> {
    let mut tokens = Vec::new();
    let mut rest = source;
    loop {
        let site = rest.find("{{");
        let stmt = rest.find("{%");
        let next = match (site, stmt) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        match next {
            None => {
                if !rest.is_empty() {
                    tokens.push(Token::Literal(rest.to_string()));
                }
                return Ok(tokens);
            }
            Some(idx) => {
                if idx > 0 {
                    tokens.push(Token::Literal(rest[..idx].to_string()));
                }
                rest = &rest[idx..];
                if rest.starts_with("{{") {
                    let end = rest
                        .find("}}")
                        .ok_or_else(|| TemplateError::Syntax("unterminated '{{'".into()))?;
                    let path = rest[2..end].trim().to_string();
                    if path.is_empty() {
                        return Err(TemplateError::Syntax("empty interpolation site".into()));
                    }
                    tokens.push(Token::Site(path));
                    rest = &rest[end + 2..];
                } else {
                    let end = rest
                        .find("%}")
                        .ok_or_else(|| TemplateError::Syntax("unterminated '{%'".into()))?;
                    let body = rest[2..end].trim();
                    if body == "endfor" {
                        tokens.push(Token::ForClose);
                    } else if let Some(spec) = body.strip_prefix("for ") {
                        let mut parts = spec.splitn(2, " in ");
                        let var = parts.next().unwrap_or("").trim().to_string();
                        let path = parts.next().unwrap_or("").trim().to_string();
                        if var.is_empty() || path.is_empty() {
                            return Err(TemplateError::Syntax(format!(
                                "malformed loop header '{body}'"
                            )));
                        }
                        tokens.push(Token::ForOpen { var, path });
                    } else {
                        return Err(TemplateError::Syntax(format!(
                            "unsupported statement '{body}'"
                        )));
                    }
                    rest = &rest[end + 2..];
                }
            }
        }
    }
}

fn parse_block(tokens: &[Token], pos: &mut usize, in_loop: bool) -> Result<Vec<Segment>, TemplateError> {
    let mut segments = Vec::new();
    while *pos < tokens.len() {
        match &tokens[*pos] {
            Token::Literal(text) => {
                segments.push(Segment::Literal(text.clone()));
                *pos += 1;
            }
            Token::Site(path) => {
                segments.push(Segment::Site(path.clone()));
                *pos += 1;
            }
            Token::ForOpen { var, path } => {
                *pos += 1;
                let body = parse_block(tokens, pos, true)?;
                if *pos >= tokens.len() {
                    return Err(TemplateError::Syntax("missing {% endfor %}".into()));
                }
                *pos += 1; // consume ForClose
                segments.push(Segment::For {
                    var: var.clone(),
                    path: path.clone(),
                    body,
                });
            }
            Token::ForClose => {
                if in_loop {
                    return Ok(segments);
                }
                return Err(TemplateError::Syntax("unexpected {% endfor %}".into()));
            }
        }
    }
    if in_loop {
        return Err(TemplateError::Syntax("missing {% endfor %}".into()));
    }
    Ok(segments)
}
