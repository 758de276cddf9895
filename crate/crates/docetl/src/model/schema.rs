use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::document::{Document, Value};

/// A type expression in an output schema. The grammar is closed under
/// list/map nesting, e.g. `list[{officer_name: str, misconduct_instance: str}]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeExpr {
    Str,
    Int,
    Float,
    Bool,
    List(Box<TypeExpr>),
    Map(Vec<(String, TypeExpr)>),
}

impl TypeExpr {
    pub fn parse(input: &str) -> Result<Self, String> {
        let mut p = TypeParser {
            input,
            chars: input.char_indices().peekable(),
        };
        let expr = p.parse_expr()?;
        p.skip_ws();
        match p.chars.next() {
            None => Ok(expr),
            Some((i, c)) => Err(format!("unexpected '{c}' at offset {i} in type expression")),
        }
    }

    /// True when `value` inhabits this type. Integers are accepted where a
    /// float is expected.
    pub fn matches(&self, value: &Value) -> bool {
        match (self, value) {
            (TypeExpr::Str, Value::String(_)) => true,
            (TypeExpr::Int, Value::Number(n)) => n.is_i64() || n.is_u64(),
            (TypeExpr::Float, Value::Number(_)) => true,
            (TypeExpr::Bool, Value::Bool(_)) => true,
            (TypeExpr::List(elem), Value::Array(items)) => items.iter().all(|v| elem.matches(v)),
            (TypeExpr::Map(fields), Value::Object(obj)) => fields.iter().all(|(name, ty)| {
                obj.get(name).map(|v| ty.matches(v)).unwrap_or(false)
            }),
            _ => false,
        }
    }

    fn describe(value: &Value) -> &'static str {
        match value {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Number(n) if n.is_i64() || n.is_u64() => "int",
            Value::Number(_) => "float",
            Value::String(_) => "string",
            Value::Array(_) => "list",
            Value::Object(_) => "map",
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Str => write!(f, "string"),
            TypeExpr::Int => write!(f, "int"),
            TypeExpr::Float => write!(f, "float"),
            TypeExpr::Bool => write!(f, "bool"),
            TypeExpr::List(elem) => write!(f, "list[{elem}]"),
            TypeExpr::Map(fields) => {
                write!(f, "{{")?;
                for (i, (name, ty)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{name}: {ty}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

struct TypeParser<'a> {
    input: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
}

impl<'a> TypeParser<'a> {
    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn parse_expr(&mut self) -> Result<TypeExpr, String> {
        self.skip_ws();
        match self.chars.peek() {
            Some((_, '{')) => self.parse_map(),
            Some(_) => {
                let word = self.take_word();
                match word.as_str() {
                    "str" | "string" => Ok(TypeExpr::Str),
                    "int" | "integer" => Ok(TypeExpr::Int),
                    "float" | "number" => Ok(TypeExpr::Float),
                    "bool" | "boolean" => Ok(TypeExpr::Bool),
                    "list" => {
                        self.expect('[')?;
                        let elem = self.parse_expr()?;
                        self.expect(']')?;
                        Ok(TypeExpr::List(Box::new(elem)))
                    }
                    other => Err(format!("unknown type '{other}' in '{}'", self.input)),
                }
            }
            None => Err(format!("empty type expression in '{}'", self.input)),
        }
    }

    fn parse_map(&mut self) -> Result<TypeExpr, String> {
        self.expect('{')?;
        let mut fields = Vec::new();
        loop {
            self.skip_ws();
            if matches!(self.chars.peek(), Some((_, '}'))) {
                self.chars.next();
                return Ok(TypeExpr::Map(fields));
            }
            let name = self.take_word();
            if name.is_empty() {
                return Err(format!("expected field name in '{}'", self.input));
            }
            self.expect(':')?;
            let ty = self.parse_expr()?;
            fields.push((name, ty));
            self.skip_ws();
            if matches!(self.chars.peek(), Some((_, ','))) {
                self.chars.next();
            }
        }
    }

    fn take_word(&mut self) -> String {
        self.skip_ws();
        let mut word = String::new();
        while let Some((_, c)) = self.chars.peek() {
            if c.is_alphanumeric() || *c == '_' {
                word.push(*c);
                self.chars.next();
            } else {
                break;
            }
        }
        word
    }

    fn expect(&mut self, want: char) -> Result<(), String> {
        self.skip_ws();
        match self.chars.next() {
            Some((_, c)) if c == want => Ok(()),
            Some((i, c)) => Err(format!("expected '{want}' at offset {i}, found '{c}'")),
            None => Err(format!("expected '{want}', found end of input")),
        }
    }
}

/// A schema violation: an attribute that is missing or has the wrong type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub attribute: String,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: expected {}, found {}",
            self.attribute, self.expected, self.found
        )
    }
}

/// An output schema: an ordered map of attribute name to type expression.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SchemaSpec {
    pub entries: IndexMap<String, TypeExpr>,
}

impl SchemaSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse_entries<'a, I>(entries: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut out = IndexMap::new();
        for (name, expr) in entries {
            out.insert(name.to_string(), TypeExpr::parse(expr)?);
        }
        Ok(Self { entries: out })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Checks whether `doc` conforms: every schema entry present with a
    /// matching type. Extra attributes are allowed. Total function.
    pub fn conforms(&self, doc: &Document) -> (bool, Vec<Violation>) {
        let mut violations = Vec::new();
        for (name, ty) in &self.entries {
            match doc.get(name) {
                None => violations.push(Violation {
                    attribute: name.clone(),
                    expected: ty.to_string(),
                    found: "missing".into(),
                }),
                Some(v) if !ty.matches(v) => violations.push(Violation {
                    attribute: name.clone(),
                    expected: ty.to_string(),
                    found: TypeExpr::describe(v).into(),
                }),
                Some(_) => {}
            }
        }
        (violations.is_empty(), violations)
    }
}

impl Serialize for SchemaSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (name, ty) in &self.entries {
            map.serialize_entry(name, &ty.to_string())?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SchemaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: IndexMap<String, String> = IndexMap::deserialize(deserializer)?;
        let mut entries = IndexMap::new();
        for (name, expr) in raw {
            let ty = TypeExpr::parse(&expr).map_err(serde::de::Error::custom)?;
            entries.insert(name, ty);
        }
        Ok(Self { entries })
    }
}
