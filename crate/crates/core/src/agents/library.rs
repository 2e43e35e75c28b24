//! The Agent Type Library: the closed set of instantiable agent types and
//! the performance metrics modules may declare.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::endpoint::Endpoint;
use crate::moduledef::MetricDef;
use crate::netsim::{LinkId, NodeId};

use super::{Agent, AgentError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Resource,
    Adapter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    Node,
    Link,
    Endpoint,
    Integer,
    Number,
    String,
}

impl SemanticType {
    pub const ALL: [SemanticType; 6] = [
        SemanticType::Node,
        SemanticType::Link,
        SemanticType::Endpoint,
        SemanticType::Integer,
        SemanticType::Number,
        SemanticType::String,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Node => "node",
            SemanticType::Link => "link",
            SemanticType::Endpoint => "endpoint",
            SemanticType::Integer => "integer",
            SemanticType::Number => "number",
            SemanticType::String => "string",
        }
    }

    pub fn parse_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Parses a literal of this type.
    pub fn parse_value(self, raw: &str) -> Result<ParamValue, String> {
        let bad = |why: &str| format!("{raw:?} is not a valid {}: {why}", self.as_str());
        match self {
            SemanticType::Node if raw.trim().is_empty() => Err(bad("empty")),
            SemanticType::Node => Ok(ParamValue::Node(NodeId::new(raw.trim()))),
            SemanticType::Link if raw.trim().is_empty() => Err(bad("empty")),
            SemanticType::Link => Ok(ParamValue::Link(LinkId::new(raw.trim()))),
            SemanticType::Endpoint => raw.parse::<Endpoint>().map(ParamValue::Endpoint).map_err(|e| bad(&e.0)),
            SemanticType::Integer => {
                raw.trim().parse::<i64>().map(ParamValue::Integer).map_err(|e| bad(&e.to_string()))
            }
            SemanticType::Number => match raw.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(ParamValue::Number(v)),
                Ok(_) => Err(bad("not finite")),
                Err(e) => Err(bad(&e.to_string())),
            },
            SemanticType::String => Ok(ParamValue::Text(raw.to_owned())),
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamValue {
    Node(NodeId),
    Link(LinkId),
    Endpoint(Endpoint),
    Integer(i64),
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: SemanticType,
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeSchema {
    pub type_name: String,
    pub kind: AgentKind,
    pub params: Vec<ParamSchema>,
    /// Payload kinds this type accepts.
    pub messages: Vec<String>,
    #[serde(default)]
    pub doc: String,
}

impl TypeSchema {
    pub fn param(&self, name: &str) -> Option<&ParamSchema> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn accepts(&self, kind: &str) -> bool {
        self.messages.iter().any(|m| m == kind)
    }

    /// Checks raw parameter strings against the schema and converts them.
    pub fn validate(&self, raw: &BTreeMap<String, String>) -> Result<ParamValues, AgentError> {
        let mut out = BTreeMap::new();
        for (name, value) in raw {
            let schema = self
                .param(name)
                .ok_or_else(|| AgentError::Schema(format!("{} has no parameter {name:?}", self.type_name)))?;
            let v = schema
                .semantic_type
                .parse_value(value)
                .map_err(|e| AgentError::Schema(format!("{}.{name}: {e}", self.type_name)))?;
            out.insert(name.clone(), v);
        }
        for p in &self.params {
            if p.required && !out.contains_key(&p.name) {
                return Err(AgentError::Schema(format!("{} requires parameter {:?}", self.type_name, p.name)));
            }
        }
        Ok(ParamValues(out))
    }
}

/// Validated, typed parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamValues(pub BTreeMap<String, ParamValue>);

impl ParamValues {
    pub fn node(&self, name: &str) -> Option<&NodeId> {
        match self.0.get(name)? {
            ParamValue::Node(n) => Some(n),
            _ => None,
        }
    }

    pub fn link(&self, name: &str) -> Option<&LinkId> {
        match self.0.get(name)? {
            ParamValue::Link(l) => Some(l),
            _ => None,
        }
    }

    pub fn endpoint(&self, name: &str) -> Option<&Endpoint> {
        match self.0.get(name)? {
            ParamValue::Endpoint(e) => Some(e),
            _ => None,
        }
    }

    pub fn integer(&self, name: &str) -> Option<i64> {
        match self.0.get(name)? {
            ParamValue::Integer(i) => Some(*i),
            _ => None,
        }
    }

    /// Integers widen to numbers.
    pub fn number(&self, name: &str) -> Option<f64> {
        match self.0.get(name)? {
            ParamValue::Number(v) => Some(*v),
            ParamValue::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        match self.0.get(name)? {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

pub type AgentFactory = Arc<dyn Fn(&ParamValues) -> Result<Box<dyn Agent>, AgentError> + Send + Sync>;

/// Serialized form of the library.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryDocument {
    pub agent_types: Vec<TypeSchema>,
    pub metrics: Vec<MetricDef>,
}

#[derive(Clone, Default)]
pub struct AgentTypeLibrary {
    types: BTreeMap<String, (TypeSchema, AgentFactory)>,
    metrics: BTreeMap<String, MetricDef>,
}

impl fmt::Debug for AgentTypeLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentTypeLibrary")
            .field("types", &self.types.keys().collect::<Vec<_>>())
            .field("metrics", &self.metrics.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl AgentTypeLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, schema: TypeSchema, factory: F) -> Result<(), AgentError>
    where
        F: Fn(&ParamValues) -> Result<Box<dyn Agent>, AgentError> + Send + Sync + 'static,
    {
        if schema.type_name.trim().is_empty() {
            return Err(AgentError::Schema("type_name must be non-empty".into()));
        }
        if self.types.contains_key(&schema.type_name) {
            return Err(AgentError::Schema(format!("type {} already registered", schema.type_name)));
        }
        self.types.insert(schema.type_name.clone(), (schema, Arc::new(factory)));
        Ok(())
    }

    pub fn register_metric(&mut self, metric: MetricDef) {
        self.metrics.insert(metric.metric_id.clone(), metric);
    }

    pub fn schema(&self, type_name: &str) -> Option<&TypeSchema> {
        self.types.get(type_name).map(|(s, _)| s)
    }

    pub fn factory(&self, type_name: &str) -> Option<&AgentFactory> {
        self.types.get(type_name).map(|(_, f)| f)
    }

    pub fn contains(&self, type_name: &str) -> bool {
        self.types.contains_key(type_name)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &TypeSchema> {
        self.types.values().map(|(s, _)| s)
    }

    pub fn metric(&self, metric_id: &str) -> Option<&MetricDef> {
        self.metrics.get(metric_id)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricDef> {
        self.metrics.values()
    }

    pub fn document(&self) -> LibraryDocument {
        LibraryDocument { agent_types: self.schemas().cloned().collect(), metrics: self.metrics().cloned().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> TypeSchema {
        TypeSchema {
            type_name: "T".into(),
            kind: AgentKind::Resource,
            params: vec![
                ParamSchema { name: "n".into(), semantic_type: SemanticType::Integer, required: true },
                ParamSchema { name: "e".into(), semantic_type: SemanticType::Endpoint, required: false },
            ],
            messages: vec!["ping".into()],
            doc: String::new(),
        }
    }

    #[test]
    fn validate_converts_and_checks() {
        let s = schema();
        let mut raw = BTreeMap::new();
        raw.insert("n".to_string(), "3".to_string());
        raw.insert("e".to_string(), "A:1/1".to_string());
        let v = s.validate(&raw).unwrap();
        assert_eq!(v.integer("n"), Some(3));
        assert_eq!(v.number("n"), Some(3.0));
        assert_eq!(v.endpoint("e").unwrap().nic, 1);

        raw.insert("n".into(), "x".into());
        assert!(matches!(s.validate(&raw), Err(AgentError::Schema(_))));
        raw.remove("n");
        assert!(s.validate(&raw).unwrap_err().to_string().contains("requires"));
        raw.insert("zzz".into(), "1".into());
        assert!(matches!(s.validate(&raw), Err(AgentError::Schema(_))));
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut lib = AgentTypeLibrary::new();
        let f = |_: &ParamValues| -> Result<Box<dyn Agent>, AgentError> { Err(AgentError::Handler("x".into())) };
        lib.register(schema(), f).unwrap();
        assert!(lib.register(schema(), f).is_err());
        assert!(lib.contains("T"));
        assert_eq!(lib.document().agent_types.len(), 1);
    }
}
