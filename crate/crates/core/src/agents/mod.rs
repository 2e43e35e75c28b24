//! Multi-agent runtime.
//!
//! Environments group agents by management concern. Agents are isolated state
//! machines that only interact through messages on an in-process bus; the bus
//! delivers in global send order, which gives per-pair FIFO and exactly-once
//! delivery. Resource agents bind simulator resources; adapter agents compose
//! other agents and hold no bindings of their own.

pub mod library;
pub mod resource;
mod runtime;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{LinkId, NodeId, SimError};
use crate::time::SimTime;

pub use self::library::{
    AgentFactory, AgentKind, AgentTypeLibrary, LibraryDocument, ParamSchema, ParamValue, ParamValues, SemanticType,
    TypeSchema,
};
pub use self::resource::{read_link, LinkAgentRef, SwitchAgentRef, LINK_AGENT, SWITCH_AGENT};
pub use self::runtime::{AgentContext, Runtime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent-{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvId(pub String);

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EnvId {
    fn from(s: &str) -> Self {
        EnvId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Address {
    Agent(AgentId),
    Store,
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Agent(id) => id.fmt(f),
            Address::Store => f.write_str("store"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub kind: String,
    #[serde(default)]
    pub body: serde_json::Value,
}

impl Payload {
    pub fn new(kind: impl Into<String>, body: serde_json::Value) -> Self {
        Payload { kind: kind.into(), body }
    }

    pub fn empty(kind: impl Into<String>) -> Self {
        Self::new(kind, serde_json::Value::Null)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: Address,
    pub to: Address,
    pub payload: Payload,
    pub ts: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleState {
    Created,
    Running,
    Destroyed,
}

impl LifecycleState {
    pub fn can_become(self, next: LifecycleState) -> bool {
        matches!(
            (self, next),
            (LifecycleState::Created, LifecycleState::Running) | (LifecycleState::Running, LifecycleState::Destroyed)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "resource", content = "id", rename_all = "lowercase")]
pub enum ResourceRef {
    Node(NodeId),
    Link(LinkId),
}

impl fmt::Display for ResourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceRef::Node(n) => write!(f, "node:{n}"),
            ResourceRef::Link(l) => write!(f, "link:{l}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub type_name: String,
    pub params: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub objective: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_id: Option<String>,
}

impl AgentSpec {
    pub fn new(type_name: impl Into<String>) -> Self {
        AgentSpec { type_name: type_name.into(), ..Default::default() }
    }

    pub fn param(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.insert(name.into(), value.into());
        self
    }
}

/// One row of the central view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: AgentId,
    pub env: EnvId,
    pub kind: AgentKind,
    pub type_name: String,
    pub state: LifecycleState,
    pub resources: Vec<ResourceRef>,
    pub composed: Vec<AgentId>,
    pub owner: Option<String>,
    pub objective: String,
}

/// Something the runtime did, for the store's action log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeEvent {
    pub ts: SimTime,
    pub actor: String,
    pub action: String,
    pub ok: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("unknown type {0}")]
    UnknownType(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("resource binding failure: {0}")]
    Binding(String),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown environment {0}")]
    UnknownEnvironment(EnvId),
    #[error("environment {0} already exists")]
    DuplicateEnvironment(EnvId),
    #[error("destination {0} is destroyed or unknown")]
    DestinationUnavailable(Address),
    #[error("{type_name} does not accept payload kind {kind:?}")]
    UnknownPayloadKind { kind: String, type_name: String },
    #[error("agent {0} is busy")]
    Busy(AgentId),
    #[error("message bus stalled waiting for a reply")]
    Stalled,
    #[error("handler error: {0}")]
    Handler(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Behaviour of an agent type.
pub trait Agent: Send {
    /// Binds resources; returns what was bound. Resource agents must bind at
    /// least one resource, adapters none.
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) -> Result<Vec<ResourceRef>, AgentError>;

    fn on_message(&mut self, msg: &Message, ctx: &mut AgentContext<'_>) -> Result<Payload, AgentError>;

    fn on_stop(&mut self, _ctx: &mut AgentContext<'_>) {}
}
