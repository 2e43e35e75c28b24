//! Resource agents for the simulated SDN: one per switch flow table and one
//! read-only monitor per link.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::netsim::{FlowId, FlowRule, LinkId, LinkStats, NodeId};

use super::library::{AgentKind, AgentTypeLibrary, ParamSchema, ParamValues, SemanticType, TypeSchema};
use super::{Address, Agent, AgentContext, AgentError, AgentId, Message, Payload, ResourceRef, Runtime};

pub const SWITCH_AGENT: &str = "SwitchAgent";
pub const LINK_AGENT: &str = "LinkAgent";

pub fn switch_schema() -> TypeSchema {
    TypeSchema {
        type_name: SWITCH_AGENT.into(),
        kind: AgentKind::Resource,
        params: vec![ParamSchema { name: "switch".into(), semantic_type: SemanticType::Node, required: true }],
        messages: vec!["read_rules".into(), "write_rule".into()],
        doc: "OpenFlow-style switch with an inspectable and editable flow table".into(),
    }
}

pub fn link_schema() -> TypeSchema {
    TypeSchema {
        type_name: LINK_AGENT.into(),
        kind: AgentKind::Resource,
        params: vec![ParamSchema { name: "link".into(), semantic_type: SemanticType::Link, required: true }],
        messages: vec!["read".into()],
        doc: "Read-only link monitor: end-points, capacity, latency, transfer rate and load".into(),
    }
}

pub fn register(lib: &mut AgentTypeLibrary) -> Result<(), AgentError> {
    lib.register(switch_schema(), |p: &ParamValues| {
        let switch = p.node("switch").expect("validated").clone();
        Ok(Box::new(SwitchAgent { switch }) as Box<dyn Agent>)
    })?;
    lib.register(link_schema(), |p: &ParamValues| {
        let link = p.link("link").expect("validated").clone();
        Ok(Box::new(LinkAgent { link }) as Box<dyn Agent>)
    })
}

#[derive(Serialize, Deserialize)]
struct WriteRule {
    flow: FlowId,
    path_index: u32,
    out_link: LinkId,
}

struct SwitchAgent {
    switch: NodeId,
}

impl Agent for SwitchAgent {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) -> Result<Vec<ResourceRef>, AgentError> {
        let kind = ctx.with_network(|net| net.topology().node(&self.switch).map(|n| n.kind));
        match kind {
            None => Err(AgentError::Binding(format!("unknown node {}", self.switch))),
            Some(k) if k != crate::netsim::NodeKind::Switch => {
                Err(AgentError::Binding(format!("{} is not a switch", self.switch)))
            }
            Some(_) => Ok(vec![ResourceRef::Node(self.switch.clone())]),
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut AgentContext<'_>) -> Result<Payload, AgentError> {
        match msg.payload.kind.as_str() {
            "read_rules" => {
                let rules = ctx.with_network(|net| net.read_rules(&self.switch));
                Ok(Payload::new("rules", serde_json::to_value(rules).expect("serializable")))
            }
            "write_rule" => {
                let w: WriteRule = serde_json::from_value(msg.payload.body.clone())
                    .map_err(|e| AgentError::Schema(format!("write_rule body: {e}")))?;
                let rule = FlowRule {
                    switch: self.switch.clone(),
                    flow: w.flow,
                    path_index: w.path_index,
                    out_link: w.out_link,
                };
                ctx.with_network(|net| net.write_rule(&rule))?;
                ctx.log(format!("write_rule {} -> {}", rule.flow.tag, rule.out_link), true);
                Ok(Payload::empty("ok"))
            }
            other => Err(AgentError::UnknownPayloadKind { kind: other.into(), type_name: SWITCH_AGENT.into() }),
        }
    }
}

struct LinkAgent {
    link: LinkId,
}

impl Agent for LinkAgent {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) -> Result<Vec<ResourceRef>, AgentError> {
        let exists = ctx.with_network(|net| net.topology().link(&self.link).is_some());
        if exists {
            Ok(vec![ResourceRef::Link(self.link.clone())])
        } else {
            Err(AgentError::Binding(format!("unknown link {}", self.link)))
        }
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut AgentContext<'_>) -> Result<Payload, AgentError> {
        match msg.payload.kind.as_str() {
            "read" => {
                let stats = ctx.with_network(|net| net.link_stats(&self.link))?;
                Ok(Payload::new("link_stats", serde_json::to_value(stats).expect("serializable")))
            }
            other => Err(AgentError::UnknownPayloadKind { kind: other.into(), type_name: LINK_AGENT.into() }),
        }
    }
}

fn expect_type(rt: &Runtime, id: AgentId, type_name: &str) -> Result<(), AgentError> {
    match rt.type_name(id) {
        Some(t) if t == type_name => Ok(()),
        Some(t) => Err(AgentError::Schema(format!("{id} is a {t}, not a {type_name}"))),
        None => Err(AgentError::UnknownAgent(id)),
    }
}

/// Typed access to a running switch agent.
pub struct SwitchAgentRef<'a> {
    rt: &'a mut Runtime,
    id: AgentId,
    from: Address,
}

impl<'a> SwitchAgentRef<'a> {
    pub fn new(rt: &'a mut Runtime, id: AgentId) -> Result<Self, AgentError> {
        expect_type(rt, id, SWITCH_AGENT)?;
        Ok(SwitchAgentRef { rt, id, from: Address::Store })
    }

    pub fn read_rules(&mut self) -> Result<Vec<FlowRule>, AgentError> {
        let reply = self.rt.call(self.from, self.id, Payload::empty("read_rules"))?;
        serde_json::from_value(reply.body).map_err(|e| AgentError::Handler(e.to_string()))
    }

    /// Installs a rule on this switch; the rule's `switch` field is ignored.
    pub fn write_rule(&mut self, flow: &FlowId, path_index: u32, out_link: &LinkId) -> Result<(), AgentError> {
        let body = json!({ "flow": flow, "path_index": path_index, "out_link": out_link });
        self.rt.call(self.from, self.id, Payload::new("write_rule", body)).map(|_| ())
    }
}

/// Typed, read-only access to a running link agent.
pub struct LinkAgentRef<'a> {
    rt: &'a mut Runtime,
    id: AgentId,
}

impl<'a> LinkAgentRef<'a> {
    pub fn new(rt: &'a mut Runtime, id: AgentId) -> Result<Self, AgentError> {
        expect_type(rt, id, LINK_AGENT)?;
        Ok(LinkAgentRef { rt, id })
    }

    pub fn read(&mut self) -> Result<LinkStats, AgentError> {
        let reply = self.rt.call(Address::Store, self.id, Payload::empty("read"))?;
        serde_json::from_value(reply.body).map_err(|e| AgentError::Handler(e.to_string()))
    }
}

/// Reads a link agent from inside another agent's handler.
pub fn read_link(ctx: &mut AgentContext<'_>, id: AgentId) -> Result<LinkStats, AgentError> {
    let reply = ctx.call(id, Payload::empty("read"))?;
    serde_json::from_value(reply.body).map_err(|e| AgentError::Handler(e.to_string()))
}
