//! The K-paths Mirroring adapter agent.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agents::{
    read_link, Agent, AgentContext, AgentError, AgentId, AgentKind, AgentSpec, AgentTypeLibrary, Message, ParamSchema,
    ParamValues, Payload, ResourceRef, SemanticType, TypeSchema, LINK_AGENT, SWITCH_AGENT,
};
use crate::endpoint::Endpoint;
use crate::netsim::{FlowId, LinkId, NodeKind, SimError, TopologySnapshot};
use crate::store::cost::{Registration, ResourceClass};
use crate::time::SimTime;

use super::alloc::{AllocError, AllocRequest, AllocationFailure, PathSet, DEFAULT_EPSILON_MS};
use super::deploy::{allocate_and_deploy, deploy_mirror_paths, Controller, Deployment};

pub const KMIRROR: &str = "KMirror";

pub fn kmirror_schema() -> TypeSchema {
    let p = |name: &str, semantic_type, required| ParamSchema { name: name.into(), semantic_type, required };
    TypeSchema {
        type_name: KMIRROR.into(),
        kind: AgentKind::Adapter,
        params: vec![
            p("endpointA", SemanticType::Endpoint, true),
            p("endpointB", SemanticType::Endpoint, true),
            p("K", SemanticType::Integer, true),
            p("rate", SemanticType::Number, true),
            p("max_latency", SemanticType::Number, true),
            p("epsilon", SemanticType::Number, false),
        ],
        messages: vec!["activate".into(), "status".into()],
        doc: "Allocates K link-disjoint paths with near-identical latency between two endpoints and mirrors traffic over them".into(),
    }
}

pub fn register(lib: &mut AgentTypeLibrary) -> Result<(), AgentError> {
    lib.register(kmirror_schema(), |p: &ParamValues| Ok(Box::new(KMirror::from_params(p)?) as Box<dyn Agent>))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeployedPath {
    pub index: u32,
    pub links: Vec<LinkId>,
    pub nodes: Vec<String>,
    pub latency_ms: f64,
}

/// Reply to `activate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub flow: FlowId,
    pub paths: Vec<DeployedPath>,
    pub registrations: Vec<Registration>,
    pub switch_agents: Vec<AgentId>,
}

impl Activation {
    pub fn path_indices(&self) -> Vec<u32> {
        self.paths.iter().map(|p| p.index).collect()
    }
}

/// Outcome of an `activate` request as relayed to the store.
#[derive(Clone, Debug, PartialEq)]
pub enum ActivationOutcome {
    Active(Activation),
    Failed(AllocationFailure),
}

impl ActivationOutcome {
    pub fn from_payload(p: &Payload) -> Result<Self, AgentError> {
        let bad = |e: serde_json::Error| AgentError::Handler(format!("malformed {} reply: {e}", p.kind));
        match p.kind.as_str() {
            "activated" => Ok(Self::Active(serde_json::from_value(p.body.clone()).map_err(bad)?)),
            "allocation_failed" => Ok(Self::Failed(serde_json::from_value(p.body.clone()).map_err(bad)?)),
            other => Err(AgentError::Handler(format!("unexpected reply {other}"))),
        }
    }
}

struct KMirror {
    a: Endpoint,
    b: Endpoint,
    k: u32,
    rate_mbps: f64,
    max_latency_ms: f64,
    epsilon_ms: f64,
    link_agents: Vec<AgentId>,
    active: Option<(Deployment, Activation)>,
}

impl KMirror {
    fn from_params(p: &ParamValues) -> Result<Self, AgentError> {
        let k = p.integer("K").expect("validated");
        let rate = p.number("rate").expect("validated");
        let max_latency = p.number("max_latency").expect("validated");
        let epsilon = p.number("epsilon").unwrap_or(DEFAULT_EPSILON_MS);
        if k < 1 || k > u32::MAX as i64 {
            return Err(AgentError::Schema("K must be a positive integer".into()));
        }
        if rate <= 0.0 {
            return Err(AgentError::Schema("rate must be positive".into()));
        }
        if max_latency <= 0.0 {
            return Err(AgentError::Schema("max_latency must be positive".into()));
        }
        if epsilon < 0.0 {
            return Err(AgentError::Schema("epsilon must be non-negative".into()));
        }
        Ok(KMirror {
            a: p.endpoint("endpointA").expect("validated").clone(),
            b: p.endpoint("endpointB").expect("validated").clone(),
            k: k as u32,
            rate_mbps: rate,
            max_latency_ms: max_latency,
            epsilon_ms: epsilon,
            link_agents: Vec::new(),
            active: None,
        })
    }

    fn request(&self) -> AllocRequest {
        AllocRequest::new(self.a.address.clone(), self.b.address.clone(), self.k, self.rate_mbps, self.max_latency_ms)
            .with_epsilon_ms(self.epsilon_ms)
    }

    fn activate(&mut self, ctx: &mut AgentContext<'_>) -> Result<Payload, AgentError> {
        if let Some((_, act)) = &self.active {
            return Ok(activated(act));
        }
        let tag = ctx.owner().unwrap_or_else(|| ctx.id().to_string());
        let flow = FlowId::new(self.a.address.clone(), self.b.address.clone(), tag);
        let req = self.request();
        let mut ctrl = ViaAgents { ctx: &mut *ctx, link_agents: &self.link_agents };
        let deployment = match allocate_and_deploy(&mut ctrl, None, &req, &flow) {
            Ok(d) => d,
            Err(AllocError::Infeasible(f)) => {
                ctx.log(format!("allocate K={} failed: {}", self.k, f.reason), false);
                return Ok(Payload::new("allocation_failed", serde_json::to_value(&f).expect("serializable")));
            }
            Err(e) => return Err(AgentError::Handler(e.to_string())),
        };
        let switches: BTreeSet<String> = deployment
            .paths
            .paths
            .iter()
            .flat_map(|p| &p.nodes)
            .filter(|n| ctx.with_network(|net| net.topology().node(n).is_some_and(|x| x.kind == NodeKind::Switch)))
            .map(|n| n.to_string())
            .collect();
        let mut switch_agents = Vec::new();
        for s in switches {
            match ctx.spawn(&AgentSpec::new(SWITCH_AGENT).param("switch", s)) {
                Ok(id) => switch_agents.push(id),
                Err(e) => {
                    ctx.with_network(|net| deployment.undo(net));
                    return Err(e);
                }
            }
        }
        let now = ctx.now();
        let act = activation(&deployment, switch_agents, self.rate_mbps, now);
        ctx.log(format!("deploy {} mirror paths for {}", act.paths.len(), flow.tag), true);
        let reply = activated(&act);
        self.active = Some((deployment, act));
        Ok(reply)
    }
}

fn activated(act: &Activation) -> Payload {
    Payload::new("activated", serde_json::to_value(act).expect("serializable"))
}

fn activation(d: &Deployment, switch_agents: Vec<AgentId>, rate: f64, now: SimTime) -> Activation {
    let paths: Vec<DeployedPath> = d
        .paths
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| DeployedPath {
            index: i as u32,
            links: p.links.clone(),
            nodes: p.nodes.iter().map(|n| n.to_string()).collect(),
            latency_ms: p.latency_ms(),
        })
        .collect();
    let registrations = d
        .paths
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| Registration {
            resource: format!("path-{i} {p}"),
            class: ResourceClass::LinkReservation,
            rate,
            opened_at: now,
            closed_at: None,
        })
        .collect();
    Activation { flow: d.flow.clone(), paths, registrations, switch_agents }
}

/// Reads link state through the composed LinkAgents and deploys through the
/// controller facility.
struct ViaAgents<'c, 'a> {
    ctx: &'c mut AgentContext<'a>,
    link_agents: &'c [AgentId],
}

impl Controller for ViaAgents<'_, '_> {
    fn snapshot(&mut self) -> TopologySnapshot {
        let (at, nodes) = self.ctx.with_network(|net| (net.now(), net.topology().nodes().cloned().collect()));
        let mut links = Vec::new();
        for &id in self.link_agents {
            if self.ctx.is_running(id) {
                if let Ok(stats) = read_link(self.ctx, id) {
                    links.push(stats);
                }
            }
        }
        TopologySnapshot { at, nodes, links }
    }

    fn deploy(&mut self, flow: &FlowId, set: &PathSet, rate_mbps: f64) -> Result<Deployment, SimError> {
        self.ctx.with_network(|net| deploy_mirror_paths(net, flow, set, rate_mbps))
    }
}

impl Agent for KMirror {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) -> Result<Vec<ResourceRef>, AgentError> {
        for end in [&self.a, &self.b] {
            let known = ctx.with_network(|net| net.topology().node(&end.address).is_some());
            if !known {
                return Err(AgentError::Handler(format!("endpoint {end} is not in the network")));
            }
        }
        if self.a.address == self.b.address {
            return Err(AgentError::Handler("endpoints must be different hosts".into()));
        }
        let links: Vec<LinkId> = ctx.with_network(|net| net.topology().links().map(|l| l.id.clone()).collect());
        for l in links {
            let id = ctx.spawn(&AgentSpec::new(LINK_AGENT).param("link", l.as_str()))?;
            self.link_agents.push(id);
        }
        Ok(Vec::new())
    }

    fn on_message(&mut self, msg: &Message, ctx: &mut AgentContext<'_>) -> Result<Payload, AgentError> {
        match msg.payload.kind.as_str() {
            "activate" => self.activate(ctx),
            "status" => Ok(match &self.active {
                Some((_, act)) => activated(act),
                None => Payload::empty("inactive"),
            }),
            other => Err(AgentError::UnknownPayloadKind { kind: other.into(), type_name: KMIRROR.into() }),
        }
    }

    fn on_stop(&mut self, ctx: &mut AgentContext<'_>) {
        if let Some((d, _)) = self.active.take() {
            ctx.with_network(|net| d.undo(net));
            ctx.log(format!("retract mirror paths for {}", d.flow.tag), true);
        }
    }
}
