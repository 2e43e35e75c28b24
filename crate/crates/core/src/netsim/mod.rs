//! Discrete-event SDN simulator.
//!
//! The network holds a validated [`Topology`], per-switch flow tables, latency
//! injections and capacity reservations. Packets are forwarded hop by hop:
//! forwarding state is sampled when a packet enters the network and each link
//! contributes its base latency plus any injection active at the instant the
//! packet starts crossing it. Arrivals are queued as events and land in the
//! destination's per-flow inbox once the clock passes them.

pub mod events;
pub mod routing;
pub mod topology;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

use self::events::EventQueue;
pub use self::routing::default_path;
pub use self::topology::{
    Link, LinkId, LinkSpec, Node, NodeId, NodeKind, NodeSpec, Topology, TopologySpec, EVALUATION_TOPOLOGY,
};

/// Window over which link transfer rate is averaged.
const RATE_WINDOW: SimTime = SimTime::from_millis(1000);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("empty topology")]
    EmptyTopology,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown endpoint {node} on link {link}")]
    UnknownEndpoint { link: LinkId, node: NodeId },
    #[error("non-positive capacity on link {0}")]
    NonPositiveCapacity(LinkId),
    #[error("negative latency on link {0}")]
    NegativeLatency(LinkId),
    #[error("link {0} connects a node to itself")]
    SelfLoop(LinkId),
    #[error("invalid nic count on node {0}")]
    InvalidNicCount(NodeId),
    #[error("topology parse error: {0}")]
    Parse(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("empty path")]
    EmptyPath,
    #[error("non-contiguous path at link {0}")]
    NonContiguous(LinkId),
    #[error("path does not start at flow source {0}")]
    WrongStart(NodeId),
    #[error("path does not end at flow destination {0}")]
    WrongEnd(NodeId),
    #[error("path transits host {0}")]
    TransitsHost(NodeId),
    #[error("path revisits node {0}")]
    RevisitsNode(NodeId),
    #[error("{0} is not a switch")]
    NotASwitch(NodeId),
    #[error("out link {link} is not incident to switch {switch}")]
    NotIncident { switch: NodeId, link: LinkId },
    #[error("non-positive injection on link {0}")]
    NonPositiveInjection(LinkId),
    #[error("inverted injection window on link {0}")]
    InvertedWindow(LinkId),
    #[error("insufficient capacity on link {link}: requested {requested} Mbps, residual {residual} Mbps")]
    InsufficientCapacity { link: LinkId, requested: f64, residual: f64 },
    #[error("unknown reservation {0}")]
    UnknownReservation(u64),
    #[error("packet sent at {sent_at} precedes the simulation clock {now}")]
    SendInPast { sent_at: SimTime, now: SimTime },
    #[error("non-positive deadline")]
    NonPositiveDeadline,
}

/// Identifies a flow: endpoints plus an opaque tag.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId {
    pub src: NodeId,
    pub dst: NodeId,
    pub tag: String,
}

impl FlowId {
    pub fn new(src: impl Into<NodeId>, dst: impl Into<NodeId>, tag: impl Into<String>) -> Self {
        FlowId { src: src.into(), dst: dst.into(), tag: tag.into() }
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub switch: NodeId,
    pub flow: FlowId,
    pub path_index: u32,
    pub out_link: LinkId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    pub size: u32,
    pub sent_at: SimTime,
    /// Relative delivery budget.
    pub deadline: SimTime,
    pub path_index: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyInjection {
    pub link: LinkId,
    pub extra: SimTime,
    pub start: SimTime,
    pub end: SimTime,
}

impl LatencyInjection {
    pub fn active_at(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub link: LinkId,
    pub from: NodeId,
    pub enter_at: SimTime,
    pub delay: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    NoRoute { at: NodeId },
    LinkGone { link: LinkId },
    Lost { link: LinkId },
    HostTransit { at: NodeId },
    RoutingLoop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub flow: FlowId,
    pub seq: u64,
    pub path_index: u32,
    pub sent_at: SimTime,
    pub delivered: bool,
    pub arrive_at: Option<SimTime>,
    pub latency: Option<SimTime>,
    pub violated_deadline: bool,
    pub hops: Vec<Hop>,
    pub drop_reason: Option<DropReason>,
}

impl DeliveryRecord {
    pub fn latency_ms(&self) -> Option<f64> {
        self.latency.map(SimTime::as_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub flow: FlowId,
    pub seq: u64,
    pub path_index: u32,
    pub sent_at: SimTime,
    pub at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub link: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub capacity_mbps: f64,
    pub base_latency_ms: f64,
    pub latency_now_ms: f64,
    pub rate_mbps: f64,
    pub load_mbps: f64,
}

impl LinkStats {
    pub fn residual_mbps(&self) -> f64 {
        self.capacity_mbps - self.load_mbps
    }
}

/// A consistent view of the network at one simulated instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub at: SimTime,
    pub nodes: Vec<Node>,
    pub links: Vec<LinkStats>,
}

impl TopologySnapshot {
    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }
}

/// Latency change on a link, traced when an injection starts or ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyChange {
    pub at: SimTime,
    pub link: LinkId,
    pub latency_now: SimTime,
}

#[derive(Clone, Debug)]
struct Deployment {
    egress: LinkId,
    links: Vec<LinkId>,
}

#[derive(Clone, Debug)]
struct Reservation {
    links: Vec<LinkId>,
    mbps: f64,
}

enum Event {
    Arrival(Arrival),
    InjectionEdge(LinkId),
}

/// Per-copy loss hook: return `true` to drop the packet on `link`.
pub type LossFilter = Box<dyn FnMut(&Packet, &LinkId) -> bool + Send>;

pub type SharedNetwork = Arc<Mutex<Network>>;

pub struct Network {
    topology: Topology,
    now: SimTime,
    rules: BTreeMap<(NodeId, FlowId, u32), LinkId>,
    deployments: BTreeMap<(FlowId, u32), Deployment>,
    injections: Vec<LatencyInjection>,
    reservations: BTreeMap<u64, Reservation>,
    next_reservation: u64,
    load: BTreeMap<LinkId, f64>,
    traffic: BTreeMap<LinkId, VecDeque<(SimTime, u32)>>,
    events: EventQueue<Event>,
    inboxes: BTreeMap<FlowId, Vec<Arrival>>,
    latency_trace: Vec<LatencyChange>,
    loss_filter: Option<LossFilter>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("now", &self.now)
            .field("nodes", &self.topology.node_count())
            .field("links", &self.topology.link_count())
            .field("rules", &self.rules.len())
            .finish()
    }
}

impl Network {
    pub fn new(topology: Topology) -> Self {
        Network {
            topology,
            now: SimTime::ZERO,
            rules: BTreeMap::new(),
            deployments: BTreeMap::new(),
            injections: Vec::new(),
            reservations: BTreeMap::new(),
            next_reservation: 1,
            load: BTreeMap::new(),
            traffic: BTreeMap::new(),
            events: EventQueue::default(),
            inboxes: BTreeMap::new(),
            latency_trace: Vec::new(),
            loss_filter: None,
        }
    }

    pub fn shared(self) -> SharedNetwork {
        Arc::new(Mutex::new(self))
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    // ---- control plane -------------------------------------------------

    /// Installs one rule per switch along `path` for `(flow, path_index)`,
    /// replacing any previous deployment of the same pair. Returns the
    /// number of switch rules installed.
    pub fn deploy_path(&mut self, flow: &FlowId, path_index: u32, path: &[LinkId]) -> Result<usize, SimError> {
        let hops = self.validate_path(flow, path)?;
        self.retract_path(flow, path_index);
        for (switch, out_link) in &hops {
            self.rules.insert((switch.clone(), flow.clone(), path_index), out_link.clone());
        }
        self.deployments
            .insert((flow.clone(), path_index), Deployment { egress: path[0].clone(), links: path.to_vec() });
        Ok(hops.len())
    }

    /// Returns `(switch, out_link)` for every switch the path crosses.
    fn validate_path(&self, flow: &FlowId, path: &[LinkId]) -> Result<Vec<(NodeId, LinkId)>, SimError> {
        for end in [&flow.src, &flow.dst] {
            if self.topology.node(end).is_none() {
                return Err(SimError::UnknownNode(end.clone()));
            }
        }
        let first = path.first().ok_or(SimError::EmptyPath)?;
        let first = self.topology.link(first).ok_or_else(|| SimError::UnknownLink(first.clone()))?;
        if !first.touches(&flow.src) {
            return Err(SimError::WrongStart(flow.src.clone()));
        }
        let mut visited = vec![flow.src.clone()];
        let mut here = first.other_end(&flow.src).expect("touches").clone();
        let mut hops = Vec::new();
        for id in &path[1..] {
            let link = self.topology.link(id).ok_or_else(|| SimError::UnknownLink(id.clone()))?;
            let next = link.other_end(&here).ok_or_else(|| SimError::NonContiguous(id.clone()))?.clone();
            if visited.contains(&here) {
                return Err(SimError::RevisitsNode(here));
            }
            let node = self.topology.node(&here).expect("validated topology");
            if !node.is_switch() {
                return Err(SimError::TransitsHost(here));
            }
            visited.push(here.clone());
            hops.push((here, id.clone()));
            here = next;
        }
        if here != flow.dst {
            return Err(SimError::WrongEnd(flow.dst.clone()));
        }
        if visited.contains(&here) {
            return Err(SimError::RevisitsNode(here));
        }
        Ok(hops)
    }

    /// Removes every rule for `(flow, path_index)`; idempotent.
    pub fn retract_path(&mut self, flow: &FlowId, path_index: u32) -> usize {
        let before = self.rules.len();
        self.rules.retain(|(_, f, i), _| !(f == flow && *i == path_index));
        self.deployments.remove(&(flow.clone(), path_index));
        before - self.rules.len()
    }

    /// Installs or replaces a single switch rule.
    pub fn write_rule(&mut self, rule: &FlowRule) -> Result<(), SimError> {
        let node = self.topology.node(&rule.switch).ok_or_else(|| SimError::UnknownNode(rule.switch.clone()))?;
        if !node.is_switch() {
            return Err(SimError::NotASwitch(rule.switch.clone()));
        }
        let link = self.topology.link(&rule.out_link).ok_or_else(|| SimError::UnknownLink(rule.out_link.clone()))?;
        if !link.touches(&rule.switch) {
            return Err(SimError::NotIncident { switch: rule.switch.clone(), link: rule.out_link.clone() });
        }
        self.rules.insert((rule.switch.clone(), rule.flow.clone(), rule.path_index), rule.out_link.clone());
        Ok(())
    }

    pub fn read_rules(&self, switch: &NodeId) -> Vec<FlowRule> {
        self.rules
            .iter()
            .filter(|((s, _, _), _)| s == switch)
            .map(|((s, f, i), l)| FlowRule { switch: s.clone(), flow: f.clone(), path_index: *i, out_link: l.clone() })
            .collect()
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Links of the deployed path for `(flow, path_index)`.
    pub fn deployed_path(&self, flow: &FlowId, path_index: u32) -> Option<&[LinkId]> {
        self.deployments.get(&(flow.clone(), path_index)).map(|d| d.links.as_slice())
    }

    /// Deploys the default shortest route for `flow` at path index 0.
    pub fn deploy_default_route(&mut self, flow: &FlowId) -> Result<Vec<LinkId>, SimError> {
        let path =
            default_path(&self.topology, &flow.src, &flow.dst).ok_or_else(|| SimError::WrongEnd(flow.dst.clone()))?;
        self.deploy_path(flow, 0, &path)?;
        Ok(path)
    }

    pub fn inject_latency(&mut self, inj: LatencyInjection) -> Result<(), SimError> {
        if self.topology.link(&inj.link).is_none() {
            return Err(SimError::UnknownLink(inj.link));
        }
        if inj.extra == SimTime::ZERO {
            return Err(SimError::NonPositiveInjection(inj.link));
        }
        if inj.start >= inj.end {
            return Err(SimError::InvertedWindow(inj.link));
        }
        self.events.push(inj.start.max(self.now), Event::InjectionEdge(inj.link.clone()));
        self.events.push(inj.end.max(self.now), Event::InjectionEdge(inj.link.clone()));
        self.injections.push(inj);
        Ok(())
    }

    pub fn injections(&self) -> &[LatencyInjection] {
        &self.injections
    }

    /// Delay contributed by `link` to a packet that starts crossing it at `t`.
    pub fn link_delay(&self, link: &LinkId, t: SimTime) -> Option<SimTime> {
        let base = self.topology.link(link)?.base_latency;
        let extra = self
            .injections
            .iter()
            .filter(|i| &i.link == link && i.active_at(t))
            .fold(SimTime::ZERO, |acc, i| acc + i.extra);
        Some(base + extra)
    }

    /// Reserves `mbps` on every link; all-or-nothing.
    pub fn reserve(&mut self, links: &[LinkId], mbps: f64) -> Result<u64, SimError> {
        for id in links {
            let link = self.topology.link(id).ok_or_else(|| SimError::UnknownLink(id.clone()))?;
            let residual = link.capacity_mbps - self.load.get(id).copied().unwrap_or(0.0);
            if mbps > residual + 1e-9 {
                return Err(SimError::InsufficientCapacity { link: id.clone(), requested: mbps, residual });
            }
        }
        for id in links {
            *self.load.entry(id.clone()).or_insert(0.0) += mbps;
        }
        let id = self.next_reservation;
        self.next_reservation += 1;
        self.reservations.insert(id, Reservation { links: links.to_vec(), mbps });
        Ok(id)
    }

    pub fn release(&mut self, reservation: u64) -> Result<(), SimError> {
        let r = self.reservations.remove(&reservation).ok_or(SimError::UnknownReservation(reservation))?;
        for id in &r.links {
            if let Some(load) = self.load.get_mut(id) {
                *load = (*load - r.mbps).max(0.0);
                if *load < 1e-12 {
                    self.load.remove(id);
                }
            }
        }
        Ok(())
    }

    /// Removes a link along with every rule, deployment and reservation that uses it.
    pub fn remove_link(&mut self, id: &LinkId) -> Result<(), SimError> {
        self.topology.remove_link(id).ok_or_else(|| SimError::UnknownLink(id.clone()))?;
        self.rules.retain(|_, out| out != id);
        self.deployments.retain(|_, d| !d.links.contains(id));
        let stale: Vec<u64> = self.reservations.iter().filter(|(_, r)| r.links.contains(id)).map(|(k, _)| *k).collect();
        for k in stale {
            let _ = self.release(k);
        }
        self.load.remove(id);
        self.injections.retain(|i| &i.link != id);
        Ok(())
    }

    /// Installs a per-copy loss hook (`None` clears it).
    pub fn set_loss_filter(&mut self, filter: Option<LossFilter>) {
        self.loss_filter = filter;
    }

    // ---- data plane ----------------------------------------------------

    /// Forwards `p` from its flow source along the installed rules. Drops are
    /// reported in the record, never raised. Packets are never retransmitted.
    pub fn send_packet(&mut self, p: Packet) -> Result<DeliveryRecord, SimError> {
        if p.sent_at < self.now {
            return Err(SimError::SendInPast { sent_at: p.sent_at, now: self.now });
        }
        if p.deadline == SimTime::ZERO {
            return Err(SimError::NonPositiveDeadline);
        }
        let mut record = DeliveryRecord {
            flow: p.flow.clone(),
            seq: p.seq,
            path_index: p.path_index,
            sent_at: p.sent_at,
            delivered: false,
            arrive_at: None,
            latency: None,
            violated_deadline: false,
            hops: Vec::new(),
            drop_reason: None,
        };
        let Some(deployment) = self.deployments.get(&(p.flow.clone(), p.path_index)) else {
            record.drop_reason = Some(DropReason::NoRoute { at: p.flow.src.clone() });
            return Ok(record);
        };
        let mut out = deployment.egress.clone();
        let mut here = p.flow.src.clone();
        let mut t = p.sent_at;
        let max_hops = self.topology.link_count() + 1;
        loop {
            if record.hops.len() >= max_hops {
                record.drop_reason = Some(DropReason::RoutingLoop);
                return Ok(record);
            }
            let Some(link) = self.topology.link(&out) else {
                record.drop_reason = Some(DropReason::LinkGone { link: out });
                return Ok(record);
            };
            let next = link.other_end(&here).expect("rules are incident").clone();
            let delay = self.link_delay(&out, t).expect("link exists");
            record.hops.push(Hop { link: out.clone(), from: here.clone(), enter_at: t, delay });
            self.traffic.entry(out.clone()).or_default().push_back((t, p.size));
            if let Some(filter) = self.loss_filter.as_mut() {
                if filter(&p, &out) {
                    record.drop_reason = Some(DropReason::Lost { link: out });
                    return Ok(record);
                }
            }
            t += delay;
            here = next;
            if here == p.flow.dst {
                break;
            }
            let node = self.topology.node(&here).expect("validated topology");
            if !node.is_switch() {
                record.drop_reason = Some(DropReason::HostTransit { at: here });
                return Ok(record);
            }
            match self.rules.get(&(here.clone(), p.flow.clone(), p.path_index)) {
                Some(l) => out = l.clone(),
                None => {
                    record.drop_reason = Some(DropReason::NoRoute { at: here });
                    return Ok(record);
                }
            }
        }
        let latency = t - p.sent_at;
        record.delivered = true;
        record.arrive_at = Some(t);
        record.latency = Some(latency);
        record.violated_deadline = latency > p.deadline;
        self.events.push(
            t,
            Event::Arrival(Arrival {
                flow: p.flow.clone(),
                seq: p.seq,
                path_index: p.path_index,
                sent_at: p.sent_at,
                at: t,
            }),
        );
        Ok(record)
    }

    /// Processes every event due at or before `t` and moves the clock to `t`.
    /// The clock never moves backwards.
    pub fn advance_to(&mut self, t: SimTime) {
        while let Some((at, ev)) = self.events.pop_due(t) {
            self.now = self.now.max(at);
            self.apply(ev);
        }
        self.now = self.now.max(t);
        self.prune_traffic();
    }

    pub fn advance_by(&mut self, dt: SimTime) {
        let t = self.now + dt;
        self.advance_to(t);
    }

    /// Drains the event queue, leaving the clock at the last event time.
    pub fn run_until_idle(&mut self) {
        while let Some((at, ev)) = self.events.pop_due(SimTime::MAX) {
            self.now = self.now.max(at);
            self.apply(ev);
        }
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    fn apply(&mut self, ev: Event) {
        match ev {
            Event::Arrival(a) => self.inboxes.entry(a.flow.clone()).or_default().push(a),
            Event::InjectionEdge(link) => {
                if let Some(latency_now) = self.link_delay(&link, self.now) {
                    self.latency_trace.push(LatencyChange { at: self.now, link, latency_now });
                }
            }
        }
    }

    fn prune_traffic(&mut self) {
        let horizon = self.now.saturating_sub(RATE_WINDOW);
        for q in self.traffic.values_mut() {
            while q.front().is_some_and(|(t, _)| *t < horizon) {
                q.pop_front();
            }
        }
    }

    /// Arrivals delivered to `flow`'s destination so far, in arrival order.
    pub fn take_arrivals(&mut self, flow: &FlowId) -> Vec<Arrival> {
        self.inboxes.remove(flow).unwrap_or_default()
    }

    pub fn latency_trace(&self) -> &[LatencyChange] {
        &self.latency_trace
    }

    // ---- monitoring ----------------------------------------------------

    pub fn link_stats(&self, id: &LinkId) -> Result<LinkStats, SimError> {
        let link = self.topology.link(id).ok_or_else(|| SimError::UnknownLink(id.clone()))?;
        let horizon = self.now.saturating_sub(RATE_WINDOW);
        let bytes: u64 = self
            .traffic
            .get(id)
            .map(|q| q.iter().filter(|(t, _)| *t > horizon && *t <= self.now).map(|(_, b)| *b as u64).sum())
            .unwrap_or(0);
        Ok(LinkStats {
            link: id.clone(),
            endpoints: link.endpoints.clone(),
            capacity_mbps: link.capacity_mbps,
            base_latency_ms: link.base_latency.as_ms(),
            latency_now_ms: self.link_delay(id, self.now).expect("link exists").as_ms(),
            rate_mbps: bytes as f64 * 8.0 / 1e6 / RATE_WINDOW.as_secs(),
            load_mbps: self.load.get(id).copied().unwrap_or(0.0),
        })
    }

    pub fn snapshot(&self) -> TopologySnapshot {
        TopologySnapshot {
            at: self.now,
            nodes: self.topology.nodes().cloned().collect(),
            links: self.topology.links().map(|l| self.link_stats(&l.id).expect("link exists")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<LinkId> {
        xs.iter().map(|s| LinkId::from(*s)).collect()
    }

    fn eval() -> Network {
        Network::new(Topology::evaluation())
    }

    const DEFAULT_PATH: [&str; 4] = ["A-R1", "R1-R3", "R3-R4", "R4-B"];

    fn packet(flow: &FlowId, seq: u64, at_ms: f64) -> Packet {
        Packet {
            flow: flow.clone(),
            seq,
            size: 1000,
            sent_at: SimTime::from_ms_f64(at_ms),
            deadline: SimTime::from_millis(5),
            path_index: 0,
        }
    }

    fn r4b_injection() -> LatencyInjection {
        LatencyInjection {
            link: "R4-B".into(),
            extra: SimTime::from_millis(10),
            start: SimTime::from_millis(40),
            end: SimTime::from_millis(60),
        }
    }

    #[test]
    fn deploy_installs_one_rule_per_switch() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        assert_eq!(net.deploy_path(&f, 0, &ids(&DEFAULT_PATH)).unwrap(), 3);
        for s in ["R1", "R3", "R4"] {
            assert_eq!(net.read_rules(&s.into()).len(), 1);
        }
        assert!(net.read_rules(&"R2".into()).is_empty());
    }

    #[test]
    fn deploy_rejects_bad_paths() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        let err = net.deploy_path(&f, 0, &ids(&["A-R1", "R2-R3"])).unwrap_err();
        assert!(err.to_string().contains("non-contiguous"));
        assert!(matches!(net.deploy_path(&f, 0, &ids(&["R1-R3"])), Err(SimError::WrongStart(_))));
        assert!(matches!(net.deploy_path(&f, 0, &ids(&["A-R1", "R1-R3"])), Err(SimError::WrongEnd(_))));
        assert!(matches!(net.deploy_path(&f, 0, &[]), Err(SimError::EmptyPath)));
        assert_eq!(net.rule_count(), 0);
    }

    #[test]
    fn redeploy_replaces_old_rules() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        net.deploy_path(&f, 0, &ids(&DEFAULT_PATH)).unwrap();
        net.deploy_path(&f, 0, &ids(&["A-R2", "R2-R3", "R3-R5", "R5-B"])).unwrap();
        assert!(net.read_rules(&"R1".into()).is_empty());
        assert!(net.read_rules(&"R4".into()).is_empty());
        assert_eq!(net.read_rules(&"R2".into()).len(), 1);
        assert_eq!(net.read_rules(&"R3".into())[0].out_link.as_str(), "R3-R5");
        assert_eq!(net.rule_count(), 3);
    }

    #[test]
    fn retract_is_idempotent() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        net.deploy_path(&f, 0, &ids(&DEFAULT_PATH)).unwrap();
        assert_eq!(net.retract_path(&f, 0), 3);
        assert_eq!(net.retract_path(&f, 0), 0);
        let mut tiny = Network::new(Topology::parse("[[node]]\nid = \"S\"\nkind = \"switch\"\n").unwrap());
        assert_eq!(tiny.retract_path(&f, 0), 0);
        assert_eq!(tiny.snapshot().links.len(), 0);
    }

    #[test]
    fn injection_window_is_half_open() {
        let mut net = eval();
        net.inject_latency(r4b_injection()).unwrap();
        let l = LinkId::from("R4-B");
        assert_eq!(net.link_delay(&l, SimTime::from_millis(50)).unwrap().as_ms(), 10.5);
        assert_eq!(net.link_delay(&l, SimTime::from_millis(60)).unwrap().as_ms(), 0.5);
        assert_eq!(net.link_delay(&l, SimTime::from_millis(40)).unwrap().as_ms(), 10.5);
    }

    #[test]
    fn injection_validation() {
        let mut net = eval();
        let mut inj = r4b_injection();
        inj.extra = SimTime::ZERO;
        assert!(net.inject_latency(inj).unwrap_err().to_string().contains("non-positive injection"));
        let mut inj = r4b_injection();
        inj.end = inj.start;
        assert!(matches!(net.inject_latency(inj), Err(SimError::InvertedWindow(_))));
        let mut inj = r4b_injection();
        inj.link = "R9-B".into();
        assert!(matches!(net.inject_latency(inj), Err(SimError::UnknownLink(_))));
    }

    #[test]
    fn four_hop_latency_with_and_without_injection() {
        let mut net = eval();
        net.inject_latency(r4b_injection()).unwrap();
        let f = FlowId::new("A", "B", "f");
        net.deploy_path(&f, 0, &ids(&DEFAULT_PATH)).unwrap();
        let quiet = net.send_packet(packet(&f, 0, 0.0)).unwrap();
        assert!(quiet.delivered);
        assert_eq!(quiet.latency.unwrap().as_nanos(), 2_000_000);
        assert!(!quiet.violated_deadline);
        // Reaches R4-B at 50 ms.
        let hit = net.send_packet(packet(&f, 1, 48.5)).unwrap();
        assert_eq!(hit.latency.unwrap().as_nanos(), 12_000_000);
        assert!(hit.violated_deadline);
        assert_eq!(hit.hops.len(), 4);
    }

    #[test]
    fn no_rules_means_drop() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "nothing");
        let r = net.send_packet(packet(&f, 0, 0.0)).unwrap();
        assert!(!r.delivered);
        assert!(r.hops.is_empty());
    }

    #[test]
    fn arrivals_land_when_clock_passes() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        net.deploy_path(&f, 0, &ids(&DEFAULT_PATH)).unwrap();
        net.send_packet(packet(&f, 0, 0.0)).unwrap();
        net.advance_to(SimTime::from_millis(1));
        assert!(net.take_arrivals(&f).is_empty());
        net.advance_to(SimTime::from_millis(2));
        assert_eq!(net.take_arrivals(&f).len(), 1);
        assert!(matches!(net.send_packet(packet(&f, 1, 0.0)), Err(SimError::SendInPast { .. })));
    }

    #[test]
    fn link_stats_and_snapshot_track_injection() {
        let mut net = eval();
        net.inject_latency(r4b_injection()).unwrap();
        let l = LinkId::from("R4-B");
        let before = net.link_stats(&l).unwrap();
        assert_eq!(before.latency_now_ms, 0.5);
        assert_eq!(before.load_mbps, 0.0);
        assert_eq!(before.capacity_mbps, 100.0);
        net.advance_to(SimTime::from_millis(45));
        assert_eq!(net.link_stats(&l).unwrap().latency_now_ms, 10.5);
        let snap = net.snapshot();
        assert_eq!(snap.nodes.len(), 7);
        assert_eq!(snap.links.len(), 8);
        assert_eq!(snap.links.iter().find(|s| s.link == l).unwrap().latency_now_ms, 10.5);
        assert_eq!(net.latency_trace().len(), 1);
    }

    #[test]
    fn reservations_bound_load_by_capacity() {
        let mut net = eval();
        let path = ids(&DEFAULT_PATH);
        let r1 = net.reserve(&path, 60.0).unwrap();
        assert!(matches!(net.reserve(&path, 50.0), Err(SimError::InsufficientCapacity { .. })));
        assert_eq!(net.link_stats(&"R1-R3".into()).unwrap().load_mbps, 60.0);
        net.release(r1).unwrap();
        assert_eq!(net.link_stats(&"R1-R3".into()).unwrap().load_mbps, 0.0);
        assert!(net.reserve(&path, 100.0).is_ok());
    }

    #[test]
    fn write_rule_checks_incidence() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        let bad = FlowRule { switch: "R3".into(), flow: f.clone(), path_index: 0, out_link: "A-R1".into() };
        assert!(matches!(net.write_rule(&bad), Err(SimError::NotIncident { .. })));
        let host = FlowRule { switch: "A".into(), flow: f, path_index: 0, out_link: "A-R1".into() };
        assert!(matches!(net.write_rule(&host), Err(SimError::NotASwitch(_))));
    }

    #[test]
    fn removing_a_link_drops_dependent_state() {
        let mut net = eval();
        let f = FlowId::new("A", "B", "f");
        net.deploy_path(&f, 0, &ids(&DEFAULT_PATH)).unwrap();
        net.remove_link(&"R3-R4".into()).unwrap();
        assert!(net.deployed_path(&f, 0).is_none());
        assert!(net.read_rules(&"R3".into()).is_empty());
        assert_eq!(net.topology().link_count(), 7);
    }
}
