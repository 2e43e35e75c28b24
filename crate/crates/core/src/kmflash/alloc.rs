//! Constrained K link-disjoint path allocation.
//!
//! Successive shortest paths over a unit-capacity residual graph (each
//! undirected link becomes two opposite arcs) with Johnson potentials. After
//! `k` augmentations the flow is a minimum-latency set of `k` link-disjoint
//! paths, so feasibility never suffers from the trap topologies that defeat
//! greedy edge removal.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{LinkId, NodeId, NodeKind, TopologySnapshot};
use crate::time::SimTime;

pub const DEFAULT_EPSILON_MS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AllocRequest {
    pub src: NodeId,
    pub dst: NodeId,
    pub k: u32,
    pub rate_mbps: f64,
    pub max_latency: SimTime,
    /// Largest tolerated latency difference between any two paths.
    pub epsilon: SimTime,
}

impl AllocRequest {
    pub fn new(src: impl Into<NodeId>, dst: impl Into<NodeId>, k: u32, rate_mbps: f64, max_latency_ms: f64) -> Self {
        AllocRequest {
            src: src.into(),
            dst: dst.into(),
            k,
            rate_mbps,
            max_latency: SimTime::from_ms_f64(max_latency_ms),
            epsilon: SimTime::from_ms_f64(DEFAULT_EPSILON_MS),
        }
    }

    pub fn with_epsilon_ms(mut self, ms: f64) -> Self {
        self.epsilon = SimTime::from_ms_f64(ms);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorPath {
    pub links: Vec<LinkId>,
    pub nodes: Vec<NodeId>,
    pub latency: SimTime,
    pub residual_mbps: f64,
}

impl MirrorPath {
    pub fn latency_ms(&self) -> f64 {
        self.latency.as_ms()
    }
}

impl fmt::Display for MirrorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.nodes.iter().map(NodeId::as_str).collect();
        f.write_str(&names.join("-"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<MirrorPath>,
    pub spread: SimTime,
}

impl PathSet {
    fn new(mut paths: Vec<MirrorPath>) -> Self {
        paths.sort_by(|a, b| (a.latency, &a.nodes).cmp(&(b.latency, &b.nodes)));
        let spread = match (paths.first(), paths.last()) {
            (Some(lo), Some(hi)) => hi.latency - lo.latency,
            _ => SimTime::ZERO,
        };
        PathSet { paths, spread }
    }

    pub fn total_latency(&self) -> SimTime {
        self.paths.iter().fold(SimTime::ZERO, |acc, p| acc + p.latency)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// No link id appears twice across the set.
    pub fn is_link_disjoint(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.paths.iter().flat_map(|p| &p.links).all(|l| seen.insert(l))
    }

    fn violation(&self, req: &AllocRequest) -> Option<String> {
        if let Some(p) = self.paths.iter().find(|p| p.latency > req.max_latency) {
            return Some(format!(
                "path {p} latency {} ms exceeds max_latency {} ms",
                p.latency.as_ms(),
                req.max_latency.as_ms()
            ));
        }
        if self.spread > req.epsilon {
            return Some(format!(
                "latency spread {} ms exceeds tolerance {} ms",
                self.spread.as_ms(),
                req.epsilon.as_ms()
            ));
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationFailure {
    pub reason: String,
    pub max_feasible_k: u32,
}

impl fmt::Display for AllocationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "allocation failed: {}", self.reason)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("source and destination are both {0}")]
    SameEndpoints(NodeId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Infeasible(AllocationFailure),
}

struct Arc {
    to: usize,
    link: usize,
    cost: i64,
    flow: bool,
    twin: usize,
}

struct Graph {
    nodes: Vec<NodeId>,
    links: Vec<(LinkId, f64, SimTime)>,
    /// Outgoing arc indices per node, sorted by (neighbor, link).
    out: Vec<Vec<usize>>,
    arcs: Vec<Arc>,
    src: usize,
    dst: usize,
}

impl Graph {
    fn build(snap: &TopologySnapshot, req: &AllocRequest) -> Graph {
        let usable: Vec<&NodeId> = snap
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Switch || n.id == req.src || n.id == req.dst)
            .map(|n| &n.id)
            .collect();
        let mut nodes: Vec<NodeId> = usable.into_iter().cloned().collect();
        nodes.sort();
        let index: BTreeMap<&NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
        let mut links = Vec::new();
        let mut arcs = Vec::new();
        let mut out = vec![Vec::new(); nodes.len()];
        let mut sorted: Vec<_> = snap.links.iter().collect();
        sorted.sort_by(|a, b| a.link.cmp(&b.link));
        for l in sorted {
            let (Some(&a), Some(&b)) = (index.get(&l.endpoints.0), index.get(&l.endpoints.1)) else {
                continue;
            };
            if a == b || l.residual_mbps() + 1e-9 < req.rate_mbps {
                continue;
            }
            let latency = SimTime::from_ms_f64(l.latency_now_ms);
            let li = links.len();
            links.push((l.link.clone(), l.residual_mbps(), latency));
            let cost = latency.as_nanos() as i64;
            let fwd = arcs.len();
            arcs.push(Arc { to: b, link: li, cost, flow: false, twin: fwd + 1 });
            arcs.push(Arc { to: a, link: li, cost, flow: false, twin: fwd });
            out[a].push(fwd);
            out[b].push(fwd + 1);
        }
        for list in &mut out {
            list.sort_by_key(|&i| (arcs[i].to, arcs[i].link));
        }
        let src = index[&req.src];
        let dst = index[&req.dst];
        Graph { nodes, links, out, arcs, src, dst }
    }

    /// Residual arc `i` as seen from its tail: usable with `cost` when the
    /// arc carries no flow, and its twin's reversal when the twin does.
    fn residual(&self, i: usize) -> Option<i64> {
        let a = &self.arcs[i];
        let t = &self.arcs[a.twin];
        if t.flow {
            Some(-t.cost)
        } else if !a.flow {
            Some(a.cost)
        } else {
            None
        }
    }

    /// One augmentation along a shortest residual path. Returns false when
    /// the destination is unreachable.
    fn augment(&mut self, potential: &mut [i64]) -> bool {
        let n = self.nodes.len();
        let mut dist = vec![i64::MAX; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[self.src] = 0;
        heap.push(Reverse((0i64, self.src)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &i in &self.out[u] {
                let Some(c) = self.residual(i) else { continue };
                let v = self.arcs[i].to;
                let nd = d + c + potential[u] - potential[v];
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = Some(i);
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        if dist[self.dst] == i64::MAX {
            return false;
        }
        for v in 0..n {
            if dist[v] != i64::MAX {
                potential[v] += dist[v];
            }
        }
        let mut v = self.dst;
        while v != self.src {
            let i = pred[v].expect("reached");
            let twin = self.arcs[i].twin;
            if self.arcs[twin].flow {
                self.arcs[twin].flow = false;
            } else {
                self.arcs[i].flow = true;
            }
            v = self.arcs[twin].to;
        }
        true
    }

    /// Splits the current flow into simple src→dst paths, dropping cycles.
    fn decompose(&self) -> Vec<MirrorPath> {
        let mut flow: Vec<bool> = self.arcs.iter().map(|a| a.flow).collect();
        let mut paths = Vec::new();
        loop {
            let mut walk_nodes = vec![self.src];
            let mut walk_arcs: Vec<usize> = Vec::new();
            let mut here = self.src;
            while here != self.dst {
                let Some(&i) = self.out[here].iter().find(|&&i| flow[i]) else {
                    break;
                };
                flow[i] = false;
                here = self.arcs[i].to;
                if let Some(pos) = walk_nodes.iter().position(|&n| n == here) {
                    walk_nodes.truncate(pos + 1);
                    walk_arcs.truncate(pos);
                } else {
                    walk_nodes.push(here);
                    walk_arcs.push(i);
                }
            }
            if here != self.dst || walk_arcs.is_empty() {
                break;
            }
            let links: Vec<LinkId> = walk_arcs.iter().map(|&i| self.links[self.arcs[i].link].0.clone()).collect();
            let latency = walk_arcs.iter().fold(SimTime::ZERO, |acc, &i| acc + self.links[self.arcs[i].link].2);
            let residual = walk_arcs.iter().map(|&i| self.links[self.arcs[i].link].1).fold(f64::INFINITY, f64::min);
            paths.push(MirrorPath {
                links,
                nodes: walk_nodes.iter().map(|&n| self.nodes[n].clone()).collect(),
                latency,
                residual_mbps: residual,
            });
        }
        paths
    }
}

/// Allocates `req.k` link-disjoint paths of minimum total latency over links
/// with residual capacity of at least `req.rate_mbps`, then checks the
/// latency bound and spread tolerance.
pub fn allocate_disjoint_paths(snap: &TopologySnapshot, req: &AllocRequest) -> Result<PathSet, AllocError> {
    for end in [&req.src, &req.dst] {
        if snap.node(end).is_none() {
            return Err(AllocError::UnknownNode(end.clone()));
        }
    }
    if req.src == req.dst {
        return Err(AllocError::SameEndpoints(req.src.clone()));
    }
    if req.k == 0 {
        return Err(AllocError::InvalidRequest("K must be at least 1".into()));
    }
    if !(req.rate_mbps > 0.0 && req.rate_mbps.is_finite()) {
        return Err(AllocError::InvalidRequest("rate must be positive".into()));
    }
    if req.max_latency == SimTime::ZERO {
        return Err(AllocError::InvalidRequest("max_latency must be positive".into()));
    }

    let mut g = Graph::build(snap, req);
    let mut potential = vec![0i64; g.nodes.len()];
    // stages[j] is the min-cost set of j + 1 paths.
    let mut stages: Vec<PathSet> = Vec::new();
    while stages.len() < req.k as usize && g.augment(&mut potential) {
        stages.push(PathSet::new(g.decompose()));
    }

    let first_violation = if stages.len() == req.k as usize {
        let set = stages.pop().expect("k >= 1");
        match set.violation(req) {
            None => return Ok(set),
            Some(v) => v,
        }
    } else {
        format!("only {} disjoint paths", stages.len())
    };
    let max_feasible_k = stages.iter().rposition(|s| s.violation(req).is_none()).map_or(0, |i| i as u32 + 1);
    Err(AllocError::Infeasible(AllocationFailure { reason: first_violation, max_feasible_k }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{Network, Topology};

    fn eval_snapshot() -> TopologySnapshot {
        Network::new(Topology::evaluation()).snapshot()
    }

    fn node_names(p: &MirrorPath) -> String {
        p.to_string()
    }

    #[test]
    fn evaluation_k2() {
        let set = allocate_disjoint_paths(&eval_snapshot(), &AllocRequest::new("A", "B", 2, 10.0, 5.0)).unwrap();
        let names: Vec<String> = set.paths.iter().map(node_names).collect();
        assert_eq!(names, ["A-R1-R3-R4-B", "A-R2-R3-R5-B"]);
        assert!(set.paths.iter().all(|p| p.latency == SimTime::from_millis(2)));
        assert_eq!(set.spread, SimTime::ZERO);
        assert!(set.is_link_disjoint());
    }

    #[test]
    fn evaluation_k3_reports_two() {
        let err = allocate_disjoint_paths(&eval_snapshot(), &AllocRequest::new("A", "B", 3, 10.0, 5.0)).unwrap_err();
        let AllocError::Infeasible(f) = err else { panic!("{err:?}") };
        assert_eq!(f.max_feasible_k, 2);
        assert_eq!(f.to_string(), "allocation failed: only 2 disjoint paths");
    }

    #[test]
    fn single_link_graph() {
        let topo = Topology::parse(
            "[[node]]\nid = \"X\"\nkind = \"host\"\nnics = 1\n[[node]]\nid = \"Y\"\nkind = \"host\"\nnics = 1\n\
             [[link]]\nendpoints = [\"X\", \"Y\"]\ncapacity_mbps = 100\nlatency_ms = 1\n",
        )
        .unwrap();
        let snap = Network::new(topo).snapshot();
        let set = allocate_disjoint_paths(&snap, &AllocRequest::new("X", "Y", 1, 1.0, 5.0)).unwrap();
        assert_eq!(set.paths[0].links, vec![LinkId::from("X-Y")]);
    }

    #[test]
    fn trap_topology_is_solved() {
        // Greedy shortest path s-a-b-t blocks the second path; reversal finds
        // s-a-t and s-b-t.
        let topo = Topology::parse(
            "[[node]]\nid = \"s\"\nkind = \"host\"\nnics = 2\n[[node]]\nid = \"t\"\nkind = \"host\"\nnics = 2\n\
             [[node]]\nid = \"a\"\nkind = \"switch\"\n[[node]]\nid = \"b\"\nkind = \"switch\"\n\
             [[link]]\nendpoints = [\"s\", \"a\"]\ncapacity_mbps = 100\nlatency_ms = 1\n\
             [[link]]\nendpoints = [\"a\", \"b\"]\ncapacity_mbps = 100\nlatency_ms = 1\n\
             [[link]]\nendpoints = [\"b\", \"t\"]\ncapacity_mbps = 100\nlatency_ms = 1\n\
             [[link]]\nendpoints = [\"s\", \"b\"]\ncapacity_mbps = 100\nlatency_ms = 3\n\
             [[link]]\nendpoints = [\"a\", \"t\"]\ncapacity_mbps = 100\nlatency_ms = 3\n",
        )
        .unwrap();
        let snap = Network::new(topo).snapshot();
        let set = allocate_disjoint_paths(&snap, &AllocRequest::new("s", "t", 2, 1.0, 10.0)).unwrap();
        assert_eq!(set.total_latency(), SimTime::from_millis(8));
        assert!(set.is_link_disjoint());
    }

    #[test]
    fn constraints_are_enforced() {
        let snap = eval_snapshot();
        let err = allocate_disjoint_paths(&snap, &AllocRequest::new("A", "B", 2, 10.0, 1.5)).unwrap_err();
        assert!(matches!(err, AllocError::Infeasible(AllocationFailure { max_feasible_k: 0, .. })));
        let err = allocate_disjoint_paths(&snap, &AllocRequest::new("A", "B", 1, 200.0, 5.0)).unwrap_err();
        assert!(matches!(err, AllocError::Infeasible(AllocationFailure { max_feasible_k: 0, .. })));
    }

    #[test]
    fn injected_latency_widens_spread() {
        let mut net = Network::new(Topology::evaluation());
        net.inject_latency(crate::netsim::LatencyInjection {
            link: "R4-B".into(),
            extra: SimTime::from_millis(2),
            start: SimTime::ZERO,
            end: SimTime::from_millis(100),
        })
        .unwrap();
        net.advance_to(SimTime::from_millis(1));
        let err = allocate_disjoint_paths(&net.snapshot(), &AllocRequest::new("A", "B", 2, 10.0, 5.0)).unwrap_err();
        let AllocError::Infeasible(f) = err else { panic!() };
        assert!(f.reason.contains("spread"), "{}", f.reason);
        assert_eq!(f.max_feasible_k, 1);
        let ok =
            allocate_disjoint_paths(&net.snapshot(), &AllocRequest::new("A", "B", 2, 10.0, 5.0).with_epsilon_ms(3.0))
                .unwrap();
        assert_eq!(ok.spread, SimTime::from_millis(2));
    }

    #[test]
    fn request_errors() {
        let snap = eval_snapshot();
        assert!(matches!(
            allocate_disjoint_paths(&snap, &AllocRequest::new("A", "Z", 1, 1.0, 5.0)),
            Err(AllocError::UnknownNode(_))
        ));
        assert!(matches!(
            allocate_disjoint_paths(&snap, &AllocRequest::new("A", "A", 1, 1.0, 5.0)),
            Err(AllocError::SameEndpoints(_))
        ));
        assert!(matches!(
            allocate_disjoint_paths(&snap, &AllocRequest::new("A", "B", 0, 1.0, 5.0)),
            Err(AllocError::InvalidRequest(_))
        ));
    }
}
