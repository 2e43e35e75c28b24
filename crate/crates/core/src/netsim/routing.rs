//! Default (baseline) routing: the single shortest path by static latency.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::topology::{LinkId, NodeId, Topology};

#[derive(Clone, Debug, PartialEq, Eq)]
struct Label {
    dist: u64,
    nodes: Vec<NodeId>,
    links: Vec<LinkId>,
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        (other.dist, &other.nodes, &other.links).cmp(&(self.dist, &self.nodes, &self.links))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest `src → dst` path over base latencies. Among equal-latency paths the
/// lexicographically smallest node sequence wins, then the smallest link id
/// sequence. Only switches forward traffic.
pub fn default_path(topology: &Topology, src: &NodeId, dst: &NodeId) -> Option<Vec<LinkId>> {
    topology.node(src)?;
    topology.node(dst)?;
    if src == dst {
        return None;
    }
    let mut best: BTreeMap<NodeId, Label> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let start = Label { dist: 0, nodes: vec![src.clone()], links: vec![] };
    best.insert(src.clone(), start.clone());
    heap.push(start);
    while let Some(label) = heap.pop() {
        let here = label.nodes.last().expect("non-empty").clone();
        if best.get(&here) != Some(&label) {
            continue;
        }
        if &here == dst {
            return Some(label.links);
        }
        let forwards = &here == src || topology.node(&here).is_some_and(|n| n.is_switch());
        if !forwards {
            continue;
        }
        for link in topology.incident(&here) {
            let next = link.other_end(&here).expect("incident").clone();
            if label.nodes.contains(&next) {
                continue;
            }
            let mut nodes = label.nodes.clone();
            nodes.push(next.clone());
            let mut links = label.links.clone();
            links.push(link.id.clone());
            let cand = Label { dist: label.dist + link.base_latency.as_nanos(), nodes, links };
            let better = match best.get(&next) {
                None => true,
                // `Ord` is reversed: greater means smaller label.
                Some(cur) => cand > *cur,
            };
            if better {
                best.insert(next, cand.clone());
                heap.push(cand);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_route_on_evaluation_topology() {
        let t = Topology::evaluation();
        let p = default_path(&t, &"A".into(), &"B".into()).unwrap();
        let ids: Vec<&str> = p.iter().map(|l| l.as_str()).collect();
        assert_eq!(ids, ["A-R1", "R1-R3", "R3-R4", "R4-B"]);
    }

    #[test]
    fn no_route_through_hosts() {
        let t = Topology::parse(
            r#"
            [[node]]
            id = "X"
            kind = "host"
            [[node]]
            id = "Y"
            kind = "host"
            [[node]]
            id = "Z"
            kind = "host"
            [[link]]
            endpoints = ["X", "Y"]
            capacity_mbps = 1
            latency_ms = 1
            [[link]]
            endpoints = ["Y", "Z"]
            capacity_mbps = 1
            latency_ms = 1
        "#,
        )
        .unwrap();
        assert!(default_path(&t, &"X".into(), &"Z".into()).is_none());
        assert_eq!(default_path(&t, &"X".into(), &"Y".into()).unwrap().len(), 1);
    }
}
