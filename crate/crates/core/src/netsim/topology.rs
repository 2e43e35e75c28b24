use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

use super::SimError;

/// Evaluation topology: two dual-homed hosts across five switches.
pub const EVALUATION_TOPOLOGY: &str = include_str!("../../fixtures/topology/evaluation.toml");

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(String);

impl LinkId {
    pub fn new(id: impl Into<String>) -> Self {
        LinkId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LinkId {
    fn from(s: &str) -> Self {
        LinkId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Switch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Number of network cards; hosts only.
    pub nic_count: Option<u8>,
}

impl Node {
    pub fn is_switch(&self) -> bool {
        self.kind == NodeKind::Switch
    }
}

/// A bidirectional physical link with symmetric static attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub capacity_mbps: f64,
    pub base_latency: SimTime,
}

impl Link {
    pub fn touches(&self, node: &NodeId) -> bool {
        &self.endpoints.0 == node || &self.endpoints.1 == node
    }

    /// The endpoint opposite `node`, if `node` is an endpoint.
    pub fn other_end(&self, node: &NodeId) -> Option<&NodeId> {
        if &self.endpoints.0 == node {
            Some(&self.endpoints.1)
        } else if &self.endpoints.1 == node {
            Some(&self.endpoints.0)
        } else {
            None
        }
    }
}

/// On-disk topology description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, rename = "link")]
    pub links: Vec<LinkSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nics: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    /// Defaults to `"<a>-<b>"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub endpoints: [String; 2],
    pub capacity_mbps: f64,
    pub latency_ms: f64,
}

impl TopologySpec {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology spec serializes")
    }
}

/// A validated topology. Iteration order over nodes and links is by id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    nodes: BTreeMap<NodeId, Node>,
    links: BTreeMap<LinkId, Link>,
}

impl Topology {
    pub fn build(spec: &TopologySpec) -> Result<Self, SimError> {
        if spec.nodes.is_empty() {
            return Err(SimError::EmptyTopology);
        }
        let mut nodes = BTreeMap::new();
        for n in &spec.nodes {
            let id = NodeId::new(n.id.trim());
            if id.as_str().is_empty() {
                return Err(SimError::Parse("node id must be non-empty".into()));
            }
            let nic_count = match (n.kind, n.nics) {
                (NodeKind::Host, None) => Some(1),
                (NodeKind::Host, Some(0)) => return Err(SimError::InvalidNicCount(id)),
                (NodeKind::Host, Some(c)) => Some(c),
                (NodeKind::Switch, None) => None,
                (NodeKind::Switch, Some(_)) => return Err(SimError::InvalidNicCount(id)),
            };
            let node = Node { id: id.clone(), kind: n.kind, nic_count };
            if nodes.insert(id.clone(), node).is_some() {
                return Err(SimError::DuplicateId(id.to_string()));
            }
        }
        let mut links = BTreeMap::new();
        for l in &spec.links {
            let a = NodeId::new(l.endpoints[0].trim());
            let b = NodeId::new(l.endpoints[1].trim());
            let id = LinkId::new(l.id.clone().unwrap_or_else(|| format!("{a}-{b}")));
            for end in [&a, &b] {
                if !nodes.contains_key(end) {
                    return Err(SimError::UnknownEndpoint { link: id, node: end.clone() });
                }
            }
            if a == b {
                return Err(SimError::SelfLoop(id));
            }
            if l.capacity_mbps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !l.capacity_mbps.is_finite() {
                return Err(SimError::NonPositiveCapacity(id));
            }
            if l.latency_ms.is_nan() || l.latency_ms < 0.0 || !l.latency_ms.is_finite() {
                return Err(SimError::NegativeLatency(id));
            }
            if nodes.contains_key(&NodeId::new(id.as_str())) || links.contains_key(&id) {
                return Err(SimError::DuplicateId(id.to_string()));
            }
            let link = Link {
                id: id.clone(),
                endpoints: (a, b),
                capacity_mbps: l.capacity_mbps,
                base_latency: SimTime::from_ms_f64(l.latency_ms),
            };
            links.insert(id, link);
        }
        Ok(Topology { nodes, links })
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        Self::build(&TopologySpec::parse(text)?)
    }

    /// The seven-node evaluation topology shipped with the crate.
    pub fn evaluation() -> Self {
        Self::parse(EVALUATION_TOPOLOGY).expect("bundled topology is valid")
    }

    pub fn to_spec(&self) -> TopologySpec {
        TopologySpec {
            nodes: self
                .nodes
                .values()
                .map(|n| NodeSpec {
                    id: n.id.to_string(),
                    kind: n.kind,
                    nics: n.nic_count.filter(|_| n.kind == NodeKind::Host),
                })
                .collect(),
            links: self
                .links
                .values()
                .map(|l| LinkSpec {
                    id: Some(l.id.to_string()),
                    endpoints: [l.endpoints.0.to_string(), l.endpoints.1.to_string()],
                    capacity_mbps: l.capacity_mbps,
                    latency_ms: l.base_latency.as_ms(),
                })
                .collect(),
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn link(&self, id: &LinkId) -> Option<&Link> {
        self.links.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Links incident to `node`, ordered by link id.
    pub fn incident(&self, node: &NodeId) -> impl Iterator<Item = &Link> + '_ {
        let node = node.clone();
        self.links.values().filter(move |l| l.touches(&node))
    }

    pub(crate) fn remove_link(&mut self, id: &LinkId) -> Option<Link> {
        self.links.remove(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_topology_has_seven_nodes_eight_links() {
        let t = Topology::evaluation();
        assert_eq!(t.node_count(), 7);
        assert_eq!(t.link_count(), 8);
        let a = t.node(&"A".into()).unwrap();
        assert_eq!(a.nic_count, Some(2));
        assert!(t.links().all(|l| l.capacity_mbps == 100.0 && l.base_latency.as_nanos() == 500_000));
        assert!(t.link(&"R4-B".into()).is_some());
    }

    #[test]
    fn empty_node_list_rejected() {
        assert!(matches!(Topology::parse(""), Err(SimError::EmptyTopology)));
    }

    #[test]
    fn unknown_endpoint_rejected() {
        let text = r#"
            [[node]]
            id = "R1"
            kind = "switch"
            [[link]]
            endpoints = ["R1", "R9"]
            capacity_mbps = 100
            latency_ms = 0.5
        "#;
        let err = Topology::parse(text).unwrap_err();
        assert!(matches!(&err, SimError::UnknownEndpoint { node, .. } if node.as_str() == "R9"));
        assert!(err.to_string().contains("unknown endpoint"));
    }

    #[test]
    fn duplicate_and_capacity_errors() {
        let dup = r#"
            [[node]]
            id = "R1"
            kind = "switch"
            [[node]]
            id = "R1"
            kind = "switch"
        "#;
        assert!(matches!(Topology::parse(dup), Err(SimError::DuplicateId(_))));
        let cap = r#"
            [[node]]
            id = "R1"
            kind = "switch"
            [[node]]
            id = "R2"
            kind = "switch"
            [[link]]
            endpoints = ["R1", "R2"]
            capacity_mbps = 0
            latency_ms = 0.5
        "#;
        assert!(matches!(Topology::parse(cap), Err(SimError::NonPositiveCapacity(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"
            [[node]]
            id = "R1"
            kind = "switch"
            colour = "red"
        "#;
        assert!(matches!(Topology::parse(text), Err(SimError::Parse(_))));
    }

    #[test]
    fn spec_round_trips() {
        let t = Topology::evaluation();
        let again = Topology::parse(&t.to_spec().to_toml()).unwrap();
        assert_eq!(t, again);
    }
}
