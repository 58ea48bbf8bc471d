use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OverlayError;

/// Dense overlay node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// IPv4-shaped overlay address: node k maps to 10.0.0.0 + k + 1.
    pub fn address(self) -> Ipv4Addr {
        Ipv4Addr::from(0x0A00_0000u32 + self.0 + 1)
    }

    pub fn from_address(addr: Ipv4Addr) -> Option<NodeId> {
        let raw = u32::from(addr);
        raw.checked_sub(0x0A00_0001)
            .filter(|id| *id < 0x00FF_FFFF)
            .map(NodeId)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub name: String,
    #[serde(default)]
    pub lat: f64,
    #[serde(default)]
    pub lon: f64,
}

/// Overlay of proxies. Every proxy reaches every other over IP, so the
/// adjacency is the complete graph and only the node list is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NodeInfo>", into = "Vec<NodeInfo>")]
pub struct OverlayTopology {
    nodes: Vec<NodeInfo>,
}

impl TryFrom<Vec<NodeInfo>> for OverlayTopology {
    type Error = OverlayError;

    fn try_from(mut nodes: Vec<NodeInfo>) -> Result<Self, OverlayError> {
        if nodes.len() < 2 {
            return Err(OverlayError::InvalidTopology(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        nodes.sort_by_key(|n| n.id);
        for (k, node) in nodes.iter().enumerate() {
            if node.id.index() != k {
                return Err(OverlayError::InvalidTopology(format!(
                    "node ids must be dense and unique; expected {k}, found {}",
                    node.id
                )));
            }
        }
        Ok(Self { nodes })
    }
}

impl From<OverlayTopology> for Vec<NodeInfo> {
    fn from(t: OverlayTopology) -> Self {
        t.nodes
    }
}

impl OverlayTopology {
    pub fn new(nodes: Vec<NodeInfo>) -> Result<Self, OverlayError> {
        Self::try_from(nodes)
    }

    /// Nodes named `n0`, `n1`, ... without coordinates.
    pub fn anonymous(n: usize) -> Result<Self, OverlayError> {
        Self::new(
            (0..n)
                .map(|k| NodeInfo {
                    id: NodeId(k as u32),
                    name: format!("n{k}"),
                    lat: 0.0,
                    lon: 0.0,
                })
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, OverlayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OverlayError::InvalidTopology(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| OverlayError::InvalidTopology(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.nodes.get(id.index()).map(|n| n.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_mapping() {
        assert_eq!(NodeId(0).address(), Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(NodeId(19).address(), Ipv4Addr::new(10, 0, 0, 20));
        assert_eq!(NodeId(300).address(), Ipv4Addr::new(10, 0, 1, 45));
        assert_eq!(NodeId::from_address(NodeId(300).address()), Some(NodeId(300)));
        assert_eq!(NodeId::from_address(Ipv4Addr::new(192, 168, 0, 1)), None);
    }

    #[test]
    fn topology_json() {
        let json = r#"[{"id":1,"name":"cl-scl","lat":-33.4,"lon":-70.6},{"id":0,"name":"jp-tyo","lat":35.7,"lon":139.7}]"#;
        let t: OverlayTopology = serde_json::from_str(json).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.by_name("cl-scl"), Some(NodeId(1)));
        assert_eq!(t.name(NodeId(0)), Some("jp-tyo"));

        let sparse = r#"[{"id":0,"name":"a"},{"id":2,"name":"b"}]"#;
        assert!(serde_json::from_str::<OverlayTopology>(sparse).is_err());
        let single = r#"[{"id":0,"name":"a"}]"#;
        assert!(serde_json::from_str::<OverlayTopology>(single).is_err());
    }
}
