//! Nodes, tiers and the registry that ties them together.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use eduction_core::Millis;
use serde::{Deserialize, Serialize};

use crate::error::RuntimeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TierType {
    #[serde(rename = "DST")]
    Dst,
    #[serde(rename = "GMT")]
    Gmt,
    #[serde(rename = "DGT")]
    Dgt,
    #[serde(rename = "DWT")]
    Dwt,
}

impl TierType {
    pub const ALL: [TierType; 4] = [TierType::Dst, TierType::Gmt, TierType::Dgt, TierType::Dwt];

    pub fn as_str(self) -> &'static str {
        match self {
            TierType::Dgt => "DGT",
            TierType::Dst => "DST",
            TierType::Dwt => "DWT",
            TierType::Gmt => "GMT",
        }
    }
}

impl fmt::Display for TierType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TierType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DGT" => Ok(TierType::Dgt),
            "DST" => Ok(TierType::Dst),
            "DWT" => Ok(TierType::Dwt),
            "GMT" => Ok(TierType::Gmt),
            other => Err(format!("unknown tier type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TierState {
    Allocated,
    Started,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub address: String,
    pub hosted_tiers: Vec<String>,
    pub registered_at: Millis,
    pub last_heartbeat: Millis,
    pub status: NodeStatus,
}

impl NodeDescriptor {
    pub fn new(node_id: &str, address: &str) -> Self {
        Self {
            node_id: node_id.to_owned(),
            address: address.to_owned(),
            hosted_tiers: Vec::new(),
            registered_at: 0,
            last_heartbeat: 0,
            status: NodeStatus::Up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierDescriptor {
    pub tier_id: String,
    pub tier_type: TierType,
    pub state: TierState,
    pub node_id: String,
    /// Worker functions a DWT serves; `None` serves every registered function.
    #[serde(default)]
    pub functions: Option<Vec<String>>,
}

/// The GMT's registry. Pure data: launching and stopping tier threads is the
/// caller's business.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: BTreeMap<String, NodeDescriptor>,
    pub tiers: BTreeMap<String, TierDescriptor>,
    pub next_tier: u64,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_node(&mut self, mut node: NodeDescriptor, now: Millis) -> Result<String, RuntimeError> {
        if self.nodes.contains_key(&node.node_id) {
            return Err(RuntimeError::DuplicateNodeId(node.node_id));
        }
        node.registered_at = now;
        node.last_heartbeat = now;
        node.status = NodeStatus::Up;
        node.hosted_tiers.clear();
        let id = node.node_id.clone();
        self.nodes.insert(id.clone(), node);
        Ok(id)
    }

    pub fn node(&self, node_id: &str) -> Result<&NodeDescriptor, RuntimeError> {
        self.nodes
            .get(node_id)
            .ok_or_else(|| RuntimeError::UnknownNode(node_id.to_owned()))
    }

    pub fn tier(&self, tier_id: &str) -> Result<&TierDescriptor, RuntimeError> {
        self.tiers
            .get(tier_id)
            .ok_or_else(|| RuntimeError::UnknownTier(tier_id.to_owned()))
    }

    pub fn allocate_tier(&mut self, node_id: &str, tier_type: TierType) -> Result<String, RuntimeError> {
        self.node(node_id)?;
        self.next_tier += 1;
        let tier_id = format!("T{}", self.next_tier);
        self.tiers.insert(
            tier_id.clone(),
            TierDescriptor {
                tier_id: tier_id.clone(),
                tier_type,
                state: TierState::Allocated,
                node_id: node_id.to_owned(),
                functions: None,
            },
        );
        self.nodes
            .get_mut(node_id)
            .expect("checked above")
            .hosted_tiers
            .push(tier_id.clone());
        Ok(tier_id)
    }

    /// The instance counts as started once any tier runs.
    pub fn is_started(&self) -> bool {
        self.tiers.values().any(|t| t.state == TierState::Started)
    }

    pub fn started_of(&self, tier_type: TierType) -> Vec<&TierDescriptor> {
        self.tiers
            .values()
            .filter(|t| t.tier_type == tier_type && t.state == TierState::Started)
            .collect()
    }

    /// Checks a deallocation without applying it.
    pub fn check_deallocate(
        &self,
        node_id: &str,
        tier_type: TierType,
        tier_ids: &[String],
        force: bool,
    ) -> Result<(), RuntimeError> {
        self.node(node_id)?;
        for id in tier_ids {
            let t = self
                .tiers
                .get(id)
                .filter(|t| t.node_id == node_id)
                .ok_or_else(|| RuntimeError::UnknownTier(id.clone()))?;
            if t.tier_type != tier_type {
                return Err(RuntimeError::TierTypeMismatch {
                    tier: id.clone(),
                    expected: tier_type,
                    actual: t.tier_type,
                });
            }
        }
        if force || !self.is_started() {
            return Ok(());
        }
        let started = self.started_of(tier_type);
        let remaining = started.iter().filter(|t| !tier_ids.contains(&t.tier_id)).count();
        if !started.is_empty() && remaining == 0 {
            return Err(RuntimeError::LastRouteViolation(tier_type));
        }
        Ok(())
    }

    /// Removes tiers; returns how many were removed.
    pub fn remove_tiers(&mut self, tier_ids: &[String]) -> usize {
        let mut removed = 0;
        for id in tier_ids {
            if let Some(t) = self.tiers.remove(id) {
                removed += 1;
                if let Some(n) = self.nodes.get_mut(&t.node_id) {
                    n.hosted_tiers.retain(|h| h != id);
                }
            }
        }
        removed
    }

    pub fn set_node_tiers(&mut self, node_id: &str, state: TierState) -> Vec<String> {
        let mut changed = Vec::new();
        for t in self.tiers.values_mut().filter(|t| t.node_id == node_id) {
            if t.state != state {
                t.state = state;
                changed.push(t.tier_id.clone());
            }
        }
        changed
    }

    /// Same topology with every timestamp zeroed, for shape comparisons.
    pub fn normalized(&self) -> Topology {
        let mut t = self.clone();
        for n in t.nodes.values_mut() {
            n.registered_at = 0;
            n.last_heartbeat = 0;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_nodes() -> Topology {
        let mut t = Topology::new();
        for n in ["n1", "n2", "n3"] {
            t.register_node(NodeDescriptor::new(n, "127.0.0.1:0"), 1).unwrap();
        }
        t
    }

    #[test]
    fn duplicate_node_is_refused() {
        let mut t = three_nodes();
        assert_eq!(t.nodes.len(), 3);
        assert!(matches!(
            t.register_node(NodeDescriptor::new("n2", "x"), 2),
            Err(RuntimeError::DuplicateNodeId(id)) if id == "n2"
        ));
    }

    #[test]
    fn allocation_lands_on_the_node_as_allocated() {
        let mut t = three_nodes();
        let id = t.allocate_tier("n1", TierType::Dwt).unwrap();
        let tier = t.tier(&id).unwrap();
        assert_eq!((tier.node_id.as_str(), tier.state), ("n1", TierState::Allocated));
        assert_eq!(t.nodes["n1"].hosted_tiers, [id]);
        assert!(matches!(t.allocate_tier("n9", TierType::Dwt), Err(RuntimeError::UnknownNode(_))));
    }

    #[test]
    fn deallocating_two_of_three_leaves_one() {
        let mut t = three_nodes();
        let ids: Vec<String> = (0..3).map(|_| t.allocate_tier("n1", TierType::Dwt).unwrap()).collect();
        t.set_node_tiers("n1", TierState::Started);
        t.check_deallocate("n1", TierType::Dwt, &ids[..2], false).unwrap();
        assert_eq!(t.remove_tiers(&ids[..2]), 2);
        assert_eq!(t.nodes["n1"].hosted_tiers, [ids[2].clone()]);
    }

    #[test]
    fn last_started_store_is_protected_unless_forced() {
        let mut t = three_nodes();
        let dst = t.allocate_tier("n2", TierType::Dst).unwrap();
        t.allocate_tier("n2", TierType::Dwt).unwrap();
        t.set_node_tiers("n2", TierState::Started);
        assert!(matches!(
            t.check_deallocate("n2", TierType::Dst, &[dst.clone()], false),
            Err(RuntimeError::LastRouteViolation(TierType::Dst))
        ));
        t.check_deallocate("n2", TierType::Dst, &[dst.clone()], true).unwrap();
        assert!(matches!(
            t.check_deallocate("n2", TierType::Dwt, &[dst], false),
            Err(RuntimeError::TierTypeMismatch { .. })
        ));
        assert!(matches!(
            t.check_deallocate("n2", TierType::Dwt, &["T99".into()], false),
            Err(RuntimeError::UnknownTier(_))
        ));
    }
}
