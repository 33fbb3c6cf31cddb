//! Versioned JSON network files: topology, programs and the replica plan.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use eduction_resilience::{ReplicaPlan, StageReplicas};
use eduction_runtime::{Gmt, Program, Topology};
use serde::{Deserialize, Serialize};

use crate::error::MgmtError;

pub const NETWORK_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub active: BTreeSet<String>,
    pub standbys: Vec<String>,
    pub min_routes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub format: u32,
    pub topology: Topology,
    #[serde(default)]
    pub programs: BTreeMap<String, String>,
    #[serde(default)]
    pub plan: BTreeMap<String, StagePlan>,
}

fn invalid(path: &str, message: impl Into<String>) -> MgmtError {
    MgmtError::InvalidNetworkFile {
        path: path.to_owned(),
        message: message.into(),
    }
}

impl NetworkFile {
    /// Timestamps and liveness are left out; they belong to a running instance.
    pub fn capture(gmt: &Gmt) -> NetworkFile {
        let plan = gmt
            .plan()
            .stages
            .into_iter()
            .map(|(stage, r)| {
                (
                    stage,
                    StagePlan {
                        active: r.active,
                        standbys: r.standbys,
                        min_routes: r.min_routes,
                    },
                )
            })
            .collect();
        NetworkFile {
            format: NETWORK_FORMAT,
            topology: gmt.snapshot().normalized(),
            programs: gmt.programs(),
            plan,
        }
    }

    pub fn replica_plan(&self) -> ReplicaPlan {
        let mut plan = ReplicaPlan::new();
        for (stage, p) in &self.plan {
            plan.stages.insert(
                stage.clone(),
                StageReplicas {
                    active: p.active.clone(),
                    standbys: p.standbys.clone(),
                    min_routes: p.min_routes,
                },
            );
        }
        plan
    }

    pub fn from_json(text: &str) -> Result<NetworkFile, MgmtError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: NetworkFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network files always serialize")
    }

    /// Cross-references that the JSON schema alone does not express.
    pub fn validate(&self) -> Result<(), MgmtError> {
        if self.format != NETWORK_FORMAT {
            return Err(invalid("format", format!("unsupported format {}", self.format)));
        }
        let topo = &self.topology;
        for (key, tier) in &topo.tiers {
            if &tier.tier_id != key {
                return Err(invalid(&format!("topology.tiers.{key}.tier_id"), "does not match its key"));
            }
            if !topo.nodes.contains_key(&tier.node_id) {
                return Err(invalid(
                    &format!("topology.tiers.{key}.node_id"),
                    format!("unknown node `{}`", tier.node_id),
                ));
            }
            let n = key.strip_prefix('T').and_then(|n| n.parse::<u64>().ok());
            if n.map_or(true, |n| n > topo.next_tier) {
                return Err(invalid(&format!("topology.tiers.{key}"), "tier id outside the allocated range"));
            }
        }
        for (key, node) in &topo.nodes {
            if &node.node_id != key {
                return Err(invalid(&format!("topology.nodes.{key}.node_id"), "does not match its key"));
            }
            for t in &node.hosted_tiers {
                if topo.tiers.get(t).map(|d| &d.node_id) != Some(key) {
                    return Err(invalid(
                        &format!("topology.nodes.{key}.hosted_tiers"),
                        format!("`{t}` is not a tier of this node"),
                    ));
                }
            }
        }
        for (id, text) in &self.programs {
            let p = Program::parse(text).map_err(|e| invalid(&format!("programs.{id}"), e.to_string()))?;
            if &p.program_id != id {
                return Err(invalid(&format!("programs.{id}"), "program id does not match its key"));
            }
        }
        for (stage, p) in &self.plan {
            for w in p.active.iter().chain(&p.standbys) {
                if !topo.tiers.contains_key(w) {
                    return Err(invalid(&format!("plan.{stage}"), format!("unknown tier `{w}`")));
                }
            }
        }
        self.replica_plan()
            .validate()
            .map_err(|e| invalid("plan", e.to_string()))
    }
}

pub fn save_network(gmt: &Gmt, path: impl AsRef<Path>) -> Result<(), MgmtError> {
    std::fs::write(path, NetworkFile::capture(gmt).to_json())?;
    Ok(())
}

pub fn read_network(path: impl AsRef<Path>) -> Result<NetworkFile, MgmtError> {
    NetworkFile::from_json(&std::fs::read_to_string(path)?)
}
