//! Warm-standby promotion.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::ResilienceError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReplicas {
    pub active: BTreeSet<String>,
    /// Promoted front first.
    pub standbys: Vec<String>,
    pub min_routes: usize,
}

impl StageReplicas {
    pub fn new(active: &[&str], standbys: &[&str], min_routes: usize) -> Self {
        Self {
            active: active.iter().map(|s| s.to_string()).collect(),
            standbys: standbys.iter().map(|s| s.to_string()).collect(),
            min_routes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplicaPlan {
    pub stages: BTreeMap<String, StageReplicas>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Promotion {
    pub stage: String,
    pub promoted: String,
    pub replaces: String,
}

impl ReplicaPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stage(mut self, stage: &str, replicas: StageReplicas) -> Self {
        self.stages.insert(stage.to_owned(), replicas);
        self
    }

    pub fn validate(&self) -> Result<(), ResilienceError> {
        match self.stages.iter().find(|(_, r)| r.min_routes == 0) {
            Some((stage, _)) => Err(ResilienceError::InvalidPlan(stage.clone())),
            None => Ok(()),
        }
    }

    pub fn knows(&self, worker: &str) -> bool {
        self.stages
            .values()
            .any(|r| r.active.contains(worker) || r.standbys.iter().any(|s| s == worker))
    }
}

/// Removes a failed worker and promotes standbys, in order, wherever a stage
/// drops below its minimum number of routes.
pub fn heal(plan: &mut ReplicaPlan, down: &str) -> Result<Vec<Promotion>, ResilienceError> {
    if !plan.knows(down) {
        return Err(ResilienceError::UnknownWorker(down.to_owned()));
    }
    let mut actions = Vec::new();
    let mut starved = None;
    for (stage, r) in plan.stages.iter_mut() {
        r.standbys.retain(|s| s != down);
        if !r.active.remove(down) {
            continue;
        }
        while r.active.len() < r.min_routes {
            if r.standbys.is_empty() {
                starved.get_or_insert_with(|| stage.clone());
                break;
            }
            let promoted = r.standbys.remove(0);
            r.active.insert(promoted.clone());
            actions.push(Promotion {
                stage: stage.clone(),
                promoted,
                replaces: down.to_owned(),
            });
        }
    }
    match starved {
        Some(stage) => Err(ResilienceError::NoStandbyAvailable { stage, actions }),
        None => Ok(actions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sole_worker_loss_promotes_first_standby() {
        let mut plan = ReplicaPlan::new().with_stage("preprocess", StageReplicas::new(&["w1"], &["s1", "s2"], 1));
        let actions = heal(&mut plan, "w1").unwrap();
        assert_eq!(
            actions,
            [Promotion {
                stage: "preprocess".into(),
                promoted: "s1".into(),
                replaces: "w1".into()
            }]
        );
        assert_eq!(plan.stages["preprocess"].standbys, ["s2"]);
    }

    #[test]
    fn remaining_route_needs_no_promotion() {
        let mut plan = ReplicaPlan::new().with_stage("features", StageReplicas::new(&["a", "b"], &["s"], 1));
        assert!(heal(&mut plan, "a").unwrap().is_empty());
        assert_eq!(plan.stages["features"].standbys, ["s"]);
    }

    #[test]
    fn exhausted_standbys_raise_an_alert() {
        let mut plan = ReplicaPlan::new().with_stage("classify", StageReplicas::new(&["c"], &[], 1));
        assert!(matches!(
            heal(&mut plan, "c"),
            Err(ResilienceError::NoStandbyAvailable { stage, .. }) if stage == "classify"
        ));
        assert_eq!(heal(&mut plan, "ghost"), Err(ResilienceError::UnknownWorker("ghost".into())));
    }

    #[test]
    fn zero_route_plan_is_invalid() {
        let plan = ReplicaPlan::new().with_stage("load", StageReplicas::new(&["l"], &[], 0));
        assert_eq!(plan.validate(), Err(ResilienceError::InvalidPlan("load".into())));
    }
}
