//! General Manager Tier: node registration, tier allocation, liveness and
//! healing. Mutations are serialized and each one emits its event.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use eduction_core::{now_ms, Millis};
use eduction_resilience::{heal, Guard, Promotion, ReplicaPlan, ResilienceError};
use eduction_transport::{QueueMode, TransportAgent};

use crate::dwt::{decode_heartbeat, HEARTBEAT_QUEUE};
use crate::error::RuntimeError;
use crate::events::{EventBus, EventKind};
use crate::topology::{NodeDescriptor, NodeStatus, TierDescriptor, TierState, TierType, Topology};

/// A node or worker is declared lost after this many missed beats.
pub const MISSED_BEATS: u64 = 3;

/// Starts and stops the threads behind tiers.
pub trait TierLauncher: Send + Sync {
    fn start_tier(&self, tier: &TierDescriptor) -> Result<(), RuntimeError>;
    fn stop_tier(&self, tier_id: &str);
    /// Adds a worker function to a running DWT.
    fn bind(&self, tier_id: &str, function: &str) -> Result<(), RuntimeError>;
    fn node_started(&self, _node_id: &str) {}
    fn node_stopped(&self, _node_id: &str) {}
}

pub struct Gmt {
    command: Mutex<()>,
    topology: Mutex<Topology>,
    plan: Mutex<ReplicaPlan>,
    programs: Mutex<BTreeMap<String, String>>,
    tier_beats: Mutex<HashMap<String, Millis>>,
    events: Arc<EventBus>,
    launcher: RwLock<Option<Weak<dyn TierLauncher>>>,
    heartbeat_ms: u64,
}

impl fmt::Debug for Gmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gmt").field("heartbeat_ms", &self.heartbeat_ms).finish()
    }
}

fn detail<const N: usize>(pairs: [(&str, String); N]) -> Vec<(String, String)> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

impl Gmt {
    pub fn new(events: Arc<EventBus>, heartbeat: Duration) -> Gmt {
        Gmt {
            command: Mutex::new(()),
            topology: Mutex::new(Topology::new()),
            plan: Mutex::new(ReplicaPlan::new()),
            programs: Mutex::new(BTreeMap::new()),
            tier_beats: Mutex::new(HashMap::new()),
            events,
            launcher: RwLock::new(None),
            heartbeat_ms: heartbeat.as_millis().max(1) as u64,
        }
    }

    pub fn set_launcher(&self, launcher: Weak<dyn TierLauncher>) {
        *self.launcher.write().unwrap() = Some(launcher);
    }

    fn launcher(&self) -> Option<Arc<dyn TierLauncher>> {
        self.launcher.read().unwrap().as_ref().and_then(Weak::upgrade)
    }

    pub fn events(&self) -> &Arc<EventBus> {
        &self.events
    }

    pub fn heartbeat_interval(&self) -> Duration {
        Duration::from_millis(self.heartbeat_ms)
    }

    pub fn snapshot(&self) -> Topology {
        self.topology.lock().unwrap().clone()
    }

    pub fn plan(&self) -> ReplicaPlan {
        self.plan.lock().unwrap().clone()
    }

    pub fn set_plan(&self, plan: ReplicaPlan) -> Result<(), RuntimeError> {
        plan.validate()?;
        *self.plan.lock().unwrap() = plan;
        Ok(())
    }

    /// Program texts known to the instance, by program id.
    pub fn programs(&self) -> BTreeMap<String, String> {
        self.programs.lock().unwrap().clone()
    }

    pub fn record_program(&self, program_id: &str, text: &str) {
        self.programs.lock().unwrap().insert(program_id.to_owned(), text.to_owned());
    }

    pub fn register_node(&self, node: NodeDescriptor) -> Result<String, RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        let (id, address) = (node.node_id.clone(), node.address.clone());
        self.topology.lock().unwrap().register_node(node, now_ms())?;
        self.events.emit(
            EventKind::NodeRegistered,
            detail([("node_id", id.clone()), ("address", address)]),
        );
        Ok(id)
    }

    pub fn allocate_tier(&self, node_id: &str, tier_type: TierType) -> Result<String, RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        self.allocate_locked(node_id, tier_type)
    }

    fn allocate_locked(&self, node_id: &str, tier_type: TierType) -> Result<String, RuntimeError> {
        let id = self.topology.lock().unwrap().allocate_tier(node_id, tier_type)?;
        self.events.emit(
            EventKind::TierAllocated,
            detail([
                ("tier_id", id.clone()),
                ("tier_type", tier_type.to_string()),
                ("node_id", node_id.to_owned()),
            ]),
        );
        Ok(id)
    }

    pub fn allocate(&self, node_id: &str, tier_type: TierType, count: usize) -> Result<Vec<String>, RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        self.topology.lock().unwrap().node(node_id)?;
        (0..count).map(|_| self.allocate_locked(node_id, tier_type)).collect()
    }

    /// Restricts a DWT to the given worker functions (`None`: all of them).
    pub fn configure_tier(&self, tier_id: &str, functions: Option<Vec<String>>) -> Result<(), RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        let mut topo = self.topology.lock().unwrap();
        let tier = topo
            .tiers
            .get_mut(tier_id)
            .ok_or_else(|| RuntimeError::UnknownTier(tier_id.to_owned()))?;
        if tier.tier_type != TierType::Dwt {
            return Err(RuntimeError::TierTypeMismatch {
                tier: tier_id.to_owned(),
                expected: TierType::Dwt,
                actual: tier.tier_type,
            });
        }
        tier.functions = functions.clone();
        drop(topo);
        self.events.emit(
            EventKind::TierConfigured,
            detail([
                ("tier_id", tier_id.to_owned()),
                ("functions", functions.map(|f| f.join(",")).unwrap_or_else(|| "*".into())),
            ]),
        );
        Ok(())
    }

    pub fn deallocate_tier(
        &self,
        node_id: &str,
        tier_type: TierType,
        tier_ids: &[String],
        force: bool,
    ) -> Result<usize, RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        let started: Vec<String> = {
            let topo = self.topology.lock().unwrap();
            topo.check_deallocate(node_id, tier_type, tier_ids, force)?;
            tier_ids
                .iter()
                .filter(|id| topo.tiers[*id].state == TierState::Started)
                .cloned()
                .collect()
        };
        if let Some(l) = self.launcher() {
            for id in &started {
                l.stop_tier(id);
            }
        }
        let removed = self.topology.lock().unwrap().remove_tiers(tier_ids);
        for id in tier_ids {
            self.tier_beats.lock().unwrap().remove(id);
            self.events.emit(
                EventKind::TierDeallocated,
                detail([
                    ("tier_id", id.clone()),
                    ("tier_type", tier_type.to_string()),
                    ("node_id", node_id.to_owned()),
                ]),
            );
        }
        Ok(removed)
    }

    /// Launches every tier on the node that is not running yet.
    pub fn start_node(&self, node_id: &str) -> Result<(), RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        let mut tiers: Vec<TierDescriptor> = {
            let mut topo = self.topology.lock().unwrap();
            let node = topo
                .nodes
                .get_mut(node_id)
                .ok_or_else(|| RuntimeError::UnknownNode(node_id.to_owned()))?;
            node.status = NodeStatus::Up;
            node.last_heartbeat = now_ms();
            topo.tiers
                .values()
                .filter(|t| t.node_id == node_id && t.state != TierState::Started)
                .cloned()
                .collect()
        };
        tiers.sort_by_key(|t| t.tier_type);
        let launcher = self.launcher();
        if let Some(l) = &launcher {
            l.node_started(node_id);
        }
        for t in &tiers {
            if let Some(l) = &launcher {
                l.start_tier(t)?;
            }
            self.tier_beats.lock().unwrap().insert(t.tier_id.clone(), now_ms());
            if let Some(tier) = self.topology.lock().unwrap().tiers.get_mut(&t.tier_id) {
                tier.state = TierState::Started;
            }
        }
        self.events.emit(
            EventKind::NodeStarted,
            detail([
                ("node_id", node_id.to_owned()),
                ("tiers", tiers.iter().map(|t| t.tier_id.as_str()).collect::<Vec<_>>().join(",")),
            ]),
        );
        Ok(())
    }

    pub fn stop_node(&self, node_id: &str) -> Result<(), RuntimeError> {
        let _cmd = self.command.lock().unwrap();
        let started: Vec<String> = {
            let topo = self.topology.lock().unwrap();
            topo.node(node_id)?;
            topo.tiers
                .values()
                .filter(|t| t.node_id == node_id && t.state == TierState::Started)
                .map(|t| t.tier_id.clone())
                .collect()
        };
        if let Some(l) = self.launcher() {
            for id in &started {
                l.stop_tier(id);
            }
            l.node_stopped(node_id);
        }
        self.topology.lock().unwrap().set_node_tiers(node_id, TierState::Stopped);
        self.events.emit(
            EventKind::NodeStopped,
            detail([("node_id", node_id.to_owned()), ("tiers", started.join(","))]),
        );
        Ok(())
    }

    /// Replaces the whole topology with a stopped copy of `topology`.
    pub fn replace(&self, mut topology: Topology, plan: ReplicaPlan, programs: BTreeMap<String, String>) -> Result<(), RuntimeError> {
        plan.validate()?;
        let _cmd = self.command.lock().unwrap();
        let started: Vec<String> = self
            .topology
            .lock()
            .unwrap()
            .tiers
            .values()
            .filter(|t| t.state == TierState::Started)
            .map(|t| t.tier_id.clone())
            .collect();
        if let Some(l) = self.launcher() {
            for id in &started {
                l.stop_tier(id);
            }
            for node in self.topology.lock().unwrap().nodes.keys() {
                l.node_stopped(node);
            }
        }
        let now = now_ms();
        for t in topology.tiers.values_mut() {
            t.state = match t.state {
                TierState::Allocated => TierState::Allocated,
                _ => TierState::Stopped,
            };
        }
        for n in topology.nodes.values_mut() {
            n.status = NodeStatus::Up;
            n.last_heartbeat = now;
        }
        let summary = detail([
            ("nodes", topology.nodes.len().to_string()),
            ("tiers", topology.tiers.len().to_string()),
        ]);
        *self.topology.lock().unwrap() = topology;
        *self.plan.lock().unwrap() = plan;
        *self.programs.lock().unwrap() = programs;
        self.tier_beats.lock().unwrap().clear();
        self.events.emit(EventKind::NetworkLoaded, summary);
        Ok(())
    }

    pub fn heartbeat(&self, node_id: &str, tier_id: &str, now: Millis) {
        if let Some(n) = self.topology.lock().unwrap().nodes.get_mut(node_id) {
            n.last_heartbeat = n.last_heartbeat.max(now);
        }
        if !tier_id.is_empty() {
            let mut beats = self.tier_beats.lock().unwrap();
            let b = beats.entry(tier_id.to_owned()).or_insert(now);
            *b = (*b).max(now);
        }
    }

    /// Marks silent nodes and workers as lost and heals the replica plan.
    pub fn check_liveness(&self, now: Millis) {
        let _cmd = self.command.lock().unwrap();
        self.liveness_locked(now);
    }

    /// Like `check_liveness`, but skips the round while a command runs.
    pub fn try_check_liveness(&self, now: Millis) -> bool {
        match self.command.try_lock() {
            Ok(_cmd) => {
                self.liveness_locked(now);
                true
            }
            Err(_) => false,
        }
    }

    fn liveness_locked(&self, now: Millis) {
        let limit = MISSED_BEATS * self.heartbeat_ms;
        let mut lost_nodes = Vec::new();
        let mut lost_workers = Vec::new();
        {
            let mut topo = self.topology.lock().unwrap();
            let beats = self.tier_beats.lock().unwrap();
            let silent: Vec<String> = topo
                .nodes
                .values()
                .filter(|n| n.status == NodeStatus::Up && now.saturating_sub(n.last_heartbeat) > limit)
                .map(|n| n.node_id.clone())
                .collect();
            for node_id in silent {
                let hosts_started = topo
                    .tiers
                    .values()
                    .any(|t| t.node_id == node_id && t.state == TierState::Started);
                if !hosts_started {
                    continue;
                }
                topo.nodes.get_mut(&node_id).expect("listed above").status = NodeStatus::Down;
                let tiers = topo.set_node_tiers(&node_id, TierState::Stopped);
                lost_nodes.push((node_id, tiers));
            }
            let Topology { nodes, tiers, .. } = &mut *topo;
            for t in tiers.values_mut() {
                let up = nodes.get(&t.node_id).is_some_and(|n| n.status == NodeStatus::Up);
                if up && t.tier_type == TierType::Dwt && t.state == TierState::Started {
                    let last = beats.get(&t.tier_id).copied().unwrap_or(0);
                    if now.saturating_sub(last) > limit {
                        t.state = TierState::Stopped;
                        lost_workers.push(t.tier_id.clone());
                    }
                }
            }
        }
        let launcher = self.launcher();
        for (node_id, tiers) in lost_nodes {
            self.events.emit(
                EventKind::NodeDown,
                detail([("node_id", node_id.clone()), ("tiers", tiers.join(","))]),
            );
            for t in &tiers {
                if let Some(l) = &launcher {
                    l.stop_tier(t);
                }
                self.heal_locked(t, launcher.as_deref());
            }
        }
        for t in lost_workers {
            self.events.emit(EventKind::WorkerDown, detail([("tier_id", t.clone())]));
            if let Some(l) = &launcher {
                l.stop_tier(&t);
            }
            self.heal_locked(&t, launcher.as_deref());
        }
    }

    fn heal_locked(&self, down: &str, launcher: Option<&dyn TierLauncher>) {
        let result = {
            let mut plan = self.plan.lock().unwrap();
            if !plan.knows(down) {
                return;
            }
            heal(&mut plan, down)
        };
        let (actions, alert) = match result {
            Ok(actions) => (actions, None),
            Err(ResilienceError::NoStandbyAvailable { stage, actions }) => (actions, Some(stage)),
            Err(e) => {
                log::warn!("healing after {down}: {e}");
                return;
            }
        };
        for Promotion { stage, promoted, replaces } in actions {
            if let Some(l) = launcher {
                if let Err(e) = l.bind(&promoted, &stage) {
                    log::warn!("binding {promoted} to {stage}: {e}");
                }
            }
            if let Some(t) = self.topology.lock().unwrap().tiers.get_mut(&promoted) {
                let fs = t.functions.get_or_insert_with(Vec::new);
                if !fs.contains(&stage) {
                    fs.push(stage.clone());
                }
            }
            self.events.emit(
                EventKind::HealingAction,
                detail([("stage", stage), ("promoted", promoted), ("replaces", replaces)]),
            );
        }
        if let Some(stage) = alert {
            self.events.emit(
                EventKind::HealingAlert,
                detail([("stage", stage), ("lost", down.to_owned())]),
            );
        }
    }

    pub fn note_transport(&self, transport: &str) {
        self.events
            .emit(EventKind::TransportSelected, detail([("transport", transport.to_owned())]));
    }
}

/// The GMT tier's threads: heartbeat intake and the liveness monitor.
pub struct GmtService {
    agent: Arc<dyn TransportAgent>,
    stop: Arc<AtomicBool>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl fmt::Debug for GmtService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GmtService").finish_non_exhaustive()
    }
}

impl GmtService {
    pub fn start(gmt: Arc<Gmt>, agent: Arc<dyn TransportAgent>) -> Result<GmtService, RuntimeError> {
        agent.subscribe(HEARTBEAT_QUEUE, "gmt", QueueMode::Shared)?;
        let stop = Arc::new(AtomicBool::new(false));
        let mut handles = Vec::new();
        {
            let (gmt, agent, stop) = (gmt.clone(), agent.clone(), stop.clone());
            let guard = Guard::new(agent.key().clone());
            handles.push(thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match agent.receive(HEARTBEAT_QUEUE, "gmt", Duration::from_millis(100)) {
                        Ok(Some(d)) => {
                            if guard.admit(&d.envelope, |_| {}).accepted() {
                                if let Ok((node, tier)) = decode_heartbeat(&d.envelope.payload) {
                                    gmt.heartbeat(&node, &tier, now_ms());
                                }
                            } else {
                                gmt.events.emit(
                                    EventKind::MessageInsecure,
                                    detail([("queue", HEARTBEAT_QUEUE.to_owned())]),
                                );
                            }
                            let _ = agent.ack("gmt", &d);
                        }
                        Ok(None) => {}
                        Err(_) => thread::sleep(Duration::from_millis(50)),
                    }
                }
            }));
        }
        {
            let (gmt, stop) = (gmt.clone(), stop.clone());
            let every = gmt.heartbeat_interval();
            handles.push(thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    thread::sleep(every);
                    gmt.try_check_liveness(now_ms());
                }
            }));
        }
        Ok(GmtService {
            agent,
            stop,
            handles: Mutex::new(handles),
        })
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        for h in self.handles.lock().unwrap().drain(..) {
            let _ = h.join();
        }
        let _ = self.agent.unsubscribe(HEARTBEAT_QUEUE, "gmt");
    }

    pub fn kill(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.agent.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eduction_resilience::StageReplicas;

    #[derive(Default)]
    struct Recorder {
        log: Mutex<Vec<String>>,
    }

    impl TierLauncher for Recorder {
        fn start_tier(&self, t: &TierDescriptor) -> Result<(), RuntimeError> {
            self.log.lock().unwrap().push(format!("start {}", t.tier_id));
            Ok(())
        }
        fn stop_tier(&self, id: &str) {
            self.log.lock().unwrap().push(format!("stop {id}"));
        }
        fn bind(&self, id: &str, f: &str) -> Result<(), RuntimeError> {
            self.log.lock().unwrap().push(format!("bind {id} {f}"));
            Ok(())
        }
    }

    fn gmt_with(rec: &Arc<Recorder>) -> Gmt {
        let gmt = Gmt::new(Arc::new(EventBus::default()), Duration::from_millis(10));
        let weak: Weak<dyn TierLauncher> = Arc::downgrade(&(rec.clone() as Arc<dyn TierLauncher>));
        gmt.set_launcher(weak);
        gmt
    }

    #[test]
    fn silent_worker_is_replaced_by_its_standby_once() {
        let rec = Arc::new(Recorder::default());
        let gmt = gmt_with(&rec);
        gmt.register_node(NodeDescriptor::new("n1", "a")).unwrap();
        let w = gmt.allocate_tier("n1", TierType::Dwt).unwrap();
        let s = gmt.allocate_tier("n1", TierType::Dwt).unwrap();
        gmt.set_plan(ReplicaPlan::new().with_stage("pre", StageReplicas::new(&[&w], &[&s], 1)))
            .unwrap();
        gmt.start_node("n1").unwrap();
        let t0 = now_ms();
        gmt.heartbeat("n1", &s, t0 + 100);
        gmt.check_liveness(t0 + 31);
        gmt.heartbeat("n1", &s, t0 + 200);
        gmt.check_liveness(t0 + 100);
        assert_eq!(gmt.events.of_kind(EventKind::WorkerDown).len(), 1);
        let heals = gmt.events.of_kind(EventKind::HealingAction);
        assert_eq!(heals.len(), 1);
        assert_eq!(heals[0].detail["promoted"], s);
        assert!(rec.log.lock().unwrap().contains(&format!("bind {s} pre")));
        assert_eq!(gmt.snapshot().tiers[&s].functions, Some(vec!["pre".to_string()]));
    }

    #[test]
    fn silent_node_goes_down_and_its_tiers_stop() {
        let rec = Arc::new(Recorder::default());
        let gmt = gmt_with(&rec);
        gmt.register_node(NodeDescriptor::new("n1", "a")).unwrap();
        let t = gmt.allocate_tier("n1", TierType::Dgt).unwrap();
        gmt.start_node("n1").unwrap();
        gmt.check_liveness(now_ms() + 1_000);
        let topo = gmt.snapshot();
        assert_eq!(topo.nodes["n1"].status, NodeStatus::Down);
        assert_eq!(topo.tiers[&t].state, TierState::Stopped);
        assert_eq!(gmt.events.of_kind(EventKind::NodeDown).len(), 1);
        assert!(rec.log.lock().unwrap().contains(&format!("stop {t}")));
    }
}
