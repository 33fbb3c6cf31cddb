//! One instance in one process: every tier runs on its own transport agent,
//! nodes are logical groupings of tiers.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use eduction_core::{DemandStore, StoreConfig};
use eduction_pipeline::{PipelineConfig, TrainingSet};
use eduction_resilience::{replicate_training, LocalReplica, ReplicaAck, ResilienceError, TrainingReplica};
use eduction_transport::{create_agent, inproc, EndpointConfig, TransportAgent};

use crate::dgt::Dgt;
use crate::dst::{DstService, STORE_QUEUE};
use crate::dwt::{spawn_heartbeat, Dwt, FunctionTable};
use crate::error::RuntimeError;
use crate::events::EventBus;
use crate::gmt::{Gmt, GmtService, TierLauncher};
use crate::marf::{self, Replicas};
use crate::program::Program;
use crate::store_api::RemoteStore;
use crate::topology::{NodeDescriptor, TierDescriptor, TierType};

#[derive(Clone)]
pub struct ClusterConfig {
    pub transport: EndpointConfig,
    pub store: StoreConfig,
    pub heartbeat: Duration,
    /// Per-attempt timeout of a store request.
    pub rpc_timeout: Duration,
    /// How long a DGT waits for one value.
    pub eval_timeout: Duration,
    pub functions: FunctionTable,
    pub dst_handlers: usize,
    pub replicas: Replicas,
}

impl fmt::Debug for ClusterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClusterConfig")
            .field("transport", &self.transport)
            .field("store", &self.store)
            .field("heartbeat", &self.heartbeat)
            .field("functions", &self.functions.names())
            .finish_non_exhaustive()
    }
}

impl ClusterConfig {
    pub fn new(transport: EndpointConfig) -> ClusterConfig {
        ClusterConfig {
            transport,
            store: StoreConfig::default(),
            heartbeat: Duration::from_millis(100),
            rpc_timeout: Duration::from_secs(2),
            eval_timeout: Duration::from_secs(30),
            functions: FunctionTable::new(),
            dst_handlers: 4,
            replicas: Replicas::default(),
        }
    }

    /// A fresh in-process broker nobody else uses.
    pub fn isolated() -> ClusterConfig {
        let name = format!("cluster-{}", uuid::Uuid::new_v4());
        inproc::start_broker(&name);
        ClusterConfig::new(EndpointConfig::inproc(&name))
    }

    /// A fresh primary/secondary broker pair.
    pub fn isolated_pair() -> ClusterConfig {
        let id = uuid::Uuid::new_v4();
        let (p, s) = (format!("primary-{id}"), format!("secondary-{id}"));
        inproc::start_pair(&p, &s);
        ClusterConfig::new(
            EndpointConfig::inproc(&p).set(eduction_transport::agent::SECONDARY_KEY, s),
        )
    }

    pub fn with_hamming(mut self) -> Self {
        self.functions.register_hamming();
        self
    }

    pub fn with_pipeline(mut self, config: PipelineConfig) -> Self {
        marf::register_stages(&mut self.functions, config, self.replicas.clone());
        self
    }
}

enum Running {
    Dst(DstService),
    Dgt(Arc<Dgt>),
    Dwt(Arc<Dwt>),
    Gmt(GmtService),
}

impl Running {
    fn stop(&self) {
        match self {
            Running::Dst(s) => s.stop(),
            Running::Dgt(_) => {}
            Running::Dwt(w) => w.stop(),
            Running::Gmt(g) => g.stop(),
        }
    }

    fn kill(&self) {
        match self {
            Running::Dst(s) => s.kill(),
            Running::Dgt(_) => {}
            Running::Dwt(w) => w.kill(),
            Running::Gmt(g) => g.kill(),
        }
    }
}

struct NodeBeat {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<()>,
    agent: Arc<dyn TransportAgent>,
}

struct Inner {
    config: ClusterConfig,
    store: Arc<DemandStore>,
    gmt: Arc<Gmt>,
    events: Arc<EventBus>,
    running: Mutex<HashMap<String, Running>>,
    node_beats: Mutex<HashMap<String, NodeBeat>>,
    dgts: RwLock<Vec<Arc<Dgt>>>,
}

impl Inner {
    fn agent(&self) -> Result<Arc<dyn TransportAgent>, RuntimeError> {
        Ok(create_agent(&self.config.transport)?)
    }

    fn remote_store(&self) -> Result<Arc<RemoteStore>, RuntimeError> {
        Ok(Arc::new(RemoteStore::new(self.agent()?, STORE_QUEUE, self.config.rpc_timeout)?))
    }

    fn take(&self, tier_id: &str) -> Option<Running> {
        let r = self.running.lock().unwrap().remove(tier_id);
        if let Some(Running::Dgt(d)) = &r {
            self.dgts.write().unwrap().retain(|x| !Arc::ptr_eq(x, d));
        }
        r
    }
}

impl TierLauncher for Inner {
    fn start_tier(&self, tier: &TierDescriptor) -> Result<(), RuntimeError> {
        let id = tier.tier_id.as_str();
        let running = match tier.tier_type {
            TierType::Dst => Running::Dst(DstService::start(
                id,
                self.store.clone(),
                self.agent()?,
                Some(self.events.clone()),
                self.config.dst_handlers,
            )?),
            TierType::Dgt => {
                let dgt = Arc::new(Dgt::new(id, self.remote_store()?, self.config.eval_timeout));
                for text in self.gmt.programs().values() {
                    dgt.register_program(Program::parse(text)?)?;
                }
                self.dgts.write().unwrap().push(dgt.clone());
                Running::Dgt(dgt)
            }
            TierType::Dwt => {
                self.config.replicas.ensure(id);
                let dwt = Dwt::start(
                    id,
                    self.agent()?,
                    self.remote_store()?,
                    self.config.functions.clone(),
                    Some(self.events.clone()),
                );
                let functions = tier.functions.clone().unwrap_or_else(|| self.config.functions.names());
                for f in &functions {
                    dwt.bind(f)?;
                }
                dwt.beat(&tier.node_id, self.config.heartbeat);
                Running::Dwt(Arc::new(dwt))
            }
            TierType::Gmt => Running::Gmt(GmtService::start(self.gmt.clone(), self.agent()?)?),
        };
        if let Some(old) = self.running.lock().unwrap().insert(id.to_owned(), running) {
            old.stop();
        }
        Ok(())
    }

    fn stop_tier(&self, tier_id: &str) {
        if let Some(r) = self.take(tier_id) {
            r.stop();
        }
    }

    fn bind(&self, tier_id: &str, function: &str) -> Result<(), RuntimeError> {
        match self.running.lock().unwrap().get(tier_id) {
            Some(Running::Dwt(w)) => w.bind(function),
            _ => Err(RuntimeError::UnknownTier(tier_id.to_owned())),
        }
    }

    fn node_started(&self, node_id: &str) {
        let mut beats = self.node_beats.lock().unwrap();
        if beats.contains_key(node_id) {
            return;
        }
        let agent = match self.agent() {
            Ok(a) => a,
            Err(e) => {
                log::warn!("node {node_id} heartbeat agent: {e}");
                return;
            }
        };
        let stop = Arc::new(AtomicBool::new(false));
        let handle = spawn_heartbeat(agent.clone(), node_id.to_owned(), String::new(), self.config.heartbeat, stop.clone());
        beats.insert(node_id.to_owned(), NodeBeat { stop, handle, agent });
    }

    fn node_stopped(&self, node_id: &str) {
        let beat = self.node_beats.lock().unwrap().remove(node_id);
        if let Some(b) = beat {
            b.stop.store(true, std::sync::atomic::Ordering::SeqCst);
            let _ = b.handle.join();
            b.agent.close();
        }
    }
}

/// A running instance. Dropping it shuts every tier down.
pub struct Cluster {
    inner: Arc<Inner>,
}

impl fmt::Debug for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cluster").field("config", &self.inner.config).finish()
    }
}

impl Cluster {
    /// An instance with no nodes yet.
    pub fn new(config: ClusterConfig) -> Cluster {
        let events = Arc::new(EventBus::default());
        let gmt = Arc::new(Gmt::new(events.clone(), config.heartbeat));
        let inner = Arc::new(Inner {
            store: Arc::new(DemandStore::new(config.store.clone())),
            gmt: gmt.clone(),
            events,
            running: Mutex::new(HashMap::new()),
            node_beats: Mutex::new(HashMap::new()),
            dgts: RwLock::new(Vec::new()),
            config,
        });
        let as_launcher: Arc<dyn TierLauncher> = inner.clone();
        let weak: Weak<dyn TierLauncher> = Arc::downgrade(&as_launcher);
        gmt.set_launcher(weak);
        gmt.note_transport(
            inner
                .config
                .transport
                .get(eduction_transport::IMPLEMENTATION_KEY)
                .unwrap_or("unknown"),
        );
        Cluster { inner }
    }

    /// Registers each node with its tiers, then starts every node.
    pub fn build(config: ClusterConfig, layout: &[(&str, &[TierType])]) -> Result<Cluster, RuntimeError> {
        let cluster = Cluster::new(config);
        for (node, tiers) in layout {
            cluster.gmt().register_node(NodeDescriptor::new(node, &format!("inproc://{node}")))?;
            for t in *tiers {
                cluster.gmt().allocate_tier(node, *t)?;
            }
        }
        // the store and manager come up before anything that talks to them
        let mut order: Vec<&str> = layout.iter().map(|(n, _)| *n).collect();
        order.sort_by_key(|n| {
            let tiers = layout.iter().find(|(m, _)| m == n).map(|(_, t)| *t).unwrap_or(&[]);
            tiers.iter().min().copied().unwrap_or(TierType::Dwt)
        });
        for node in order {
            cluster.gmt().start_node(node)?;
        }
        Ok(cluster)
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.inner.config
    }

    pub fn gmt(&self) -> &Arc<Gmt> {
        &self.inner.gmt
    }

    pub fn events(&self) -> &Arc<EventBus> {
        &self.inner.events
    }

    pub fn store(&self) -> &Arc<DemandStore> {
        &self.inner.store
    }

    /// The first running DGT.
    pub fn dgt(&self) -> Result<Arc<Dgt>, RuntimeError> {
        self.inner
            .dgts
            .read()
            .unwrap()
            .first()
            .cloned()
            .ok_or(RuntimeError::NoTier(TierType::Dgt))
    }

    pub fn dgts(&self) -> Vec<Arc<Dgt>> {
        self.inner.dgts.read().unwrap().clone()
    }

    pub fn dwt(&self, tier_id: &str) -> Option<Arc<Dwt>> {
        match self.inner.running.lock().unwrap().get(tier_id) {
            Some(Running::Dwt(w)) => Some(w.clone()),
            _ => None,
        }
    }

    pub fn dwts(&self) -> Vec<Arc<Dwt>> {
        let running = self.inner.running.lock().unwrap();
        let mut v: Vec<Arc<Dwt>> = running
            .values()
            .filter_map(|r| match r {
                Running::Dwt(w) => Some(w.clone()),
                _ => None,
            })
            .collect();
        v.sort_by(|a, b| a.tier_id().cmp(b.tier_id()));
        v
    }

    /// Makes a program known to the instance and to every running DGT.
    pub fn register_program(&self, text: &str) -> Result<String, RuntimeError> {
        let program = Program::parse(text)?;
        let id = program.program_id.clone();
        if let Some(existing) = self.inner.gmt.programs().get(&id) {
            if Program::parse(existing)?.body_digest() != program.body_digest() {
                return Err(RuntimeError::ProgramConflict(id));
            }
        }
        for dgt in self.dgts() {
            dgt.register_program(program.clone())?;
        }
        self.inner.gmt.record_program(&id, text);
        Ok(id)
    }

    pub fn replicas(&self) -> &Replicas {
        &self.inner.config.replicas
    }

    /// Ships the training set to every worker replica that differs.
    pub fn replicate_training(&self, ts: &TrainingSet) -> (Vec<ReplicaAck>, Result<(), ResilienceError>) {
        let workers: Vec<Arc<dyn TrainingReplica>> = self
            .inner
            .config
            .replicas
            .all()
            .into_iter()
            .map(|r: Arc<LocalReplica>| r as Arc<dyn TrainingReplica>)
            .collect();
        replicate_training(ts, &workers)
    }

    /// Crashes a worker: it stops beating and completes nothing further.
    pub fn kill_worker(&self, tier_id: &str) -> Result<(), RuntimeError> {
        match self.inner.running.lock().unwrap().get(tier_id) {
            Some(r @ Running::Dwt(_)) => {
                r.kill();
                Ok(())
            }
            _ => Err(RuntimeError::UnknownTier(tier_id.to_owned())),
        }
    }

    /// Crashes every tier on a node and silences its heartbeat.
    pub fn kill_node(&self, node_id: &str) -> Result<(), RuntimeError> {
        let tiers: Vec<String> = self
            .gmt()
            .snapshot()
            .tiers
            .values()
            .filter(|t| t.node_id == node_id)
            .map(|t| t.tier_id.clone())
            .collect();
        self.gmt().snapshot().node(node_id)?;
        if let Some(b) = self.inner.node_beats.lock().unwrap().remove(node_id) {
            b.stop.store(true, std::sync::atomic::Ordering::SeqCst);
            b.agent.close();
        }
        let running = self.inner.running.lock().unwrap();
        for t in tiers {
            if let Some(r) = running.get(&t) {
                r.kill();
            }
        }
        Ok(())
    }

    /// Crashes the named in-process broker.
    pub fn kill_broker(&self, name: &str) {
        inproc::kill_broker(name);
    }

    pub fn shutdown(&self) {
        let ids: Vec<String> = self.inner.running.lock().unwrap().keys().cloned().collect();
        let mut all: Vec<(TierType, String)> = ids
            .into_iter()
            .map(|id| {
                let kind = match self.inner.running.lock().unwrap().get(&id) {
                    Some(Running::Dst(_)) => TierType::Dst,
                    Some(Running::Gmt(_)) => TierType::Gmt,
                    Some(Running::Dgt(_)) => TierType::Dgt,
                    _ => TierType::Dwt,
                };
                (kind, id)
            })
            .collect();
        // reverse launch order: workers first, the store last
        all.sort();
        for (_, id) in all.into_iter().rev() {
            self.inner.stop_tier(&id);
        }
        let nodes: Vec<String> = self.inner.node_beats.lock().unwrap().keys().cloned().collect();
        for n in nodes {
            self.inner.node_stopped(&n);
        }
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        self.shutdown();
    }
}
