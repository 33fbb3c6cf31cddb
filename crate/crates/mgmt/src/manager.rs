//! Executes operator commands against a running instance. The HTTP service
//! and the CLI both go through here.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use eduction_core::{DemandState, DispatchEntry};
use eduction_pipeline::{PipelineConfig, ResultSet, TrainingSet};
use eduction_runtime::{Cluster, MarfClient, NodeDescriptor, TierType, Topology};
use serde::{Deserialize, Serialize};

use crate::command::Command;
use crate::error::MgmtError;
use crate::network::{read_network, save_network};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    Registered { node_id: String },
    Started { node_id: String },
    Stopped { node_id: String },
    Allocated { tier_ids: Vec<String> },
    Deallocated { count: usize },
    Saved { file: String },
    Loaded { file: String },
    Status { topology: Topology },
    FaultInjected { fault: Fault },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    KillNode(String),
    KillWorker(String),
    KillBroker(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub doc_id: String,
    pub best: Option<i64>,
    pub ranked: Vec<(i64, f64)>,
    pub tie: bool,
}

impl ResultReport {
    pub fn new(doc_id: &str, r: &ResultSet) -> Self {
        ResultReport {
            doc_id: doc_id.to_owned(),
            best: r.best(),
            ranked: r.ranked.clone(),
            tie: r.tie_flag,
        }
    }
}

/// Wire view of a dispatch entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandView {
    pub global_id: String,
    pub signature: String,
    pub kind: String,
    pub program_id: String,
    pub state: String,
    pub owner: Option<String>,
    pub timeline: Vec<String>,
}

impl DemandView {
    fn new(e: &DispatchEntry) -> Self {
        DemandView {
            global_id: e.global_id.to_string(),
            signature: e.signature.to_hex(),
            kind: format!("{:?}", e.demand.kind()).to_lowercase(),
            program_id: e.demand.program_id().to_owned(),
            state: state_name(e.state).to_owned(),
            owner: e.owner.clone(),
            timeline: e.demand.timeline().iter().map(|t| t.tier_id.clone()).collect(),
        }
    }
}

pub fn state_name(s: DemandState) -> &'static str {
    match s {
        DemandState::Pending => "pending",
        DemandState::Processing => "processing",
        DemandState::Computed => "computed",
    }
}

pub fn parse_state(s: &str) -> Result<DemandState, MgmtError> {
    match s {
        "pending" => Ok(DemandState::Pending),
        "processing" => Ok(DemandState::Processing),
        "computed" => Ok(DemandState::Computed),
        other => Err(MgmtError::BadRequest(format!(
            "unknown state `{other}`; expected pending, processing or computed"
        ))),
    }
}

struct PipelineSession {
    config: PipelineConfig,
    training: TrainingSet,
    wal: PathBuf,
    client: Option<MarfClient>,
}

pub struct Manager {
    cluster: Cluster,
    pipeline: Mutex<Option<PipelineSession>>,
}

impl std::fmt::Debug for Manager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Manager").field("cluster", &self.cluster).finish_non_exhaustive()
    }
}

impl Manager {
    pub fn new(cluster: Cluster) -> Arc<Manager> {
        Arc::new(Manager {
            cluster,
            pipeline: Mutex::new(None),
        })
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    /// Enables document processing; `config` must match the stage functions
    /// the workers were started with.
    pub fn set_pipeline(&self, config: PipelineConfig, training: TrainingSet, wal: PathBuf) {
        *self.pipeline.lock().unwrap() = Some(PipelineSession {
            config,
            training,
            wal,
            client: None,
        });
    }

    pub fn execute(&self, command: &Command) -> Result<Outcome, MgmtError> {
        let gmt = self.cluster.gmt();
        Ok(match command {
            Command::StartGmt { .. } => {
                return Err(MgmtError::Unsupported("this instance already runs a GMT".into()));
            }
            Command::StartNode { node_id } => {
                gmt.start_node(node_id)?;
                Outcome::Started { node_id: node_id.clone() }
            }
            Command::StopNode { node_id } => {
                gmt.stop_node(node_id)?;
                Outcome::Stopped { node_id: node_id.clone() }
            }
            Command::Allocate { node_id, tier_type, count } => Outcome::Allocated {
                tier_ids: gmt.allocate(node_id, *tier_type, *count as usize)?,
            },
            Command::Deallocate { node_id, tier_type, tier_ids } => {
                return self.deallocate(node_id, *tier_type, tier_ids, false);
            }
            Command::SaveNetwork { file } => {
                save_network(gmt, file)?;
                Outcome::Saved { file: file.clone() }
            }
            Command::LoadNetwork { file } => {
                let net = read_network(file)?;
                let plan = net.replica_plan();
                gmt.replace(net.topology, plan, net.programs)?;
                Outcome::Loaded { file: file.clone() }
            }
            Command::Status => Outcome::Status { topology: gmt.snapshot() },
        })
    }

    pub fn deallocate(
        &self,
        node_id: &str,
        tier_type: TierType,
        tier_ids: &[String],
        force: bool,
    ) -> Result<Outcome, MgmtError> {
        let count = self.cluster.gmt().deallocate_tier(node_id, tier_type, tier_ids, force)?;
        Ok(Outcome::Deallocated { count })
    }

    /// Deallocation by tier id alone; node and type are looked up.
    pub fn deallocate_tier(&self, tier_id: &str, force: bool) -> Result<Outcome, MgmtError> {
        let topo = self.cluster.gmt().snapshot();
        let t = topo.tier(tier_id)?;
        self.deallocate(&t.node_id, t.tier_type, &[tier_id.to_owned()], force)
    }

    pub fn register_node(&self, node_id: &str, address: &str) -> Result<Outcome, MgmtError> {
        let node_id = self.cluster.gmt().register_node(NodeDescriptor::new(node_id, address))?;
        Ok(Outcome::Registered { node_id })
    }

    pub fn inject(&self, fault: &Fault) -> Result<Outcome, MgmtError> {
        match fault {
            Fault::KillNode(n) => self.cluster.kill_node(n)?,
            Fault::KillWorker(t) => self.cluster.kill_worker(t)?,
            Fault::KillBroker(b) => self.cluster.kill_broker(b),
        }
        Ok(Outcome::FaultInjected { fault: fault.clone() })
    }

    pub fn demands(&self, state: Option<DemandState>) -> Vec<DemandView> {
        self.cluster.store().entries(state).iter().map(DemandView::new).collect()
    }

    pub fn process_document(&self, doc_id: &str, source: &[u8]) -> Result<ResultReport, MgmtError> {
        let mut guard = self.pipeline.lock().unwrap();
        let session = guard
            .as_mut()
            .ok_or_else(|| MgmtError::Unsupported("no pipeline configured for this instance".into()))?;
        let dgt = self.cluster.dgt()?;
        // workers started since the last document need the set as well
        self.cluster
            .replicate_training(&session.training)
            .1
            .map_err(eduction_runtime::RuntimeError::from)?;
        if session.client.as_ref().map_or(true, |c| !Arc::ptr_eq(c.dgt(), &dgt)) {
            // release the log before reopening it
            session.client = None;
            session.client = Some(MarfClient::new(
                dgt,
                &session.config,
                session.training.digest(),
                &session.wal,
            )?);
        }
        let client = session.client.as_ref().expect("set above");
        let r = client.process_document(doc_id, source)?;
        Ok(ResultReport::new(doc_id, &r))
    }
}
