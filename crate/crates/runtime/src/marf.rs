//! The recognition pipeline over the tiers: every stage is a procedural
//! demand served by a DWT, and every stage is bracketed by a write-ahead
//! transaction so a crashed client can resume.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use eduction_core::Context;
use eduction_pipeline::{FeatureVector, PipelineConfig, ResultSet, Sample};
use eduction_resilience::{LocalReplica, ReplayEntry, WalLog};
use sha2::{Digest, Sha256};

use crate::dgt::Dgt;
use crate::dwt::{FunctionTable, WorkerCtx};
use crate::error::RuntimeError;

pub const PROGRAM_ID: &str = "marf";
pub const LOAD: &str = "marf.load";
pub const PREPROCESS: &str = "marf.preprocess";
pub const FEATURES: &str = "marf.features";
pub const CLASSIFY: &str = "marf.classify";
pub const STAGES: [&str; 4] = [LOAD, PREPROCESS, FEATURES, CLASSIFY];

/// Training-set copies held by workers, by tier id.
#[derive(Clone, Default)]
pub struct Replicas(Arc<RwLock<HashMap<String, Arc<LocalReplica>>>>);

impl fmt::Debug for Replicas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<String> = self.0.read().unwrap().keys().cloned().collect();
        ids.sort();
        f.debug_tuple("Replicas").field(&ids).finish()
    }
}

impl Replicas {
    pub fn ensure(&self, tier_id: &str) -> Arc<LocalReplica> {
        self.0
            .write()
            .unwrap()
            .entry(tier_id.to_owned())
            .or_insert_with(|| Arc::new(LocalReplica::new(tier_id)))
            .clone()
    }

    pub fn get(&self, tier_id: &str) -> Option<Arc<LocalReplica>> {
        self.0.read().unwrap().get(tier_id).cloned()
    }

    pub fn all(&self) -> Vec<Arc<LocalReplica>> {
        let map = self.0.read().unwrap();
        let mut ids: Vec<&String> = map.keys().collect();
        ids.sort();
        ids.into_iter().map(|id| map[id].clone()).collect()
    }
}

pub fn config_digest(config: &PipelineConfig) -> [u8; 32] {
    Sha256::digest(format!("{config:?}").as_bytes()).into()
}

fn sha(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Registers the four stage functions for `config`.
pub fn register_stages(table: &mut FunctionTable, config: PipelineConfig, replicas: Replicas) {
    let config = Arc::new(config);
    let digest = config_digest(&config);
    let check = move |args: &[Vec<u8>], n: usize| -> Result<(), String> {
        if args.len() != n {
            return Err(format!("expected {n} arguments, got {}", args.len()));
        }
        if args[0] != digest {
            return Err("pipeline configuration differs from the worker's".into());
        }
        Ok(())
    };
    let c = config.clone();
    table.register(LOAD, move |_: &WorkerCtx<'_>, args: &[Vec<u8>]| {
        check(args, 3)?;
        let doc = std::str::from_utf8(&args[1]).map_err(|e| e.to_string())?;
        c.load(doc, &args[2]).map(|s| s.encode()).map_err(|e| e.to_string())
    });
    let c = config.clone();
    table.register(PREPROCESS, move |_: &WorkerCtx<'_>, args: &[Vec<u8>]| {
        check(args, 2)?;
        let s = Sample::decode(&args[1]).map_err(|e| e.to_string())?;
        c.preprocess(&s).map(|s| s.encode()).map_err(|e| e.to_string())
    });
    let c = config.clone();
    table.register(FEATURES, move |_: &WorkerCtx<'_>, args: &[Vec<u8>]| {
        check(args, 2)?;
        let s = Sample::decode(&args[1]).map_err(|e| e.to_string())?;
        c.features(&s).map(|f| f.encode()).map_err(|e| e.to_string())
    });
    let c = config;
    table.register(CLASSIFY, move |ctx: &WorkerCtx<'_>, args: &[Vec<u8>]| {
        check(args, 3)?;
        let replica = replicas
            .get(ctx.tier_id)
            .ok_or_else(|| format!("{} holds no training set", ctx.tier_id))?;
        let ts = replica.snapshot();
        if ts.digest()[..] != args[1][..] {
            return Err(format!("{} holds a different training set", ctx.tier_id));
        }
        let fv = FeatureVector::decode(&args[2]).map_err(|e| e.to_string())?;
        c.classify(&fv, &ts).map(|r| r.encode()).map_err(|e| e.to_string())
    });
}

/// Where an injected client crash happens, counted in stages from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterBegin(usize),
    AfterCommit(usize),
}

pub struct MarfClient {
    dgt: Arc<Dgt>,
    config_digest: [u8; 32],
    training_digest: [u8; 32],
    wal: Mutex<WalLog>,
}

impl fmt::Debug for MarfClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarfClient").field("dgt", &self.dgt.tier_id()).finish()
    }
}

impl MarfClient {
    /// `training_digest` names the set the classifying workers must hold.
    pub fn new(
        dgt: Arc<Dgt>,
        config: &PipelineConfig,
        training_digest: [u8; 32],
        wal_path: impl AsRef<Path>,
    ) -> Result<MarfClient, RuntimeError> {
        Ok(MarfClient {
            dgt,
            config_digest: config_digest(config),
            training_digest,
            wal: Mutex::new(WalLog::open(wal_path)?),
        })
    }

    pub fn dgt(&self) -> &Arc<Dgt> {
        &self.dgt
    }

    /// Transactions a crash left open.
    pub fn pending(&self) -> Vec<ReplayEntry> {
        self.wal.lock().unwrap().recover()
    }

    pub fn process_document(&self, doc_id: &str, source: &[u8]) -> Result<ResultSet, RuntimeError> {
        self.run(doc_id, source, None, &BTreeMap::new())
    }

    /// Same as `process_document`, but stops at `crash` as if the process died.
    pub fn process_with_crash(&self, doc_id: &str, source: &[u8], crash: CrashPoint) -> Result<ResultSet, RuntimeError> {
        self.run(doc_id, source, Some(crash), &BTreeMap::new())
    }

    /// Finishes a document after a crash: open transactions are checked
    /// against the recomputed stage inputs and committed, the rest run anew.
    pub fn resume(&self, doc_id: &str, source: &[u8]) -> Result<ResultSet, RuntimeError> {
        let open: BTreeMap<String, ReplayEntry> = self
            .pending()
            .into_iter()
            .map(|e| (e.stage.clone(), e))
            .collect();
        self.run(doc_id, source, None, &open)
    }

    fn run(
        &self,
        doc_id: &str,
        source: &[u8],
        crash: Option<CrashPoint>,
        open: &BTreeMap<String, ReplayEntry>,
    ) -> Result<ResultSet, RuntimeError> {
        let cfg = self.config_digest.to_vec();
        let mut input: Vec<Vec<u8>> = vec![cfg.clone(), doc_id.as_bytes().to_vec(), source.to_vec()];
        let mut last = Vec::new();
        for (k, stage) in STAGES.iter().enumerate() {
            let digest = sha(&crate::dwt::procedure_payload(stage, &input));
            let txn = match open.get(*stage) {
                Some(e) if e.payload_digest == digest => e.txn_id,
                Some(_) => return Err(RuntimeError::ReplayMismatch((*stage).to_owned())),
                None => self.wal.lock().unwrap().begin(stage, digest)?,
            };
            if crash == Some(CrashPoint::AfterBegin(k)) {
                return Err(RuntimeError::Crashed(format!("{stage} begun")));
            }
            let out = match self.dgt.call_procedure(PROGRAM_ID, stage, input, &Context::empty()) {
                Ok(out) => out,
                Err(e) => {
                    let e = stage_error(stage, doc_id, e);
                    // a stored failure is final: replaying the stage gives the same error
                    if matches!(e, RuntimeError::UnableToLoad(_) | RuntimeError::ProcessingFailed { .. }) {
                        self.wal.lock().unwrap().commit(txn)?;
                    }
                    return Err(e);
                }
            };
            self.wal.lock().unwrap().commit(txn)?;
            if crash == Some(CrashPoint::AfterCommit(k)) {
                return Err(RuntimeError::Crashed(format!("{stage} committed")));
            }
            input = match *stage {
                FEATURES => vec![cfg.clone(), self.training_digest.to_vec(), out.clone()],
                _ => vec![cfg.clone(), out.clone()],
            };
            last = out;
        }
        ResultSet::decode(&last).map_err(|e| RuntimeError::ProcessingFailed {
            stage: CLASSIFY.to_owned(),
            reason: e.to_string(),
        })
    }
}

fn stage_error(stage: &str, doc_id: &str, e: RuntimeError) -> RuntimeError {
    match e {
        RuntimeError::EvaluationFailure(reason) if stage == LOAD => {
            RuntimeError::UnableToLoad(format!("{doc_id}: {reason}"))
        }
        RuntimeError::EvaluationFailure(reason) => RuntimeError::ProcessingFailed {
            stage: stage.to_owned(),
            reason,
        },
        other => other,
    }
}
