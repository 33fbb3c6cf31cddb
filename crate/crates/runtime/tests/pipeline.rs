mod common;

use std::time::Duration;

use eduction_core::DemandKind;
use eduction_pipeline::PipelineConfig;
use eduction_resilience::{ReplicaPlan, StageReplicas};
use eduction_runtime::dwt::decode_procedure;
use eduction_runtime::marf::{CLASSIFY, LOAD, PREPROCESS, STAGES};
use eduction_runtime::{Cluster, ClusterConfig, CrashPoint, EventKind, MarfClient, RuntimeError, TierType, WorkerCtx};

use common::*;

fn pipeline_cluster(three: bool) -> (Cluster, PipelineConfig) {
    let pc = PipelineConfig::default();
    let config = fast(ClusterConfig::isolated()).with_pipeline(pc.clone());
    let cluster = if three { three_nodes(config) } else { single_node(config, 2) };
    (cluster, pc)
}

fn client(cluster: &Cluster, pc: &PipelineConfig, dir: &tempfile::TempDir) -> MarfClient {
    let ts = training(pc);
    let (_, res) = cluster.replicate_training(&ts);
    res.unwrap();
    MarfClient::new(cluster.dgt().unwrap(), pc, ts.digest(), dir.path().join("client.wal")).unwrap()
}

fn stage_demands(cluster: &Cluster, stage: &str) -> usize {
    cluster
        .store()
        .entries(None)
        .iter()
        .filter(|e| e.demand.kind() == DemandKind::Procedural)
        .filter(|e| decode_procedure(e.demand.payload()).map(|(f, _)| f == stage).unwrap_or(false))
        .count()
}

#[test]
fn distributed_run_equals_the_local_pipeline() {
    let (cluster, pc) = pipeline_cluster(false);
    let dir = tempfile::tempdir().unwrap();
    let c = client(&cluster, &pc, &dir);
    let ts = training(&pc);
    for (doc, bytes) in corpus(4) {
        let remote = c.process_document(&doc, &bytes).unwrap();
        let local = pc.run_local(&doc, &bytes, &ts).unwrap();
        assert_eq!(remote.encode(), local.encode(), "{doc}");
    }
    for stage in STAGES {
        assert_eq!(stage_demands(&cluster, stage), 4, "{stage}");
    }
}

#[test]
fn one_and_three_nodes_give_identical_result_sets() {
    let docs = corpus(10);
    let mut outputs = Vec::new();
    for three in [false, true] {
        let (cluster, pc) = pipeline_cluster(three);
        let dir = tempfile::tempdir().unwrap();
        let c = client(&cluster, &pc, &dir);
        let encoded: Vec<Vec<u8>> = docs
            .iter()
            .map(|(d, b)| c.process_document(d, b).unwrap().encode())
            .collect();
        outputs.push(encoded);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn corrupt_document_fails_to_load_and_goes_no_further() {
    let (cluster, pc) = pipeline_cluster(false);
    let dir = tempfile::tempdir().unwrap();
    let c = client(&cluster, &pc, &dir);
    let mut bytes = tone(300.0, 0.5, 256);
    bytes.truncate(30);
    assert!(matches!(c.process_document("broken", &bytes), Err(RuntimeError::UnableToLoad(_))));
    assert!(c.pending().is_empty());
    assert_eq!(stage_demands(&cluster, LOAD), 1);
    for stage in &STAGES[1..] {
        assert_eq!(stage_demands(&cluster, stage), 0, "{stage}");
    }
}

#[test]
fn failing_classifier_surfaces_as_processing_failure() {
    let pc = PipelineConfig::default();
    let mut config = fast(ClusterConfig::isolated()).with_pipeline(pc.clone());
    config
        .functions
        .register(CLASSIFY, |_: &WorkerCtx<'_>, _: &[Vec<u8>]| Err("classifier offline".to_owned()));
    let cluster = single_node(config, 1);
    let dir = tempfile::tempdir().unwrap();
    let c = client(&cluster, &pc, &dir);
    let (doc, bytes) = &corpus(1)[0];
    match c.process_document(doc, bytes) {
        Err(RuntimeError::ProcessingFailed { stage, reason }) => {
            assert_eq!(stage, CLASSIFY);
            assert!(reason.contains("classifier offline"));
        }
        other => panic!("expected ProcessingFailed, got {other:?}"),
    }
}

#[test]
fn worker_with_a_stale_training_set_refuses_to_classify() {
    let (cluster, pc) = pipeline_cluster(false);
    let dir = tempfile::tempdir().unwrap();
    let ts = training(&pc);
    let c = MarfClient::new(cluster.dgt().unwrap(), &pc, ts.digest(), dir.path().join("w.wal")).unwrap();
    let (doc, bytes) = &corpus(1)[0];
    assert!(matches!(
        c.process_document(doc, bytes),
        Err(RuntimeError::ProcessingFailed { stage, .. }) if stage == CLASSIFY
    ));
}

#[test]
fn every_crash_point_resumes_to_the_crash_free_result() {
    let (cluster, pc) = pipeline_cluster(false);
    let ts = training(&pc);
    cluster.replicate_training(&ts).1.unwrap();
    let (doc, bytes) = &corpus(3)[2];
    let reference = pc.run_local(doc, bytes, &ts).unwrap().encode();
    let points = (0..4).flat_map(|k| [CrashPoint::AfterBegin(k), CrashPoint::AfterCommit(k)]);
    for point in points {
        let dir = tempfile::tempdir().unwrap();
        let wal = dir.path().join("crash.wal");
        {
            let c = MarfClient::new(cluster.dgt().unwrap(), &pc, ts.digest(), &wal).unwrap();
            assert!(matches!(c.process_with_crash(doc, bytes, point), Err(RuntimeError::Crashed(_))));
        }
        let c = MarfClient::new(cluster.dgt().unwrap(), &pc, ts.digest(), &wal).unwrap();
        let open = c.pending().len();
        assert_eq!(open, usize::from(matches!(point, CrashPoint::AfterBegin(_))), "{point:?}");
        let resumed = c.resume(doc, bytes).unwrap();
        assert_eq!(resumed.encode(), reference, "{point:?}");
        assert!(c.pending().is_empty(), "{point:?}");
    }
}

#[test]
fn resume_rejects_a_log_written_for_other_input() {
    let (cluster, pc) = pipeline_cluster(false);
    let ts = training(&pc);
    cluster.replicate_training(&ts).1.unwrap();
    let docs = corpus(2);
    let dir = tempfile::tempdir().unwrap();
    let wal = dir.path().join("x.wal");
    {
        let c = MarfClient::new(cluster.dgt().unwrap(), &pc, ts.digest(), &wal).unwrap();
        let _ = c.process_with_crash(&docs[0].0, &docs[0].1, CrashPoint::AfterBegin(0));
    }
    let c = MarfClient::new(cluster.dgt().unwrap(), &pc, ts.digest(), &wal).unwrap();
    assert!(matches!(
        c.resume(&docs[1].0, &docs[1].1),
        Err(RuntimeError::ReplayMismatch(stage)) if stage == LOAD
    ));
}

#[test]
fn standby_takes_over_the_preprocessing_stage() {
    let pc = PipelineConfig::default();
    let config = fast(ClusterConfig::isolated()).with_pipeline(pc.clone());
    let cluster = Cluster::build(config, &[("n1", &[TierType::Dst, TierType::Gmt, TierType::Dgt])]).unwrap();
    let gmt = cluster.gmt();
    gmt.register_node(eduction_runtime::NodeDescriptor::new("n2", "inproc://n2")).unwrap();
    let main = gmt.allocate_tier("n2", TierType::Dwt).unwrap();
    let pre = gmt.allocate_tier("n2", TierType::Dwt).unwrap();
    let standby = gmt.allocate_tier("n2", TierType::Dwt).unwrap();
    let others: Vec<String> = STAGES.iter().filter(|s| **s != PREPROCESS).map(|s| s.to_string()).collect();
    gmt.configure_tier(&main, Some(others)).unwrap();
    gmt.configure_tier(&pre, Some(vec![PREPROCESS.to_owned()])).unwrap();
    gmt.configure_tier(&standby, Some(vec![])).unwrap();
    gmt.set_plan(
        ReplicaPlan::new().with_stage(PREPROCESS, StageReplicas::new(&[pre.as_str()], &[standby.as_str()], 1)),
    )
    .unwrap();
    gmt.start_node("n2").unwrap();

    let dir = tempfile::tempdir().unwrap();
    let c = client(&cluster, &pc, &dir);
    let ts = training(&pc);
    let docs = corpus(10);
    for (i, (doc, bytes)) in docs.iter().enumerate() {
        if i == 3 {
            cluster.kill_worker(&pre).unwrap();
        }
        let got = c.process_document(doc, bytes).unwrap();
        assert_eq!(got.encode(), pc.run_local(doc, bytes, &ts).unwrap().encode(), "{doc}");
    }
    std::thread::sleep(Duration::from_millis(300));
    let heals = cluster.events().of_kind(EventKind::HealingAction);
    assert_eq!(heals.len(), 1);
    assert_eq!(heals[0].detail["promoted"], standby);
    assert_eq!(heals[0].detail["replaces"], pre);
    assert_eq!(cluster.events().of_kind(EventKind::WorkerDown).len(), 1);
    assert!(cluster.dwt(&standby).unwrap().bound().contains(&PREPROCESS.to_owned()));
}
