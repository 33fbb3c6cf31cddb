use std::io::{BufRead, BufReader};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eduction_mgmt::{serve, Client, Manager, MgmtError, NetworkFile, ServiceHandle};
use eduction_resilience::{ReplicaPlan, StageReplicas};
use eduction_runtime::{Cluster, ClusterConfig, Event, Topology, TierType};
use serde_json::{json, Value};

use TierType::{Dgt, Dst, Dwt, Gmt};

fn fast() -> ClusterConfig {
    let mut c = ClusterConfig::isolated().with_hamming();
    c.heartbeat = Duration::from_millis(50);
    c.rpc_timeout = Duration::from_millis(500);
    c.store = eduction_core::StoreConfig::new(300, 1000).unwrap();
    c
}

fn three_nodes() -> (Arc<Manager>, ServiceHandle, Client) {
    let cluster = Cluster::build(fast(), &[("n1", &[Dst, Gmt, Dgt]), ("n2", &[Dwt]), ("n3", &[Dwt])]).unwrap();
    let manager = Manager::new(cluster);
    let handle = serve(manager.clone(), "127.0.0.1:0").unwrap();
    let client = Client::new(&handle.url());
    (manager, handle, client)
}

fn api_code(e: MgmtError) -> (u16, String) {
    match e {
        MgmtError::Api { status, code, .. } => (status, code),
        other => panic!("expected an API error, got {other:?}"),
    }
}

#[test]
fn topology_lists_nodes_with_their_tiers() {
    let (_m, _h, client) = three_nodes();
    let topo: Topology = client.get("/topology").unwrap();
    assert_eq!(topo.nodes.len(), 3);
    assert_eq!(topo.nodes["n1"].hosted_tiers.len(), 3);
    assert_eq!(topo.nodes["n2"].hosted_tiers.len(), 1);
    let dwt = &topo.nodes["n3"].hosted_tiers[0];
    assert_eq!(topo.tiers[dwt].tier_type, Dwt);
}

#[test]
fn errors_carry_code_and_status() {
    let (_m, _h, client) = three_nodes();
    assert_eq!(api_code(client.delete::<Value>("/tiers/T99").unwrap_err()), (404, "UnknownTier".into()));
    let topo: Topology = client.get("/topology").unwrap();
    let dst = topo.started_of(Dst)[0].tier_id.clone();
    assert_eq!(
        api_code(client.delete::<Value>(&format!("/tiers/{dst}")).unwrap_err()),
        (409, "LastRouteViolation".into())
    );
    let forced: Value = client.delete(&format!("/tiers/{dst}?force=true")).unwrap();
    assert_eq!(forced["count"], 1);
    assert_eq!(api_code(client.command("allocate n1 XYZ 1").unwrap_err()), (400, "ParseError".into()));
    assert_eq!(api_code(client.get::<Value>("/demands?state=done").unwrap_err()).0, 400);
    assert_eq!(
        api_code(client.post::<_, Value>("/nodes", &json!({"node_id": "n1", "address": "x:1"})).unwrap_err()),
        (409, "DuplicateNodeId".into())
    );
}

#[test]
fn demands_can_be_filtered_by_state() {
    let (m, _h, client) = three_nodes();
    m.cluster().register_program(eduction_runtime::HAMMING_PROGRAM).unwrap();
    let ctx = eduction_core::Context::empty().with("n", 6);
    assert_eq!(m.cluster().dgt().unwrap().evaluate_int("hamming", "hamming", &ctx).unwrap(), 6);
    let all: Vec<Value> = client.get("/demands").unwrap();
    let computed: Vec<Value> = client.get("/demands?state=computed").unwrap();
    let pending: Vec<Value> = client.get("/demands?state=pending").unwrap();
    assert!(!computed.is_empty());
    assert_eq!(all.len(), computed.len() + pending.len());
    assert!(computed.iter().all(|d| d["state"] == "computed"));
}

fn read_stream(client: &Client, since: u64, last_id: Option<u64>, n: usize) -> Vec<Event> {
    read_stream_until(client, since, last_id, |seen| seen.len() == n)
}

/// Reads server-sent events until `done` holds for what arrived.
fn read_stream_until(
    client: &Client,
    since: u64,
    last_id: Option<u64>,
    done: impl Fn(&[Event]) -> bool,
) -> Vec<Event> {
    let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(10)).build().unwrap();
    let mut req = http
        .get(format!("{}/events?since={since}", client.base()))
        .header("accept", "text/event-stream");
    if let Some(id) = last_id {
        req = req.header("last-event-id", id.to_string());
    }
    let resp = req.send().unwrap();
    let mut out = Vec::new();
    for line in BufReader::new(resp).lines() {
        let line = line.unwrap();
        if let Some(data) = line.strip_prefix("data:") {
            out.push(serde_json::from_str(data.trim()).unwrap());
            if done(&out) {
                break;
            }
        }
    }
    out
}

#[test]
fn event_stream_is_ordered_and_resumable() {
    let (_m, _h, client) = three_nodes();
    let polled: Vec<Event> = client.get("/events?since=0").unwrap();
    assert!(polled.len() >= 6);
    let streamed = read_stream(&client, 0, None, polled.len());
    assert_eq!(streamed, polled);
    for (i, e) in streamed.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    let _: Value = client.post("/tiers", &json!({"node_id": "n2", "tier_type": "DWT", "count": 2})).unwrap();
    let resumed = read_stream(&client, 0, Some(polled.len() as u64), 2);
    assert_eq!(resumed.iter().map(|e| e.seq).collect::<Vec<_>>(), [polled.len() as u64 + 1, polled.len() as u64 + 2]);
    assert!(resumed.iter().all(|e| e.kind.name() == "tier_allocated"));
    let waited: Vec<Event> = client.get(&format!("/events?since={}&wait_ms=100", polled.len() + 2)).unwrap();
    assert!(waited.is_empty());
}

#[test]
fn killing_a_node_is_followed_by_healing() {
    let (m, _h, client) = three_nodes();
    let topo = m.cluster().gmt().snapshot();
    let active = topo.nodes["n2"].hosted_tiers[0].clone();
    let standby = topo.nodes["n3"].hosted_tiers[0].clone();
    m.cluster()
        .gmt()
        .set_plan(ReplicaPlan::new().with_stage("scale2", StageReplicas::new(&[&active], &[&standby], 1)))
        .unwrap();
    let since = m.cluster().events().last_seq();
    let _: Value = client.post("/faults", &json!({"kill_node": "n2"})).unwrap();
    let events = read_stream_until(&client, since, None, |seen| {
        seen.iter().any(|e| e.kind.name() == "healing_action")
    });
    let kinds: Vec<&str> = events.iter().map(|e| e.kind.name()).collect();
    let down = kinds.iter().position(|k| *k == "node_down").expect("node_down");
    let heal = kinds.iter().position(|k| *k == "healing_action").expect("healing_action");
    assert!(down < heal, "{kinds:?}");
    assert_eq!(events[heal].detail["promoted"], standby);
    assert_eq!(api_code(client.post::<_, Value>("/faults", &json!({"kill_worker": "T77"})).unwrap_err()).0, 404);
}

#[test]
fn saved_network_restores_the_topology() {
    let (m, _h, client) = three_nodes();
    m.cluster().register_program(eduction_runtime::HAMMING_PROGRAM).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("net.json").to_string_lossy().into_owned();
    let _: Value = client.post("/network/save", &json!({ "file": file })).unwrap();
    let saved = NetworkFile::capture(m.cluster().gmt());

    let _: Value = client.post("/nodes", &json!({"node_id": "n4", "address": "h4:1"})).unwrap();
    let _: Value = client.post("/tiers", &json!({"node_id": "n4", "tier_type": "DWT"})).unwrap();
    assert_eq!(m.cluster().gmt().snapshot().nodes.len(), 4);

    let _: Value = client.post("/network/load", &json!({ "file": file })).unwrap();
    let restored = NetworkFile::capture(m.cluster().gmt());
    assert_eq!(restored.topology.nodes.keys().collect::<Vec<_>>(), ["n1", "n2", "n3"]);
    assert!(restored.topology.tiers.values().all(|t| t.state == eduction_runtime::TierState::Stopped));
    let strip = |mut n: NetworkFile| {
        for t in n.topology.tiers.values_mut() {
            t.state = eduction_runtime::TierState::Stopped;
        }
        n
    };
    assert_eq!(strip(restored), strip(saved));

    // the restored network starts and evaluates again
    for n in ["n1", "n2", "n3"] {
        let _: Value = client.post(&format!("/nodes/{n}/start"), &json!({})).unwrap();
    }
    let ctx = eduction_core::Context::empty().with("n", 9);
    assert_eq!(m.cluster().dgt().unwrap().evaluate_int("hamming", "hamming", &ctx).unwrap(), 10);
}

#[test]
fn malformed_network_files_name_the_violation() {
    let (m, _h, _client) = three_nodes();
    let good = NetworkFile::capture(m.cluster().gmt()).to_json();
    let mut v: Value = serde_json::from_str(&good).unwrap();
    let tier = v["topology"]["tiers"].as_object().unwrap().keys().next().unwrap().clone();
    v["topology"]["tiers"][&tier]["tier_type"] = json!("XYZ");
    match NetworkFile::from_json(&v.to_string()) {
        Err(MgmtError::InvalidNetworkFile { path, .. }) => assert_eq!(path, format!("topology.tiers.{tier}.tier_type")),
        other => panic!("{other:?}"),
    }
    let mut v: Value = serde_json::from_str(&good).unwrap();
    v["topology"]["tiers"][&tier]["node_id"] = json!("ghost");
    assert!(matches!(
        NetworkFile::from_json(&v.to_string()),
        Err(MgmtError::InvalidNetworkFile { path, .. }) if path.ends_with("node_id")
    ));
    let mut v: Value = serde_json::from_str(&good).unwrap();
    v["format"] = json!(7);
    assert!(matches!(NetworkFile::from_json(&v.to_string()), Err(MgmtError::InvalidNetworkFile { .. })));
}

#[test]
fn documents_are_processed_through_the_service() {
    use eduction_pipeline::sample::to_wav_pcm16;
    use eduction_pipeline::{PipelineConfig, TrainingSet};
    let pc = PipelineConfig::default();
    let cluster = Cluster::build(fast().with_pipeline(pc.clone()), &[("n1", &[Dst, Gmt, Dgt, Dwt, Dwt])]).unwrap();
    let tone = |f: f64| {
        let v: Vec<f64> = (0..512).map(|i| 0.4 * (2.0 * std::f64::consts::PI * f * i as f64 / 8000.0).sin()).collect();
        to_wav_pcm16(&v, 8000).unwrap()
    };
    let mut ts = TrainingSet::new();
    ts.train(1, &pc.featurize("a", &tone(150.0)).unwrap()).unwrap();
    ts.train(2, &pc.featurize("b", &tone(1200.0)).unwrap()).unwrap();
    let manager = Manager::new(cluster);
    let dir = tempfile::tempdir().unwrap();
    manager.set_pipeline(pc.clone(), ts.clone(), dir.path().join("svc.wal"));
    let handle = serve(manager, "127.0.0.1:0").unwrap();
    let client = Client::new(&handle.url());
    let report: Value = client.post_bytes("/pipeline/process?doc_id=d1", tone(1100.0)).unwrap();
    let local = pc.run_local("d1", &tone(1100.0), &ts).unwrap();
    assert_eq!(report["best"], json!(local.best()));
    assert_eq!(report["best"], 2);
    let bad = client.post_bytes::<Value>("/pipeline/process?doc_id=d2", vec![1, 2, 3]).unwrap_err();
    assert_eq!(api_code(bad), (400, "UnableToLoad".into()));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn cli_starts_an_instance_and_drives_it() {
    let exe = env!("CARGO_BIN_EXE_eduction-rt");
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let cfg = dir.path().join("GMTConfigFile.config");
    std::fs::write(
        &cfg,
        format!("# test instance\nmgmt.bind=127.0.0.1:{port}\ngmt.node_id=N1\ngmt.tiers=DST,GMT,DGT\ngmt.heartbeat_ms=50\n"),
    )
    .unwrap();
    let mut server = std::process::Command::new(exe)
        .args(["start", "GMT"])
        .arg(&cfg)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let client = Client::new(&format!("http://127.0.0.1:{port}"));
    let up = Instant::now();
    while client.get::<Topology>("/topology").is_err() {
        assert!(up.elapsed() < Duration::from_secs(20), "service did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    let run = |args: &[&str]| {
        std::process::Command::new(exe)
            .args(args)
            .env("EDUCTION_CONFIG", &cfg)
            .output()
            .unwrap()
    };
    let out = run(&["allocate", "N1", "DWT", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tier_ids"].as_array().unwrap().len(), 2);
    let out = run(&["deallocate", "N1", "DWT", "T4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["deallocate", "N1", "DGT", "T9"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnknownTier"));
    let out = run(&["allocate", "N1"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ParseError"));
    let topo: Topology = client.get("/topology").unwrap();
    assert_eq!(topo.tiers.len(), 4);
    server.kill().unwrap();
    let _ = server.wait();
}
