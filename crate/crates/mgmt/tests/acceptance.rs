//! End-to-end acceptance run: one line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod history;
#[path = "../../runtime/tests/common/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use eduction_core::{Context, DemandState};
use eduction_mgmt::{parse_command, serve, Client, Command, Manager, NetworkFile};
use eduction_pipeline::network::Neuron;
use eduction_pipeline::*;
use eduction_resilience::wal::{recover_bytes, MAX_UNCOMMITTED};
use eduction_resilience::*;
use eduction_runtime::dwt::{decode_int, encode_int};
use eduction_runtime::marf::PREPROCESS;
use eduction_runtime::*;
use eduction_transport::{EnvelopeKind, MacKey, TransportEnvelope};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use support::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

fn hamming_cluster() -> Cluster {
    let cluster = single_node(fast(ClusterConfig::isolated()).with_hamming(), 2);
    cluster.register_program(HAMMING_PROGRAM).unwrap();
    cluster
}

fn hamming_values(cluster: &Cluster) -> Result<Vec<i64>, String> {
    let dgt = ok(cluster.dgt())?;
    (1..=20)
        .map(|i| ok(dgt.evaluate_int("hamming", "hamming", &Context::empty().with("n", i))))
        .collect()
}

fn eductive_correctness() -> Outcome {
    let cluster = hamming_cluster();
    let started = Instant::now();
    let got = hamming_values(&cluster)?;
    let took = started.elapsed();
    ensure!(got == hamming_oracle(20), "got {got:?}");
    ensure!(took < Duration::from_secs(5), "took {took:?}");
    Ok(format!("20 values match enumeration in {took:.2?}"))
}

fn memoization() -> Outcome {
    let cluster = hamming_cluster();
    let first = hamming_values(&cluster)?;
    let dgt = ok(cluster.dgt())?;
    let before = dgt.procedural_dispatches();
    let second = hamming_values(&cluster)?;
    let extra = dgt.procedural_dispatches() - before;
    ensure!(first == second, "values differ on the second pass");
    ensure!(extra == 0, "{extra} dispatches on the second pass");
    Ok(format!("first pass {before} dispatches, second pass 0"))
}

fn pipeline_client(cluster: &Cluster, pc: &PipelineConfig, dir: &tempfile::TempDir) -> Result<MarfClient, String> {
    let ts = training(pc);
    ok(cluster.replicate_training(&ts).1)?;
    ok(MarfClient::new(ok(cluster.dgt())?, pc, ts.digest(), dir.path().join("client.wal")))
}

fn distribution_transparency() -> Outcome {
    let docs = corpus(10);
    let mut runs = Vec::new();
    for three in [false, true] {
        let pc = PipelineConfig::default();
        let config = fast(ClusterConfig::isolated()).with_pipeline(pc.clone());
        let cluster = if three { three_nodes(config) } else { single_node(config, 2) };
        let dir = ok(tempfile::tempdir())?;
        let client = pipeline_client(&cluster, &pc, &dir)?;
        let encoded: Result<Vec<Vec<u8>>, String> =
            docs.iter().map(|(d, b)| ok(client.process_document(d, b)).map(|r| r.encode())).collect();
        runs.push(encoded?);
    }
    ensure!(runs[0] == runs[1], "result sets differ between topologies");
    Ok("10 result sets byte-identical on 1 and 3 nodes".into())
}

fn square_table(delay: Duration) -> FunctionTable {
    let mut t = FunctionTable::new();
    t.register("square", move |_: &WorkerCtx<'_>, args: &[Vec<u8>]| {
        thread::sleep(delay);
        let v = decode_int(&args[0])?;
        Ok(encode_int(v * v))
    });
    t
}

fn submit_and_await(cluster: &Cluster, n: i64, before_submit: impl Fn(i64)) -> Result<Vec<i64>, String> {
    let dgt = ok(cluster.dgt())?;
    let mut subs = Vec::new();
    for i in 0..n {
        before_submit(i);
        subs.push(ok(dgt.submit("work", "square", vec![encode_int(i)], &Context::empty()))?);
    }
    subs.iter().map(|s| ok(dgt.await_value(s)).and_then(|v| ok(decode_int(&v)))).collect()
}

fn squares(n: i64) -> Vec<i64> {
    (0..n).map(|i| i * i).collect()
}

fn round_robin_fairness() -> Outcome {
    let mut config = fast(ClusterConfig::isolated());
    config.functions = square_table(Duration::ZERO);
    let cluster = single_node(config, 4);
    ensure!(submit_and_await(&cluster, 100, |_| ())? == squares(100), "wrong values");
    let counts: Vec<u64> = cluster.dwts().iter().map(|w| w.completed()).collect();
    ensure!(counts.iter().all(|c| (24..=26).contains(c)), "completions {counts:?}");
    Ok(format!("completions per worker {counts:?}"))
}

fn broker_failover() -> Outcome {
    let mut config = fast(ClusterConfig::isolated_pair());
    config.functions = square_table(Duration::ZERO);
    let primary = config.transport.get("primary").unwrap().to_owned();
    let cluster = single_node(config, 2);
    let started = Instant::now();
    let values = submit_and_await(&cluster, 100, |i| {
        if i == 50 {
            cluster.kill_broker(&primary);
        }
    })?;
    let took = started.elapsed();
    ensure!(values == squares(100), "wrong values");
    let computed = cluster.store().entries(Some(DemandState::Computed)).len();
    let inconsistent: u64 = cluster.dwts().iter().map(|w| w.inconsistent()).sum();
    ensure!(computed == 100, "{computed} computed");
    ensure!(inconsistent == 0, "{inconsistent} inconsistent results");
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    Ok(format!("100/100 computed, 0 inconsistent, {took:.2?}"))
}

fn lease_redelivery() -> Outcome {
    let mut config = fast(ClusterConfig::isolated());
    config.functions = square_table(Duration::from_millis(150));
    let cluster = single_node(config, 2);
    let dgt = ok(cluster.dgt())?;
    let subs: Result<Vec<_>, String> =
        (0..6).map(|i| ok(dgt.submit("work", "square", vec![encode_int(i)], &Context::empty()))).collect();
    let subs = subs?;
    ensure!(
        wait_until(Duration::from_secs(5), || cluster.store().entries(Some(DemandState::Processing)).len() == 2),
        "workers never both busy"
    );
    let victim = cluster.store().entries(Some(DemandState::Processing))[0].owner.clone().unwrap();
    ok(cluster.kill_worker(&victim))?;
    let values: Result<Vec<i64>, String> =
        subs.iter().map(|s| ok(dgt.await_value(s)).and_then(|v| ok(decode_int(&v)))).collect();
    ensure!(values? == squares(6), "wrong values");
    let distinct: HashSet<_> =
        cluster.store().entries(Some(DemandState::Computed)).iter().map(|e| e.signature).collect();
    let stats = cluster.store().stats();
    ensure!(distinct.len() == 6 && stats.completions == 6, "{} distinct, {} completions", distinct.len(), stats.completions);
    ensure!(stats.redeliveries >= 1, "no redelivery recorded");
    Ok(format!("6 distinct completions after killing {victim}, {} redelivered", stats.redeliveries))
}

fn write_ahead_log() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let mut log = ok(WalLog::open(dir.path().join("cap.wal")))?;
    for i in 0..MAX_UNCOMMITTED {
        ok(log.begin("stage", [i as u8; 32]))?;
    }
    let refused = log.begin("stage", [0; 32]);
    ensure!(refused == Err(ResilienceError::WalFull { max: 1000 }), "1001st begin gave {refused:?}");

    let pc = PipelineConfig::default();
    let cluster = single_node(fast(ClusterConfig::isolated()).with_pipeline(pc.clone()), 2);
    let ts = training(&pc);
    ok(cluster.replicate_training(&ts).1)?;
    let (doc, bytes) = &corpus(3)[2];
    let reference = ok(pc.run_local(doc, bytes, &ts))?.encode();
    let points: Vec<CrashPoint> =
        (0..4).flat_map(|k| [CrashPoint::AfterBegin(k), CrashPoint::AfterCommit(k)]).collect();
    for point in &points {
        let wal = dir.path().join(format!("{point:?}.wal"));
        {
            let c = ok(MarfClient::new(ok(cluster.dgt())?, &pc, ts.digest(), &wal))?;
            let r = c.process_with_crash(doc, bytes, *point);
            ensure!(matches!(r, Err(RuntimeError::Crashed(_))), "{point:?} did not crash: {r:?}");
        }
        let c = ok(MarfClient::new(ok(cluster.dgt())?, &pc, ts.digest(), &wal))?;
        let resumed = ok(c.resume(doc, bytes))?.encode();
        ensure!(resumed == reference, "{point:?} resumed to a different result");
    }

    let mut cuts = 0usize;
    for seed in 0..50u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let path = dir.path().join(format!("torn-{seed}.wal"));
        {
            let mut log = ok(WalLog::open(&path))?;
            let mut open = Vec::new();
            for _ in 0..rng.gen_range(1..30) {
                if open.is_empty() || rng.gen_bool(0.6) {
                    open.push(ok(log.begin("s", rng.gen()))?);
                } else {
                    let id = open.swap_remove(rng.gen_range(0..open.len()));
                    ok(log.commit(id))?;
                }
            }
        }
        let full = ok(std::fs::read(&path))?;
        for cut in 0..=full.len() {
            ensure!(recover_bytes(&full[..cut]).is_ok(), "seed {seed}: recovery failed at byte {cut}");
            cuts += 1;
        }
    }
    Ok(format!("cap at {MAX_UNCOMMITTED}, {} crash points replayed, {cuts} truncations recovered", points.len()))
}

fn self_healing() -> Outcome {
    let pc = PipelineConfig::default();
    let config = fast(ClusterConfig::isolated()).with_pipeline(pc.clone());
    let cluster = ok(Cluster::build(config, &[("n1", &[TierType::Dst, TierType::Gmt, TierType::Dgt])]))?;
    let gmt = cluster.gmt();
    ok(gmt.register_node(NodeDescriptor::new("n2", "inproc://n2")))?;
    let main = ok(gmt.allocate_tier("n2", TierType::Dwt))?;
    let pre = ok(gmt.allocate_tier("n2", TierType::Dwt))?;
    let standby = ok(gmt.allocate_tier("n2", TierType::Dwt))?;
    let others: Vec<String> = marf::STAGES.iter().filter(|s| **s != PREPROCESS).map(|s| s.to_string()).collect();
    ok(gmt.configure_tier(&main, Some(others)))?;
    ok(gmt.configure_tier(&pre, Some(vec![PREPROCESS.to_owned()])))?;
    ok(gmt.configure_tier(&standby, Some(vec![])))?;
    ok(gmt.set_plan(ReplicaPlan::new().with_stage(PREPROCESS, StageReplicas::new(&[pre.as_str()], &[standby.as_str()], 1))))?;
    ok(gmt.start_node("n2"))?;

    let dir = ok(tempfile::tempdir())?;
    let client = pipeline_client(&cluster, &pc, &dir)?;
    let ts = training(&pc);
    for (i, (doc, bytes)) in corpus(10).iter().enumerate() {
        if i == 3 {
            ok(cluster.kill_worker(&pre))?;
        }
        let got = ok(client.process_document(doc, bytes))?;
        ensure!(got.encode() == ok(pc.run_local(doc, bytes, &ts))?.encode(), "{doc} differs from the local run");
    }
    thread::sleep(Duration::from_millis(300));
    let heals = cluster.events().of_kind(EventKind::HealingAction);
    ensure!(heals.len() == 1, "{} healing actions", heals.len());
    ensure!(heals[0].detail["promoted"] == standby.as_str(), "promoted {}", heals[0].detail["promoted"]);
    Ok(format!("10/10 documents, one healing action promoting {standby} for {pre}"))
}

fn self_protection() -> Outcome {
    let key = MacKey::from_secret("instance");
    let guard = Guard::new(key.clone());
    let mut rng = StdRng::seed_from_u64(2024);
    let mut corrupted = BTreeSet::new();
    let mut rejected = BTreeSet::new();
    let indices: BTreeSet<usize> = rand::seq::index::sample(&mut rng, 10_000, 100).into_iter().collect();
    for i in 0..10_000usize {
        let payload: Vec<u8> = (0..rng.gen_range(1..128)).map(|_| rng.gen()).collect();
        let mut env = TransportEnvelope::seal(EnvelopeKind::Demand, rng.gen(), payload, &key);
        if indices.contains(&i) {
            corrupted.insert(i);
            let at = rng.gen_range(0..32 + env.payload.len());
            let bit = 1u8 << rng.gen_range(0..8);
            if at < 32 {
                env.signature[at] ^= bit;
            } else {
                env.payload[at - 32] ^= bit;
            }
        }
        if !guard.admit(&env, |_| ()).accepted() {
            rejected.insert(i);
        }
    }
    let false_accepts = corrupted.difference(&rejected).count();
    let false_rejects = rejected.difference(&corrupted).count();
    ensure!(false_accepts == 0 && false_rejects == 0, "{false_accepts} false accepts, {false_rejects} false rejects");
    Ok(format!("{} of 10000 rejected, exactly the corrupted set", rejected.len()))
}

struct Rigged {
    name: &'static str,
    latency: Duration,
}

impl Probe for Rigged {
    fn name(&self) -> &str {
        self.name
    }

    fn round_trip(&self) -> Result<(), String> {
        thread::sleep(self.latency);
        Ok(())
    }
}

fn rigged(a: (&'static str, u64), b: (&'static str, u64)) -> Selector {
    Selector::new(vec![
        Box::new(Rigged { name: a.0, latency: Duration::from_millis(a.1) }),
        Box::new(Rigged { name: b.0, latency: Duration::from_millis(b.1) }),
    ])
}

fn self_optimization() -> Outcome {
    let mut sel = rigged(("slow", 50), ("fast", 5));
    let picks: Vec<String> = (0..8).map(|r| sel.round(r).unwrap()).collect();
    let settled = picks.iter().position(|p| p == "fast");
    ensure!(settled.is_some_and(|s| s < 3), "picks {picks:?}");
    ensure!(picks[settled.unwrap()..].iter().all(|p| p == "fast"), "unstable picks {picks:?}");

    let mut stats = ProbeStats::default();
    stats.record("incumbent", 10.0, 0);
    stats.record("challenger", 9.0, 0);
    let kept = ok(optimize_select(&stats, Some("incumbent"), &[]))?;
    ensure!(kept == "incumbent", "switched to {kept}");

    let mut sel = rigged(("ten", 10), ("nine", 9));
    let picks: Vec<String> = (0..6).map(|r| sel.round(r).unwrap()).collect();
    ensure!(picks.iter().all(|p| *p == picks[0]), "flapping between near-equal transports {picks:?}");
    Ok(format!("settled on fast after {} round(s); 9 ms challenger does not displace 10 ms incumbent", settled.unwrap() + 1))
}

fn nearest_mean_oracle() -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(5);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centers = [(1, [0.0, 0.0]), (2, [2.0, 1.0])];
    let points: Vec<(i64, [f64; 2])> = (0..200)
        .map(|i| {
            let (c, m) = centers[i % 2];
            (c, [m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)])
        })
        .collect();
    let mut ts = TrainingSet::new();
    for (c, p) in &points {
        ok(ts.train(*c, &FeatureVector::new(p.to_vec())))?;
    }
    let mean = |class: i64| {
        let pts: Vec<_> = points.iter().filter(|(c, _)| *c == class).map(|(_, p)| p).collect();
        let n = pts.len() as f64;
        [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
    };
    let (m1, m2) = (mean(1), mean(2));
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut agree = 0;
    for (_, p) in &points {
        let expected = if d2(p, &m1) <= d2(p, &m2) { 1 } else { 2 };
        if ok(classify_distance(&FeatureVector::new(p.to_vec()), &ts))?.best() == Some(expected) {
            agree += 1;
        }
    }
    Ok(agree)
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../pipeline/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn pipeline_math() -> Outcome {
    let agree = nearest_mean_oracle()?;
    ensure!(agree == 200, "{agree}/200 decisions agree");

    // every hidden neuron sums three inputs of weight 0.42 against 0.5,
    // the output neuron three of weight 0.56 against 1.0
    let cfg = ok(parse_network(&fixture("neural_network.xml")))?;
    let shape = |n: &Neuron, w: f64, t: f64| n.thresh == t && n.inputs.len() == 3 && n.inputs.iter().all(|s| s.weight == w);
    ensure!(cfg.layers[1].neurons.iter().all(|n| shape(n, 0.42, 0.5)), "hidden layer differs from the reference");
    ensure!(cfg.layers[2].neurons.iter().all(|n| shape(n, 0.56, 1.0)), "output layer differs from the reference");
    let hidden_fires = 3.0 * 0.42 >= 0.5;
    let output_fires = hidden_fires && 3.0 * 0.56 >= 1.0;
    let expected = if output_fires { Ok(1) } else { Err(PipelineError::NoFire) };
    let got = classify_network(&[1.0; 5], &cfg);
    ensure!(got == expected, "network gave {got:?}, hand pass {expected:?}");

    let mut rng = StdRng::seed_from_u64(11);
    let vecs: Vec<Vec<f64>> = (0..1000).map(|_| (0..6).map(|_| rng.gen_range(-1e3..1e3)).collect()).collect();
    let mut ts = TrainingSet::new();
    for v in &vecs {
        ok(ts.train(1, &FeatureVector::new(v.clone())))?;
    }
    let mut worst = 0.0f64;
    for d in 0..6 {
        let batch = vecs.iter().map(|v| v[d]).sum::<f64>() / vecs.len() as f64;
        worst = worst.max((ts.classes[&1].mean[d] - batch).abs() / batch.abs().max(f64::MIN_POSITIVE));
    }
    ensure!(worst <= 1e-9, "streaming mean off by {worst:e} relative");
    Ok(format!("200/200 nearest-mean agreement, network fires class 1, mean error {worst:.1e}"))
}

fn serialization() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut ts = TrainingSet::new();
    for i in 0..100 {
        let v: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 1e3 - 5e2).collect();
        ok(ts.train(i % 7, &FeatureVector::new(v)))?;
    }
    for mode in [DumpMode::Binary, DumpMode::GzipBinary, DumpMode::CsvText] {
        let mut out = Vec::new();
        ok(dump(&ts, mode, &mut out))?;
        let back = ok(restore(mode, &mut out.as_slice()))?;
        ensure!(back == ts, "{mode} round trip differs");
    }
    for name in ["SQL", "XML", "HTML"] {
        let mode: DumpMode = ok(name.parse())?;
        let want = Err(PipelineError::UnsupportedDumpMode(name.into()));
        ensure!(dump(&ts, mode, &mut Vec::new()) == want, "{name} dump not refused");
        ensure!(restore(mode, &mut [].as_slice()).map(|_| ()) == want, "{name} restore not refused");
    }
    Ok("BINARY, GZIP_BINARY, CSV_TEXT round trip; SQL, XML, HTML refused".into())
}

fn grammar_fuzz() -> Result<usize, String> {
    let words = ["start", "stop", "allocate", "deallocate", "save", "load", "status", "node", "network", "GMT", "DWT", "DST", "DGT", "N1", "T1", "0", "7", "-1", "f.json"];
    let mut rng = StdRng::seed_from_u64(13);
    let mut accepted = 0;
    for _ in 0..1000 {
        let line: String = if rng.gen_bool(0.5) {
            (0..rng.gen_range(0..7)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        } else {
            (0..rng.gen_range(0..40)).map(|_| char::from_u32(rng.gen_range(0..0x2000)).unwrap_or('?')).collect()
        };
        let parsed = catch_unwind(|| parse_command(&line)).map_err(|_| format!("parser panicked on {line:?}"))?;
        if let Ok(c) = parsed {
            ensure!(parse_command(&c.to_string()).as_ref() == Ok(&c), "{line:?} does not print back");
            accepted += 1;
        }
    }
    Ok(accepted)
}

fn three_node_service() -> Result<(Arc<Manager>, eduction_mgmt::ServiceHandle), String> {
    let layout: &[(&str, &[TierType])] = &[
        ("n1", &[TierType::Dst, TierType::Gmt, TierType::Dgt]),
        ("n2", &[TierType::Dwt]),
        ("n3", &[TierType::Dwt]),
    ];
    let manager = Manager::new(ok(Cluster::build(fast(ClusterConfig::isolated()), layout))?);
    let handle = ok(serve(manager.clone(), "127.0.0.1:0"))?;
    Ok((manager, handle))
}

fn cli_api_equivalence() -> Result<(), String> {
    let (cli_mgr, cli_handle) = three_node_service()?;
    let (api_mgr, api_handle) = three_node_service()?;
    let dir = ok(tempfile::tempdir())?;
    let cfg = dir.path().join("cli.config");
    ok(std::fs::write(&cfg, format!("mgmt.url={}\n", cli_handle.url())))?;
    let cli = |line: &str| -> Result<Value, String> {
        let out = ok(std::process::Command::new(env!("CARGO_BIN_EXE_eduction-rt"))
            .args(line.split_whitespace())
            .env("EDUCTION_CONFIG", &cfg)
            .output())?;
        ensure!(out.status.success(), "`{line}` failed: {}", String::from_utf8_lossy(&out.stderr));
        ok(serde_json::from_slice(&out.stdout))
    };
    let api = Client::new(&api_handle.url());

    let a = cli("allocate n2 DWT 2")?;
    let b: Value = ok(api.post("/tiers", &json!({"node_id": "n2", "tier_type": "DWT", "count": 2})))?;
    ensure!(a == b, "allocation outcomes differ: {a} vs {b}");
    let first = a["tier_ids"][0].as_str().unwrap_or_default().to_owned();
    cli("stop node n3")?;
    let _: Value = ok(api.post("/nodes/n3/stop", &json!({})))?;
    cli(&format!("deallocate n2 DWT {first}"))?;
    let _: Value = ok(api.delete(&format!("/tiers/{first}")))?;
    cli("start node n3")?;
    let _: Value = ok(api.post("/nodes/n3/start", &json!({})))?;
    cli("allocate n3 DWT 1")?;
    let _: Value = ok(api.post("/tiers", &json!({"node_id": "n3", "tier_type": "DWT"})))?;

    let via_cli = NetworkFile::capture(cli_mgr.cluster().gmt()).to_json();
    let via_api = NetworkFile::capture(api_mgr.cluster().gmt()).to_json();
    ensure!(via_cli == via_api, "snapshots differ:\n{via_cli}\n{via_api}");
    Ok(())
}

fn command_grammar() -> Outcome {
    let start = ok(parse_command("start GMT GMTConfigFile.config"))?;
    ensure!(start == Command::StartGmt { file: "GMTConfigFile.config".into() }, "{start:?}");
    let dealloc = ok(parse_command("deallocate N1 DWT T1 T2"))?;
    let want = Command::Deallocate {
        node_id: "N1".into(),
        tier_type: TierType::Dwt,
        tier_ids: vec!["T1".into(), "T2".into()],
    };
    ensure!(dealloc == want, "{dealloc:?}");
    let accepted = grammar_fuzz()?;
    cli_api_equivalence()?;
    Ok(format!("reference commands parse, 1000 fuzz inputs without panic ({accepted} accepted), CLI and API snapshots equal"))
}

fn concurrency_oracle() -> Outcome {
    let mut calls = 0;
    for seed in 0..1000 {
        let (demands, history) = history::record(seed);
        calls += history.len();
        ensure!(history::linearizable(demands, &history), "seed {seed} is not linearizable");
    }
    Ok(format!("1000 histories ({calls} operations) linearizable"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("eductive correctness", eductive_correctness),
        ("memoization", memoization),
        ("distribution transparency", distribution_transparency),
        ("round-robin fairness", round_robin_fairness),
        ("broker failover", broker_failover),
        ("lease redelivery", lease_redelivery),
        ("write-ahead log", write_ahead_log),
        ("self-healing", self_healing),
        ("self-protection", self_protection),
        ("self-optimization", self_optimization),
        ("pipeline math", pipeline_math),
        ("serialization", serialization),
        ("command grammar", command_grammar),
        ("concurrency oracle", concurrency_oracle),
    ];
    std::panic::set_hook(Box::new(|_| ()));
    let mut report = BTreeMap::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let took = started.elapsed();
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(e) => ("FAIL", e.as_str()),
        };
        println!("{verdict} {:>2} {name}: {detail} [{took:.2?}]", i + 1);
        report.insert(i + 1, outcome.is_ok());
    }
    let passed = report.values().filter(|p| **p).count();
    println!("acceptance: {passed}/{} passed", report.len());
    if passed < report.len() {
        std::process::exit(1);
    }
}
