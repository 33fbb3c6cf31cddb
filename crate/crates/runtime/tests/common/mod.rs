#![allow(dead_code)]

use std::time::{Duration, Instant};

use eduction_pipeline::sample::to_wav_pcm16;
use eduction_pipeline::{PipelineConfig, TrainingSet};
use eduction_runtime::{Cluster, ClusterConfig, TierType};

use TierType::{Dgt, Dst, Dwt, Gmt};

/// The first `n` numbers of the form 2^a 3^b 5^c, by enumeration.
pub fn hamming_oracle(n: usize) -> Vec<i64> {
    let mut out = Vec::new();
    let limit: i64 = 1 << 40;
    let mut a = 1i64;
    while a <= limit {
        let mut b = a;
        while b <= limit {
            let mut c = b;
            while c <= limit {
                out.push(c);
                c *= 5;
            }
            b *= 3;
        }
        a *= 2;
    }
    out.sort_unstable();
    out.dedup();
    out.truncate(n);
    out
}

pub fn fast(mut config: ClusterConfig) -> ClusterConfig {
    config.heartbeat = Duration::from_millis(50);
    config.rpc_timeout = Duration::from_millis(500);
    config.eval_timeout = Duration::from_secs(20);
    config.store = eduction_core::StoreConfig::new(300, 10_000).unwrap();
    config
}

/// One node hosting the store, manager, one generator and `workers` DWTs.
pub fn single_node(config: ClusterConfig, workers: usize) -> Cluster {
    let mut tiers = vec![Dst, Gmt, Dgt];
    tiers.extend(std::iter::repeat(Dwt).take(workers));
    Cluster::build(config, &[("n1", &tiers)]).unwrap()
}

pub fn three_nodes(config: ClusterConfig) -> Cluster {
    Cluster::build(
        config,
        &[("n1", &[Dst, Gmt]), ("n2", &[Dgt, Dwt]), ("n3", &[Dwt, Dwt])],
    )
    .unwrap()
}

/// A tone of `freq` Hz with a little amplitude shaping, as 16-bit WAV.
pub fn tone(freq: f64, amp: f64, len: usize) -> Vec<u8> {
    let rate = 8000u32;
    let values: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / rate as f64;
            amp * (2.0 * std::f64::consts::PI * freq * t).sin() * (1.0 - 0.3 * i as f64 / len as f64)
        })
        .collect();
    to_wav_pcm16(&values, rate).unwrap()
}

pub fn corpus(n: usize) -> Vec<(String, Vec<u8>)> {
    (0..n)
        .map(|i| (format!("doc-{i}"), tone(150.0 + 90.0 * i as f64, 0.2 + 0.07 * i as f64, 512)))
        .collect()
}

/// Two classes: low tones and high tones.
pub fn training(config: &PipelineConfig) -> TrainingSet {
    let mut ts = TrainingSet::new();
    for (class, freqs) in [(1, [120.0, 200.0, 260.0]), (2, [900.0, 1100.0, 1300.0])] {
        for (k, f) in freqs.iter().enumerate() {
            let fv = config
                .featurize("train", &tone(*f, 0.3 + 0.2 * k as f64, 512))
                .unwrap();
            ts.train(class, &fv).unwrap();
        }
    }
    ts
}

pub fn wait_until(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    cond()
}
