//! Transport selection by measured round-trip time.

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use crate::error::ResilienceError;

pub const DEFAULT_WINDOW: usize = 16;
/// A challenger must beat the incumbent's median by this factor to win.
pub const HYSTERESIS: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStats {
    window: usize,
    samples: BTreeMap<String, VecDeque<f64>>,
    last_probe: BTreeMap<String, u64>,
}

impl Default for ProbeStats {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl ProbeStats {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            samples: BTreeMap::new(),
            last_probe: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, transport: &str, rtt_ms: f64, at: u64) {
        let w = self.samples.entry(transport.to_owned()).or_default();
        w.push_back(rtt_ms);
        while w.len() > self.window {
            w.pop_front();
        }
        self.last_probe.insert(transport.to_owned(), at);
    }

    pub fn samples(&self, transport: &str) -> Option<&VecDeque<f64>> {
        self.samples.get(transport)
    }

    pub fn last_probe(&self, transport: &str) -> Option<u64> {
        self.last_probe.get(transport).copied()
    }

    pub fn median(&self, transport: &str) -> Option<f64> {
        let w = self.samples.get(transport).filter(|w| !w.is_empty())?;
        let mut v: Vec<f64> = w.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        })
    }

    pub fn transports(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }
}

/// Picks the transport with the lowest median RTT. Ties go to the earlier
/// entry in `preference`; the incumbent keeps its place unless the winner's
/// median is below `HYSTERESIS` times its own.
pub fn optimize_select(
    stats: &ProbeStats,
    current: Option<&str>,
    preference: &[&str],
) -> Result<String, ResilienceError> {
    let rank = |name: &str| preference.iter().position(|p| *p == name).unwrap_or(usize::MAX);
    let best = stats
        .transports()
        .filter_map(|t| stats.median(t).map(|m| (t, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(rank(a.0).cmp(&rank(b.0))))
        .ok_or(ResilienceError::NoProbes)?;
    match current.and_then(|c| stats.median(c).map(|m| (c, m))) {
        Some((cur, cur_median)) if cur != best.0 && best.1 >= HYSTERESIS * cur_median => Ok(cur.to_owned()),
        _ => Ok(best.0.to_owned()),
    }
}

/// Something whose round trip can be timed.
pub trait Probe: Send + Sync {
    fn name(&self) -> &str;
    fn round_trip(&self) -> Result<(), String>;
}

/// Probes every candidate once per round and keeps the current choice.
pub struct Selector {
    probes: Vec<Box<dyn Probe>>,
    stats: ProbeStats,
    current: Option<String>,
}

impl Selector {
    pub fn new(probes: Vec<Box<dyn Probe>>) -> Self {
        Self {
            probes,
            stats: ProbeStats::default(),
            current: None,
        }
    }

    pub fn current(&self) -> Option<&str> {
        self.current.as_deref()
    }

    pub fn stats(&self) -> &ProbeStats {
        &self.stats
    }

    pub fn round(&mut self, now_ms: u64) -> Result<String, ResilienceError> {
        for p in &self.probes {
            let start = Instant::now();
            match p.round_trip() {
                Ok(()) => self.stats.record(p.name(), ms(start.elapsed()), now_ms),
                Err(e) => log::warn!("probe of {} failed: {e}", p.name()),
            }
        }
        let preference: Vec<&str> = self.probes.iter().map(|p| p.name()).collect();
        let choice = optimize_select(&self.stats, self.current.as_deref(), &preference)?;
        self.current = Some(choice.clone());
        Ok(choice)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(rows: &[(&str, &[f64])]) -> ProbeStats {
        let mut s = ProbeStats::default();
        for (name, rtts) in rows {
            for r in *rtts {
                s.record(name, *r, 0);
            }
        }
        s
    }

    #[test]
    fn lowest_median_wins() {
        let s = stats(&[("inproc", &[1.0, 1.0, 1.0]), ("tcp", &[5.0, 6.0, 5.0])]);
        assert_eq!(optimize_select(&s, None, &[]).unwrap(), "inproc");
    }

    #[test]
    fn hysteresis_keeps_incumbent() {
        let s = stats(&[("tcp", &[10.0]), ("inproc", &[9.0])]);
        assert_eq!(optimize_select(&s, Some("tcp"), &[]).unwrap(), "tcp");
        let s = stats(&[("tcp", &[10.0]), ("inproc", &[7.9])]);
        assert_eq!(optimize_select(&s, Some("tcp"), &[]).unwrap(), "inproc");
    }

    #[test]
    fn ties_follow_preference() {
        let s = stats(&[("a", &[3.0]), ("b", &[3.0])]);
        assert_eq!(optimize_select(&s, None, &["b", "a"]).unwrap(), "b");
    }

    #[test]
    fn no_probes_is_an_error() {
        assert_eq!(optimize_select(&ProbeStats::default(), None, &[]), Err(ResilienceError::NoProbes));
    }

    #[test]
    fn window_is_bounded() {
        let mut s = ProbeStats::new(4);
        for i in 0..10 {
            s.record("t", i as f64, i);
        }
        assert_eq!(s.samples("t").unwrap().len(), 4);
        assert_eq!(s.median("t"), Some(7.5));
        assert_eq!(s.last_probe("t"), Some(9));
    }
}
