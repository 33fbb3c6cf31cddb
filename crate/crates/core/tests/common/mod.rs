//! Concurrent store histories and a linearizability check against a
//! sequential model of the store.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier};

use eduction_core::{Claim, Context, Demand, DemandKind, DemandSignature, DemandStore, StoreConfig, StoreError};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Deposit(usize),
    Checkout,
    Claim(usize),
    Complete(usize, u8),
    Lookup(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ret {
    Deposited { created: bool, computed: Option<u8> },
    CheckedOut(Option<usize>),
    Claimed,
    Busy(usize),
    AlreadyComputed(u8),
    Stored,
    Inconsistent,
    NotOwner,
    Found(Option<u8>),
}

#[derive(Debug, Clone)]
pub struct Call {
    pub thread: usize,
    pub op: Op,
    pub ret: Ret,
    pub invoked: u64,
    pub returned: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Absent,
    Pending(u32),
    Processing(usize),
    Computed(u8),
}

/// The store as a plain sequential state machine over demand indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Model {
    slots: Vec<Slot>,
    next_seq: u32,
}

impl Model {
    pub fn new(demands: usize) -> Self {
        Model { slots: vec![Slot::Absent; demands], next_seq: 0 }
    }

    /// Applies `op` issued by `thread`, returning what the store must answer.
    pub fn step(&mut self, thread: usize, op: Op) -> Ret {
        match op {
            Op::Deposit(d) => match self.slots[d] {
                Slot::Absent => {
                    self.slots[d] = Slot::Pending(self.next_seq);
                    self.next_seq += 1;
                    Ret::Deposited { created: true, computed: None }
                }
                Slot::Computed(v) => Ret::Deposited { created: false, computed: Some(v) },
                _ => Ret::Deposited { created: false, computed: None },
            },
            Op::Checkout => {
                let oldest = (0..self.slots.len())
                    .filter_map(|d| match self.slots[d] {
                        Slot::Pending(s) => Some((s, d)),
                        _ => None,
                    })
                    .min();
                if let Some((_, d)) = oldest {
                    self.slots[d] = Slot::Processing(thread);
                }
                Ret::CheckedOut(oldest.map(|(_, d)| d))
            }
            Op::Claim(d) => match self.slots[d] {
                Slot::Computed(v) => Ret::AlreadyComputed(v),
                Slot::Processing(owner) => Ret::Busy(owner),
                Slot::Pending(_) => {
                    self.slots[d] = Slot::Processing(thread);
                    Ret::Claimed
                }
                Slot::Absent => unreachable!("claims follow the thread's own deposit"),
            },
            Op::Complete(d, v) => match self.slots[d] {
                Slot::Computed(old) if old == v => Ret::Stored,
                Slot::Computed(_) => Ret::Inconsistent,
                Slot::Processing(owner) if owner != thread => Ret::NotOwner,
                Slot::Processing(_) | Slot::Pending(_) => {
                    self.slots[d] = Slot::Computed(v);
                    Ret::Stored
                }
                Slot::Absent => unreachable!("completions follow the thread's own deposit"),
            },
            Op::Lookup(d) => Ret::Found(match self.slots[d] {
                Slot::Computed(v) => Some(v),
                _ => None,
            }),
        }
    }
}

fn demand(d: usize) -> Demand {
    Demand::new(DemandKind::Procedural, "history", Context::empty().with("d", d as i64), Vec::new()).unwrap()
}

fn worker(thread: usize) -> String {
    format!("w{thread}")
}

/// Runs a random concurrent history for `seed` against a fresh store.
pub fn record(seed: u64) -> (usize, Vec<Call>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let threads = rng.gen_range(1..=4);
    let demands = rng.gen_range(1..=16);
    let plans: Vec<(u64, usize)> = (0..threads).map(|_| (rng.gen(), rng.gen_range(2..=8))).collect();

    let store = Arc::new(DemandStore::new(StoreConfig::new(u64::MAX / 4, 1024).unwrap()));
    let by_sig: Arc<HashMap<DemandSignature, usize>> =
        Arc::new((0..demands).map(|d| (demand(d).signature(), d)).collect());
    let clock = Arc::new(AtomicU64::new(0));
    let start = Arc::new(Barrier::new(threads));
    let handles: Vec<_> = plans
        .into_iter()
        .enumerate()
        .map(|(t, (tseed, len))| {
            let (store, by_sig, clock, start) = (store.clone(), by_sig.clone(), clock.clone(), start.clone());
            std::thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(tseed);
                let mut gids = HashMap::new();
                let mut calls = Vec::new();
                start.wait();
                for _ in 0..len {
                    let known: Vec<usize> = gids.keys().copied().collect();
                    let op = match rng.gen_range(0..5) {
                        1 => Op::Checkout,
                        2 if !known.is_empty() => Op::Claim(known[rng.gen_range(0..known.len())]),
                        3 if !known.is_empty() => {
                            let d = known[rng.gen_range(0..known.len())];
                            // mostly the canonical value, sometimes a conflicting one
                            let v = if rng.gen_bool(0.8) { d as u8 } else { d as u8 + 100 };
                            Op::Complete(d, v)
                        }
                        4 => Op::Lookup(rng.gen_range(0..demands)),
                        _ => Op::Deposit(rng.gen_range(0..demands)),
                    };
                    let invoked = clock.fetch_add(1, Ordering::SeqCst);
                    let ret = match op {
                        Op::Deposit(d) => {
                            let r = store.deposit(demand(d)).unwrap();
                            gids.insert(d, r.global_id);
                            Ret::Deposited { created: r.created, computed: r.already_computed.map(|v| v[0]) }
                        }
                        Op::Checkout => {
                            Ret::CheckedOut(store.checkout(&worker(t), 0).map(|c| by_sig[&c.demand.signature()]))
                        }
                        Op::Claim(d) => match store.claim(gids[&d], &worker(t), 0).unwrap() {
                            Claim::Claimed(_) => Ret::Claimed,
                            Claim::Busy { owner } => Ret::Busy(owner[1..].parse().unwrap()),
                            Claim::Computed(v) => Ret::AlreadyComputed(v[0]),
                        },
                        Op::Complete(d, v) => match store.complete(gids[&d], &worker(t), vec![v], 0) {
                            Ok(()) => Ret::Stored,
                            Err(StoreError::InconsistentResult(_)) => Ret::Inconsistent,
                            Err(StoreError::NotOwner { .. }) => Ret::NotOwner,
                            Err(e) => panic!("unexpected store error {e}"),
                        },
                        Op::Lookup(d) => Ret::Found(store.lookup(&demand(d).signature(), 0).map(|v| v[0])),
                    };
                    let returned = clock.fetch_add(1, Ordering::SeqCst);
                    calls.push(Call { thread: t, op, ret, invoked, returned });
                }
                calls
            })
        })
        .collect();
    let calls = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    (demands, calls)
}

/// Searches for a sequential order consistent with real time in which the
/// model reproduces every answer.
pub fn linearizable(demands: usize, calls: &[Call]) -> bool {
    assert!(calls.len() <= 64);
    let full: u64 = if calls.len() == 64 { u64::MAX } else { (1u64 << calls.len()) - 1 };
    let mut seen = HashSet::new();
    search(calls, 0, full, Model::new(demands), &mut seen)
}

fn search(calls: &[Call], done: u64, full: u64, model: Model, seen: &mut HashSet<(u64, Model)>) -> bool {
    if done == full {
        return true;
    }
    if !seen.insert((done, model.clone())) {
        return false;
    }
    let open = |i: usize| done & (1 << i) == 0;
    let horizon = (0..calls.len()).filter(|&i| open(i)).map(|i| calls[i].returned).min().unwrap();
    for i in (0..calls.len()).filter(|&i| open(i) && calls[i].invoked < horizon) {
        let mut next = model.clone();
        if next.step(calls[i].thread, calls[i].op) == calls[i].ret
            && search(calls, done | (1 << i), full, next, seen)
        {
            return true;
        }
    }
    false
}
