mod common;

use std::sync::Arc;

use eduction_core::{Claim, Context, Demand, DemandKind, DemandState, DemandStore, StoreConfig, StoreError};
use proptest::prelude::*;

use common::{linearizable, record, Call, Model, Op, Ret};

fn demand(tag: i64) -> Demand {
    Demand::new(DemandKind::Procedural, "p", Context::empty().with("k", tag), vec![]).unwrap()
}

#[test]
fn concurrent_histories_are_linearizable() {
    for seed in 0..300 {
        let (demands, calls) = record(seed);
        assert!(linearizable(demands, &calls), "seed {seed}: {calls:#?}");
    }
}

#[test]
fn checker_rejects_an_impossible_history() {
    // two sequential deposits of one demand cannot both create it
    let calls = vec![
        Call { thread: 0, op: Op::Deposit(0), ret: Ret::Deposited { created: true, computed: None }, invoked: 0, returned: 1 },
        Call { thread: 1, op: Op::Deposit(0), ret: Ret::Deposited { created: true, computed: None }, invoked: 2, returned: 3 },
    ];
    assert!(!linearizable(1, &calls));
    // overlapping lookups may see the value before or after the completion
    let calls = vec![
        Call { thread: 0, op: Op::Deposit(0), ret: Ret::Deposited { created: true, computed: None }, invoked: 0, returned: 1 },
        Call { thread: 0, op: Op::Complete(0, 7), ret: Ret::Stored, invoked: 2, returned: 5 },
        Call { thread: 1, op: Op::Lookup(0), ret: Ret::Found(Some(7)), invoked: 3, returned: 4 },
        Call { thread: 1, op: Op::Lookup(0), ret: Ret::Found(None), invoked: 6, returned: 7 },
    ];
    assert!(!linearizable(1, &calls));
}

#[test]
fn concurrent_deposits_of_one_signature_create_one_entry() {
    let store = Arc::new(DemandStore::new(StoreConfig::new(1000, 16).unwrap()));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let store = store.clone();
            std::thread::spawn(move || store.deposit(demand(1)).unwrap())
        })
        .collect();
    let deposits: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(deposits.iter().filter(|d| d.created).count(), 1);
    assert!(deposits.iter().all(|d| d.global_id == deposits[0].global_id));
    assert_eq!(store.entries(None).len(), 1);
}

#[test]
fn expired_lease_returns_the_entry_to_pending() {
    let store = DemandStore::new(StoreConfig::new(100, 16).unwrap());
    let gid = store.deposit(demand(1)).unwrap().global_id;
    assert!(matches!(store.claim(gid, "a", 0).unwrap(), Claim::Claimed(_)));
    assert!(store.expire_leases(100).is_empty());
    assert_eq!(store.expire_leases(101), vec![gid]);
    assert_eq!(store.get(gid).unwrap().state, DemandState::Pending);
    assert!(matches!(store.claim(gid, "b", 150).unwrap(), Claim::Claimed(_)));
    assert!(matches!(store.complete(gid, "a", vec![1], 160), Err(StoreError::NotOwner { .. })));
    store.complete(gid, "b", vec![1], 170).unwrap();
    assert_eq!(store.stats().redeliveries, 1);
}

proptest! {
    #[test]
    fn one_value_per_signature(tags in proptest::collection::vec(0i64..6, 1..40), values in proptest::collection::vec(any::<u8>(), 40)) {
        let store = DemandStore::new(StoreConfig::new(1000, 64).unwrap());
        let mut first = std::collections::HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            let gid = store.deposit(demand(*t)).unwrap().global_id;
            let v = vec![values[i]];
            match store.complete(gid, "w", v.clone(), i as u64) {
                Ok(()) => { first.entry(*t).or_insert(v); }
                Err(StoreError::InconsistentResult(_)) => prop_assert_ne!(&first[t], &v),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            prop_assert_eq!(store.lookup(&demand(*t).signature(), i as u64), Some(first[t].clone()));
        }
        let computed = store.entries(Some(DemandState::Computed));
        prop_assert_eq!(computed.len(), first.len());
    }

    #[test]
    fn model_agrees_with_a_single_threaded_store(ops in proptest::collection::vec((0u8..5, 0usize..4, any::<bool>()), 1..40)) {
        let store = DemandStore::new(StoreConfig::new(u64::MAX / 4, 64).unwrap());
        let mut model = Model::new(4);
        let mut gids = std::collections::HashMap::new();
        for (kind, d, alt) in ops {
            let op = match kind {
                1 => Op::Checkout,
                2 if gids.contains_key(&d) => Op::Claim(d),
                3 if gids.contains_key(&d) => Op::Complete(d, if alt { 50 } else { d as u8 }),
                4 => Op::Lookup(d),
                _ => Op::Deposit(d),
            };
            let got = match op {
                Op::Deposit(d) => {
                    let r = store.deposit(demand(d as i64)).unwrap();
                    gids.insert(d, r.global_id);
                    Ret::Deposited { created: r.created, computed: r.already_computed.map(|v| v[0]) }
                }
                Op::Checkout => Ret::CheckedOut(store.checkout("w0", 0).map(|c| {
                    (0..4).find(|d| demand(*d as i64).signature() == c.demand.signature()).unwrap()
                })),
                Op::Claim(d) => match store.claim(gids[&d], "w0", 0).unwrap() {
                    Claim::Claimed(_) => Ret::Claimed,
                    Claim::Busy { .. } => Ret::Busy(0),
                    Claim::Computed(v) => Ret::AlreadyComputed(v[0]),
                },
                Op::Complete(d, v) => match store.complete(gids[&d], "w0", vec![v], 0) {
                    Ok(()) => Ret::Stored,
                    Err(StoreError::InconsistentResult(_)) => Ret::Inconsistent,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                },
                Op::Lookup(d) => Ret::Found(store.lookup(&demand(d as i64).signature(), 0).map(|v| v[0])),
            };
            prop_assert_eq!(got, model.step(0, op));
        }
    }
}
