mod common;

use std::time::Duration;

use eduction_runtime::{
    Cluster, ClusterConfig, EventKind, NodeDescriptor, NodeStatus, RuntimeError, TierState, TierType,
};

use common::*;

#[test]
fn nodes_are_registered_once() {
    let cluster = Cluster::new(fast(ClusterConfig::isolated()));
    for n in ["n1", "n2", "n3"] {
        cluster.gmt().register_node(NodeDescriptor::new(n, &format!("host-{n}:7000"))).unwrap();
    }
    assert!(matches!(
        cluster.gmt().register_node(NodeDescriptor::new("n2", "elsewhere:1")),
        Err(RuntimeError::DuplicateNodeId(id)) if id == "n2"
    ));
    assert_eq!(cluster.gmt().snapshot().nodes.len(), 3);
    assert_eq!(cluster.events().of_kind(EventKind::NodeRegistered).len(), 3);
}

#[test]
fn allocation_and_deallocation_keep_a_route() {
    let cluster = single_node(fast(ClusterConfig::isolated()).with_hamming(), 3);
    let gmt = cluster.gmt();
    let extra = gmt.allocate_tier("n1", TierType::Dwt).unwrap();
    assert_eq!(gmt.snapshot().tiers[&extra].state, TierState::Allocated);
    assert!(matches!(gmt.allocate_tier("nx", TierType::Dwt), Err(RuntimeError::UnknownNode(_))));

    let dwts: Vec<String> = gmt.snapshot().started_of(TierType::Dwt).iter().map(|t| t.tier_id.clone()).collect();
    assert_eq!(dwts.len(), 3);
    assert_eq!(gmt.deallocate_tier("n1", TierType::Dwt, &dwts[..2], false).unwrap(), 2);
    assert_eq!(gmt.snapshot().started_of(TierType::Dwt).len(), 1);
    assert!(cluster.dwt(&dwts[0]).is_none());
    assert_eq!(cluster.events().of_kind(EventKind::TierDeallocated).len(), 2);

    let dst = gmt.snapshot().started_of(TierType::Dst)[0].tier_id.clone();
    assert!(matches!(
        gmt.deallocate_tier("n1", TierType::Dst, &[dst.clone()], false),
        Err(RuntimeError::LastRouteViolation(TierType::Dst))
    ));
    assert!(matches!(
        gmt.deallocate_tier("n1", TierType::Dwt, &[dst.clone()], false),
        Err(RuntimeError::TierTypeMismatch { .. })
    ));
    assert!(matches!(
        gmt.deallocate_tier("n1", TierType::Dwt, &["T999".to_owned()], false),
        Err(RuntimeError::UnknownTier(_))
    ));
    assert_eq!(gmt.deallocate_tier("n1", TierType::Dst, &[dst], true).unwrap(), 1);
}

#[test]
fn stopping_and_starting_a_node() {
    let cluster = single_node(fast(ClusterConfig::isolated()).with_hamming(), 1);
    cluster.register_program(eduction_runtime::HAMMING_PROGRAM).unwrap();
    cluster.gmt().stop_node("n1").unwrap();
    assert!(cluster.gmt().snapshot().tiers.values().all(|t| t.state == TierState::Stopped));
    assert!(cluster.dgt().is_err());
    cluster.gmt().start_node("n1").unwrap();
    let ctx = eduction_core::Context::empty().with("n", 7);
    assert_eq!(cluster.dgt().unwrap().evaluate_int("hamming", "hamming", &ctx).unwrap(), 8);
}

#[test]
fn killed_node_is_marked_down() {
    let cluster = Cluster::build(
        fast(ClusterConfig::isolated()).with_hamming(),
        &[("n1", &[TierType::Dst, TierType::Gmt, TierType::Dgt]), ("n2", &[TierType::Dwt])],
    )
    .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    assert!(cluster.events().of_kind(EventKind::NodeDown).is_empty());
    cluster.kill_node("n2").unwrap();
    assert!(wait_until(Duration::from_secs(3), || {
        cluster.gmt().snapshot().nodes["n2"].status == NodeStatus::Down
    }));
    let down = cluster.events().of_kind(EventKind::NodeDown);
    assert_eq!(down.len(), 1);
    assert_eq!(down[0].detail["node_id"], "n2");
    assert_eq!(cluster.gmt().snapshot().nodes["n1"].status, NodeStatus::Up);
}

#[test]
fn event_sequence_is_gap_free() {
    let cluster = single_node(fast(ClusterConfig::isolated()).with_hamming(), 2);
    let events = cluster.events().since(0);
    assert!(!events.is_empty());
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
}
