use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::topology::{compute_routes, NodeKind, TopologyBuilder};

fn two_node(
    bw_bps: u64,
    delay: SimTime,
    queue: usize,
) -> (Arc<Topology>, Arc<RoutingTable>, NodeId, NodeId, LinkId) {
    let mut b = TopologyBuilder::new();
    let a = b.node("a", NodeKind::Client);
    let z = b.node("z", NodeKind::Seeder);
    b.link(a, z, bw_bps, delay, queue);
    let topo = Arc::new(b.build().unwrap());
    let routes = Arc::new(compute_routes(&topo));
    (topo, routes, a, z, LinkId(0))
}

fn sim_for(topo: &Arc<Topology>, routes: &Arc<RoutingTable>, seed: u64) -> Sim {
    Sim::new(topo.clone(), routes.clone(), EngineConfig::default(), seed)
}

/// A data-class packet that surfaces as a control dispatch on delivery, so
/// tests can observe exact arrival times.
fn probe(sim: &mut Sim, src: NodeId, dst: NodeId, size: u32) -> Packet {
    Packet {
        id: sim.take_packet_id(),
        class: PacketClass::Data,
        size,
        payload_bytes: 0,
        fingerprint: None,
        src,
        routing: Routing::Unicast {
            dst,
            route: sim.routes.route(src, dst).clone(),
            pos: 0,
        },
        body: PacketBody::Control(ControlMsg::Announce),
    }
}

fn drain(sim: &mut Sim) -> Vec<(SimTime, NodeId, AgentEvent)> {
    let mut out = Vec::new();
    while let Some((node, ev)) = sim.step() {
        out.push((sim.now(), node, ev));
    }
    out
}

#[test]
fn timers_fire_in_order_with_fifo_ties() {
    let (topo, routes, a, _, _) = two_node(1_000_000, SimTime::ZERO, 50);
    let mut sim = sim_for(&topo, &routes, 1);
    sim.set_timer(a, SimTime::ZERO, 7).unwrap();
    sim.set_timer(a, SimTime::from_secs(1), 8).unwrap();
    sim.set_timer(a, SimTime::from_secs(1), 9).unwrap();
    let got: Vec<(SimTime, u64)> = drain(&mut sim)
        .into_iter()
        .map(|(t, _, ev)| match ev {
            AgentEvent::Timer(k) => (t, k),
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert_eq!(
        got,
        vec![
            (SimTime::ZERO, 7),
            (SimTime::from_secs(1), 8),
            (SimTime::from_secs(1), 9),
        ]
    );
}

#[test]
fn scheduling_into_the_past_is_rejected() {
    let (topo, routes, a, _, _) = two_node(1_000_000, SimTime::ZERO, 50);
    let mut sim = sim_for(&topo, &routes, 1);
    sim.set_timer(a, SimTime::from_secs(2), 1).unwrap();
    drain(&mut sim);
    assert_eq!(sim.now(), SimTime::from_secs(2));
    assert_eq!(
        sim.set_timer(a, SimTime::from_secs(1), 2),
        Err(EngineError::SchedulePast)
    );
}

#[test]
fn packet_arrival_is_serialization_plus_propagation() {
    // 1250 bytes at 10 Mb/s serialize in exactly 1 ms; 20 ms propagation.
    let (topo, routes, a, z, link) = two_node(10_000_000, SimTime::from_millis(20), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    let p = probe(&mut sim, a, z, 1250);
    sim.transmit(link, Dir::Forward, p);
    let events = drain(&mut sim);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].0, SimTime::from_millis(21));
    assert_eq!(events[0].1, z);
}

#[test]
fn back_to_back_packets_space_by_one_serialization() {
    let (topo, routes, a, z, link) = two_node(10_000_000, SimTime::from_millis(20), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    let p1 = probe(&mut sim, a, z, 1250);
    let p2 = probe(&mut sim, a, z, 1250);
    sim.transmit(link, Dir::Forward, p1);
    sim.transmit(link, Dir::Forward, p2);
    let events = drain(&mut sim);
    assert_eq!(events.len(), 2);
    assert_eq!(events[0].0, SimTime::from_millis(21));
    assert_eq!(events[1].0, SimTime::from_millis(22));
}

#[test]
fn fifty_first_simultaneous_packet_is_dropped() {
    let (topo, routes, a, z, link) = two_node(10_000_000, SimTime::from_millis(20), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    for _ in 0..51 {
        let p = probe(&mut sim, a, z, 1250);
        sim.transmit(link, Dir::Forward, p);
    }
    assert_eq!(sim.link_drops(link, Dir::Forward), (1, 0));
    let events = drain(&mut sim);
    assert_eq!(events.len(), 50);
    assert!(sim.conservation_holds_exactly());
}

#[test]
fn zero_loss_drops_nothing() {
    let (topo, routes, a, z, link) = two_node(10_000_000, SimTime::ZERO, 200);
    let mut sim = sim_for(&topo, &routes, 1);
    sim.set_loss(link, Dir::Forward, 0.0).unwrap();
    for _ in 0..100 {
        let p = probe(&mut sim, a, z, 100);
        sim.transmit(link, Dir::Forward, p);
    }
    drain(&mut sim);
    assert_eq!(sim.link_drops(link, Dir::Forward), (0, 0));
}

#[test]
fn full_loss_drops_everything() {
    let (topo, routes, a, z, link) = two_node(10_000_000, SimTime::ZERO, 200);
    let mut sim = sim_for(&topo, &routes, 1);
    sim.set_loss(link, Dir::Forward, 1.0).unwrap();
    for _ in 0..100 {
        let p = probe(&mut sim, a, z, 100);
        sim.transmit(link, Dir::Forward, p);
    }
    let events = drain(&mut sim);
    assert!(events.is_empty());
    assert_eq!(sim.link_drops(link, Dir::Forward), (0, 100));
    assert!(sim.conservation_holds_exactly());
}

#[test]
fn induced_loss_matches_binomial_within_three_sigma() {
    let (topo, routes, a, z, link) = two_node(1_000_000_000, SimTime::ZERO, 20_000);
    let mut sim = sim_for(&topo, &routes, 7);
    sim.set_loss(link, Dir::Forward, 0.04).unwrap();
    for _ in 0..10_000 {
        let p = probe(&mut sim, a, z, 100);
        sim.transmit(link, Dir::Forward, p);
    }
    drain(&mut sim);
    let (_, lost) = sim.link_drops(link, Dir::Forward);
    // n=10000, p=0.04: mean 400, sigma 19.6, three sigma ~= 59.
    assert!((341..=459).contains(&lost), "lost {lost}");
}

#[test]
fn loss_rate_out_of_range_is_rejected() {
    let (topo, routes, _, _, link) = two_node(1_000_000, SimTime::ZERO, 50);
    let mut sim = sim_for(&topo, &routes, 1);
    assert_eq!(
        sim.set_loss(link, Dir::Forward, 1.5),
        Err(EngineError::RateOutOfRange)
    );
}

#[test]
fn cbr_emits_at_constant_spacing() {
    // 10% of a 2 Mb/s bottleneck with 1000-byte packets: one every 40 ms.
    let (topo, routes, a, z, link) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let cfg = EngineConfig {
        max_sim_time: SimTime::from_secs(1),
        ..EngineConfig::default()
    };
    let mut sim = Sim::new(topo.clone(), routes.clone(), cfg, 1);
    sim.start_cbr(a, z, 0.1, 1000).unwrap();
    drain(&mut sim);
    // Emissions at 0, 0.04, ..., 1.00 inclusive.
    assert_eq!(sim.ledger.dir(link, Dir::Forward).packets_total, 26);
    // Cross traffic never enters stress accounting.
    assert_eq!(sim.ledger.dir(link, Dir::Forward).stress(), None);
}

#[test]
fn zero_rate_cbr_emits_nothing() {
    let (topo, routes, a, z, link) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    sim.start_cbr(a, z, 0.0, 1000).unwrap();
    drain(&mut sim);
    assert_eq!(sim.ledger.dir(link, Dir::Forward).packets_total, 0);
}

fn flow_bytes(n: usize, seed: u64) -> Arc<Vec<u8>> {
    Arc::new(crate::chunking::synth_file_bytes(seed, n))
}

type ReceiverResult = Option<(SimTime, Vec<u8>, u64)>;
type SenderResult = Option<(SimTime, u64)>;

fn run_flow(
    sim: &mut Sim,
    src: NodeId,
    dst: NodeId,
    bytes: Arc<Vec<u8>>,
) -> (ReceiverResult, SenderResult) {
    let flow = sim.start_flow(
        src,
        dst,
        vec![FlowChunk {
            file: FileId(0),
            offset: 0,
            bytes,
        }],
    );
    let mut received = None;
    let mut sent = None;
    while let Some((_, ev)) = sim.step() {
        if let AgentEvent::FlowDone { flow: f, outcome } = ev {
            assert_eq!(f, flow);
            match outcome {
                FlowOutcome::Received { chunks, retx, .. } => {
                    received = Some((sim.now(), chunks.into_iter().next().unwrap().bytes, retx));
                }
                FlowOutcome::Sent { retx } => sent = Some((sim.now(), retx)),
                other => panic!("unexpected outcome {other:?}"),
            }
        }
    }
    (received, sent)
}

#[test]
fn lossless_flow_delivers_in_order_without_retransmission() {
    let (topo, routes, a, z, _) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    let bytes = flow_bytes(5000, 3);
    let (received, sent) = run_flow(&mut sim, a, z, bytes.clone());
    let (_, got, retx) = received.unwrap();
    assert_eq!(got, *bytes);
    assert_eq!(retx, 0);
    assert_eq!(sent.unwrap().1, 0);
}

#[test]
fn lossy_flow_recovers_with_retransmissions() {
    let (topo, routes, a, z, link) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let mut sim = sim_for(&topo, &routes, 11);
    sim.set_loss(link, Dir::Forward, 0.5).unwrap();
    let bytes = flow_bytes(20_000, 4);
    let (received, sent) = run_flow(&mut sim, a, z, bytes.clone());
    let (_, got, retx) = received.unwrap();
    assert_eq!(got, *bytes);
    assert!(retx > 0, "50% loss must force retransmissions");
    assert!(sent.is_some());
}

#[test]
fn megabyte_flow_finishes_near_the_serialization_bound() {
    // 1 MiB over an idle 2 Mb/s bottleneck: 8 * 2^20 / 2e6 = 4.194 s nominal,
    // within 10% once headers and acks are counted.
    let (topo, routes, a, z, _) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    let bytes = flow_bytes(1 << 20, 5);
    let (received, _) = run_flow(&mut sim, a, z, bytes);
    let (finish, got, _) = received.unwrap();
    assert_eq!(got.len(), 1 << 20);
    let nominal = 4.194304;
    let actual = finish.as_secs_f64();
    assert!(
        (actual - nominal).abs() / nominal < 0.10,
        "finish {actual} vs nominal {nominal}"
    );
}

#[test]
fn flow_goodput_never_exceeds_bottleneck() {
    let (topo, routes, a, z, _) = two_node(2_000_000, SimTime::from_millis(5), 50);
    let mut sim = sim_for(&topo, &routes, 2);
    let n = 200_000usize;
    let (received, _) = run_flow(&mut sim, a, z, flow_bytes(n, 6));
    let (finish, _, _) = received.unwrap();
    let goodput = n as f64 * 8.0 / finish.as_secs_f64();
    assert!(goodput <= 2_000_000.0, "goodput {goodput}");
}

#[test]
fn cancelled_flow_notifies_both_ends() {
    let (topo, routes, a, z, _) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let mut sim = sim_for(&topo, &routes, 1);
    let flow = sim.start_flow(
        a,
        z,
        vec![FlowChunk {
            file: FileId(0),
            offset: 0,
            bytes: flow_bytes(100_000, 7),
        }],
    );
    sim.cancel_flow(flow);
    let outcomes: Vec<String> = drain(&mut sim)
        .into_iter()
        .filter_map(|(_, _, ev)| match ev {
            AgentEvent::FlowDone { outcome, .. } => Some(format!("{outcome:?}")),
            _ => None,
        })
        .collect();
    assert_eq!(outcomes.len(), 2);
    assert!(outcomes[0].contains("SendCancelled"));
    assert!(outcomes[1].contains("RecvCancelled"));
}

#[test]
fn identical_seeds_produce_identical_traces() {
    let mk = |seed: u64| {
        let (topo, routes, a, z, link) = two_node(2_000_000, SimTime::from_millis(1), 20);
        let mut sim = sim_for(&topo, &routes, seed);
        sim.set_loss(link, Dir::Forward, 0.2).unwrap();
        run_flow(&mut sim, a, z, flow_bytes(50_000, 9));
        sim.trace_hash()
    };
    assert_eq!(mk(42), mk(42));
    assert_ne!(mk(42), mk(43));
}

#[test]
fn multicast_delivery_matches_topological_scope() {
    let topo = Arc::new(crate::topology::build_paper_topology());
    let routes = Arc::new(compute_routes(&topo));
    for ttl in [1u8, 3] {
        let mut sim = sim_for(&topo, &routes, 1);
        let origin = topo.lookup("node0").unwrap();
        let island = topo.island_of(origin).unwrap();
        for n in topo.island_end_nodes(island) {
            sim.subscribe(island, n);
        }
        let piece = flow_bytes(5000, 10);
        sim.start_multicast(origin, island, ttl, FileId(0), 0, 0, piece);
        let mut frags: BTreeMap<NodeId, u32> = BTreeMap::new();
        while let Some((node, ev)) = sim.step() {
            if let AgentEvent::MulticastFrag { .. } = ev {
                *frags.entry(node).or_insert(0) += 1;
            }
        }
        // Every reached node got all four fragments exactly once.
        assert!(frags.values().all(|&c| c == 4), "ttl {ttl}: {frags:?}");
        let reached: std::collections::BTreeSet<NodeId> = frags.into_keys().collect();
        assert_eq!(reached, topo.multicast_scope(origin, ttl as u32), "ttl {ttl}");
        assert!(sim.conservation_holds_exactly());
    }
}

#[test]
fn multicast_with_ttl_zero_reaches_nobody() {
    let topo = Arc::new(crate::topology::build_paper_topology());
    let routes = Arc::new(compute_routes(&topo));
    let mut sim = sim_for(&topo, &routes, 1);
    let origin = topo.lookup("node0").unwrap();
    let island = topo.island_of(origin).unwrap();
    for n in topo.island_end_nodes(island) {
        sim.subscribe(island, n);
    }
    sim.start_multicast(origin, island, 0, FileId(0), 0, 0, flow_bytes(5000, 10));
    assert!(drain(&mut sim).is_empty());
}

#[test]
fn ledger_bytes_agree_with_engine_counters() {
    let (topo, routes, a, z, link) = two_node(2_000_000, SimTime::from_millis(1), 50);
    let mut sim = sim_for(&topo, &routes, 3);
    run_flow(&mut sim, a, z, flow_bytes(40_000, 12));
    for dir in [Dir::Forward, Dir::Reverse] {
        assert_eq!(
            sim.ledger.dir(link, dir).bytes_total,
            sim.link_bytes_admitted(link, dir)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The receiver reassembles exactly the sent byte sequence under any
    /// moderate loss pattern on data and ack paths.
    #[test]
    fn flows_reassemble_exactly_under_random_loss(
        size in 1usize..20_000,
        data_loss in 0.0f64..0.3,
        ack_loss in 0.0f64..0.1,
        seed in 0u64..500,
    ) {
        let (topo, routes, a, z, link) = two_node(5_000_000, SimTime::from_millis(2), 30);
        let mut sim = sim_for(&topo, &routes, seed);
        sim.set_loss(link, Dir::Forward, data_loss).unwrap();
        sim.set_loss(link, Dir::Reverse, ack_loss).unwrap();
        let bytes = flow_bytes(size, seed);
        let (received, sent) = run_flow(&mut sim, a, z, bytes.clone());
        let (_, got, _) = received.expect("flow must complete under moderate loss");
        prop_assert_eq!(got, (*bytes).clone());
        prop_assert!(sent.is_some());
        prop_assert!(sim.conservation_holds_exactly());
    }
}
