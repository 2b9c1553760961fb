//! Seeded random topology generation, used by randomized integrity tests and
//! available for ad-hoc experiments.

use rand::Rng;

use super::{NodeKind, Topology, TopologyBuilder, DEFAULT_QUEUE_CAPACITY};
use crate::rng::RngHub;
use crate::time::SimTime;

#[derive(Clone, Debug)]
pub struct RandomTopologyParams {
    pub max_islands: usize,
    pub max_lans_per_island: usize,
    pub max_clients_per_lan: usize,
}

impl Default for RandomTopologyParams {
    fn default() -> Self {
        RandomTopologyParams {
            max_islands: 2,
            max_lans_per_island: 3,
            max_clients_per_lan: 4,
        }
    }
}

/// Builds a small island topology: a full mesh of core routers (one per
/// island plus one for the seeder), an access router per island, and a random
/// number of LANs and clients. Bandwidths and delays use round values so the
/// result survives a config-format round trip.
pub fn random_topology(seed: u64, params: &RandomTopologyParams) -> Topology {
    let mut rng = RngHub::new(seed).stream("topology-gen");
    let q = DEFAULT_QUEUE_CAPACITY;
    let mbps = 1_000_000u64;

    let islands = rng.gen_range(1..=params.max_islands);
    let mut b = TopologyBuilder::new();

    let cores: Vec<_> = (0..islands + 1)
        .map(|i| b.node(&format!("core{i}"), NodeKind::CoreRouter))
        .collect();
    for i in 0..cores.len() {
        for j in i + 1..cores.len() {
            b.link(cores[i], cores[j], 10 * mbps, SimTime::from_millis(20), q);
        }
    }
    let seeder = b.node("seeder", NodeKind::Seeder);
    b.link(cores[islands], seeder, 2 * mbps, SimTime::from_millis(10), q);

    let mut client_no = 0;
    for (i, &core) in cores.iter().enumerate().take(islands) {
        let router = b.node(&format!("router{i}"), NodeKind::AccessRouter);
        b.link(core, router, 2 * mbps, SimTime::from_millis(10), q);
        let lans = rng.gen_range(1..=params.max_lans_per_island);
        let mut switches = Vec::new();
        for l in 0..lans {
            let sw = b.node(&format!("sw{i}x{l}"), NodeKind::LanSwitch);
            b.link(router, sw, 10 * mbps, SimTime::ZERO, q);
            let clients = rng.gen_range(2..=params.max_clients_per_lan.max(2));
            let mut members = Vec::new();
            for _ in 0..clients {
                let c = b.node(&format!("n{client_no}"), NodeKind::Client);
                client_no += 1;
                b.link(sw, c, 10 * mbps, SimTime::ZERO, q);
                members.push(c);
            }
            b.lan(sw, members);
            switches.push(sw);
        }
        b.island(router, &switches);
    }

    b.build().expect("generated topology is valid")
}
