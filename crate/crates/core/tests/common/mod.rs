//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use std::sync::Arc;

use distsim_core::metrics::DirLedger;
use distsim_core::protocols::RunOutput;
use distsim_core::topology::{build_paper_topology, Dir, LinkId, LinkKind, NodeKind, Topology};

pub fn paper() -> Arc<Topology> {
    Arc::new(build_paper_topology())
}

/// The directed link from `a` to `b`, by node name.
pub fn dir_between(topo: &Topology, a: &str, b: &str) -> (LinkId, Dir) {
    let a = topo.lookup(a).unwrap();
    let b = topo.lookup(b).unwrap();
    topo.neighbors(a)
        .iter()
        .find(|&&(nb, _, _)| nb == b)
        .map(|&(_, link, dir)| (link, dir))
        .unwrap_or_else(|| panic!("no link between the given nodes"))
}

/// Every direction of every core link.
pub fn core_dirs(topo: &Topology) -> Vec<(LinkId, Dir)> {
    topo.links()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind == LinkKind::Core)
        .flat_map(|(i, _)| {
            [
                (LinkId(i as u32), Dir::Forward),
                (LinkId(i as u32), Dir::Reverse),
            ]
        })
        .collect()
}

/// The three island access links, in the core-to-router (downlink) direction.
pub fn island_access_downlinks(topo: &Topology) -> Vec<(LinkId, Dir)> {
    topo.links()
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            l.kind == LinkKind::Access
                && (topo.node(l.a).kind == NodeKind::AccessRouter
                    || topo.node(l.b).kind == NodeKind::AccessRouter)
        })
        .map(|(i, l)| {
            let dir = if topo.node(l.a).kind == NodeKind::CoreRouter {
                Dir::Forward
            } else {
                Dir::Reverse
            };
            (LinkId(i as u32), dir)
        })
        .collect()
}

pub fn ledger<'a>(out: &'a RunOutput, at: &(LinkId, Dir)) -> &'a DirLedger {
    out.ledger.dir(at.0, at.1)
}

pub fn mean_completion(out: &RunOutput) -> f64 {
    let times: Vec<f64> = out
        .records
        .iter()
        .filter_map(|r| r.completion_secs())
        .collect();
    assert!(!times.is_empty(), "no completions");
    times.iter().sum::<f64>() / times.len() as f64
}

/// Mean stress over all core-link directions where stress is defined.
pub fn mean_core_stress(topo: &Topology, out: &RunOutput) -> f64 {
    out.ledger
        .mean_stress_by_kind(topo, LinkKind::Core)
        .expect("core links carried content")
}

pub fn core_content_bytes(topo: &Topology, out: &RunOutput) -> u64 {
    out.ledger.content_bytes_by_kind(topo, LinkKind::Core)
}
