use std::collections::VecDeque;

use super::*;

fn paper() -> Topology {
    build_paper_topology()
}

#[test]
fn paper_topology_counts() {
    let t = paper();
    assert_eq!(t.client_ids().len(), 36);
    assert_eq!(t.seeder_ids().len(), 1);
    assert_eq!(t.lans().len(), 9);
    assert_eq!(t.islands().len(), 3);
    for lan in t.lans() {
        assert_eq!(lan.members.len(), 4);
    }

    let core_links: Vec<&LinkSpec> = t.links().iter().filter(|l| l.kind == LinkKind::Core).collect();
    assert_eq!(core_links.len(), 6);
    for l in core_links {
        assert_eq!(l.bandwidth_bps, 10_000_000);
        assert_eq!(l.delay, SimTime::from_millis(20));
        assert_eq!(l.queue_capacity, DEFAULT_QUEUE_CAPACITY);
    }

    // Seeder hangs off coreRouter3 on a dedicated 2 Mb/s link.
    let seeder = t.lookup("seeder").unwrap();
    let (nb, link, _) = t.neighbors(seeder)[0];
    assert_eq!(t.node_name(nb), "coreRouter3");
    assert_eq!(t.link(link).bandwidth_bps, 2_000_000);
    assert_eq!(t.link(link).kind, LinkKind::Access);
}

#[test]
fn parse_minimal_document() {
    let t = parse_topology(
        "# tiny\nnode a kind=client\nnode b kind=seeder\nlink a b bw=2mbps delay=10ms queue=50\n",
    )
    .unwrap();
    assert_eq!(t.nodes().len(), 2);
    assert_eq!(t.links().len(), 1);
    assert_eq!(t.links()[0].bandwidth_bps, 2_000_000);
}

#[test]
fn parse_round_trips_paper_topology() {
    let t = paper();
    let text = serialize_topology(&t);
    let back = parse_topology(&text).unwrap();
    assert_eq!(back, t);
    // And the rendering itself is stable.
    assert_eq!(serialize_topology(&back), text);
}

#[test]
fn parse_reports_undeclared_node() {
    let err = parse_topology("node a kind=client\nlink a ghost bw=2mbps delay=10ms queue=50\n")
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("ghost"), "error should name the node: {msg}");
    assert!(msg.contains("line 2"), "error should carry the line: {msg}");
}

#[test]
fn parse_reports_duplicate_id() {
    let err = parse_topology("node a kind=client\nnode a kind=client\n").unwrap_err();
    assert!(err.to_string().contains("duplicate node id `a`"));
}

#[test]
fn parse_reports_disconnected_graph() {
    let err = parse_topology(
        "node a kind=client\nnode b kind=seeder\nnode c kind=core-router\nnode d kind=core-router\n\
         link a b bw=2mbps delay=10ms queue=50\nlink c d bw=2mbps delay=10ms queue=50\n",
    )
    .unwrap_err();
    assert!(err.to_string().contains("not connected"));
}

#[test]
fn parse_rejects_bad_syntax_with_line_number() {
    let err = parse_topology("node a kind=client\nfrobnicate x\n").unwrap_err();
    match err {
        TopologyError::Syntax { line, .. } => assert_eq!(line, 2),
        other => panic!("expected syntax error, got {other}"),
    }
}

#[test]
fn route_seeder_to_node0_uses_direct_core_link() {
    let t = paper();
    let routes = compute_routes(&t);
    let seeder = t.lookup("seeder").unwrap();
    let node0 = t.lookup("node0").unwrap();
    let route = routes.route(seeder, node0);

    let names: Vec<String> = {
        let mut cur = seeder;
        let mut out = vec![t.node_name(cur).to_string()];
        for hop in &route.hops {
            cur = t.link(hop.link).endpoint(hop.dir);
            out.push(t.node_name(cur).to_string());
        }
        out
    };
    assert_eq!(
        names,
        ["seeder", "coreRouter3", "coreRouter0", "router0", "lan0", "node0"]
    );
}

#[test]
fn seeder_routes_never_use_parallel_core_links() {
    // The three core links that do not touch coreRouter3 stay off every
    // seeder route, matching the unused rows in the unicast measurements.
    let t = paper();
    let routes = compute_routes(&t);
    let seeder = t.lookup("seeder").unwrap();
    let cr3 = t.lookup("coreRouter3").unwrap();
    for client in t.client_ids() {
        for hop in &routes.route(seeder, client).hops {
            let l = t.link(hop.link);
            if l.kind == LinkKind::Core {
                assert!(l.a == cr3 || l.b == cr3);
            }
        }
    }
}

#[test]
fn route_to_self_is_empty() {
    let t = paper();
    let routes = compute_routes(&t);
    let n = t.lookup("node7").unwrap();
    assert!(routes.route(n, n).is_empty());
}

#[test]
fn route_on_three_node_line() {
    let t = parse_topology(
        "node a kind=client\nnode b kind=core-router\nnode c kind=seeder\n\
         link a b bw=2mbps delay=10ms queue=50\nlink b c bw=2mbps delay=10ms queue=50\n",
    )
    .unwrap();
    let routes = compute_routes(&t);
    let route = routes.route(t.lookup("a").unwrap(), t.lookup("c").unwrap());
    assert_eq!(route.len(), 2);
    assert_eq!(t.link(route.hops[0].link).other(t.lookup("b").unwrap()), t.lookup("a").unwrap());
}

/// Independent BFS oracle: plain hop-count distances, no tie-breaking.
fn bfs_distances(t: &Topology, start: NodeId) -> Vec<u32> {
    let mut dist = vec![u32::MAX; t.nodes().len()];
    dist[start.0 as usize] = 0;
    let mut q = VecDeque::from([start]);
    while let Some(cur) = q.pop_front() {
        for &(nb, _, _) in t.neighbors(cur) {
            if dist[nb.0 as usize] == u32::MAX {
                dist[nb.0 as usize] = dist[cur.0 as usize] + 1;
                q.push_back(nb);
            }
        }
    }
    dist
}

fn assert_routes_minimal_and_symmetric(t: &Topology) {
    let routes = compute_routes(t);
    let n = t.nodes().len() as u32;
    for u in 0..n {
        let dist = bfs_distances(t, NodeId(u));
        for v in 0..n {
            let route = routes.route(NodeId(u), NodeId(v));
            assert_eq!(route.len() as u32, dist[v as usize], "route not minimal");
            // Reverse path is the reversed hop list.
            let back = routes.route(NodeId(v), NodeId(u));
            assert_eq!(back.len(), route.len());
            for (h, r) in route.hops.iter().zip(back.hops.iter().rev()) {
                assert_eq!(h.link, r.link);
                assert_eq!(h.dir, r.dir.flip());
            }
            // Route is a connected walk from u to v.
            let mut cur = NodeId(u);
            for hop in &route.hops {
                let l = t.link(hop.link);
                let from = match hop.dir {
                    Dir::Forward => l.a,
                    Dir::Reverse => l.b,
                };
                assert_eq!(from, cur);
                cur = l.endpoint(hop.dir);
            }
            assert_eq!(cur, NodeId(v));
        }
    }
}

#[test]
fn routes_minimal_against_bfs_oracle_on_paper_topology() {
    assert_routes_minimal_and_symmetric(&paper());
}

#[test]
fn routes_minimal_on_random_topologies() {
    for seed in 0..20 {
        let t = random_topology(seed, &RandomTopologyParams::default());
        assert_routes_minimal_and_symmetric(&t);
    }
}

#[test]
fn multicast_scope_ttl3_covers_island() {
    let t = paper();
    let node0 = t.lookup("node0").unwrap();
    let scope = t.multicast_scope(node0, 3);
    // All clients on lan0, lan1, lan2 except the origin itself.
    let expected: BTreeSet<NodeId> = (0..12)
        .map(|i| t.lookup(&format!("node{i}")).unwrap())
        .filter(|&n| n != node0)
        .collect();
    assert_eq!(scope, expected);
}

#[test]
fn multicast_scope_ttl1_stays_on_subnet() {
    let t = paper();
    let node0 = t.lookup("node0").unwrap();
    let scope = t.multicast_scope(node0, 1);
    let expected: BTreeSet<NodeId> = (1..4)
        .map(|i| t.lookup(&format!("node{i}")).unwrap())
        .collect();
    assert_eq!(scope, expected);
}

#[test]
fn multicast_scope_ttl0_is_empty() {
    let t = paper();
    let node0 = t.lookup("node0").unwrap();
    assert!(t.multicast_scope(node0, 0).is_empty());
}

#[test]
fn multicast_from_seeder_reaches_nobody() {
    let t = paper();
    let seeder = t.lookup("seeder").unwrap();
    assert!(t.multicast_scope(seeder, 8).is_empty());
}

#[test]
fn multicast_scope_monotone_and_island_confined() {
    for seed in 0..20 {
        let t = random_topology(seed, &RandomTopologyParams::default());
        for origin in t.client_ids() {
            let island = t.island_of(origin);
            let mut prev = BTreeSet::new();
            for ttl in 0..6 {
                let scope = t.multicast_scope(origin, ttl);
                assert!(prev.is_subset(&scope), "scope must grow with ttl");
                for &n in &scope {
                    assert_eq!(t.island_of(n), island, "scope escaped the island");
                }
                prev = scope;
            }
        }
    }
}

#[test]
fn random_topologies_round_trip_through_config() {
    for seed in 0..30 {
        let t = random_topology(seed, &RandomTopologyParams::default());
        let text = serialize_topology(&t);
        let back = parse_topology(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
        assert_eq!(back, t, "seed {seed}");
    }
}
