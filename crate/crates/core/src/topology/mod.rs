//! Network graphs: nodes, full-duplex links, LAN/island structure, static
//! minimal-hop routing, and TTL-limited multicast scope.
//!
//! A topology is immutable once built and can be shared read-only across
//! concurrently executing runs.

mod config;
mod random;

pub use config::{parse_topology, serialize_topology};
pub use random::{random_topology, RandomTopologyParams};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::time::SimTime;

/// Index of a node within its topology.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

/// Index of a link within its topology.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LinkId(pub u32);

/// Direction over a link: `Forward` is a→b as declared.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Dir {
    Forward,
    Reverse,
}

impl Dir {
    pub fn index(self) -> usize {
        match self {
            Dir::Forward => 0,
            Dir::Reverse => 1,
        }
    }

    pub fn flip(self) -> Dir {
        match self {
            Dir::Forward => Dir::Reverse,
            Dir::Reverse => Dir::Forward,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeKind {
    Client,
    AccessRouter,
    CoreRouter,
    Seeder,
    LanSwitch,
}

impl std::str::FromStr for NodeKind {
    type Err = ();

    fn from_str(s: &str) -> Result<NodeKind, ()> {
        Ok(match s {
            "client" => NodeKind::Client,
            "access-router" => NodeKind::AccessRouter,
            "core-router" => NodeKind::CoreRouter,
            "seeder" => NodeKind::Seeder,
            "lan-switch" => NodeKind::LanSwitch,
            _ => return Err(()),
        })
    }
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Client => "client",
            NodeKind::AccessRouter => "access-router",
            NodeKind::CoreRouter => "core-router",
            NodeKind::Seeder => "seeder",
            NodeKind::LanSwitch => "lan-switch",
        }
    }

    /// End nodes send and receive traffic; the rest forward it.
    pub fn is_end_node(self) -> bool {
        matches!(self, NodeKind::Client | NodeKind::Seeder)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
}

/// Link class, derived from the endpoint node kinds.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LinkKind {
    Core,
    Access,
    Lan,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub bandwidth_bps: u64,
    pub delay: SimTime,
    pub queue_capacity: usize,
    pub kind: LinkKind,
}

impl LinkSpec {
    pub fn endpoint(&self, dir: Dir) -> NodeId {
        match dir {
            Dir::Forward => self.b,
            Dir::Reverse => self.a,
        }
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if node == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Lan {
    pub switch: NodeId,
    pub members: Vec<NodeId>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Island {
    pub router: NodeId,
    /// Indices into `Topology::lans`.
    pub lans: Vec<usize>,
}

#[derive(Error, Debug)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Semantic(String),
}

fn semantic(msg: impl Into<String>) -> TopologyError {
    TopologyError::Semantic(msg.into())
}

/// A validated network graph.
#[derive(Clone, Debug)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkSpec>,
    lans: Vec<Lan>,
    islands: Vec<Island>,
    name_index: BTreeMap<String, NodeId>,
    /// Per node, neighbors sorted by neighbor name (routing tie-break order).
    adjacency: Vec<Vec<(NodeId, LinkId, Dir)>>,
    /// Island index per node, if the node belongs to one.
    island_of: Vec<Option<u32>>,
    /// Lan index per node, if the node is a member or switch of one.
    lan_of: Vec<Option<u32>>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.links == other.links
            && self.lans == other.lans
            && self.islands == other.islands
    }
}

impl Topology {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn lans(&self) -> &[Lan] {
        &self.lans
    }

    pub fn islands(&self) -> &[Island] {
        &self.islands
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id.0 as usize]
    }

    pub fn link(&self, id: LinkId) -> &LinkSpec {
        &self.links[id.0 as usize]
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0 as usize].name
    }

    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        self.name_index.get(name).copied()
    }

    /// Canonical display name for a link: `<a>-<b>` in declaration order.
    pub fn link_name(&self, id: LinkId) -> String {
        let l = self.link(id);
        format!("{}-{}", self.node_name(l.a), self.node_name(l.b))
    }

    /// Display label for a direction over a link: `<src>-><dst>`.
    pub fn dir_name(&self, id: LinkId, dir: Dir) -> String {
        let l = self.link(id);
        match dir {
            Dir::Forward => format!("{}->{}", self.node_name(l.a), self.node_name(l.b)),
            Dir::Reverse => format!("{}->{}", self.node_name(l.b), self.node_name(l.a)),
        }
    }

    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, LinkId, Dir)] {
        &self.adjacency[node.0 as usize]
    }

    pub fn island_of(&self, node: NodeId) -> Option<u32> {
        self.island_of[node.0 as usize]
    }

    /// All clients (and seeders) attached to an island, in id order.
    pub fn island_end_nodes(&self, island: u32) -> Vec<NodeId> {
        let is = &self.islands[island as usize];
        let mut out = Vec::new();
        for &lan_idx in &is.lans {
            out.extend(self.lans[lan_idx].members.iter().copied());
        }
        // Clients attached directly to the island router.
        for &(nb, _, _) in self.neighbors(is.router) {
            if self.node(nb).kind.is_end_node() {
                out.push(nb);
            }
        }
        out.sort();
        out
    }

    pub fn client_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len() as u32)
            .map(NodeId)
            .filter(|&n| self.node(n).kind == NodeKind::Client)
            .collect()
    }

    pub fn seeder_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len() as u32)
            .map(NodeId)
            .filter(|&n| self.node(n).kind == NodeKind::Seeder)
            .collect()
    }

    /// Eligible multicast forwarding branches out of `device`, excluding the
    /// branch the packet came in on. Switches flood all ports; access routers
    /// relay between the LANs (and directly attached end nodes) of their own
    /// island; core routers never forward multicast.
    pub fn multicast_branches(&self, device: NodeId, from: NodeId) -> Vec<(NodeId, LinkId, Dir)> {
        match self.node(device).kind {
            NodeKind::LanSwitch => self
                .neighbors(device)
                .iter()
                .copied()
                .filter(|&(nb, _, _)| nb != from)
                .collect(),
            NodeKind::AccessRouter => {
                let Some(island) = self.island_of(device) else {
                    return Vec::new();
                };
                let lan_switches: BTreeSet<NodeId> = self.islands[island as usize]
                    .lans
                    .iter()
                    .map(|&i| self.lans[i].switch)
                    .collect();
                self.neighbors(device)
                    .iter()
                    .copied()
                    .filter(|&(nb, _, _)| {
                        nb != from
                            && (lan_switches.contains(&nb) || self.node(nb).kind.is_end_node())
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// The set of end nodes (other than the origin) that a multicast datagram
    /// sent by `origin` with the given TTL can reach. Every switch or router
    /// transit consumes one TTL unit; a datagram with TTL 0 is never sent.
    pub fn multicast_scope(&self, origin: NodeId, ttl: u32) -> BTreeSet<NodeId> {
        debug_assert!(self.node(origin).kind.is_end_node());
        let mut reached = BTreeSet::new();
        if ttl == 0 {
            return reached;
        }
        let mut stack: Vec<(NodeId, u32, NodeId)> = self
            .neighbors(origin)
            .iter()
            .map(|&(nb, _, _)| (nb, ttl, origin))
            .collect();
        while let Some((node, ttl, from)) = stack.pop() {
            if self.node(node).kind.is_end_node() {
                if node != origin {
                    reached.insert(node);
                }
                continue;
            }
            if ttl == 0 {
                continue;
            }
            for (nb, _, _) in self.multicast_branches(node, from) {
                stack.push((nb, ttl - 1, node));
            }
        }
        reached
    }

    fn validate(
        nodes: Vec<NodeSpec>,
        raw_links: Vec<(NodeId, NodeId, u64, SimTime, usize)>,
        lans: Vec<Lan>,
        islands: Vec<Island>,
    ) -> Result<Topology, TopologyError> {
        let mut name_index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if name_index.insert(n.name.clone(), NodeId(i as u32)).is_some() {
                return Err(semantic(format!("duplicate node id `{}`", n.name)));
            }
        }

        let mut links = Vec::with_capacity(raw_links.len());
        for (a, b, bw, delay, queue) in raw_links {
            if a == b {
                return Err(semantic(format!(
                    "link from `{}` to itself",
                    nodes[a.0 as usize].name
                )));
            }
            if bw == 0 {
                return Err(semantic("link bandwidth must be positive"));
            }
            if queue == 0 {
                return Err(semantic("link queue capacity must be at least 1"));
            }
            let kind = match (nodes[a.0 as usize].kind, nodes[b.0 as usize].kind) {
                (NodeKind::CoreRouter, NodeKind::CoreRouter) => LinkKind::Core,
                (NodeKind::CoreRouter, _) | (_, NodeKind::CoreRouter) => LinkKind::Access,
                (NodeKind::LanSwitch, _) | (_, NodeKind::LanSwitch) => LinkKind::Lan,
                _ => LinkKind::Access,
            };
            links.push(LinkSpec {
                a,
                b,
                bandwidth_bps: bw,
                delay,
                queue_capacity: queue,
                kind,
            });
        }

        let mut adjacency: Vec<Vec<(NodeId, LinkId, Dir)>> = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            let id = LinkId(i as u32);
            adjacency[l.a.0 as usize].push((l.b, id, Dir::Forward));
            adjacency[l.b.0 as usize].push((l.a, id, Dir::Reverse));
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| nodes[x.0 .0 as usize].name.cmp(&nodes[y.0 .0 as usize].name));
        }

        let mut lan_of: Vec<Option<u32>> = vec![None; nodes.len()];
        for (i, lan) in lans.iter().enumerate() {
            if nodes[lan.switch.0 as usize].kind != NodeKind::LanSwitch {
                return Err(semantic(format!(
                    "lan `{}` is not declared as a lan-switch",
                    nodes[lan.switch.0 as usize].name
                )));
            }
            if lan.members.is_empty() {
                return Err(semantic(format!(
                    "lan `{}` has no members",
                    nodes[lan.switch.0 as usize].name
                )));
            }
            for slot in [lan.switch].iter().chain(lan.members.iter()) {
                if lan_of[slot.0 as usize].is_some() {
                    return Err(semantic(format!(
                        "node `{}` appears in more than one lan",
                        nodes[slot.0 as usize].name
                    )));
                }
                lan_of[slot.0 as usize] = Some(i as u32);
            }
            for &m in &lan.members {
                if !nodes[m.0 as usize].kind.is_end_node() {
                    return Err(semantic(format!(
                        "lan member `{}` is not a client or seeder",
                        nodes[m.0 as usize].name
                    )));
                }
                let attached = adjacency[m.0 as usize]
                    .iter()
                    .any(|&(nb, _, _)| nb == lan.switch);
                if !attached {
                    return Err(semantic(format!(
                        "lan member `{}` has no link to its switch `{}`",
                        nodes[m.0 as usize].name, nodes[lan.switch.0 as usize].name
                    )));
                }
            }
        }

        let mut island_of: Vec<Option<u32>> = vec![None; nodes.len()];
        let mut lan_claimed = vec![false; lans.len()];
        for (i, island) in islands.iter().enumerate() {
            if nodes[island.router.0 as usize].kind != NodeKind::AccessRouter {
                return Err(semantic(format!(
                    "island router `{}` is not an access-router",
                    nodes[island.router.0 as usize].name
                )));
            }
            if island.lans.is_empty() {
                return Err(semantic(format!(
                    "island `{}` has no lans",
                    nodes[island.router.0 as usize].name
                )));
            }
            if island_of[island.router.0 as usize].is_some() {
                return Err(semantic(format!(
                    "router `{}` anchors more than one island",
                    nodes[island.router.0 as usize].name
                )));
            }
            island_of[island.router.0 as usize] = Some(i as u32);
            for &lan_idx in &island.lans {
                if lan_claimed[lan_idx] {
                    return Err(semantic("a lan belongs to more than one island"));
                }
                lan_claimed[lan_idx] = true;
                let lan = &lans[lan_idx];
                let uplinked = adjacency[lan.switch.0 as usize]
                    .iter()
                    .any(|&(nb, _, _)| nb == island.router);
                if !uplinked {
                    return Err(semantic(format!(
                        "lan `{}` has no link to its island router `{}`",
                        nodes[lan.switch.0 as usize].name, nodes[island.router.0 as usize].name
                    )));
                }
                island_of[lan.switch.0 as usize] = Some(i as u32);
                for &m in &lan.members {
                    island_of[m.0 as usize] = Some(i as u32);
                }
            }
            // Directly attached end nodes inherit the island.
            for &(nb, _, _) in &adjacency[island.router.0 as usize] {
                if nodes[nb.0 as usize].kind.is_end_node() {
                    island_of[nb.0 as usize] = Some(i as u32);
                }
            }
        }
        if let Some(idx) = lan_claimed.iter().position(|&c| !c) {
            return Err(semantic(format!(
                "lan `{}` belongs to no island",
                nodes[lans[idx].switch.0 as usize].name
            )));
        }

        // End nodes attach through exactly one link.
        for (i, n) in nodes.iter().enumerate() {
            if n.kind.is_end_node() && adjacency[i].len() != 1 {
                return Err(semantic(format!(
                    "end node `{}` must have exactly one link, has {}",
                    n.name,
                    adjacency[i].len()
                )));
            }
        }

        // Connectivity.
        if !nodes.is_empty() {
            let mut seen = vec![false; nodes.len()];
            let mut queue = VecDeque::from([NodeId(0)]);
            seen[0] = true;
            let mut count = 1;
            while let Some(n) = queue.pop_front() {
                for &(nb, _, _) in &adjacency[n.0 as usize] {
                    if !seen[nb.0 as usize] {
                        seen[nb.0 as usize] = true;
                        count += 1;
                        queue.push_back(nb);
                    }
                }
            }
            if count != nodes.len() {
                let missing = seen.iter().position(|&s| !s).unwrap();
                return Err(semantic(format!(
                    "graph is not connected: `{}` is unreachable",
                    nodes[missing].name
                )));
            }
        }

        Ok(Topology {
            nodes,
            links,
            lans,
            islands,
            name_index,
            adjacency,
            island_of,
            lan_of,
        })
    }

    pub fn lan_of(&self, node: NodeId) -> Option<u32> {
        self.lan_of[node.0 as usize]
    }
}

/// Incremental construction of a [`Topology`]; `build` validates everything.
#[derive(Default)]
pub struct TopologyBuilder {
    nodes: Vec<NodeSpec>,
    names: BTreeMap<String, NodeId>,
    links: Vec<(NodeId, NodeId, u64, SimTime, usize)>,
    lans: Vec<Lan>,
    islands: Vec<Island>,
}

impl TopologyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, name: &str, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(NodeSpec {
            name: name.to_string(),
            kind,
        });
        self.names.insert(name.to_string(), id);
        id
    }

    pub fn link(&mut self, a: NodeId, b: NodeId, bw_bps: u64, delay: SimTime, queue: usize) {
        self.links.push((a, b, bw_bps, delay, queue));
    }

    pub fn lan(&mut self, switch: NodeId, members: Vec<NodeId>) {
        self.lans.push(Lan { switch, members });
    }

    pub fn island(&mut self, router: NodeId, lan_switches: &[NodeId]) {
        let lans = lan_switches
            .iter()
            .map(|&sw| {
                self.lans
                    .iter()
                    .position(|l| l.switch == sw)
                    .expect("island references undeclared lan")
            })
            .collect();
        self.islands.push(Island { router, lans });
    }

    pub fn build(self) -> Result<Topology, TopologyError> {
        Topology::validate(self.nodes, self.links, self.lans, self.islands)
    }
}

/// Default drop-tail queue depth in packets.
pub const DEFAULT_QUEUE_CAPACITY: usize = 50;

const MBPS: u64 = 1_000_000;

/// The 36-client study topology: four fully meshed core routers (10 Mb/s,
/// 20 ms core links), three access routers each serving an island of three
/// 10 Mb/s LANs with four clients apiece, and a seeder on a dedicated 2 Mb/s
/// link to the fourth core router.
pub fn build_paper_topology() -> Topology {
    let q = DEFAULT_QUEUE_CAPACITY;
    let mut b = TopologyBuilder::new();

    let core: Vec<NodeId> = (0..4)
        .map(|i| b.node(&format!("coreRouter{i}"), NodeKind::CoreRouter))
        .collect();
    let routers: Vec<NodeId> = (0..3)
        .map(|i| b.node(&format!("router{i}"), NodeKind::AccessRouter))
        .collect();
    let switches: Vec<NodeId> = (0..9)
        .map(|i| b.node(&format!("lan{i}"), NodeKind::LanSwitch))
        .collect();
    let clients: Vec<NodeId> = (0..36)
        .map(|i| b.node(&format!("node{i}"), NodeKind::Client))
        .collect();
    let seeder = b.node("seeder", NodeKind::Seeder);

    // Six core links, full mesh.
    let core_pairs = [(0, 1), (1, 2), (0, 2), (3, 0), (3, 1), (3, 2)];
    for (x, y) in core_pairs {
        b.link(core[x], core[y], 10 * MBPS, SimTime::from_millis(20), q);
    }
    // Access links: one per island plus the seeder's.
    for i in 0..3 {
        b.link(core[i], routers[i], 2 * MBPS, SimTime::from_millis(10), q);
    }
    b.link(core[3], seeder, 2 * MBPS, SimTime::from_millis(10), q);

    // LANs: switch uplink to the island router, plus one spoke per client.
    for (i, &sw) in switches.iter().enumerate() {
        let router = routers[i / 3];
        b.link(router, sw, 10 * MBPS, SimTime::ZERO, q);
        let members: Vec<NodeId> = (0..4).map(|j| clients[i * 4 + j]).collect();
        for &c in &members {
            b.link(sw, c, 10 * MBPS, SimTime::ZERO, q);
        }
        b.lan(sw, members);
    }
    for i in 0..3 {
        let lans: Vec<NodeId> = switches[i * 3..i * 3 + 3].to_vec();
        b.island(routers[i], &lans);
    }

    b.build().expect("paper topology is valid")
}

/// One step of a route: which link to cross and in which direction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Hop {
    pub link: LinkId,
    pub dir: Dir,
}

/// An ordered list of link traversals from a source to a destination.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Route {
    pub hops: Vec<Hop>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

/// Static all-pairs minimal-hop routes with deterministic tie-breaking.
pub struct RoutingTable {
    n: usize,
    routes: Vec<Option<Arc<Route>>>,
}

impl RoutingTable {
    pub fn route(&self, src: NodeId, dst: NodeId) -> &Arc<Route> {
        self.routes[src.0 as usize * self.n + dst.0 as usize]
            .as_ref()
            .expect("route exists for every pair in a connected topology")
    }

    /// Minimum bandwidth along the route between two nodes.
    pub fn bottleneck_bps(&self, topo: &Topology, src: NodeId, dst: NodeId) -> u64 {
        self.route(src, dst)
            .hops
            .iter()
            .map(|h| topo.link(h.link).bandwidth_bps)
            .min()
            .unwrap_or(u64::MAX)
    }
}

/// Computes minimal-hop routes for every ordered pair. Ties are broken by the
/// lexicographic order of the next-hop node name; the reverse route is the
/// exact reversal of the forward one.
pub fn compute_routes(topo: &Topology) -> RoutingTable {
    let n = topo.nodes().len();
    let mut dist = vec![vec![u32::MAX; n]; n];
    for start in 0..n {
        let d = &mut dist[start];
        d[start] = 0;
        let mut queue = VecDeque::from([NodeId(start as u32)]);
        while let Some(cur) = queue.pop_front() {
            for &(nb, _, _) in topo.neighbors(cur) {
                if d[nb.0 as usize] == u32::MAX {
                    d[nb.0 as usize] = d[cur.0 as usize] + 1;
                    queue.push_back(nb);
                }
            }
        }
    }

    let mut routes: Vec<Option<Arc<Route>>> = vec![None; n * n];
    for u in 0..n {
        routes[u * n + u] = Some(Arc::new(Route::default()));
    }
    // Build each unordered pair once in canonical (name-ordered) direction so
    // the reverse path is the reversed hop list by construction.
    for u in 0..n {
        for v in 0..n {
            if u == v || topo.nodes[u].name >= topo.nodes[v].name {
                continue;
            }
            let to_v = &dist[v];
            if to_v[u] == u32::MAX {
                continue;
            }
            let mut hops = Vec::with_capacity(to_v[u] as usize);
            let mut cur = NodeId(u as u32);
            while cur.0 as usize != v {
                // Neighbors are name-sorted, so the first one strictly closer
                // to v is the lexicographic tie-break winner.
                let &(nb, link, dir) = topo
                    .neighbors(cur)
                    .iter()
                    .find(|&&(nb, _, _)| to_v[nb.0 as usize] + 1 == to_v[cur.0 as usize])
                    .expect("bfs predecessor exists");
                hops.push(Hop { link, dir });
                cur = nb;
            }
            let reversed = Route {
                hops: hops
                    .iter()
                    .rev()
                    .map(|h| Hop {
                        link: h.link,
                        dir: h.dir.flip(),
                    })
                    .collect(),
            };
            routes[u * n + v] = Some(Arc::new(Route { hops }));
            routes[v * n + u] = Some(Arc::new(reversed));
        }
    }
    RoutingTable { n, routes }
}

#[cfg(test)]
mod tests;
