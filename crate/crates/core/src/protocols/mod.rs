//! The three content-distribution models, executed as deterministic state
//! machines over the engine: unicast (`www`), swarm (`p2p`), and the hybrid
//! swarm with island multicast and handshake-based unicast repair.

pub mod messages;
pub mod peer;
pub mod select;
pub mod tracker;
mod www;

pub use messages::{ControlMsg, HandshakeKind, HandshakeMessage};
pub use peer::{PeerAgent, PeerSetup};
pub use select::{select_piece, SelectionPhase};
pub use tracker::TrackerState;
pub use www::{WwwClientAgent, WwwSeederAgent};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::chunking::{make_pieces, synth_file_bytes, FileId};
use crate::engine::{AgentEvent, EngineConfig, Sim};
use crate::metrics::{DownloadRecord, DownloadStatus, LedgerBook};
use crate::time::SimTime;
use crate::topology::{compute_routes, LinkKind, NodeId, NodeKind, Topology};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Model {
    Www,
    P2p,
    Hybrid,
}

impl std::str::FromStr for Model {
    type Err = ();

    fn from_str(s: &str) -> Result<Model, ()> {
        Ok(match s {
            "www" => Model::Www,
            "p2p" => Model::P2p,
            "hybrid" => Model::Hybrid,
            _ => return Err(()),
        })
    }
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Www => "www",
            Model::P2p => "p2p",
            Model::Hybrid => "hybrid",
        }
    }

    pub const ALL: [Model; 3] = [Model::Www, Model::P2p, Model::Hybrid];
}

/// Tunables of the swarm and hybrid machinery. Defaults are sized so that
/// study-scale runs complete under a few percent of induced loss.
#[derive(Clone, Debug)]
pub struct ProtocolParams {
    /// Concurrent outstanding chunk requests per get-file request.
    pub batch_size: usize,
    /// Concurrent upload transfer slots per peer.
    pub port_pool: usize,
    /// Response and transfer-start timeout of the handshake.
    pub handshake_timeout: SimTime,
    /// Delay before re-asking the same hosts after exhausting candidates.
    pub retry_backoff: SimTime,
    /// Candidate sweeps per chunk before the download counts as failed.
    pub attempt_limit: u32,
    /// Regular reciprocation upload slots.
    pub choke_slots: usize,
    /// Extra randomly rotated upload slots.
    pub optimistic_slots: usize,
    /// Reciprocation re-evaluation period.
    pub choke_interval: SimTime,
    pub choking_enabled: bool,
    /// Reciprocation in the hybrid model; off by default, since its bursty
    /// grant pattern multiplies duplicate island entries and the island
    /// already cooperates through multicast. Upload admission then rests on
    /// the port pool alone.
    pub hybrid_choking: bool,
    /// Same-island requesters bypass reciprocation when it is active; island
    /// repair must not starve behind cross-island incentives.
    pub island_choke_bypass: bool,
    /// Hybrid sources are tried island-first.
    pub island_source_first: bool,
    /// Tracker peer list size.
    pub peer_list_size: usize,
    pub announce_interval: SimTime,
    /// Clients start within this window, spread by the seeded source.
    pub start_jitter_max: SimTime,
    /// Upper bound of the randomized multicast hold-off.
    pub multicast_holdoff_max: SimTime,
    /// Interval separating an island's staggered outside fetches of one piece.
    pub outside_fetch_stagger: SimTime,
    /// A piece with multicast fragments seen this recently is not fetched.
    pub multicast_fresh_window: SimTime,
    pub multicast_ttl: u8,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            batch_size: 4,
            port_pool: 4,
            handshake_timeout: SimTime::from_secs(2),
            retry_backoff: SimTime::from_secs(5),
            attempt_limit: 32,
            choke_slots: 4,
            optimistic_slots: 1,
            choke_interval: SimTime::from_secs(10),
            choking_enabled: true,
            hybrid_choking: false,
            island_choke_bypass: true,
            island_source_first: true,
            peer_list_size: 20,
            announce_interval: SimTime::from_secs(30),
            start_jitter_max: SimTime::from_millis(50),
            multicast_holdoff_max: SimTime::from_millis(500),
            outside_fetch_stagger: SimTime::from_secs(15),
            multicast_fresh_window: SimTime::from_secs(1),
            multicast_ttl: 3,
        }
    }
}

/// One handshake message as sent, for golden-trace checks.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct HsTraceEntry {
    pub time: SimTime,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: HandshakeKind,
    pub chunk: u32,
    pub port: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct RecordSlot {
    pub client: NodeId,
    pub name: String,
    pub start: SimTime,
    pub finish: Option<SimTime>,
    pub failed: bool,
    pub file_ok: bool,
    pub retx: u64,
}

/// Shared run-level state the agents report into.
pub struct RunBoard {
    slots: BTreeMap<NodeId, usize>,
    pub records: Vec<RecordSlot>,
    pub outstanding: usize,
    pub seeder_bytes: Arc<Vec<u8>>,
    pub hs_trace: Option<Vec<HsTraceEntry>>,
    sessions_open: BTreeMap<NodeId, usize>,
    pub max_sessions_open: BTreeMap<NodeId, usize>,
    /// Island multicast emissions, as (origin, piece).
    pub multicasts: Vec<(NodeId, u32)>,
}

impl RunBoard {
    pub fn new(
        clients: Vec<(NodeId, String)>,
        seeder_bytes: Arc<Vec<u8>>,
        record_hs: bool,
    ) -> Self {
        let mut slots = BTreeMap::new();
        let mut records = Vec::new();
        for (i, (id, name)) in clients.into_iter().enumerate() {
            slots.insert(id, i);
            records.push(RecordSlot {
                client: id,
                name,
                start: SimTime::ZERO,
                finish: None,
                failed: false,
                file_ok: false,
                retx: 0,
            });
        }
        RunBoard {
            outstanding: slots.len(),
            slots,
            records,
            seeder_bytes,
            hs_trace: record_hs.then(Vec::new),
            sessions_open: BTreeMap::new(),
            max_sessions_open: BTreeMap::new(),
            multicasts: Vec::new(),
        }
    }

    pub fn mark_start(&mut self, client: NodeId, at: SimTime) {
        if let Some(&i) = self.slots.get(&client) {
            self.records[i].start = at;
        }
    }

    pub fn mark_complete(&mut self, client: NodeId, at: SimTime, file_ok: bool, retx: u64) {
        if let Some(&i) = self.slots.get(&client) {
            let r = &mut self.records[i];
            if r.finish.is_none() && !r.failed {
                r.finish = Some(at);
                r.file_ok = file_ok;
                r.retx = retx;
                self.outstanding -= 1;
            }
        }
    }

    pub fn mark_failed(&mut self, client: NodeId) {
        if let Some(&i) = self.slots.get(&client) {
            let r = &mut self.records[i];
            if r.finish.is_none() && !r.failed {
                r.failed = true;
                self.outstanding -= 1;
            }
        }
    }

    pub fn record_hs(&mut self, time: SimTime, from: NodeId, to: NodeId, msg: HandshakeMessage) {
        if let Some(trace) = &mut self.hs_trace {
            trace.push(HsTraceEntry {
                time,
                from,
                to,
                kind: msg.kind,
                chunk: msg.chunk,
                port: msg.port,
            });
        }
    }

    pub fn session_opened(&mut self, client: NodeId) {
        let open = self.sessions_open.entry(client).or_insert(0);
        *open += 1;
        let max = self.max_sessions_open.entry(client).or_insert(0);
        *max = (*max).max(*open);
    }

    pub fn note_multicast(&mut self, origin: NodeId, piece: u32) {
        self.multicasts.push((origin, piece));
    }

    pub fn session_closed(&mut self, client: NodeId) {
        *self.sessions_open.get_mut(&client).expect("session was open") -= 1;
    }
}

/// End-of-run bookkeeping reported by peers for invariant checks.
#[derive(Clone, Debug, Default)]
pub struct PeerAudit {
    pub upload_slots_in_use: usize,
    pub sessions_open: usize,
    /// (peer, piece) entries this peer's availability table claims.
    pub claims: Vec<(NodeId, u32)>,
    /// Pieces this peer verifiably holds.
    pub held: Vec<u32>,
}

/// Protocol state machines plug into the engine through this trait.
pub trait Agent {
    fn handle(&mut self, ctx: &mut Ctx<'_>, ev: AgentEvent);

    fn audit(&self) -> Option<PeerAudit> {
        None
    }
}

pub struct Ctx<'a> {
    pub sim: &'a mut Sim,
    pub board: &'a mut RunBoard,
}

/// Pumps engine events into agents until every tracked client settles (plus
/// an optional linger period) or the simulation runs out of events or time.
pub fn drive(
    sim: &mut Sim,
    agents: &mut [Option<Box<dyn Agent>>],
    board: &mut RunBoard,
    linger: SimTime,
) {
    let mut stop_at: Option<SimTime> = None;
    loop {
        if board.outstanding == 0 {
            match stop_at {
                None => stop_at = Some(sim.now() + linger),
                Some(at) if sim.now() >= at => break,
                Some(_) => {}
            }
        }
        let Some((node, ev)) = sim.step() else {
            break;
        };
        if let Some(mut agent) = agents[node.0 as usize].take() {
            let mut ctx = Ctx { sim, board };
            agent.handle(&mut ctx, ev);
            agents[node.0 as usize] = Some(agent);
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: Model,
    pub file_size: u64,
    pub piece_size: u32,
    pub seed: u64,
    /// Induced loss rate applied to every LAN spoke, both directions.
    pub loss_spokes: f64,
    /// Cross-traffic rate as a fraction of route bottleneck (two clients per
    /// island exchange CBR when positive).
    pub cbr_fraction: f64,
    /// Run only the first N clients (tests); all clients when absent.
    pub client_limit: Option<usize>,
    /// Keep the simulation running this long after the last client settles,
    /// letting in-flight transfers quiesce (used by invariant checks).
    pub linger: SimTime,
    pub params: ProtocolParams,
    pub engine: EngineConfig,
    pub record_handshakes: bool,
}

impl RunConfig {
    pub fn new(model: Model, seed: u64) -> Self {
        RunConfig {
            model,
            file_size: 1 << 20,
            piece_size: 256 * 1024,
            seed,
            loss_spokes: 0.0,
            cbr_fraction: 0.0,
            client_limit: None,
            linger: SimTime::ZERO,
            params: ProtocolParams::default(),
            engine: EngineConfig::default(),
            record_handshakes: false,
        }
    }
}

pub struct RunOutput {
    pub ledger: LedgerBook,
    pub records: Vec<DownloadRecord>,
    pub trace_hash: u64,
    pub end_time: SimTime,
    pub completed: usize,
    pub failed: usize,
    /// Every completed client assembled a byte-identical copy.
    pub all_files_match: bool,
    pub hs_trace: Vec<HsTraceEntry>,
    pub max_sessions_open: BTreeMap<NodeId, usize>,
    pub multicasts: Vec<(NodeId, u32)>,
    pub audits: Vec<(NodeId, PeerAudit)>,
}

/// Executes one full model run over the topology.
pub fn run_model(topo: &Arc<Topology>, cfg: &RunConfig) -> RunOutput {
    let routes = Arc::new(compute_routes(topo));
    let mut sim = Sim::new(topo.clone(), routes, cfg.engine.clone(), cfg.seed);
    let hub = sim.hub();

    let seeders = topo.seeder_ids();
    assert_eq!(seeders.len(), 1, "exactly one seeder expected");
    let seeder = seeders[0];
    let mut clients = topo.client_ids();
    if let Some(limit) = cfg.client_limit {
        clients.truncate(limit);
    }

    let file = FileId(0);
    let bytes = Arc::new(synth_file_bytes(cfg.seed, cfg.file_size as usize));
    let (spec, pieces) = make_pieces("shared-file", &bytes, cfg.piece_size).expect("valid file");
    let spec = Arc::new(spec);

    // Induced loss lives on the LAN spokes.
    if cfg.loss_spokes > 0.0 {
        for (i, l) in topo.links().iter().enumerate() {
            let spoke = l.kind == LinkKind::Lan
                && (topo.node(l.a).kind.is_end_node() || topo.node(l.b).kind.is_end_node());
            if spoke {
                let id = crate::topology::LinkId(i as u32);
                sim.set_loss(id, crate::topology::Dir::Forward, cfg.loss_spokes)
                    .unwrap();
                sim.set_loss(id, crate::topology::Dir::Reverse, cfg.loss_spokes)
                    .unwrap();
            }
        }
    }

    // Background congestion: one CBR pair per island.
    if cfg.cbr_fraction > 0.0 {
        for island in 0..topo.islands().len() as u32 {
            let members: Vec<NodeId> = topo
                .island_end_nodes(island)
                .into_iter()
                .filter(|&n| topo.node(n).kind == NodeKind::Client)
                .collect();
            if members.len() < 2 {
                continue;
            }
            let mut rng = hub.keyed("cbr-pick", island as u64, 0);
            let picks = index::sample(&mut rng, members.len(), 2);
            sim.start_cbr(
                members[picks.index(0)],
                members[picks.index(1)],
                cfg.cbr_fraction,
                1000,
            )
            .unwrap();
        }
    }

    let params = Arc::new(cfg.params.clone());
    let mut agents: Vec<Option<Box<dyn Agent>>> = (0..topo.nodes().len()).map(|_| None).collect();

    match cfg.model {
        Model::Www => {
            agents[seeder.0 as usize] =
                Some(Box::new(WwwSeederAgent::new(seeder, file, bytes.clone())));
            for &c in &clients {
                agents[c.0 as usize] = Some(Box::new(WwwClientAgent::new(
                    c,
                    seeder,
                    file,
                    params.clone(),
                )));
            }
        }
        Model::P2p | Model::Hybrid => {
            let island_mates = |me: NodeId| -> Vec<NodeId> {
                topo.island_of(me)
                    .map(|island| {
                        topo.island_end_nodes(island)
                            .into_iter()
                            .filter(|&n| n != me && topo.node(n).kind == NodeKind::Client)
                            .collect()
                    })
                    .unwrap_or_default()
            };
            let mk_setup = |me: NodeId, is_seeder: bool| PeerSetup {
                me,
                is_seeder,
                model: cfg.model,
                spec: spec.clone(),
                file,
                island: topo.island_of(me),
                island_mates: if cfg.model == Model::Hybrid {
                    island_mates(me)
                } else {
                    Vec::new()
                },
                seeder_id: seeder,
                pieces: if is_seeder { pieces.clone() } else { Vec::new() },
                params: params.clone(),
                hub,
                rng: hub.keyed("peer-rng", me.0 as u64, 0),
                tracker_rng: is_seeder.then(|| hub.stream("tracker")),
                scripted: false,
                passive: false,
                scripted_neighbors: Vec::new(),
                scripted_avail: Vec::new(),
                mute_until: None,
            };
            agents[seeder.0 as usize] = Some(Box::new(PeerAgent::new(mk_setup(seeder, true))));
            for &c in &clients {
                agents[c.0 as usize] = Some(Box::new(PeerAgent::new(mk_setup(c, false))));
            }
        }
    }

    sim.schedule_agent_start(seeder, SimTime::ZERO);
    for &c in &clients {
        let frac: f64 = hub.keyed("start-jitter", c.0 as u64, 0).gen();
        sim.schedule_agent_start(c, cfg.params.start_jitter_max.mul_f64(frac));
    }

    let tracked: Vec<(NodeId, String)> = clients
        .iter()
        .map(|&c| (c, topo.node_name(c).to_string()))
        .collect();
    let mut board = RunBoard::new(tracked, bytes, cfg.record_handshakes);

    drive(&mut sim, &mut agents, &mut board, cfg.linger);
    sim.assert_conservation();
    let audits: Vec<(NodeId, PeerAudit)> = agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            a.as_ref()
                .and_then(|a| a.audit())
                .map(|audit| (NodeId(i as u32), audit))
        })
        .collect();

    let records: Vec<DownloadRecord> = board
        .records
        .iter()
        .map(|r| DownloadRecord {
            client: r.client,
            client_name: r.name.clone(),
            start: r.start,
            status: match r.finish {
                Some(finish) => DownloadStatus::Completed { finish },
                None => DownloadStatus::Failed,
            },
            bytes_received: sim.delivered_payload(r.client),
            retransmissions: r.retx,
        })
        .collect();
    let completed = records
        .iter()
        .filter(|r| matches!(r.status, DownloadStatus::Completed { .. }))
        .count();
    let failed = records.len() - completed;
    let all_files_match = board
        .records
        .iter()
        .filter(|r| r.finish.is_some())
        .all(|r| r.file_ok);

    RunOutput {
        ledger: std::mem::replace(&mut sim.ledger, LedgerBook::new(0, false)),
        records,
        trace_hash: sim.trace_hash(),
        end_time: sim.now(),
        completed,
        failed,
        all_files_match,
        hs_trace: board.hs_trace.take().unwrap_or_default(),
        max_sessions_open: board.max_sessions_open.clone(),
        multicasts: board.multicasts.clone(),
        audits,
    }
}
