//! The per-host protocol machine: availability tracking, piece selection and
//! batched dispatch, the Type1–Type4 chunk handshake on both sides, bounded
//! upload slots with reciprocation, and island multicast with hold-off
//! suppression and unicast repair.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::chunking::{verify_piece, FileId, FileSpec, Piece, PieceMap, PieceStore};
use crate::engine::{AgentEvent, FlowChunk, FlowId, FlowOutcome};
use crate::rng::{fnv1a_fold, RngHub};
use crate::time::SimTime;
use crate::topology::NodeId;

use super::messages::{ControlMsg, HandshakeKind, HandshakeMessage};
use super::select::{phase_for, select_piece};
use super::tracker::TrackerState;
use super::{Agent, Ctx, Model, ProtocolParams};

// Timer key layout: [kind:8][a:24][b:32].
const K_HS_TIMEOUT: u64 = 1;
const K_RETRY_PIECE: u64 = 2;
const K_CHOKE_EVAL: u64 = 3;
const K_ANNOUNCE: u64 = 4;
const K_HOLDOFF: u64 = 5;
const K_RESCAN: u64 = 6;
const K_RESERVATION: u64 = 7;
const K_TRANSFER_START: u64 = 8;

fn key(kind: u64, a: u32, b: u32) -> u64 {
    (kind << 56) | ((a as u64 & 0xff_ffff) << 32) | b as u64
}

fn unpack(k: u64) -> (u64, u32, u32) {
    (k >> 56, ((k >> 32) & 0xff_ffff) as u32, k as u32)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum SessState {
    AwaitReply,
    AwaitTransfer,
    Transferring,
    Closed,
}

struct Session {
    piece: u32,
    candidates: Vec<NodeId>,
    current: usize,
    state: SessState,
    gen: u32,
    flow: Option<FlowId>,
    listen_port: u32,
}

impl Session {
    fn target(&self) -> NodeId {
        self.candidates[self.current]
    }
}

struct Reservation {
    requester: NodeId,
    chunk: u32,
    gen: u32,
    /// Set once Type4 arrived and the upload flow is running.
    active: bool,
}

struct FragBuf {
    buf: Vec<u8>,
    got: Vec<bool>,
    missing: usize,
}

impl FragBuf {
    fn new(piece_len: u32, frag_payload: u32) -> Self {
        let frags = (piece_len as usize).div_ceil(frag_payload as usize);
        FragBuf {
            buf: vec![0; piece_len as usize],
            got: vec![false; frags],
            missing: frags,
        }
    }
}

/// Everything needed to instantiate one peer.
pub struct PeerSetup {
    pub me: NodeId,
    pub is_seeder: bool,
    pub model: Model,
    pub spec: Arc<FileSpec>,
    pub file: FileId,
    pub island: Option<u32>,
    /// Same-island end nodes, excluding this one.
    pub island_mates: Vec<NodeId>,
    pub seeder_id: NodeId,
    /// Initial verified content (the seeder's pieces).
    pub pieces: Vec<Piece>,
    pub params: Arc<ProtocolParams>,
    pub hub: RngHub,
    pub rng: ChaCha12Rng,
    pub tracker_rng: Option<ChaCha12Rng>,
    /// Static peer set and deterministic ordering, for scripted scenarios.
    pub scripted: bool,
    /// Responder-only peer: serves requests but never downloads.
    pub passive: bool,
    pub scripted_neighbors: Vec<NodeId>,
    /// Pre-seeded availability claims, for scripted scenarios.
    pub scripted_avail: Vec<(NodeId, Vec<u32>)>,
    /// Drop every incoming control message before this time.
    pub mute_until: Option<SimTime>,
}

pub struct PeerAgent {
    me: NodeId,
    is_seeder: bool,
    model: Model,
    params: Arc<ProtocolParams>,
    spec: Arc<FileSpec>,
    file: FileId,
    island: Option<u32>,
    island_mates: BTreeSet<NodeId>,
    seeder_id: NodeId,

    mine: PieceMap,
    store: PieceStore,

    neighbors: Vec<NodeId>,
    neighbor_set: BTreeSet<NodeId>,
    /// Peers we have sent our bitfield to; a hello exchange happens once.
    helloed: BTreeSet<NodeId>,
    peer_maps: BTreeMap<NodeId, PieceMap>,
    avail_count: Vec<u32>,
    /// Availability restricted to island mates.
    inside_avail: Vec<u32>,

    sessions: Vec<Session>,
    active_by_piece: BTreeMap<u32, u32>,
    inflight_sessions: usize,
    piece_attempts: Vec<u32>,
    deferred: Vec<bool>,
    next_listen_port: u32,

    reservations: Vec<Option<Reservation>>,
    next_res_gen: u32,
    upload_flows: BTreeMap<FlowId, usize>,

    received_window: BTreeMap<NodeId, u64>,
    unchoked: BTreeSet<NodeId>,
    choke_epoch: u64,

    frag_bufs: BTreeMap<(NodeId, u32), FragBuf>,
    last_frag_seen: Vec<Option<SimTime>>,
    island_have_seen: Vec<bool>,
    holdoff_armed: Vec<bool>,
    rescan_armed: bool,
    /// Earliest time an outside-island fetch of each piece may start; the
    /// island's members are staggered so one copy usually suffices.
    outside_gate: Vec<Option<SimTime>>,
    stagger_rank: Vec<u32>,
    hub: RngHub,

    start_time: SimTime,
    completed: bool,
    failed: bool,
    retx_accum: u64,
    rng: ChaCha12Rng,
    tracker: Option<TrackerState>,
    tracker_rng: Option<ChaCha12Rng>,
    scripted: bool,
    passive: bool,
    scripted_neighbors: Vec<NodeId>,
    scripted_avail: Vec<(NodeId, Vec<u32>)>,
    mute_until: Option<SimTime>,
}

impl PeerAgent {
    pub fn new(setup: PeerSetup) -> Self {
        let pieces_total = setup.spec.piece_count();
        let mut mine = PieceMap::new(pieces_total);
        let mut store: PieceStore = vec![None; pieces_total as usize];
        for p in &setup.pieces {
            debug_assert!(verify_piece(&p.bytes, &setup.spec.digests[p.index as usize]));
            mine.mark(p.index);
            store[p.index as usize] = Some(p.bytes.clone());
        }
        let tracker = setup.is_seeder.then(|| {
            let mut t = TrackerState::new();
            t.register(setup.me);
            t
        });
        // Deterministic per-piece permutation of this island's members: the
        // member ranked 0 fetches a missing piece from outside first, rank 1
        // only if it is still missing a stagger interval later, and so on.
        let fetch_hash = |node: NodeId, piece: u32| {
            let h = fnv1a_fold(setup.hub.seed() ^ 0x5747_4752, node.0 as u64);
            fnv1a_fold(h, piece as u64)
        };
        let stagger_rank: Vec<u32> = (0..pieces_total)
            .map(|p| {
                let me_key = (fetch_hash(setup.me, p), setup.me);
                setup
                    .island_mates
                    .iter()
                    .filter(|&&m| (fetch_hash(m, p), m) < me_key)
                    .count() as u32
            })
            .collect();
        PeerAgent {
            me: setup.me,
            is_seeder: setup.is_seeder,
            model: setup.model,
            spec: setup.spec,
            file: setup.file,
            island: setup.island,
            island_mates: setup.island_mates.into_iter().collect(),
            seeder_id: setup.seeder_id,
            mine,
            store,
            neighbors: Vec::new(),
            neighbor_set: BTreeSet::new(),
            helloed: BTreeSet::new(),
            peer_maps: BTreeMap::new(),
            avail_count: vec![0; pieces_total as usize],
            inside_avail: vec![0; pieces_total as usize],
            sessions: Vec::new(),
            active_by_piece: BTreeMap::new(),
            inflight_sessions: 0,
            piece_attempts: vec![0; pieces_total as usize],
            deferred: vec![false; pieces_total as usize],
            next_listen_port: 0,
            reservations: (0..setup.params.port_pool).map(|_| None).collect(),
            next_res_gen: 0,
            upload_flows: BTreeMap::new(),
            received_window: BTreeMap::new(),
            unchoked: BTreeSet::new(),
            choke_epoch: 0,
            frag_bufs: BTreeMap::new(),
            last_frag_seen: vec![None; pieces_total as usize],
            island_have_seen: vec![false; pieces_total as usize],
            holdoff_armed: vec![false; pieces_total as usize],
            rescan_armed: false,
            outside_gate: vec![None; pieces_total as usize],
            stagger_rank,
            hub: setup.hub,
            start_time: SimTime::ZERO,
            completed: false,
            failed: false,
            retx_accum: 0,
            rng: setup.rng,
            tracker,
            tracker_rng: setup.tracker_rng,
            scripted: setup.scripted,
            passive: setup.passive,
            scripted_neighbors: setup.scripted_neighbors,
            scripted_avail: setup.scripted_avail,
            mute_until: setup.mute_until,
            params: setup.params,
        }
    }

    fn hybrid(&self) -> bool {
        self.model == Model::Hybrid
    }

    fn choking_active(&self) -> bool {
        self.params.choking_enabled && (self.model != Model::Hybrid || self.params.hybrid_choking)
    }

    fn note_availability(&mut self, peer: NodeId, piece: u32, now: SimTime) {
        if peer == self.me {
            return;
        }
        let map = self
            .peer_maps
            .entry(peer)
            .or_insert_with(|| PieceMap::new(self.spec.piece_count()));
        if !map.has(piece) {
            map.mark(piece);
            self.avail_count[piece as usize] += 1;
            if self.island_mates.contains(&peer) {
                self.inside_avail[piece as usize] += 1;
            } else if self.outside_gate[piece as usize].is_none() {
                let stagger = self.params.outside_fetch_stagger;
                self.outside_gate[piece as usize] =
                    Some(now + stagger.mul_f64(self.stagger_rank[piece as usize] as f64));
            }
        }
    }

    fn add_neighbor(&mut self, ctx: &mut Ctx<'_>, peer: NodeId, introduce: bool) {
        if peer == self.me {
            return;
        }
        if self.neighbor_set.insert(peer) {
            self.neighbors.push(peer);
            self.peer_maps
                .entry(peer)
                .or_insert_with(|| PieceMap::new(self.spec.piece_count()));
            self.recompute_unchoked();
        }
        if introduce && self.helloed.insert(peer) {
            let pieces: Vec<u32> = self.mine.held_indices().collect();
            ctx.sim.send_control(self.me, peer, ControlMsg::Hello { pieces });
        }
    }

    /// Reciprocation: the most generous peers of the last window hold the
    /// regular slots, plus rotating optimistic ones. Equal generosity is
    /// broken by a per-epoch hash so no fixed clique forms among idle peers.
    fn recompute_unchoked(&mut self) {
        if !self.choking_active() {
            return;
        }
        let epoch_key = fnv1a_fold(
            fnv1a_fold(self.hub.seed() ^ 0x6368_6f6b, self.me.0 as u64),
            self.choke_epoch,
        );
        let tiebreak = |n: NodeId| fnv1a_fold(epoch_key, n.0 as u64);
        let mut ranked: Vec<NodeId> = self.neighbors.clone();
        ranked.sort_by(|a, b| {
            let ba = self.received_window.get(a).copied().unwrap_or(0);
            let bb = self.received_window.get(b).copied().unwrap_or(0);
            bb.cmp(&ba).then(tiebreak(*a).cmp(&tiebreak(*b))).then(a.cmp(b))
        });
        let regular = self.params.choke_slots.min(ranked.len());
        let mut set: BTreeSet<NodeId> = ranked[..regular].iter().copied().collect();
        let rest: Vec<NodeId> = ranked[regular..].to_vec();
        for _ in 0..self.params.optimistic_slots {
            if set.len() >= ranked.len() {
                break;
            }
            loop {
                let pick = *rest.choose(&mut self.rng).unwrap();
                if set.insert(pick) {
                    break;
                }
            }
        }
        self.unchoked = set;
    }

    fn allows_upload_to(&self, requester: NodeId) -> bool {
        if !self.choking_active() || self.unchoked.contains(&requester) {
            return true;
        }
        self.params.island_choke_bypass && self.hybrid() && self.island_mates.contains(&requester)
    }

    fn send_handshake(&mut self, ctx: &mut Ctx<'_>, to: NodeId, msg: HandshakeMessage) {
        ctx.board.record_hs(ctx.sim.now(), self.me, to, msg);
        ctx.sim.send_control(self.me, to, ControlMsg::Handshake(msg));
    }

    // ------------------------------------------------------------------
    // Download side: head, sessions, handshake initiator.
    // ------------------------------------------------------------------


    fn try_dispatch(&mut self, ctx: &mut Ctx<'_>) {
        if self.is_seeder || self.passive || self.completed || self.failed {
            return;
        }
        while self.inflight_sessions < self.params.batch_size {
            let Some(piece) = self.pick_piece(ctx) else {
                break;
            };
            self.open_session(ctx, piece);
        }
    }

    fn pick_piece(&mut self, ctx: &mut Ctx<'_>) -> Option<u32> {
        let now = ctx.sim.now();
        let fresh_window = self.params.multicast_fresh_window;
        let mut exclude: BTreeSet<u32> = self.active_by_piece.keys().copied().collect();
        for p in 0..self.spec.piece_count() {
            if self.deferred[p as usize] {
                exclude.insert(p);
            }
        }
        // A piece with recent multicast activity is on its way over the
        // island; hold the fetch until the freshness window lapses. Pieces
        // only held outside the island wait for this member's stagger gate.
        let mut earliest_expiry: Option<SimTime> = None;
        let mut postpone = |exclude: &mut BTreeSet<u32>, p: u32, until: SimTime| {
            exclude.insert(p);
            earliest_expiry = Some(match earliest_expiry {
                Some(e) if e < until => e,
                _ => until,
            });
        };
        if self.hybrid() {
            for p in 0..self.spec.piece_count() {
                if self.mine.has(p) || exclude.contains(&p) {
                    continue;
                }
                if let Some(seen) = self.last_frag_seen[p as usize] {
                    let expiry = seen + fresh_window;
                    if expiry > now {
                        postpone(&mut exclude, p, expiry);
                        continue;
                    }
                }
                if self.inside_avail[p as usize] == 0 {
                    if let Some(gate) = self.outside_gate[p as usize] {
                        if gate > now {
                            postpone(&mut exclude, p, gate);
                        }
                    }
                }
            }
        }
        let picked = select_piece(
            &self.avail_count,
            &self.mine,
            &exclude,
            phase_for(&self.mine),
            &mut self.rng,
            self.scripted,
        );
        if picked.is_none() && !self.rescan_armed {
            if let Some(expiry) = earliest_expiry {
                self.rescan_armed = true;
                let _ = ctx.sim.set_timer(
                    self.me,
                    expiry + SimTime::from_nanos(1),
                    key(K_RESCAN, 0, 0),
                );
            }
        }
        picked
    }

    fn open_session(&mut self, ctx: &mut Ctx<'_>, piece: u32) {
        let mut candidates: Vec<NodeId> = self
            .peer_maps
            .iter()
            .filter(|(_, map)| map.has(piece))
            .map(|(&n, _)| n)
            .collect();
        debug_assert!(!candidates.is_empty());
        if !self.scripted {
            candidates.shuffle(&mut self.rng);
            if self.hybrid() && self.params.island_source_first {
                // Island sources are cheaper in every way; cross the access
                // link only when nobody inside holds the piece.
                let (inside, outside): (Vec<NodeId>, Vec<NodeId>) = candidates
                    .into_iter()
                    .partition(|n| self.island_mates.contains(n));
                candidates = if inside.is_empty() { outside } else { inside };
            }
        }
        let idx = self.sessions.len() as u32;
        self.sessions.push(Session {
            piece,
            candidates,
            current: 0,
            state: SessState::AwaitReply,
            gen: 0,
            flow: None,
            listen_port: 0,
        });
        self.active_by_piece.insert(piece, idx);
        self.inflight_sessions += 1;
        ctx.board.session_opened(self.me);
        self.send_request(ctx, idx);
    }

    fn send_request(&mut self, ctx: &mut Ctx<'_>, idx: u32) {
        let (to, chunk, gen) = {
            let s = &self.sessions[idx as usize];
            (s.target(), s.piece, s.gen)
        };
        self.send_handshake(ctx, to, HandshakeMessage::request(chunk));
        let at = ctx.sim.now() + self.params.handshake_timeout;
        let _ = ctx.sim.set_timer(self.me, at, key(K_HS_TIMEOUT, idx, gen));
    }

    /// Moves to the next candidate, or defers the piece for a later retry of
    /// the same hosts.
    fn advance_session(&mut self, ctx: &mut Ctx<'_>, idx: u32) {
        let s = &mut self.sessions[idx as usize];
        s.gen += 1;
        s.current += 1;
        if s.current < s.candidates.len() {
            self.send_request(ctx, idx);
        } else {
            self.close_session(ctx, idx, false);
        }
    }

    fn close_session(&mut self, ctx: &mut Ctx<'_>, idx: u32, success: bool) {
        let piece = {
            let s = &mut self.sessions[idx as usize];
            if s.state == SessState::Closed {
                return;
            }
            s.state = SessState::Closed;
            s.gen += 1;
            s.piece
        };
        self.active_by_piece.remove(&piece);
        self.inflight_sessions -= 1;
        ctx.board.session_closed(self.me);
        if !success && !self.mine.has(piece) {
            self.piece_attempts[piece as usize] += 1;
            if self.piece_attempts[piece as usize] >= self.params.attempt_limit {
                if !self.failed && !self.completed {
                    self.failed = true;
                    ctx.board.mark_failed(self.me);
                }
            } else {
                self.deferred[piece as usize] = true;
                let frac: f64 = self
                    .hub
                    .keyed(
                        "retry-jitter",
                        ((self.me.0 as u64) << 32) | piece as u64,
                        self.piece_attempts[piece as usize] as u64,
                    )
                    .gen();
                let backoff = self.params.retry_backoff.mul_f64(1.0 + 0.5 * frac);
                let at = ctx.sim.now() + backoff;
                let _ = ctx.sim.set_timer(self.me, at, key(K_RETRY_PIECE, piece, 0));
                if self.hybrid() && self.inside_avail[piece as usize] == 0 {
                    let stagger = self
                        .params
                        .outside_fetch_stagger
                        .mul_f64(self.stagger_rank[piece as usize] as f64);
                    self.outside_gate[piece as usize] = Some(at + stagger);
                }
            }
        }
        self.try_dispatch(ctx);
    }

    fn session_for_reply(&self, from: NodeId, chunk: u32) -> Option<u32> {
        let idx = *self.active_by_piece.get(&chunk)?;
        let s = &self.sessions[idx as usize];
        (s.state == SessState::AwaitReply && s.target() == from).then_some(idx)
    }

    fn on_handshake_reply(&mut self, ctx: &mut Ctx<'_>, from: NodeId, msg: HandshakeMessage) {
        match msg.kind {
            HandshakeKind::Type2 => {
                let Some(idx) = self.session_for_reply(from, msg.chunk) else {
                    // Stale accept; the responder's reservation will time out.
                    return;
                };
                let port = self.next_listen_port;
                self.next_listen_port += 1;
                {
                    let s = &mut self.sessions[idx as usize];
                    s.state = SessState::AwaitTransfer;
                    s.gen += 1;
                    s.listen_port = port;
                }
                self.send_handshake(ctx, from, HandshakeMessage::confirm(msg.chunk, port));
                let gen = self.sessions[idx as usize].gen;
                let at = ctx.sim.now() + self.params.handshake_timeout;
                let _ = ctx
                    .sim
                    .set_timer(self.me, at, key(K_TRANSFER_START, idx, gen));
            }
            HandshakeKind::Type3a | HandshakeKind::Type3b => {
                if let Some(idx) = self.session_for_reply(from, msg.chunk) {
                    self.advance_session(ctx, idx);
                }
            }
            _ => {}
        }
    }

    fn on_flow_started(&mut self, ctx: &mut Ctx<'_>, flow: FlowId, from: NodeId, offset: u64) {
        let piece = self.spec.piece_at(offset);
        let matched = self
            .active_by_piece
            .get(&piece)
            .copied()
            .filter(|&idx| {
                let s = &self.sessions[idx as usize];
                s.state == SessState::AwaitTransfer && s.target() == from
            });
        match matched {
            Some(idx) => {
                let s = &mut self.sessions[idx as usize];
                s.state = SessState::Transferring;
                s.gen += 1;
                s.flow = Some(flow);
            }
            None => {
                // No session expects this transfer (already satisfied over
                // multicast or timed out); stop the sender politely.
                ctx.sim.cancel_flow(flow);
            }
        }
    }

    fn on_piece_flow_received(
        &mut self,
        ctx: &mut Ctx<'_>,
        flow: FlowId,
        from: NodeId,
        bytes: Vec<u8>,
        offset: u64,
        retx: u64,
    ) {
        let piece = self.spec.piece_at(offset);
        let session = self
            .sessions
            .iter()
            .position(|s| s.flow == Some(flow) && s.state == SessState::Transferring)
            .map(|i| i as u32);
        let verified = verify_piece(&bytes, &self.spec.digests[piece as usize]);
        if verified && !self.mine.has(piece) {
            self.retx_accum += retx;
            self.on_piece_verified(ctx, piece, Arc::new(bytes), Some(from), false, Some(flow));
        }
        if let Some(idx) = session {
            self.close_session(ctx, idx, verified);
        }
    }

    fn on_piece_verified(
        &mut self,
        ctx: &mut Ctx<'_>,
        piece: u32,
        bytes: Arc<Vec<u8>>,
        origin: Option<NodeId>,
        via_multicast: bool,
        delivering_flow: Option<FlowId>,
    ) {
        debug_assert!(verify_piece(&bytes, &self.spec.digests[piece as usize]));
        self.mine.mark(piece);
        self.store[piece as usize] = Some(bytes);
        self.frag_bufs.retain(|&(_, p), _| p != piece);

        if let Some(src) = origin {
            *self.received_window.entry(src).or_insert(0) += self.spec.piece_len(piece) as u64;
        }
        let neighbors = self.neighbors.clone();
        for n in neighbors {
            ctx.sim.send_control(self.me, n, ControlMsg::Have { piece });
        }

        // A piece fetched over unicast from outside the island is shared with
        // the island over multicast, unless someone else is already doing it.
        if self.hybrid() && !via_multicast && !self.is_seeder {
            let outside = origin
                .map(|src| !self.island_mates.contains(&src))
                .unwrap_or(false);
            if outside
                && self.island.is_some()
                && !self.holdoff_armed[piece as usize]
                && !self.multicast_suppressed(piece)
            {
                self.holdoff_armed[piece as usize] = true;
                let frac: f64 = ctx
                    .sim
                    .hub()
                    .keyed("mcast-holdoff", self.me.0 as u64, piece as u64)
                    .gen();
                let at = ctx.sim.now() + self.params.multicast_holdoff_max.mul_f64(frac);
                let _ = ctx.sim.set_timer(self.me, at, key(K_HOLDOFF, piece, 0));
            }
        }

        // A session fetching this piece is now pointless; tear down any
        // transfer other than the one that just delivered the bytes.
        if let Some(&idx) = self.active_by_piece.get(&piece) {
            let (state, flow) = {
                let s = &self.sessions[idx as usize];
                (s.state, s.flow)
            };
            match state {
                SessState::Transferring => {
                    if let Some(f) = flow {
                        if Some(f) != delivering_flow {
                            ctx.sim.cancel_flow(f);
                        }
                    }
                }
                SessState::AwaitTransfer => {
                    let target = self.sessions[idx as usize].target();
                    let offset = self.spec.piece_offset(piece);
                    if let Some(f) = ctx.sim.find_incoming_flow(self.me, target, self.file, offset)
                    {
                        ctx.sim.cancel_flow(f);
                    }
                }
                _ => {}
            }
            self.close_session(ctx, idx, true);
        }

        if self.mine.is_complete() && !self.completed && !self.failed {
            self.completed = true;
            let assembled = crate::chunking::assemble(&self.spec, &self.store);
            let ok = assembled
                .map(|bytes| bytes == *ctx.board.seeder_bytes)
                .unwrap_or(false);
            ctx.board
                .mark_complete(self.me, ctx.sim.now(), ok, self.retx_accum);
        }
        self.try_dispatch(ctx);
    }

    fn multicast_suppressed(&self, piece: u32) -> bool {
        self.last_frag_seen[piece as usize].is_some() || self.island_have_seen[piece as usize]
    }

    // ------------------------------------------------------------------
    // Upload side: handshake responder, port pool, reservations.
    // ------------------------------------------------------------------

    fn on_request(&mut self, ctx: &mut Ctx<'_>, from: NodeId, chunk: u32) {
        if !self.mine.has(chunk) {
            self.send_handshake(ctx, from, HandshakeMessage::reject_no_chunk(chunk));
            return;
        }
        if !self.allows_upload_to(from) {
            self.send_handshake(ctx, from, HandshakeMessage::reject_no_port(chunk));
            return;
        }
        let Some(slot) = self.reservations.iter().position(|r| r.is_none()) else {
            self.send_handshake(ctx, from, HandshakeMessage::reject_no_port(chunk));
            return;
        };
        let gen = self.next_res_gen;
        self.next_res_gen += 1;
        self.reservations[slot] = Some(Reservation {
            requester: from,
            chunk,
            gen,
            active: false,
        });
        let at = ctx.sim.now() + self.params.handshake_timeout;
        let _ = ctx
            .sim
            .set_timer(self.me, at, key(K_RESERVATION, slot as u32, gen));
        self.send_handshake(ctx, from, HandshakeMessage::accept(chunk, slot as u32));
    }

    fn on_confirm(&mut self, ctx: &mut Ctx<'_>, from: NodeId, chunk: u32) {
        // The confirmation's port names the requester's listening slot; our
        // own reservation is keyed by who asked for what.
        let Some(slot) = self.reservations.iter().position(|r| {
            r.as_ref()
                .is_some_and(|r| r.requester == from && r.chunk == chunk && !r.active)
        }) else {
            return;
        };
        let res = self.reservations[slot].as_mut().unwrap();
        res.active = true;
        // Serving an unverified piece is impossible by construction; the
        // reservation was only granted against the verified map.
        debug_assert!(self.mine.has(chunk));
        let bytes = self.store[chunk as usize]
            .as_ref()
            .expect("verified piece has bytes")
            .clone();
        let flow = ctx.sim.start_flow(
            self.me,
            from,
            vec![FlowChunk {
                file: self.file,
                offset: self.spec.piece_offset(chunk),
                bytes,
            }],
        );
        self.upload_flows.insert(flow, slot);
    }

    fn release_upload(&mut self, flow: FlowId) {
        if let Some(slot) = self.upload_flows.remove(&flow) {
            self.reservations[slot] = None;
        }
    }

    // ------------------------------------------------------------------
    // Multicast reception.
    // ------------------------------------------------------------------

    fn on_multicast_frag(
        &mut self,
        ctx: &mut Ctx<'_>,
        origin: NodeId,
        piece: u32,
        piece_len: u32,
        offset_in_piece: u32,
        payload: &[u8],
    ) {
        self.last_frag_seen[piece as usize] = Some(ctx.sim.now());
        if self.mine.has(piece) {
            return;
        }
        let frag_payload = ctx.sim.config().data_payload;
        let buf = self
            .frag_bufs
            .entry((origin, piece))
            .or_insert_with(|| FragBuf::new(piece_len, frag_payload));
        let idx = (offset_in_piece / frag_payload) as usize;
        if buf.got[idx] {
            return;
        }
        buf.got[idx] = true;
        buf.missing -= 1;
        let at = offset_in_piece as usize;
        buf.buf[at..at + payload.len()].copy_from_slice(payload);
        if buf.missing == 0 {
            let bytes = self.frag_bufs.remove(&(origin, piece)).unwrap().buf;
            if verify_piece(&bytes, &self.spec.digests[piece as usize]) {
                self.on_piece_verified(ctx, piece, Arc::new(bytes), Some(origin), true, None);
            }
        }
    }

    // ------------------------------------------------------------------
    // Timers and the main event dispatch.
    // ------------------------------------------------------------------

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, k: u64) {
        let (kind, a, b) = unpack(k);
        match kind {
            K_HS_TIMEOUT => {
                let idx = a;
                let s = &self.sessions[idx as usize];
                if s.state == SessState::AwaitReply && s.gen == b {
                    // Silent candidate; abort the attempt gracefully.
                    self.advance_session(ctx, idx);
                }
            }
            K_TRANSFER_START => {
                let idx = a;
                let (stale, target, piece) = {
                    let s = &self.sessions[idx as usize];
                    (
                        !(s.state == SessState::AwaitTransfer && s.gen == b),
                        s.target(),
                        s.piece,
                    )
                };
                if stale {
                    return;
                }
                let offset = self.spec.piece_offset(piece);
                if let Some(f) = ctx.sim.find_incoming_flow(self.me, target, self.file, offset) {
                    ctx.sim.cancel_flow(f);
                }
                self.close_session(ctx, idx, false);
            }
            K_RETRY_PIECE => {
                let piece = a;
                self.deferred[piece as usize] = false;
                self.try_dispatch(ctx);
            }
            K_CHOKE_EVAL => {
                self.choke_epoch += 1;
                self.recompute_unchoked();
                self.received_window.clear();
                let at = ctx.sim.now() + self.params.choke_interval;
                let _ = ctx.sim.set_timer(self.me, at, key(K_CHOKE_EVAL, 0, 0));
            }
            K_ANNOUNCE => {
                if !self.scripted {
                    ctx.sim
                        .send_control(self.me, self.seeder_id, ControlMsg::Announce);
                    let interval = if self.neighbors.is_empty() {
                        self.params.retry_backoff
                    } else {
                        self.params.announce_interval
                    };
                    let _ = ctx
                        .sim
                        .set_timer(self.me, ctx.sim.now() + interval, key(K_ANNOUNCE, 0, 0));
                }
            }
            K_HOLDOFF => {
                let piece = a;
                if self.mine.has(piece) && !self.multicast_suppressed(piece) {
                    if let Some(island) = self.island {
                        let bytes = self.store[piece as usize]
                            .as_ref()
                            .expect("multicast of verified piece")
                            .clone();
                        ctx.board.note_multicast(self.me, piece);
                        ctx.sim.start_multicast(
                            self.me,
                            island,
                            self.params.multicast_ttl,
                            self.file,
                            piece,
                            self.spec.piece_offset(piece),
                            bytes,
                        );
                    }
                }
            }
            K_RESCAN => {
                self.rescan_armed = false;
                self.try_dispatch(ctx);
            }
            K_RESERVATION => {
                let slot = a as usize;
                if let Some(res) = &self.reservations[slot] {
                    if res.gen == b && !res.active {
                        self.reservations[slot] = None;
                    }
                }
            }
            _ => unreachable!("unknown timer kind"),
        }
    }

    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        self.start_time = ctx.sim.now();
        if !self.is_seeder {
            ctx.board.mark_start(self.me, self.start_time);
        }
        if self.hybrid() && !self.is_seeder {
            if let Some(island) = self.island {
                ctx.sim.subscribe(island, self.me);
            }
        }
        if self.scripted {
            let neighbors = std::mem::take(&mut self.scripted_neighbors);
            for n in neighbors {
                self.add_neighbor(ctx, n, false);
            }
            let claims = std::mem::take(&mut self.scripted_avail);
            let now = ctx.sim.now();
            for (peer, pieces) in claims {
                for p in pieces {
                    self.note_availability(peer, p, now);
                }
            }
        } else {
            if !self.is_seeder {
                ctx.sim
                    .send_control(self.me, self.seeder_id, ControlMsg::Announce);
                let at = ctx.sim.now() + self.params.retry_backoff;
                let _ = ctx.sim.set_timer(self.me, at, key(K_ANNOUNCE, 0, 0));
            }
            if self.hybrid() {
                let mates: Vec<NodeId> = self.island_mates.iter().copied().collect();
                for m in mates {
                    self.add_neighbor(ctx, m, true);
                }
            }
        }
        if self.choking_active() {
            let phase: f64 = self
                .hub
                .keyed("choke-phase", self.me.0 as u64, 0)
                .gen::<f64>();
            let at = ctx.sim.now() + self.params.choke_interval.mul_f64(0.5 + 0.5 * phase);
            let _ = ctx.sim.set_timer(self.me, at, key(K_CHOKE_EVAL, 0, 0));
        }
        self.try_dispatch(ctx);
    }

    fn on_control(&mut self, ctx: &mut Ctx<'_>, from: NodeId, msg: ControlMsg) {
        if let Some(mute) = self.mute_until {
            if ctx.sim.now() < mute {
                return;
            }
        }
        match msg {
            ControlMsg::Announce => {
                if let Some(tracker) = &mut self.tracker {
                    tracker.register(from);
                    let peers = tracker
                        .announce(
                            from,
                            self.params.peer_list_size,
                            self.tracker_rng.as_mut().expect("tracker rng"),
                        )
                        .expect("registered peer");
                    ctx.sim
                        .send_control(self.me, from, ControlMsg::AnnounceResp { peers });
                    self.add_neighbor(ctx, from, false);
                }
            }
            ControlMsg::AnnounceResp { peers } => {
                for p in peers {
                    self.add_neighbor(ctx, p, true);
                }
                self.try_dispatch(ctx);
            }
            ControlMsg::Hello { pieces } => {
                self.add_neighbor(ctx, from, true);
                let now = ctx.sim.now();
                for p in pieces {
                    self.note_availability(from, p, now);
                    if self.island_mates.contains(&from) {
                        self.island_have_seen[p as usize] = true;
                    }
                }
                self.try_dispatch(ctx);
            }
            ControlMsg::Have { piece } => {
                self.note_availability(from, piece, ctx.sim.now());
                if self.island_mates.contains(&from) {
                    self.island_have_seen[piece as usize] = true;
                }
                self.try_dispatch(ctx);
            }
            ControlMsg::Handshake(hs) => match hs.kind {
                HandshakeKind::Type1 => self.on_request(ctx, from, hs.chunk),
                HandshakeKind::Type4 => {
                    debug_assert!(hs.port.is_some(), "Type4 carries a port");
                    self.on_confirm(ctx, from, hs.chunk)
                }
                _ => self.on_handshake_reply(ctx, from, hs),
            },
            ControlMsg::Get { .. } => {
                // Whole-file requests belong to the unicast model.
            }
        }
    }
}

impl Agent for PeerAgent {
    fn audit(&self) -> Option<super::PeerAudit> {
        let claims = self
            .peer_maps
            .iter()
            .flat_map(|(&peer, map)| map.held_indices().map(move |p| (peer, p)))
            .collect();
        Some(super::PeerAudit {
            upload_slots_in_use: self.reservations.iter().filter(|r| r.is_some()).count(),
            sessions_open: self.inflight_sessions,
            claims,
            held: self.mine.held_indices().collect(),
        })
    }

    fn handle(&mut self, ctx: &mut Ctx<'_>, ev: AgentEvent) {
        match ev {
            AgentEvent::Start => self.on_start(ctx),
            AgentEvent::Timer(k) => self.on_timer(ctx, k),
            AgentEvent::Control { from, msg } => self.on_control(ctx, from, msg),
            AgentEvent::MulticastFrag {
                origin,
                file,
                piece,
                piece_len,
                offset_in_piece,
                payload,
            } => {
                debug_assert_eq!(file, self.file);
                self.on_multicast_frag(
                    ctx,
                    origin,
                    piece,
                    piece_len,
                    offset_in_piece,
                    payload.bytes(),
                );
            }
            AgentEvent::FlowStarted {
                flow,
                from,
                offset,
                ..
            } => self.on_flow_started(ctx, flow, from, offset),
            AgentEvent::FlowDone { flow, outcome } => match outcome {
                FlowOutcome::Received {
                    from,
                    mut chunks,
                    retx,
                } => {
                    let chunk = chunks.pop().expect("piece flow has one chunk");
                    self.on_piece_flow_received(ctx, flow, from, chunk.bytes, chunk.offset, retx);
                }
                FlowOutcome::RecvFailed => {
                    if let Some(idx) = self
                        .sessions
                        .iter()
                        .position(|s| s.flow == Some(flow) && s.state == SessState::Transferring)
                    {
                        self.close_session(ctx, idx as u32, false);
                    }
                }
                FlowOutcome::RecvCancelled => {}
                FlowOutcome::Sent { .. }
                | FlowOutcome::SendFailed
                | FlowOutcome::SendCancelled => self.release_upload(flow),
            },
        }
    }
}
