//! Reliable unicast flows: fixed-window ARQ with per-segment acknowledgment
//! and timeout retransmission. Stands in for TCP; the redundancy and timing
//! results depend on loss recovery and coarse pacing, not on congestion
//! control dynamics.

use std::sync::Arc;

use rand::Rng;

use crate::chunking::FileId;
use crate::metrics::PacketClass;
use crate::time::{serialization_delay, SimTime};
use crate::topology::{NodeId, Route};

use super::{
    EventKind, FlowId, FlowOutcome, Packet, PacketBody, Routing, SegPayload, Sim,
};

#[derive(Clone, Debug)]
pub struct FlowParams {
    /// Segments in flight at once.
    pub window: usize,
    /// Retransmission timeout as a multiple of the route's loaded round trip.
    pub rto_multiplier: f64,
    /// Retransmission attempts per segment before the flow fails.
    pub max_retries: u32,
    /// Uniform jitter fraction added to each retransmission timeout so
    /// synchronized losses do not retry in lockstep.
    pub retx_jitter: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            window: 8,
            rto_multiplier: 4.0,
            max_retries: 16,
            retx_jitter: 0.5,
        }
    }
}

/// One contiguous region of a file handed to a flow for delivery.
#[derive(Clone, Debug)]
pub struct FlowChunk {
    pub file: FileId,
    pub offset: u64,
    pub bytes: Arc<Vec<u8>>,
}

/// A delivered region, reassembled in order on the receiver side.
#[derive(Debug)]
pub struct ReceivedChunk {
    pub file: FileId,
    pub offset: u64,
    pub bytes: Vec<u8>,
}

struct SegState {
    payload: SegPayload,
    chunk: usize,
    start_in_chunk: usize,
    acked: bool,
    received: bool,
    retries: u32,
}

pub(super) struct FlowState {
    id: FlowId,
    src: NodeId,
    dst: NodeId,
    route: Arc<Route>,
    back_route: Arc<Route>,
    rto: SimTime,
    window: usize,
    max_retries: u32,
    segs: Vec<SegState>,
    chunk_meta: Vec<(FileId, u64)>,
    recv_bufs: Vec<Vec<u8>>,
    next_unsent: usize,
    in_flight: usize,
    acked: usize,
    received: usize,
    retx_total: u64,
    receiver_started: bool,
    finished: bool,
}

impl FlowState {
    fn active(&self) -> bool {
        !self.finished
    }
}

impl Sim {
    /// Starts a reliable flow delivering `chunks` from `src` to `dst`.
    /// Both endpoints are notified when the transfer settles.
    pub fn start_flow(&mut self, src: NodeId, dst: NodeId, chunks: Vec<FlowChunk>) -> FlowId {
        assert_ne!(src, dst, "flow to self");
        assert!(!chunks.is_empty(), "flow with no payload");
        let route = self.routes.route(src, dst).clone();
        let back_route = self.routes.route(dst, src).clone();
        let id = FlowId(self.flows.len() as u32);

        let payload_cap = self.cfg.data_payload;
        let wire = payload_cap + self.cfg.header_bytes;
        let rto = self.flow_rto(&route, wire);

        let mut segs = Vec::new();
        let mut chunk_meta = Vec::new();
        let mut recv_bufs = Vec::new();
        for (ci, chunk) in chunks.iter().enumerate() {
            debug_assert!(!chunk.bytes.is_empty(), "empty flow chunk");
            chunk_meta.push((chunk.file, chunk.offset));
            recv_bufs.push(vec![0u8; chunk.bytes.len()]);
            let mut at = 0usize;
            while at < chunk.bytes.len() {
                let len = (chunk.bytes.len() - at).min(payload_cap as usize) as u32;
                segs.push(SegState {
                    payload: SegPayload::new(
                        chunk.file,
                        chunk.offset + at as u64,
                        chunk.bytes.clone(),
                        at,
                        len,
                    ),
                    chunk: ci,
                    start_in_chunk: at,
                    acked: false,
                    received: false,
                    retries: 0,
                });
                at += len as usize;
            }
        }

        self.flows.push(FlowState {
            id,
            src,
            dst,
            route,
            back_route,
            rto,
            window: self.cfg.flow.window,
            max_retries: self.cfg.flow.max_retries,
            segs,
            chunk_meta,
            recv_bufs,
            next_unsent: 0,
            in_flight: 0,
            acked: 0,
            received: 0,
            retx_total: 0,
            receiver_started: false,
            finished: false,
        });
        self.flow_fill_window(id);
        id
    }

    /// Conservative loaded round trip for a route: propagation and data-size
    /// serialization both ways, plus a full queue drain on the slowest hop.
    /// A timeout above the worst observable round trip never fires spuriously,
    /// which keeps zero-loss transfers free of duplicate packets.
    fn flow_rto(&self, route: &Route, wire_bytes: u32) -> SimTime {
        let mut prop = SimTime::ZERO;
        let mut ser = SimTime::ZERO;
        let mut worst_queue = SimTime::ZERO;
        for hop in &route.hops {
            let link = self.topo.link(hop.link);
            let s = serialization_delay(wire_bytes as u64, link.bandwidth_bps);
            prop += link.delay;
            ser += s;
            let q = SimTime::from_nanos(s.as_nanos() * link.queue_capacity as u64);
            if q > worst_queue {
                worst_queue = q;
            }
        }
        let rtt = SimTime::from_nanos(2 * (prop + ser).as_nanos()) + worst_queue;
        rtt.mul_f64(self.cfg.flow.rto_multiplier)
    }

    /// Looks up the active incoming flow from `src` whose first chunk starts
    /// at `offset` of `file`; used by receivers that must abort a transfer
    /// they have not been notified about yet.
    pub fn find_incoming_flow(
        &self,
        dst: NodeId,
        src: NodeId,
        file: FileId,
        offset: u64,
    ) -> Option<FlowId> {
        self.flows
            .iter()
            .find(|f| {
                f.active()
                    && f.dst == dst
                    && f.src == src
                    && f.chunk_meta.first() == Some(&(file, offset))
            })
            .map(|f| f.id)
    }

    /// Tears a flow down; both endpoints get a cancellation notice and any
    /// packets still in flight are ignored on arrival.
    pub fn cancel_flow(&mut self, id: FlowId) {
        let f = &mut self.flows[id.0 as usize];
        if !f.active() {
            return;
        }
        f.finished = true;
        let (src, dst) = (f.src, f.dst);
        self.pending.push_back((
            src,
            super::AgentEvent::FlowDone {
                flow: id,
                outcome: FlowOutcome::SendCancelled,
            },
        ));
        self.pending.push_back((
            dst,
            super::AgentEvent::FlowDone {
                flow: id,
                outcome: FlowOutcome::RecvCancelled,
            },
        ));
    }

    fn flow_fill_window(&mut self, id: FlowId) {
        loop {
            let f = &self.flows[id.0 as usize];
            if !f.active() || f.in_flight >= f.window || f.next_unsent >= f.segs.len() {
                return;
            }
            let seq = self.flows[id.0 as usize].next_unsent as u32;
            self.flows[id.0 as usize].next_unsent += 1;
            self.flows[id.0 as usize].in_flight += 1;
            self.flow_send_seg(id, seq);
        }
    }

    /// Re-offers a segment that was blocked on its local egress queue.
    pub(super) fn flow_flush_blocked(&mut self, id: FlowId, seq: u32) {
        let f = &self.flows[id.0 as usize];
        if !f.active() || f.segs[seq as usize].acked {
            return;
        }
        self.flow_send_seg(id, seq);
    }

    fn flow_send_seg(&mut self, id: FlowId, seq: u32) {
        // The first hop is the sending host's own interface. A full local
        // queue blocks the sender (as a socket buffer would) rather than
        // dropping; only transit queues lose packets.
        let first = self.flows[id.0 as usize].route.hops[0];
        {
            let st = &mut self.links[first.link.0 as usize][first.dir.index()];
            if st.queue.len() >= st.capacity {
                st.waiters.push_back((id, seq));
                return;
            }
        }
        let pid = self.take_packet_id();
        let f = &self.flows[id.0 as usize];
        let payload = f.segs[seq as usize].payload.clone();
        let attempt = f.segs[seq as usize].retries;
        let packet = Packet {
            id: pid,
            class: PacketClass::Data,
            size: payload.len() + self.cfg.header_bytes,
            payload_bytes: payload.len(),
            fingerprint: Some(payload.fingerprint()),
            src: f.src,
            routing: Routing::Unicast {
                dst: f.dst,
                route: f.route.clone(),
                pos: 0,
            },
            body: PacketBody::FlowData {
                flow: id,
                seq,
                payload,
            },
        };
        let hop = f.route.hops[0];
        let rto = f.rto;
        let jitter = {
            let frac: f64 = self
                .hub
                .keyed("flow-retx", ((id.0 as u64) << 32) | seq as u64, attempt as u64)
                .gen();
            rto.mul_f64(self.cfg.flow.retx_jitter * frac)
        };
        self.transmit(hop.link, hop.dir, packet);
        self.schedule(
            self.clock + rto + jitter,
            EventKind::FlowRetx { flow: id, seq },
        );
    }

    pub(super) fn flow_on_data(&mut self, id: FlowId, seq: u32, payload: SegPayload) {
        let f = &mut self.flows[id.0 as usize];
        if !f.active() {
            return;
        }
        let dst = f.dst;
        let src = f.src;
        if !f.receiver_started {
            f.receiver_started = true;
            let (file, offset) = f.chunk_meta[0];
            self.pending.push_back((
                dst,
                super::AgentEvent::FlowStarted {
                    flow: id,
                    from: src,
                    file,
                    offset,
                },
            ));
        }
        let f = &mut self.flows[id.0 as usize];
        let seg = &mut f.segs[seq as usize];
        if !seg.received {
            seg.received = true;
            let chunk = seg.chunk;
            let start = seg.start_in_chunk;
            let len = payload.len() as usize;
            f.recv_bufs[chunk][start..start + len].copy_from_slice(payload.bytes());
            f.received += 1;
            if f.received == f.segs.len() {
                let chunks: Vec<ReceivedChunk> = f
                    .chunk_meta
                    .iter()
                    .zip(std::mem::take(&mut f.recv_bufs))
                    .map(|(&(file, offset), bytes)| ReceivedChunk {
                        file,
                        offset,
                        bytes,
                    })
                    .collect();
                let retx = f.retx_total;
                self.pending.push_back((
                    dst,
                    super::AgentEvent::FlowDone {
                        flow: id,
                        outcome: FlowOutcome::Received {
                            from: src,
                            chunks,
                            retx,
                        },
                    },
                ));
            }
        }
        // Acknowledge every delivery, duplicates included, so a lost ack can
        // always be repaired by the retransmitted copy.
        self.flow_send_ack(id, seq);
    }

    fn flow_send_ack(&mut self, id: FlowId, seq: u32) {
        let pid = self.take_packet_id();
        let f = &self.flows[id.0 as usize];
        let packet = Packet {
            id: pid,
            class: PacketClass::Ack,
            size: self.cfg.control_bytes,
            payload_bytes: 0,
            fingerprint: None,
            src: f.dst,
            routing: Routing::Unicast {
                dst: f.src,
                route: f.back_route.clone(),
                pos: 0,
            },
            body: PacketBody::FlowAck { flow: id, seq },
        };
        let hop = f.back_route.hops[0];
        self.transmit(hop.link, hop.dir, packet);
    }

    pub(super) fn flow_on_ack(&mut self, id: FlowId, seq: u32) {
        let f = &mut self.flows[id.0 as usize];
        if !f.active() {
            return;
        }
        let seg = &mut f.segs[seq as usize];
        if seg.acked {
            return;
        }
        seg.acked = true;
        f.acked += 1;
        f.in_flight -= 1;
        if f.acked == f.segs.len() {
            f.finished = true;
            let src = f.src;
            let retx = f.retx_total;
            f.segs.clear();
            self.pending.push_back((
                src,
                super::AgentEvent::FlowDone {
                    flow: id,
                    outcome: FlowOutcome::Sent { retx },
                },
            ));
            return;
        }
        self.flow_fill_window(id);
    }

    pub(super) fn flow_on_retx(&mut self, id: FlowId, seq: u32) {
        let f = &mut self.flows[id.0 as usize];
        if !f.active() || f.segs[seq as usize].acked {
            return;
        }
        let seg = &mut f.segs[seq as usize];
        seg.retries += 1;
        if seg.retries > f.max_retries {
            f.finished = true;
            let (src, dst) = (f.src, f.dst);
            self.pending.push_back((
                src,
                super::AgentEvent::FlowDone {
                    flow: id,
                    outcome: FlowOutcome::SendFailed,
                },
            ));
            self.pending.push_back((
                dst,
                super::AgentEvent::FlowDone {
                    flow: id,
                    outcome: FlowOutcome::RecvFailed,
                },
            ));
            return;
        }
        f.retx_total += 1;
        self.flow_send_seg(id, seq);
    }

    /// Sender-side retransmission count so far for a flow.
    pub fn flow_retx_total(&self, id: FlowId) -> u64 {
        self.flows[id.0 as usize].retx_total
    }
}
