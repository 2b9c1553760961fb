//! The plain unicast model: every client independently pulls the whole file
//! from the seeder over one reliable flow, with no client-to-client traffic.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::chunking::FileId;
use crate::engine::{AgentEvent, FlowChunk, FlowId, FlowOutcome};
use crate::topology::NodeId;

use super::messages::ControlMsg;
use super::{Agent, Ctx, ProtocolParams};

const K_GET_RETRY: u64 = 1 << 56;

pub struct WwwClientAgent {
    me: NodeId,
    seeder: NodeId,
    file: FileId,
    params: Arc<ProtocolParams>,
    attempts: u32,
    gen: u64,
    settled: bool,
}

impl WwwClientAgent {
    pub fn new(me: NodeId, seeder: NodeId, file: FileId, params: Arc<ProtocolParams>) -> Self {
        WwwClientAgent {
            me,
            seeder,
            file,
            params,
            attempts: 0,
            gen: 0,
            settled: false,
        }
    }

    fn send_get(&mut self, ctx: &mut Ctx<'_>) {
        self.attempts += 1;
        if self.attempts > self.params.attempt_limit {
            self.settled = true;
            ctx.board.mark_failed(self.me);
            return;
        }
        ctx.sim
            .send_control(self.me, self.seeder, ControlMsg::Get { file: self.file });
        self.gen += 1;
        let at = ctx.sim.now() + self.params.retry_backoff;
        let _ = ctx.sim.set_timer(self.me, at, K_GET_RETRY | self.gen);
    }
}

impl Agent for WwwClientAgent {
    fn handle(&mut self, ctx: &mut Ctx<'_>, ev: AgentEvent) {
        if self.settled {
            return;
        }
        match ev {
            AgentEvent::Start => {
                ctx.board.mark_start(self.me, ctx.sim.now());
                self.send_get(ctx);
            }
            AgentEvent::Timer(k) => {
                // A pending retry is only live if no transfer has begun since.
                if k == K_GET_RETRY | self.gen {
                    self.send_get(ctx);
                }
            }
            AgentEvent::FlowStarted { .. } => {
                self.gen += 1;
            }
            AgentEvent::FlowDone { outcome, .. } => match outcome {
                FlowOutcome::Received { chunks, retx, .. } => {
                    self.settled = true;
                    self.gen += 1;
                    let ok = chunks.len() == 1 && chunks[0].bytes == *ctx.board.seeder_bytes;
                    ctx.board.mark_complete(self.me, ctx.sim.now(), ok, retx);
                }
                FlowOutcome::RecvFailed => {
                    self.gen += 1;
                    self.send_get(ctx);
                }
                _ => {}
            },
            AgentEvent::Control { .. } | AgentEvent::MulticastFrag { .. } => {}
        }
    }
}

pub struct WwwSeederAgent {
    me: NodeId,
    file: FileId,
    bytes: Arc<Vec<u8>>,
    active: BTreeMap<FlowId, NodeId>,
    serving: BTreeSet<NodeId>,
    done: BTreeSet<NodeId>,
}

impl WwwSeederAgent {
    pub fn new(me: NodeId, file: FileId, bytes: Arc<Vec<u8>>) -> Self {
        WwwSeederAgent {
            me,
            file,
            bytes,
            active: BTreeMap::new(),
            serving: BTreeSet::new(),
            done: BTreeSet::new(),
        }
    }
}

impl Agent for WwwSeederAgent {
    fn handle(&mut self, ctx: &mut Ctx<'_>, ev: AgentEvent) {
        match ev {
            AgentEvent::Control {
                from,
                msg: ControlMsg::Get { file },
            } => {
                debug_assert_eq!(file, self.file);
                if self.serving.contains(&from) || self.done.contains(&from) {
                    return;
                }
                let flow = ctx.sim.start_flow(
                    self.me,
                    from,
                    vec![FlowChunk {
                        file: self.file,
                        offset: 0,
                        bytes: self.bytes.clone(),
                    }],
                );
                self.active.insert(flow, from);
                self.serving.insert(from);
            }
            AgentEvent::FlowDone { flow, outcome } => {
                if let Some(client) = self.active.remove(&flow) {
                    self.serving.remove(&client);
                    if matches!(outcome, FlowOutcome::Sent { .. }) {
                        self.done.insert(client);
                    }
                }
            }
            _ => {}
        }
    }
}
