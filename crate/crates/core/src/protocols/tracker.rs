//! The swarm registry: peers announce themselves and receive a random subset
//! of the other registered peers.

use std::collections::BTreeSet;

use rand::seq::index;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Error, Debug, PartialEq, Eq)]
#[error("peer is not registered with the tracker")]
pub struct UnknownPeer;

#[derive(Default, Debug)]
pub struct TrackerState {
    /// Registration order; peer lists sample from this.
    registered: Vec<NodeId>,
    set: BTreeSet<NodeId>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, peer: NodeId) {
        if self.set.insert(peer) {
            self.registered.push(peer);
        }
    }

    pub fn len(&self) -> usize {
        self.registered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registered.is_empty()
    }

    /// A uniformly random subset of min(`list_size`, registered − 1) peers,
    /// never containing the requester.
    pub fn announce(
        &self,
        peer: NodeId,
        list_size: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<NodeId>, UnknownPeer> {
        if !self.set.contains(&peer) {
            return Err(UnknownPeer);
        }
        let others: Vec<NodeId> = self
            .registered
            .iter()
            .copied()
            .filter(|&p| p != peer)
            .collect();
        let k = list_size.min(others.len());
        let picks = index::sample(rng, others.len(), k);
        Ok(picks.into_iter().map(|i| others[i]).collect())
    }
}
