//! Piece selection: random-first until the first piece verifies, then
//! rarest-first with uniform tie-breaking.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;

use crate::chunking::PieceMap;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SelectionPhase {
    RandomFirst,
    RarestFirst,
}

/// The phase flips to rarest-first exactly when the first piece verifies.
pub fn phase_for(mine: &PieceMap) -> SelectionPhase {
    if mine.held() == 0 {
        SelectionPhase::RandomFirst
    } else {
        SelectionPhase::RarestFirst
    }
}

/// Picks the next piece to fetch, or `None` if nothing wanted is available.
///
/// A piece is wanted when it is not held, not excluded (in flight, deferred,
/// or expected over multicast), and at least one peer is known to hold it.
/// `deterministic` replaces random choices with lowest-index ones for
/// scripted runs.
pub fn select_piece(
    availability: &[u32],
    mine: &PieceMap,
    exclude: &BTreeSet<u32>,
    phase: SelectionPhase,
    rng: &mut ChaCha12Rng,
    deterministic: bool,
) -> Option<u32> {
    let wanted: Vec<u32> = (0..availability.len() as u32)
        .filter(|&p| !mine.has(p) && !exclude.contains(&p) && availability[p as usize] > 0)
        .collect();
    if wanted.is_empty() {
        return None;
    }
    let pool: Vec<u32> = match phase {
        SelectionPhase::RandomFirst => wanted,
        SelectionPhase::RarestFirst => {
            let min = wanted
                .iter()
                .map(|&p| availability[p as usize])
                .min()
                .unwrap();
            wanted
                .into_iter()
                .filter(|&p| availability[p as usize] == min)
                .collect()
        }
    };
    if deterministic {
        pool.first().copied()
    } else {
        pool.choose(rng).copied()
    }
}
