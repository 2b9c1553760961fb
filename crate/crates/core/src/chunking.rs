//! Piece maker and assembler: split files into fixed-size pieces with
//! digests, verify piece integrity, reassemble completed files.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Identifies one shared file within a run.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct FileId(pub u32);

/// Opaque integrity token over exact piece bytes. The hash function behind it
/// is an implementation detail; nothing in the simulator depends on which one.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PieceDigest([u8; 32]);

impl fmt::Debug for PieceDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "…")
    }
}

impl PieceDigest {
    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn digest_bytes(bytes: &[u8]) -> PieceDigest {
    PieceDigest(Sha256::digest(bytes).into())
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum ChunkError {
    #[error("cannot chunk an empty file")]
    EmptyFile,
    #[error("piece size must be at least 1 byte")]
    ZeroPieceSize,
    #[error("missing piece {index}")]
    MissingPiece { index: u32 },
    #[error("digest mismatch on piece {index}")]
    DigestMismatch { index: u32 },
}

/// Metadata for a shared file: size, piece size, ordered piece digests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileSpec {
    pub name: String,
    pub size: u64,
    pub piece_size: u32,
    pub digests: Vec<PieceDigest>,
}

impl FileSpec {
    pub fn piece_count(&self) -> u32 {
        self.digests.len() as u32
    }

    pub fn piece_offset(&self, index: u32) -> u64 {
        index as u64 * self.piece_size as u64
    }

    /// Length of a piece; only the last one may be short.
    pub fn piece_len(&self, index: u32) -> u32 {
        let start = self.piece_offset(index);
        (self.size - start).min(self.piece_size as u64) as u32
    }

    /// Maps a byte offset to the piece containing it.
    pub fn piece_at(&self, offset: u64) -> u32 {
        (offset / self.piece_size as u64) as u32
    }
}

#[derive(Clone, Debug)]
pub struct Piece {
    pub index: u32,
    pub bytes: Arc<Vec<u8>>,
    pub digest: PieceDigest,
}

/// Cuts a file into fixed-size pieces; the last piece may be short. The
/// concatenation of the returned pieces equals the input.
pub fn make_pieces(
    name: &str,
    bytes: &[u8],
    piece_size: u32,
) -> Result<(FileSpec, Vec<Piece>), ChunkError> {
    if bytes.is_empty() {
        return Err(ChunkError::EmptyFile);
    }
    if piece_size == 0 {
        return Err(ChunkError::ZeroPieceSize);
    }
    let mut pieces = Vec::new();
    let mut digests = Vec::new();
    for (i, chunk) in bytes.chunks(piece_size as usize).enumerate() {
        let digest = digest_bytes(chunk);
        digests.push(digest);
        pieces.push(Piece {
            index: i as u32,
            bytes: Arc::new(chunk.to_vec()),
            digest,
        });
    }
    let spec = FileSpec {
        name: name.to_string(),
        size: bytes.len() as u64,
        piece_size,
        digests,
    };
    Ok((spec, pieces))
}

/// True iff the recomputed digest of `bytes` equals `expected`.
pub fn verify_piece(bytes: &[u8], expected: &PieceDigest) -> bool {
    digest_bytes(bytes) == *expected
}

/// Per-peer piece bytes, indexed by piece.
pub type PieceStore = Vec<Option<Arc<Vec<u8>>>>;

/// Reassembles the original file from a complete, verified piece store.
pub fn assemble(spec: &FileSpec, store: &PieceStore) -> Result<Vec<u8>, ChunkError> {
    let mut out = Vec::with_capacity(spec.size as usize);
    for index in 0..spec.piece_count() {
        let bytes = store
            .get(index as usize)
            .and_then(|o| o.as_ref())
            .ok_or(ChunkError::MissingPiece { index })?;
        if !verify_piece(bytes, &spec.digests[index as usize]) {
            return Err(ChunkError::DigestMismatch { index });
        }
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Tracks which pieces a peer verifiably holds. A piece is only marked held
/// after its digest check passed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PieceMap {
    bits: Vec<bool>,
    held: usize,
}

impl PieceMap {
    pub fn new(pieces: u32) -> Self {
        PieceMap {
            bits: vec![false; pieces as usize],
            held: 0,
        }
    }

    pub fn full(pieces: u32) -> Self {
        PieceMap {
            bits: vec![true; pieces as usize],
            held: pieces as usize,
        }
    }

    pub fn has(&self, piece: u32) -> bool {
        self.bits.get(piece as usize).copied().unwrap_or(false)
    }

    pub fn mark(&mut self, piece: u32) {
        let slot = &mut self.bits[piece as usize];
        if !*slot {
            *slot = true;
            self.held += 1;
        }
    }

    pub fn held(&self) -> usize {
        self.held
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.held == self.bits.len()
    }

    pub fn held_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
    }

    pub fn missing_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| i as u32)
    }
}

/// Deterministic pseudo-random file content for simulated transfers.
pub fn synth_file_bytes(seed: u64, size: usize) -> Vec<u8> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed_f11e);
    let mut out = vec![0u8; size];
    rng.fill_bytes(&mut out);
    out
}
