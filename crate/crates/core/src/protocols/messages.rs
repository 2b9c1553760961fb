//! Protocol control messages. All of them ride in fixed-size control packets;
//! the layouts here are internal values, not wire encodings.

use crate::chunking::FileId;
use crate::topology::NodeId;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HandshakeKind {
    Type1,
    Type2,
    Type3a,
    Type3b,
    Type4,
}

impl HandshakeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HandshakeKind::Type1 => "Type1",
            HandshakeKind::Type2 => "Type2",
            HandshakeKind::Type3a => "Type3a",
            HandshakeKind::Type3b => "Type3b",
            HandshakeKind::Type4 => "Type4",
        }
    }
}

/// One message of the chunk-transfer handshake. Type2 and Type4 carry a
/// transfer slot; the others never do.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct HandshakeMessage {
    pub kind: HandshakeKind,
    pub chunk: u32,
    pub port: Option<u32>,
}

impl HandshakeMessage {
    pub fn request(chunk: u32) -> Self {
        HandshakeMessage {
            kind: HandshakeKind::Type1,
            chunk,
            port: None,
        }
    }

    pub fn accept(chunk: u32, port: u32) -> Self {
        HandshakeMessage {
            kind: HandshakeKind::Type2,
            chunk,
            port: Some(port),
        }
    }

    pub fn reject_no_chunk(chunk: u32) -> Self {
        HandshakeMessage {
            kind: HandshakeKind::Type3a,
            chunk,
            port: None,
        }
    }

    pub fn reject_no_port(chunk: u32) -> Self {
        HandshakeMessage {
            kind: HandshakeKind::Type3b,
            chunk,
            port: None,
        }
    }

    pub fn confirm(chunk: u32, port: u32) -> Self {
        HandshakeMessage {
            kind: HandshakeKind::Type4,
            chunk,
            port: Some(port),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ControlMsg {
    /// Whole-file download request (unicast model).
    Get { file: FileId },
    /// Swarm registry announce.
    Announce,
    AnnounceResp { peers: Vec<NodeId> },
    /// Peer introduction carrying the sender's verified piece indices.
    Hello { pieces: Vec<u32> },
    /// Announcement that the sender verified one piece.
    Have { piece: u32 },
    Handshake(HandshakeMessage),
}
