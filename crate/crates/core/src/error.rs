use std::fmt;

use thiserror::Error;

use crate::NodeId;

/// Reasons a fragment set cannot be decoded back into a message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CodecFault {
    TooFewFragments { got: usize, need: usize },
    DuplicateIndex(usize),
    IndexOutOfRange(usize),
    RaggedPayloads,
    EmptyPayload,
    BadLengthHeader(u64),
    Decoder(String),
}

impl fmt::Display for CodecFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecFault::TooFewFragments { got, need } => {
                write!(f, "{got} fragments supplied, {need} required")
            }
            CodecFault::DuplicateIndex(i) => write!(f, "fragment index {i} appears twice"),
            CodecFault::IndexOutOfRange(i) => write!(f, "fragment index {i} out of range"),
            CodecFault::RaggedPayloads => write!(f, "fragments have unequal payload lengths"),
            CodecFault::EmptyPayload => write!(f, "fragment payload is empty"),
            CodecFault::BadLengthHeader(len) => write!(f, "length header {len} exceeds capacity"),
            CodecFault::Decoder(msg) => write!(f, "decoder: {msg}"),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("message of {len} bytes exceeds ell_max = {max}")]
    MessageTooLarge { len: usize, max: usize },
    #[error("cannot recover message: {0}")]
    Codec(CodecFault),
    #[error("index {index} out of range for {n} leaves")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("threshold not met: {0}")]
    ThresholdNotMet(String),
    #[error("node {node} is not the designated sender {sender}")]
    NotSender { node: NodeId, sender: NodeId },
    #[error("broadcast already started")]
    AlreadyStarted,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed wire message: {0}")]
    Wire(String),
    #[error("trace incomplete: {0}")]
    IncompleteTrace(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
