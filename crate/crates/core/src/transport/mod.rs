//! Message plane: FLUP envelopes, topic paths and an in-process broker with
//! MQTT-like topic semantics.

mod broker;
mod envelope;
mod topic;

pub use broker::{Broker, Message, Subscription, DEFAULT_CAPACITY};
pub use envelope::{decode_envelope, encode_envelope, read_flup, write_flup, Envelope, MsgType, WireTensor, FLUP_MAGIC, FLUP_VERSION, HEADER_LEN, SERVER_ID};
pub use topic::{topic_matches, validate_pattern, Topic};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("truncated envelope: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    InvalidField(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("tensor name of {0} bytes exceeds 65535")]
    NameTooLong(usize),
    #[error("tensor {name}: {reason}")]
    BadTensor { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid topic {topic:?}: {reason}")]
    Topic { topic: String, reason: String },
    #[error("queue full for subscriber {subscriber} on {topic}")]
    Backpressure { topic: String, subscriber: u64 },
    #[error("no message before deadline")]
    Timeout,
    #[error("envelope payload mismatch: {0}")]
    Payload(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
