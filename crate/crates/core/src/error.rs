use thiserror::Error;

use crate::trace::Node;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A row could not be read as a record.
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// A row is well-formed but violates the node/role schema.
    #[error("line {line}: {msg}")]
    Schema { line: u64, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Neither direction of a node pair was measured.
    #[error("no measured link between {a} and {b}")]
    MissingLink { a: Node, b: Node },

    #[error("{node} is a receive-only node and cannot act as {what}")]
    Role { node: Node, what: &'static str },

    #[error("destination {dest} is also a relay for source {src}; 3-branch cooperation needs a receive-only destination")]
    RelayIsDestination { src: Node, dest: Node },

    #[error("slot {slot} out of range for trace of length {len}")]
    SlotOutOfRange { slot: usize, len: usize },

    #[error("no (source, destination) pairs selected; valid pairs: {valid}")]
    EmptySelection { valid: String },

    #[error("curve '{label}' does not cross probability {p}")]
    NotCrossed { label: String, p: f64 },

    #[error("undefined metric: {0}")]
    Undefined(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
