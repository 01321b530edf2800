//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),

    #[error("no eligible proposer at slot {slot}")]
    NoProposer { slot: u64 },

    #[error("unknown block {0:016x}")]
    UnknownBlock(u64),

    #[error("delivery to validator {recipient} at tick {deliver_at} exceeds bound {bound}")]
    DeliveryBeyondBound {
        recipient: u64,
        deliver_at: u64,
        bound: u64,
    },

    #[error("delivery to validator {recipient} at tick {deliver_at} precedes send at {sent_at}")]
    DeliveryBeforeSend {
        recipient: u64,
        deliver_at: u64,
        sent_at: u64,
    },

    #[error("malformed checkpoint link: {0}")]
    MalformedLink(String),

    #[error("quorum arithmetic requires n > 3f, got n={n} f={f}")]
    QuorumTooSmall { n: u64, f: u64 },

    #[error("attack script precondition unmet: {0}")]
    ScriptPrecondition(String),

    #[error("finalized block {finalized:016x} left the available chain tipped {available:016x}")]
    PrefixViolation { finalized: u64, available: u64 },

    #[error("trace parse error at line {line}: {reason}")]
    TraceParse { line: usize, reason: String },

    #[error("event queue empty at tick {tick} with {remaining} slots remaining")]
    QueueStarved { tick: u64, remaining: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
