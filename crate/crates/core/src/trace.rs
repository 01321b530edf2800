//! Line-oriented trace records.
//!
//! One record per line, `key=value` pairs separated by single spaces, keys in
//! a fixed order per kind. Integers are decimal, digests lowercase hex.
//! Byte-exact reproducibility of whole traces is part of the simulator's
//! contract, so serialization here is canonical: there is exactly one valid
//! rendering of a record.
//!
//! Header `param` lines carry scenario facts that all engines share (network
//! bounds, stake layout, run length). They deliberately exclude the protocol
//! name, expiry parameter, and seed so that engines which must agree
//! move-for-move produce byte-identical files.

use crate::block_tree::{digest_hex, Digest};
use crate::stake::ValidatorId;
use crate::SimError;
use crate::time::Tick;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    /// Header line: one scenario parameter.
    Param { name: String, value: String },
    /// Slot boundary marker.
    Slot { tick: Tick, slot: u64 },
    /// A block was created by `actor` (whether or not it was broadcast).
    Propose {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        block: Digest,
        parent: Digest,
    },
    /// A slot with no proposal (vacant or sleeping proposer).
    NoProposal { tick: Tick, slot: u64, phase: u64 },
    /// Head vote by `actor` for `block`.
    Vote {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        block: Digest,
    },
    /// Checkpoint link vote by `actor`.
    FfgVote {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        source_block: Digest,
        source_index: u64,
        target_block: Digest,
        target_index: u64,
    },
    /// Message delivery (emitted only when delivery tracing is enabled).
    Deliver {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        sender: ValidatorId,
        payload: String,
    },
    /// Buffer merge: `accepted` messages moved into the validator's view.
    Merge {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        accepted: u64,
    },
    /// Checkpoint justified in `actor`'s view.
    Justify {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        block: Digest,
        index: u64,
    },
    /// Checkpoint finalized in `actor`'s view.
    Finalize {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        block: Digest,
        index: u64,
    },
    /// `actor` detected a slashable vote pair by `offender`.
    Slash {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        offender: ValidatorId,
        rule: &'static str,
    },
    /// `actor`'s confirmed (available-ledger) head after this phase.
    Confirm {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        block: Digest,
    },
    /// `actor`'s fork-choice head moved off the previous head's chain.
    HeadChange {
        tick: Tick,
        slot: u64,
        phase: u64,
        actor: ValidatorId,
        old: Digest,
        new: Digest,
    },
    /// Classical-BFT protocol step (three-phase engine only).
    Pbft {
        tick: Tick,
        actor: ValidatorId,
        step: &'static str,
        view: u64,
        seq: u64,
        digest: Digest,
    },
}

impl TraceRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceRecord::Param { .. } => "param",
            TraceRecord::Slot { .. } => "slot",
            TraceRecord::Propose { .. } => "propose",
            TraceRecord::NoProposal { .. } => "no-proposal",
            TraceRecord::Vote { .. } => "vote",
            TraceRecord::FfgVote { .. } => "ffg-vote",
            TraceRecord::Deliver { .. } => "deliver",
            TraceRecord::Merge { .. } => "merge",
            TraceRecord::Justify { .. } => "justify",
            TraceRecord::Finalize { .. } => "finalize",
            TraceRecord::Slash { .. } => "slash",
            TraceRecord::Confirm { .. } => "confirm",
            TraceRecord::HeadChange { .. } => "head-change",
            TraceRecord::Pbft { .. } => "pbft",
        }
    }

    /// Canonical single-line rendering (no trailing newline).
    pub fn to_line(&self) -> String {
        match self {
            TraceRecord::Param { name, value } => {
                format!("kind=param name={name} value={value}")
            }
            TraceRecord::Slot { tick, slot } => {
                format!("tick={tick} slot={slot} kind=slot")
            }
            TraceRecord::Propose {
                tick,
                slot,
                phase,
                actor,
                block,
                parent,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=propose actor={actor} block={} parent={}",
                digest_hex(*block),
                digest_hex(*parent)
            ),
            TraceRecord::NoProposal { tick, slot, phase } => {
                format!("tick={tick} slot={slot} phase={phase} kind=no-proposal")
            }
            TraceRecord::Vote {
                tick,
                slot,
                phase,
                actor,
                block,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=vote actor={actor} block={}",
                digest_hex(*block)
            ),
            TraceRecord::FfgVote {
                tick,
                slot,
                phase,
                actor,
                source_block,
                source_index,
                target_block,
                target_index,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=ffg-vote actor={actor} source={} source_index={source_index} target={} target_index={target_index}",
                digest_hex(*source_block),
                digest_hex(*target_block)
            ),
            TraceRecord::Deliver {
                tick,
                slot,
                phase,
                actor,
                sender,
                payload,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=deliver actor={actor} sender={sender} payload={payload}"
            ),
            TraceRecord::Merge {
                tick,
                slot,
                phase,
                actor,
                accepted,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=merge actor={actor} accepted={accepted}"
            ),
            TraceRecord::Justify {
                tick,
                slot,
                phase,
                actor,
                block,
                index,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=justify actor={actor} block={} index={index}",
                digest_hex(*block)
            ),
            TraceRecord::Finalize {
                tick,
                slot,
                phase,
                actor,
                block,
                index,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=finalize actor={actor} block={} index={index}",
                digest_hex(*block)
            ),
            TraceRecord::Slash {
                tick,
                slot,
                phase,
                actor,
                offender,
                rule,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=slash actor={actor} offender={offender} rule={rule}"
            ),
            TraceRecord::Confirm {
                tick,
                slot,
                phase,
                actor,
                block,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=confirm actor={actor} block={}",
                digest_hex(*block)
            ),
            TraceRecord::HeadChange {
                tick,
                slot,
                phase,
                actor,
                old,
                new,
            } => format!(
                "tick={tick} slot={slot} phase={phase} kind=head-change actor={actor} old={} new={}",
                digest_hex(*old),
                digest_hex(*new)
            ),
            TraceRecord::Pbft {
                tick,
                actor,
                step,
                view,
                seq,
                digest,
            } => format!(
                "tick={tick} kind=pbft actor={actor} step={step} view={view} seq={seq} digest={}",
                digest_hex(*digest)
            ),
        }
    }
}

/// Render a whole trace with one newline after every record.
pub fn render(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// A parsed trace line: every `key=value` field in order, for detectors that
/// work off stored traces. Slash rules and step names are interned back to
/// static strings so parsed records compare equal to freshly emitted ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLine {
    pub fields: Vec<(String, String)>,
}

impl ParsedLine {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn parse_u64(line_no: usize, key: &str, value: &str) -> Result<u64, SimError> {
    value.parse().map_err(|_| SimError::TraceParse {
        line: line_no,
        reason: format!("field {key} is not an integer: {value}"),
    })
}

fn parse_hex(line_no: usize, key: &str, value: &str) -> Result<Digest, SimError> {
    u64::from_str_radix(value, 16).map_err(|_| SimError::TraceParse {
        line: line_no,
        reason: format!("field {key} is not a hex digest: {value}"),
    })
}

fn intern_rule(line_no: usize, value: &str) -> Result<&'static str, SimError> {
    match value {
        "double" => Ok("double"),
        "surround" => Ok("surround"),
        "extra" => Ok("extra"),
        other => Err(SimError::TraceParse {
            line: line_no,
            reason: format!("unknown slash rule: {other}"),
        }),
    }
}

fn intern_step(line_no: usize, value: &str) -> Result<&'static str, SimError> {
    for step in [
        "request",
        "pre-prepare",
        "prepare",
        "prepared",
        "commit",
        "committed-local",
        "reply",
        "view-change",
        "new-view",
    ] {
        if value == step {
            return Ok(step);
        }
    }
    Err(SimError::TraceParse {
        line: line_no,
        reason: format!("unknown protocol step: {value}"),
    })
}

/// Parse one trace line back into a record. `line_no` is 1-based and used
/// only for error reporting.
pub fn parse_line(line_no: usize, line: &str) -> Result<TraceRecord, SimError> {
    let mut fields = Vec::new();
    for piece in line.split(' ') {
        match piece.split_once('=') {
            Some((k, v)) => fields.push((k.to_string(), v.to_string())),
            None => {
                return Err(SimError::TraceParse {
                    line: line_no,
                    reason: format!("field without '=': {piece}"),
                })
            }
        }
    }
    let parsed = ParsedLine { fields };
    let kind = parsed.get("kind").ok_or_else(|| SimError::TraceParse {
        line: line_no,
        reason: "missing kind field".to_string(),
    })?;
    let need = |key: &str| -> Result<&str, SimError> {
        parsed.get(key).ok_or_else(|| SimError::TraceParse {
            line: line_no,
            reason: format!("missing field {key} in {kind} record"),
        })
    };
    let num = |key: &str| -> Result<u64, SimError> { parse_u64(line_no, key, need(key)?) };
    let hex = |key: &str| -> Result<Digest, SimError> { parse_hex(line_no, key, need(key)?) };
    let record = match kind {
        "param" => TraceRecord::Param {
            name: need("name")?.to_string(),
            value: need("value")?.to_string(),
        },
        "slot" => TraceRecord::Slot {
            tick: num("tick")?,
            slot: num("slot")?,
        },
        "propose" => TraceRecord::Propose {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            block: hex("block")?,
            parent: hex("parent")?,
        },
        "no-proposal" => TraceRecord::NoProposal {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
        },
        "vote" => TraceRecord::Vote {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            block: hex("block")?,
        },
        "ffg-vote" => TraceRecord::FfgVote {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            source_block: hex("source")?,
            source_index: num("source_index")?,
            target_block: hex("target")?,
            target_index: num("target_index")?,
        },
        "deliver" => TraceRecord::Deliver {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            sender: num("sender")?,
            payload: need("payload")?.to_string(),
        },
        "merge" => TraceRecord::Merge {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            accepted: num("accepted")?,
        },
        "justify" => TraceRecord::Justify {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            block: hex("block")?,
            index: num("index")?,
        },
        "finalize" => TraceRecord::Finalize {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            block: hex("block")?,
            index: num("index")?,
        },
        "slash" => TraceRecord::Slash {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            offender: num("offender")?,
            rule: intern_rule(line_no, need("rule")?)?,
        },
        "confirm" => TraceRecord::Confirm {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            block: hex("block")?,
        },
        "head-change" => TraceRecord::HeadChange {
            tick: num("tick")?,
            slot: num("slot")?,
            phase: num("phase")?,
            actor: num("actor")?,
            old: hex("old")?,
            new: hex("new")?,
        },
        "pbft" => TraceRecord::Pbft {
            tick: num("tick")?,
            actor: num("actor")?,
            step: intern_step(line_no, need("step")?)?,
            view: num("view")?,
            seq: num("seq")?,
            digest: hex("digest")?,
        },
        other => {
            return Err(SimError::TraceParse {
                line: line_no,
                reason: format!("unknown record kind: {other}"),
            })
        }
    };
    Ok(record)
}

/// Parse a full trace (empty lines are rejected: traces never contain them).
pub fn parse(text: &str) -> Result<Vec<TraceRecord>, SimError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        records.push(parse_line(i + 1, line)?);
    }
    Ok(records)
}
