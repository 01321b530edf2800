//! Post-hoc trace analysis.
//!
//! Everything in this module works from parsed trace records alone — no
//! access to live engine state — so traces loaded from disk get exactly the
//! same treatment as records straight out of a run. The analyses cover:
//!
//! * block-tree reconstruction from `propose` records,
//! * reorg accounting from `head-change` records (depth, orphaned blocks,
//!   whether honestly proposed blocks were displaced),
//! * finality latency per block (slots from proposal to first finalization
//!   that covers the block),
//! * safety auditing: conflicting finalizations across all actors, and the
//!   requirement that every confirmed (available-ledger) head extends the
//!   actor's latest finalized block,
//! * classical-BFT execution divergence (same sequence number, different
//!   reply digests),
//! * first-divergence comparison between two traces.

use std::collections::{BTreeMap, BTreeSet};

use crate::block_tree::{digest_hex, Block, Digest};
use crate::error::SimError;
use crate::stake::ValidatorId;
use crate::time::Tick;
use crate::trace::TraceRecord;

/// Block ancestry reconstructed from `propose` records.
///
/// Includes every proposed block whether or not it was ever broadcast or
/// adopted, which is what orphan accounting needs.
#[derive(Debug, Clone)]
pub struct TraceTree {
    parents: BTreeMap<Digest, Digest>,
    slots: BTreeMap<Digest, u64>,
    proposers: BTreeMap<Digest, ValidatorId>,
    genesis: Digest,
}

impl TraceTree {
    pub fn from_records(records: &[TraceRecord]) -> Self {
        let genesis = Block::genesis();
        let mut tree = TraceTree {
            parents: BTreeMap::new(),
            slots: BTreeMap::new(),
            proposers: BTreeMap::new(),
            genesis: genesis.digest,
        };
        tree.slots.insert(genesis.digest, 0);
        tree.proposers.insert(genesis.digest, genesis.proposer);
        for record in records {
            if let TraceRecord::Propose {
                slot,
                actor,
                block,
                parent,
                ..
            } = record
            {
                tree.parents.insert(*block, *parent);
                tree.slots.insert(*block, *slot);
                tree.proposers.insert(*block, *actor);
            }
        }
        tree
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn contains(&self, block: Digest) -> bool {
        self.slots.contains_key(&block)
    }

    pub fn slot_of(&self, block: Digest) -> Option<u64> {
        self.slots.get(&block).copied()
    }

    pub fn proposer_of(&self, block: Digest) -> Option<ValidatorId> {
        self.proposers.get(&block).copied()
    }

    /// All proposed blocks, genesis excluded, in (slot, digest) order.
    pub fn proposed_blocks(&self) -> Vec<Digest> {
        let mut blocks: Vec<Digest> = self
            .slots
            .keys()
            .copied()
            .filter(|b| *b != self.genesis)
            .collect();
        blocks.sort_by_key(|b| (self.slots[b], *b));
        blocks
    }

    /// Chain from genesis to `head` inclusive, root first.
    pub fn chain(&self, head: Digest) -> Result<Vec<Digest>, SimError> {
        let mut chain = vec![head];
        let mut cursor = head;
        while cursor != self.genesis {
            let parent = self
                .parents
                .get(&cursor)
                .copied()
                .ok_or(SimError::UnknownBlock(cursor))?;
            chain.push(parent);
            cursor = parent;
        }
        chain.reverse();
        Ok(chain)
    }

    pub fn is_ancestor(&self, anc: Digest, desc: Digest) -> Result<bool, SimError> {
        if !self.contains(anc) {
            return Err(SimError::UnknownBlock(anc));
        }
        let mut cursor = desc;
        loop {
            if cursor == anc {
                return Ok(true);
            }
            if cursor == self.genesis {
                return Ok(false);
            }
            cursor = self
                .parents
                .get(&cursor)
                .copied()
                .ok_or(SimError::UnknownBlock(cursor))?;
        }
    }

    /// Blocks on `old`'s chain that are not on `new`'s chain (the orphaned
    /// suffix of a head switch), deepest last.
    pub fn abandoned(&self, old: Digest, new: Digest) -> Result<Vec<Digest>, SimError> {
        let keep: BTreeSet<Digest> = self.chain(new)?.into_iter().collect();
        let mut lost: Vec<Digest> = self
            .chain(old)?
            .into_iter()
            .filter(|b| !keep.contains(b))
            .collect();
        lost.sort_by_key(|b| (self.slots[b], *b));
        Ok(lost)
    }
}

/// Header parameters (`param` records) as a key/value map.
pub fn header(records: &[TraceRecord]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for record in records {
        if let TraceRecord::Param { name, value } = record {
            map.insert(name.clone(), value.clone());
        }
    }
    map
}

/// Adversary-controlled validator ids recorded in the trace header.
pub fn adversary_ids(records: &[TraceRecord]) -> BTreeSet<ValidatorId> {
    let map = header(records);
    let Some(raw) = map.get("adversary_ids") else {
        return BTreeSet::new();
    };
    raw.split(',')
        .filter_map(|part| part.trim().parse().ok())
        .collect()
}

/// One fork-choice head switch off the previous head's chain.
#[derive(Debug, Clone)]
pub struct Reorg {
    pub tick: Tick,
    pub slot: u64,
    pub actor: ValidatorId,
    pub old: Digest,
    pub new: Digest,
    /// Number of blocks abandoned from the old chain.
    pub depth: u64,
    /// How many of the abandoned blocks had an honest proposer.
    pub orphaned_honest: u64,
}

/// All reorg events observed by honest actors, in trace order.
pub fn reorgs(records: &[TraceRecord]) -> Result<Vec<Reorg>, SimError> {
    let tree = TraceTree::from_records(records);
    let adversaries = adversary_ids(records);
    let mut out = Vec::new();
    for record in records {
        if let TraceRecord::HeadChange {
            tick,
            slot,
            actor,
            old,
            new,
            ..
        } = record
        {
            if adversaries.contains(actor) {
                continue;
            }
            let lost = tree.abandoned(*old, *new)?;
            let orphaned_honest = lost
                .iter()
                .filter(|b| {
                    tree.proposer_of(**b)
                        .map(|p| !adversaries.contains(&p))
                        .unwrap_or(false)
                })
                .count() as u64;
            out.push(Reorg {
                tick: *tick,
                slot: *slot,
                actor: *actor,
                old: *old,
                new: *new,
                depth: lost.len() as u64,
                orphaned_honest,
            });
        }
    }
    Ok(out)
}

/// Finality latency per block: slots elapsed from the block's proposal to
/// the first finalization (by any actor) whose finalized block has it as an
/// ancestor. Blocks never covered by a finalization are absent.
pub fn time_to_finality(records: &[TraceRecord]) -> Result<BTreeMap<Digest, u64>, SimError> {
    let tree = TraceTree::from_records(records);
    let mut ttf = BTreeMap::new();
    for record in records {
        if let TraceRecord::Finalize { slot, block, .. } = record {
            for covered in tree.chain(*block)? {
                if covered == tree.genesis() {
                    continue;
                }
                ttf.entry(covered)
                    .or_insert_with(|| slot.saturating_sub(tree.slot_of(covered).unwrap_or(0)));
            }
        }
    }
    Ok(ttf)
}

/// Two finalized checkpoints that cannot both stand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalityConflict {
    pub first_block: Digest,
    pub first_index: u64,
    pub second_block: Digest,
    pub second_index: u64,
}

/// Search all `finalize` records (across every actor) for a conflicting
/// pair: two distinct finalized blocks at the same checkpoint index, or two
/// finalized blocks on incomparable chains. Returns the first conflict
/// found, or `None` when every pair is chain-compatible.
pub fn finality_conflict(records: &[TraceRecord]) -> Result<Option<FinalityConflict>, SimError> {
    let tree = TraceTree::from_records(records);
    let mut finalized: Vec<(Digest, u64)> = Vec::new();
    let mut seen = BTreeSet::new();
    for record in records {
        if let TraceRecord::Finalize { block, index, .. } = record {
            if seen.insert((*block, *index)) {
                finalized.push((*block, *index));
            }
        }
    }
    for (i, (block_a, index_a)) in finalized.iter().enumerate() {
        for (block_b, index_b) in finalized.iter().skip(i + 1) {
            let same_height_conflict = index_a == index_b && block_a != block_b;
            let chain_conflict = !tree.is_ancestor(*block_a, *block_b)?
                && !tree.is_ancestor(*block_b, *block_a)?;
            if same_height_conflict || chain_conflict {
                return Ok(Some(FinalityConflict {
                    first_block: *block_a,
                    first_index: *index_a,
                    second_block: *block_b,
                    second_index: *index_b,
                }));
            }
        }
    }
    Ok(None)
}

/// A confirmed head that does not extend the actor's latest finalized block.
#[derive(Debug, Clone)]
pub struct PrefixBreak {
    pub tick: Tick,
    pub actor: ValidatorId,
    pub finalized: Digest,
    pub confirmed: Digest,
}

/// Check, per actor and in trace order, that every `confirm` record's block
/// has the actor's latest finalized block as an ancestor — the finalized
/// ledger must stay a prefix of the available ledger at every extraction
/// point.
pub fn finalized_prefix_breaks(records: &[TraceRecord]) -> Result<Vec<PrefixBreak>, SimError> {
    let tree = TraceTree::from_records(records);
    let mut latest_finalized: BTreeMap<ValidatorId, Digest> = BTreeMap::new();
    let mut breaks = Vec::new();
    for record in records {
        match record {
            TraceRecord::Finalize { actor, block, .. } => {
                latest_finalized.insert(*actor, *block);
            }
            TraceRecord::Confirm {
                tick, actor, block, ..
            } => {
                let Some(finalized) = latest_finalized.get(actor).copied() else {
                    continue;
                };
                if !tree.is_ancestor(finalized, *block)? {
                    breaks.push(PrefixBreak {
                        tick: *tick,
                        actor: *actor,
                        finalized,
                        confirmed: *block,
                    });
                }
            }
            _ => {}
        }
    }
    Ok(breaks)
}

/// Classical-BFT execution divergence: two honest replicas replying with
/// different digests for the same sequence number.
#[derive(Debug, Clone)]
pub struct ReplyDivergence {
    pub seq: u64,
    pub first_actor: ValidatorId,
    pub first_digest: Digest,
    pub second_actor: ValidatorId,
    pub second_digest: Digest,
}

pub fn reply_divergence(records: &[TraceRecord]) -> Option<ReplyDivergence> {
    let adversaries = adversary_ids(records);
    let mut by_seq: BTreeMap<u64, (ValidatorId, Digest)> = BTreeMap::new();
    for record in records {
        if let TraceRecord::Pbft {
            actor,
            step,
            seq,
            digest,
            ..
        } = record
        {
            if *step != "reply" || adversaries.contains(actor) {
                continue;
            }
            match by_seq.get(seq) {
                None => {
                    by_seq.insert(*seq, (*actor, *digest));
                }
                Some((first_actor, first_digest)) => {
                    if first_digest != digest {
                        return Some(ReplyDivergence {
                            seq: *seq,
                            first_actor: *first_actor,
                            first_digest: *first_digest,
                            second_actor: *actor,
                            second_digest: *digest,
                        });
                    }
                }
            }
        }
    }
    None
}

/// Last head vote cast by each actor — a proxy for each validator's final
/// fork-choice head.
pub fn final_votes(records: &[TraceRecord]) -> BTreeMap<ValidatorId, Digest> {
    let mut map = BTreeMap::new();
    for record in records {
        if let TraceRecord::Vote { actor, block, .. } = record {
            map.insert(*actor, *block);
        }
    }
    map
}

/// Last confirmed (available-ledger) head reported by each actor.
pub fn final_confirmations(records: &[TraceRecord]) -> BTreeMap<ValidatorId, Digest> {
    let mut map = BTreeMap::new();
    for record in records {
        if let TraceRecord::Confirm { actor, block, .. } = record {
            map.insert(*actor, *block);
        }
    }
    map
}

/// Where every proposal ended up relative to the final canonical chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrphanReport {
    /// Deepest chain tip an honest validator still endorses at the end of
    /// the run.
    pub final_head: Digest,
    /// Slots whose honest proposals fell off the canonical chain, ascending.
    pub honest_slots: Vec<u64>,
    /// Slots whose adversarial proposals fell off the canonical chain,
    /// ascending.
    pub adversary_slots: Vec<u64>,
}

impl OrphanReport {
    /// True when no proposal at all was orphaned.
    pub fn is_clean(&self) -> bool {
        self.honest_slots.is_empty() && self.adversary_slots.is_empty()
    }
}

/// Classify every proposed block as canonical or orphaned, judged against
/// the deepest head an honest validator endorses at the end of the trace.
pub fn orphans(records: &[TraceRecord]) -> Result<OrphanReport, SimError> {
    let tree = TraceTree::from_records(records);
    let adversaries = adversary_ids(records);
    let final_head = final_honest_head(records, &tree, &adversaries)?;
    let canonical: BTreeSet<Digest> = tree.chain(final_head)?.into_iter().collect();
    let mut honest_slots = Vec::new();
    let mut adversary_slots = Vec::new();
    for block in tree.proposed_blocks() {
        if canonical.contains(&block) {
            continue;
        }
        let slot = tree.slot_of(block).unwrap_or(0);
        if tree
            .proposer_of(block)
            .is_some_and(|p| adversaries.contains(&p))
        {
            adversary_slots.push(slot);
        } else {
            honest_slots.push(slot);
        }
    }
    honest_slots.sort_unstable();
    adversary_slots.sort_unstable();
    Ok(OrphanReport {
        final_head,
        honest_slots,
        adversary_slots,
    })
}

/// Deepest head still endorsed by an honest validator at the end of the
/// trace: last head votes first, last confirmations as the fallback for
/// protocols that never vote on heads. Depth ties go to the larger digest.
fn final_honest_head(
    records: &[TraceRecord],
    tree: &TraceTree,
    adversaries: &BTreeSet<ValidatorId>,
) -> Result<Digest, SimError> {
    let votes = final_votes(records);
    let confirmations = final_confirmations(records);
    let candidates: Vec<Digest> = votes
        .iter()
        .chain(confirmations.iter())
        .filter(|(actor, _)| !adversaries.contains(actor))
        .map(|(_, block)| *block)
        .collect();
    let mut final_head = tree.genesis();
    let mut best_len = 0;
    for candidate in candidates {
        let len = tree.chain(candidate)?.len();
        if len > best_len || (len == best_len && candidate > final_head) {
            final_head = candidate;
            best_len = len;
        }
    }
    Ok(final_head)
}

/// One synchronous window in which a validator's confirmed chain failed to
/// grow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthFailure {
    pub actor: ValidatorId,
    /// First slot of the window `[first_slot, first_slot + window)`.
    pub first_slot: u64,
    /// Confirmed-chain length at the window's first and last slot.
    pub start_depth: u64,
    pub end_depth: u64,
}

/// Confirmed-chain growth verdicts over sliding synchronous windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthReport {
    pub window: u64,
    /// Number of (validator, window) pairs that were actually checked.
    pub checked: usize,
    pub failures: Vec<GrowthFailure>,
}

/// Check that every validator's confirmed chain strictly grows across every
/// window of `window` consecutive slots that is entirely synchronous (first
/// slot starts at or after the global stabilization time) and in which the
/// validator was awake throughout (it reported a confirmation every slot).
/// Windows before stabilization, around sleep, or past the end of the run
/// are exempt rather than failed; a trace without confirmation records
/// (the classical replication engine) checks nothing.
pub fn growth_intervals(records: &[TraceRecord], window: u64) -> Result<GrowthReport, SimError> {
    if window < 2 {
        return Err(SimError::Config(format!(
            "growth window must span at least 2 slots, got {window}"
        )));
    }
    let tree = TraceTree::from_records(records);
    let params = header(records);
    // Absent or infinite stabilization time: no window is ever synchronous.
    let gst: Option<Tick> = match params.get("gst").map(String::as_str) {
        Some("inf") | None => None,
        Some(raw) => raw.parse().ok(),
    };
    let mut report = GrowthReport {
        window,
        checked: 0,
        failures: Vec::new(),
    };
    let Some(gst) = gst else {
        return Ok(report);
    };

    // Per validator: slot -> (slot start tick, last confirmed digest).
    let mut confirms: BTreeMap<ValidatorId, BTreeMap<u64, (Tick, Digest)>> = BTreeMap::new();
    for record in records {
        if let TraceRecord::Confirm {
            tick,
            slot,
            phase,
            actor,
            block,
        } = record
        {
            confirms
                .entry(*actor)
                .or_default()
                .insert(*slot, (tick.saturating_sub(*phase), *block));
        }
    }

    for (actor, by_slot) in &confirms {
        let Some(&last_slot) = by_slot.keys().next_back() else {
            continue;
        };
        for first_slot in 0..=last_slot.saturating_sub(window - 1) {
            let slots = first_slot..first_slot + window;
            let Some((start_tick, start_block)) = by_slot.get(&first_slot) else {
                continue;
            };
            if *start_tick < gst || !slots.clone().all(|s| by_slot.contains_key(&s)) {
                continue;
            }
            let (_, end_block) = by_slot[&(first_slot + window - 1)];
            report.checked += 1;
            let start_depth = (tree.chain(*start_block)?.len() - 1) as u64;
            let end_depth = (tree.chain(end_block)?.len() - 1) as u64;
            if end_depth <= start_depth {
                report.failures.push(GrowthFailure {
                    actor: *actor,
                    first_slot,
                    start_depth,
                    end_depth,
                });
            }
        }
    }
    Ok(report)
}

/// First line where two traces diverge, if any. Compares rendered lines so
/// the answer matches a textual diff of the two files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// 1-based line number of the first difference.
    pub line: usize,
    /// Left line, absent when the left trace ended first.
    pub left: Option<String>,
    /// Right line, absent when the right trace ended first.
    pub right: Option<String>,
}

pub fn first_divergence(a: &[TraceRecord], b: &[TraceRecord]) -> Option<Divergence> {
    let longest = a.len().max(b.len());
    for i in 0..longest {
        let left = a.get(i).map(|r| r.to_line());
        let right = b.get(i).map(|r| r.to_line());
        if left != right {
            return Some(Divergence {
                line: i + 1,
                left,
                right,
            });
        }
    }
    None
}

/// Aggregate statistics for a trace, rendered as `key = value` lines.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    fields: Vec<(String, String)>,
}

impl Summary {
    fn push(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.fields {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(value);
            out.push('\n');
        }
        out
    }

    /// True when the trace shows a safety breach: conflicting finalizations,
    /// a finalized block off the available chain, or diverging replies.
    pub fn safety_violated(&self) -> bool {
        self.get("finality_conflict") != Some("none")
            || self.get("prefix_breaks").is_some_and(|v| v != "0")
            || self
                .get("reply_divergence")
                .is_some_and(|v| v != "none")
    }
}

pub fn summarize(records: &[TraceRecord]) -> Result<Summary, SimError> {
    let tree = TraceTree::from_records(records);
    let params = header(records);
    let adversaries = adversary_ids(records);
    let mut summary = Summary::default();

    for key in ["n", "slots", "epoch_slots", "delta", "gst", "gat"] {
        if let Some(value) = params.get(key) {
            summary.push(key, value);
        }
    }
    if !adversaries.is_empty() {
        let ids: Vec<String> = adversaries.iter().map(|v| v.to_string()).collect();
        summary.push("adversary_ids", ids.join(","));
    }

    let proposed = tree.proposed_blocks();
    summary.push("blocks_proposed", proposed.len());
    let vacant = records
        .iter()
        .filter(|r| matches!(r, TraceRecord::NoProposal { .. }))
        .count();
    summary.push("vacant_slots", vacant);

    let final_head = final_honest_head(records, &tree, &adversaries)?;
    summary.push("final_head", digest_hex(final_head));
    let canonical: BTreeSet<Digest> = tree.chain(final_head)?.into_iter().collect();
    summary.push("canonical_length", canonical.len() - 1);
    let orphaned = proposed.iter().filter(|b| !canonical.contains(b)).count();
    summary.push("orphaned_blocks", orphaned);

    let reorg_events = reorgs(records)?;
    summary.push("reorg_events", reorg_events.len());
    summary.push(
        "max_reorg_depth",
        reorg_events.iter().map(|r| r.depth).max().unwrap_or(0),
    );
    summary.push(
        "honest_reorg_events",
        reorg_events
            .iter()
            .filter(|r| r.orphaned_honest > 0)
            .count(),
    );

    let growth = growth_intervals(records, 2)?;
    summary.push("growth_windows", growth.checked);
    summary.push("growth_failures", growth.failures.len());

    let mut finalized_indices: BTreeSet<u64> = BTreeSet::new();
    let mut last_finalized: Option<(u64, Digest)> = None;
    for record in records {
        if let TraceRecord::Finalize { block, index, .. } = record {
            finalized_indices.insert(*index);
            if last_finalized.map(|(i, _)| *index >= i).unwrap_or(true) {
                last_finalized = Some((*index, *block));
            }
        }
    }
    summary.push("finalized_checkpoints", finalized_indices.len());
    match last_finalized {
        Some((index, block)) => {
            summary.push("last_finalized_index", index);
            summary.push("last_finalized_block", digest_hex(block));
        }
        None => {
            summary.push("last_finalized_index", "none");
            summary.push("last_finalized_block", "none");
        }
    }

    let ttf = time_to_finality(records)?;
    match ttf.values().max() {
        Some(max) => summary.push("max_time_to_finality", max),
        None => summary.push("max_time_to_finality", "none"),
    }

    let mut slashes: BTreeMap<&str, BTreeSet<ValidatorId>> = BTreeMap::new();
    for record in records {
        if let TraceRecord::Slash { offender, rule, .. } = record {
            slashes.entry(rule).or_default().insert(*offender);
        }
    }
    for (rule, offenders) in &slashes {
        summary.push(&format!("slashed_{rule}"), offenders.len());
    }

    match finality_conflict(records)? {
        Some(conflict) => summary.push(
            "finality_conflict",
            format!(
                "{}@{} vs {}@{}",
                digest_hex(conflict.first_block),
                conflict.first_index,
                digest_hex(conflict.second_block),
                conflict.second_index
            ),
        ),
        None => summary.push("finality_conflict", "none"),
    }
    summary.push("prefix_breaks", finalized_prefix_breaks(records)?.len());

    let replies = records
        .iter()
        .filter(|r| matches!(r, TraceRecord::Pbft { step: "reply", .. }))
        .count();
    if replies > 0 {
        summary.push("replies", replies);
        match reply_divergence(records) {
            Some(d) => summary.push(
                "reply_divergence",
                format!(
                    "seq {}: {} vs {}",
                    d.seq,
                    digest_hex(d.first_digest),
                    digest_hex(d.second_digest)
                ),
            ),
            None => summary.push("reply_divergence", "none"),
        }
    }

    Ok(summary)
}
