//! Protocol engines: one module per protocol, plus shared plumbing.
//!
//! The three vote-expiry engines (`goldfish`, `rlmd`, `lmd_vm`) are coded
//! independently on purpose — each states its own fork-choice window and
//! confirmation rule — and the equivalence suite holds their traces
//! byte-identical where the windows coincide. The epoch-gadget engine
//! (`gasper`), the single-slot engine (`ssf`), and the three-slot engine
//! (`three_sf`) add a finality gadget on top of the same scheduling shape.

pub mod gasper;
pub mod goldfish;
pub mod lmd_vm;
pub mod rlmd;
pub mod ssf;
pub mod three_sf;

use crate::block_tree::{Block, BlockTree, Digest, View, VoteMessage};
use crate::fork_choice::Balances;
use crate::pbft::PbftEngine;
use crate::scenario::{Protocol, Scenario};
use crate::sim::{self, Ctx};
use crate::stake::ValidatorId;
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

/// Run a scenario under the engine its protocol selects.
pub fn run(scenario: &Scenario) -> Result<Vec<TraceRecord>, SimError> {
    match scenario.protocol {
        Protocol::GasperLite => sim::run(scenario, &mut gasper::GasperEngine::new(scenario)),
        Protocol::Goldfish => sim::run(scenario, &mut goldfish::GoldfishEngine::new(scenario)),
        Protocol::Rlmd => sim::run(scenario, &mut rlmd::RlmdEngine::new(scenario)),
        Protocol::LmdVm => sim::run(scenario, &mut lmd_vm::LmdVmEngine::new(scenario)),
        Protocol::Ssf => sim::run(scenario, &mut ssf::SsfEngine::new(scenario)),
        Protocol::ThreeSf => sim::run(scenario, &mut three_sf::ThreeSfEngine::new(scenario)),
        Protocol::Pbft => {
            let mut engine = PbftEngine::new(scenario)?;
            sim::run(scenario, &mut engine)
        }
    }
}

/// Per-validator state for the vote-expiry engines.
pub(crate) struct VmState {
    pub view: View,
    pub confirmed: Digest,
    pub last_head: Option<Digest>,
    pub pending: Option<PendingProposal>,
}

/// A delivered leader proposal waiting for the recipient's vote phase.
pub(crate) struct PendingProposal {
    pub slot: u64,
    pub blocks: Vec<Block>,
    pub votes: Vec<VoteMessage>,
}

impl VmState {
    pub fn new() -> Self {
        let view = View::new();
        let confirmed = view.tree.genesis();
        VmState {
            view,
            confirmed,
            last_head: None,
            pending: None,
        }
    }
}

/// Record a fork-choice head movement, emitting a head-change record when
/// the previous head is abandoned (not an ancestor of the new one).
pub(crate) fn note_head(
    ctx: &mut Ctx,
    slot: u64,
    phase: u64,
    actor: ValidatorId,
    tree: &BlockTree,
    last_head: &mut Option<Digest>,
    new: Digest,
) -> Result<(), SimError> {
    if let Some(old) = *last_head {
        if old != new && !tree.is_ancestor(old, new)? {
            ctx.emit(TraceRecord::HeadChange {
                tick: ctx.tick,
                slot,
                phase,
                actor,
                old,
                new,
            });
        }
    }
    *last_head = Some(new);
    Ok(())
}

/// The finalized tip must sit on the available chain. This is a test
/// oracle: a run that trips it has broken the ledger sandwich.
pub(crate) fn assert_prefix(
    tree: &BlockTree,
    finalized: Digest,
    available: Digest,
) -> Result<(), SimError> {
    if !tree.is_ancestor(finalized, available)? {
        return Err(SimError::PrefixViolation {
            finalized,
            available,
        });
    }
    Ok(())
}

/// Deepest block whose subtree gathers a supermajority of the head votes
/// cast in `slot`, scanning accepted and buffered votes alike — the running
/// slot's votes are still in flight at tally time. A voter showing two
/// distinct heads for the slot is discarded. Votes for blocks the view does
/// not know cannot support anything.
pub(crate) fn same_slot_supermajority_tip(
    view: &View,
    slot: u64,
    balances: &Balances,
    total: u64,
) -> Result<Option<Digest>, SimError> {
    let mut heads: BTreeMap<ValidatorId, Digest> = BTreeMap::new();
    let mut dropped: BTreeSet<ValidatorId> = BTreeSet::new();
    let buffered = view.buffered_votes().filter(|vt| vt.slot == slot);
    for vote in view.votes_in_slot(slot).chain(buffered) {
        let Some(h) = vote.head else { continue };
        if dropped.contains(&vote.voter) {
            continue;
        }
        match heads.get(&vote.voter) {
            Some(prev) if *prev != h => {
                heads.remove(&vote.voter);
                dropped.insert(vote.voter);
            }
            _ => {
                heads.insert(vote.voter, h);
            }
        }
    }
    let mut acc: BTreeMap<Digest, u64> = BTreeMap::new();
    for (voter, target) in &heads {
        if !view.tree.contains(*target) {
            continue;
        }
        let stake = balances.get(voter).copied().unwrap_or(0);
        if stake == 0 {
            continue;
        }
        let mut cur = view.tree.get(*target)?;
        loop {
            *acc.entry(cur.digest).or_insert(0) += stake;
            if cur.is_genesis() {
                break;
            }
            cur = view.tree.get(cur.parent)?;
        }
    }
    let mut best: Option<(u64, Digest)> = None;
    for (d, w) in &acc {
        if 3 * *w >= 2 * total {
            let cand = (view.tree.depth(*d)?, *d);
            if best.map(|b| cand > b).unwrap_or(true) {
                best = Some(cand);
            }
        }
    }
    Ok(best.map(|(_, d)| d))
}
