//! Checkpoint justification, finalization, slashing detection, and the
//! accountable-safety audit.
//!
//! Quorum arithmetic is exact: stake is integral and a supermajority means
//! `3 * support >= 2 * total`. Three finalization rules cover the protocol
//! family:
//!
//! * adjacency: a justified source with a supermajority link to the next
//!   height finalizes (epoch-based gadgets);
//! * same-slot target: a supermajority link whose votes were all cast in the
//!   target's own slot finalizes the target (single-slot finality, the second
//!   quorum round of the slot);
//! * two-chain: two consecutive adjacent supermajority links finalize the
//!   first source (three-slot pipeline).

use crate::block_tree::{BlockTree, Checkpoint, Digest, Link, VoteMessage};
use crate::fork_choice::Balances;
use crate::stake::ValidatorId;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

/// Exact-rational supermajority check.
pub fn is_supermajority(support: u64, total: u64) -> bool {
    3 * support >= 2 * total
}

/// A well-formed link strictly increases checkpoint height.
pub fn validate_link(link: &Link) -> Result<(), SimError> {
    if link.target.index <= link.source.index {
        return Err(SimError::MalformedLink(format!(
            "target height {} does not exceed source height {}",
            link.target.index, link.source.index
        )));
    }
    Ok(())
}

/// Stake behind each link, counting every distinct voter once.
pub fn link_support<'a>(
    votes: impl IntoIterator<Item = &'a VoteMessage>,
    balances: &Balances,
) -> BTreeMap<Link, u64> {
    let mut voters: BTreeMap<Link, BTreeSet<ValidatorId>> = BTreeMap::new();
    for vote in votes {
        if let Some(link) = vote.link {
            voters.entry(link).or_default().insert(vote.voter);
        }
    }
    voters
        .into_iter()
        .map(|(link, vs)| {
            let stake = vs
                .iter()
                .map(|v| balances.get(v).copied().unwrap_or(0))
                .sum();
            (link, stake)
        })
        .collect()
}

/// Whether a single link clears the supermajority threshold under `votes`.
pub fn supermajority_link<'a>(
    link: &Link,
    votes: impl IntoIterator<Item = &'a VoteMessage>,
    balances: &Balances,
    total: u64,
) -> bool {
    let support = link_support(votes, balances)
        .get(link)
        .copied()
        .unwrap_or(0);
    is_supermajority(support, total)
}

/// Justified and finalized checkpoint sets. Genesis starts both.
#[derive(Debug, Clone)]
pub struct JustificationState {
    justified: BTreeSet<Checkpoint>,
    finalized: BTreeSet<Checkpoint>,
}

impl JustificationState {
    pub fn new(genesis: Digest) -> Self {
        let root = Checkpoint::new(genesis, 0);
        JustificationState {
            justified: BTreeSet::from([root]),
            finalized: BTreeSet::from([root]),
        }
    }

    pub fn is_justified(&self, cp: &Checkpoint) -> bool {
        self.justified.contains(cp)
    }

    pub fn is_finalized(&self, cp: &Checkpoint) -> bool {
        self.finalized.contains(cp)
    }

    /// Highest justified checkpoint; the Ord on Checkpoint sorts by height.
    pub fn latest_justified(&self) -> Checkpoint {
        *self.justified.iter().next_back().expect("genesis present")
    }

    pub fn latest_finalized(&self) -> Checkpoint {
        *self.finalized.iter().next_back().expect("genesis present")
    }

    pub fn justified(&self) -> impl Iterator<Item = &Checkpoint> {
        self.justified.iter()
    }

    pub fn finalized(&self) -> impl Iterator<Item = &Checkpoint> {
        self.finalized.iter()
    }

    /// Run the justification fixpoint: a checkpoint becomes justified when a
    /// supermajority link from an already-justified source targets it.
    /// Returns newly justified checkpoints in ascending order. Malformed
    /// links are rejected.
    pub fn update_justification(
        &mut self,
        support: &BTreeMap<Link, u64>,
        total: u64,
    ) -> Result<Vec<Checkpoint>, SimError> {
        for link in support.keys() {
            validate_link(link)?;
        }
        let mut fresh = Vec::new();
        loop {
            let mut moved = false;
            for (link, stake) in support {
                if !is_supermajority(*stake, total) {
                    continue;
                }
                if self.justified.contains(&link.source) && !self.justified.contains(&link.target)
                {
                    self.justified.insert(link.target);
                    fresh.push(link.target);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        fresh.sort();
        Ok(fresh)
    }

    /// Adjacency finalization: a justified source with a supermajority link
    /// to a justified target one height up becomes finalized.
    pub fn update_finalization(
        &mut self,
        support: &BTreeMap<Link, u64>,
        total: u64,
    ) -> Vec<Checkpoint> {
        let mut fresh = Vec::new();
        for (link, stake) in support {
            if !is_supermajority(*stake, total) {
                continue;
            }
            if link.target.index == link.source.index + 1
                && self.justified.contains(&link.source)
                && self.justified.contains(&link.target)
                && !self.finalized.contains(&link.source)
            {
                self.finalized.insert(link.source);
                fresh.push(link.source);
            }
        }
        fresh.sort();
        fresh
    }

    /// Single-slot finalization: a justified checkpoint whose justifying
    /// supermajority was cast entirely in its own slot is finalized on the
    /// spot. The head-vote quorum observed by those voters is the first
    /// round; this link is the second.
    pub fn finalize_same_slot_targets(
        &mut self,
        same_slot_support: &BTreeMap<Link, u64>,
        slot: u64,
        total: u64,
    ) -> Vec<Checkpoint> {
        let mut fresh = Vec::new();
        for (link, stake) in same_slot_support {
            if !is_supermajority(*stake, total) {
                continue;
            }
            if link.target.index == slot
                && self.justified.contains(&link.target)
                && !self.finalized.contains(&link.target)
            {
                self.finalized.insert(link.target);
                fresh.push(link.target);
            }
        }
        fresh.sort();
        fresh
    }

    /// Two-chain finalization: justified `c` with adjacent supermajority
    /// links `c -> c'` and `c' -> c''` becomes finalized.
    pub fn update_finalization_two_chain(
        &mut self,
        support: &BTreeMap<Link, u64>,
        total: u64,
    ) -> Vec<Checkpoint> {
        let strong: Vec<&Link> = support
            .iter()
            .filter(|(_, s)| is_supermajority(**s, total))
            .map(|(l, _)| l)
            .collect();
        let mut fresh = Vec::new();
        for first in &strong {
            if first.target.index != first.source.index + 1
                || !self.justified.contains(&first.source)
                || self.finalized.contains(&first.source)
            {
                continue;
            }
            let chained = strong.iter().any(|second| {
                second.source == first.target
                    && second.target.index == second.source.index + 1
            });
            if chained {
                self.finalized.insert(first.source);
                fresh.push(first.source);
            }
        }
        fresh.sort();
        fresh
    }
}

/// Slashable offense categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SlashingRule {
    /// Two distinct links with equal target height.
    DoubleVote,
    /// One vote's span strictly nests inside the other's.
    SurroundVote,
    /// Later source paired with an earlier target (per-slot checkpoints).
    ThreeSfExtra,
}

impl SlashingRule {
    pub fn label(&self) -> &'static str {
        match self {
            SlashingRule::DoubleVote => "double",
            SlashingRule::SurroundVote => "surround",
            SlashingRule::ThreeSfExtra => "extra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlashingRecord {
    pub offender: ValidatorId,
    pub rule: SlashingRule,
    pub first: Link,
    pub second: Link,
}

/// Scan a vote log for slashable link pairs per voter. The 3SF extra rule
/// only applies to protocols with per-slot checkpoints, so it sits behind a
/// flag. Each offender is reported once per rule.
pub fn detect_slashing(votes: &[VoteMessage], three_sf_extra: bool) -> Vec<SlashingRecord> {
    let mut by_voter: BTreeMap<ValidatorId, Vec<Link>> = BTreeMap::new();
    for vote in votes {
        if let Some(link) = vote.link {
            let entry = by_voter.entry(vote.voter).or_default();
            if !entry.contains(&link) {
                entry.push(link);
            }
        }
    }
    let mut records = Vec::new();
    for (voter, links) in &by_voter {
        let mut seen: BTreeSet<SlashingRule> = BTreeSet::new();
        for i in 0..links.len() {
            for j in (i + 1)..links.len() {
                let (a, b) = (links[i], links[j]);
                let mut hit = |rule: SlashingRule, first: Link, second: Link| {
                    if seen.insert(rule) {
                        records.push(SlashingRecord {
                            offender: *voter,
                            rule,
                            first,
                            second,
                        });
                    }
                };
                if a.target.index == b.target.index {
                    hit(SlashingRule::DoubleVote, a, b);
                }
                // Order the pair as (outer, inner) by target height.
                let (outer, inner) = if a.target.index > b.target.index {
                    (a, b)
                } else {
                    (b, a)
                };
                if outer.source.index < inner.source.index
                    && inner.source.index < inner.target.index
                    && inner.target.index < outer.target.index
                {
                    hit(SlashingRule::SurroundVote, outer, inner);
                }
                if three_sf_extra {
                    // slot(s1) < slot(s2) with h(t2) < h(t1).
                    let (first, second) = if a.source.index < b.source.index {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    if first.source.index < second.source.index
                        && second.target.index < first.target.index
                    {
                        hit(SlashingRule::ThreeSfExtra, first, second);
                    }
                }
            }
        }
    }
    records
}

/// Which finalization rule a protocol runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalityRule {
    Adjacency,
    SameSlotTarget,
    TwoChain,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    /// A conflicting finalized pair, if any exists.
    pub conflicting: Option<(Checkpoint, Checkpoint)>,
    pub slashing: Vec<SlashingRecord>,
    pub slashable_stake: u64,
    pub total_stake: u64,
}

impl AuditReport {
    /// Accountable safety: either no conflict, or more than a third of stake
    /// is provably slashable.
    pub fn holds(&self) -> bool {
        self.conflicting.is_none() || 3 * self.slashable_stake > self.total_stake
    }
}

/// Replay the global vote log, recompute justification and finalization
/// under `rule`, and if two conflicting checkpoints finalized, attribute
/// slashable stake.
pub fn accountable_safety_audit(
    tree: &BlockTree,
    votes: &[VoteMessage],
    balances: &Balances,
    total: u64,
    rule: FinalityRule,
    three_sf_extra: bool,
) -> Result<AuditReport, SimError> {
    let support = link_support(votes.iter(), balances);
    let mut state = JustificationState::new(tree.genesis());
    state.update_justification(&support, total)?;
    match rule {
        FinalityRule::Adjacency => {
            state.update_finalization(&support, total);
        }
        FinalityRule::TwoChain => {
            state.update_finalization_two_chain(&support, total);
        }
        FinalityRule::SameSlotTarget => {
            let slots: BTreeSet<u64> = votes.iter().map(|v| v.slot).collect();
            for slot in slots {
                let same_slot =
                    link_support(votes.iter().filter(|v| v.slot == slot), balances);
                state.finalize_same_slot_targets(&same_slot, slot, total);
            }
            state.update_finalization(&support, total);
        }
    }
    let finalized: Vec<Checkpoint> = state.finalized().copied().collect();
    let mut conflicting = None;
    'outer: for (i, a) in finalized.iter().enumerate() {
        for b in finalized.iter().skip(i + 1) {
            if tree.is_conflicting(a.block, b.block)? {
                conflicting = Some((*a, *b));
                break 'outer;
            }
        }
    }
    let slashing = detect_slashing(votes, three_sf_extra);
    let offenders: BTreeSet<ValidatorId> = slashing.iter().map(|r| r.offender).collect();
    let slashable_stake = offenders
        .iter()
        .map(|v| balances.get(v).copied().unwrap_or(0))
        .sum();
    Ok(AuditReport {
        conflicting,
        slashing,
        slashable_stake,
        total_stake: total,
    })
}

/// Inactivity-leak knobs: stall length before it starts, and the per-epoch
/// drain rate applied to inactive validators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakParams {
    pub trigger_epochs: u64,
    pub rate_num: u64,
    pub rate_den: u64,
}

impl Default for LeakParams {
    fn default() -> Self {
        LeakParams {
            trigger_epochs: 4,
            rate_num: 1,
            rate_den: 10,
        }
    }
}

/// One epoch of inactivity leak: every inactive validator loses
/// `floor(balance * rate)` of its remaining effective stake.
pub fn inactivity_leak(
    balances: &mut Balances,
    inactive: &BTreeSet<ValidatorId>,
    params: LeakParams,
) {
    for (id, bal) in balances.iter_mut() {
        if inactive.contains(id) {
            *bal -= *bal * params.rate_num / params.rate_den;
        }
    }
}
