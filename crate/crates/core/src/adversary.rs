//! Scripted adversaries.
//!
//! A single coordinated adversary controls every validator in
//! `adversary_ids` plus whatever network leverage the scenario grants it.
//! Engines consult it at three points: when an adversarial validator is
//! about to propose, when one is about to vote, and whenever any message is
//! broadcast (to pick per-recipient delivery delays). Withheld messages go
//! into a stash; scripted wake events release them with the honest one-tick
//! delay, so a release aimed at tick T is sent at T-1 and lands at T ahead
//! of that tick's phase handlers.

use crate::block_tree::{Block, Digest, VoteMessage};
use crate::rng::SimRng;
use crate::scenario::{AdversaryKind, Scenario};
use crate::sim::Message;
use crate::stake::ValidatorId;
use crate::time::{Tick, TimeBound};
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

/// What an adversarial proposer does with its slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposeDirective {
    Honest,
    /// Build on the adversary's own head but keep the block private.
    Withhold,
    /// Build on this exact parent and broadcast normally.
    OnParent(Digest),
}

/// What an adversarial voter does with its slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteDirective {
    Honest,
    /// Vote for this digest (which may not exist in any view yet) and
    /// broadcast normally.
    For(Digest),
    /// Vote for this digest but keep the vote private.
    WithholdFor(Digest),
    /// Cast two conflicting votes in one slot.
    Equivocate,
    Abstain,
}

/// One withheld message plus the recipients that already received it.
#[derive(Debug, Clone)]
struct Stashed {
    msg: Message,
    sent_to: BTreeSet<ValidatorId>,
}

/// A released message: who formally sends it, and to whom.
pub type Release = (ValidatorId, Vec<ValidatorId>, Message);

#[derive(Debug)]
pub struct Adversary {
    kind: AdversaryKind,
    ids: BTreeSet<ValidatorId>,
    k: u64,
    anchor: u64,
    pps: u64,
    seed: u64,
    delay_counter: u64,
    stash: Vec<Stashed>,
    /// The private fork block, once created.
    fork_block: Option<Digest>,
    /// Last block observed per slot, for deterministic parent lookup.
    seen_blocks: BTreeMap<u64, Block>,
}

impl Adversary {
    pub fn new(scenario: &Scenario) -> Self {
        Adversary {
            kind: scenario.adversary,
            ids: scenario.adversary_ids.clone(),
            k: scenario.adversary_k,
            anchor: scenario.adversary_slot,
            pps: scenario.protocol.phases_per_slot(),
            seed: scenario.seed,
            delay_counter: 0,
            stash: Vec::new(),
            fork_block: None,
            seen_blocks: BTreeMap::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != AdversaryKind::None
    }

    /// Track every block the adversary learns about (it sees all traffic).
    pub fn observe_block(&mut self, block: Block) {
        self.seen_blocks.insert(block.slot, block);
    }

    /// Deepest observed block at or before `slot`.
    fn block_at_or_before(&self, slot: u64) -> Option<Block> {
        self.seen_blocks.range(..=slot).next_back().map(|(_, b)| *b)
    }

    /// The tick at which a slot's voters run, for release targeting.
    fn vote_tick(&self, slot: u64) -> Tick {
        slot * self.pps + 1
    }

    /// Wake ticks to schedule at startup. Each wake is one tick before the
    /// targeted vote tick so the released messages land exactly at it.
    pub fn wake_ticks(&self) -> Vec<Tick> {
        match self.kind {
            AdversaryKind::ExAnteReorg => vec![
                self.vote_tick(self.anchor + 2) - 1,
                self.vote_tick(self.anchor + 3) - 1,
            ],
            AdversaryKind::KReorg => vec![self.vote_tick(self.anchor + self.k + 1) - 1],
            _ => Vec::new(),
        }
    }

    /// Per-recipient delivery delays for a broadcast happening now, or None
    /// for the honest default.
    pub fn delays(
        &mut self,
        scenario: &Scenario,
        tick: Tick,
        sender: ValidatorId,
    ) -> Option<BTreeMap<ValidatorId, Tick>> {
        match self.kind {
            AdversaryKind::DelayControl => {
                let delta = scenario.network.delta;
                let cap = match scenario.network.gst {
                    TimeBound::At(gst) => delta + tick.max(gst),
                    TimeBound::Never => tick + 4 * delta,
                };
                let lo = tick + 1;
                let mut rng = SimRng::derive(self.seed, "delay-control", self.delay_counter);
                self.delay_counter += 1;
                let mut out = BTreeMap::new();
                for v in &scenario.validators {
                    if v.id == sender {
                        continue;
                    }
                    out.insert(v.id, lo + rng.next_below(cap - lo + 1));
                }
                Some(out)
            }
            AdversaryKind::ExpiryReorg if !self.ids.contains(&sender) => {
                // Honest traffic from the asynchronous window is pinned to
                // the first tick the bound allows: the start of the slot
                // after the adversary's fork lands.
                let slot = tick / self.pps;
                if slot >= self.anchor && slot < self.anchor + self.k {
                    let arrive = (self.anchor + self.k + 1) * self.pps;
                    let mut out = BTreeMap::new();
                    for v in &scenario.validators {
                        if v.id != sender {
                            out.insert(v.id, arrive);
                        }
                    }
                    Some(out)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Directive for an adversarial proposer.
    pub fn propose_directive(&mut self, slot: u64, v: ValidatorId) -> ProposeDirective {
        if !self.ids.contains(&v) {
            return ProposeDirective::Honest;
        }
        match self.kind {
            AdversaryKind::ExAnteReorg | AdversaryKind::KReorg if slot == self.anchor + 1 => {
                ProposeDirective::Withhold
            }
            AdversaryKind::ExpiryReorg if slot == self.anchor + self.k => {
                match self.block_at_or_before(self.anchor.saturating_sub(2)) {
                    Some(parent) => ProposeDirective::OnParent(parent.digest),
                    None => ProposeDirective::Honest,
                }
            }
            _ => ProposeDirective::Honest,
        }
    }

    /// Directive for an adversarial voter.
    pub fn vote_directive(&mut self, slot: u64, v: ValidatorId) -> VoteDirective {
        if !self.ids.contains(&v) {
            return VoteDirective::Honest;
        }
        match self.kind {
            AdversaryKind::ExAnteReorg if slot == self.anchor + 1 || slot == self.anchor + 2 => {
                match self.fork_block {
                    Some(d) => VoteDirective::WithholdFor(d),
                    None => VoteDirective::Abstain,
                }
            }
            AdversaryKind::KReorg if slot > self.anchor && slot <= self.anchor + self.k => {
                match self.fork_block {
                    Some(d) => VoteDirective::WithholdFor(d),
                    None => VoteDirective::Abstain,
                }
            }
            AdversaryKind::ExpiryReorg if slot >= self.anchor && slot < self.anchor + self.k => {
                match self.future_fork_digest(v) {
                    Some(d) => VoteDirective::For(d),
                    None => VoteDirective::Honest,
                }
            }
            AdversaryKind::Equivocate if slot == self.anchor => VoteDirective::Equivocate,
            _ => VoteDirective::Honest,
        }
    }

    /// Digest of the fork block the expiry script will propose at
    /// `anchor + k`: computable before the block exists because digests
    /// commit to (parent, slot, proposer) only.
    fn future_fork_digest(&self, proposer: ValidatorId) -> Option<Digest> {
        let parent = self.block_at_or_before(self.anchor.saturating_sub(2))?;
        Some(Block::compute_digest(
            parent.digest,
            self.anchor + self.k,
            proposer,
        ))
    }

    /// Stash the private fork block.
    pub fn stash_block(&mut self, block: Block) {
        self.fork_block = Some(block.digest);
        self.observe_block(block);
        self.stash.push(Stashed {
            msg: Message::Block(block),
            sent_to: BTreeSet::new(),
        });
    }

    /// Stash a private vote.
    pub fn stash_vote(&mut self, vote: VoteMessage) {
        self.stash.push(Stashed {
            msg: Message::Vote(vote),
            sent_to: BTreeSet::new(),
        });
    }

    /// Messages to send when a scripted wake fires.
    pub fn on_wake(&mut self, scenario: &Scenario, tick: Tick) -> Result<Vec<Release>, SimError> {
        match self.kind {
            AdversaryKind::ExAnteReorg => {
                let first = self.vote_tick(self.anchor + 2) - 1;
                if tick == first {
                    // Partial release: only the first half of the next
                    // slot's committee learns of the private fork, splitting
                    // honest opinion.
                    let committee = scenario.committee(self.anchor + 2)?;
                    let half = committee.len().div_ceil(2);
                    let split: Vec<ValidatorId> = committee[..half].to_vec();
                    Ok(self.release(&split))
                } else {
                    Ok(self.release_to_all_honest(scenario))
                }
            }
            AdversaryKind::KReorg => Ok(self.release_to_all_honest(scenario)),
            _ => Ok(Vec::new()),
        }
    }

    fn release_to_all_honest(&mut self, scenario: &Scenario) -> Vec<Release> {
        let everyone: Vec<ValidatorId> = scenario.validators.iter().map(|v| v.id).collect();
        self.release(&everyone)
    }

    /// Send every stashed message to the given recipients, skipping
    /// adversarial validators (their views were primed at creation) and
    /// anyone who already received that message.
    fn release(&mut self, recipients: &[ValidatorId]) -> Vec<Release> {
        let mut out = Vec::new();
        for item in &mut self.stash {
            let fresh: Vec<ValidatorId> = recipients
                .iter()
                .copied()
                .filter(|r| !self.ids.contains(r) && !item.sent_to.contains(r))
                .collect();
            if fresh.is_empty() {
                continue;
            }
            item.sent_to.extend(fresh.iter().copied());
            let sender = match &item.msg {
                Message::Block(b) => b.proposer,
                Message::Vote(v) => v.voter,
                _ => continue,
            };
            out.push((sender, fresh, item.msg.clone()));
        }
        out
    }
}
