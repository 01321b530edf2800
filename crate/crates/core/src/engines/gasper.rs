//! Epoch-gadget engine: LMD-GHOST fork choice under a checkpoint
//! justification gadget, with per-epoch voting committees.
//!
//! Slots run three phases (propose, attest, housekeeping) and views merge on
//! delivery — this engine has no view-merge discipline, so no merge records
//! appear in its traces. At the first phase of every epoch-opening slot each
//! validator settles the finished epoch: it tallies checkpoint links,
//! justifies and finalizes, counts stalled epochs, drains inactive stake
//! once finality has stalled long enough, and reports slashable vote pairs.
//! Attestations combine a head vote with a checkpoint link from the latest
//! justified checkpoint to the current epoch boundary.

use crate::adversary::{Adversary, ProposeDirective, VoteDirective};
use crate::block_tree::{Block, Digest, Eta, Link, View, VoteMessage};
use crate::engines::{assert_prefix, note_head};
use crate::ffg::{detect_slashing, inactivity_leak, link_support, JustificationState};
use crate::fork_choice::{ghost, Balances};
use crate::scenario::Scenario;
use crate::sim::{Ctx, Engine, Message};
use crate::stake::{Mode, ValidatorId};
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

pub struct GasperEngine {
    states: BTreeMap<ValidatorId, GasperState>,
    adversary: Adversary,
    adversary_ids: Vec<ValidatorId>,
    epoch_slots: u64,
}

struct GasperState {
    view: View,
    just: JustificationState,
    /// Effective balances as this validator accounts them; the inactivity
    /// leak drains them independently in every view.
    balances: Balances,
    last_head: Option<Digest>,
    /// Epochs since the last new finalization.
    stalled: u64,
    /// (offender, rule) pairs already reported, so each is traced once.
    reported: BTreeSet<(ValidatorId, &'static str)>,
}

impl GasperState {
    fn new(scenario: &Scenario) -> Self {
        let view = View::new();
        let just = JustificationState::new(view.tree.genesis());
        GasperState {
            view,
            just,
            balances: scenario.balances(),
            last_head: None,
            stalled: 0,
            reported: BTreeSet::new(),
        }
    }
}

impl GasperEngine {
    pub fn new(scenario: &Scenario) -> Self {
        GasperEngine {
            states: scenario
                .validators
                .iter()
                .map(|v| (v.id, GasperState::new(scenario)))
                .collect(),
            adversary: Adversary::new(scenario),
            adversary_ids: scenario.adversary_ids.iter().copied().collect(),
            epoch_slots: scenario.epoch_slots,
        }
    }

    fn state(&mut self, v: ValidatorId) -> &mut GasperState {
        self.states.get_mut(&v).expect("state per validator")
    }

    /// Insert a privately created message into every adversarial view and
    /// merge-close those views: colluding validators share knowledge at
    /// once, so anything they buffered earlier resolves immediately.
    fn prime_adversaries(&mut self, blocks: &[Block], votes: &[VoteMessage]) {
        for id in self.adversary_ids.clone() {
            let view = &mut self.state(id).view;
            view.absorb(blocks, votes);
            view.merge();
        }
    }

    /// Fork-choice head: latest votes through `hi`, rooted at the latest
    /// justified block.
    fn head(state: &GasperState, hi: u64) -> Result<Digest, SimError> {
        let latest = state.view.latest_votes(hi + 1, Eta::Infinite);
        ghost(
            &state.view.tree,
            state.just.latest_justified().block,
            &latest,
            &state.balances,
        )
    }

    /// Settle the epoch that ended at `slot` (an epoch-opening slot):
    /// justify, finalize, track the stall, leak inactive stake, report
    /// slashable pairs. `silent` runs the state updates without records.
    fn epoch_transition(
        &mut self,
        ctx: &mut Ctx,
        slot: u64,
        v: ValidatorId,
        silent: bool,
    ) -> Result<(), SimError> {
        let epoch_slots = self.epoch_slots;
        let leak = ctx.scenario.leak;
        let validator_ids: Vec<ValidatorId> =
            ctx.scenario.validators.iter().map(|val| val.id).collect();
        let state = self.states.get_mut(&v).expect("state per validator");
        state.view.merge();
        let total: u64 = state.balances.values().sum();
        let support = link_support(state.view.votes(), &state.balances);
        let fresh_justified = state.just.update_justification(&support, total)?;
        if !silent {
            for cp in &fresh_justified {
                ctx.emit(TraceRecord::Justify {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    block: cp.block,
                    index: cp.index,
                });
            }
        }
        let fresh_finalized = state.just.update_finalization(&support, total);
        if !silent {
            for cp in &fresh_finalized {
                ctx.emit(TraceRecord::Finalize {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    block: cp.block,
                    index: cp.index,
                });
            }
        }
        if fresh_finalized.is_empty() {
            state.stalled += 1;
        } else {
            state.stalled = 0;
        }
        if state.stalled >= leak.trigger_epochs {
            // Inactive in the finished epoch: no vote of theirs was seen.
            let finished = slot / epoch_slots - 1;
            let lo = finished * epoch_slots;
            let hi = lo + epoch_slots - 1;
            let mut active: BTreeSet<ValidatorId> = BTreeSet::new();
            for vote in state.view.votes() {
                if vote.slot >= lo && vote.slot <= hi {
                    active.insert(vote.voter);
                }
            }
            let inactive: BTreeSet<ValidatorId> = validator_ids
                .iter()
                .copied()
                .filter(|id| !active.contains(id))
                .collect();
            inactivity_leak(&mut state.balances, &inactive, leak);
        }
        let votes: Vec<VoteMessage> = state.view.votes().copied().collect();
        for record in detect_slashing(&votes, false) {
            if state.reported.insert((record.offender, record.rule.label())) && !silent {
                ctx.emit(TraceRecord::Slash {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    offender: record.offender,
                    rule: record.rule.label(),
                });
            }
        }
        Ok(())
    }

    fn propose(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.proposer(slot)? != v {
            return Ok(());
        }
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            ctx.emit(TraceRecord::NoProposal {
                tick: ctx.tick,
                slot,
                phase: 0,
            });
            return Ok(());
        }
        match self.adversary.propose_directive(slot, v) {
            ProposeDirective::Honest => {
                let state = self.states.get_mut(&v).expect("state per validator");
                state.view.merge();
                let head = Self::head(state, slot.saturating_sub(1))?;
                note_head(ctx, slot, 0, v, &state.view.tree, &mut state.last_head, head)?;
                let block = Block::new(head, slot, v);
                state.view.absorb(&[block], &[]);
                // The computed head was a leaf, so the proposal is now its
                // only child and fork choice would land on it: the proposer
                // adopts its own block as head.
                state.last_head = Some(block.digest);
                ctx.emit(TraceRecord::Propose {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    block: block.digest,
                    parent: head,
                });
                self.adversary.observe_block(block);
                let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                ctx.broadcast(v, Message::Block(block), delays.as_ref())?;
            }
            ProposeDirective::Withhold => {
                let state = self.states.get_mut(&v).expect("state per validator");
                state.view.merge();
                let head = Self::head(state, slot.saturating_sub(1))?;
                let block = Block::new(head, slot, v);
                self.prime_adversaries(&[block], &[]);
                ctx.emit(TraceRecord::Propose {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    block: block.digest,
                    parent: head,
                });
                self.adversary.stash_block(block);
            }
            ProposeDirective::OnParent(parent) => {
                let block = Block::new(parent, slot, v);
                self.prime_adversaries(&[block], &[]);
                ctx.emit(TraceRecord::Propose {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    block: block.digest,
                    parent,
                });
                self.adversary.observe_block(block);
                let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                ctx.broadcast(v, Message::Block(block), delays.as_ref())?;
            }
        }
        Ok(())
    }

    fn attest(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            return Ok(());
        }
        if !ctx.scenario.committee(slot)?.contains(&v) {
            return Ok(());
        }
        let epoch_slots = self.epoch_slots;
        match self.adversary.vote_directive(slot, v) {
            VoteDirective::Honest => {
                let state = self.states.get_mut(&v).expect("state per validator");
                state.view.merge();
                let head = Self::head(state, slot.saturating_sub(1))?;
                note_head(ctx, slot, 1, v, &state.view.tree, &mut state.last_head, head)?;
                let epoch = slot / epoch_slots;
                let justified = state.just.latest_justified();
                let vote = if epoch > justified.index {
                    let target = state.view.tree.epoch_boundary_pair(head, epoch, epoch_slots)?;
                    debug_assert!(state.view.tree.is_ancestor(justified.block, target.block)?);
                    let link = Link {
                        source: justified,
                        target,
                    };
                    VoteMessage::combined(v, slot, head, Some(link))
                } else {
                    VoteMessage::head_vote(v, slot, head)
                };
                state.view.absorb(&[], &[vote]);
                ctx.emit(TraceRecord::Vote {
                    tick: ctx.tick,
                    slot,
                    phase: 1,
                    actor: v,
                    block: head,
                });
                if let Some(link) = vote.link {
                    ctx.emit(TraceRecord::FfgVote {
                        tick: ctx.tick,
                        slot,
                        phase: 1,
                        actor: v,
                        source_block: link.source.block,
                        source_index: link.source.index,
                        target_block: link.target.block,
                        target_index: link.target.index,
                    });
                }
                let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                ctx.broadcast(v, Message::Vote(vote), delays.as_ref())?;
            }
            VoteDirective::For(d) => {
                let vote = VoteMessage::head_vote(v, slot, d);
                self.prime_adversaries(&[], &[vote]);
                ctx.emit(TraceRecord::Vote {
                    tick: ctx.tick,
                    slot,
                    phase: 1,
                    actor: v,
                    block: d,
                });
                let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                ctx.broadcast(v, Message::Vote(vote), delays.as_ref())?;
            }
            VoteDirective::WithholdFor(d) => {
                let vote = VoteMessage::head_vote(v, slot, d);
                self.prime_adversaries(&[], &[vote]);
                ctx.emit(TraceRecord::Vote {
                    tick: ctx.tick,
                    slot,
                    phase: 1,
                    actor: v,
                    block: d,
                });
                self.adversary.stash_vote(vote);
            }
            VoteDirective::Equivocate => {
                let state = self.states.get_mut(&v).expect("state per validator");
                state.view.merge();
                let head = Self::head(state, slot.saturating_sub(1))?;
                let other = state.view.tree.get(head)?.parent;
                let mut pair = vec![VoteMessage::head_vote(v, slot, head)];
                if other != head {
                    pair.push(VoteMessage::head_vote(v, slot, other));
                }
                self.prime_adversaries(&[], &pair);
                for vote in pair {
                    ctx.emit(TraceRecord::Vote {
                        tick: ctx.tick,
                        slot,
                        phase: 1,
                        actor: v,
                        block: vote.head.expect("head vote"),
                    });
                    let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                    ctx.broadcast(v, Message::Vote(vote), delays.as_ref())?;
                }
            }
            VoteDirective::Abstain => {}
        }
        Ok(())
    }

    /// End-of-slot housekeeping: refresh the head with this slot's votes
    /// included, publish the confirmed (available-chain) tip, and check the
    /// finalized prefix.
    fn housekeeping(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        match ctx.scenario.mode(v, slot) {
            Mode::Offline => return Ok(()),
            Mode::Dreamy => {
                self.state(v).view.merge();
                return Ok(());
            }
            Mode::Awake => {}
        }
        let state = self.states.get_mut(&v).expect("state per validator");
        state.view.merge();
        let head = Self::head(state, slot)?;
        note_head(ctx, slot, 2, v, &state.view.tree, &mut state.last_head, head)?;
        ctx.emit(TraceRecord::Confirm {
            tick: ctx.tick,
            slot,
            phase: 2,
            actor: v,
            block: head,
        });
        assert_prefix(&state.view.tree, state.just.latest_finalized().block, head)
    }
}

impl Engine for GasperEngine {
    fn init(&mut self, ctx: &mut Ctx) -> Result<(), SimError> {
        for tick in self.adversary.wake_ticks() {
            ctx.schedule_wake(tick, tick)?;
        }
        Ok(())
    }

    fn on_phase(
        &mut self,
        ctx: &mut Ctx,
        slot: u64,
        phase: u64,
        v: ValidatorId,
    ) -> Result<(), SimError> {
        match phase {
            0 => {
                if slot > 0 && slot % self.epoch_slots == 0 {
                    match ctx.scenario.mode(v, slot) {
                        Mode::Awake => self.epoch_transition(ctx, slot, v, false)?,
                        Mode::Dreamy => self.epoch_transition(ctx, slot, v, true)?,
                        Mode::Offline => {}
                    }
                }
                self.propose(ctx, slot, v)
            }
            1 => self.attest(ctx, slot, v),
            2 => self.housekeeping(ctx, slot, v),
            _ => Ok(()),
        }
    }

    fn on_deliver(
        &mut self,
        _ctx: &mut Ctx,
        recipient: ValidatorId,
        _sender: ValidatorId,
        msg: &Message,
    ) -> Result<(), SimError> {
        // Views merge on delivery: there is no buffer discipline here.
        let state = self.states.get_mut(&recipient).expect("known validator");
        match msg {
            Message::Block(b) => {
                state.view.receive_block(*b);
                state.view.merge();
            }
            Message::Vote(vt) => {
                state.view.receive_vote(*vt);
                state.view.merge();
            }
            Message::Proposal { .. } | Message::Pbft(_) => {}
        }
        Ok(())
    }

    fn on_wake(&mut self, ctx: &mut Ctx, _payload: u64) -> Result<(), SimError> {
        let releases = self.adversary.on_wake(ctx.scenario, ctx.tick)?;
        for (sender, recipients, msg) in releases {
            ctx.send(sender, &recipients, msg, None)?;
        }
        Ok(())
    }
}
