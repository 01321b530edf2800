//! Single-slot-memory engine.
//!
//! Fork choice is steered by the head votes of exactly the previous slot —
//! older votes have expired — and confirmation counts only the current
//! slot's votes. Each slot runs three phases: the leader merges its buffer
//! and broadcasts a block with its view attached; voters adopt that view
//! (their own buffers stay frozen) and vote; then everyone merges buffered
//! deliveries and updates the confirmed chain.

use crate::adversary::{Adversary, ProposeDirective, VoteDirective};
use crate::block_tree::{Block, LatestVotes, View, VoteMessage};
use crate::engines::{assert_prefix, note_head, PendingProposal, VmState};
use crate::fork_choice::{ghost, supported_prefix, Balances};
use crate::scenario::Scenario;
use crate::sim::{Ctx, Engine, Message};
use crate::stake::{Mode, ValidatorId};
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::BTreeMap;

pub struct GoldfishEngine {
    states: BTreeMap<ValidatorId, VmState>,
    adversary: Adversary,
    adversary_ids: Vec<ValidatorId>,
    balances: Balances,
}

/// Latest head vote per voter from the single slot `slot`; a voter showing
/// two heads inside it is dropped and flagged.
fn single_slot_votes(view: &View, slot: u64, out: &mut LatestVotes) {
    for vote in view.votes_in_slot(slot) {
        let Some(head) = vote.head else { continue };
        if out.equivocators.contains(&vote.voter) {
            continue;
        }
        match out.by_voter.get(&vote.voter) {
            Some((_, prev)) if *prev != head => {
                out.by_voter.remove(&vote.voter);
                out.equivocators.insert(vote.voter);
            }
            _ => {
                out.by_voter.insert(vote.voter, (slot, head));
            }
        }
    }
}

impl GoldfishEngine {
    pub fn new(scenario: &Scenario) -> Self {
        GoldfishEngine {
            states: scenario
                .validators
                .iter()
                .map(|v| (v.id, VmState::new()))
                .collect(),
            adversary: Adversary::new(scenario),
            adversary_ids: scenario.adversary_ids.iter().copied().collect(),
            balances: scenario.balances(),
        }
    }

    /// Fork-choice electorate: the previous slot's votes, nothing older.
    fn steering_votes(view: &View, slot: u64) -> LatestVotes {
        let mut out = LatestVotes::default();
        if slot > 0 {
            single_slot_votes(view, slot - 1, &mut out);
        }
        out
    }

    /// Confirmation electorate: the current slot's votes only.
    fn confirming_votes(view: &View, slot: u64) -> LatestVotes {
        let mut out = LatestVotes::default();
        single_slot_votes(view, slot, &mut out);
        out
    }

    fn state(&mut self, v: ValidatorId) -> &mut VmState {
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
                let balances = self.balances.clone();
                let state = self.state(v);
                let accepted = state.view.merge() as u64;
                ctx.emit(TraceRecord::Merge {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    accepted,
                });
                let latest = Self::steering_votes(&state.view, slot);
                let head = ghost(&state.view.tree, state.view.tree.genesis(), &latest, &balances)?;
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
                let view_blocks: Vec<Block> = state
                    .view
                    .tree
                    .blocks()
                    .filter(|b| !b.is_genesis())
                    .copied()
                    .collect();
                let view_votes: Vec<VoteMessage> = state.view.votes().copied().collect();
                self.adversary.observe_block(block);
                let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                ctx.broadcast(
                    v,
                    Message::Proposal {
                        block,
                        view_blocks,
                        view_votes,
                    },
                    delays.as_ref(),
                )?;
            }
            ProposeDirective::Withhold => {
                let balances = self.balances.clone();
                let state = self.state(v);
                state.view.merge();
                let latest = Self::steering_votes(&state.view, slot);
                let head = ghost(&state.view.tree, state.view.tree.genesis(), &latest, &balances)?;
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
                let state = self.state(v);
                state.view.merge();
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
                let state = self.state(v);
                let view_blocks: Vec<Block> = state
                    .view
                    .tree
                    .blocks()
                    .filter(|b| !b.is_genesis())
                    .copied()
                    .collect();
                let view_votes: Vec<VoteMessage> = state.view.votes().copied().collect();
                let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
                ctx.broadcast(
                    v,
                    Message::Proposal {
                        block,
                        view_blocks,
                        view_votes,
                    },
                    delays.as_ref(),
                )?;
            }
        }
        Ok(())
    }

    fn vote(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            return Ok(());
        }
        if !ctx.scenario.committee(slot)?.contains(&v) {
            return Ok(());
        }
        match self.adversary.vote_directive(slot, v) {
            VoteDirective::Honest => {
                let balances = self.balances.clone();
                let state = self.state(v);
                if let Some(p) = state.pending.take() {
                    if p.slot == slot {
                        state.view.absorb(&p.blocks, &p.votes);
                    }
                }
                let latest = Self::steering_votes(&state.view, slot);
                let head = ghost(&state.view.tree, state.view.tree.genesis(), &latest, &balances)?;
                note_head(ctx, slot, 1, v, &state.view.tree, &mut state.last_head, head)?;
                let vote = VoteMessage::head_vote(v, slot, head);
                state.view.absorb(&[], &[vote]);
                ctx.emit(TraceRecord::Vote {
                    tick: ctx.tick,
                    slot,
                    phase: 1,
                    actor: v,
                    block: head,
                });
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
                let balances = self.balances.clone();
                let state = self.state(v);
                let latest = Self::steering_votes(&state.view, slot);
                let head = ghost(&state.view.tree, state.view.tree.genesis(), &latest, &balances)?;
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

    fn confirm(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        match ctx.scenario.mode(v, slot) {
            Mode::Offline => return Ok(()),
            Mode::Dreamy => {
                self.state(v).view.merge();
                return Ok(());
            }
            Mode::Awake => {}
        }
        let balances = self.balances.clone();
        let state = self.state(v);
        let accepted = state.view.merge() as u64;
        ctx.emit(TraceRecord::Merge {
            tick: ctx.tick,
            slot,
            phase: 2,
            actor: v,
            accepted,
        });
        let latest = Self::confirming_votes(&state.view, slot);
        let tip = supported_prefix(&state.view.tree, state.view.tree.genesis(), &latest, &balances)?;
        if !state.view.tree.is_ancestor(tip, state.confirmed)? {
            state.confirmed = tip;
        }
        ctx.emit(TraceRecord::Confirm {
            tick: ctx.tick,
            slot,
            phase: 2,
            actor: v,
            block: state.confirmed,
        });
        // No finality gadget here: the finalized ledger is the genesis
        // chain, so the sandwich check reduces to tree-rootedness.
        assert_prefix(&state.view.tree, state.view.tree.genesis(), state.confirmed)?;
        Ok(())
    }
}

impl Engine for GoldfishEngine {
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
            0 => self.propose(ctx, slot, v),
            1 => self.vote(ctx, slot, v),
            2 => self.confirm(ctx, slot, v),
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
        let state = self.states.get_mut(&recipient).expect("known validator");
        match msg {
            Message::Block(b) => state.view.receive_block(*b),
            Message::Vote(vt) => state.view.receive_vote(*vt),
            Message::Proposal {
                block,
                view_blocks,
                view_votes,
            } => {
                state.view.receive_block(*block);
                for b in view_blocks {
                    state.view.receive_block(*b);
                }
                for vt in view_votes {
                    state.view.receive_vote(*vt);
                }
                let mut blocks = view_blocks.clone();
                blocks.push(*block);
                state.pending = Some(PendingProposal {
                    slot: block.slot,
                    blocks,
                    votes: view_votes.clone(),
                });
            }
            Message::Pbft(_) => {}
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
