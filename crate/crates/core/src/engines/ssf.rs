//! Single-slot-finality engine.
//!
//! Each slot runs four phases. The leader proposes with its merged view
//! attached; everyone casts a head vote; everyone then tallies the slot's
//! head votes — accepted and still-buffered alike — and if a supermajority
//! subtree tip exists, confirms it fast and casts a checkpoint link vote at
//! the tip with the slot as its height; finally everyone merges and runs the
//! gadget, where a link whose support was cast entirely in the target's own
//! slot both justifies and finalizes it. A proposal can thus be final three
//! ticks after it was made.

use crate::adversary::{Adversary, ProposeDirective, VoteDirective};
use crate::block_tree::{Block, Checkpoint, Digest, Eta, Link, View, VoteMessage};
use crate::engines::{note_head, same_slot_supermajority_tip, PendingProposal};
use crate::ffg::{detect_slashing, link_support, JustificationState};
use crate::fork_choice::{hfc, Balances};
use crate::scenario::{Scenario, SsfFallback};
use crate::sim::{Ctx, Engine, Message};
use crate::stake::{Mode, ValidatorId};
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

pub struct SsfEngine {
    states: BTreeMap<ValidatorId, SsfState>,
    adversary: Adversary,
    adversary_ids: Vec<ValidatorId>,
    balances: Balances,
    total: u64,
    eta: Eta,
}

struct SsfState {
    view: View,
    just: JustificationState,
    /// Fast-confirmed tip (the available chain).
    confirmed: Digest,
    last_head: Option<Digest>,
    pending: Option<PendingProposal>,
    reported: BTreeSet<(ValidatorId, &'static str)>,
}

impl SsfState {
    fn new() -> Self {
        let view = View::new();
        let just = JustificationState::new(view.tree.genesis());
        let confirmed = view.tree.genesis();
        SsfState {
            view,
            just,
            confirmed,
            last_head: None,
            pending: None,
            reported: BTreeSet::new(),
        }
    }
}

impl SsfEngine {
    pub fn new(scenario: &Scenario) -> Self {
        let balances = scenario.balances();
        let total = balances.values().sum();
        SsfEngine {
            states: scenario
                .validators
                .iter()
                .map(|v| (v.id, SsfState::new()))
                .collect(),
            adversary: Adversary::new(scenario),
            adversary_ids: scenario.adversary_ids.iter().copied().collect(),
            balances,
            total,
            eta: scenario.eta,
        }
    }

    fn state(&mut self, v: ValidatorId) -> &mut SsfState {
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
        let (balances, eta) = (self.balances.clone(), self.eta);
        match self.adversary.propose_directive(slot, v) {
            ProposeDirective::Honest => {
                let state = self.states.get_mut(&v).expect("state per validator");
                let accepted = state.view.merge() as u64;
                ctx.emit(TraceRecord::Merge {
                    tick: ctx.tick,
                    slot,
                    phase: 0,
                    actor: v,
                    accepted,
                });
                let justified = state.just.latest_justified();
                let head = hfc(&state.view, &justified, slot, eta, &balances)?;
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
                let state = self.states.get_mut(&v).expect("state per validator");
                state.view.merge();
                let justified = state.just.latest_justified();
                let head = hfc(&state.view, &justified, slot, eta, &balances)?;
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
                let state = self.states.get_mut(&v).expect("state per validator");
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
                let state = self.states.get_mut(&v).expect("state per validator");
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

    fn head_vote(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            return Ok(());
        }
        if !ctx.scenario.committee(slot)?.contains(&v) {
            return Ok(());
        }
        let (balances, eta) = (self.balances.clone(), self.eta);
        match self.adversary.vote_directive(slot, v) {
            VoteDirective::Honest => {
                let state = self.states.get_mut(&v).expect("state per validator");
                if let Some(p) = state.pending.take() {
                    if p.slot == slot {
                        state.view.absorb(&p.blocks, &p.votes);
                    }
                }
                let justified = state.just.latest_justified();
                let head = hfc(&state.view, &justified, slot, eta, &balances)?;
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
                let state = self.states.get_mut(&v).expect("state per validator");
                let justified = state.just.latest_justified();
                let head = hfc(&state.view, &justified, slot, eta, &balances)?;
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

    /// Fast confirmation plus the checkpoint link vote. The slot's head
    /// votes are tallied straight off the wire (they are still buffered);
    /// if a supermajority tip emerges it becomes the confirmed chain and the
    /// link target. Without one, the configured fallback applies.
    fn ffg_vote(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            return Ok(());
        }
        let (balances, total) = (self.balances.clone(), self.total);
        let fallback = ctx.scenario.ssf_fallback;
        let in_committee = ctx.scenario.committee(slot)?.contains(&v);
        let is_adversary = self.adversary_ids.contains(&v);
        let state = self.states.get_mut(&v).expect("state per validator");
        let tip = same_slot_supermajority_tip(&state.view, slot, &balances, total)?;
        if let Some(t) = tip {
            if !state.view.tree.is_ancestor(t, state.confirmed)? {
                state.confirmed = t;
            }
        }
        ctx.emit(TraceRecord::Confirm {
            tick: ctx.tick,
            slot,
            phase: 2,
            actor: v,
            block: state.confirmed,
        });
        if !in_committee || is_adversary {
            return Ok(());
        }
        let justified = state.just.latest_justified();
        let target = match tip {
            Some(t) if justified.index < slot && state.view.tree.is_ancestor(justified.block, t)? => {
                Some(Checkpoint::new(t, slot))
            }
            _ => match fallback {
                SsfFallback::Abstain => None,
                SsfFallback::PreviousConfirmed => {
                    if justified.index < slot
                        && state.view.tree.is_ancestor(justified.block, state.confirmed)?
                    {
                        Some(Checkpoint::new(state.confirmed, slot))
                    } else {
                        None
                    }
                }
            },
        };
        if let Some(target) = target {
            let link = Link {
                source: justified,
                target,
            };
            let vote = VoteMessage::ffg_vote(v, slot, link);
            state.view.absorb(&[], &[vote]);
            ctx.emit(TraceRecord::FfgVote {
                tick: ctx.tick,
                slot,
                phase: 2,
                actor: v,
                source_block: link.source.block,
                source_index: link.source.index,
                target_block: link.target.block,
                target_index: link.target.index,
            });
            let delays = self.adversary.delays(ctx.scenario, ctx.tick, v);
            ctx.broadcast(v, Message::Vote(vote), delays.as_ref())?;
        }
        Ok(())
    }

    /// End-of-slot merge and gadget run. A link supported by two thirds of
    /// the stake within the target's own slot finalizes it immediately; the
    /// adjacency rule still applies as a backstop.
    fn merge(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        let silent = match ctx.scenario.mode(v, slot) {
            Mode::Offline => return Ok(()),
            Mode::Dreamy => true,
            Mode::Awake => false,
        };
        let total = self.total;
        let balances = self.balances.clone();
        let state = self.states.get_mut(&v).expect("state per validator");
        let accepted = state.view.merge() as u64;
        if !silent {
            ctx.emit(TraceRecord::Merge {
                tick: ctx.tick,
                slot,
                phase: 3,
                actor: v,
                accepted,
            });
        }
        let support = link_support(state.view.votes(), &balances);
        let fresh_justified = state.just.update_justification(&support, total)?;
        if !silent {
            for cp in &fresh_justified {
                ctx.emit(TraceRecord::Justify {
                    tick: ctx.tick,
                    slot,
                    phase: 3,
                    actor: v,
                    block: cp.block,
                    index: cp.index,
                });
            }
        }
        let same_slot = link_support(
            state.view.votes().filter(|vt| vt.slot == slot),
            &balances,
        );
        let mut fresh_finalized = state.just.finalize_same_slot_targets(&same_slot, slot, total);
        fresh_finalized.extend(state.just.update_finalization(&support, total));
        if !silent {
            for cp in &fresh_finalized {
                ctx.emit(TraceRecord::Finalize {
                    tick: ctx.tick,
                    slot,
                    phase: 3,
                    actor: v,
                    block: cp.block,
                    index: cp.index,
                });
            }
        }
        let votes: Vec<VoteMessage> = state.view.votes().copied().collect();
        for record in detect_slashing(&votes, false) {
            if state.reported.insert((record.offender, record.rule.label())) && !silent {
                ctx.emit(TraceRecord::Slash {
                    tick: ctx.tick,
                    slot,
                    phase: 3,
                    actor: v,
                    offender: record.offender,
                    rule: record.rule.label(),
                });
            }
        }
        // Finality overrides a lagging fast confirmation, keeping the
        // finalized chain a prefix of the confirmed one.
        let finalized = state.just.latest_finalized();
        if !state.view.tree.is_ancestor(finalized.block, state.confirmed)? {
            state.confirmed = finalized.block;
        }
        Ok(())
    }
}

impl Engine for SsfEngine {
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
            1 => self.head_vote(ctx, slot, v),
            2 => self.ffg_vote(ctx, slot, v),
            3 => self.merge(ctx, slot, v),
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
