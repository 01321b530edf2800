//! Three-slot-finality engine.
//!
//! Four phases per slot. Votes are combined: one message carries both the
//! head vote and a checkpoint link from the latest justified checkpoint to
//! the head at the current slot's height. A slot's proposal is justified at
//! the end of its own slot and finalized two slots later by the two-chain
//! rule — two consecutive adjacent supermajority links. Fork choice starts
//! from the fast-confirmed tip when that tip still sits on the justified
//! chain, and from the latest justified block otherwise. The gadget's extra
//! slashing rule (a later source paired with an earlier target) is active
//! here: checkpoints are per-slot, so the rule is meaningful.

use crate::adversary::{Adversary, ProposeDirective, VoteDirective};
use crate::block_tree::{Block, Checkpoint, Digest, Link, View, VoteMessage};
use crate::engines::{note_head, same_slot_supermajority_tip, PendingProposal};
use crate::ffg::{detect_slashing, link_support, JustificationState};
use crate::fork_choice::{ghost, Balances};
use crate::scenario::Scenario;
use crate::sim::{Ctx, Engine, Message};
use crate::stake::{Mode, ValidatorId};
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

pub struct ThreeSfEngine {
    states: BTreeMap<ValidatorId, ThreeSfState>,
    adversary: Adversary,
    adversary_ids: Vec<ValidatorId>,
    balances: Balances,
    total: u64,
}

struct ThreeSfState {
    view: View,
    just: JustificationState,
    /// Fast-confirmed tip (the confirmed chain).
    confirmed: Digest,
    last_head: Option<Digest>,
    pending: Option<PendingProposal>,
    reported: BTreeSet<(ValidatorId, &'static str)>,
}

impl ThreeSfState {
    fn new() -> Self {
        let view = View::new();
        let just = JustificationState::new(view.tree.genesis());
        let confirmed = view.tree.genesis();
        ThreeSfState {
            view,
            just,
            confirmed,
            last_head: None,
            pending: None,
            reported: BTreeSet::new(),
        }
    }

    /// Fork-choice root: the confirmed tip while it extends the justified
    /// chain, else the justified block itself.
    fn root(&self) -> Result<Digest, SimError> {
        let justified = self.just.latest_justified();
        if self.view.tree.is_ancestor(justified.block, self.confirmed)? {
            Ok(self.confirmed)
        } else {
            Ok(justified.block)
        }
    }

    fn head(&self, slot: u64, eta: crate::block_tree::Eta, balances: &Balances) -> Result<Digest, SimError> {
        let latest = self.view.latest_votes(slot, eta);
        ghost(&self.view.tree, self.root()?, &latest, balances)
    }
}

impl ThreeSfEngine {
    pub fn new(scenario: &Scenario) -> Self {
        let balances = scenario.balances();
        let total = balances.values().sum();
        ThreeSfEngine {
            states: scenario
                .validators
                .iter()
                .map(|v| (v.id, ThreeSfState::new()))
                .collect(),
            adversary: Adversary::new(scenario),
            adversary_ids: scenario.adversary_ids.iter().copied().collect(),
            balances,
            total,
        }
    }

    fn state(&mut self, v: ValidatorId) -> &mut ThreeSfState {
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
        let (balances, eta) = (self.balances.clone(), ctx.scenario.eta);
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
                let head = state.head(slot, eta, &balances)?;
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
                let head = state.head(slot, eta, &balances)?;
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

    /// The combined vote: head plus a checkpoint link targeting the head at
    /// this slot's height.
    fn vote(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            return Ok(());
        }
        if !ctx.scenario.committee(slot)?.contains(&v) {
            return Ok(());
        }
        let (balances, eta) = (self.balances.clone(), ctx.scenario.eta);
        match self.adversary.vote_directive(slot, v) {
            VoteDirective::Honest => {
                let state = self.states.get_mut(&v).expect("state per validator");
                if let Some(p) = state.pending.take() {
                    if p.slot == slot {
                        state.view.absorb(&p.blocks, &p.votes);
                    }
                }
                let head = state.head(slot, eta, &balances)?;
                note_head(ctx, slot, 1, v, &state.view.tree, &mut state.last_head, head)?;
                let justified = state.just.latest_justified();
                let link = if justified.index < slot {
                    debug_assert!(state.view.tree.is_ancestor(justified.block, head)?);
                    Some(Link {
                        source: justified,
                        target: Checkpoint::new(head, slot),
                    })
                } else {
                    None
                };
                let vote = VoteMessage::combined(v, slot, head, link);
                state.view.absorb(&[], &[vote]);
                ctx.emit(TraceRecord::Vote {
                    tick: ctx.tick,
                    slot,
                    phase: 1,
                    actor: v,
                    block: head,
                });
                if let Some(link) = link {
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
                let head = state.head(slot, eta, &balances)?;
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

    /// Fast confirmation from the slot's head votes, accepted and buffered
    /// alike.
    fn confirm(&mut self, ctx: &mut Ctx, slot: u64, v: ValidatorId) -> Result<(), SimError> {
        if ctx.scenario.mode(v, slot) != Mode::Awake {
            return Ok(());
        }
        let (balances, total) = (self.balances.clone(), self.total);
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
        Ok(())
    }

    /// End-of-slot merge and gadget run: justification, two-chain
    /// finalization, and slashing detection with the extra rule active.
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
        let fresh_finalized = state.just.update_finalization_two_chain(&support, total);
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
        for record in detect_slashing(&votes, true) {
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

impl Engine for ThreeSfEngine {
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
