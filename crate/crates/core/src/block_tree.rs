//! Blocks, checkpoints, votes, and per-validator views.
//!
//! A view splits into the accepted set (usable by fork choice and the
//! finality gadget) and a buffer of messages whose ancestry is not yet known.
//! The accepted set is closed under block ancestry: a block enters only after
//! its parent, a vote only after every block it references.

use crate::rng::fnv1a;
use crate::stake::ValidatorId;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

pub type Digest = u64;

/// Proposer id carried by the genesis block.
pub const GENESIS_PROPOSER: ValidatorId = u64::MAX;

/// Format a digest the way traces print it.
pub fn digest_hex(d: Digest) -> String {
    format!("{d:016x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub digest: Digest,
    pub parent: Digest,
    pub slot: u64,
    pub proposer: ValidatorId,
}

impl Block {
    /// Digest over the canonical encoding `parent || slot || proposer`
    /// (little-endian u64 each).
    pub fn compute_digest(parent: Digest, slot: u64, proposer: ValidatorId) -> Digest {
        let mut bytes = [0u8; 24];
        bytes[0..8].copy_from_slice(&parent.to_le_bytes());
        bytes[8..16].copy_from_slice(&slot.to_le_bytes());
        bytes[16..24].copy_from_slice(&proposer.to_le_bytes());
        fnv1a(&bytes)
    }

    pub fn new(parent: Digest, slot: u64, proposer: ValidatorId) -> Self {
        Block {
            digest: Self::compute_digest(parent, slot, proposer),
            parent,
            slot,
            proposer,
        }
    }

    /// The unique root block: slot 0, self-parent.
    pub fn genesis() -> Self {
        let digest = fnv1a(b"genesis");
        Block {
            digest,
            parent: digest,
            slot: 0,
            proposer: GENESIS_PROPOSER,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.parent == self.digest
    }
}

/// A finality-gadget checkpoint: a block paired with a height index
/// (epoch number for epoch-based protocols, slot number for per-slot ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checkpoint {
    pub block: Digest,
    pub index: u64,
}

impl Checkpoint {
    pub fn new(block: Digest, index: u64) -> Self {
        Checkpoint { block, index }
    }
}

// Order by height first so "latest justified" is a max().
impl Ord for Checkpoint {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.index, self.block).cmp(&(other.index, other.block))
    }
}

impl PartialOrd for Checkpoint {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// A source -> target checkpoint pair carried by an FFG vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Link {
    pub source: Checkpoint,
    pub target: Checkpoint,
}

/// One validator vote. Head component drives the GHOST family; link
/// component drives the finality gadget. Combined votes carry both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VoteMessage {
    pub voter: ValidatorId,
    pub slot: u64,
    pub head: Option<Digest>,
    pub link: Option<Link>,
}

impl VoteMessage {
    pub fn head_vote(voter: ValidatorId, slot: u64, head: Digest) -> Self {
        VoteMessage {
            voter,
            slot,
            head: Some(head),
            link: None,
        }
    }

    pub fn ffg_vote(voter: ValidatorId, slot: u64, link: Link) -> Self {
        VoteMessage {
            voter,
            slot,
            head: None,
            link: Some(link),
        }
    }

    pub fn combined(voter: ValidatorId, slot: u64, head: Digest, link: Option<Link>) -> Self {
        VoteMessage {
            voter,
            slot,
            head: Some(head),
            link,
        }
    }
}

/// Vote-expiry horizon for the GHOST family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eta {
    Finite(u64),
    Infinite,
}

impl Eta {
    /// Inclusive `[lo, hi]` window of vote slots counted when voting in
    /// `slot`; `None` when the window is empty.
    pub fn window(&self, slot: u64) -> Option<(u64, u64)> {
        if slot == 0 {
            return None;
        }
        let hi = slot - 1;
        let lo = match self {
            Eta::Infinite => 0,
            Eta::Finite(0) => return None,
            Eta::Finite(e) => slot.saturating_sub(*e),
        };
        Some((lo, hi))
    }
}

/// Block tree over the accepted set. Children lists stay digest-sorted so
/// iteration order is deterministic.
#[derive(Debug, Clone)]
pub struct BlockTree {
    blocks: BTreeMap<Digest, Block>,
    children: BTreeMap<Digest, Vec<Digest>>,
    genesis: Digest,
}

impl BlockTree {
    pub fn new() -> Self {
        let g = Block::genesis();
        let mut blocks = BTreeMap::new();
        blocks.insert(g.digest, g);
        BlockTree {
            blocks,
            children: BTreeMap::new(),
            genesis: g.digest,
        }
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn contains(&self, d: Digest) -> bool {
        self.blocks.contains_key(&d)
    }

    pub fn get(&self, d: Digest) -> Result<&Block, SimError> {
        self.blocks.get(&d).ok_or(SimError::UnknownBlock(d))
    }

    pub fn children(&self, d: Digest) -> &[Digest] {
        self.children.get(&d).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false // genesis is always present
    }

    /// Insert a block whose parent is already accepted.
    pub fn insert(&mut self, block: Block) -> Result<(), SimError> {
        if self.blocks.contains_key(&block.digest) {
            return Ok(());
        }
        if !self.blocks.contains_key(&block.parent) {
            return Err(SimError::UnknownBlock(block.parent));
        }
        let siblings = self.children.entry(block.parent).or_default();
        if let Err(pos) = siblings.binary_search(&block.digest) {
            siblings.insert(pos, block.digest);
        }
        self.blocks.insert(block.digest, block);
        Ok(())
    }

    /// True when `anc` is `desc` or an ancestor of `desc`.
    pub fn is_ancestor(&self, anc: Digest, desc: Digest) -> Result<bool, SimError> {
        if !self.contains(anc) {
            return Err(SimError::UnknownBlock(anc));
        }
        let mut cur = self.get(desc)?;
        loop {
            if cur.digest == anc {
                return Ok(true);
            }
            if cur.is_genesis() {
                return Ok(false);
            }
            cur = self.get(cur.parent)?;
        }
    }

    /// Genesis-to-block chain, inclusive.
    pub fn chain(&self, d: Digest) -> Result<Vec<Digest>, SimError> {
        let mut out = Vec::new();
        let mut cur = self.get(d)?;
        loop {
            out.push(cur.digest);
            if cur.is_genesis() {
                break;
            }
            cur = self.get(cur.parent)?;
        }
        out.reverse();
        Ok(out)
    }

    /// Number of ancestors (genesis has depth 0).
    pub fn depth(&self, d: Digest) -> Result<u64, SimError> {
        let mut n = 0;
        let mut cur = self.get(d)?;
        while !cur.is_genesis() {
            n += 1;
            cur = self.get(cur.parent)?;
        }
        Ok(n)
    }

    /// Neither checkpoint block on the chain of the other.
    pub fn is_conflicting(&self, a: Digest, b: Digest) -> Result<bool, SimError> {
        Ok(!self.is_ancestor(a, b)? && !self.is_ancestor(b, a)?)
    }

    /// Highest ancestor of `tip` with `slot <= j * epoch_len`, paired with
    /// index `j`.
    pub fn epoch_boundary_pair(
        &self,
        tip: Digest,
        j: u64,
        epoch_len: u64,
    ) -> Result<Checkpoint, SimError> {
        let bound = j * epoch_len;
        let mut cur = self.get(tip)?;
        loop {
            if cur.slot <= bound {
                return Ok(Checkpoint::new(cur.digest, j));
            }
            cur = self.get(cur.parent)?;
        }
    }
}

impl Default for BlockTree {
    fn default() -> Self {
        Self::new()
    }
}

/// Latest non-equivocating head vote per voter within a window.
#[derive(Debug, Clone, Default)]
pub struct LatestVotes {
    /// voter -> (vote slot, head target)
    pub by_voter: BTreeMap<ValidatorId, (u64, Digest)>,
    /// Voters that issued two different head votes for one slot.
    pub equivocators: BTreeSet<ValidatorId>,
}

/// A validator's accepted set plus buffer.
#[derive(Debug, Clone)]
pub struct View {
    pub tree: BlockTree,
    /// Accepted votes, keyed by (voter, slot). Several entries under one key
    /// record an equivocation.
    votes: BTreeMap<(ValidatorId, u64), Vec<VoteMessage>>,
    buffer_blocks: BTreeMap<Digest, Block>,
    buffer_votes: Vec<VoteMessage>,
}

impl View {
    pub fn new() -> Self {
        View {
            tree: BlockTree::new(),
            votes: BTreeMap::new(),
            buffer_blocks: BTreeMap::new(),
            buffer_votes: Vec::new(),
        }
    }

    /// Queue a block for acceptance at the next merge.
    pub fn receive_block(&mut self, block: Block) {
        if !self.tree.contains(block.digest) {
            self.buffer_blocks.insert(block.digest, block);
        }
    }

    /// Queue a vote for acceptance at the next merge.
    pub fn receive_vote(&mut self, vote: VoteMessage) {
        self.buffer_votes.push(vote);
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer_blocks.len() + self.buffer_votes.len()
    }

    fn vote_references_known(&self, vote: &VoteMessage) -> bool {
        let head_ok = vote.head.map(|h| self.tree.contains(h)).unwrap_or(true);
        let link_ok = vote
            .link
            .map(|l| self.tree.contains(l.source.block) && self.tree.contains(l.target.block))
            .unwrap_or(true);
        head_ok && link_ok
    }

    fn accept_vote(&mut self, vote: VoteMessage) -> bool {
        let entry = self.votes.entry((vote.voter, vote.slot)).or_default();
        if entry.contains(&vote) {
            return false;
        }
        entry.push(vote);
        entry.sort();
        true
    }

    /// Move every buffered message whose references are accepted into the
    /// view, repeating until nothing moves. Returns how many messages were
    /// newly accepted.
    pub fn merge(&mut self) -> usize {
        let mut accepted = 0;
        loop {
            let ready: Vec<Digest> = self
                .buffer_blocks
                .values()
                .filter(|b| self.tree.contains(b.parent))
                .map(|b| b.digest)
                .collect();
            if ready.is_empty() {
                break;
            }
            for d in ready {
                let block = self.buffer_blocks.remove(&d).expect("buffered block");
                if !self.tree.contains(block.digest) {
                    self.tree.insert(block).expect("parent accepted");
                    accepted += 1;
                }
            }
        }
        let mut remaining = Vec::new();
        for vote in std::mem::take(&mut self.buffer_votes) {
            if self.vote_references_known(&vote) {
                if self.accept_vote(vote) {
                    accepted += 1;
                }
            } else {
                remaining.push(vote);
            }
        }
        self.buffer_votes = remaining;
        accepted
    }

    /// Accept the given messages directly, running the acceptance closure
    /// over the supplied set only. Anything still unresolved afterwards is
    /// queued in the buffer, and messages already waiting in the buffer stay
    /// exactly where they are — a voter adopting a leader's view must not
    /// unfreeze deliveries that are due at the next merge phase.
    pub fn absorb(&mut self, blocks: &[Block], votes: &[VoteMessage]) -> usize {
        let mut accepted = 0;
        let mut pending: Vec<Block> = blocks
            .iter()
            .filter(|b| !b.is_genesis() && !self.tree.contains(b.digest))
            .cloned()
            .collect();
        loop {
            let mut progressed = false;
            let mut rest = Vec::new();
            for block in pending {
                if self.tree.contains(block.digest) {
                    continue;
                }
                if self.tree.contains(block.parent) {
                    self.tree.insert(block).expect("parent accepted");
                    accepted += 1;
                    progressed = true;
                } else {
                    rest.push(block);
                }
            }
            pending = rest;
            if !progressed || pending.is_empty() {
                break;
            }
        }
        for block in pending {
            self.buffer_blocks.entry(block.digest).or_insert(block);
        }
        for vote in votes {
            if self.vote_references_known(vote) {
                if self.accept_vote(*vote) {
                    accepted += 1;
                }
            } else if !self.buffer_votes.contains(vote) {
                self.buffer_votes.push(*vote);
            }
        }
        accepted
    }

    /// Union another view's accepted set into this one. Commutative and
    /// idempotent; the receiving buffer is left untouched.
    pub fn adopt_proposal_view(&mut self, other: &View) -> usize {
        let blocks: Vec<Block> = other.tree.blocks().copied().collect();
        let votes: Vec<VoteMessage> = other.votes.values().flatten().copied().collect();
        self.absorb(&blocks, &votes)
    }

    /// All accepted votes, in (voter, slot) order.
    pub fn votes(&self) -> impl Iterator<Item = &VoteMessage> {
        self.votes.values().flatten()
    }

    /// Votes still waiting in the buffer, in arrival order.
    pub fn buffered_votes(&self) -> impl Iterator<Item = &VoteMessage> {
        self.buffer_votes.iter()
    }

    /// Accepted votes cast in `slot`.
    pub fn votes_in_slot(&self, slot: u64) -> impl Iterator<Item = &VoteMessage> {
        self.votes
            .range((u64::MIN, slot)..=(u64::MAX, slot))
            .filter(move |((_, s), _)| *s == slot)
            .flat_map(|(_, v)| v.iter())
    }

    /// Latest head vote per voter among votes with slot in
    /// `[slot - eta, slot - 1]`. Votes from a (voter, slot) pair with two
    /// distinct head targets are dropped and the voter flagged.
    pub fn latest_votes(&self, slot: u64, eta: Eta) -> LatestVotes {
        let mut out = LatestVotes::default();
        let Some((lo, hi)) = eta.window(slot) else {
            return out;
        };
        for ((voter, vslot), votes) in &self.votes {
            if *vslot < lo || *vslot > hi {
                continue;
            }
            let mut targets: Vec<Digest> = votes.iter().filter_map(|v| v.head).collect();
            targets.dedup();
            match targets.len() {
                0 => {}
                1 => {
                    // BTreeMap iteration is slot-ascending per voter, so the
                    // last write wins as the latest.
                    out.by_voter.insert(*voter, (*vslot, targets[0]));
                }
                _ => {
                    out.equivocators.insert(*voter);
                }
            }
        }
        out
    }
}

impl Default for View {
    fn default() -> Self {
        Self::new()
    }
}
