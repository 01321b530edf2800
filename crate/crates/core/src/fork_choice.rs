//! GHOST-family fork-choice rules and a longest-chain baseline.
//!
//! All rules share one greedy descent: start at a root, repeatedly step to
//! the child with the heaviest vote subtree (ties to the greater digest),
//! stop at a leaf. They differ only in which votes count (expiry window) and
//! where the descent is rooted (genesis or the latest justified block).
//!
//! The `oracle` submodule recomputes heads from the raw definition with no
//! shared code; tests hold the fast path to it.

use crate::block_tree::{BlockTree, Checkpoint, Digest, Eta, LatestVotes, View};
use crate::stake::ValidatorId;
use crate::SimError;
use std::collections::BTreeMap;

pub type Balances = BTreeMap<ValidatorId, u64>;

/// Subtree weight of every block reachable from the latest votes: each
/// voter's balance is added to the vote target and all its ancestors.
pub fn subtree_weights(
    tree: &BlockTree,
    latest: &LatestVotes,
    balances: &Balances,
) -> Result<BTreeMap<Digest, u64>, SimError> {
    let mut acc: BTreeMap<Digest, u64> = BTreeMap::new();
    for (voter, (_, target)) in &latest.by_voter {
        let stake = balances.get(voter).copied().unwrap_or(0);
        if stake == 0 {
            continue;
        }
        let mut cur = tree.get(*target)?;
        loop {
            *acc.entry(cur.digest).or_insert(0) += stake;
            if cur.is_genesis() {
                break;
            }
            cur = tree.get(cur.parent)?;
        }
    }
    Ok(acc)
}

/// Total balance of voters whose latest vote lands on `block` or one of its
/// descendants.
pub fn weight(
    view: &View,
    block: Digest,
    latest: &LatestVotes,
    balances: &Balances,
) -> Result<u64, SimError> {
    if !view.tree.contains(block) {
        return Err(SimError::UnknownBlock(block));
    }
    Ok(subtree_weights(&view.tree, latest, balances)?
        .get(&block)
        .copied()
        .unwrap_or(0))
}

/// Greedy heaviest-subtree descent from `root` to a leaf.
pub fn ghost(
    tree: &BlockTree,
    root: Digest,
    latest: &LatestVotes,
    balances: &Balances,
) -> Result<Digest, SimError> {
    if !tree.contains(root) {
        return Err(SimError::UnknownBlock(root));
    }
    let weights = subtree_weights(tree, latest, balances)?;
    let mut cur = root;
    loop {
        let kids = tree.children(cur);
        if kids.is_empty() {
            return Ok(cur);
        }
        // Max by (weight, digest); children lists are digest-sorted.
        let mut best = kids[0];
        let mut best_w = weights.get(&best).copied().unwrap_or(0);
        for &k in &kids[1..] {
            let w = weights.get(&k).copied().unwrap_or(0);
            if w > best_w || (w == best_w && k > best) {
                best = k;
                best_w = w;
            }
        }
        cur = best;
    }
}

/// LMD-GHOST: latest vote per voter over the whole history, rooted at
/// genesis.
pub fn lmd_ghost(view: &View, slot: u64, balances: &Balances) -> Result<Digest, SimError> {
    let latest = view.latest_votes(slot, Eta::Infinite);
    ghost(&view.tree, view.tree.genesis(), &latest, balances)
}

/// HLMD-GHOST: LMD restricted to chains through the latest justified block,
/// implemented as a descent rooted there.
pub fn hlmd_ghost(
    view: &View,
    justified: &Checkpoint,
    slot: u64,
    balances: &Balances,
) -> Result<Digest, SimError> {
    let latest = view.latest_votes(slot, Eta::Infinite);
    ghost(&view.tree, justified.block, &latest, balances)
}

/// RLMD-GHOST(eta): latest votes no older than `eta` slots, rooted at
/// genesis. `eta` = 1 is the single-slot (Goldfish) rule; infinite recovers
/// LMD.
pub fn rlmd_ghost(
    view: &View,
    slot: u64,
    eta: Eta,
    balances: &Balances,
) -> Result<Digest, SimError> {
    let latest = view.latest_votes(slot, eta);
    ghost(&view.tree, view.tree.genesis(), &latest, balances)
}

/// Justified-rooted RLMD descent: the fork-choice rule of the single-slot
/// protocols.
pub fn hfc(
    view: &View,
    justified: &Checkpoint,
    slot: u64,
    eta: Eta,
    balances: &Balances,
) -> Result<Digest, SimError> {
    let latest = view.latest_votes(slot, eta);
    ghost(&view.tree, justified.block, &latest, balances)
}

/// Greedy descent that only steps into children carrying positive vote
/// weight, stopping where support runs out. Confirmation rules use this: a
/// block nobody voted for must not be confirmed merely for being the only
/// leaf, and with no votes at all the descent stays at `root`.
pub fn supported_prefix(
    tree: &BlockTree,
    root: Digest,
    latest: &LatestVotes,
    balances: &Balances,
) -> Result<Digest, SimError> {
    if !tree.contains(root) {
        return Err(SimError::UnknownBlock(root));
    }
    let weights = subtree_weights(tree, latest, balances)?;
    let mut cur = root;
    loop {
        let mut best: Option<(u64, Digest)> = None;
        for &k in tree.children(cur) {
            let w = weights.get(&k).copied().unwrap_or(0);
            if w > 0 && best.map(|b| (w, k) > b).unwrap_or(true) {
                best = Some((w, k));
            }
        }
        match best {
            Some((_, k)) => cur = k,
            None => return Ok(cur),
        }
    }
}

/// Deepest block, ties to the greater digest. Vote-free baseline.
pub fn longest_chain(view: &View) -> Result<Digest, SimError> {
    let mut best = (0u64, view.tree.genesis());
    for block in view.tree.blocks() {
        let d = view.tree.depth(block.digest)?;
        if (d, block.digest) > best {
            best = (d, block.digest);
        }
    }
    Ok(best.1)
}

/// Definitional reimplementation used as a test oracle. Shares no logic with
/// the fast path: windows, equivocation handling, per-block weights, and the
/// descent are each recomputed from scratch over the raw vote list.
pub mod oracle {
    use super::*;
    use crate::block_tree::VoteMessage;

    fn is_ancestor(tree: &BlockTree, anc: Digest, desc: Digest) -> bool {
        let mut cur = desc;
        loop {
            if cur == anc {
                return true;
            }
            let b = tree.get(cur).expect("oracle blocks are accepted");
            if b.is_genesis() {
                return false;
            }
            cur = b.parent;
        }
    }

    /// Latest head vote per voter in `[lo, hi]`, dropping per-slot
    /// equivocations, by direct scan.
    fn latest_targets(votes: &[VoteMessage], lo: u64, hi: u64) -> BTreeMap<ValidatorId, Digest> {
        let mut out: BTreeMap<ValidatorId, (u64, Digest)> = BTreeMap::new();
        let mut dropped: Vec<(ValidatorId, u64)> = Vec::new();
        for v in votes {
            let Some(head) = v.head else { continue };
            if v.slot < lo || v.slot > hi {
                continue;
            }
            for w in votes {
                if w.voter == v.voter && w.slot == v.slot && w.head.is_some() && w.head != v.head {
                    dropped.push((v.voter, v.slot));
                }
            }
            if dropped.contains(&(v.voter, v.slot)) {
                continue;
            }
            match out.get(&v.voter) {
                Some((s, _)) if *s >= v.slot => {}
                _ => {
                    out.insert(v.voter, (v.slot, head));
                }
            }
        }
        for (voter, slot) in dropped {
            if let Some((s, _)) = out.get(&voter) {
                if *s == slot {
                    out.remove(&voter);
                }
            }
        }
        out.into_iter().map(|(k, (_, d))| (k, d)).collect()
    }

    /// Subtree weight of one block, straight from the definition.
    pub fn subtree_weight(
        tree: &BlockTree,
        block: Digest,
        votes: &[VoteMessage],
        window: (u64, u64),
        balances: &Balances,
    ) -> u64 {
        let latest = latest_targets(votes, window.0, window.1);
        let mut total = 0;
        for (voter, target) in latest {
            if is_ancestor(tree, block, target) {
                total += balances.get(&voter).copied().unwrap_or(0);
            }
        }
        total
    }

    /// Head by repeated argmax over per-child `subtree_weight` calls.
    pub fn head(
        tree: &BlockTree,
        root: Digest,
        votes: &[VoteMessage],
        window: (u64, u64),
        balances: &Balances,
    ) -> Digest {
        let mut cur = root;
        loop {
            let kids = tree.children(cur);
            if kids.is_empty() {
                return cur;
            }
            let mut best = None;
            for &k in kids {
                let w = subtree_weight(tree, k, votes, window, balances);
                let cand = (w, k);
                if best.map(|b| cand > b).unwrap_or(true) {
                    best = Some(cand);
                }
            }
            cur = best.expect("nonempty children").1;
        }
    }
}
