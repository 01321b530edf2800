//! Scripted attack scenarios with pinned expected outcomes.
//!
//! Each case bundles a complete configuration with the outcome the script
//! is supposed to produce: which honest proposals end up orphaned (or a
//! proof that nothing does), whether the adversary's private fork becomes
//! canonical, and that no finality or replication safety property breaks
//! along the way. Running a case checks the trace against that contract,
//! so a regression in any engine or in the adversary shows up as a named
//! expectation failure rather than a silent behavior change.
//!
//! The catalogue pairs attacks with defenses. A private-fork release that
//! reorganizes the plain latest-message engine is replayed against the
//! vote-expiry engine, where the same script fails; a crafted asynchronous
//! slot that breaks a one-slot expiry window is replayed against wider
//! windows that ride it out; equivocation is shown to be contained by both
//! the fork-choice engines and the classical three-phase replication core.

use std::collections::{BTreeMap, BTreeSet};

use crate::analysis::{self, OrphanReport, TraceTree};
use crate::block_tree::Digest;
use crate::engines;
use crate::error::SimError;
use crate::scenario;
use crate::stake::ValidatorId;
use crate::trace::TraceRecord;

/// What a scripted scenario must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    /// The private fork wins: exactly these honest proposals end up
    /// orphaned, the fork block proposed at `fork_slot` ends canonical,
    /// and at least `min_head_switches` honest head switches appear.
    ReorgWins {
        orphaned_honest_slots: &'static [u64],
        fork_slot: u64,
        min_head_switches: usize,
    },
    /// The attack is blunted: no honest validator ever switches away from
    /// the honest chain, the fork block proposed at `fork_slot` is
    /// orphaned, and any orphaned honest proposals are confined to
    /// `tolerated_honest_orphans` (normally empty; a delayed-delivery
    /// sibling race may legitimately sacrifice one).
    ReorgFails {
        fork_slot: u64,
        tolerated_honest_orphans: &'static [u64],
    },
    /// Plain honest run: nothing orphaned, no head switches at all.
    CleanChain,
    /// Equivocating voters change nothing: exactly `equivocators` actors
    /// cast two distinct votes in one slot, yet no honest validator
    /// switches heads and no honest proposal is orphaned.
    EquivocationContained { equivocators: usize },
    /// Replication safety: at least one request executes and all honest
    /// replies for the same sequence number carry the same digest.
    RepliesAgree,
}

/// A named scenario plus the outcome it must produce.
#[derive(Debug, Clone, Copy)]
pub struct AttackCase {
    pub name: &'static str,
    /// One-line account of what the script does and why the outcome holds.
    pub summary: &'static str,
    /// Complete configuration; the runner appends the seed.
    pub config: &'static str,
    pub expect: Expectation,
}

/// Outcome of checking one case under one seed.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: &'static str,
    pub seed: u64,
    /// Empty when every expectation held.
    pub failures: Vec<String>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The full catalogue, in the order attacks are introduced: a two-block
/// reorg against the epoch-based engine, the withholding family at depths
/// one to three with its tight stake margins, the same split replayed
/// against vote expiry, a crafted asynchronous slot against one-slot and
/// wider expiry windows, and equivocation against both vote counting and
/// classical replication.
pub fn cases() -> Vec<AttackCase> {
    vec![
        AttackCase {
            name: "epoch-lmd-two-reorg",
            summary: "a withheld block and two latent votes, released in \
                      halves, orphan the next two honest proposals",
            config: "\
protocol = gasper_lite
n = 4
slots = 10
epoch_slots = 4
adversary = ex-ante-reorg
adversary_ids = 0,1
adversary_slot = 4
proposer.4 = 2
proposer.5 = 0
proposer.6 = 2
proposer.7 = 3
proposer.8 = 2
committee.4 = 2
committee.5 = 0,1
committee.6 = 2,3
committee.7 = 2,3
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[6, 7],
                fork_slot: 5,
                min_head_switches: 1,
            },
        },
        AttackCase {
            name: "withhold-depth-1-one-voter",
            summary: "one controlled voter suffices to orphan one honest \
                      block: the withheld vote outweighs an unvoted tip",
            config: "\
protocol = gasper_lite
n = 12
slots = 16
epoch_slots = 8
adversary = k-reorg
adversary_ids = 0
adversary_k = 1
adversary_slot = 8
proposer.9 = 0
proposer.10 = 5
proposer.11 = 6
committee.9 = 0
committee.10 = 8,9
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[10],
                fork_slot: 9,
                min_head_switches: 0,
            },
        },
        AttackCase {
            name: "withhold-depth-1-no-voters",
            summary: "the same chain with zero controlled voters has \
                      nothing to release and stays clean",
            config: "\
protocol = gasper_lite
n = 12
slots = 16
epoch_slots = 8
proposer.9 = 5
proposer.10 = 5
committee.9 = 8
committee.10 = 8,9
",
            expect: Expectation::CleanChain,
        },
        AttackCase {
            name: "withhold-depth-2-three-voters",
            summary: "three controlled voters outweigh the 80 stake backing \
                      two honest blocks (96 > 80) and orphan both",
            config: "\
protocol = gasper_lite
n = 12
slots = 16
epoch_slots = 8
stakes = 32,32,32,32,32,32,32,16,32,32,32,32
adversary = k-reorg
adversary_ids = 0,1,2
adversary_k = 2
adversary_slot = 8
proposer.9 = 0
proposer.10 = 5
proposer.11 = 6
proposer.12 = 10
committee.9 = 0,1,2
committee.10 = 5,6,7
committee.11 = 8,9
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[10, 11],
                fork_slot: 9,
                min_head_switches: 1,
            },
        },
        AttackCase {
            name: "withhold-depth-2-two-voters",
            summary: "one voter fewer flips the margin (64 < 80) and the \
                      withheld fork is discarded",
            config: "\
protocol = gasper_lite
n = 12
slots = 16
epoch_slots = 8
stakes = 32,32,32,32,32,32,32,16,32,32,32,32
adversary = k-reorg
adversary_ids = 0,1
adversary_k = 2
adversary_slot = 8
proposer.9 = 0
proposer.10 = 5
proposer.11 = 6
proposer.12 = 10
committee.9 = 0,1
committee.10 = 5,6,7
committee.11 = 8,9
",
            expect: Expectation::ReorgFails {
                fork_slot: 9,
                tolerated_honest_orphans: &[],
            },
        },
        AttackCase {
            name: "withhold-depth-3-five-voters",
            summary: "five controlled voters outweigh the 144 stake backing \
                      three honest blocks (160 > 144) and orphan all three",
            config: "\
protocol = gasper_lite
n = 12
slots = 16
epoch_slots = 8
stakes = 32,32,32,32,32,32,32,16,32,32,32,32
adversary = k-reorg
adversary_ids = 0,1,2,3,4
adversary_k = 3
adversary_slot = 8
proposer.9 = 0
proposer.10 = 5
proposer.11 = 8
proposer.12 = 5
proposer.13 = 5
committee.9 = 0,1,2,3,4
committee.10 = 5,6,7
committee.11 = 8,9
committee.12 = 10,11
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[10, 11, 12],
                fork_slot: 9,
                min_head_switches: 1,
            },
        },
        AttackCase {
            name: "withhold-depth-3-four-voters",
            summary: "one voter fewer flips the margin (128 < 144) and the \
                      withheld fork is discarded",
            config: "\
protocol = gasper_lite
n = 12
slots = 16
epoch_slots = 8
stakes = 32,32,32,32,32,32,32,16,32,32,32,32
adversary = k-reorg
adversary_ids = 0,1,2,3
adversary_k = 3
adversary_slot = 8
proposer.9 = 0
proposer.10 = 5
proposer.11 = 8
proposer.12 = 5
proposer.13 = 5
committee.9 = 0,1,2,3
committee.10 = 5,6,7
committee.11 = 8,9
committee.12 = 10,11
",
            expect: Expectation::ReorgFails {
                fork_slot: 9,
                tolerated_honest_orphans: &[],
            },
        },
        AttackCase {
            name: "vote-expiry-blunts-the-split",
            summary: "the two-reorg script replayed against vote expiry \
                      with view merge: buffered releases surface uniformly \
                      and the stale fork never outweighs fresh votes",
            config: "\
protocol = goldfish
n = 8
slots = 50
adversary = ex-ante-reorg
adversary_ids = 0,1,2
adversary_slot = 10
proposer.11 = 0
proposer.12 = 3
proposer.13 = 4
",
            expect: Expectation::ReorgFails {
                fork_slot: 11,
                tolerated_honest_orphans: &[],
            },
        },
        AttackCase {
            name: "one-async-slot-breaks-expiry",
            summary: "one slot of delayed honest traffic expires the votes \
                      backing the honest tip; the adversary's retained vote \
                      then steers the next committee onto its fork",
            config: "\
protocol = goldfish
n = 5
slots = 16
gst = inf
adversary = expiry-reorg
adversary_ids = 0
adversary_k = 1
adversary_slot = 8
proposer.7 = 1
proposer.8 = 2
proposer.9 = 0
committee.8 = 0,1
committee.9 = 3,4
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[7, 8],
                fork_slot: 9,
                min_head_switches: 1,
            },
        },
        AttackCase {
            name: "window-three-rides-one-async-slot",
            summary: "with an expiry window two slots wider than the \
                      asynchronous burst, pre-burst votes still count and \
                      the fork never outweighs them",
            config: "\
protocol = rlmd
eta = 3
n = 5
slots = 16
gst = inf
adversary = expiry-reorg
adversary_ids = 0
adversary_k = 1
adversary_slot = 8
proposer.7 = 1
proposer.8 = 2
proposer.9 = 0
committee.8 = 0,1
committee.9 = 3,4
",
            expect: Expectation::ReorgFails {
                fork_slot: 9,
                tolerated_honest_orphans: &[],
            },
        },
        AttackCase {
            name: "window-one-breaks-like-single-slot-expiry",
            summary: "a window of one slot is the single-slot expiry engine \
                      and inherits its brittleness under the same script",
            config: "\
protocol = rlmd
eta = 1
n = 5
slots = 16
gst = inf
adversary = expiry-reorg
adversary_ids = 0
adversary_k = 1
adversary_slot = 8
proposer.7 = 1
proposer.8 = 2
proposer.9 = 0
committee.8 = 0,1
committee.9 = 3,4
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[7, 8],
                fork_slot: 9,
                min_head_switches: 1,
            },
        },
        AttackCase {
            name: "window-four-rides-two-async-slots",
            summary: "two asynchronous slots against a four-slot window: \
                      surviving pre-burst votes hold the chain and every \
                      honest block stays canonical",
            config: "\
protocol = rlmd
eta = 4
n = 5
slots = 16
gst = inf
adversary = expiry-reorg
adversary_ids = 0
adversary_k = 2
adversary_slot = 8
proposer.7 = 1
proposer.8 = 2
proposer.9 = 2
proposer.10 = 0
committee.8 = 0,1
committee.9 = 0,2
committee.10 = 3,4
",
            expect: Expectation::ReorgFails {
                fork_slot: 10,
                tolerated_honest_orphans: &[],
            },
        },
        AttackCase {
            name: "window-two-breaks-under-two-async-slots",
            summary: "the same two-slot burst against a window of exactly \
                      two slots expires every honest vote; the fork wins \
                      and three honest blocks fall",
            config: "\
protocol = rlmd
eta = 2
n = 5
slots = 16
gst = inf
adversary = expiry-reorg
adversary_ids = 0
adversary_k = 2
adversary_slot = 8
proposer.7 = 1
proposer.8 = 2
proposer.9 = 2
proposer.10 = 0
committee.8 = 0,1
committee.9 = 0,2
committee.10 = 3,4
",
            expect: Expectation::ReorgWins {
                orphaned_honest_slots: &[7, 8, 9],
                fork_slot: 10,
                min_head_switches: 1,
            },
        },
        AttackCase {
            name: "equivocating-voters-are-contained",
            summary: "two voters casting double votes in one slot leave the \
                      honest majority's chain untouched",
            config: "\
protocol = goldfish
n = 6
slots = 12
adversary = equivocate
adversary_ids = 0,1
adversary_slot = 6
",
            expect: Expectation::EquivocationContained { equivocators: 2 },
        },
        AttackCase {
            name: "equivocating-primary-cannot-split-replies",
            summary: "a primary sending conflicting pre-prepares under \
                      adversarial delivery timing never yields two honest \
                      replies with different digests",
            config: "\
protocol = pbft
n = 4
slots = 30
gst = inf
pbft_requests = 2
pbft_equivocate = true
adversary = delay-control
adversary_ids = 0
",
            expect: Expectation::RepliesAgree,
        },
    ]
}

/// Look up a case by name.
pub fn case(name: &str) -> Option<AttackCase> {
    cases().into_iter().find(|c| c.name == name)
}

/// Run one case under one seed and check the trace against its contract.
pub fn run_case(case: &AttackCase, seed: u64) -> Result<CaseReport, SimError> {
    let mut config = String::from(case.config);
    config.push_str(&format!("seed = {seed}\n"));
    let s = scenario::parse(&config)?;
    let records = engines::run(&s)?;
    let failures = check(&records, &case.expect)?;
    Ok(CaseReport {
        name: case.name,
        seed,
        failures,
    })
}

/// Run every case under each of the given seeds.
pub fn run_all(seeds: &[u64]) -> Result<Vec<CaseReport>, SimError> {
    let mut reports = Vec::new();
    for case in cases() {
        for &seed in seeds {
            reports.push(run_case(&case, seed)?);
        }
    }
    Ok(reports)
}

/// Check a finished trace against an expectation; returns one message per
/// violated clause, empty when the contract held.
pub fn check(
    records: &[TraceRecord],
    expect: &Expectation,
) -> Result<Vec<String>, SimError> {
    let mut failures = Vec::new();

    // Safety clauses common to every case: no conflicting finalizations
    // and no finalized block off a later confirmed chain.
    if let Some(conflict) = analysis::finality_conflict(records)? {
        failures.push(format!(
            "conflicting finalizations: {:016x}@{} vs {:016x}@{}",
            conflict.first_block,
            conflict.first_index,
            conflict.second_block,
            conflict.second_index
        ));
    }
    let prefix_breaks = analysis::finalized_prefix_breaks(records)?;
    if !prefix_breaks.is_empty() {
        failures.push(format!(
            "{} confirmations dropped a finalized prefix",
            prefix_breaks.len()
        ));
    }

    let report = analysis::orphans(records)?;
    let switches = analysis::reorgs(records)?;

    match expect {
        Expectation::ReorgWins {
            orphaned_honest_slots,
            fork_slot,
            min_head_switches,
        } => {
            if report.honest_slots != *orphaned_honest_slots {
                failures.push(format!(
                    "orphaned honest slots {:?}, expected {:?}",
                    report.honest_slots, orphaned_honest_slots
                ));
            }
            match fork_digest(records, *fork_slot) {
                Some(fork) => {
                    if !on_canonical_chain(records, &report, fork)? {
                        failures.push(format!(
                            "fork block from slot {fork_slot} did not end canonical"
                        ));
                    }
                }
                None => failures.push(format!(
                    "no adversarial proposal found at slot {fork_slot}"
                )),
            }
            if switches.len() < *min_head_switches {
                failures.push(format!(
                    "{} honest head switches, expected at least {}",
                    switches.len(),
                    min_head_switches
                ));
            }
        }
        Expectation::ReorgFails {
            fork_slot,
            tolerated_honest_orphans,
        } => {
            if !switches.is_empty() {
                failures.push(format!(
                    "{} honest head switches, expected none",
                    switches.len()
                ));
            }
            if report.adversary_slots != vec![*fork_slot] {
                failures.push(format!(
                    "orphaned adversarial slots {:?}, expected exactly [{}]",
                    report.adversary_slots, fork_slot
                ));
            }
            let tolerated: BTreeSet<u64> =
                tolerated_honest_orphans.iter().copied().collect();
            let excess: Vec<u64> = report
                .honest_slots
                .iter()
                .copied()
                .filter(|s| !tolerated.contains(s))
                .collect();
            if !excess.is_empty() {
                failures.push(format!(
                    "honest proposals from slots {excess:?} were orphaned"
                ));
            }
        }
        Expectation::CleanChain => {
            if !switches.is_empty() {
                failures.push(format!(
                    "{} honest head switches, expected none",
                    switches.len()
                ));
            }
            if !report.is_clean() {
                failures.push(format!(
                    "orphaned proposals at honest slots {:?} and adversarial \
                     slots {:?}, expected none",
                    report.honest_slots, report.adversary_slots
                ));
            }
        }
        Expectation::EquivocationContained { equivocators } => {
            if !switches.is_empty() {
                failures.push(format!(
                    "{} honest head switches, expected none",
                    switches.len()
                ));
            }
            if !report.honest_slots.is_empty() {
                failures.push(format!(
                    "honest proposals from slots {:?} were orphaned",
                    report.honest_slots
                ));
            }
            let seen = double_voters(records).len();
            if seen != *equivocators {
                failures.push(format!(
                    "{seen} double-voting actors in the trace, expected {equivocators}"
                ));
            }
        }
        Expectation::RepliesAgree => {
            let replies = records
                .iter()
                .filter(|r| matches!(r, TraceRecord::Pbft { step: "reply", .. }))
                .count();
            if replies == 0 {
                failures.push("no request ever executed".to_string());
            }
            if let Some(d) = analysis::reply_divergence(records) {
                failures.push(format!(
                    "replies for seq {} diverge: {:016x} vs {:016x}",
                    d.seq, d.first_digest, d.second_digest
                ));
            }
        }
    }

    Ok(failures)
}

/// Digest of the adversarial proposal at `slot`, if the trace has one.
fn fork_digest(records: &[TraceRecord], slot: u64) -> Option<Digest> {
    let adversaries = analysis::adversary_ids(records);
    records.iter().find_map(|r| match r {
        TraceRecord::Propose {
            slot: s,
            actor,
            block,
            ..
        } if *s == slot && adversaries.contains(actor) => Some(*block),
        _ => None,
    })
}

/// Whether `block` lies on the final canonical chain.
fn on_canonical_chain(
    records: &[TraceRecord],
    report: &OrphanReport,
    block: Digest,
) -> Result<bool, SimError> {
    let tree = TraceTree::from_records(records);
    if !tree.contains(block) {
        return Ok(false);
    }
    tree.is_ancestor(block, report.final_head)
}

/// Actors that cast two distinct head votes within a single slot.
fn double_voters(records: &[TraceRecord]) -> BTreeSet<ValidatorId> {
    let mut per_actor_slot: BTreeMap<(ValidatorId, u64), BTreeSet<Digest>> =
        BTreeMap::new();
    for record in records {
        if let TraceRecord::Vote {
            actor,
            slot,
            block,
            ..
        } = record
        {
            per_actor_slot
                .entry((*actor, *slot))
                .or_default()
                .insert(*block);
        }
    }
    per_actor_slot
        .into_iter()
        .filter(|(_, blocks)| blocks.len() > 1)
        .map(|((actor, _), _)| actor)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every catalogued case meets its contract under a handful of seeds.
    #[test]
    fn every_case_meets_its_contract_under_five_seeds() {
        for case in cases() {
            for seed in 0..5 {
                let report = run_case(&case, seed).expect("case runs");
                assert!(
                    report.passed(),
                    "case {} seed {}: {:?}",
                    case.name,
                    seed,
                    report.failures
                );
            }
        }
    }

    /// The checker rejects a doctored expectation, so a regression cannot
    /// pass by accident.
    #[test]
    fn the_checker_rejects_a_wrong_expectation() {
        let case = case("one-async-slot-breaks-expiry").expect("case exists");
        let mut config = String::from(case.config);
        config.push_str("seed = 0\n");
        let s = scenario::parse(&config).expect("config parses");
        let records = engines::run(&s).expect("run succeeds");
        let wrong = Expectation::ReorgFails {
            fork_slot: 9,
            tolerated_honest_orphans: &[],
        };
        let failures = check(&records, &wrong).expect("check runs");
        assert!(!failures.is_empty());
    }
}
