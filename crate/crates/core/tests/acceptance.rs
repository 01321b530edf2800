//! Acceptance gate: fifteen release checks covering safety, latency,
//! attack reproduction, engine equivalence, the fork-choice oracle, and
//! ledger consistency. Every check prints one pass/fail line with its
//! runtime, and all fifteen run in sequence inside a single test so the
//! closing full-log audit covers every simulation the earlier checks
//! executed. Each check also carries a wall-clock budget; blowing the
//! budget fails the check even when its assertions hold.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use finsim::analysis::{self, TraceTree};
use finsim::attack_suite::{self, AttackCase};
use finsim::block_tree::{Block, BlockTree, Checkpoint, Digest, Eta, LatestVotes, Link, View, VoteMessage};
use finsim::engines;
use finsim::ffg::{self, FinalityRule, SlashingRule};
use finsim::fork_choice::{self, oracle, Balances};
use finsim::rng::SimRng;
use finsim::scenario;
use finsim::trace::{self, TraceRecord};

// ---------------------------------------------------------------------------
// Shared harness
// ---------------------------------------------------------------------------

/// Runs simulations for the checks, auditing every trace it produces for
/// the finalized-prefix invariant so the closing check can vouch for the
/// whole gate.
struct Gate {
    runs_audited: u64,
    prefix_breaks: u64,
    passed: Vec<String>,
}

impl Gate {
    fn new() -> Self {
        Gate {
            runs_audited: 0,
            prefix_breaks: 0,
            passed: Vec::new(),
        }
    }

    /// Parse, run, and audit one configuration.
    fn run(&mut self, config: &str) -> Vec<TraceRecord> {
        let s = scenario::parse(config).unwrap_or_else(|e| panic!("config rejected: {e}\n{config}"));
        let records = engines::run(&s).unwrap_or_else(|e| panic!("run failed: {e}\n{config}"));
        self.runs_audited += 1;
        self.prefix_breaks += analysis::finalized_prefix_breaks(&records)
            .unwrap_or_else(|e| panic!("prefix audit failed: {e}"))
            .len() as u64;
        records
    }

    /// Run an attack case's exact configuration under `seed`, audited.
    /// Determinism (checked separately) makes this the same execution the
    /// contract runner sees.
    fn run_case_config(&mut self, case: &AttackCase, seed: u64) -> Vec<TraceRecord> {
        self.run(&format!("{}seed = {seed}\n", case.config))
    }

    fn pass(&mut self, id: u32, budget: Duration, started: Instant, detail: &str) {
        let elapsed = started.elapsed();
        assert!(
            elapsed <= budget,
            "c{id:02} FAIL: over budget, took {:.2}s of {:.0}s",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        );
        let line = format!(
            "criterion {id:02} pass [{:7.2}s] {detail}",
            elapsed.as_secs_f64()
        );
        println!("{line}");
        self.passed.push(line);
    }
}

fn attack_case(name: &str) -> AttackCase {
    attack_suite::case(name).unwrap_or_else(|| panic!("unknown attack case {name}"))
}

/// Run the attack suite's own contract checker for one (case, seed).
fn contract(cid: &str, case: &AttackCase, seed: u64) {
    let report = attack_suite::run_case(case, seed)
        .unwrap_or_else(|e| panic!("{cid} FAIL: case {} seed {seed} errored: {e}", case.name));
    assert!(
        report.passed(),
        "{cid} FAIL: case {} seed {seed}: {:?}",
        case.name,
        report.failures
    );
}

/// Map each slot to the block proposed in it (panics on duplicates, which
/// none of the honest runs here produce).
fn blocks_by_slot(tree: &TraceTree) -> BTreeMap<u64, Digest> {
    let mut map = BTreeMap::new();
    for block in tree.proposed_blocks() {
        let slot = tree.slot_of(block).expect("proposed block has a slot");
        let prev = map.insert(slot, block);
        assert!(prev.is_none(), "two proposals in slot {slot}");
    }
    map
}

fn block_at(cid: &str, map: &BTreeMap<u64, Digest>, slot: u64) -> Digest {
    *map.get(&slot)
        .unwrap_or_else(|| panic!("{cid} FAIL: no proposal in slot {slot}"))
}

fn link(source: Checkpoint, target: Checkpoint) -> Link {
    Link { source, target }
}

// ---------------------------------------------------------------------------
// 1. Classical-BFT safety under an equivocating primary
// ---------------------------------------------------------------------------

/// n = 4, f = 1, the view-0 primary sends conflicting pre-prepare digests,
/// and message delivery is randomized per seed. Over a thousand schedules
/// no two honest replicas may execute different digests at one sequence
/// number, and every schedule must execute something (the safety must not
/// come from stalling).
fn c01_classical_bft_safety(gate: &mut Gate) {
    let started = Instant::now();
    let case = attack_case("equivocating-primary-cannot-split-replies");
    let mut replies = 0usize;
    for seed in 0..1_000u64 {
        let records = gate.run_case_config(&case, seed);
        if let Some(d) = analysis::reply_divergence(&records) {
            panic!(
                "c01 FAIL: seed {seed}: replicas {} and {} executed different digests at seq {}",
                d.first_actor, d.second_actor, d.seq
            );
        }
        let executed = records
            .iter()
            .filter(|r| matches!(r, TraceRecord::Pbft { step: "reply", .. }))
            .count();
        assert!(executed > 0, "c01 FAIL: seed {seed}: no request executed");
        replies += executed;
    }
    gate.pass(
        1,
        Duration::from_secs(30),
        started,
        &format!("equivocating primary, 1000 randomized schedules, {replies} replies, zero honest divergence"),
    );
}

// ---------------------------------------------------------------------------
// 2. Quorum intersection
// ---------------------------------------------------------------------------

/// For f in 1..=5, every pair of (2f+1)-subsets of a (3f+1)-set shares at
/// least f+1 members, and the bound is tight: some pair shares exactly
/// f+1. Checked by exhausting all subset pairs as bitmasks.
fn c02_quorum_intersection(gate: &mut Gate) {
    let started = Instant::now();
    let mut pairs = 0u64;
    for f in 1u32..=5 {
        let n = 3 * f + 1;
        let q = 2 * f + 1;
        let quorums: Vec<u32> = (0u32..1 << n).filter(|m| m.count_ones() == q).collect();
        let mut min_overlap = u32::MAX;
        for (i, a) in quorums.iter().enumerate() {
            for b in &quorums[i..] {
                let overlap = (a & b).count_ones();
                assert!(
                    overlap >= f + 1,
                    "c02 FAIL: f={f}: quorums {a:b} and {b:b} overlap in only {overlap}"
                );
                min_overlap = min_overlap.min(overlap);
                pairs += 1;
            }
        }
        assert_eq!(
            min_overlap,
            f + 1,
            "c02 FAIL: f={f}: intersection bound not tight"
        );
    }
    gate.pass(
        2,
        Duration::from_secs(10),
        started,
        &format!("f 1..=5 exhausted, {pairs} quorum pairs, overlap >= f+1 and tight"),
    );
}

// ---------------------------------------------------------------------------
// 3. Accountable safety of the checkpoint gadget
// ---------------------------------------------------------------------------

/// Four equal-stake validators, checkpoints at heights 0..=2 on two
/// conflicting branches. Every validator may cast any subset of the eight
/// height-increasing link votes, and stake symmetry reduces assignments to
/// sorted profile classes — all 183,181,376 of them are enumerated. In
/// every class where two conflicting checkpoints finalize, at least two
/// validators (over a third of stake) must hold slashable vote pairs. A
/// deterministic sample of classes is re-checked through the production
/// audit to tie the bit-level enumeration to the real code path.
fn c03_accountable_safety(gate: &mut Gate) {
    let started = Instant::now();
    let mut tree = BlockTree::new();
    let g = tree.genesis();
    let a1 = Block::new(g, 1, 0);
    let b1 = Block::new(g, 1, 1);
    let a2 = Block::new(a1.digest, 2, 2);
    let b2 = Block::new(b1.digest, 2, 3);
    for b in [a1, b1, a2, b2] {
        tree.insert(b).expect("insert");
    }
    let cp = Checkpoint::new;
    // One bit per possible vote. Heights: genesis 0; a1/b1 at 1; a2/b2 at 2.
    // The gadget does not require a link's target to descend from its
    // source, so cross-branch links are included.
    let links: [Link; 8] = [
        link(cp(g, 0), cp(a1.digest, 1)),        // 0
        link(cp(g, 0), cp(b1.digest, 1)),        // 1
        link(cp(g, 0), cp(a2.digest, 2)),        // 2
        link(cp(g, 0), cp(b2.digest, 2)),        // 3
        link(cp(a1.digest, 1), cp(a2.digest, 2)), // 4
        link(cp(a1.digest, 1), cp(b2.digest, 2)), // 5
        link(cp(b1.digest, 1), cp(a2.digest, 2)), // 6
        link(cp(b1.digest, 1), cp(b2.digest, 2)), // 7
    ];
    // Per-profile lookup tables: `spread` packs each link-membership bit
    // into its own byte so four profiles sum into per-link voter counts,
    // and `dbl` flags profiles holding two links with equal target height
    // (a double vote; no other slashable shape exists at these heights,
    // since a surround needs target heights two apart).
    let mut spread = [0u64; 256];
    let mut dbl = [0u32; 256];
    for p in 0..256usize {
        let mut s = 0u64;
        for bit in 0..8 {
            if p >> bit & 1 == 1 {
                s |= 1 << (8 * bit);
            }
        }
        spread[p] = s;
        let h1 = (p & 0b11).count_ones();
        let h2 = (p >> 2).count_ones();
        dbl[p] = u32::from(h1 >= 2 || h2 >= 2);
    }
    let balances: Balances = (0..4).map(|i| (i, 32u64)).collect();
    let cross_check = |profiles: [usize; 4], expect_conflict: bool, expect_offenders: u32| {
        let mut votes = Vec::new();
        for (v, p) in profiles.iter().enumerate() {
            for (bit, l) in links.iter().enumerate() {
                if p >> bit & 1 == 1 {
                    votes.push(VoteMessage::ffg_vote(v as u64, l.target.index, *l));
                }
            }
        }
        let report = ffg::accountable_safety_audit(
            &tree,
            &votes,
            &balances,
            128,
            FinalityRule::Adjacency,
            false,
        )
        .expect("audit");
        assert_eq!(
            report.conflicting.is_some(),
            expect_conflict,
            "c03 FAIL: production audit disagrees on conflict for profiles {profiles:?}"
        );
        let offenders: BTreeSet<u64> = report.slashing.iter().map(|r| r.offender).collect();
        assert_eq!(
            offenders.len() as u32,
            expect_offenders,
            "c03 FAIL: production audit counts different offenders for {profiles:?}"
        );
        assert!(
            report.holds(),
            "c03 FAIL: audit reports accountable safety broken for {profiles:?}"
        );
    };
    // Supermajority with four stake-32 validators means at least three
    // voters on a link: 3*support >= 2*128 first holds at support 96.
    const ONES: u64 = 0x0101_0101_0101_0101;
    let mut classes = 0u64;
    let mut conflicts = 0u64;
    let mut min_offenders = u32::MAX;
    let mut audits = 0u64;
    for p0 in 0..256usize {
        let c0 = spread[p0];
        let d0 = dbl[p0];
        for p1 in p0..256 {
            let c01 = c0 + spread[p1];
            let d01 = d0 + dbl[p1];
            for p2 in p1..256 {
                let c012 = c01 + spread[p2];
                let d012 = d01 + dbl[p2];
                for p3 in p2..256 {
                    classes += 1;
                    // Byte b of `counts` is the voter count of link b; adding
                    // one to every byte raises counts 3 and 4 (and only
                    // those) past the bit-2 threshold.
                    let s = (c012 + spread[p3]) + ONES;
                    let sup = |i: usize| (s >> (8 * i + 2)) & 1 == 1;
                    let ja1 = sup(0);
                    let jb1 = sup(1);
                    let ja2 = sup(2) || (ja1 && sup(4)) || (jb1 && sup(6));
                    let jb2 = sup(3) || (ja1 && sup(5)) || (jb1 && sup(7));
                    // Adjacency finalization of a height-1 checkpoint needs a
                    // supermajority link from it to a justified height-2
                    // checkpoint. Nothing at height 2 can finalize (that
                    // would need height-3 links), so the only possible
                    // conflicting finalized pair is (a1, b1).
                    let fa1 = ja1 && ((ja2 && sup(4)) || (jb2 && sup(5)));
                    let fb1 = jb1 && ((jb2 && sup(7)) || (ja2 && sup(6)));
                    let conflict = fa1 && fb1;
                    let offenders = d012 + dbl[p3];
                    if conflict {
                        conflicts += 1;
                        if offenders < 2 {
                            panic!(
                                "c03 FAIL: conflicting finalization with only {offenders} \
                                 slashable validators, profiles {:?}",
                                [p0, p1, p2, p3]
                            );
                        }
                        min_offenders = min_offenders.min(offenders);
                        if conflicts % 50_021 == 1 {
                            cross_check([p0, p1, p2, p3], true, offenders);
                            audits += 1;
                        }
                    } else if classes % 9_999_991 == 7 {
                        cross_check([p0, p1, p2, p3], false, offenders);
                        audits += 1;
                    }
                }
            }
        }
    }
    assert_eq!(classes, 183_181_376, "c03 FAIL: enumeration incomplete");
    assert!(conflicts > 0, "c03 FAIL: vacuous — no class double-finalized");
    assert_eq!(
        min_offenders, 2,
        "c03 FAIL: minimum slashable set at a conflict should be exactly two validators"
    );
    gate.pass(
        3,
        Duration::from_secs(300),
        started,
        &format!(
            "{classes} vote-set classes, {conflicts} double-finalizations, all with >=2 slashable (min exactly 2), {audits} re-audited in full"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Epoch-gadget finality latency
// ---------------------------------------------------------------------------

/// Full participation, 32 validators over 32-slot epochs. An epoch-opening
/// checkpoint finalizes exactly 64 slots after proposal; every other block
/// of the epoch waits for the next checkpoint's finalization, peaking at
/// 95 slots for the block right after the checkpoint and tapering to 65 at
/// the epoch's last slot.
fn c04_epoch_finality_latency(gate: &mut Gate) {
    let started = Instant::now();
    let records = gate.run(
        "protocol = gasper_lite\nn = 32\nepoch_slots = 32\nslots = 130\ngst = 0\nseed = 11\n",
    );
    let tree = TraceTree::from_records(&records);
    let by_slot = blocks_by_slot(&tree);
    let ttf = analysis::time_to_finality(&records).expect("latency");
    for cp_slot in [32u64, 64] {
        let b = block_at("c04", &by_slot, cp_slot);
        assert_eq!(
            ttf.get(&b).copied(),
            Some(64),
            "c04 FAIL: checkpoint at slot {cp_slot} missed the 64-slot latency"
        );
    }
    for slot in 33u64..=63 {
        let b = block_at("c04", &by_slot, slot);
        assert_eq!(
            ttf.get(&b).copied(),
            Some(128 - slot),
            "c04 FAIL: slot-{slot} block latency"
        );
    }
    let worst = (33u64..=63)
        .map(|s| ttf[&block_at("c04", &by_slot, s)])
        .max()
        .expect("nonempty");
    assert_eq!(worst, 95, "c04 FAIL: worst in-epoch latency");
    gate.pass(
        4,
        Duration::from_secs(60),
        started,
        "full participation: epoch-opening block finalizes in 64 slots, worst block in the epoch in 95",
    );
}

// ---------------------------------------------------------------------------
// 5. Two-block reorg against the epoch-based engine
// ---------------------------------------------------------------------------

/// The scripted withhold-and-release attack around anchor slot 4 orphans
/// exactly the honest blocks of slots 6 and 7 (anchor+2 and anchor+3), the
/// deepest head switch abandons exactly those two blocks, and the whole
/// trace is reproducible byte for byte under the fixed seed.
fn c05_two_block_reorg(gate: &mut Gate) {
    let started = Instant::now();
    let case = attack_case("epoch-lmd-two-reorg");
    contract("c05", &case, 0);
    let records = gate.run_case_config(&case, 0);
    let again = gate.run_case_config(&case, 0);
    assert_eq!(
        trace::render(&records),
        trace::render(&again),
        "c05 FAIL: trace differs between identical runs"
    );
    let orphans = analysis::orphans(&records).expect("orphans");
    assert_eq!(
        orphans.honest_slots,
        vec![6, 7],
        "c05 FAIL: orphaned honest slots"
    );
    let reorgs = analysis::reorgs(&records).expect("reorgs");
    let depth = reorgs.iter().map(|r| r.depth).max().unwrap_or(0);
    assert_eq!(depth, 2, "c05 FAIL: reorg depth");
    assert!(
        reorgs.iter().any(|r| r.depth == 2 && r.orphaned_honest == 2),
        "c05 FAIL: no head switch abandoned both honest blocks"
    );
    gate.pass(
        5,
        Duration::from_secs(60),
        started,
        "scripted withhold-and-release orphans slots 6 and 7 exactly (depth 2), byte-reproducible",
    );
}

// ---------------------------------------------------------------------------
// 6. Withholding power threshold at depths 1..=3
// ---------------------------------------------------------------------------

/// With adversary-controlled delays, 2k-1 controlled voters suffice for a
/// depth-k reorg and 2k-2 do not, for k in 1..=3, across 20 seeds each
/// with zero exceptions.
fn c06_withholding_threshold(gate: &mut Gate) {
    let started = Instant::now();
    let table: [(&str, u64, bool); 6] = [
        ("withhold-depth-1-one-voter", 1, true),
        ("withhold-depth-1-no-voters", 1, false),
        ("withhold-depth-2-three-voters", 2, true),
        ("withhold-depth-2-two-voters", 2, false),
        ("withhold-depth-3-five-voters", 3, true),
        ("withhold-depth-3-four-voters", 3, false),
    ];
    let mut runs = 0u32;
    for (name, k, succeeds) in table {
        let case = attack_case(name);
        for seed in 0..20u64 {
            contract("c06", &case, seed);
            let records = gate.run_case_config(&case, seed);
            let orphans = analysis::orphans(&records).expect("orphans");
            if succeeds {
                assert_eq!(
                    orphans.honest_slots.len() as u64,
                    k,
                    "c06 FAIL: {name} seed {seed}: expected a depth-{k} reorg"
                );
            } else {
                assert!(
                    orphans.honest_slots.is_empty(),
                    "c06 FAIL: {name} seed {seed}: honest blocks orphaned with only 2k-2 voters"
                );
            }
            runs += 1;
        }
    }
    gate.pass(
        6,
        Duration::from_secs(60),
        started,
        &format!("2k-1 voters reorg depth k and 2k-2 fail, k 1..=3, {runs} runs, zero exceptions"),
    );
}

// ---------------------------------------------------------------------------
// 7. Vote expiry blunts the split under synchrony
// ---------------------------------------------------------------------------

/// Single-slot vote expiry with an honest-awake majority under synchrony:
/// the withhold-and-release script never reorgs an honest proposal across
/// 100 seeds of 50-slot runs.
fn c07_expiry_reorg_resilience(gate: &mut Gate) {
    let started = Instant::now();
    let case = attack_case("vote-expiry-blunts-the-split");
    assert!(
        case.config.contains("slots = 50"),
        "c07 FAIL: expected a 50-slot scenario"
    );
    for seed in 0..100u64 {
        contract("c07", &case, seed);
        let records = gate.run_case_config(&case, seed);
        let reorgs = analysis::reorgs(&records).expect("reorgs");
        assert!(
            reorgs.iter().all(|r| r.orphaned_honest == 0),
            "c07 FAIL: seed {seed}: an honest proposal was reorged"
        );
    }
    gate.pass(
        7,
        Duration::from_secs(120),
        started,
        "single-slot expiry, 100 seeds x 50 slots, zero honest proposals reorged",
    );
}

// ---------------------------------------------------------------------------
// 8. One asynchronous slot breaks single-slot expiry
// ---------------------------------------------------------------------------

/// Delaying one slot's deliveries past the synchrony bound expires every
/// honest vote at once, and a minority adversary reorgs the previously
/// canonical honest blocks — deterministically, on every seed tried.
fn c08_expiry_asynchrony_brittleness(gate: &mut Gate) {
    let started = Instant::now();
    let case = attack_case("one-async-slot-breaks-expiry");
    for seed in 0..5u64 {
        contract("c08", &case, seed);
        let records = gate.run_case_config(&case, seed);
        let reorgs = analysis::reorgs(&records).expect("reorgs");
        assert!(
            reorgs.iter().any(|r| r.orphaned_honest > 0),
            "c08 FAIL: seed {seed}: the expiry gap produced no reorg"
        );
    }
    gate.pass(
        8,
        Duration::from_secs(60),
        started,
        "one crafted async slot expires all honest votes; minority reorg observed on every seed",
    );
}

// ---------------------------------------------------------------------------
// 9. Expiry-window engine equivalences
// ---------------------------------------------------------------------------

/// The window-1 engine and the single-slot engine are the same protocol,
/// as are the unbounded-window engine and latest-message with view merge:
/// their traces must be byte-identical over 20 shared seeds, sleep
/// schedule included.
fn c09_engine_equivalences(gate: &mut Gate) {
    let started = Instant::now();
    let config = |protocol: &str, eta: &str, seed: u64| {
        let eta_line = if eta.is_empty() {
            String::new()
        } else {
            format!("eta = {eta}\n")
        };
        format!(
            "protocol = {protocol}\n{eta_line}n = 6\nslots = 24\ngst = 0\noffline.4 = 10..13\nseed = {seed}\n"
        )
    };
    for seed in 0..20u64 {
        let single_slot = gate.run(&config("goldfish", "", seed));
        let window_one = gate.run(&config("rlmd", "1", seed));
        assert_eq!(
            trace::render(&single_slot),
            trace::render(&window_one),
            "c09 FAIL: seed {seed}: window-1 trace differs from the single-slot engine"
        );
        let latest_message = gate.run(&config("lmd_vm", "", seed));
        let window_inf = gate.run(&config("rlmd", "inf", seed));
        assert_eq!(
            trace::render(&latest_message),
            trace::render(&window_inf),
            "c09 FAIL: seed {seed}: unbounded-window trace differs from latest-message view-merge"
        );
    }
    gate.pass(
        9,
        Duration::from_secs(60),
        started,
        "byte-identical traces: window 1 == single-slot, window inf == latest-message view-merge, 20 seeds",
    );
}

// ---------------------------------------------------------------------------
// 10. Expiry window pi+2 rides pi asynchronous slots
// ---------------------------------------------------------------------------

/// For pi in {1, 2}: a window of pi+2 slots keeps every previously
/// honest-canonical block canonical through pi consecutive asynchronous
/// slots, while a window of pi slots re-opens the single-slot brittleness.
/// 50 seeds per case.
fn c10_window_asynchrony_resilience(gate: &mut Gate) {
    let started = Instant::now();
    let rides: [(&str, u64); 2] = [
        ("window-three-rides-one-async-slot", 1),
        ("window-four-rides-two-async-slots", 2),
    ];
    let breaks: [(&str, u64); 2] = [
        ("window-one-breaks-like-single-slot-expiry", 1),
        ("window-two-breaks-under-two-async-slots", 2),
    ];
    for (name, pi) in rides {
        let case = attack_case(name);
        for seed in 0..50u64 {
            contract("c10", &case, seed);
            let records = gate.run_case_config(&case, seed);
            let reorgs = analysis::reorgs(&records).expect("reorgs");
            assert!(
                reorgs.iter().all(|r| r.orphaned_honest == 0),
                "c10 FAIL: {name} seed {seed}: window pi+2 lost an honest block to {pi} async slots"
            );
        }
    }
    for (name, pi) in breaks {
        let case = attack_case(name);
        for seed in 0..50u64 {
            contract("c10", &case, seed);
            let records = gate.run_case_config(&case, seed);
            let reorgs = analysis::reorgs(&records).expect("reorgs");
            assert!(
                reorgs.iter().any(|r| r.orphaned_honest > 0),
                "c10 FAIL: {name} seed {seed}: window pi survived {pi} async slots it should not"
            );
        }
    }
    gate.pass(
        10,
        Duration::from_secs(60),
        started,
        "window pi+2 rides pi async slots and window pi breaks, pi in {1,2}, 50 seeds each",
    );
}

// ---------------------------------------------------------------------------
// 11. Single-slot finality
// ---------------------------------------------------------------------------

/// Full participation under synchrony: every slot-t proposal is justified
/// and finalized by every validator within slot t itself (at the slot's
/// closing phase), for t in 1..=20. The slot-0 proposal bootstraps the
/// checkpoint chain and rides slot 1 instead.
fn c11_single_slot_finality(gate: &mut Gate) {
    let started = Instant::now();
    let n = 4u64;
    let records = gate.run("protocol = ssf\nn = 4\nslots = 21\ngst = 0\nseed = 2\n");
    let tree = TraceTree::from_records(&records);
    let by_slot = blocks_by_slot(&tree);
    for t in 1..=20u64 {
        let b = block_at("c11", &by_slot, t);
        for v in 0..n {
            let justified = records.iter().any(|r| {
                matches!(r, TraceRecord::Justify { tick, slot, actor, block, index, .. }
                    if *slot == t && *actor == v && *block == b && *index == t && *tick == 4 * t + 3)
            });
            assert!(
                justified,
                "c11 FAIL: slot-{t} proposal not justified within its slot by validator {v}"
            );
            let finalized = records.iter().any(|r| {
                matches!(r, TraceRecord::Finalize { tick, slot, actor, block, index, .. }
                    if *slot == t && *actor == v && *block == b && *index == t && *tick == 4 * t + 3)
            });
            assert!(
                finalized,
                "c11 FAIL: slot-{t} proposal not finalized within its slot by validator {v}"
            );
        }
    }
    let ttf = analysis::time_to_finality(&records).expect("latency");
    let b0 = block_at("c11", &by_slot, 0);
    assert_eq!(
        ttf.get(&b0).copied(),
        Some(1),
        "c11 FAIL: bootstrap block should ride slot 1"
    );
    gate.pass(
        11,
        Duration::from_secs(60),
        started,
        "every slot-t proposal justified and finalized inside slot t, t 1..=20 (slot 0 bootstraps in slot 1)",
    );
}

// ---------------------------------------------------------------------------
// 12. Three-slot finality and the extra slashing rule
// ---------------------------------------------------------------------------

/// Full participation: the block of slot t is finalized by every validator
/// at the close of slot t+2, for every eligible t. The extra slashing rule
/// (a later source paired with an earlier target) fires on a crafted vote
/// pair, stays silent without its flag, and never fires on the honest vote
/// log.
fn c12_three_slot_finality(gate: &mut Gate) {
    let started = Instant::now();
    let n = 4u64;
    let slots = 20u64;
    let records = gate.run("protocol = three_sf\nn = 4\nslots = 20\ngst = 0\nseed = 2\n");
    let tree = TraceTree::from_records(&records);
    let by_slot = blocks_by_slot(&tree);
    for t in 1..=slots - 3 {
        let b = block_at("c12", &by_slot, t);
        for v in 0..n {
            let finalized = records.iter().any(|r| {
                matches!(r, TraceRecord::Finalize { tick, slot, actor, block, index, .. }
                    if *slot == t + 2 && *actor == v && *block == b && *index == t
                        && *tick == 4 * (t + 2) + 3)
            });
            assert!(
                finalized,
                "c12 FAIL: slot-{t} block not finalized at the close of slot {} by validator {v}",
                t + 2
            );
        }
    }
    assert!(
        !records
            .iter()
            .any(|r| matches!(r, TraceRecord::Slash { .. })),
        "c12 FAIL: honest run reported a slashing"
    );
    // Re-scan the honest link votes straight from the trace.
    let honest_votes: Vec<VoteMessage> = records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::FfgVote {
                actor,
                slot,
                source_block,
                source_index,
                target_block,
                target_index,
                ..
            } => Some(VoteMessage::ffg_vote(
                *actor,
                *slot,
                link(
                    Checkpoint::new(*source_block, *source_index),
                    Checkpoint::new(*target_block, *target_index),
                ),
            )),
            _ => None,
        })
        .collect();
    assert!(
        !honest_votes.is_empty(),
        "c12 FAIL: no link votes in the trace"
    );
    assert!(
        ffg::detect_slashing(&honest_votes, true).is_empty(),
        "c12 FAIL: the detector fired on an honest vote pair"
    );
    // A vote from a later source to an earlier target must trip the extra
    // rule — and only when the rule is armed.
    let crafted = vec![
        VoteMessage::ffg_vote(9, 6, link(Checkpoint::new(0xA1, 2), Checkpoint::new(0xA2, 6))),
        VoteMessage::ffg_vote(9, 5, link(Checkpoint::new(0xB1, 4), Checkpoint::new(0xB2, 5))),
    ];
    let fired = ffg::detect_slashing(&crafted, true);
    assert!(
        fired
            .iter()
            .any(|r| r.rule == SlashingRule::ThreeSfExtra && r.offender == 9),
        "c12 FAIL: crafted later-source/earlier-target pair did not trip the extra rule"
    );
    assert!(
        ffg::detect_slashing(&crafted, false)
            .iter()
            .all(|r| r.rule != SlashingRule::ThreeSfExtra),
        "c12 FAIL: the extra rule fired while disarmed"
    );
    gate.pass(
        12,
        Duration::from_secs(60),
        started,
        "slot-t block final at close of slot t+2 for all t; extra slashing rule fires on the crafted pair only",
    );
}

// ---------------------------------------------------------------------------
// 13. Fork-choice rules against the definitional oracle
// ---------------------------------------------------------------------------

/// The shared greedy-descent fork choice must match the from-scratch
/// oracle, first across every tree of up to 7 blocks with every vote
/// assignment of 5 voters (abstain, genesis, or any block — 25,817,497
/// instances, cycling expiry windows, roots, and query slots), then across
/// 10,000 random instances of up to 50 blocks and 20 voters with random
/// stakes, revotes, and equivocations, where the full view-mediated rule
/// wrappers are exercised too.
fn c13_fork_choice_oracle(gate: &mut Gate) {
    let started = Instant::now();
    // --- exhaustive phase ---
    // Shapes: node i (slot i+1) attaches to genesis or any earlier node.
    let mut shapes: Vec<Vec<usize>> = vec![Vec::new()];
    for k in 1..=6usize {
        let mut stack: Vec<Vec<usize>> = vec![Vec::with_capacity(k)];
        while let Some(cur) = stack.pop() {
            if cur.len() == k {
                shapes.push(cur);
                continue;
            }
            for p in 0..=cur.len() {
                let mut next = cur.clone();
                next.push(p);
                stack.push(next);
            }
        }
    }
    assert_eq!(shapes.len(), 874, "c13 FAIL: shape enumeration is off");
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(4)
        .min(8);
    let instances = AtomicU64::new(0);
    let spot_checks = AtomicU64::new(0);
    let mismatches: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for w in 0..workers {
            let shapes = &shapes;
            let instances = &instances;
            let spot_checks = &spot_checks;
            let mismatches = &mismatches;
            scope.spawn(move || {
                let balances: Balances = (0..5).map(|i| (i, 32u64)).collect();
                let mut local = 0u64;
                let mut local_spots = 0u64;
                for (si, parents) in shapes.iter().enumerate().skip(w).step_by(workers) {
                    let mut tree = BlockTree::new();
                    let mut blocks: Vec<Block> = Vec::with_capacity(parents.len());
                    for (i, &p) in parents.iter().enumerate() {
                        let parent = if p == 0 {
                            tree.genesis()
                        } else {
                            blocks[p - 1].digest
                        };
                        let b = Block::new(parent, i as u64 + 1, i as u64);
                        tree.insert(b).expect("insert");
                        blocks.push(b);
                    }
                    let k = parents.len();
                    let options = (k + 2) as u64; // abstain | genesis | node
                    let assignments = options.pow(5);
                    for a in 0..assignments {
                        let mut votes: Vec<VoteMessage> = Vec::with_capacity(5);
                        let mut digits = a;
                        for voter in 0..5u64 {
                            let choice = (digits % options) as usize;
                            digits /= options;
                            if choice == 0 {
                                continue;
                            }
                            let target = if choice == 1 {
                                tree.genesis()
                            } else {
                                blocks[choice - 2].digest
                            };
                            votes.push(VoteMessage::head_vote(voter, voter + 1, target));
                        }
                        // Cycle the rule variant deterministically: window
                        // (unbounded, 1, 3, unbounded-rooted) x query slot
                        // (6 with all votes live, 3 with future votes cast).
                        let variant = (si as u64 * 131 + a) % 8;
                        let eta = match variant % 4 {
                            1 => Eta::Finite(1),
                            2 => Eta::Finite(3),
                            _ => Eta::Infinite,
                        };
                        let q = if variant < 4 { 6u64 } else { 3 };
                        let root = if variant % 4 == 3 && k >= 1 {
                            blocks[0].digest
                        } else {
                            tree.genesis()
                        };
                        let window = eta.window(q).expect("q >= 1");
                        let mut latest = LatestVotes::default();
                        for v in &votes {
                            if v.slot >= window.0 && v.slot <= window.1 {
                                latest.by_voter.insert(v.voter, (v.slot, v.head.expect("head")));
                            }
                        }
                        let fast =
                            fork_choice::ghost(&tree, root, &latest, &balances).expect("ghost");
                        let slow = oracle::head(&tree, root, &votes, window, &balances);
                        if fast != slow {
                            let mut sink = mismatches.lock().expect("lock");
                            if sink.len() < 8 {
                                sink.push(format!(
                                    "shape {si} assignment {a} variant {variant}: fast {fast:#x} oracle {slow:#x}"
                                ));
                            }
                        }
                        local += 1;
                        if a % 64 == 0 {
                            // Same instance through a validator view and the
                            // public rule wrappers.
                            let mut view = View::new();
                            for b in &blocks {
                                view.receive_block(*b);
                            }
                            for v in &votes {
                                view.receive_vote(*v);
                            }
                            view.merge();
                            let via_view = match variant % 4 {
                                0 => fork_choice::lmd_ghost(&view, q, &balances),
                                1 => fork_choice::rlmd_ghost(&view, q, Eta::Finite(1), &balances),
                                2 => fork_choice::rlmd_ghost(&view, q, Eta::Finite(3), &balances),
                                _ => fork_choice::hfc(
                                    &view,
                                    &Checkpoint::new(root, 1),
                                    q,
                                    Eta::Infinite,
                                    &balances,
                                ),
                            }
                            .expect("wrapper");
                            assert_eq!(
                                via_view, fast,
                                "c13 FAIL: view-mediated wrapper disagrees, shape {si} assignment {a} variant {variant}"
                            );
                            local_spots += 1;
                        }
                    }
                }
                instances.fetch_add(local, Ordering::Relaxed);
                spot_checks.fetch_add(local_spots, Ordering::Relaxed);
            });
        }
    });
    let found = mismatches.into_inner().expect("lock");
    assert!(found.is_empty(), "c13 FAIL: {found:?}");
    let exhaustive = instances.load(Ordering::Relaxed);
    assert_eq!(exhaustive, 25_817_497, "c13 FAIL: enumeration incomplete");
    // --- randomized phase ---
    let mut rng = SimRng::derive(0xD15C0, "fork-choice-oracle", 1);
    let mut random_instances = 0u64;
    for _ in 0..10_000u64 {
        let nodes = 1 + rng.next_below(49) as usize; // up to 50 blocks with genesis
        let mut view = View::new();
        let mut digests = vec![view.tree.genesis()];
        let mut slots = vec![0u64];
        for i in 0..nodes {
            let pick = rng.next_below(digests.len() as u64) as usize;
            let slot = slots[pick] + 1 + rng.next_below(3);
            let b = Block::new(digests[pick], slot, i as u64);
            view.receive_block(b);
            digests.push(b.digest);
            slots.push(slot);
        }
        view.merge();
        let max_slot = slots.iter().copied().max().expect("nonempty");
        let voters = 1 + rng.next_below(20);
        let stake_menu = [0u64, 16, 32, 32, 32, 64, 2048];
        let balances: Balances = (0..voters)
            .map(|v| (v, stake_menu[rng.next_below(stake_menu.len() as u64) as usize]))
            .collect();
        let vote_count = rng.next_below(3 * voters) + 1;
        let mut votes = Vec::new();
        for _ in 0..vote_count {
            let voter = rng.next_below(voters);
            let slot = 1 + rng.next_below(max_slot + 2);
            let target = digests[rng.next_below(digests.len() as u64) as usize];
            let vote = VoteMessage::head_vote(voter, slot, target);
            votes.push(vote);
            view.receive_vote(vote);
        }
        view.merge();
        let q = 1 + rng.next_below(max_slot + 3);
        let eta = match rng.next_below(5) {
            0 => Eta::Finite(1),
            1 => Eta::Finite(2),
            2 => Eta::Finite(4),
            3 => Eta::Finite(8),
            _ => Eta::Infinite,
        };
        let root = digests[rng.next_below(digests.len() as u64) as usize];
        let window = eta.window(q).expect("q >= 1");
        let latest = view.latest_votes(q, eta);
        let fast = fork_choice::ghost(&view.tree, root, &latest, &balances).expect("ghost");
        let slow = oracle::head(&view.tree, root, &votes, window, &balances);
        assert_eq!(
            fast, slow,
            "c13 FAIL: random instance {random_instances} diverged (eta {eta:?}, q {q})"
        );
        if root == view.tree.genesis() {
            let wrapped = fork_choice::rlmd_ghost(&view, q, eta, &balances).expect("wrapper");
            assert_eq!(wrapped, fast, "c13 FAIL: random wrapper divergence");
        } else {
            let wrapped = fork_choice::hfc(&view, &Checkpoint::new(root, 1), q, eta, &balances)
                .expect("wrapper");
            assert_eq!(wrapped, fast, "c13 FAIL: random rooted-wrapper divergence");
        }
        random_instances += 1;
    }
    let spots = spot_checks.load(Ordering::Relaxed);
    gate.pass(
        13,
        Duration::from_secs(120),
        started,
        &format!(
            "{exhaustive} exhaustive + {random_instances} random instances match the oracle ({spots} re-run through validator views), zero mismatches"
        ),
    );
}

// ---------------------------------------------------------------------------
// 14. Inactivity leak and finality recovery
// ---------------------------------------------------------------------------

/// Forty percent of stake goes permanently offline at slot 8: finality
/// halts, the drain starts once four settled epochs pass without a new
/// finalization, and finalization resumes exactly at the settle predicted
/// by replaying the drain arithmetic in closed form — online stake first
/// clears two-thirds of the shrunken total at epoch 7, so the adjacency
/// rule lands its first new finalization at slot 72 and keeps going.
fn c14_inactivity_leak_recovery(gate: &mut Gate) {
    let started = Instant::now();
    let epoch_slots = 8u64;
    let online_stake = 6 * 32u64;
    let offline_count = 4u64;
    let trigger = 4u64;
    let records = gate.run(
        "protocol = gasper_lite\nn = 10\nepoch_slots = 8\nslots = 84\ngst = 0\n\
         leak_trigger = 4\nleak_rate_num = 1\nleak_rate_den = 10\n\
         offline.6 = 8..83\noffline.7 = 8..83\noffline.8 = 8..83\noffline.9 = 8..83\nseed = 5\n",
    );
    // Closed form: settles happen at the top of each epoch; every settle
    // without a fresh finalization bumps the stall counter, and once it
    // reaches the trigger each further settle drains the inactive stake by
    // a tenth (floored). Justification returns at the first settle whose
    // current balances put the online stake at or above two-thirds.
    let mut balance = 32u64;
    let mut stalled = 0u64;
    let mut epoch = 0u64;
    let resume_epoch = loop {
        // The head-only genesis epoch carries no links, but its settle
        // cannot clear the bar anyway at these stakes.
        if 3 * online_stake >= 2 * (online_stake + offline_count * balance) {
            break epoch;
        }
        stalled += 1;
        if stalled >= trigger {
            balance -= balance / 10;
        }
        epoch += 1;
        assert!(epoch < 64, "c14 FAIL: closed form never recovers");
    };
    assert_eq!(resume_epoch, 7, "c14 FAIL: closed-form recovery epoch");
    let justify_slot = epoch_slots * (resume_epoch + 1);
    let resume_slot = epoch_slots * (resume_epoch + 2);
    assert_eq!(resume_slot, 72, "c14 FAIL: closed-form resumption slot");
    // Finality halted: no finalization lands before the predicted slot,
    // and nothing justifies before the predicted justification settle.
    for r in &records {
        if let TraceRecord::Finalize { slot, .. } = r {
            assert!(
                *slot >= resume_slot,
                "c14 FAIL: finalization at slot {slot} before the predicted resumption"
            );
        }
        if let TraceRecord::Justify { slot, .. } = r {
            assert!(
                *slot >= justify_slot,
                "c14 FAIL: justification at slot {slot} before the leak could bite"
            );
        }
    }
    let tree = TraceTree::from_records(&records);
    let finals: Vec<(u64, u64, u64, Digest)> = records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Finalize {
                tick,
                slot,
                actor,
                block,
                index,
                ..
            } => Some((*tick, *slot, *actor, *block))
                .filter(|_| *index == resume_epoch),
            _ => None,
        })
        .collect();
    assert!(
        !finals.is_empty(),
        "c14 FAIL: finalization never resumed"
    );
    let actors: BTreeSet<u64> = finals.iter().map(|(_, _, a, _)| *a).collect();
    assert_eq!(
        actors,
        (0..6).collect::<BTreeSet<u64>>(),
        "c14 FAIL: not every online validator finalized the recovery checkpoint"
    );
    for (tick, slot, _, block) in &finals {
        assert_eq!(*slot, resume_slot, "c14 FAIL: resumption slot");
        assert_eq!(*tick, resume_slot * 3, "c14 FAIL: resumption tick");
        // The recovered checkpoint is the deepest canonical block at or
        // before the recovery epoch's opening slot.
        let cp_slot = tree.slot_of(*block).expect("finalized block in trace");
        assert!(
            cp_slot <= epoch_slots * resume_epoch,
            "c14 FAIL: checkpoint block past its epoch boundary"
        );
        for later in cp_slot + 1..=epoch_slots * resume_epoch {
            if let Some(candidate) = blocks_by_slot(&tree).get(&later) {
                assert!(
                    !tree.is_ancestor(*candidate, *block).unwrap_or(false),
                    "c14 FAIL: a deeper boundary block existed"
                );
            }
        }
    }
    // Recovery is sustained: the next epoch finalizes on schedule too.
    assert!(
        records.iter().any(|r| matches!(r, TraceRecord::Finalize { slot, index, .. }
            if *index == resume_epoch + 1 && *slot == resume_slot + epoch_slots)),
        "c14 FAIL: finalization did not continue after the recovery epoch"
    );
    gate.pass(
        14,
        Duration::from_secs(60),
        started,
        &format!(
            "40% offline halts finality; drain from the 4th stalled settle; finalization resumes exactly at slot {resume_slot} (epoch {resume_epoch}) and continues"
        ),
    );
}

// ---------------------------------------------------------------------------
// 15. Finalized ledger stays a prefix of the available ledger
// ---------------------------------------------------------------------------

/// Every simulation the earlier checks executed was audited at every
/// confirmation point: an actor's confirmed head must always extend its
/// latest finalized block. Zero breaks across the whole gate.
fn c15_prefix_invariant(gate: &mut Gate) {
    let started = Instant::now();
    assert!(
        gate.runs_audited >= 1_500,
        "c15 FAIL: expected the earlier checks to feed the audit, saw only {} runs",
        gate.runs_audited
    );
    assert_eq!(
        gate.prefix_breaks, 0,
        "c15 FAIL: a confirmed head failed to extend its finalized prefix"
    );
    let detail = format!(
        "{} runs audited at every confirmation point, zero prefix breaks",
        gate.runs_audited
    );
    gate.pass(15, Duration::from_secs(60), started, &detail);
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

#[test]
fn acceptance_gate() {
    let checks: [(u32, fn(&mut Gate)); 15] = [
        (1, c01_classical_bft_safety),
        (2, c02_quorum_intersection),
        (3, c03_accountable_safety),
        (4, c04_epoch_finality_latency),
        (5, c05_two_block_reorg),
        (6, c06_withholding_threshold),
        (7, c07_expiry_reorg_resilience),
        (8, c08_expiry_asynchrony_brittleness),
        (9, c09_engine_equivalences),
        (10, c10_window_asynchrony_resilience),
        (11, c11_single_slot_finality),
        (12, c12_three_slot_finality),
        (13, c13_fork_choice_oracle),
        (14, c14_inactivity_leak_recovery),
        (15, c15_prefix_invariant),
    ];
    let mut gate = Gate::new();
    let mut failed = Vec::new();
    for (id, check) in checks {
        if let Err(payload) = std::panic::catch_unwind(AssertUnwindSafe(|| check(&mut gate))) {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".to_string());
            let line = format!("criterion {id:02} FAIL {msg}");
            println!("{line}");
            failed.push(line);
        }
    }
    println!(
        "acceptance gate: {}/15 criteria passed",
        15 - failed.len()
    );
    assert!(failed.is_empty(), "\n{}", failed.join("\n"));
}
