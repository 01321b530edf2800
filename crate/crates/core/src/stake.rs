//! Validator set, effective balances, participation modes, committees, and
//! proposer selection.
//!
//! Stake is kept in whole integral units so supermajority checks stay exact
//! rational comparisons. Balances feed fork-choice weight and finality-gadget
//! quorums through [`effective_balance`], which caps the countable stake per
//! validator.

use crate::error::SimError;
use crate::rng::SimRng;
use std::collections::BTreeMap;

pub type ValidatorId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validator {
    pub id: ValidatorId,
    /// Stake in whole units.
    pub stake: u64,
    /// False for adversary-controlled validators.
    pub honest: bool,
}

/// Cap on countable stake per validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveBalanceRule {
    pub cap: u64,
}

impl EffectiveBalanceRule {
    pub fn new(cap: u64) -> Self {
        EffectiveBalanceRule { cap }
    }
}

/// `min(stake, cap)`.
pub fn effective_balance(stake: u64, rule: EffectiveBalanceRule) -> u64 {
    stake.min(rule.cap)
}

/// Participation state of a validator in a given slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Awake,
    Offline,
    /// First slot back after sleeping: the validator listens and merges but
    /// emits nothing until the next slot.
    Dreamy,
}

/// Scheduled sleep windows per validator, in slots. Inclusive ranges.
#[derive(Debug, Clone, Default)]
pub struct ParticipationSchedule {
    pub offline: BTreeMap<ValidatorId, Vec<(u64, u64)>>,
    /// First slot at or after which every honest validator is awake.
    /// `None` means schedules run forever.
    pub gat_slot: Option<u64>,
}

impl ParticipationSchedule {
    pub fn always_awake() -> Self {
        ParticipationSchedule {
            offline: BTreeMap::new(),
            gat_slot: Some(0),
        }
    }

    fn scheduled_offline(&self, v: ValidatorId, slot: u64) -> bool {
        self.offline
            .get(&v)
            .map(|ranges| ranges.iter().any(|&(a, b)| a <= slot && slot <= b))
            .unwrap_or(false)
    }
}

/// Participation mode of `validator` during `slot`.
///
/// Adversarial validators are always awake. Honest validators are awake from
/// the global awake time on, offline while scheduled, and dreamy for exactly
/// the first slot after an offline stretch.
pub fn mode_at(validator: &Validator, slot: u64, schedule: &ParticipationSchedule) -> Mode {
    if !validator.honest {
        return Mode::Awake;
    }
    if let Some(gat) = schedule.gat_slot {
        if slot >= gat {
            return Mode::Awake;
        }
    }
    if schedule.scheduled_offline(validator.id, slot) {
        return Mode::Offline;
    }
    if slot > 0 && schedule.scheduled_offline(validator.id, slot - 1) {
        return Mode::Dreamy;
    }
    Mode::Awake
}

/// Partition `validators` into `count` committees for `epoch` with a seeded
/// shuffle. Committee k serves slot `epoch * count + k`. Sizes differ by at
/// most one; every validator lands in exactly one committee.
pub fn committees(
    epoch: u64,
    validators: &[Validator],
    seed: u64,
    count: u64,
) -> Result<Vec<Vec<ValidatorId>>, SimError> {
    let n = validators.len() as u64;
    if n < count {
        return Err(SimError::Config(format!(
            "{n} validators cannot fill {count} committees"
        )));
    }
    let mut ids: Vec<ValidatorId> = validators.iter().map(|v| v.id).collect();
    let mut rng = SimRng::derive(seed, "committee", epoch);
    rng.shuffle(&mut ids);

    let base = (n / count) as usize;
    let extra = (n % count) as usize;
    let mut out = Vec::with_capacity(count as usize);
    let mut cursor = 0usize;
    for k in 0..count as usize {
        let size = base + usize::from(k < extra);
        out.push(ids[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(out)
}

/// Pick the slot's proposer from `eligible` (id, weight) pairs, weighted by
/// effective balance. The draw is a pure function of `(seed, slot)`.
pub fn select_proposer(
    slot: u64,
    eligible: &[(ValidatorId, u64)],
    seed: u64,
) -> Result<ValidatorId, SimError> {
    let total: u64 = eligible.iter().map(|&(_, w)| w).sum();
    if eligible.is_empty() || total == 0 {
        return Err(SimError::NoProposer { slot });
    }
    let mut rng = SimRng::derive(seed, "proposer", slot);
    let mut r = rng.next_below(total);
    for &(id, w) in eligible {
        if r < w {
            return Ok(id);
        }
        r -= w;
    }
    unreachable!("draw below total weight always lands on a validator");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn validator(id: u64) -> Validator {
        Validator {
            id,
            stake: 32,
            honest: true,
        }
    }

    #[test]
    fn effective_balance_caps() {
        let low = EffectiveBalanceRule::new(32);
        let high = EffectiveBalanceRule::new(2048);
        assert_eq!(effective_balance(48, low), 32);
        assert_eq!(effective_balance(16, low), 16);
        assert_eq!(effective_balance(4096, high), 2048);
    }

    #[test]
    fn offline_then_dreamy_then_awake() {
        let mut sched = ParticipationSchedule {
            offline: BTreeMap::new(),
            gat_slot: Some(100),
        };
        sched.offline.insert(0, vec![(3, 5)]);
        let v = validator(0);
        assert_eq!(mode_at(&v, 2, &sched), Mode::Awake);
        assert_eq!(mode_at(&v, 4, &sched), Mode::Offline);
        assert_eq!(mode_at(&v, 5, &sched), Mode::Offline);
        assert_eq!(mode_at(&v, 6, &sched), Mode::Dreamy);
        assert_eq!(mode_at(&v, 7, &sched), Mode::Awake);
    }

    #[test]
    fn awake_from_gat_regardless_of_schedule() {
        let mut sched = ParticipationSchedule {
            offline: BTreeMap::new(),
            gat_slot: Some(4),
        };
        sched.offline.insert(0, vec![(3, 9)]);
        let v = validator(0);
        assert_eq!(mode_at(&v, 3, &sched), Mode::Offline);
        assert_eq!(mode_at(&v, 4, &sched), Mode::Awake);
        assert_eq!(mode_at(&v, 9, &sched), Mode::Awake);
    }

    #[test]
    fn adversary_never_sleeps() {
        let mut sched = ParticipationSchedule {
            offline: BTreeMap::new(),
            gat_slot: Some(100),
        };
        sched.offline.insert(0, vec![(0, 50)]);
        let v = Validator {
            id: 0,
            stake: 32,
            honest: false,
        };
        assert_eq!(mode_at(&v, 10, &sched), Mode::Awake);
    }

    #[test]
    fn committees_partition_evenly() {
        let vs: Vec<Validator> = (0..64).map(validator).collect();
        let parts = committees(0, &vs, 9, 32).unwrap();
        assert_eq!(parts.len(), 32);
        assert!(parts.iter().all(|c| c.len() == 2));
        let mut all: Vec<u64> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn committees_sizes_differ_by_at_most_one() {
        let vs: Vec<Validator> = (0..67).map(validator).collect();
        let parts = committees(2, &vs, 9, 32).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|c| c.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 67);
        assert!(sizes.iter().all(|&s| s == 2 || s == 3));
    }

    #[test]
    fn committees_deterministic_and_epoch_dependent() {
        let vs: Vec<Validator> = (0..64).map(validator).collect();
        let a = committees(1, &vs, 9, 32).unwrap();
        let b = committees(1, &vs, 9, 32).unwrap();
        let c = committees(2, &vs, 9, 32).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn committees_reject_thin_validator_sets() {
        let vs: Vec<Validator> = (0..31).map(validator).collect();
        assert!(committees(0, &vs, 9, 32).is_err());
    }

    #[test]
    fn proposer_single_eligible() {
        assert_eq!(select_proposer(5, &[(3, 32)], 1).unwrap(), 3);
    }

    #[test]
    fn proposer_deterministic_per_slot() {
        let eligible: Vec<(u64, u64)> = (0..8).map(|i| (i, 32)).collect();
        let a = select_proposer(7, &eligible, 42).unwrap();
        let b = select_proposer(7, &eligible, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn proposer_empty_eligible_errors() {
        assert!(select_proposer(0, &[], 1).is_err());
    }

    #[test]
    fn proposer_frequency_tracks_stake() {
        // Two validators with stakes 3 and 1: the heavy one should win about
        // three quarters of 10_000 slots.
        let eligible = [(0u64, 3u64), (1, 1)];
        let mut heavy = 0u64;
        for slot in 0..10_000 {
            if select_proposer(slot, &eligible, 1234).unwrap() == 0 {
                heavy += 1;
            }
        }
        let freq = heavy as f64 / 10_000.0;
        assert!((freq - 0.75).abs() <= 0.02, "frequency {freq}");
    }
}
