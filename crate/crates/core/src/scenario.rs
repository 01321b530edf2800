//! Scenario configuration: a flat `key = value` text format and the
//! validated in-memory form that drives a run.
//!
//! Format rules: UTF-8, one `key = value` per line, `#` starts a comment,
//! blank lines ignored. Lists are comma-separated, slot ranges are `a..b`
//! with both ends inclusive. Unknown keys are errors so typos fail loudly.

use crate::block_tree::Eta;
use crate::ffg::LeakParams;
use crate::fork_choice::Balances;
use crate::stake::{
    committees, effective_balance, mode_at, select_proposer, EffectiveBalanceRule, Mode,
    ParticipationSchedule, Validator, ValidatorId,
};
use crate::time::{NetworkConfig, Tick, TimeBound};
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Pbft,
    GasperLite,
    Goldfish,
    Rlmd,
    LmdVm,
    Ssf,
    ThreeSf,
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "pbft" => Ok(Protocol::Pbft),
            "gasper_lite" => Ok(Protocol::GasperLite),
            "goldfish" => Ok(Protocol::Goldfish),
            "rlmd" => Ok(Protocol::Rlmd),
            "lmd_vm" => Ok(Protocol::LmdVm),
            "ssf" => Ok(Protocol::Ssf),
            "three_sf" => Ok(Protocol::ThreeSf),
            other => Err(SimError::Config(format!("protocol: unknown value {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Pbft => "pbft",
            Protocol::GasperLite => "gasper_lite",
            Protocol::Goldfish => "goldfish",
            Protocol::Rlmd => "rlmd",
            Protocol::LmdVm => "lmd_vm",
            Protocol::Ssf => "ssf",
            Protocol::ThreeSf => "three_sf",
        }
    }

    /// Slot geometry: ticks per slot. The single-slot and three-slot
    /// pipelines need a fourth phase; the classical engine is event-driven
    /// but keeps a 4-tick request cadence for its trace clock.
    pub fn phases_per_slot(&self) -> u64 {
        match self {
            Protocol::GasperLite | Protocol::Goldfish | Protocol::Rlmd | Protocol::LmdVm => 3,
            Protocol::Ssf | Protocol::ThreeSf | Protocol::Pbft => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryKind {
    None,
    ExAnteReorg,
    KReorg,
    ExpiryReorg,
    Equivocate,
    DelayControl,
}

impl AdversaryKind {
    pub fn parse(s: &str) -> Result<Self, SimError> {
        match s {
            "none" => Ok(AdversaryKind::None),
            "ex-ante-reorg" => Ok(AdversaryKind::ExAnteReorg),
            "k-reorg" => Ok(AdversaryKind::KReorg),
            "expiry-reorg" => Ok(AdversaryKind::ExpiryReorg),
            "equivocate" => Ok(AdversaryKind::Equivocate),
            "delay-control" => Ok(AdversaryKind::DelayControl),
            other => Err(SimError::Config(format!("adversary: unknown value {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdversaryKind::None => "none",
            AdversaryKind::ExAnteReorg => "ex-ante-reorg",
            AdversaryKind::KReorg => "k-reorg",
            AdversaryKind::ExpiryReorg => "expiry-reorg",
            AdversaryKind::Equivocate => "equivocate",
            AdversaryKind::DelayControl => "delay-control",
        }
    }
}

/// What a single-slot-finality voter does in its link phase when the slot's
/// fast confirmation did not come through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsfFallback {
    Abstain,
    PreviousConfirmed,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub protocol: Protocol,
    pub eta: Eta,
    pub n: u64,
    pub validators: Vec<Validator>,
    pub balance_rule: EffectiveBalanceRule,
    pub network: NetworkConfig,
    pub slots: u64,
    pub seed: u64,
    pub epoch_slots: u64,
    pub adversary: AdversaryKind,
    pub adversary_ids: BTreeSet<ValidatorId>,
    pub adversary_k: u64,
    pub adversary_slot: u64,
    pub schedule: ParticipationSchedule,
    pub proposer_override: BTreeMap<u64, ValidatorId>,
    pub committee_override: BTreeMap<u64, Vec<ValidatorId>>,
    pub leak: LeakParams,
    pub ssf_fallback: SsfFallback,
    pub trace_deliveries: bool,
    pub pbft_requests: u64,
    pub pbft_crash: BTreeMap<ValidatorId, Tick>,
    pub pbft_equivocate: bool,
}

impl Scenario {
    /// Effective balances at genesis.
    pub fn balances(&self) -> Balances {
        self.validators
            .iter()
            .map(|v| (v.id, effective_balance(v.stake, self.balance_rule)))
            .collect()
    }

    pub fn total_stake(&self) -> u64 {
        self.balances().values().sum()
    }

    pub fn is_adversary(&self, v: ValidatorId) -> bool {
        self.adversary_ids.contains(&v)
    }

    pub fn mode(&self, v: ValidatorId, slot: u64) -> Mode {
        let validator = &self.validators[v as usize];
        mode_at(validator, slot, &self.schedule)
    }

    /// Proposer for a slot: explicit override, else a stake-weighted draw.
    pub fn proposer(&self, slot: u64) -> Result<ValidatorId, SimError> {
        if let Some(&v) = self.proposer_override.get(&slot) {
            return Ok(v);
        }
        let eligible: Vec<(ValidatorId, u64)> = self
            .validators
            .iter()
            .map(|v| (v.id, effective_balance(v.stake, self.balance_rule)))
            .collect();
        select_proposer(slot, &eligible, self.seed)
    }

    /// Voting committee for a slot: explicit override, else the slot's share
    /// of the epoch shuffle (committee protocols), else every validator.
    pub fn committee(&self, slot: u64) -> Result<Vec<ValidatorId>, SimError> {
        if let Some(ids) = self.committee_override.get(&slot) {
            return Ok(ids.clone());
        }
        if self.protocol == Protocol::GasperLite {
            let epoch = slot / self.epoch_slots;
            let parts = committees(epoch, &self.validators, self.seed, self.epoch_slots)?;
            Ok(parts[(slot % self.epoch_slots) as usize].clone())
        } else {
            Ok(self.validators.iter().map(|v| v.id).collect())
        }
    }

    /// Header parameter records shared by every engine; excludes anything
    /// that differs between engines meant to agree byte-for-byte.
    pub fn header_params(&self) -> Vec<(String, String)> {
        let stakes: Vec<String> = self.validators.iter().map(|v| v.stake.to_string()).collect();
        let mut params = vec![
            ("n".to_string(), self.n.to_string()),
            ("stakes".to_string(), stakes.join(",")),
            (
                "max_effective_balance".to_string(),
                self.balance_rule.cap.to_string(),
            ),
            ("epoch_slots".to_string(), self.epoch_slots.to_string()),
            ("delta".to_string(), self.network.delta.to_string()),
            ("gst".to_string(), self.network.gst.to_string()),
            ("gat".to_string(), self.network.gat.to_string()),
            ("slots".to_string(), self.slots.to_string()),
        ];
        if !self.adversary_ids.is_empty() {
            let ids: Vec<String> = self.adversary_ids.iter().map(|v| v.to_string()).collect();
            params.push(("adversary_ids".to_string(), ids.join(",")));
        }
        params
    }
}

fn bad(key: &str, reason: &str) -> SimError {
    SimError::Config(format!("{key}: {reason}"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, SimError> {
    value
        .parse()
        .map_err(|_| bad(key, &format!("expected integer, got {value}")))
}

fn parse_bound(key: &str, value: &str) -> Result<TimeBound, SimError> {
    if value == "inf" {
        Ok(TimeBound::Never)
    } else {
        Ok(TimeBound::At(parse_u64(key, value)?))
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, SimError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad(key, &format!("expected true or false, got {other}"))),
    }
}

fn parse_id_list(key: &str, value: &str) -> Result<Vec<ValidatorId>, SimError> {
    value
        .split(',')
        .map(|p| parse_u64(key, p.trim()))
        .collect()
}

/// `a..b` inclusive slot ranges, comma-separated.
fn parse_ranges(key: &str, value: &str) -> Result<Vec<(u64, u64)>, SimError> {
    let mut out = Vec::new();
    for piece in value.split(',') {
        let piece = piece.trim();
        let (a, b) = piece
            .split_once("..")
            .ok_or_else(|| bad(key, &format!("expected a..b range, got {piece}")))?;
        let lo = parse_u64(key, a)?;
        let hi = parse_u64(key, b)?;
        if hi < lo {
            return Err(bad(key, &format!("range {piece} runs backwards")));
        }
        out.push((lo, hi));
    }
    Ok(out)
}

/// Parse config text into a validated scenario.
pub fn parse(text: &str) -> Result<Scenario, SimError> {
    let mut kv: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("line {}: missing '='", i + 1)))?;
        kv.push((k.trim().to_string(), v.trim().to_string()));
    }

    let mut protocol = None;
    let mut eta = None;
    let mut n = None;
    let mut stake = 32u64;
    let mut stakes: Option<Vec<u64>> = None;
    let mut cap = 2048u64;
    let mut delta = 1u64;
    let mut gst = TimeBound::At(0);
    let mut gat = TimeBound::Never;
    let mut slots = 10u64;
    let mut seed = 0u64;
    let mut epoch_slots = 32u64;
    let mut adversary = AdversaryKind::None;
    let mut adversary_ids = BTreeSet::new();
    let mut adversary_k = 2u64;
    let mut adversary_slot = 0u64;
    let mut offline: BTreeMap<ValidatorId, Vec<(u64, u64)>> = BTreeMap::new();
    let mut proposer_override = BTreeMap::new();
    let mut committee_override = BTreeMap::new();
    let mut leak = LeakParams::default();
    let mut ssf_fallback = SsfFallback::Abstain;
    let mut trace_deliveries = false;
    let mut pbft_requests = 1u64;
    let mut pbft_crash = BTreeMap::new();
    let mut pbft_equivocate = false;

    for (key, value) in &kv {
        match key.as_str() {
            "protocol" => protocol = Some(Protocol::parse(value)?),
            "eta" => {
                eta = Some(if value == "inf" {
                    Eta::Infinite
                } else {
                    let e = parse_u64(key, value)?;
                    if e == 0 {
                        return Err(bad(key, "must be at least 1, or inf"));
                    }
                    Eta::Finite(e)
                })
            }
            "n" => n = Some(parse_u64(key, value)?),
            "stake" => stake = parse_u64(key, value)?,
            "stakes" => {
                stakes = Some(
                    value
                        .split(',')
                        .map(|p| parse_u64(key, p.trim()))
                        .collect::<Result<_, _>>()?,
                )
            }
            "max_effective_balance" => cap = parse_u64(key, value)?,
            "delta" => delta = parse_u64(key, value)?,
            "gst" => gst = parse_bound(key, value)?,
            "gat" => gat = parse_bound(key, value)?,
            "slots" => slots = parse_u64(key, value)?,
            "seed" => seed = parse_u64(key, value)?,
            "epoch_slots" => epoch_slots = parse_u64(key, value)?,
            "adversary" => adversary = AdversaryKind::parse(value)?,
            "adversary_ids" => adversary_ids = parse_id_list(key, value)?.into_iter().collect(),
            "adversary_k" => adversary_k = parse_u64(key, value)?,
            "adversary_slot" => adversary_slot = parse_u64(key, value)?,
            "leak_trigger" => leak.trigger_epochs = parse_u64(key, value)?,
            "leak_rate_num" => leak.rate_num = parse_u64(key, value)?,
            "leak_rate_den" => leak.rate_den = parse_u64(key, value)?,
            "ssf_ffg_fallback" => {
                ssf_fallback = match value.as_str() {
                    "abstain" => SsfFallback::Abstain,
                    "previous_confirmed" => SsfFallback::PreviousConfirmed,
                    other => return Err(bad(key, &format!("unknown value {other}"))),
                }
            }
            "trace_deliveries" => trace_deliveries = parse_bool(key, value)?,
            "pbft_requests" => pbft_requests = parse_u64(key, value)?,
            "pbft_equivocate" => pbft_equivocate = parse_bool(key, value)?,
            other => {
                if let Some(id) = other.strip_prefix("offline.") {
                    let id = parse_u64(other, id)?;
                    offline.insert(id, parse_ranges(other, value)?);
                } else if let Some(slot) = other.strip_prefix("proposer.") {
                    let slot = parse_u64(other, slot)?;
                    proposer_override.insert(slot, parse_u64(other, value)?);
                } else if let Some(slot) = other.strip_prefix("committee.") {
                    let slot = parse_u64(other, slot)?;
                    committee_override.insert(slot, parse_id_list(other, value)?);
                } else if let Some(id) = other.strip_prefix("pbft_crash.") {
                    let id = parse_u64(other, id)?;
                    pbft_crash.insert(id, parse_u64(other, value)?);
                } else {
                    return Err(SimError::Config(format!("unknown key: {other}")));
                }
            }
        }
    }

    let protocol = protocol.ok_or_else(|| bad("protocol", "required"))?;
    let n = n.ok_or_else(|| bad("n", "required"))?;
    if n == 0 {
        return Err(bad("n", "must be at least 1"));
    }
    if delta != 1 {
        return Err(bad("delta", "the time unit is normalized; delta must be 1"));
    }
    if slots == 0 {
        return Err(bad("slots", "must be at least 1"));
    }
    if epoch_slots == 0 {
        return Err(bad("epoch_slots", "must be at least 1"));
    }
    if leak.rate_den == 0 || leak.rate_num > leak.rate_den {
        return Err(bad("leak_rate_num", "rate must be a fraction within [0, 1]"));
    }
    let stakes = match stakes {
        Some(s) => {
            if s.len() as u64 != n {
                return Err(bad("stakes", &format!("expected {n} entries, got {}", s.len())));
            }
            s
        }
        None => vec![stake; n as usize],
    };
    if protocol == Protocol::Rlmd && eta.is_none() {
        return Err(bad("eta", "required for the expiry-window protocol"));
    }
    let eta = eta.unwrap_or(Eta::Infinite);
    for id in &adversary_ids {
        if *id >= n {
            return Err(bad("adversary_ids", &format!("validator {id} out of range")));
        }
    }
    if adversary != AdversaryKind::None && adversary_ids.is_empty() {
        return Err(bad("adversary_ids", "required when an adversary is configured"));
    }
    if adversary == AdversaryKind::KReorg && adversary_k == 0 {
        return Err(bad("adversary_k", "must be at least 1"));
    }
    for (id, _) in &offline {
        if *id >= n {
            return Err(bad("offline", &format!("validator {id} out of range")));
        }
        if adversary_ids.contains(id) {
            return Err(bad("offline", &format!("validator {id} is adversarial and never sleeps")));
        }
    }
    for (slot, id) in &proposer_override {
        if *id >= n {
            return Err(bad(
                &format!("proposer.{slot}"),
                &format!("validator {id} out of range"),
            ));
        }
    }
    for (slot, ids) in &committee_override {
        for id in ids {
            if *id >= n {
                return Err(bad(
                    &format!("committee.{slot}"),
                    &format!("validator {id} out of range"),
                ));
            }
        }
    }

    let pps = protocol.phases_per_slot();
    let gat_slot = match gat {
        TimeBound::Never => None,
        TimeBound::At(t) => Some(t.div_ceil(pps)),
    };
    let validators: Vec<Validator> = (0..n)
        .map(|id| Validator {
            id,
            stake: stakes[id as usize],
            honest: !adversary_ids.contains(&id),
        })
        .collect();

    Ok(Scenario {
        protocol,
        eta,
        n,
        validators,
        balance_rule: EffectiveBalanceRule { cap },
        network: NetworkConfig { delta, gst, gat },
        slots,
        seed,
        epoch_slots,
        adversary,
        adversary_ids,
        adversary_k,
        adversary_slot,
        schedule: ParticipationSchedule { offline, gat_slot },
        proposer_override,
        committee_override,
        leak,
        ssf_fallback,
        trace_deliveries,
        pbft_requests,
        pbft_crash,
        pbft_equivocate,
    })
}

pub fn from_file(path: &std::path::Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let s = parse("protocol = goldfish\nn = 4\nslots = 10\n").unwrap();
        assert_eq!(s.protocol, Protocol::Goldfish);
        assert_eq!(s.n, 4);
        assert_eq!(s.validators.len(), 4);
        assert_eq!(s.validators[2].stake, 32);
        assert_eq!(s.network.delta, 1);
        assert_eq!(s.network.gst, TimeBound::At(0));
        assert!(s.validators.iter().all(|v| v.honest));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let s = parse("# header\nprotocol = ssf\n\nn = 3 # trailing\nslots = 5\n").unwrap();
        assert_eq!(s.protocol, Protocol::Ssf);
        assert_eq!(s.n, 3);
    }

    #[test]
    fn zero_eta_rejected() {
        let err = parse("protocol = rlmd\nn = 4\nslots = 5\neta = 0\n").unwrap_err();
        assert!(err.to_string().contains("eta"));
    }

    #[test]
    fn rlmd_requires_eta() {
        assert!(parse("protocol = rlmd\nn = 4\nslots = 5\n").is_err());
        let s = parse("protocol = rlmd\nn = 4\nslots = 5\neta = inf\n").unwrap();
        assert_eq!(s.eta, Eta::Infinite);
    }

    #[test]
    fn unknown_key_names_the_offender() {
        let err = parse("protocol = goldfish\nn = 4\nslots = 5\nwibble = 3\n").unwrap_err();
        assert!(err.to_string().contains("wibble"));
    }

    #[test]
    fn stakes_list_and_ranges_parse() {
        let s = parse(
            "protocol = gasper_lite\nn = 3\nslots = 5\nstakes = 7,8,9\noffline.1 = 2..4, 6..6\n",
        )
        .unwrap();
        assert_eq!(s.validators[1].stake, 8);
        assert_eq!(s.schedule.offline[&1], vec![(2, 4), (6, 6)]);
    }

    #[test]
    fn adversary_requires_ids() {
        let err =
            parse("protocol = goldfish\nn = 4\nslots = 5\nadversary = k-reorg\n").unwrap_err();
        assert!(err.to_string().contains("adversary_ids"));
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let err = parse("protocol = goldfish\nn = 4\nslots = 5\nproposer.3 = 9\n").unwrap_err();
        assert!(err.to_string().contains("proposer.3"));
    }

    #[test]
    fn duty_overrides_win() {
        let s = parse("protocol = goldfish\nn = 4\nslots = 5\nproposer.2 = 3\ncommittee.2 = 1,2\n")
            .unwrap();
        assert_eq!(s.proposer(2).unwrap(), 3);
        assert_eq!(s.committee(2).unwrap(), vec![1, 2]);
        // Non-committee protocols: everyone votes in uncovered slots.
        assert_eq!(s.committee(3).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn gat_converts_to_a_slot_ceiling() {
        let s = parse("protocol = goldfish\nn = 2\nslots = 5\ngat = 7\n").unwrap();
        // 3 ticks per slot: tick 7 is inside slot 2, so forced wake at 3.
        assert_eq!(s.schedule.gat_slot, Some(3));
    }

    #[test]
    fn header_params_track_the_scenario() {
        let s = parse("protocol = goldfish\nn = 2\nslots = 5\nseed = 9\ngst = inf\n").unwrap();
        let params = s.header_params();
        assert!(params.contains(&("gst".to_string(), "inf".to_string())));
        // The seed must not appear in header parameters.
        assert!(params.iter().all(|(k, _)| k != "seed" && k != "protocol" && k != "eta"));
    }
}
