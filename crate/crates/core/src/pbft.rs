//! Three-phase BFT replica with quorum certificates and a simplified view
//! change, run as the classical-finality baseline.
//!
//! The replica is a pure state machine: inputs arrive through `on_*` methods
//! and effects come back as [`Action`] values, so protocol logic is testable
//! without the event loop. The engine at the bottom of this file adapts the
//! state machine to the simulator: `Send` actions become broadcasts, timer
//! actions become wake events, transitions become trace records.
//!
//! Quorums are sized for n = 3f + 1: prepared needs an accepted pre-prepare
//! plus 2f matching prepares from distinct replicas; committed-local needs
//! prepared plus 2f + 1 matching commits. Any two such quorums intersect in
//! at least f + 1 replicas, which is what makes conflicting decisions
//! impossible with at most f faults.

use crate::block_tree::Digest;
use crate::rng::{fnv1a, SimRng};
use crate::scenario::{AdversaryKind, Scenario};
use crate::sim::{Ctx, Engine, Message};
use crate::stake::ValidatorId;
use crate::time::{deliver_bound, Tick, TimeBound};
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::{BTreeMap, BTreeSet};

/// Minimum overlap of two commit quorums (size 2f+1) out of n replicas.
/// The protocol's fault bound demands n ≥ 3f + 1; at that size the overlap
/// is at least f + 1, so quorums always meet in an honest replica.
pub fn quorum_intersection(n: u64, f: u64) -> Result<u64, SimError> {
    if n < 3 * f + 1 {
        return Err(SimError::QuorumTooSmall { n, f });
    }
    Ok(2 * (2 * f + 1) - n)
}

/// A prepared certificate carried across view changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreparedCert {
    pub seq: u64,
    pub view: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PbftMessage {
    PrePrepare { view: u64, seq: u64, digest: Digest },
    Prepare { view: u64, seq: u64, digest: Digest },
    Commit { view: u64, seq: u64, digest: Digest },
    ViewChange { new_view: u64, certs: Vec<PreparedCert> },
    NewView { view: u64, certs: Vec<PreparedCert> },
}

impl PbftMessage {
    pub fn step(&self) -> &'static str {
        match self {
            PbftMessage::PrePrepare { .. } => "pre-prepare",
            PbftMessage::Prepare { .. } => "prepare",
            PbftMessage::Commit { .. } => "commit",
            PbftMessage::ViewChange { .. } => "view-change",
            PbftMessage::NewView { .. } => "new-view",
        }
    }

    fn fields(&self) -> (u64, u64, Digest) {
        match self {
            PbftMessage::PrePrepare { view, seq, digest }
            | PbftMessage::Prepare { view, seq, digest }
            | PbftMessage::Commit { view, seq, digest } => (*view, *seq, *digest),
            PbftMessage::ViewChange { new_view, .. } => (*new_view, 0, 0),
            PbftMessage::NewView { view, .. } => (*view, 0, 0),
        }
    }
}

/// Effects produced by the replica state machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send(PbftMessage),
    Prepared { view: u64, seq: u64, digest: Digest },
    CommittedLocal { view: u64, seq: u64, digest: Digest },
    Execute { seq: u64, digest: Digest },
    /// Arm the progress timer; fire it back via `on_timer` unless progress
    /// made the entry stale.
    ArmTimer { seq: u64, view_marker: u64, deadline: Tick },
}

#[derive(Debug, Default, Clone)]
struct LogEntry {
    /// Digest accepted via pre-prepare (or an installed certificate).
    digest: Option<Digest>,
    prepares: BTreeMap<Digest, BTreeSet<ValidatorId>>,
    commits: BTreeMap<Digest, BTreeSet<ValidatorId>>,
    prepared: bool,
    committed_local: bool,
}

#[derive(Debug, Clone)]
pub struct Replica {
    pub id: ValidatorId,
    pub n: u64,
    pub f: u64,
    delta: Tick,
    pub view: u64,
    /// Set while waiting for a new-view after broadcasting a view change.
    vc_target: Option<u64>,
    timeout_exp: u32,
    requests: BTreeMap<u64, Digest>,
    log: BTreeMap<(u64, u64), LogEntry>,
    pub executed: BTreeMap<u64, Digest>,
    next_exec: u64,
    vc_votes: BTreeMap<u64, BTreeSet<ValidatorId>>,
    vc_certs: BTreeMap<u64, Vec<PreparedCert>>,
    new_view_sent: BTreeSet<u64>,
    /// Phase messages for views we have not entered yet, replayed on entry.
    /// Replicas enter a view at slightly different times, so the new
    /// primary's traffic can outrun our new-view; dropping it would stall.
    deferred: BTreeMap<u64, Vec<(ValidatorId, PbftMessage)>>,
}

impl Replica {
    pub fn new(id: ValidatorId, n: u64, f: u64, delta: Tick) -> Self {
        Replica {
            id,
            n,
            f,
            delta,
            view: 0,
            vc_target: None,
            timeout_exp: 0,
            requests: BTreeMap::new(),
            log: BTreeMap::new(),
            executed: BTreeMap::new(),
            next_exec: 0,
            vc_votes: BTreeMap::new(),
            vc_certs: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            deferred: BTreeMap::new(),
        }
    }

    pub fn primary_of(&self, view: u64) -> ValidatorId {
        view % self.n
    }

    pub fn is_primary(&self) -> bool {
        self.vc_target.is_none() && self.primary_of(self.view) == self.id
    }

    pub fn committed(&self, seq: u64) -> Option<Digest> {
        self.executed.get(&seq).copied().or_else(|| {
            self.log
                .iter()
                .find(|((_, s), e)| *s == seq && e.committed_local)
                .and_then(|(_, e)| e.digest)
        })
    }

    fn timeout(&self) -> Tick {
        (4 * self.delta) << self.timeout_exp.min(16)
    }

    /// The marker a live timer must match to fire: the view we are in, or
    /// the one we are trying to reach.
    fn view_marker(&self) -> u64 {
        self.vc_target.unwrap_or(self.view)
    }

    /// Certificates for every prepared-but-unexecuted sequence number,
    /// highest view per sequence.
    fn prepared_certs(&self) -> Vec<PreparedCert> {
        let mut best: BTreeMap<u64, PreparedCert> = BTreeMap::new();
        for ((view, seq), entry) in &self.log {
            if entry.prepared && !self.executed.contains_key(seq) {
                if let Some(digest) = entry.digest {
                    let cert = PreparedCert {
                        seq: *seq,
                        view: *view,
                        digest,
                    };
                    best.entry(*seq)
                        .and_modify(|c| {
                            if view > &c.view {
                                *c = cert;
                            }
                        })
                        .or_insert(cert);
                }
            }
        }
        best.into_values().collect()
    }

    /// A client operation became known. The primary opens the three-phase
    /// exchange; everyone arms a progress timer.
    pub fn on_request(&mut self, seq: u64, digest: Digest, now: Tick) -> Vec<Action> {
        self.requests.insert(seq, digest);
        let mut actions = vec![Action::ArmTimer {
            seq,
            view_marker: self.view_marker(),
            deadline: now + self.timeout(),
        }];
        if self.is_primary() {
            actions.extend(self.propose(seq, digest));
        }
        actions
    }

    fn propose(&mut self, seq: u64, digest: Digest) -> Vec<Action> {
        let view = self.view;
        let entry = self.log.entry((view, seq)).or_default();
        if entry.digest.is_some() {
            return Vec::new();
        }
        entry.digest = Some(digest);
        vec![Action::Send(PbftMessage::PrePrepare { view, seq, digest })]
    }

    /// Whether a phase message for `view` is live for us right now. Messages
    /// for views we already left are dead, and once we have broadcast a view
    /// change we stop acting in the view we are leaving: counting quorums
    /// there after our certificates were already reported forward is exactly
    /// how two views end up committing different digests.
    fn accepts_phase(&self, view: u64) -> bool {
        view == self.view && self.vc_target.is_none()
    }

    fn defer(&mut self, sender: ValidatorId, view: u64, msg: PbftMessage) -> Vec<Action> {
        self.deferred.entry(view).or_default().push((sender, msg));
        Vec::new()
    }

    /// Accept iff we are in the message's view, it came from that view's
    /// primary, and no conflicting digest was accepted for (view, seq).
    /// Messages for views ahead of us are deferred until we get there.
    pub fn on_preprepare(
        &mut self,
        sender: ValidatorId,
        view: u64,
        seq: u64,
        digest: Digest,
    ) -> Vec<Action> {
        if view > self.view {
            return self.defer(sender, view, PbftMessage::PrePrepare { view, seq, digest });
        }
        if !self.accepts_phase(view) || sender != self.primary_of(view) {
            return Vec::new();
        }
        let entry = self.log.entry((view, seq)).or_default();
        match entry.digest {
            Some(d) if d != digest => return Vec::new(), // conflicting: reject, keep evidence
            Some(_) => return Vec::new(),                // duplicate
            None => entry.digest = Some(digest),
        }
        // A backup's prepare counts itself.
        entry.prepares.entry(digest).or_default().insert(self.id);
        let mut actions = vec![Action::Send(PbftMessage::Prepare { view, seq, digest })];
        actions.extend(self.check_progress(view, seq));
        actions
    }

    pub fn on_prepare(
        &mut self,
        sender: ValidatorId,
        view: u64,
        seq: u64,
        digest: Digest,
    ) -> Vec<Action> {
        if view > self.view {
            return self.defer(sender, view, PbftMessage::Prepare { view, seq, digest });
        }
        if !self.accepts_phase(view) {
            return Vec::new();
        }
        let entry = self.log.entry((view, seq)).or_default();
        entry.prepares.entry(digest).or_default().insert(sender);
        self.check_progress(view, seq)
    }

    pub fn on_commit(
        &mut self,
        sender: ValidatorId,
        view: u64,
        seq: u64,
        digest: Digest,
    ) -> Vec<Action> {
        if view > self.view {
            return self.defer(sender, view, PbftMessage::Commit { view, seq, digest });
        }
        if !self.accepts_phase(view) {
            return Vec::new();
        }
        let entry = self.log.entry((view, seq)).or_default();
        entry.commits.entry(digest).or_default().insert(sender);
        self.check_progress(view, seq)
    }

    /// Promote (view, seq) through prepared and committed-local as its
    /// quorums fill in, executing in sequence order.
    fn check_progress(&mut self, view: u64, seq: u64) -> Vec<Action> {
        let f = self.f;
        let mut actions = Vec::new();
        let Some(entry) = self.log.get_mut(&(view, seq)) else {
            return actions;
        };
        let Some(digest) = entry.digest else {
            return actions;
        };
        if !entry.prepared
            && entry.prepares.get(&digest).map_or(0, |s| s.len() as u64) >= 2 * f
        {
            entry.prepared = true;
            actions.push(Action::Prepared { view, seq, digest });
            // Our own commit counts toward the 2f+1.
            entry.commits.entry(digest).or_default().insert(self.id);
            actions.push(Action::Send(PbftMessage::Commit { view, seq, digest }));
        }
        if entry.prepared
            && !entry.committed_local
            && entry.commits.get(&digest).map_or(0, |s| s.len() as u64) >= 2 * f + 1
        {
            entry.committed_local = true;
            actions.push(Action::CommittedLocal { view, seq, digest });
            self.timeout_exp = 0;
            actions.extend(self.try_execute());
        }
        actions
    }

    fn try_execute(&mut self) -> Vec<Action> {
        let mut actions = Vec::new();
        loop {
            let next = self.next_exec;
            let digest = self
                .log
                .iter()
                .find(|((_, s), e)| *s == next && e.committed_local)
                .and_then(|(_, e)| e.digest);
            match digest {
                Some(d) => {
                    self.executed.insert(next, d);
                    actions.push(Action::Execute { seq: next, digest: d });
                    self.next_exec += 1;
                }
                None => break,
            }
        }
        actions
    }

    /// Progress timer fired. Stale timers (wrong view marker, already
    /// executed) are ignored; otherwise start the next view change.
    pub fn on_timer(&mut self, seq: u64, view_marker: u64, now: Tick) -> Vec<Action> {
        if self.executed.contains_key(&seq)
            || self.committed(seq).is_some()
            || view_marker != self.view_marker()
        {
            return Vec::new();
        }
        let target = view_marker + 1;
        self.vc_target = Some(target);
        self.timeout_exp += 1;
        let certs = self.prepared_certs();
        self.vc_votes.entry(target).or_default().insert(self.id);
        merge_certs(self.vc_certs.entry(target).or_default(), &certs);
        let mut actions = vec![
            Action::Send(PbftMessage::ViewChange {
                new_view: target,
                certs,
            }),
            Action::ArmTimer {
                seq,
                view_marker: target,
                deadline: now + self.timeout(),
            },
        ];
        actions.extend(self.maybe_new_view(target, now));
        actions
    }

    pub fn on_view_change(
        &mut self,
        sender: ValidatorId,
        new_view: u64,
        certs: &[PreparedCert],
        now: Tick,
    ) -> Vec<Action> {
        if new_view <= self.view {
            return Vec::new();
        }
        self.vc_votes.entry(new_view).or_default().insert(sender);
        merge_certs(self.vc_certs.entry(new_view).or_default(), certs);
        self.maybe_new_view(new_view, now)
    }

    /// If we are the primary-elect of `view` and hold a 2f+1 view-change
    /// quorum, announce the new view with the carried certificates.
    fn maybe_new_view(&mut self, view: u64, now: Tick) -> Vec<Action> {
        if self.primary_of(view) != self.id
            || self.view >= view
            || self.new_view_sent.contains(&view)
            || self.vc_votes.get(&view).map_or(0, |s| s.len() as u64) < 2 * self.f + 1
        {
            return Vec::new();
        }
        self.new_view_sent.insert(view);
        let certs = self.vc_certs.get(&view).cloned().unwrap_or_default();
        let mut actions = vec![Action::Send(PbftMessage::NewView { view, certs: certs.clone() })];
        actions.extend(self.enter_view(view, &certs, now));
        actions
    }

    pub fn on_new_view(
        &mut self,
        sender: ValidatorId,
        view: u64,
        certs: &[PreparedCert],
        now: Tick,
    ) -> Vec<Action> {
        if view <= self.view || sender != self.primary_of(view) {
            return Vec::new();
        }
        self.enter_view(view, certs, now)
    }

    /// Install the new view: carried certificates are re-accepted at their
    /// sequence numbers (the new-view message stands in for the primary's
    /// pre-prepare), deferred messages that were waiting for this view are
    /// replayed, the primary re-proposes certless pending requests, and
    /// timers re-arm for everything still unexecuted.
    fn enter_view(&mut self, view: u64, certs: &[PreparedCert], now: Tick) -> Vec<Action> {
        self.view = view;
        self.vc_target = None;
        let primary = self.primary_of(view) == self.id;
        let mut actions = Vec::new();
        let mut covered = BTreeSet::new();
        for cert in certs {
            covered.insert(cert.seq);
            if self.executed.contains_key(&cert.seq) {
                continue;
            }
            let entry = self.log.entry((view, cert.seq)).or_default();
            if entry.digest.is_none() {
                entry.digest = Some(cert.digest);
            }
            let digest = entry.digest.expect("just set");
            if !primary {
                entry.prepares.entry(digest).or_default().insert(self.id);
                actions.push(Action::Send(PbftMessage::Prepare {
                    view,
                    seq: cert.seq,
                    digest,
                }));
            }
            actions.extend(self.check_progress(view, cert.seq));
        }
        // Views we jumped over can never be entered; their mail is dead.
        let live = self.deferred.split_off(&view);
        self.deferred = live;
        for (sender, msg) in self.deferred.remove(&view).unwrap_or_default() {
            actions.extend(match msg {
                PbftMessage::PrePrepare { view, seq, digest } => {
                    self.on_preprepare(sender, view, seq, digest)
                }
                PbftMessage::Prepare { view, seq, digest } => {
                    self.on_prepare(sender, view, seq, digest)
                }
                PbftMessage::Commit { view, seq, digest } => {
                    self.on_commit(sender, view, seq, digest)
                }
                _ => Vec::new(),
            });
        }
        let pending: Vec<(u64, Digest)> = self
            .requests
            .iter()
            .filter(|(seq, _)| !self.executed.contains_key(seq) && !covered.contains(seq))
            .map(|(s, d)| (*s, *d))
            .collect();
        if primary {
            for (seq, digest) in &pending {
                actions.extend(self.propose(*seq, *digest));
            }
        }
        for (seq, _) in self
            .requests
            .clone()
            .iter()
            .filter(|(seq, _)| !self.executed.contains_key(*seq))
        {
            actions.push(Action::ArmTimer {
                seq: *seq,
                view_marker: view,
                deadline: now + self.timeout(),
            });
        }
        actions
    }
}

/// Keep the highest-view certificate per sequence number.
fn merge_certs(into: &mut Vec<PreparedCert>, from: &[PreparedCert]) {
    for cert in from {
        match into.iter_mut().find(|c| c.seq == cert.seq) {
            Some(existing) => {
                if cert.view > existing.view {
                    *existing = *cert;
                }
            }
            None => into.push(*cert),
        }
    }
    into.sort_by_key(|c| c.seq);
}

/// Digest of client operation `seq`.
pub fn request_digest(seq: u64) -> Digest {
    let mut bytes = Vec::with_capacity(16);
    bytes.extend_from_slice(b"request-");
    bytes.extend_from_slice(&seq.to_le_bytes());
    fnv1a(&bytes)
}

/// Alternate digest an equivocating primary feeds to part of the network.
pub fn equivocation_digest(seq: u64) -> Digest {
    let mut bytes = Vec::with_capacity(16);
    bytes.extend_from_slice(b"equivoc-");
    bytes.extend_from_slice(&seq.to_le_bytes());
    fnv1a(&bytes)
}

/// Simulator adapter: replicas under the shared event loop, with crash
/// schedules, optional primary equivocation, and optional randomized
/// delivery timing inside the synchrony bound.
pub struct PbftEngine {
    pub replicas: Vec<Replica>,
    timers: Vec<(ValidatorId, u64, u64)>,
    envelope_counter: u64,
}

impl PbftEngine {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let n = scenario.n;
        let f = (n.saturating_sub(1)) / 3;
        if n != 3 * f + 1 || f == 0 {
            return Err(SimError::Config(format!(
                "n: the three-phase engine needs n = 3f + 1 with f >= 1, got {n}"
            )));
        }
        quorum_intersection(n, f)?;
        let replicas = (0..n)
            .map(|id| Replica::new(id, n, f, scenario.network.delta))
            .collect();
        Ok(PbftEngine {
            replicas,
            timers: Vec::new(),
            envelope_counter: 0,
        })
    }

    fn crashed(&self, scenario: &Scenario, id: ValidatorId, now: Tick) -> bool {
        scenario
            .pbft_crash
            .get(&id)
            .is_some_and(|&at| now >= at)
    }

    /// Randomized (but seeded) per-recipient delivery ticks inside the
    /// bound, used when the scenario hands the adversary delay control.
    fn delays(
        &mut self,
        ctx: &Ctx,
        recipients: &[ValidatorId],
    ) -> Option<BTreeMap<ValidatorId, Tick>> {
        if ctx.scenario.adversary != AdversaryKind::DelayControl {
            return None;
        }
        let net = &ctx.scenario.network;
        let earliest = ctx.tick + 1;
        let latest = match deliver_bound(ctx.tick, net.gst, net.delta) {
            TimeBound::At(b) => b,
            TimeBound::Never => ctx.tick + 4 * net.delta,
        };
        let mut rng = SimRng::derive(ctx.scenario.seed, "pbft-delay", self.envelope_counter);
        self.envelope_counter += 1;
        let span = latest - earliest + 1;
        Some(
            recipients
                .iter()
                .map(|&r| (r, earliest + rng.next_below(span)))
                .collect(),
        )
    }

    fn apply(
        &mut self,
        ctx: &mut Ctx,
        id: ValidatorId,
        actions: Vec<Action>,
    ) -> Result<(), SimError> {
        for action in actions {
            match action {
                Action::Send(msg) => {
                    let (view, seq, digest) = msg.fields();
                    ctx.emit(TraceRecord::Pbft {
                        tick: ctx.tick,
                        actor: id,
                        step: msg.step(),
                        view,
                        seq,
                        digest,
                    });
                    let recipients: Vec<ValidatorId> = (0..ctx.scenario.n).filter(|&v| v != id).collect();
                    let delays = self.delays(ctx, &recipients);
                    ctx.send(id, &recipients, Message::Pbft(msg), delays.as_ref())?;
                }
                Action::Prepared { view, seq, digest } => {
                    ctx.emit(TraceRecord::Pbft {
                        tick: ctx.tick,
                        actor: id,
                        step: "prepared",
                        view,
                        seq,
                        digest,
                    });
                }
                Action::CommittedLocal { view, seq, digest } => {
                    ctx.emit(TraceRecord::Pbft {
                        tick: ctx.tick,
                        actor: id,
                        step: "committed-local",
                        view,
                        seq,
                        digest,
                    });
                }
                Action::Execute { seq, digest } => {
                    ctx.emit(TraceRecord::Pbft {
                        tick: ctx.tick,
                        actor: id,
                        step: "reply",
                        view: self.replicas[id as usize].view,
                        seq,
                        digest,
                    });
                }
                Action::ArmTimer {
                    seq,
                    view_marker,
                    deadline,
                } => {
                    let payload = self.timers.len() as u64;
                    self.timers.push((id, seq, view_marker));
                    ctx.schedule_wake(deadline, payload)?;
                }
            }
        }
        Ok(())
    }

    /// The equivocation split: the Byzantine primary feeds the true digest
    /// to one part of the network and an alternate to the rest.
    fn equivocate(
        &mut self,
        ctx: &mut Ctx,
        id: ValidatorId,
        seq: u64,
    ) -> Result<(), SimError> {
        let view = self.replicas[id as usize].view;
        let d1 = request_digest(seq);
        let d2 = equivocation_digest(seq);
        let mut others: Vec<ValidatorId> = (0..ctx.scenario.n).filter(|&v| v != id).collect();
        let mut rng = SimRng::derive(ctx.scenario.seed, "pbft-equiv", seq);
        rng.shuffle(&mut others);
        let half = others.len() / 2;
        for (digest, group) in [(d1, &others[..half]), (d2, &others[half..])] {
            if group.is_empty() {
                continue;
            }
            let msg = PbftMessage::PrePrepare { view, seq, digest };
            ctx.emit(TraceRecord::Pbft {
                tick: ctx.tick,
                actor: id,
                step: "pre-prepare",
                view,
                seq,
                digest,
            });
            let delays = self.delays(ctx, group);
            ctx.send(id, group, Message::Pbft(msg), delays.as_ref())?;
        }
        Ok(())
    }
}

impl Engine for PbftEngine {
    fn on_boundary(&mut self, ctx: &mut Ctx, slot: u64) -> Result<(), SimError> {
        if slot >= ctx.scenario.pbft_requests {
            return Ok(());
        }
        let seq = slot;
        let digest = request_digest(seq);
        for id in 0..ctx.scenario.n {
            if self.crashed(ctx.scenario, id, ctx.tick) {
                continue;
            }
            if ctx.scenario.pbft_equivocate
                && ctx.scenario.is_adversary(id)
                && self.replicas[id as usize].is_primary()
            {
                // Register the request and timer, then split the digests.
                let actions = self.replicas[id as usize].on_request(seq, digest, ctx.tick);
                let kept: Vec<Action> = actions
                    .into_iter()
                    .filter(|a| !matches!(a, Action::Send(_)))
                    .collect();
                self.apply(ctx, id, kept)?;
                self.equivocate(ctx, id, seq)?;
            } else {
                let actions = self.replicas[id as usize].on_request(seq, digest, ctx.tick);
                self.apply(ctx, id, actions)?;
            }
        }
        Ok(())
    }

    fn on_deliver(
        &mut self,
        ctx: &mut Ctx,
        recipient: ValidatorId,
        sender: ValidatorId,
        msg: &Message,
    ) -> Result<(), SimError> {
        let Message::Pbft(msg) = msg else {
            return Ok(());
        };
        if self.crashed(ctx.scenario, recipient, ctx.tick) {
            return Ok(());
        }
        let r = &mut self.replicas[recipient as usize];
        let actions = match msg {
            PbftMessage::PrePrepare { view, seq, digest } => {
                r.on_preprepare(sender, *view, *seq, *digest)
            }
            PbftMessage::Prepare { view, seq, digest } => {
                r.on_prepare(sender, *view, *seq, *digest)
            }
            PbftMessage::Commit { view, seq, digest } => r.on_commit(sender, *view, *seq, *digest),
            PbftMessage::ViewChange { new_view, certs } => {
                r.on_view_change(sender, *new_view, certs, ctx.tick)
            }
            PbftMessage::NewView { view, certs } => r.on_new_view(sender, *view, certs, ctx.tick),
        };
        self.apply(ctx, recipient, actions)
    }

    fn on_wake(&mut self, ctx: &mut Ctx, payload: u64) -> Result<(), SimError> {
        let (id, seq, marker) = self.timers[payload as usize];
        if self.crashed(ctx.scenario, id, ctx.tick) {
            return Ok(());
        }
        let actions = self.replicas[id as usize].on_timer(seq, marker, ctx.tick);
        self.apply(ctx, id, actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_intersection_examples() {
        assert_eq!(quorum_intersection(4, 1).unwrap(), 2);
        assert_eq!(quorum_intersection(7, 2).unwrap(), 3);
        assert!(matches!(
            quorum_intersection(3, 1),
            Err(SimError::QuorumTooSmall { .. })
        ));
    }

    /// Synchronous four-replica harness: drains actions round by round,
    /// delivering every Send to every other replica.
    struct Net {
        replicas: Vec<Replica>,
        inflight: Vec<(ValidatorId, PbftMessage)>,
        timers: Vec<(ValidatorId, u64, u64, Tick)>,
        now: Tick,
    }

    impl Net {
        fn new(n: u64) -> Self {
            let f = (n - 1) / 3;
            Net {
                replicas: (0..n).map(|i| Replica::new(i, n, f, 1)).collect(),
                inflight: Vec::new(),
                timers: Vec::new(),
                now: 0,
            }
        }

        fn absorb(&mut self, from: ValidatorId, actions: Vec<Action>) {
            for a in actions {
                match a {
                    Action::Send(m) => self.inflight.push((from, m)),
                    Action::ArmTimer {
                        seq,
                        view_marker,
                        deadline,
                    } => self.timers.push((from, seq, view_marker, deadline)),
                    _ => {}
                }
            }
        }

        fn step(&mut self, skip: &BTreeSet<ValidatorId>) {
            let batch = std::mem::take(&mut self.inflight);
            self.now += 1;
            for (from, msg) in batch {
                for id in 0..self.replicas.len() as u64 {
                    if id == from || skip.contains(&id) {
                        continue;
                    }
                    let r = &mut self.replicas[id as usize];
                    let actions = match &msg {
                        PbftMessage::PrePrepare { view, seq, digest } => {
                            r.on_preprepare(from, *view, *seq, *digest)
                        }
                        PbftMessage::Prepare { view, seq, digest } => {
                            r.on_prepare(from, *view, *seq, *digest)
                        }
                        PbftMessage::Commit { view, seq, digest } => {
                            r.on_commit(from, *view, *seq, *digest)
                        }
                        PbftMessage::ViewChange { new_view, certs } => {
                            let certs = certs.clone();
                            r.on_view_change(from, *new_view, &certs, self.now)
                        }
                        PbftMessage::NewView { view, certs } => {
                            let certs = certs.clone();
                            r.on_new_view(from, *view, &certs, self.now)
                        }
                    };
                    self.absorb(id, actions);
                }
            }
        }

        fn fire_due_timers(&mut self, skip: &BTreeSet<ValidatorId>) {
            let due: Vec<(ValidatorId, u64, u64, Tick)> = self
                .timers
                .drain(..)
                .collect();
            for (id, seq, marker, _deadline) in due {
                if skip.contains(&id) {
                    continue;
                }
                let actions = self.replicas[id as usize].on_timer(seq, marker, self.now);
                self.absorb(id, actions);
            }
        }
    }

    #[test]
    fn happy_path_commits_in_three_exchanges() {
        let mut net = Net::new(4);
        let d = request_digest(0);
        for id in 0..4 {
            let actions = net.replicas[id as usize].on_request(0, d, 0);
            net.absorb(id, actions);
        }
        let none = BTreeSet::new();
        net.step(&none); // pre-prepare out
        net.step(&none); // prepares out
        net.step(&none); // commits out
        for r in &net.replicas {
            assert_eq!(r.executed.get(&0), Some(&d));
        }
    }

    #[test]
    fn two_prepares_needed_before_commit() {
        let mut r = Replica::new(1, 4, 1, 1);
        let d = 0xabc;
        // Accepting the pre-prepare logs the backup's own prepare: one of
        // the 2f, so not yet prepared.
        let a = r.on_preprepare(0, 0, 0, d);
        assert!(matches!(a[0], Action::Send(PbftMessage::Prepare { .. })));
        assert!(!r.log[&(0, 0)].prepared);
        // A second distinct prepare reaches 2f = 2.
        let a = r.on_prepare(2, 0, 0, d);
        assert!(a.contains(&Action::Prepared {
            view: 0,
            seq: 0,
            digest: d
        }));
        // The primary counts prepares from backups only: two externals.
        let mut p = Replica::new(0, 4, 1, 1);
        p.on_request(0, d, 0);
        assert!(p.on_prepare(1, 0, 0, d).is_empty());
        let a = p.on_prepare(2, 0, 0, d);
        assert!(a.contains(&Action::Prepared {
            view: 0,
            seq: 0,
            digest: d
        }));
    }

    #[test]
    fn mismatched_digest_prepares_do_not_count() {
        let mut r = Replica::new(1, 4, 1, 1);
        r.on_preprepare(0, 0, 0, 0xaaa);
        r.on_prepare(2, 0, 0, 0xbbb);
        let a = r.on_prepare(3, 0, 0, 0xbbb);
        assert!(a.is_empty());
    }

    #[test]
    fn conflicting_preprepare_rejected() {
        let mut r = Replica::new(1, 4, 1, 1);
        assert!(!r.on_preprepare(0, 0, 0, 0xaaa).is_empty());
        assert!(r.on_preprepare(0, 0, 0, 0xbbb).is_empty());
        // The originally accepted digest is retained.
        assert_eq!(r.log[&(0, 0)].digest, Some(0xaaa));
    }

    #[test]
    fn wrong_view_preprepare_rejected() {
        let mut r = Replica::new(1, 4, 1, 1);
        assert!(r.on_preprepare(0, 3, 0, 0xaaa).is_empty());
    }

    #[test]
    fn commits_buffer_until_prepared() {
        let mut r = Replica::new(1, 4, 1, 1);
        let d = 0xabc;
        // Commits arrive before the replica is prepared; they are retained.
        r.on_commit(2, 0, 0, d);
        r.on_commit(3, 0, 0, d);
        r.on_preprepare(0, 0, 0, d);
        let a = r.on_prepare(2, 0, 0, d);
        // prepared adds our own commit: 2 buffered + own = 3 = 2f+1.
        assert!(a.contains(&Action::CommittedLocal {
            view: 0,
            seq: 0,
            digest: d
        }));
        assert!(a.contains(&Action::Execute { seq: 0, digest: d }));
    }

    #[test]
    fn execution_respects_sequence_order() {
        let mut r = Replica::new(1, 4, 1, 1);
        let d0 = request_digest(0);
        let d1 = request_digest(1);
        // seq 1 becomes committable first.
        r.on_preprepare(0, 0, 1, d1);
        r.on_prepare(2, 0, 1, d1);
        r.on_commit(2, 0, 1, d1);
        let a = r.on_commit(3, 0, 1, d1);
        assert!(a.contains(&Action::CommittedLocal {
            view: 0,
            seq: 1,
            digest: d1
        }));
        // Not executed yet: seq 0 is still open.
        assert!(!a.iter().any(|x| matches!(x, Action::Execute { .. })));
        // Now seq 0 commits; both execute, in order.
        r.on_preprepare(0, 0, 0, d0);
        r.on_prepare(2, 0, 0, d0);
        r.on_commit(2, 0, 0, d0);
        let a = r.on_commit(3, 0, 0, d0);
        let execs: Vec<u64> = a
            .iter()
            .filter_map(|x| match x {
                Action::Execute { seq, .. } => Some(*seq),
                _ => None,
            })
            .collect();
        assert_eq!(execs, vec![0, 1]);
    }

    #[test]
    fn silent_primary_triggers_rotation_and_recovery() {
        let mut net = Net::new(4);
        let crashed: BTreeSet<ValidatorId> = BTreeSet::from([0]);
        let d = request_digest(0);
        for id in 1..4 {
            let actions = net.replicas[id as usize].on_request(0, d, 0);
            net.absorb(id, actions);
        }
        // No pre-prepare ever arrives; timers fire.
        net.fire_due_timers(&crashed);
        // View-change quorum assembles at the new primary, then the normal
        // three-phase exchange replays under view 1.
        for _ in 0..6 {
            net.step(&crashed);
        }
        for id in 1..4u64 {
            let r = &net.replicas[id as usize];
            assert_eq!(r.view, 1, "replica {id} stuck in view {}", r.view);
            assert_eq!(r.executed.get(&0), Some(&d));
        }
    }

    #[test]
    fn prepared_certificate_survives_view_change() {
        let mut net = Net::new(4);
        let d = request_digest(0);
        for id in 0..4 {
            let actions = net.replicas[id as usize].on_request(0, d, 0);
            net.absorb(id, actions);
        }
        let none = BTreeSet::new();
        net.step(&none); // pre-prepare delivered, prepares queued
        net.step(&none); // prepares delivered: everyone prepared, commits queued
        // Primary 0 goes silent before commits land anywhere; drop them.
        net.inflight.retain(|(_, m)| !matches!(m, PbftMessage::Commit { .. }));
        let crashed: BTreeSet<ValidatorId> = BTreeSet::from([0]);
        net.fire_due_timers(&crashed);
        for _ in 0..6 {
            net.step(&crashed);
        }
        // The prepared digest re-committed under the new view: nothing lost.
        for id in 1..4u64 {
            assert_eq!(net.replicas[id as usize].executed.get(&0), Some(&d));
        }
    }

    #[test]
    fn rotation_wraps_modulo_n() {
        let r = Replica::new(2, 4, 1, 1);
        assert_eq!(r.primary_of(0), 0);
        assert_eq!(r.primary_of(3), 3);
        assert_eq!(r.primary_of(4), 0);
        assert_eq!(r.primary_of(6), 2);
    }
}
