//! Simulated time and the partial-synchrony delivery bound.
//!
//! Time advances in integer ticks. The network delay bound delta is
//! normalized so that one tick is the finest unit of interest; a slot spans
//! `phases_per_slot` ticks and phase k of slot t fires at tick
//! `phases_per_slot * t + k`.

use std::fmt;

pub type Tick = u64;

/// A point in simulated time, plus the slot geometry needed to read it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SimTime {
    pub tick: Tick,
}

impl SimTime {
    pub fn new(tick: Tick) -> Self {
        SimTime { tick }
    }

    pub fn slot(&self, phases_per_slot: u64) -> u64 {
        self.tick / phases_per_slot
    }

    pub fn phase(&self, phases_per_slot: u64) -> u64 {
        self.tick % phases_per_slot
    }
}

/// Tick of phase `offset` in `slot`.
pub fn phase_tick(slot: u64, offset: u64, phases_per_slot: u64) -> Tick {
    phases_per_slot * slot + offset
}

/// A possibly-infinite instant. GST = `Never` models a network that stays
/// asynchronous forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBound {
    At(Tick),
    Never,
}

impl TimeBound {
    pub fn is_finite(&self) -> bool {
        matches!(self, TimeBound::At(_))
    }

    pub fn at_or_before(&self, tick: Tick) -> bool {
        match self {
            TimeBound::At(t) => *t <= tick,
            TimeBound::Never => false,
        }
    }

    /// Whether an event at `tick` respects this deadline. `Never` is the
    /// absence of a deadline, so it permits everything.
    pub fn permits(&self, tick: Tick) -> bool {
        match self {
            TimeBound::At(t) => tick <= *t,
            TimeBound::Never => true,
        }
    }
}

impl fmt::Display for TimeBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeBound::At(t) => write!(f, "{t}"),
            TimeBound::Never => write!(f, "inf"),
        }
    }
}

/// Partial-synchrony network parameters.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    /// Delay bound after the network turns synchronous, in ticks.
    pub delta: Tick,
    /// Global stabilization time. Before it the adversary picks delays.
    pub gst: TimeBound,
    /// Global awake time. No honest validator sleeps at or after it.
    pub gat: TimeBound,
}

impl NetworkConfig {
    pub fn synchronous(delta: Tick) -> Self {
        NetworkConfig {
            delta,
            gst: TimeBound::At(0),
            gat: TimeBound::At(0),
        }
    }
}

/// Latest tick at which a message sent at `sent_at` may arrive:
/// `delta + max(sent_at, gst)`. Infinite GST means no bound at all.
pub fn deliver_bound(sent_at: Tick, gst: TimeBound, delta: Tick) -> TimeBound {
    match gst {
        TimeBound::At(g) => TimeBound::At(delta + sent_at.max(g)),
        TimeBound::Never => TimeBound::Never,
    }
}
