//! Deterministic discrete-event loop and the message-delivery model.
//!
//! Events execute in ascending key order `(tick, class, actor, seq)`:
//! slot boundaries first, then deliveries (ordered by sender), then wakes
//! (adversary releases, protocol timers), then per-validator phase handlers.
//! `seq` is a global insertion counter, so the whole order is a pure
//! function of (config, seed) and reruns replay byte-identically.
//!
//! Delivery times obey the partial-synchrony contract: an envelope sent at
//! time `s` reaches every addressed recipient by `delta + max(s, GST)`.
//! Senders choose per-recipient delivery ticks inside that bound (the
//! adversary's lever); the honest default is `s + delta` to everyone.
//! Withholding a message is modeled as not sending it yet, never as a
//! delivery beyond the bound.

use crate::block_tree::{Block, VoteMessage};
use crate::pbft::PbftMessage;
use crate::scenario::Scenario;
use crate::stake::ValidatorId;
use crate::time::{deliver_bound, Tick, TimeBound};
use crate::trace::TraceRecord;
use crate::SimError;
use std::collections::BTreeMap;

/// Everything that travels between validators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Block(Block),
    Vote(VoteMessage),
    /// A leader's block together with its view summary, for protocols whose
    /// voters adopt the proposer's view before voting.
    Proposal {
        block: Block,
        view_blocks: Vec<Block>,
        view_votes: Vec<VoteMessage>,
    },
    Pbft(PbftMessage),
}

impl Message {
    pub fn label(&self) -> &'static str {
        match self {
            Message::Block(_) => "block",
            Message::Vote(_) => "vote",
            Message::Proposal { .. } => "proposal",
            Message::Pbft(_) => "pbft",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub id: u64,
    pub sender: ValidatorId,
    pub msg: Message,
    pub sent_at: Tick,
    pub deliver_at: BTreeMap<ValidatorId, Tick>,
}

/// Same-tick execution classes, in order.
const CLASS_BOUNDARY: u8 = 0;
const CLASS_DELIVERY: u8 = 1;
const CLASS_WAKE: u8 = 2;
const CLASS_PHASE: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Boundary { slot: u64 },
    Deliver { envelope: usize, recipient: ValidatorId },
    Wake { payload: u64 },
    Phase { slot: u64, phase: u64, validator: ValidatorId },
}

#[derive(Debug, Default)]
struct EventQueue {
    map: BTreeMap<(Tick, u8, u64, u64), Event>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, tick: Tick, class: u8, actor: u64, event: Event) {
        let key = (tick, class, actor, self.seq);
        self.seq += 1;
        self.map.insert(key, event);
    }

    fn pop(&mut self) -> Option<((Tick, u8, u64, u64), Event)> {
        self.map.pop_first()
    }
}

/// Handler surface a protocol implements against the loop.
pub trait Engine {
    /// Called once before the first event.
    fn init(&mut self, _ctx: &mut Ctx) -> Result<(), SimError> {
        Ok(())
    }
    fn on_boundary(&mut self, _ctx: &mut Ctx, _slot: u64) -> Result<(), SimError> {
        Ok(())
    }
    fn on_phase(
        &mut self,
        _ctx: &mut Ctx,
        _slot: u64,
        _phase: u64,
        _validator: ValidatorId,
    ) -> Result<(), SimError> {
        Ok(())
    }
    fn on_deliver(
        &mut self,
        _ctx: &mut Ctx,
        _recipient: ValidatorId,
        _sender: ValidatorId,
        _msg: &Message,
    ) -> Result<(), SimError> {
        Ok(())
    }
    fn on_wake(&mut self, _ctx: &mut Ctx, _payload: u64) -> Result<(), SimError> {
        Ok(())
    }
}

/// Loop services handed to engine callbacks.
pub struct Ctx<'a> {
    pub scenario: &'a Scenario,
    pub tick: Tick,
    records: &'a mut Vec<TraceRecord>,
    queue: &'a mut EventQueue,
    envelopes: &'a mut Vec<Envelope>,
}

impl<'a> Ctx<'a> {
    pub fn slot(&self) -> u64 {
        self.tick / self.scenario.protocol.phases_per_slot()
    }

    pub fn phase(&self) -> u64 {
        self.tick % self.scenario.protocol.phases_per_slot()
    }

    pub fn emit(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    /// Send `msg` to an explicit recipient set. `delays` gives per-recipient
    /// delivery ticks; recipients it omits get the honest default
    /// `sent + delta`. Every tick is validated against the delivery bound.
    pub fn send(
        &mut self,
        sender: ValidatorId,
        recipients: &[ValidatorId],
        msg: Message,
        delays: Option<&BTreeMap<ValidatorId, Tick>>,
    ) -> Result<u64, SimError> {
        let net = &self.scenario.network;
        let bound = deliver_bound(self.tick, net.gst, net.delta);
        let mut deliver_at = BTreeMap::new();
        for &r in recipients {
            debug_assert!(r != sender, "senders deliver to themselves directly");
            let tick = delays
                .and_then(|d| d.get(&r).copied())
                .unwrap_or(self.tick + net.delta);
            if tick <= self.tick {
                return Err(SimError::DeliveryBeforeSend {
                    recipient: r,
                    deliver_at: tick,
                    sent_at: self.tick,
                });
            }
            if let TimeBound::At(b) = bound {
                if tick > b {
                    return Err(SimError::DeliveryBeyondBound {
                        recipient: r,
                        deliver_at: tick,
                        bound: b,
                    });
                }
            }
            deliver_at.insert(r, tick);
        }
        let id = self.envelopes.len() as u64;
        let env = Envelope {
            id,
            sender,
            msg,
            sent_at: self.tick,
            deliver_at: deliver_at.clone(),
        };
        self.envelopes.push(env);
        for (r, tick) in deliver_at {
            self.queue.push(
                tick,
                CLASS_DELIVERY,
                sender,
                Event::Deliver {
                    envelope: id as usize,
                    recipient: r,
                },
            );
        }
        Ok(id)
    }

    /// Send to every validator except the sender.
    pub fn broadcast(
        &mut self,
        sender: ValidatorId,
        msg: Message,
        delays: Option<&BTreeMap<ValidatorId, Tick>>,
    ) -> Result<u64, SimError> {
        let recipients: Vec<ValidatorId> = self
            .scenario
            .validators
            .iter()
            .map(|v| v.id)
            .filter(|&v| v != sender)
            .collect();
        self.send(sender, &recipients, msg, delays)
    }

    /// Schedule a wake (timer / scripted release) strictly in the future.
    pub fn schedule_wake(&mut self, tick: Tick, payload: u64) -> Result<(), SimError> {
        if tick <= self.tick {
            return Err(SimError::Config(format!(
                "wake scheduled at tick {tick} which is not after the clock at {}",
                self.tick
            )));
        }
        self.queue.push(tick, CLASS_WAKE, payload, Event::Wake { payload });
        Ok(())
    }
}

/// Run a scenario to its configured end and return the full trace.
pub fn run<E: Engine>(scenario: &Scenario, engine: &mut E) -> Result<Vec<TraceRecord>, SimError> {
    let pps = scenario.protocol.phases_per_slot();
    let end_tick = scenario.slots * pps;
    let mut records = Vec::new();
    for (name, value) in scenario.header_params() {
        records.push(TraceRecord::Param { name, value });
    }
    let mut queue = EventQueue::default();
    let mut envelopes: Vec<Envelope> = Vec::new();
    for slot in 0..scenario.slots {
        queue.push(slot * pps, CLASS_BOUNDARY, 0, Event::Boundary { slot });
        for phase in 0..pps {
            for v in &scenario.validators {
                queue.push(
                    slot * pps + phase,
                    CLASS_PHASE,
                    v.id,
                    Event::Phase {
                        slot,
                        phase,
                        validator: v.id,
                    },
                );
            }
        }
    }
    {
        let mut ctx = Ctx {
            scenario,
            tick: 0,
            records: &mut records,
            queue: &mut queue,
            envelopes: &mut envelopes,
        };
        engine.init(&mut ctx)?;
    }
    let mut clock: Tick = 0;
    let mut last_boundary: Option<u64> = None;
    while let Some(((tick, _class, _actor, _seq), event)) = queue.pop() {
        if tick >= end_tick {
            break;
        }
        debug_assert!(tick >= clock, "event queue went backwards");
        clock = tick;
        let env_snapshot = match &event {
            Event::Deliver { envelope, .. } => Some(envelopes[*envelope].clone()),
            _ => None,
        };
        let mut ctx = Ctx {
            scenario,
            tick,
            records: &mut records,
            queue: &mut queue,
            envelopes: &mut envelopes,
        };
        match event {
            Event::Boundary { slot } => {
                ctx.emit(TraceRecord::Slot { tick, slot });
                last_boundary = Some(slot);
                engine.on_boundary(&mut ctx, slot)?;
            }
            Event::Deliver { recipient, .. } => {
                let env = env_snapshot.expect("snapshot taken above");
                // Re-check the partial-synchrony contract on every delivery.
                let bound =
                    deliver_bound(env.sent_at, scenario.network.gst, scenario.network.delta);
                if !bound.permits(tick) {
                    return Err(SimError::DeliveryBeyondBound {
                        recipient,
                        deliver_at: tick,
                        bound: match bound {
                            TimeBound::At(b) => b,
                            TimeBound::Never => u64::MAX,
                        },
                    });
                }
                if scenario.trace_deliveries {
                    ctx.emit(TraceRecord::Deliver {
                        tick,
                        slot: tick / pps,
                        phase: tick % pps,
                        actor: recipient,
                        sender: env.sender,
                        payload: env.msg.label().to_string(),
                    });
                }
                engine.on_deliver(&mut ctx, recipient, env.sender, &env.msg)?;
            }
            Event::Wake { payload } => {
                engine.on_wake(&mut ctx, payload)?;
            }
            Event::Phase {
                slot,
                phase,
                validator,
            } => {
                engine.on_phase(&mut ctx, slot, phase, validator)?;
            }
        }
    }
    if scenario.slots > 0 && last_boundary != Some(scenario.slots - 1) {
        return Err(SimError::QueueStarved {
            tick: clock,
            remaining: scenario.slots - last_boundary.map_or(0, |s| s + 1),
        });
    }
    Ok(records)
}
