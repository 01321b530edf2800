//! Deterministic discrete-event simulator and protocol library for
//! fast-finality proof-of-stake consensus.
//!
//! The crate models a family of committee- and slot-based protocols over a
//! shared block-tree/vote substrate: an epoch-based finality gadget riding a
//! latest-message fork choice, vote-expiry variants with view merge, a
//! single-slot finality protocol, a three-slot pipeline, and classical
//! three-phase BFT for comparison. A scripted adversary layer reproduces
//! known reorg and balancing attacks, and every run is reproducible from a
//! config and a seed.

pub mod adversary;
pub mod analysis;
pub mod attack_suite;
pub mod block_tree;
pub mod engines;
pub mod error;
pub mod ffg;
pub mod fork_choice;
pub mod rng;
pub mod stake;
pub mod time;

pub mod pbft;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use error::SimError;
