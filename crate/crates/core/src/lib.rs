//! Desk-scale reasoner post-training machinery.
//!
//! A tabular softmax policy stands in for a language model so that every
//! stage can be run and checked exactly: data ingestion and selection,
//! model-aware iterative distillation with checkpoint merging, GRPO with
//! routed rewards, repetition self-repair decoding, and a discrete-event
//! simulator of stale-synchronous RL scheduling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curriculum;
pub mod data;
pub mod grpo;
pub mod harness;
pub mod mars;
pub mod params;
pub mod policy;
pub mod repetition;
pub mod rng;
pub mod sched;
