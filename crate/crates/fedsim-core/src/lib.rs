//! Core simulation engine for a deterministic federated-learning testbed:
//! a small MLP with an auxiliary head, attack-tolerant local training
//! (noise-injected meta updates plus global knowledge distillation),
//! model-poisoning attacks, and robust server-side aggregation rules.
//!
//! The crate is `no_std` + `alloc`: all floating-point transcendentals go
//! through `libm` so simulation results are bit-identical across platforms,
//! and all randomness flows from explicitly seeded xoshiro256** streams
//! (see [`rng`]). Everything downstream of a `SimConfig` is a pure function
//! of that config.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aggregation;
pub mod attacks;
pub mod data;
pub mod defender;
pub mod error;
pub mod nn;
pub mod orchestrator;
pub mod rng;

pub use error::{Error, Result};
