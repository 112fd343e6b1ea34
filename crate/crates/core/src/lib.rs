//! Simulation and solver library for energy-harvesting fog networks that slice
//! their computational resources per service type.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: shared domain types and the per-slot constraint checker.
//! - [`queueing`]: M/M/1 response times and the closed-form local offload share.
//! - [`env`]: Markov harvest/arrival chains, battery dynamics, transition and
//!   observation functions, and a seeded sampler.
//! - [`topology`]: node placement (CSV or synthetic), neighbour sets, RTTs.
//! - [`game`]: the per-slot slicing game (offload LP, energy split, welfare
//!   solver, core check) together with brute-force oracles.
//! - [`belief`]: belief-state agents (state filter, Dirichlet type beliefs,
//!   finite-depth Bellman lookahead).
//! - [`engine`]: configuration, the discrete-time loop, sweeps and reports.

pub mod belief;
pub mod engine;
pub mod env;
pub mod game;
mod lp;
pub mod model;
pub mod queueing;
pub mod topology;

pub use model::{
    Activation, EnergyDistribution, FogNodeSpec, Network, OffloadMatrix, ServiceTypeSpec, SlicingAgreement, SlotState,
    Violation,
};
