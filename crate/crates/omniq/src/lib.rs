//! Exact sampling from the equilibrium of multi-server FCFS queues.
//!
//! Dominated coupling from the past, driven by a stationary random-assignment
//! queue simulated backwards in time, yields draws from the exact equilibrium
//! distribution of the workload vector. A single dominating realization also
//! supports omnithermal sampling: simultaneous perfect draws for a whole range
//! of server counts and work rates.

pub mod analytics;
pub mod cli;
pub mod dominating;
pub mod rng;
pub mod sampler;
pub mod sandwich;
pub mod validate;
pub mod workload;
