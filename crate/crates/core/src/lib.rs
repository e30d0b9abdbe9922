//! Planning toolkit for finite discounted MDPs built around
//! doubly-asynchronous value iteration (DAVI). A DAVI back-up maximizes over
//! a sampled subset of actions plus a best-so-far action per state; plain
//! and asynchronous value iteration are included as baselines.

pub mod analysis;
pub mod bellman;
pub mod fixtures;
pub mod generators;
pub mod harness;
pub mod mdp;
pub mod samplers;
pub mod solvers;

pub use mdp::{Mdp, MdpError, Policy, ValueFunction};
