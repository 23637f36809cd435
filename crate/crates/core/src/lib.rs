//! Federated multi-objective GRPO on synthetic token tasks.
//!
//! Everything in this crate is pure computation over owned buffers and runs
//! without `std`: a tiny autoregressive softmax policy with manual backprop,
//! group-relative advantages over multi-component rewards, per-client
//! hypergradient adaptation of objective weights, and the two-stage
//! (intra-cluster softmax, cross-cluster sample-size) server aggregation.
//!
//! IO, scheduling and the command line live in the `fedmo-lab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod client;
pub mod envs;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod numeric;
pub mod pareto;
pub mod policy;
pub mod server;
pub mod weights;

pub use client::{run_local_round, ClientConfig, ClientUpdate};
pub use envs::{Completion, RewardComponent, TaskSpec, Token};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalFragment};
pub use grpo::{group_advantages, grpo_step, GrpoConfig, RolloutGroup, StepReport};
pub use numeric::{cosine_lr, project_to_simplex, softmax, RngStream};
pub use policy::{HiddenGradient, PolicyParams, PolicyShape};
pub use server::{
    cluster_clients, cross_cluster_aggregate, intra_cluster_aggregate, make_broadcast, Broadcast,
    ClusterAggregate, ClusterBy,
};
pub use weights::{hypergrad_signal, reset_for_round, update_weights, HypergradState, ObjectiveWeights};
