//! Federated-learning simulator with spatially correlated data partitioning.
//!
//! The crate models a population of UEs scattered over a square region that
//! capture data points generated by a homogeneous Poisson point process,
//! which makes neighboring clients hold overlapping, spatially skewed
//! datasets. On top of that world it provides metadata-driven (k-means)
//! client clustering, per-round client selection policies, a from-scratch
//! two-layer MLP with minibatch SGD, a deterministic FedAvg engine, and an
//! experiment runner that compares selection policies on paired worlds.

pub mod cluster;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod fedavg;
pub mod learner;
pub mod rng;
pub mod selection;
pub mod spatial;

pub use error::{Error, Result};
