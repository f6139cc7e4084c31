//! A federated-learning simulation framework in which clients add calibrated
//! Gaussian DP noise to their model updates, split that noise into
//! unit-variance shares, exchange negated (optionally distorted) shares with
//! random peers, and upload perturbed updates so the server-side aggregate
//! noise is reduced or cancelled entirely.
//!
//! The crate also ships closed-form variance calculators for the protocol's
//! guarantees, Monte Carlo harnesses that verify them, and a CLI that runs
//! desk-scale accuracy experiments and writes CSV artifacts.

pub mod analysis;
pub mod config;
pub mod data;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod models;
pub mod numerics;
pub mod protocol;

pub use error::{Error, Result};
