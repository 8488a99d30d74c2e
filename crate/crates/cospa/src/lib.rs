//! Offline reinforcement learning under structured hidden-parameter drift:
//! scripted-noise data collection, trajectory-contrastive task inference,
//! next-latent prediction, and latent-conditioned TD3+BC, on a small
//! reverse-mode autodiff core. Everything is deterministic given a master
//! seed and single-threaded by design.

pub mod autodiff;
pub mod behavior;
pub mod checkpoint;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod offline_rl;
pub mod predictor;
pub mod repr_cpc;
pub mod rl_core;
pub mod rng;

pub use error::{CospaError, Result};
