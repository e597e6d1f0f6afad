//! Bayesian inversion of mixed linear/nonlinear models `u = A_m g + noise`.
//!
//! The regularization constant `C` of the Tikhonov functional
//! `|A_m g - u|^2 + C |R g|^2` is treated as a random variable alongside the
//! nonlinear parameter `m`. After maximizing the marginal likelihood over the
//! noise level, the joint density of `(m, C)` has the closed form implemented
//! in [`posterior`], which is sampled by the adaptive Metropolis-Hastings
//! samplers of [`sampler`]. The deterministic parameter-choice rules (GCV,
//! discrepancy principle, maximum likelihood) live in [`regselect`].
//!
//! Data-parallel work (batched density evaluations, per-grid-point sweeps,
//! multi-start searches) goes through [`exec::Execution`]; with the
//! `parallel` feature disabled every path runs sequentially.

pub mod error;
pub mod exec;
pub mod linops;
pub mod models;
pub mod posterior;
pub mod regselect;
pub mod sampler;

pub use error::{Error, Result};
pub use exec::Execution;
