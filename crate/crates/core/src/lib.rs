//! Correlated binary stochastic quantization for private federated learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`quant`]: the one-bit quantizers. `ldpq` is the independent private
//!   quantizer; `corbinq_lead` / `corbinq_follow` are the paired quantizers
//!   that consume a shared random word and produce anti-correlated outputs
//!   with the same marginals.
//! - [`oracle`]: exact enumeration of pair joint distributions plus the
//!   closed-form MSE, covariance, privacy and communication bounds.
//! - [`protocol`]: the per-round client protocol: Diffie-Hellman keys,
//!   random pairing, lead/follow election, encrypted common-randomness
//!   exchange over a logged public channel, and client dropout.
//! - [`baselines`]: additive Gaussian and Laplace noise mechanisms.
//! - [`flsim`]: federated rounds on a toy logistic-regression task.
//! - [`dme`]: Monte-Carlo distributed mean estimation.
//! - [`experiment`]: config parsing and the CSV/JSON emitters used by the CLI.

pub mod baselines;
pub mod dme;
pub mod error;
pub mod experiment;
pub mod flsim;
pub mod oracle;
pub mod protocol;
pub mod quant;
pub mod seed;

pub use error::{CorbinError, Result};
pub use quant::{ClipSpec, CommonRandomness, PrivacyBudget, QuantizedValue, Sign, Threshold};
