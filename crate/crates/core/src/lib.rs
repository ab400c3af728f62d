//! Decentralized composite optimization over a simulated network of agents.
//!
//! The crate solves problems of the form `min_x Σ_i f_i(x) + g_i(x)` where
//! agent `i` privately holds `(f_i, g_i)` and talks only to its graph
//! neighbours. The main algorithm is a symmetric ADMM with two communication
//! rounds per iteration ([`agent`]); it is accompanied by
//!
//! * a centralized matrix-form replica of the same recursion together with the
//!   spectral and contraction diagnostics used to check its convergence
//!   theory ([`oracle`]),
//! * PG-EXTRA and NIDS baselines sharing the same network and communication
//!   accounting ([`baselines`]),
//! * the Lasso and hinge-loss SVM problem families, LIBSVM ingestion and
//!   centralized reference solvers ([`problems`]),
//! * experiment configuration, tuning sweeps and CSV output ([`experiment`]).
//!
//! Every capability has a runnable program under `examples/`.

pub mod agent;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod problems;
pub mod prox;
pub mod rng;
pub mod sparse;
pub mod stacked;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
