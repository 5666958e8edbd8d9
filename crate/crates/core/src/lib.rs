//! Derivative-free optimizers built around consensus-based optimization (CBO),
//! consensus hopping (CH) and Gaussian natural evolution strategies (NES),
//! together with a query-budgeted closed-box adversarial attack harness.
//!
//! The crate is organised bottom-up:
//!
//! - [`ensemble`]: particle ensembles, consensus points, the α scheduler,
//!   mini-batching, anisotropic noise and the CBO loop.
//! - [`estimators`]: antithetic sampling and the shared CH/NES loop.
//! - [`spaces`]: latent attack spaces and their application maps.
//! - [`constraints`]: norm-ball projections, reparameterizations and losses.
//! - [`noise`]: structured noise models and (1+λ)-type evolution strategies.
//! - [`broker`]: the query-counted classifier boundary.
//! - [`harness`]: campaigns, metrics, PCA trajectories and result export.
//!
//! Every optimizer minimizes. An attack is successful as soon as a queried
//! input attains a negative (shifted) loss value.

pub mod broker;
pub mod constraints;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod harness;
pub mod noise;
pub mod numerics;
pub mod objective;
pub mod record;
pub mod rng;
pub mod spaces;

pub use error::{Error, Result};
pub use exec::Execution;
pub use objective::{Domain, FunctionObjective, Objective};
pub use record::{Budgets, RunRecord};
