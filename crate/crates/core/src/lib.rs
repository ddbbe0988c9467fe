//! Additive Schwarz iteration for neural-network approximations of
//! elliptic boundary-value problems.
//!
//! The crate is organised bottom-up:
//!
//! * [`net`] holds the single-hidden-layer sine network with closed-form
//!   Laplacian and parameter gradients of the collocation loss.
//! * [`optimizer`] trains one network against a fixed batch with Adam.
//! * [`problems`] is the catalog of manufactured Poisson problems.
//! * [`partition`] builds overlapping box partitions and samples
//!   collocation sets.
//! * [`schwarz`] runs the one-level and two-level outer iterations.
//! * [`oracle`] is a finite-difference additive Schwarz solver used as a
//!   ground truth for convergence-rate behaviour.
//! * [`experiment`] drives configured runs and writes CSV/JSON reports.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod net;
pub mod oracle;
pub mod optimizer;
pub mod partition;
pub mod problems;
pub mod schwarz;
pub mod seed;

pub use error::{Diagnostic, Error, Result};
