//! Representation learning combined with Neyman-orthogonal learners for
//! conditional average potential outcomes (CAPOs) and treatment effects (CATE).
//!
//! The pipeline has three stages:
//!
//! 0. [`stage0`]: fit a representation network (TARNet, BNN, CFR, RCFR,
//!    CFR-ISW, BWCFR; dense or invertible) with an optional balancing penalty
//!    from [`balance`].
//! 1. [`nuisance`]: estimate outcome regressions and the propensity score.
//! 2. [`ortho`]: fit a target network on `X`, `Φ(X)` or the head outputs with
//!    a DR, R or IVW loss.
//!
//! [`data`] provides synthetic generators whose ground truth makes estimation
//! error measurable ([`eval`]); [`harness`] runs whole experiment grids.

pub mod balance;
pub mod data;
pub mod digest;
pub mod error;
pub mod eval;
pub mod harness;
pub mod nn;
pub mod nuisance;
pub mod ortho;
pub mod rng;
pub mod stage0;

pub use error::{Error, Result};
