//! Robust dual control of unknown discrete-time LTI systems.
//!
//! The crate designs, in one semidefinite program, an exploration policy
//! `u = K_e x + e`, `e ~ N(0, Σ)` together with a robust gain-scheduled
//! feedback `u = K x + K_s w_s` whose scheduling signal is the shift of the
//! least-squares estimate caused by the exploration data. After exploration
//! the scheduled law collapses to the explicit state feedback `K_new`.
//!
//! Module map:
//! - [`matrix_kit`]: dense symmetric algebra, Schur complements, sampling.
//! - [`plant`]: ground-truth simulator and performance channel.
//! - [`estimate`]: least squares, information matrix, credibility region.
//! - [`uncertainty`]: ellipsoidal bounds on the scheduling and uncertainty blocks.
//! - [`sdp`]: conic program representation and the solver adapter.
//! - [`lmi`]: every LMI used by synthesis and analysis.
//! - [`synthesis`]: robust LQR seed gain, the dual SDP, line search, `K_new`.
//! - [`validate`]: independent certification and Monte Carlo checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate openblas_src;

pub mod error;
pub mod estimate;
pub mod lmi;
pub mod mat_json;
pub mod matrix_kit;
pub mod par;
pub mod plant;
pub mod runner;
pub mod scenario;
pub mod sdp;
pub mod seeds;
pub mod synthesis;
pub mod uncertainty;
pub mod validate;

pub use error::{Error, Result};
