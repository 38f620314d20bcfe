//! Watermark and controller co-design for replay-attack detection.
//!
//! A linear plant is driven by an output-feedback controller plus an
//! independent Gaussian watermark. A Kalman-filter residue generator and a
//! windowed χ² detector flag replayed measurements. The crate provides
//!
//! * [`sdp`]: a small log-barrier semidefinite-program solver,
//! * [`h2syn`]: H2-optimal dynamic controller synthesis via LMIs,
//! * [`estimator`]: steady-state Kalman design (Riccati and LMI routes),
//! * [`detector`]: the χ² detector and closed-form detection predictions,
//! * [`sim`]: seeded Monte-Carlo simulation of replay attacks,
//! * [`watermark_opt`]: watermark optimization and controller co-design,
//! * [`cli`]: the `replay-guard` command-line front end.

pub mod cli;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod h2syn;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sdp;
pub mod sim;
pub mod watermark_opt;

pub use error::{Error, Result};
