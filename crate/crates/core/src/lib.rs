//! Post-hoc calibration of automatic-judge scores.
//!
//! Two correctors map biased judge scores on the 1–5 scale onto reference
//! scores: a Bayesian linear model fitted by Hamiltonian Monte Carlo
//! ([`bayes`]) and a neural-ODE score flow integrated with fixed-step RK4
//! ([`flow`]). [`metrics`] scores any corrector on mean recovery, per-item
//! accuracy and distributional shape; [`harness`] runs the head-to-head
//! experiments.

pub mod baselines;
pub mod bayes;
pub mod data;
pub mod error;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};

/// A fitted point corrector from judge score to estimated reference score.
pub trait Corrector {
    fn correct(&self, judge: f64) -> f64;

    fn correct_all(&self, judges: &[f64]) -> Vec<f64> {
        judges.iter().map(|&j| self.correct(j)).collect()
    }
}
