//! Log posterior of the single-cell linear model
//! `y ~ Normal(alpha + beta * j, sigma^2)` in the coordinates
//! `(alpha, beta, log sigma)`.

use std::f64::consts::{LN_2, PI};

use super::nuts::LogDensity;
use super::LinearPriors;
use crate::data::Dataset;
use crate::error::{Error, Result};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub(crate) fn normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

pub(crate) fn half_normal_lpdf(x: f64, scale: f64) -> f64 {
    LN_2 - 0.5 * (2.0 * PI).ln() - scale.ln() - 0.5 * (x / scale).powi(2)
}

/// Anchor data bound to priors, usable as a sampler target.
#[derive(Debug, Clone)]
pub struct LinearModel {
    judges: Vec<f64>,
    references: Vec<f64>,
    priors: LinearPriors,
}

impl LinearModel {
    pub fn new(anchors: &Dataset, priors: LinearPriors) -> Result<Self> {
        priors.validate()?;
        if anchors.is_empty() {
            return Err(Error::InvalidInput("posterior needs anchors".into()));
        }
        Ok(Self {
            judges: anchors.judges()?,
            references: anchors.references(),
            priors,
        })
    }

    pub fn log_posterior(&self, theta: &[f64; 3]) -> (f64, [f64; 3]) {
        let [alpha, beta, log_sigma] = *theta;
        let p = &self.priors;
        let sigma = log_sigma.exp();
        let inv_var = 1.0 / (sigma * sigma);
        let n = self.judges.len() as f64;

        let mut ss = 0.0;
        let mut g_alpha = 0.0;
        let mut g_beta = 0.0;
        for (&j, &y) in self.judges.iter().zip(&self.references) {
            let r = y - alpha - beta * j;
            ss += r * r;
            g_alpha += r;
            g_beta += r * j;
        }
        let loglik = -n * (HALF_LN_2PI + log_sigma) - 0.5 * ss * inv_var;
        let value = loglik
            + normal_lpdf(alpha, p.alpha_mean, p.alpha_sd)
            + normal_lpdf(beta, p.beta_mean, p.beta_sd)
            + half_normal_lpdf(sigma, p.sigma_scale)
            + log_sigma;
        let grad = [
            g_alpha * inv_var - (alpha - p.alpha_mean) / (p.alpha_sd * p.alpha_sd),
            g_beta * inv_var - (beta - p.beta_mean) / (p.beta_sd * p.beta_sd),
            -n + ss * inv_var - (sigma / p.sigma_scale).powi(2) + 1.0,
        ];
        (value, grad)
    }
}

impl LogDensity for LinearModel {
    fn dim(&self) -> usize {
        3
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (v, g) = self.log_posterior(&[x[0], x[1], x[2]]);
        grad.copy_from_slice(&g);
        v
    }
}

/// The same posterior in `(alpha + beta * shift, beta, log sigma)`.
///
/// With `shift` at the mean judge score the intercept and slope are nearly
/// uncorrelated, which a diagonal mass matrix handles far better than the
/// raw ridge. The shear has unit Jacobian.
#[derive(Debug, Clone)]
pub(crate) struct CenteredModel {
    pub inner: LinearModel,
    pub shift: f64,
}

impl CenteredModel {
    pub fn new(inner: LinearModel) -> Self {
        let shift = inner.judges.iter().sum::<f64>() / inner.judges.len() as f64;
        Self { inner, shift }
    }

    pub fn to_centered(&self, alpha: f64, beta: f64) -> f64 {
        alpha + beta * self.shift
    }

    pub fn to_alpha(&self, centered: f64, beta: f64) -> f64 {
        centered - beta * self.shift
    }
}

impl LogDensity for CenteredModel {
    fn dim(&self) -> usize {
        3
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let alpha = self.to_alpha(x[0], x[1]);
        let (v, g) = self.inner.log_posterior(&[alpha, x[1], x[2]]);
        grad[0] = g[0];
        grad[1] = g[1] - self.shift * g[0];
        grad[2] = g[2];
        v
    }
}

/// Log posterior and its gradient at `(alpha, beta, log sigma)`, including
/// every normalizing constant and the `log sigma` Jacobian.
pub fn log_posterior_and_grad(
    params: [f64; 3],
    anchors: &Dataset,
    priors: &LinearPriors,
) -> Result<(f64, [f64; 3])> {
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("parameters {params:?}")));
    }
    let model = LinearModel::new(anchors, priors.clone())?;
    let (v, g) = model.log_posterior(&params);
    if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("log posterior at {params:?}")));
    }
    Ok((v, g))
}
