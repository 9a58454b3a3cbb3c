//! Bayesian linear corrector `y = alpha + beta * j + noise`.
//!
//! The posterior over `(alpha, beta, sigma)` is sampled with NUTS in
//! `(alpha, beta, log sigma)`. A fitted trace gives point corrections,
//! 95% intervals and the beta canary, a cheap alarm for a judge whose scores
//! have stopped tracking the reference. [`ols_fit`] is the closed-form fast
//! path used by multi-seed sweeps.

mod diagnostics;
mod hier;
mod model;
pub mod nuts;
mod ols;

use rand_distr::{Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::Corrector;

pub use diagnostics::{rank_ess, split_rhat, Diagnostics};
pub use hier::{fit_hierarchical, HierPriors, HierarchicalFit, PopulationDraw};
use model::CenteredModel;
pub use model::{log_posterior_and_grad, LinearModel};
pub use ols::{ols_fit, OlsFit};

/// Weakly informative priors: Normal on alpha and beta, half-Normal on sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearPriors {
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub sigma_scale: f64,
}

impl Default for LinearPriors {
    fn default() -> Self {
        Self {
            alpha_mean: 0.0,
            alpha_sd: 2.0,
            beta_mean: 1.0,
            beta_sd: 2.0,
            sigma_scale: 1.0,
        }
    }
}

impl LinearPriors {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha_sd, self.beta_sd, self.sigma_scale]
            .iter()
            .all(|s| s.is_finite() && *s > 0.0)
            && self.alpha_mean.is_finite()
            && self.beta_mean.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid linear priors {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_draws: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Convergence gate: every R̂ must be below this.
    pub rhat_max: f64,
    /// Convergence gate: every ESS must exceed this.
    pub ess_min: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            n_draws: 1000,
            n_warmup: 500,
            target_accept: 0.9,
            max_tree_depth: 10,
            rhat_max: 1.01,
            ess_min: 400.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_draws == 0 || self.max_tree_depth == 0 {
            return Err(Error::Config("sampler counts must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

/// Post-warmup draws, one vector per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTrace {
    pub chains: Vec<Vec<Draw>>,
    pub warmup_dropped: usize,
    pub divergences: usize,
}

impl PosteriorTrace {
    /// Checks the trace invariants: at least one draw, equal-length chains,
    /// finite draws and positive sigma.
    pub fn new(chains: Vec<Vec<Draw>>, warmup_dropped: usize) -> Result<Self> {
        let n = chains.first().map_or(0, Vec::len);
        if n == 0 || chains.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput(
                "trace chains must be non-empty and of equal length".into(),
            ));
        }
        for d in chains.iter().flatten() {
            if !(d.alpha.is_finite() && d.beta.is_finite() && d.sigma.is_finite()) {
                return Err(Error::NonFinite("trace draw".into()));
            }
            if d.sigma <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "sigma draw {} is not positive",
                    d.sigma
                )));
            }
        }
        Ok(Self {
            chains,
            warmup_dropped,
            divergences: 0,
        })
    }

    pub fn draws(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flatten()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn posterior_mean(&self) -> Draw {
        let n = self.n_draws() as f64;
        let (a, b, s) = self.draws().fold((0.0, 0.0, 0.0), |(a, b, s), d| {
            (a + d.alpha, b + d.beta, s + d.sigma)
        });
        Draw {
            alpha: a / n,
            beta: b / n,
            sigma: s / n,
        }
    }

    fn parameter_chains(&self) -> Vec<Vec<Vec<f64>>> {
        let pick: [fn(&Draw) -> f64; 3] = [|d| d.alpha, |d| d.beta, |d| d.sigma];
        pick.iter()
            .map(|f| {
                self.chains
                    .iter()
                    .map(|c| c.iter().map(f).collect())
                    .collect()
            })
            .collect()
    }

    /// JSON export: one array per parameter per chain, with diagnostics.
    pub fn to_json(&self) -> Result<String> {
        let chains = self.parameter_chains();
        let export = TraceExport {
            alpha: &chains[0],
            beta: &chains[1],
            sigma: &chains[2],
            warmup_dropped: self.warmup_dropped,
            divergences: self.divergences,
            diagnostics: diagnostics(self).ok(),
        };
        Ok(serde_json::to_string_pretty(&export)?)
    }

    /// Reads a trace written by [`PosteriorTrace::to_json`]; embedded
    /// diagnostics are ignored and recomputed on demand.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TraceImport = serde_json::from_str(text)?;
        let n_chains = doc.alpha.len();
        if doc.beta.len() != n_chains || doc.sigma.len() != n_chains {
            return Err(Error::InvalidInput(
                "trace parameters disagree on chain count".into(),
            ));
        }
        let mut chains = Vec::with_capacity(n_chains);
        for c in 0..n_chains {
            let (a, b, s) = (&doc.alpha[c], &doc.beta[c], &doc.sigma[c]);
            if b.len() != a.len() || s.len() != a.len() {
                return Err(Error::InvalidInput(format!(
                    "chain {c} has ragged parameters"
                )));
            }
            chains.push(
                (0..a.len())
                    .map(|i| Draw {
                        alpha: a[i],
                        beta: b[i],
                        sigma: s[i],
                    })
                    .collect(),
            );
        }
        let mut trace = Self::new(chains, doc.warmup_dropped)?;
        trace.divergences = doc.divergences;
        Ok(trace)
    }
}

#[derive(Deserialize)]
struct TraceImport {
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    warmup_dropped: usize,
    divergences: usize,
}

#[derive(Serialize)]
struct TraceExport<'a> {
    alpha: &'a [Vec<f64>],
    beta: &'a [Vec<f64>],
    sigma: &'a [Vec<f64>],
    warmup_dropped: usize,
    divergences: usize,
    diagnostics: Option<Diagnostics>,
}

/// Split-R̂ and rank-normalized ESS for alpha, beta and sigma.
pub fn diagnostics(trace: &PosteriorTrace) -> Result<Diagnostics> {
    Diagnostics::from_chains(&["alpha", "beta", "sigma"], &trace.parameter_chains())
}

fn gate(diag: Diagnostics, cfg: &SamplerConfig) -> Result<Diagnostics> {
    if diag.passes(cfg.rhat_max, cfg.ess_min) {
        Ok(diag)
    } else {
        Err(Error::Convergence {
            max_rhat: diag.max_rhat(),
            min_ess: diag.min_ess(),
            diagnostics: Box::new(diag),
        })
    }
}

/// Initial points: `center` plus Normal(0, 0.1^2) jitter per coordinate.
pub(crate) fn jittered_inits(center: &[f64], n_chains: usize, stream: &RngStream) -> Vec<Vec<f64>> {
    let jitter = NormalDist::new(0.0, 0.1).expect("valid sd");
    (0..n_chains)
        .map(|c| {
            let mut rng = stream.substream(c as u64).rng();
            center.iter().map(|x| x + jitter.sample(&mut rng)).collect()
        })
        .collect()
}

/// Samples the posterior with NUTS from jittered OLS starts and applies the
/// convergence gate in `cfg`.
pub fn sample_posterior(
    anchors: &Dataset,
    priors: &LinearPriors,
    cfg: &SamplerConfig,
    stream: &RngStream,
) -> Result<(PosteriorTrace, Diagnostics)> {
    cfg.validate()?;
    let ols = ols_fit(anchors)?;
    let model = CenteredModel::new(LinearModel::new(anchors, priors.clone())?);
    let center = [
        model.to_centered(ols.alpha, ols.beta),
        ols.beta,
        ols.residual_sd.max(1e-3).ln(),
    ];
    let inits = jittered_inits(&center, cfg.n_chains, &stream.child("init"));
    let out = nuts::sample(&model, &inits, cfg, &stream.child("chains"))?;
    let chains = out
        .iter()
        .map(|c| {
            c.draws
                .iter()
                .map(|x| Draw {
                    alpha: model.to_alpha(x[0], x[1]),
                    beta: x[1],
                    sigma: x[2].exp(),
                })
                .collect()
        })
        .collect();
    let mut trace = PosteriorTrace::new(chains, cfg.n_warmup)?;
    trace.divergences = out.iter().map(|c| c.divergences).sum();
    let diag = gate(diagnostics(&trace)?, cfg)?;
    Ok((trace, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// Spread of the regression line `alpha + beta * j` only.
    MeanLine,
    /// Includes observation noise by integrating over sigma.
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub y_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Type-7 quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile of the equal-weight mixture of `Normal(mu_s, sd_s^2)`, by
/// bisection on the mixture CDF.
fn mixture_quantile(components: &[(f64, f64)], q: f64) -> f64 {
    let std = Normal::standard();
    let cdf = |x: f64| {
        components
            .iter()
            .map(|&(m, s)| std.cdf((x - m) / s))
            .sum::<f64>()
            / components.len() as f64
    };
    let mut lo = components
        .iter()
        .map(|&(m, s)| m - 10.0 * s)
        .fold(f64::INFINITY, f64::min);
    let mut hi = components
        .iter()
        .map(|&(m, s)| m + 10.0 * s)
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Posterior-mean correction of `j_star` with a central 95% interval.
///
/// The predictive interval is computed from the exact quantiles of the
/// mixture of per-draw Normal predictive distributions rather than from one
/// noise draw per sample, so it is deterministic given the trace.
pub fn correct(j_star: f64, trace: &PosteriorTrace, interval: IntervalKind) -> Correction {
    let lines: Vec<f64> = trace.draws().map(|d| d.alpha + d.beta * j_star).collect();
    let y_hat = lines.iter().sum::<f64>() / lines.len() as f64;
    let (lo, hi) = match interval {
        IntervalKind::MeanLine => {
            let mut s = lines;
            s.sort_by(f64::total_cmp);
            (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
        }
        IntervalKind::Predictive => {
            let comps: Vec<(f64, f64)> = trace
                .draws()
                .map(|d| (d.alpha + d.beta * j_star, d.sigma))
                .collect();
            (
                mixture_quantile(&comps, 0.025),
                mixture_quantile(&comps, 0.975),
            )
        }
    };
    Correction { y_hat, lo, hi }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canary {
    pub alert: bool,
    /// Posterior mass of beta below the threshold.
    pub probability: f64,
}

/// Alerts when more than `prob` of the beta draws fall below `threshold`.
pub fn beta_canary(trace: &PosteriorTrace, threshold: f64, prob: f64) -> Canary {
    let n = trace.n_draws();
    let below = trace.draws().filter(|d| d.beta < threshold).count();
    let probability = below as f64 / n as f64;
    Canary {
        alert: probability > prob,
        probability,
    }
}

/// Point corrector `alpha + beta * j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCorrector {
    pub alpha: f64,
    pub beta: f64,
}

impl LinearCorrector {
    pub fn from_trace(trace: &PosteriorTrace) -> Self {
        let m = trace.posterior_mean();
        Self {
            alpha: m.alpha,
            beta: m.beta,
        }
    }

    pub fn from_ols(fit: &OlsFit) -> Self {
        Self {
            alpha: fit.alpha,
            beta: fit.beta,
        }
    }
}

impl Corrector for LinearCorrector {
    fn correct(&self, judge: f64) -> f64 {
        self.alpha + self.beta * judge
    }
}
