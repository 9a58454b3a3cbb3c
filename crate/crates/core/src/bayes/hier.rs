//! Partial pooling across rubrics.
//!
//! Each rubric `r` has its own line, `alpha_r = mu_alpha + tau_alpha * z_alpha_r`
//! and likewise for beta, with `z ~ Normal(0, 1)` (non-centered form) and its
//! own noise scale `sigma_r`. Unconstrained coordinates are
//! `[mu_alpha, log tau_alpha, mu_beta, log tau_beta]` followed by
//! `[z_alpha_r, z_beta_r, log sigma_r]` per rubric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{half_normal_lpdf, normal_lpdf, HALF_LN_2PI};
use super::nuts::{self, LogDensity};
use super::ols::ols_from_slices;
use super::{gate, jittered_inits, Diagnostics, Draw, PosteriorTrace, SamplerConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Hyperpriors; defaults mirror the single-cell priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierPriors {
    pub mu_alpha_mean: f64,
    pub mu_alpha_sd: f64,
    pub tau_alpha_scale: f64,
    pub mu_beta_mean: f64,
    pub mu_beta_sd: f64,
    pub tau_beta_scale: f64,
    pub sigma_scale: f64,
}

impl Default for HierPriors {
    fn default() -> Self {
        Self {
            mu_alpha_mean: 0.0,
            mu_alpha_sd: 2.0,
            tau_alpha_scale: 1.0,
            mu_beta_mean: 1.0,
            mu_beta_sd: 2.0,
            tau_beta_scale: 1.0,
            sigma_scale: 1.0,
        }
    }
}

impl HierPriors {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.mu_alpha_sd,
            self.tau_alpha_scale,
            self.mu_beta_sd,
            self.tau_beta_scale,
            self.sigma_scale,
        ];
        if scales.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid hierarchical priors {self:?}"
            )))
        }
    }
}

struct Rubric {
    judges: Vec<f64>,
    references: Vec<f64>,
}

struct HierModel {
    rubrics: Vec<Rubric>,
    priors: HierPriors,
}

const N_GLOBAL: usize = 4;
const N_LOCAL: usize = 3;

impl LogDensity for HierModel {
    fn dim(&self) -> usize {
        N_GLOBAL + N_LOCAL * self.rubrics.len()
    }

    fn log_density_and_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let p = &self.priors;
        let (mu_a, log_ta, mu_b, log_tb) = (x[0], x[1], x[2], x[3]);
        let (ta, tb) = (log_ta.exp(), log_tb.exp());

        let mut lp = normal_lpdf(mu_a, p.mu_alpha_mean, p.mu_alpha_sd)
            + half_normal_lpdf(ta, p.tau_alpha_scale)
            + log_ta
            + normal_lpdf(mu_b, p.mu_beta_mean, p.mu_beta_sd)
            + half_normal_lpdf(tb, p.tau_beta_scale)
            + log_tb;
        g[0] = -(mu_a - p.mu_alpha_mean) / p.mu_alpha_sd.powi(2);
        g[1] = 1.0 - (ta / p.tau_alpha_scale).powi(2);
        g[2] = -(mu_b - p.mu_beta_mean) / p.mu_beta_sd.powi(2);
        g[3] = 1.0 - (tb / p.tau_beta_scale).powi(2);

        for (r, rub) in self.rubrics.iter().enumerate() {
            let o = N_GLOBAL + N_LOCAL * r;
            let (za, zb, log_s) = (x[o], x[o + 1], x[o + 2]);
            let s = log_s.exp();
            let iv = 1.0 / (s * s);
            let alpha = mu_a + ta * za;
            let beta = mu_b + tb * zb;
            let (mut ss, mut ra, mut rb) = (0.0, 0.0, 0.0);
            for (&j, &y) in rub.judges.iter().zip(&rub.references) {
                let res = y - alpha - beta * j;
                ss += res * res;
                ra += res;
                rb += res * j;
            }
            let n = rub.judges.len() as f64;
            lp += -n * (HALF_LN_2PI + log_s) - 0.5 * ss * iv;
            lp += normal_lpdf(za, 0.0, 1.0) + normal_lpdf(zb, 0.0, 1.0);
            lp += half_normal_lpdf(s, p.sigma_scale) + log_s;

            let (d_alpha, d_beta) = (ra * iv, rb * iv);
            g[0] += d_alpha;
            g[1] += d_alpha * ta * za;
            g[2] += d_beta;
            g[3] += d_beta * tb * zb;
            g[o] = -za + ta * d_alpha;
            g[o + 1] = -zb + tb * d_beta;
            g[o + 2] = -n + ss * iv - (s / p.sigma_scale).powi(2) + 1.0;
        }
        lp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationDraw {
    pub mu_alpha: f64,
    pub tau_alpha: f64,
    pub mu_beta: f64,
    pub tau_beta: f64,
}

#[derive(Debug, Clone)]
pub struct HierarchicalFit {
    /// Per-rubric marginal traces of `(alpha_r, beta_r, sigma_r)`.
    pub rubrics: BTreeMap<u32, PosteriorTrace>,
    pub population: Vec<Vec<PopulationDraw>>,
    pub diagnostics: Diagnostics,
}

/// Joint NUTS fit over all rubrics and the population parameters.
pub fn fit_hierarchical(
    anchors_by_rubric: &BTreeMap<u32, Dataset>,
    hyper: &HierPriors,
    cfg: &SamplerConfig,
    stream: &RngStream,
) -> Result<HierarchicalFit> {
    hyper.validate()?;
    cfg.validate()?;
    if anchors_by_rubric.len() < 2 {
        return Err(Error::InvalidInput(
            "hierarchical fit needs at least two rubrics".into(),
        ));
    }
    let mut rubrics = Vec::new();
    for (id, d) in anchors_by_rubric {
        if d.is_empty() {
            return Err(Error::InvalidInput(format!("rubric {id} has no anchors")));
        }
        rubrics.push(Rubric {
            judges: d.judges()?,
            references: d.references(),
        });
    }

    // start at the pooled line with moderate spread
    let all_j: Vec<f64> = rubrics
        .iter()
        .flat_map(|r| r.judges.iter().copied())
        .collect();
    let all_y: Vec<f64> = rubrics
        .iter()
        .flat_map(|r| r.references.iter().copied())
        .collect();
    let pooled = ols_from_slices(&all_j, &all_y)?;
    let mut center = vec![pooled.alpha, (0.3f64).ln(), pooled.beta, (0.3f64).ln()];
    for _ in &rubrics {
        center.extend([0.0, 0.0, pooled.residual_sd.max(1e-2).ln()]);
    }

    let model = HierModel {
        rubrics,
        priors: hyper.clone(),
    };
    let inits = jittered_inits(&center, cfg.n_chains, &stream.child("init"));
    let out = nuts::sample(&model, &inits, cfg, &stream.child("chains"))?;

    let mut per_rubric: Vec<Vec<Vec<Draw>>> = vec![Vec::new(); model.rubrics.len()];
    let mut population = Vec::with_capacity(out.len());
    for chain in &out {
        let mut pop = Vec::with_capacity(chain.draws.len());
        let mut local: Vec<Vec<Draw>> =
            vec![Vec::with_capacity(chain.draws.len()); model.rubrics.len()];
        for x in &chain.draws {
            let (ta, tb) = (x[1].exp(), x[3].exp());
            pop.push(PopulationDraw {
                mu_alpha: x[0],
                tau_alpha: ta,
                mu_beta: x[2],
                tau_beta: tb,
            });
            for (r, l) in local.iter_mut().enumerate() {
                let o = N_GLOBAL + N_LOCAL * r;
                l.push(Draw {
                    alpha: x[0] + ta * x[o],
                    beta: x[2] + tb * x[o + 1],
                    sigma: x[o + 2].exp(),
                });
            }
        }
        population.push(pop);
        for (r, l) in local.into_iter().enumerate() {
            per_rubric[r].push(l);
        }
    }

    // diagnostics on every sampled coordinate, reported on the natural scale
    let mut names = vec![
        "mu_alpha".to_string(),
        "tau_alpha".into(),
        "mu_beta".into(),
        "tau_beta".into(),
    ];
    for id in anchors_by_rubric.keys() {
        names.extend([
            format!("alpha[{id}]"),
            format!("beta[{id}]"),
            format!("sigma[{id}]"),
        ]);
    }
    let dim = model.dim();
    let coords: Vec<Vec<Vec<f64>>> = (0..dim)
        .map(|k| {
            out.iter()
                .enumerate()
                .map(|(c, ch)| {
                    ch.draws
                        .iter()
                        .enumerate()
                        .map(|(i, x)| match k {
                            0 => x[0],
                            1 => x[1].exp(),
                            2 => x[2],
                            3 => x[3].exp(),
                            _ => {
                                let r = (k - N_GLOBAL) / N_LOCAL;
                                let d = per_rubric[r][c][i];
                                [d.alpha, d.beta, d.sigma][(k - N_GLOBAL) % N_LOCAL]
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let diag = gate(Diagnostics::from_chains(&name_refs, &coords)?, cfg)?;

    let divergences: usize = out.iter().map(|c| c.divergences).sum();
    let mut traces = BTreeMap::new();
    for (id, chains) in anchors_by_rubric.keys().zip(per_rubric) {
        let mut t = PosteriorTrace::new(chains, cfg.n_warmup)?;
        t.divergences = divergences;
        traces.insert(*id, t);
    }
    Ok(HierarchicalFit {
        rubrics: traces,
        population,
        diagnostics: diag,
    })
}
