//! Split-R̂ and rank-normalized effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::metrics::average_ranks;

/// Per-parameter convergence summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub parameters: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, rhat_max: f64, ess_min: f64) -> bool {
        self.max_rhat() < rhat_max && self.min_ess() > ess_min
    }

    /// Builds the summary from per-parameter chains: `chains[p][c][i]`.
    pub fn from_chains(names: &[&str], chains: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mut rhat = Vec::with_capacity(chains.len());
        let mut ess = Vec::with_capacity(chains.len());
        for c in chains {
            rhat.push(split_rhat(c)?);
            ess.push(rank_ess(c)?);
        }
        Ok(Self {
            parameters: names.iter().map(|s| s.to_string()).collect(),
            rhat,
            ess,
        })
    }
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput(
            "chains must be non-empty and of equal length".into(),
        ));
    }
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "diagnostics need at least 4 draws per chain, got {n}"
        )));
    }
    if chains.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("chain draws".into()));
    }
    Ok(n)
}

/// Each chain halved; a middle draw of an odd-length chain is dropped.
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let half = chains[0].len() / 2;
    let skip = chains[0].len() % 2;
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half + skip..]])
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Within-chain variance and the pooled variance estimate.
fn variance_components(chains: &[&[f64]]) -> (f64, f64) {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / chains.len() as f64;
    let b = n * var(&means);
    (w, (n - 1.0) / n * w + b / n)
}

/// Potential scale reduction factor on split chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let halves = split(chains);
    let (w, var_plus) = variance_components(&halves);
    if w == 0.0 {
        // every split chain is constant: identical constants are converged
        return Ok(if var_plus == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n)
        .map(|lag| {
            d[..n - lag]
                .iter()
                .zip(&d[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Effective sample size of already-split chains with Geyer's initial
/// monotone sequence. Capped at the total number of draws.
fn ess_split(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let (_, var_plus) = variance_components(chains);
    if var_plus == 0.0 {
        return total;
    }
    let acovs: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / m as f64;
    let rho = |t: usize| {
        let mean_acov = acovs.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        if t == 0 {
            1.0
        } else {
            1.0 - (w - mean_acov) / var_plus
        }
    };

    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum_pairs += pair;
        prev = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10());
    (total / tau).min(total)
}

/// Bulk effective sample size after rank-normalizing the pooled draws.
pub fn rank_ess(chains: &[Vec<f64>]) -> Result<f64> {
    check_chains(chains)?;
    let n = chains[0].len();
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let ranks = average_ranks(&pooled);
    let s = pooled.len() as f64;
    let std = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| std.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect();
    let z_chains: Vec<Vec<f64>> = z.chunks(n).map(<[f64]>::to_vec).collect();
    if pooled.iter().all(|&x| x == pooled[0]) {
        return Ok(s);
    }
    Ok(ess_split(&split(&z_chains)))
}
