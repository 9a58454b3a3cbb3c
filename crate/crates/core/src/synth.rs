//! The synthetic strict-and-compressing judge.
//!
//! A judge score is generated from a reference score `y` as
//!
//! ```text
//! j = a0 + a1*y + a2*tanh(a3*(y - c))
//!       + bump * 1[verbose] * 1[|y - c| < halfwidth]
//!       + eps,   eps ~ Normal(0, (s0 + s1*|y - c|)^2)
//! ```
//!
//! and clamped to the score scale. The `tanh` term is the part no affine
//! corrector can undo; [`residual_projection_bound`] measures what is left of
//! it after the best linear fit.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance, ScorePair, SCALE_MAX, SCALE_MIN};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub intercept: f64,
    pub slope: f64,
    pub tanh_amp: f64,
    pub tanh_rate: f64,
    pub tanh_center: f64,
    pub verbose_bump: f64,
    pub verbose_prob: f64,
    pub midrange_halfwidth: f64,
    pub noise_base: f64,
    pub noise_slope: f64,
    pub clamp_to_scale: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            intercept: -0.5,
            slope: 0.85,
            tanh_amp: 0.4,
            tanh_rate: 0.9,
            tanh_center: 3.0,
            verbose_bump: 0.35,
            verbose_prob: 0.30,
            midrange_halfwidth: 1.5,
            noise_base: 0.30,
            noise_slope: 0.18,
            clamp_to_scale: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.verbose_prob) {
            return Err(Error::Config(format!(
                "verbose_prob {} outside [0, 1]",
                self.verbose_prob
            )));
        }
        if self.noise_base < 0.0 || self.noise_slope < 0.0 {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    /// The non-linear residual `g(y) = a2*tanh(a3*(y - c))`.
    pub fn residual(&self, y: f64) -> f64 {
        self.tanh_amp * (self.tanh_rate * (y - self.tanh_center)).tanh()
    }

    fn bump_applies(&self, y: f64, verbose: bool) -> bool {
        verbose && (y - self.tanh_center).abs() < self.midrange_halfwidth
    }

    /// Noise-free judge curve.
    pub fn judge_mean(&self, y: f64, verbose: bool) -> f64 {
        let bump = if self.bump_applies(y, verbose) {
            self.verbose_bump
        } else {
            0.0
        };
        self.intercept + self.slope * y + self.residual(y) + bump
    }
}

/// Heteroskedastic noise scale, growing away from the scale centre.
pub fn het_sigma(y: f64, config: &SynthConfig) -> f64 {
    config.noise_base + config.noise_slope * (y - config.tanh_center).abs()
}

fn check_reference(y: f64) -> Result<()> {
    if !(SCALE_MIN..=SCALE_MAX).contains(&y) {
        return Err(Error::InvalidInput(format!(
            "reference score {y} outside [1, 5]"
        )));
    }
    Ok(())
}

/// Judge score for a given standard-normal noise draw `z`.
pub fn judge_from_noise(y: f64, verbose: bool, z: f64, config: &SynthConfig) -> Result<f64> {
    check_reference(y)?;
    let j = config.judge_mean(y, verbose) + het_sigma(y, config) * z;
    Ok(if config.clamp_to_scale {
        j.clamp(SCALE_MIN, SCALE_MAX)
    } else {
        j
    })
}

pub fn synthesize_judge<R: Rng + ?Sized>(
    y: f64,
    verbose: bool,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<f64> {
    let z: f64 = StandardNormal.sample(rng);
    judge_from_noise(y, verbose, z, config)
}

/// Bin weights of the fallback reference distribution: 16 bins of width 0.25
/// covering `[1, 5]`, uniform within a bin.
///
/// The shape is left-skewed with a small low-score cluster and a pile-up at
/// the top of the scale, the profile of averaged 1–5 quality ratings. It has
/// mean 3.75 and standard deviation 1.08.
pub const FALLBACK_PROFILE: [f64; 16] = [
    0.0164, 0.0472, 0.0370, 0.0154, 0.0115, 0.0149, 0.0251, 0.0507, 0.0622, 0.0503, 0.0549, 0.0708,
    0.1688, 0.0986, 0.0224, 0.2539,
];

/// How synthetic reference scores are drawn when no CSV is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ReferenceModel {
    /// Piecewise-uniform density with the given bin weights over `[1, 5]`.
    Profile { weights: Vec<f64> },
    /// Normal truncated to `[1, 5]` by rejection.
    TruncatedNormal { mean: f64, sd: f64 },
}

impl Default for ReferenceModel {
    fn default() -> Self {
        ReferenceModel::Profile {
            weights: FALLBACK_PROFILE.to_vec(),
        }
    }
}

impl ReferenceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceModel::Profile { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::Config("profile weights must be non-negative".into()));
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Config("profile weights sum to zero".into()));
                }
            }
            ReferenceModel::TruncatedNormal { sd, .. } => {
                if !(*sd > 0.0) {
                    return Err(Error::Config("truncated normal sd must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ReferenceModel::Profile { weights } => {
                let total: f64 = weights.iter().sum();
                let width = (SCALE_MAX - SCALE_MIN) / weights.len() as f64;
                let mut u = rng.random::<f64>() * total;
                let mut bin = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        bin = i;
                        break;
                    }
                    u -= w;
                }
                SCALE_MIN + width * (bin as f64 + rng.random::<f64>())
            }
            ReferenceModel::TruncatedNormal { mean, sd } => loop {
                let z: f64 = StandardNormal.sample(rng);
                let y = mean + sd * z;
                if (SCALE_MIN..=SCALE_MAX).contains(&y) {
                    break y;
                }
            },
        }
    }

    /// Exact mean and standard deviation of the profile model.
    pub fn profile_moments(weights: &[f64]) -> (f64, f64) {
        let total: f64 = weights.iter().sum();
        let width = (SCALE_MAX - SCALE_MIN) / weights.len() as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for (i, w) in weights.iter().enumerate() {
            let lo = SCALE_MIN + width * i as f64;
            let mid = lo + width / 2.0;
            let p = w / total;
            m1 += p * mid;
            m2 += p * (mid * mid + width * width / 12.0);
        }
        (m1, (m2 - m1 * m1).sqrt())
    }
}

/// Where reference scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSource<'a> {
    Dataset(&'a Dataset),
    Generate { model: &'a ReferenceModel, n: usize },
}

/// Draws reference scores (if needed), verbose flags and judge scores.
///
/// Randomness comes from three children of `rng`: `reference`, `verbose` and
/// `bias-noise`, so re-seeding the noise leaves a generated reference sample
/// untouched when only those streams are swapped.
pub fn synthesize_dataset(
    source: ReferenceSource<'_>,
    config: &SynthConfig,
    rng: &RngStream,
) -> Result<Dataset> {
    config.validate()?;
    let references: Vec<(String, f64, Option<u32>)> = match source {
        ReferenceSource::Dataset(d) => {
            if d.is_empty() {
                return Err(Error::InvalidInput("empty reference dataset".into()));
            }
            d.pairs
                .iter()
                .map(|p| (p.item_id.clone(), p.reference, p.rubric_id))
                .collect()
        }
        ReferenceSource::Generate { model, n } => {
            model.validate()?;
            if n == 0 {
                return Err(Error::InvalidInput(
                    "cannot generate zero references".into(),
                ));
            }
            let mut r = rng.child("reference").rng();
            (0..n)
                .map(|i| (i.to_string(), model.sample(&mut r), None))
                .collect()
        }
    };
    synthesize_judges(
        &references,
        config,
        &rng.child("verbose"),
        &rng.child("bias-noise"),
    )
}

/// Judge synthesis for a fixed reference sample with explicit noise streams.
pub fn synthesize_judges(
    references: &[(String, f64, Option<u32>)],
    config: &SynthConfig,
    verbose_stream: &RngStream,
    noise_stream: &RngStream,
) -> Result<Dataset> {
    config.validate()?;
    let coin = Bernoulli::new(config.verbose_prob)
        .map_err(|e| Error::Config(format!("verbose_prob: {e}")))?;
    let mut vrng = verbose_stream.rng();
    let mut nrng = noise_stream.rng();
    let pairs = references
        .iter()
        .map(|(id, y, rubric)| {
            let verbose = coin.sample(&mut vrng);
            let judge = synthesize_judge(*y, verbose, config, &mut nrng)?;
            Ok(ScorePair {
                item_id: id.clone(),
                judge: Some(judge),
                reference: *y,
                rubric_id: *rubric,
                verbose: Some(verbose),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(
        pairs,
        Provenance::Synthetic,
        Some(noise_stream.seed()),
    ))
}

/// Least-squares line through `g` over a sample plus the leftover error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualProjection {
    pub intercept: f64,
    pub slope: f64,
    /// `max |g - g*|` over the samples.
    pub sup_residual: f64,
    /// `max (g - g*) - min (g - g*)` over the samples.
    pub span: f64,
}

/// Projects the configured `tanh` residual onto `span{1, y}` over `samples`.
pub fn residual_projection_bound(
    config: &SynthConfig,
    samples: &[f64],
) -> Result<ResidualProjection> {
    project_onto_affine(samples, |y| config.residual(y))
}

/// Projection of an arbitrary function onto `span{1, y}` over `samples`.
pub fn project_onto_affine(samples: &[f64], g: impl Fn(f64) -> f64) -> Result<ResidualProjection> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(
            "need at least two support samples".into(),
        ));
    }
    let n = samples.len() as f64;
    let my = samples.iter().sum::<f64>() / n;
    let values: Vec<f64> = samples.iter().map(|&y| g(y)).collect();
    let mg = values.iter().sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all support samples are equal".into()));
    }
    let sxg: f64 = samples
        .iter()
        .zip(&values)
        .map(|(y, v)| (y - my) * (v - mg))
        .sum();
    let slope = sxg / sxx;
    let intercept = mg - slope * my;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (y, v) in samples.iter().zip(&values) {
        let r = v - (intercept + slope * y);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(ResidualProjection {
        intercept,
        slope,
        sup_residual: lo.abs().max(hi.abs()),
        span: hi - lo,
    })
}
