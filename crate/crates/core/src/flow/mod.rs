//! Neural-ODE score flow: `dx/dt = f(x, t)` from `x(0) = j` to `x(1) = y_hat`.
//!
//! `f` is a small Tanh MLP, optionally conditioned on a learned rubric
//! embedding. The solve is fixed-step RK4 and training is full-batch MSE
//! with gradients taken through the unrolled solver. Dropout stays active at
//! inference for MC-dropout uncertainty.

mod net;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::Corrector;

pub use net::BatchMasks;
use net::{Layout, Net, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub rk4_step: f64,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub embed_dim: usize,
    /// Scale applied to the initial output layer.
    pub final_layer_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            learning_rate: 3e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rk4_step: 0.1,
            hidden: 64,
            dropout_rate: 0.1,
            embed_dim: 4,
            final_layer_scale: 0.1,
        }
    }
}

impl TrainConfig {
    /// Number of RK4 steps covering `[0, 1]`.
    pub fn n_steps(&self) -> Result<usize> {
        let k = (1.0 / self.rk4_step).round();
        if !(self.rk4_step > 0.0) || k < 1.0 || (k * self.rk4_step - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "rk4_step {} does not divide 1 evenly",
                self.rk4_step
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.n_steps()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "hidden and embed_dim must be positive".into(),
            ));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Drift network weights plus the settings needed to run the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    layout: Layout,
    params: Vec<f64>,
    pub dropout_rate: f64,
    pub rk4_step: f64,
    /// Rubric ids in embedding-table order; empty when unconditioned.
    rubric_ids: Vec<u32>,
}

/// A dropout mask for a single item.
pub type DropoutMask = BatchMasks;

impl FlowModel {
    /// Fan-in uniform initialization, output layer scaled by
    /// `cfg.final_layer_scale`; embeddings start standard normal.
    pub fn init(cfg: &TrainConfig, rubric_ids: &[u32], stream: &RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut ids = rubric_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let embed_dim = if ids.is_empty() { 0 } else { cfg.embed_dim };
        let layout = Layout {
            in_dim: 2 + embed_dim,
            hidden: cfg.hidden,
            embed_dim,
            n_rubrics: ids.len(),
        };
        let mut rng = stream.rng();
        let mut params = vec![0.0; layout.len()];
        let h = layout.hidden;
        let mut fill =
            |range: std::ops::Range<usize>, fan_in: usize, scale: f64, params: &mut [f64]| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for p in &mut params[range] {
                    *p = scale * rng.random_range(-bound..bound);
                }
            };
        fill(
            layout.w1()..layout.b1() + h,
            layout.in_dim,
            1.0,
            &mut params,
        );
        fill(layout.w2()..layout.b2() + h, h, 1.0, &mut params);
        fill(
            layout.w3()..layout.b3() + 1,
            h,
            cfg.final_layer_scale,
            &mut params,
        );
        for p in &mut params[layout.emb()..] {
            *p = StandardNormal.sample(&mut rng);
        }
        Ok(Self {
            layout,
            params,
            dropout_rate: cfg.dropout_rate,
            rk4_step: cfg.rk4_step,
            rubric_ids: ids,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn is_conditioned(&self) -> bool {
        !self.rubric_ids.is_empty()
    }

    pub fn rubric_ids(&self) -> &[u32] {
        &self.rubric_ids
    }

    /// Zeroes the output layer so the drift vanishes everywhere.
    pub fn zero_output(&mut self) {
        let l = &self.layout;
        let (a, b) = (l.w3(), l.b3() + 1);
        self.params[a..b].fill(0.0);
    }

    fn net(&self) -> Net<'_> {
        Net {
            layout: &self.layout,
            params: &self.params,
        }
    }

    fn n_steps(&self) -> Result<usize> {
        TrainConfig {
            rk4_step: self.rk4_step,
            ..TrainConfig::default()
        }
        .n_steps()
    }

    /// Embedding-table rows for a batch of rubric ids.
    fn rubric_rows(&self, rubrics: &[Option<u32>]) -> Result<Option<Vec<usize>>> {
        if !self.is_conditioned() {
            return Ok(None);
        }
        rubrics
            .iter()
            .map(|r| match r {
                Some(id) => self
                    .rubric_ids
                    .binary_search(id)
                    .map_err(|_| Error::UnknownRubric(*id)),
                None => Err(Error::InvalidInput(
                    "rubric-conditioned flow needs a rubric id".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Samples one item's dropout mask.
    pub fn sample_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> DropoutMask {
        BatchMasks::sample(1, self.layout.hidden, self.dropout_rate, rng)
    }

    /// Integrates a batch of judge scores; `masks` holds one mask per item.
    pub fn integrate_batch(
        &self,
        judges: &[f64],
        rubrics: &[Option<u32>],
        masks: Option<&BatchMasks>,
    ) -> Result<Vec<f64>> {
        let rows = self.rubric_rows(rubrics)?;
        let net = self.net();
        let base = net.input_base(rows.as_deref(), judges.len());
        let traj = net.integrate(judges, self.rk4_step, self.n_steps()?, &base, masks, false)?;
        Ok(traj.x_final)
    }

    /// Deterministic (no dropout) corrections.
    pub fn predict(&self, judges: &[f64], rubrics: &[Option<u32>]) -> Result<Vec<f64>> {
        self.integrate_batch(judges, rubrics, None)
    }

    pub fn to_json(&self) -> Result<String> {
        let l = &self.layout;
        let p = &self.params;
        let h = l.hidden;
        let layer = |w: usize, b: usize, rows: usize, cols: usize| LayerDoc {
            shape: [rows, cols],
            weight: p[w..w + rows * cols].to_vec(),
            bias: p[b..b + rows].to_vec(),
        };
        let doc = ModelDoc {
            dropout_rate: self.dropout_rate,
            rk4_step: self.rk4_step,
            layers: vec![
                layer(l.w1(), l.b1(), h, l.in_dim),
                layer(l.w2(), l.b2(), h, h),
                layer(l.w3(), l.b3(), 1, h),
            ],
            embed_dim: l.embed_dim,
            embeddings: self
                .rubric_ids
                .iter()
                .enumerate()
                .map(|(r, id)| (*id, p[l.emb() + r * l.embed_dim..][..l.embed_dim].to_vec()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.layers.len() != 3 {
            return Err(Error::InvalidInput(
                "flow model needs exactly 3 layers".into(),
            ));
        }
        let h = doc.layers[0].shape[0];
        let layout = Layout {
            in_dim: doc.layers[0].shape[1],
            hidden: h,
            embed_dim: doc.embed_dim,
            n_rubrics: doc.embeddings.len(),
        };
        let expected = [[h, 2 + doc.embed_dim], [h, h], [1, h]];
        for (layer, shape) in doc.layers.iter().zip(expected) {
            if layer.shape != shape
                || layer.weight.len() != shape[0] * shape[1]
                || layer.bias.len() != shape[0]
            {
                return Err(Error::InvalidInput(format!(
                    "layer shape {:?} does not fit the architecture",
                    layer.shape
                )));
            }
        }
        let mut params = Vec::with_capacity(layout.len());
        for layer in &doc.layers {
            params.extend_from_slice(&layer.weight);
            params.extend_from_slice(&layer.bias);
        }
        for e in doc.embeddings.values() {
            if e.len() != doc.embed_dim {
                return Err(Error::InvalidInput("embedding width mismatch".into()));
            }
            params.extend_from_slice(e);
        }
        if (doc.embed_dim == 0) != doc.embeddings.is_empty() {
            return Err(Error::InvalidInput(
                "embed_dim and embedding table disagree".into(),
            ));
        }
        let model = Self {
            layout,
            params,
            dropout_rate: doc.dropout_rate,
            rk4_step: doc.rk4_step,
            rubric_ids: doc.embeddings.keys().copied().collect(),
        };
        model.n_steps()?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    shape: [usize; 2],
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    dropout_rate: f64,
    rk4_step: f64,
    layers: Vec<LayerDoc>,
    embed_dim: usize,
    embeddings: BTreeMap<u32, Vec<f64>>,
}

/// Drift `f(x, t)` for one item.
pub fn drift(
    model: &FlowModel,
    x: f64,
    t: f64,
    rubric: Option<u32>,
    mask: Option<&DropoutMask>,
) -> Result<f64> {
    let rows = model.rubric_rows(&[rubric])?;
    let net = model.net();
    let base = net.input_base(rows.as_deref(), 1);
    Ok(net.drift(&[x], t, &base, mask)[0])
}

/// Classical RK4 for a scalar ODE over `[0, 1]`.
pub fn rk4<F: FnMut(f64, f64) -> f64>(mut f: F, x0: f64, step: f64) -> Result<f64> {
    let n = TrainConfig {
        rk4_step: step,
        ..TrainConfig::default()
    }
    .n_steps()?;
    let mut x = x0;
    for s in 0..n {
        let t = s as f64 * step;
        let k1 = f(x, t);
        let k2 = f(x + 0.5 * step * k1, t + 0.5 * step);
        let k3 = f(x + 0.5 * step * k2, t + 0.5 * step);
        let k4 = f(x + step * k3, t + step);
        x += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !x.is_finite() {
            return Err(Error::NonFiniteState { step: s + 1 });
        }
    }
    Ok(x)
}

/// `x(1)` of the flow started at `x(0) = j`.
pub fn integrate(
    model: &FlowModel,
    j: f64,
    rubric: Option<u32>,
    mask: Option<&DropoutMask>,
) -> Result<f64> {
    Ok(model.integrate_batch(&[j], &[rubric], mask)?[0])
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Mean squared error of the flow on a batch and its gradient.
fn loss_and_grad(
    model: &FlowModel,
    judges: &[f64],
    refs: &[f64],
    rows: Option<&[usize]>,
    masks: Option<&BatchMasks>,
    traj: &mut Trajectory,
) -> Result<(f64, Vec<f64>)> {
    let net = model.net();
    let base = net.input_base(rows, judges.len());
    net.integrate_into(
        judges,
        model.rk4_step,
        model.n_steps()?,
        &base,
        masks,
        true,
        traj,
    )?;
    let n = judges.len() as f64;
    let mut loss = 0.0;
    let dl: Vec<f64> = traj
        .x_final
        .iter()
        .zip(refs)
        .map(|(x, y)| {
            loss += (x - y) * (x - y);
            2.0 * (x - y) / n
        })
        .collect();
    let grad = net.backward(traj, &dl, model.rk4_step, rows, masks);
    Ok((loss / n, grad))
}

struct TrainingSet {
    judges: Vec<f64>,
    refs: Vec<f64>,
    rubrics: Vec<Option<u32>>,
}

fn training_set(anchors: &Dataset, rubric_aware: bool) -> Result<TrainingSet> {
    let rubrics: Vec<Option<u32>> = anchors.pairs.iter().map(|p| p.rubric_id).collect();
    if rubric_aware && rubrics.iter().any(Option::is_none) {
        return Err(Error::InvalidInput(
            "rubric-aware training needs a rubric id on every anchor".into(),
        ));
    }
    Ok(TrainingSet {
        judges: anchors.judges()?,
        refs: anchors.references(),
        rubrics,
    })
}

/// Trains from a fresh initialization and returns the model with the
/// per-epoch training loss.
pub fn train_with_history(
    anchors: &Dataset,
    cfg: &TrainConfig,
    stream: &RngStream,
    rubric_aware: bool,
) -> Result<(FlowModel, Vec<f64>)> {
    cfg.validate()?;
    if anchors.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "flow training needs at least 10 anchors, got {}",
            anchors.len()
        )));
    }
    let set = training_set(anchors, rubric_aware)?;
    let ids: Vec<u32> = if rubric_aware {
        set.rubrics.iter().flatten().copied().collect()
    } else {
        Vec::new()
    };
    let mut model = FlowModel::init(cfg, &ids, &stream.child("init"))?;
    let rows = model.rubric_rows(&set.rubrics)?;
    let mut mask_rng = stream.child("dropout").rng();
    let mut adam = Adam::new(model.n_params());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut traj = Trajectory::default();
    let n = set.judges.len();
    for epoch in 1..=cfg.epochs {
        let masks = (model.dropout_rate > 0.0)
            .then(|| BatchMasks::sample(n, model.hidden(), model.dropout_rate, &mut mask_rng));
        let (loss, grad) = match loss_and_grad(
            &model,
            &set.judges,
            &set.refs,
            rows.as_deref(),
            masks.as_ref(),
            &mut traj,
        ) {
            Err(Error::NonFiniteState { .. }) => return Err(Error::NonFiniteLoss { epoch }),
            other => other?,
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        adam.step(&mut model.params, &grad, cfg);
    }
    Ok((model, history))
}

pub fn train(
    anchors: &Dataset,
    cfg: &TrainConfig,
    stream: &RngStream,
    rubric_aware: bool,
) -> Result<FlowModel> {
    Ok(train_with_history(anchors, cfg, stream, rubric_aware)?.0)
}

/// Analytic loss gradient (dropout off) on the anchors.
pub fn loss_gradient(model: &FlowModel, anchors: &Dataset) -> Result<(f64, Vec<f64>)> {
    let set = training_set(anchors, model.is_conditioned())?;
    let rows = model.rubric_rows(&set.rubrics)?;
    loss_and_grad(
        model,
        &set.judges,
        &set.refs,
        rows.as_deref(),
        None,
        &mut Trajectory::default(),
    )
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences at step 1e-4, over every parameter.
///
/// Relative error is `|a - f| / max(|a|, |f|, 1e-6)`, so parameters with a
/// vanishing gradient are compared absolutely.
pub fn grad_check(model: &FlowModel, anchors: &Dataset) -> Result<f64> {
    if anchors.len() > 20 {
        return Err(Error::InvalidInput(
            "grad_check takes at most 20 anchors".into(),
        ));
    }
    let (_, analytic) = loss_gradient(model, anchors)?;
    let h = 1e-4;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..model.n_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = loss_gradient(&probe, anchors)?.0;
        probe.params[i] = orig - h;
        let down = loss_gradient(&probe, anchors)?.0;
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McDropoutResult {
    pub y_hat: f64,
    pub sigma_hat: f64,
    pub k: usize,
}

/// `k` dropout-active integrations of one item.
pub fn mc_correct(
    model: &FlowModel,
    j_star: f64,
    k: usize,
    stream: &RngStream,
    rubric: Option<u32>,
) -> Result<McDropoutResult> {
    Ok(mc_correct_batch(model, &[j_star], &[rubric], k, |_| stream.clone())?[0])
}

/// MC-dropout over a batch; item `i` draws its masks from `item_stream(i)`,
/// so results match per-item [`mc_correct`] calls on the same streams.
pub fn mc_correct_batch(
    model: &FlowModel,
    judges: &[f64],
    rubrics: &[Option<u32>],
    k: usize,
    item_stream: impl Fn(usize) -> RngStream,
) -> Result<Vec<McDropoutResult>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "MC-dropout needs at least 2 passes, got {k}"
        )));
    }
    if judges.len() != rubrics.len() {
        return Err(Error::InvalidInput(
            "judges and rubrics differ in length".into(),
        ));
    }
    let n = judges.len();
    let mut rngs: Vec<_> = (0..n).map(|i| item_stream(i).rng()).collect();
    let mut passes = vec![Vec::with_capacity(k); n];
    for _ in 0..k {
        let out = if model.dropout_rate > 0.0 {
            let masks: Vec<DropoutMask> = rngs.iter_mut().map(|r| model.sample_mask(r)).collect();
            let refs: Vec<&DropoutMask> = masks.iter().collect();
            model.integrate_batch(judges, rubrics, Some(&BatchMasks::stack(&refs)))?
        } else {
            model.integrate_batch(judges, rubrics, None)?
        };
        for (p, y) in passes.iter_mut().zip(out) {
            p.push(y);
        }
    }
    Ok(passes
        .iter()
        .map(|p| {
            if p.iter().all(|y| *y == p[0]) {
                return McDropoutResult {
                    y_hat: p[0],
                    sigma_hat: 0.0,
                    k,
                };
            }
            let mean = p.iter().sum::<f64>() / k as f64;
            let var = p.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
            McDropoutResult {
                y_hat: mean,
                sigma_hat: var.sqrt(),
                k,
            }
        })
        .collect())
}

/// MC-dropout corrections for a dataset, item `i` on `stream.substream(i)`.
pub fn mc_correct_dataset(
    model: &FlowModel,
    items: &Dataset,
    k: usize,
    stream: &RngStream,
) -> Result<Vec<McDropoutResult>> {
    let rubrics: Vec<Option<u32>> = if model.is_conditioned() {
        items.pairs.iter().map(|p| p.rubric_id).collect()
    } else {
        vec![None; items.len()]
    };
    mc_correct_batch(model, &items.judges()?, &rubrics, k, |i| {
        stream.substream(i as u64)
    })
}

/// Ids whose MC-dropout spread exceeds `threshold`, largest spread first.
pub fn triage(results: &[(String, McDropoutResult)], threshold: f64) -> Vec<String> {
    let mut flagged: Vec<&(String, McDropoutResult)> = results
        .iter()
        .filter(|(_, r)| r.sigma_hat > threshold)
        .collect();
    flagged.sort_by(|a, b| {
        b.1.sigma_hat
            .total_cmp(&a.1.sigma_hat)
            .then_with(|| a.0.cmp(&b.0))
    });
    flagged.into_iter().map(|(id, _)| id.clone()).collect()
}

impl Corrector for FlowModel {
    /// Deterministic flow output for an unconditioned model; NaN when the
    /// solve fails or the model needs a rubric id.
    fn correct(&self, judge: f64) -> f64 {
        integrate(self, judge, None, None).unwrap_or(f64::NAN)
    }

    fn correct_all(&self, judges: &[f64]) -> Vec<f64> {
        self.predict(judges, &vec![None; judges.len()])
            .unwrap_or_else(|_| vec![f64::NAN; judges.len()])
    }
}
