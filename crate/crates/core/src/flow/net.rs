//! The drift MLP `[x, t, embedding] -> 64 -> 64 -> 1` evaluated over a batch
//! of items, and the RK4 solve unrolled for reverse-mode differentiation.
//!
//! Matrices are row-major. `W1` is `hidden x in_dim`, `W2` is
//! `hidden x hidden`, and all parameters live in one flat vector so the
//! optimizer and gradient checks see a single array.

use rand::Rng;

use crate::error::{Error, Result};

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub in_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub n_rubrics: usize,
}

impl Layout {
    pub fn w1(&self) -> usize {
        0
    }
    pub fn b1(&self) -> usize {
        self.hidden * self.in_dim
    }
    pub fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    pub fn b2(&self) -> usize {
        self.w2() + self.hidden * self.hidden
    }
    pub fn w3(&self) -> usize {
        self.b2() + self.hidden
    }
    pub fn b3(&self) -> usize {
        self.w3() + self.hidden
    }
    pub fn emb(&self) -> usize {
        self.b3() + 1
    }
    pub fn len(&self) -> usize {
        self.emb() + self.n_rubrics * self.embed_dim
    }
}

/// Per-item inverted-dropout masks for both hidden layers, `n x hidden`.
/// Entries are 0 or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMasks {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl BatchMasks {
    pub(crate) fn sample<R: Rng + ?Sized>(n: usize, hidden: usize, p: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        let m1 = draw(n * hidden);
        let m2 = draw(n * hidden);
        Self { m1, m2 }
    }

    /// Stacks single-item masks into a batch.
    pub(crate) fn stack(items: &[&BatchMasks]) -> Self {
        Self {
            m1: items.iter().flat_map(|m| m.m1.iter().copied()).collect(),
            m2: items.iter().flat_map(|m| m.m2.iter().copied()).collect(),
        }
    }
}

/// Forward trajectory of a batch. With caching on it keeps, for every RK4
/// stage, the stage input, its time and both hidden activations before
/// masking; buffers are reused across calls.
#[derive(Debug, Default)]
pub(crate) struct Trajectory {
    pub x_final: Vec<f64>,
    n: usize,
    n_stages: usize,
    u: Vec<f64>,
    t: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
}

/// Parameter view used by the batched kernels.
pub(crate) struct Net<'a> {
    pub layout: &'a Layout,
    pub params: &'a [f64],
}

/// `c = a * b + beta * c` for row-major operands given as (rows, cols,
/// row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the assertions above keep every strided access of `a`, `b`
    // and the row-major `c` in bounds; `c` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `exp(x)` for `|x| <= 40`, written so the compiler can vectorize it:
/// round to the nearest power of two, a degree-12 Taylor polynomial on the
/// remainder, and the power of two assembled from its exponent bits.
#[inline(always)]
fn exp_small(x: f64) -> f64 {
    const MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let shifted = x * std::f64::consts::LOG2_E + MAGIC;
    let k = shifted - MAGIC;
    let r = x - k * LN2_HI - k * LN2_LO;
    let ki = shifted.to_bits().wrapping_sub(MAGIC.to_bits());
    let scale = f64::from_bits(ki.wrapping_add(1023) << 52);
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * scale
}

#[inline(always)]
fn tanh_kernel(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        let e = exp_small(2.0 * x.clamp(-20.0, 20.0));
        *x = (e - 1.0) / (e + 1.0);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tanh_avx2(xs: &mut [f64]) {
    tanh_kernel(xs)
}

/// In-place `tanh`, accurate to a few ulps in absolute terms.
fn tanh_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { tanh_avx2(xs) };
        return;
    }
    tanh_kernel(xs)
}

fn ones_masks(n: usize, h: usize) -> BatchMasks {
    BatchMasks {
        m1: vec![1.0; n * h],
        m2: vec![1.0; n * h],
    }
}

impl Net<'_> {
    /// Weights of the `x` and `t` inputs of the first layer.
    fn input_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let w = &self.params[l.w1()..l.b1()];
        let wx = w.chunks_exact(l.in_dim).map(|r| r[0]).collect();
        let wt = w.chunks_exact(l.in_dim).map(|r| r[1]).collect();
        (wx, wt)
    }

    /// Bias plus embedding contribution of the first layer, `n x hidden`.
    /// It is constant over the whole solve.
    pub fn input_base(&self, rubric_rows: Option<&[usize]>, n: usize) -> Vec<f64> {
        let l = self.layout;
        let h = l.hidden;
        let b1 = &self.params[l.b1()..l.b1() + h];
        let mut base = Vec::with_capacity(n * h);
        for i in 0..n {
            match rubric_rows {
                Some(rows) => {
                    let e = &self.params[l.emb() + rows[i] * l.embed_dim..][..l.embed_dim];
                    for k in 0..h {
                        let w = &self.params[l.w1() + k * l.in_dim + 2..][..l.embed_dim];
                        base.push(b1[k] + w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>());
                    }
                }
                None => base.extend_from_slice(b1),
            }
        }
        base
    }

    /// Drift at states `u` and time `t`. Writes the unmasked hidden
    /// activations into `a1`, `a2` and the outputs into `out`; `h1` is
    /// scratch.
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        u: &[f64],
        t: f64,
        base: &[f64],
        masks: &BatchMasks,
        (wx, wt): (&[f64], &[f64]),
        a1: &mut [f64],
        a2: &mut [f64],
        h1: &mut [f64],
        out: &mut [f64],
    ) {
        let l = self.layout;
        let h = l.hidden;
        let n = u.len();
        let p = self.params;
        let rows = a1
            .chunks_exact_mut(h)
            .zip(h1.chunks_exact_mut(h))
            .zip(base.chunks_exact(h))
            .zip(masks.m1.chunks_exact(h))
            .zip(u);
        for ((((row, hrow), brow), mrow), &ui) in rows {
            for (((z, &b), &wx), &wt) in row.iter_mut().zip(brow).zip(wx).zip(wt) {
                *z = b + wx * ui + wt * t;
            }
            tanh_in_place(row);
            for ((o, &a), &m) in hrow.iter_mut().zip(row.iter()).zip(mrow) {
                *o = a * m;
            }
        }
        let b2 = &p[l.b2()..l.b2() + h];
        for row in a2.chunks_exact_mut(h) {
            row.copy_from_slice(b2);
        }
        // z2 = h1 W2^T + b2
        gemm(n, h, h, h1, h, 1, &p[l.w2()..l.b2()], 1, h, 1.0, a2);
        let w3 = &p[l.w3()..l.w3() + h];
        let b3 = p[l.b3()];
        for ((o, row), mrow) in out
            .iter_mut()
            .zip(a2.chunks_exact_mut(h))
            .zip(masks.m2.chunks_exact(h))
        {
            tanh_in_place(row);
            let mut s = 0.0;
            for ((&a, &m), &w) in row.iter().zip(mrow).zip(w3) {
                s += a * m * w;
            }
            *o = b3 + s;
        }
    }

    /// Drift outputs only.
    pub fn drift(&self, u: &[f64], t: f64, base: &[f64], masks: Option<&BatchMasks>) -> Vec<f64> {
        let n = u.len();
        let h = self.layout.hidden;
        let ones;
        let masks = match masks {
            Some(m) => m,
            None => {
                ones = ones_masks(n, h);
                &ones
            }
        };
        let (wx, wt) = self.input_weights();
        let mut a1 = vec![0.0; n * h];
        let mut a2 = vec![0.0; n * h];
        let mut h1 = vec![0.0; n * h];
        let mut out = vec![0.0; n];
        self.eval(
            u,
            t,
            base,
            masks,
            (&wx, &wt),
            &mut a1,
            &mut a2,
            &mut h1,
            &mut out,
        );
        out
    }

    /// Classical RK4 from `x0` over `t in [0, 1]` in steps of `step`.
    pub fn integrate(
        &self,
        x0: &[f64],
        step: f64,
        n_steps: usize,
        base: &[f64],
        masks: Option<&BatchMasks>,
        keep_cache: bool,
    ) -> Result<Trajectory> {
        let mut traj = Trajectory::default();
        self.integrate_into(x0, step, n_steps, base, masks, keep_cache, &mut traj)?;
        Ok(traj)
    }

    /// As [`Net::integrate`], reusing the buffers of `traj`.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate_into(
        &self,
        x0: &[f64],
        step: f64,
        n_steps: usize,
        base: &[f64],
        masks: Option<&BatchMasks>,
        keep_cache: bool,
        traj: &mut Trajectory,
    ) -> Result<()> {
        let n = x0.len();
        let h = self.layout.hidden;
        let ones;
        let masks = match masks {
            Some(m) => m,
            None => {
                ones = ones_masks(n, h);
                &ones
            }
        };
        let slots = if keep_cache { 4 * n_steps } else { 1 };
        traj.n = n;
        traj.n_stages = if keep_cache { 4 * n_steps } else { 0 };
        traj.u.resize(slots * n, 0.0);
        traj.t.resize(slots, 0.0);
        traj.a1.resize(slots * n * h, 0.0);
        traj.a2.resize(slots * n * h, 0.0);
        traj.x_final.clear();
        traj.x_final.extend_from_slice(x0);

        let (wx, wt) = self.input_weights();
        let mut h1 = vec![0.0; n * h];
        let mut ks = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let offsets = [0.0, 0.5, 0.5, 1.0];
        for s in 0..n_steps {
            let t0 = s as f64 * step;
            for stage in 0..4 {
                let slot = if keep_cache { 4 * s + stage } else { 0 };
                let u = &mut traj.u[slot * n..(slot + 1) * n];
                if stage == 0 {
                    u.copy_from_slice(&traj.x_final);
                } else {
                    let c = offsets[stage] * step;
                    for ((u, &x), &k) in u.iter_mut().zip(&traj.x_final).zip(&ks[stage - 1]) {
                        *u = x + c * k;
                    }
                }
                let t = t0 + offsets[stage] * step;
                traj.t[slot] = t;
                let span = slot * n * h..(slot + 1) * n * h;
                self.eval(
                    &traj.u[slot * n..(slot + 1) * n],
                    t,
                    base,
                    masks,
                    (&wx, &wt),
                    &mut traj.a1[span.clone()],
                    &mut traj.a2[span],
                    &mut h1,
                    &mut ks[stage],
                );
            }
            for (i, x) in traj.x_final.iter_mut().enumerate() {
                *x += step / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
            }
            if traj.x_final.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: s + 1 });
            }
        }
        Ok(())
    }

    /// Gradient of `sum_i dl_dx[i] * x_final[i]` with respect to every
    /// parameter, by reverse-mode through the unrolled solve. `traj` must
    /// come from a cached forward pass with the same masks.
    pub fn backward(
        &self,
        traj: &Trajectory,
        dl_dx: &[f64],
        step: f64,
        rubric_rows: Option<&[usize]>,
        masks: Option<&BatchMasks>,
    ) -> Vec<f64> {
        let l = self.layout;
        let h = l.hidden;
        let n = dl_dx.len();
        assert_eq!(n, traj.n, "adjoint and trajectory sizes differ");
        let ones;
        let masks = match masks {
            Some(m) => m,
            None => {
                ones = ones_masks(n, h);
                &ones
            }
        };
        let p = self.params;
        let (wx, _) = self.input_weights();
        let w3 = &p[l.w3()..l.w3() + h];
        let w2 = &p[l.w2()..l.b2()];

        let mut grad = vec![0.0; l.len()];
        let mut g_wx = vec![0.0; h];
        let mut g_wt = vec![0.0; h];
        let mut g_w3 = vec![0.0; h];
        let mut g_b2 = vec![0.0; h];
        let mut g_b3 = 0.0;
        let mut dbase = vec![0.0; n * h];
        let mut dz2 = vec![0.0; n * h];
        let mut dz1 = vec![0.0; n * h];
        let mut h1 = vec![0.0; n * h];
        let mut du = vec![0.0; n];
        let mut adj = dl_dx.to_vec();
        let mut dk = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let weights = [step / 6.0, step / 3.0, step / 3.0, step / 6.0];
        // stage inputs: u1 = x, u2 = x + h/2 k1, u3 = x + h/2 k2, u4 = x + h k3
        let coef = [0.0, 0.5 * step, 0.5 * step, step];

        for s in (0..traj.n_stages / 4).rev() {
            for (d, w) in dk.iter_mut().zip(weights) {
                for (d, &a) in d.iter_mut().zip(&adj) {
                    *d = a * w;
                }
            }
            for stage in (0..4).rev() {
                let slot = 4 * s + stage;
                let span = slot * n * h..(slot + 1) * n * h;
                let a1 = &traj.a1[span.clone()];
                let a2 = &traj.a2[span];
                let u = &traj.u[slot * n..(slot + 1) * n];
                let t = traj.t[slot];
                let g = &dk[stage];

                let rows = dz2
                    .chunks_exact_mut(h)
                    .zip(h1.chunks_exact_mut(h))
                    .zip(a2.chunks_exact(h).zip(masks.m2.chunks_exact(h)))
                    .zip(a1.chunks_exact(h).zip(masks.m1.chunks_exact(h)))
                    .zip(g);
                for ((((drow, hrow), (arow, mrow)), (a1row, m1row)), &gi) in rows {
                    g_b3 += gi;
                    for k in 0..h {
                        let (a, m) = (arow[k], mrow[k]);
                        let am = a * m;
                        g_w3[k] += gi * am;
                        let d = gi * w3[k] * (m - a * am);
                        drow[k] = d;
                        g_b2[k] += d;
                        hrow[k] = a1row[k] * m1row[k];
                    }
                }
                // dW2 += dz2^T h1
                gemm(
                    h,
                    n,
                    h,
                    &dz2,
                    1,
                    h,
                    &h1,
                    h,
                    1,
                    1.0,
                    &mut grad[l.w2()..l.b2()],
                );
                // dh1 = dz2 W2
                gemm(n, h, h, &dz2, h, 1, w2, h, 1, 0.0, &mut dz1);
                for (i, (((drow, arow), mrow), brow)) in dz1
                    .chunks_exact_mut(h)
                    .zip(a1.chunks_exact(h))
                    .zip(masks.m1.chunks_exact(h))
                    .zip(dbase.chunks_exact_mut(h))
                    .enumerate()
                {
                    let ui = u[i];
                    let mut acc = 0.0;
                    for k in 0..h {
                        let a = arow[k];
                        let d = drow[k] * mrow[k] * (1.0 - a * a);
                        brow[k] += d;
                        g_wx[k] += d * ui;
                        g_wt[k] += d * t;
                        acc += d * wx[k];
                    }
                    du[i] = acc;
                }
                for (a, &d) in adj.iter_mut().zip(&du) {
                    *a += d;
                }
                if stage > 0 {
                    let c = coef[stage];
                    for (k, &d) in dk[stage - 1].iter_mut().zip(&du) {
                        *k += c * d;
                    }
                }
            }
        }

        for k in 0..h {
            let w = l.w1() + k * l.in_dim;
            grad[w] += g_wx[k];
            grad[w + 1] += g_wt[k];
        }
        grad[l.w3()..l.w3() + h].copy_from_slice(&g_w3);
        grad[l.b3()] = g_b3;
        let b1 = l.b1();
        for brow in dbase.chunks_exact(h) {
            for (k, &d) in brow.iter().enumerate() {
                grad[b1 + k] += d;
            }
        }
        grad[l.b2()..l.b2() + h].copy_from_slice(&g_b2);
        if let Some(rows) = rubric_rows {
            let e = l.embed_dim;
            for (brow, &row) in dbase.chunks_exact(h).zip(rows) {
                let emb = l.emb() + row * e;
                for (k, &d) in brow.iter().enumerate() {
                    let w = l.w1() + k * l.in_dim + 2;
                    for c in 0..e {
                        grad[w + c] += d * p[emb + c];
                        grad[emb + c] += d * p[w + c];
                    }
                }
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_std() {
        let mut xs: Vec<f64> = (-4000..=4000).map(|i| i as f64 / 100.0).collect();
        xs.extend([0.0, -0.0, 1e-300, 700.0, -700.0]);
        let expect: Vec<f64> = xs.iter().map(|x| x.tanh()).collect();
        tanh_in_place(&mut xs);
        for (a, b) in xs.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }
}
