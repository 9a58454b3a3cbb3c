//! No-U-Turn Hamiltonian Monte Carlo with dual-averaging step size and
//! windowed diagonal mass-matrix adaptation.
//!
//! Trajectories are built by repeated doubling; the proposal is drawn
//! multinomially over the trajectory (uniformly within a subtree, biased
//! towards the new half when merging at the top level). Doubling stops when
//! the ends of the trajectory start to move back towards each other.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::SamplerConfig;

/// An unnormalized log density with its gradient on unconstrained `R^d`.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Energy change beyond which a trajectory is flagged divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    /// Diagonal of the inverse mass matrix.
    inv_mass: Vec<f64>,
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(pi, m)| pi * pi * m)
            .sum::<f64>()
    }

    fn energy(&self, pt: &Point) -> f64 {
        -pt.logp + self.kinetic(&pt.p)
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_mass).map(|(pi, m)| pi * m).collect()
    }

    fn leapfrog(&self, from: &Point, eps: f64) -> Point {
        let mut p: Vec<f64> = from
            .p
            .iter()
            .zip(&from.grad)
            .map(|(pi, g)| pi + 0.5 * eps * g)
            .collect();
        let q: Vec<f64> = from
            .q
            .iter()
            .zip(p.iter().zip(&self.inv_mass))
            .map(|(qi, (pi, m))| qi + eps * pi * m)
            .collect();
        let mut grad = vec![0.0; q.len()];
        let logp = self.target.log_density_and_grad(&q, &mut grad);
        for (pi, g) in p.iter_mut().zip(&grad) {
            *pi += 0.5 * eps * g;
        }
        Point { q, p, grad, logp }
    }

    fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.inv_mass
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                z / m.sqrt()
            })
            .collect()
    }
}

struct Tree {
    left: Point,
    right: Point,
    proposal: Point,
    log_weight: f64,
    n_steps: usize,
    accept_sum: f64,
    diverging: bool,
    turning: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Trajectory ends moving apart along both end velocities.
fn no_u_turn<T: LogDensity + ?Sized>(h: &Hamiltonian<'_, T>, left: &Point, right: &Point) -> bool {
    let dq: Vec<f64> = right.q.iter().zip(&left.q).map(|(a, b)| a - b).collect();
    let vl = h.velocity(&left.p);
    let vr = h.velocity(&right.p);
    let dl: f64 = dq.iter().zip(&vl).map(|(a, b)| a * b).sum();
    let dr: f64 = dq.iter().zip(&vr).map(|(a, b)| a * b).sum();
    dl >= 0.0 && dr >= 0.0
}

fn build_tree<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    h: &Hamiltonian<'_, T>,
    start: &Point,
    direction: f64,
    depth: usize,
    eps: f64,
    h0: f64,
    rng: &mut R,
) -> Tree {
    if depth == 0 {
        let next = h.leapfrog(start, direction * eps);
        let energy = h.energy(&next);
        let delta = if energy.is_finite() {
            energy - h0
        } else {
            f64::INFINITY
        };
        let diverging = delta > MAX_ENERGY_ERROR;
        let log_weight = if delta.is_finite() {
            -delta
        } else {
            f64::NEG_INFINITY
        };
        return Tree {
            left: next.clone(),
            right: next.clone(),
            proposal: next,
            log_weight,
            n_steps: 1,
            accept_sum: if delta.is_finite() {
                (-delta).exp().min(1.0)
            } else {
                0.0
            },
            diverging,
            turning: false,
        };
    }
    let first = build_tree(h, start, direction, depth - 1, eps, h0, rng);
    if first.diverging || first.turning {
        return first;
    }
    let edge = if direction > 0.0 {
        &first.right
    } else {
        &first.left
    };
    let second = build_tree(h, edge, direction, depth - 1, eps, h0, rng);
    let log_weight = log_add_exp(first.log_weight, second.log_weight);
    let take_second = second.log_weight > f64::NEG_INFINITY
        && rng.random::<f64>().ln() < second.log_weight - log_weight;
    let (left, right) = if direction > 0.0 {
        (first.left, second.right)
    } else {
        (second.left, first.right)
    };
    let turning = second.turning || !no_u_turn(h, &left, &right);
    Tree {
        proposal: if take_second {
            second.proposal
        } else {
            first.proposal
        },
        left,
        right,
        log_weight,
        n_steps: first.n_steps + second.n_steps,
        accept_sum: first.accept_sum + second.accept_sum,
        diverging: second.diverging,
        turning,
    }
}

struct Transition {
    point: Point,
    accept_stat: f64,
    diverging: bool,
    depth: usize,
}

fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    h: &Hamiltonian<'_, T>,
    current: &Point,
    eps: f64,
    max_depth: usize,
    rng: &mut R,
) -> Transition {
    let mut init = current.clone();
    init.p = h.sample_momentum(rng);
    let h0 = h.energy(&init);
    let mut left = init.clone();
    let mut right = init.clone();
    let mut proposal = init;
    let mut log_weight = 0.0;
    let mut n_steps = 0;
    let mut accept_sum = 0.0;
    let mut diverging = false;
    let mut depth = 0;
    while depth < max_depth {
        let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let edge = if direction > 0.0 { &right } else { &left };
        let sub = build_tree(h, edge, direction, depth, eps, h0, rng);
        depth += 1;
        n_steps += sub.n_steps;
        accept_sum += sub.accept_sum;
        if sub.diverging {
            diverging = true;
            break;
        }
        if sub.turning {
            break;
        }
        if rng.random::<f64>().ln() < sub.log_weight - log_weight {
            proposal = sub.proposal.clone();
        }
        log_weight = log_add_exp(log_weight, sub.log_weight);
        if direction > 0.0 {
            right = sub.right;
        } else {
            left = sub.left;
        }
        if !no_u_turn(h, &left, &right) {
            break;
        }
    }
    Transition {
        point: proposal,
        accept_stat: accept_sum / n_steps.max(1) as f64,
        diverging,
        depth,
    }
}

/// Nesterov dual averaging of `log(step size)`.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.count += 1.0;
        let w = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_eps = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.count.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

fn initial_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    h: &Hamiltonian<'_, T>,
    current: &Point,
    rng: &mut R,
) -> f64 {
    let mut eps: f64 = 0.1;
    let mut start = current.clone();
    start.p = h.sample_momentum(rng);
    let h0 = h.energy(&start);
    let log_ratio = |eps: f64| {
        let next = h.leapfrog(&start, eps);
        let e = h.energy(&next);
        if e.is_finite() {
            h0 - e
        } else {
            f64::NEG_INFINITY
        }
    };
    let up = log_ratio(eps) > 0.5f64.ln();
    for _ in 0..60 {
        let lr = log_ratio(eps);
        if up && lr <= 0.5f64.ln() {
            break;
        }
        if !up && lr > 0.5f64.ln() {
            break;
        }
        eps = if up { eps * 2.0 } else { eps / 2.0 };
    }
    eps
}

/// Warmup windows for the inverse-mass estimate: (start, end) draw indices.
fn adaptation_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    let (init, term, base) = if n_warmup < 20 {
        return Vec::new();
    } else if n_warmup < 150 {
        (
            (0.15 * n_warmup as f64) as usize,
            (0.1 * n_warmup as f64) as usize,
            0,
        )
    } else {
        (75, 50, 25)
    };
    let end = n_warmup - term;
    if base == 0 {
        return vec![(init, end)];
    }
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < end {
        let mut stop = start + size;
        // fold a short remainder into the last window
        if stop + 2 * size > end {
            stop = end;
        }
        windows.push((start, stop));
        start = stop;
        size *= 2;
    }
    windows
}

/// One chain's post-warmup draws in unconstrained space.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub divergences: usize,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub mean_tree_depth: f64,
}

/// Runs one chain from `init`.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    stream: &RngStream,
) -> Result<ChainOutput> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::InvalidInput(format!(
            "initial point has {} coordinates, target has {dim}",
            init.len()
        )));
    }
    let mut rng = stream.rng();
    let mut h = Hamiltonian {
        target,
        inv_mass: vec![1.0; dim],
    };
    let mut grad = vec![0.0; dim];
    let logp = target.log_density_and_grad(init, &mut grad);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("log density at the initial point".into()));
    }
    let mut current = Point {
        q: init.to_vec(),
        p: vec![0.0; dim],
        grad,
        logp,
    };

    let mut eps = initial_step_size(&h, &current, &mut rng);
    let mut adapt = DualAveraging::new(eps, cfg.target_accept);
    let windows = adaptation_windows(cfg.n_warmup);
    let mut window_draws: Vec<Vec<f64>> = Vec::new();

    for it in 0..cfg.n_warmup {
        let t = transition(&h, &current, eps, cfg.max_tree_depth, &mut rng);
        current = t.point;
        eps = adapt.update(t.accept_stat);
        if let Some(&(start, stop)) = windows.iter().find(|(s, e)| (*s..*e).contains(&it)) {
            window_draws.push(current.q.clone());
            if it + 1 == stop {
                let n = window_draws.len() as f64;
                if n >= 3.0 {
                    for d in 0..dim {
                        let m = window_draws.iter().map(|x| x[d]).sum::<f64>() / n;
                        let var = window_draws.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>()
                            / (n - 1.0);
                        // shrink towards a small constant as in Stan
                        h.inv_mass[d] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                    }
                }
                window_draws.clear();
                eps = initial_step_size(&h, &current, &mut rng);
                adapt = DualAveraging::new(eps, cfg.target_accept);
                let _ = start;
            }
        }
    }
    if cfg.n_warmup > 0 {
        eps = adapt.final_step();
    }

    let mut draws = Vec::with_capacity(cfg.n_draws);
    let mut divergences = 0;
    let mut depth_sum = 0usize;
    for _ in 0..cfg.n_draws {
        let t = transition(&h, &current, eps, cfg.max_tree_depth, &mut rng);
        current = t.point;
        divergences += usize::from(t.diverging);
        depth_sum += t.depth;
        draws.push(current.q.clone());
    }
    Ok(ChainOutput {
        draws,
        divergences,
        step_size: eps,
        inv_mass: h.inv_mass,
        mean_tree_depth: depth_sum as f64 / cfg.n_draws.max(1) as f64,
    })
}

/// Runs `cfg.n_chains` chains, chain `c` on substream `c` of `stream`.
///
/// Fails when more than 10% of post-warmup transitions diverged.
pub fn sample<T: LogDensity + ?Sized>(
    target: &T,
    inits: &[Vec<f64>],
    cfg: &SamplerConfig,
    stream: &RngStream,
) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    if inits.len() != cfg.n_chains {
        return Err(Error::InvalidInput(format!(
            "{} initial points for {} chains",
            inits.len(),
            cfg.n_chains
        )));
    }
    let chains = inits
        .iter()
        .enumerate()
        .map(|(c, init)| run_chain(target, init, cfg, &stream.substream(c as u64)))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    let divergent: usize = chains.iter().map(|c| c.divergences).sum();
    let rate = divergent as f64 / total.max(1) as f64;
    if rate > 0.10 {
        return Err(Error::Divergences { rate });
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent normals with the given means and sds.
    struct Gaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }

        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let z = (x[i] - self.mean[i]) / self.sd[i];
                lp -= 0.5 * z * z;
                grad[i] = -z / self.sd[i];
            }
            lp
        }
    }

    #[test]
    fn windows_cover_the_slow_phase() {
        let w = adaptation_windows(500);
        assert_eq!(w.first().unwrap().0, 75);
        assert_eq!(w.last().unwrap().1, 450);
        assert!(w.windows(2).all(|p| p[0].1 == p[1].0));
        assert!(adaptation_windows(10).is_empty());
        assert_eq!(adaptation_windows(100), vec![(15, 90)]);
    }

    #[test]
    fn recovers_badly_scaled_gaussian() {
        let target = Gaussian {
            mean: vec![1.0, -3.0],
            sd: vec![0.05, 20.0],
        };
        let cfg = SamplerConfig {
            n_draws: 2000,
            ..SamplerConfig::default()
        };
        let inits = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let chains = sample(&target, &inits, &cfg, &RngStream::new(1, "nuts")).unwrap();
        for d in 0..2 {
            let xs: Vec<f64> = chains
                .iter()
                .flat_map(|c| c.draws.iter().map(move |x| x[d]))
                .collect();
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            let se = target.sd[d] / n.sqrt();
            assert!((m - target.mean[d]).abs() < 5.0 * se, "dim {d}: mean {m}");
            assert!((sd / target.sd[d] - 1.0).abs() < 0.1, "dim {d}: sd {sd}");
        }
        // the adapted metric should track the target scales
        let ratio = chains[0].inv_mass[1] / chains[0].inv_mass[0];
        assert!(ratio > 1e4, "inv mass ratio {ratio}");
    }

    #[test]
    fn same_stream_same_draws() {
        let target = Gaussian {
            mean: vec![0.0],
            sd: vec![1.0],
        };
        let cfg = SamplerConfig {
            n_draws: 50,
            n_warmup: 50,
            ..SamplerConfig::default()
        };
        let s = RngStream::new(3, "nuts");
        let a = run_chain(&target, &[0.5], &cfg, &s).unwrap();
        let b = run_chain(&target, &[0.5], &cfg, &s).unwrap();
        assert_eq!(a.draws, b.draws);
    }
}
