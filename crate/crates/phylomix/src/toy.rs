//! Two-level hierarchical categorical targets and mixture approximations:
//! a fully enumerable testbed for the mixture bound and its VIMCO
//! gradients. Targets draw their probabilities from Dirichlet(0.5); the
//! approximations are trained with plain stochastic gradient ascent.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::objective::{score_coefficient, signals_from_scores, LearningSignals};
use crate::rng::stream_rng;

/// p(z1, z2) = p(z2|z1) p(z1) with categorical levels.
#[derive(Debug, Clone)]
pub struct HierTarget {
    pub p1: Vec<f64>,
    pub p2: Vec<Vec<f64>>,
}

impl HierTarget {
    pub fn n1(&self) -> usize {
        self.p1.len()
    }

    pub fn n2(&self) -> usize {
        self.p2[0].len()
    }

    pub fn prob(&self, z1: usize, z2: usize) -> f64 {
        self.p1[z1] * self.p2[z1][z2]
    }

    pub fn log_prob(&self, z1: usize, z2: usize) -> f64 {
        self.prob(z1, z2).ln()
    }
}

fn dirichlet<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(0.5, 1.0).expect("valid shape");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Draw a target with Dirichlet(0.5) level probabilities, deterministic per
/// seed.
pub fn make_target(n1: usize, n2: usize, seed: u64) -> Result<HierTarget> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::Contract(format!("levels need >= 2 categories, got {n1}x{n2}")));
    }
    let mut rng = stream_rng(seed, &[0x70]);
    let p1 = dirichlet(n1, &mut rng);
    let p2 = (0..n1).map(|_| dirichlet(n2, &mut rng)).collect();
    Ok(HierTarget { p1, p2 })
}

/// One mixture component: logits for q(z1) and for each row of q(z2|z1).
#[derive(Debug, Clone)]
pub struct HierComponent {
    pub logits1: Vec<f64>,
    pub logits2: Vec<Vec<f64>>,
}

impl HierComponent {
    pub fn uniform(n1: usize, n2: usize) -> Self {
        Self { logits1: vec![0.0; n1], logits2: vec![vec![0.0; n2]; n1] }
    }

    pub fn n_params(&self) -> usize {
        self.logits1.len() + self.logits1.len() * self.logits2[0].len()
    }

    pub fn log_prob(&self, z1: usize, z2: usize) -> f64 {
        let l1 = self.logits1[z1] - log_sum_exp(&self.logits1);
        let l2 = self.logits2[z1][z2] - log_sum_exp(&self.logits2[z1]);
        l1 + l2
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let draw = |logits: &[f64], rng: &mut R| -> usize {
            let z = log_sum_exp(logits);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &l) in logits.iter().enumerate() {
                acc += (l - z).exp();
                if u < acc {
                    return i;
                }
            }
            logits.len() - 1
        };
        let z1 = draw(&self.logits1, rng);
        let z2 = draw(&self.logits2[z1], rng);
        (z1, z2)
    }

    /// Flat parameter order: logits1, then logits2 row by row.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.logits1.clone();
        for row in &self.logits2 {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn unflatten(n1: usize, n2: usize, flat: &[f64]) -> Self {
        let logits1 = flat[..n1].to_vec();
        let logits2 = (0..n1).map(|i| flat[n1 + i * n2..n1 + (i + 1) * n2].to_vec()).collect();
        Self { logits1, logits2 }
    }

    /// grad log q(z1,z2): indicator minus softmax on the touched rows.
    fn accumulate_score(&self, z1: usize, z2: usize, w: f64, acc: &mut [f64]) {
        let n1 = self.logits1.len();
        let n2 = self.logits2[0].len();
        let zl1 = log_sum_exp(&self.logits1);
        for i in 0..n1 {
            acc[i] += w * (f64::from(u8::from(i == z1)) - (self.logits1[i] - zl1).exp());
        }
        let zl2 = log_sum_exp(&self.logits2[z1]);
        for j in 0..n2 {
            acc[n1 + z1 * n2 + j] +=
                w * (f64::from(u8::from(j == z2)) - (self.logits2[z1][j] - zl2).exp());
        }
    }
}

/// A uniformly weighted mixture of two-level categorical approximations.
#[derive(Debug, Clone)]
pub struct HierApprox {
    pub components: Vec<HierComponent>,
}

impl HierApprox {
    pub fn uniform(s: usize, n1: usize, n2: usize) -> Self {
        Self { components: (0..s).map(|_| HierComponent::uniform(n1, n2)).collect() }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn mixture_log_prob(&self, z1: usize, z2: usize) -> f64 {
        let lqs: Vec<f64> = self.components.iter().map(|c| c.log_prob(z1, z2)).collect();
        log_sum_exp(&lqs) - (self.components.len() as f64).ln()
    }
}

/// Exact KL(q_mix || p) over all states; infinite when the target has a
/// zero where the mixture does not.
pub fn kl_q_to_p(approx: &HierApprox, target: &HierTarget) -> f64 {
    let mut kl = 0.0;
    for z1 in 0..target.n1() {
        for z2 in 0..target.n2() {
            let lq = approx.mixture_log_prob(z1, z2);
            let q = lq.exp();
            let p = target.prob(z1, z2);
            if q == 0.0 {
                continue;
            }
            if p == 0.0 {
                return f64::INFINITY;
            }
            kl += q * (lq - p.ln());
        }
    }
    kl
}

/// Exact KL(p || q_mix), excluding target-zero states.
pub fn kl_p_to_q(approx: &HierApprox, target: &HierTarget) -> f64 {
    let mut kl = 0.0;
    for z1 in 0..target.n1() {
        for z2 in 0..target.n2() {
            let p = target.prob(z1, z2);
            if p == 0.0 {
                continue;
            }
            kl += p * (p.ln() - approx.mixture_log_prob(z1, z2));
        }
    }
    kl
}

/// Grid-searched learning rates for S = 1..=5; larger mixtures reuse the
/// top rate.
pub fn default_lr(s: usize) -> f64 {
    const LRS: [f64; 5] = [0.01, 0.1, 0.1, 0.2, 0.25];
    LRS[s.clamp(1, 5) - 1]
}

/// One VIMCO gradient batch for the toy: K samples per component, no branch
/// terms (f = p / q_mix), beta = 1. Returns per-component flat gradients
/// and the signals.
pub fn toy_vimco_grads<R: Rng>(
    approx: &HierApprox,
    target: &HierTarget,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, LearningSignals)> {
    let s = approx.n_components();
    let mut draws = vec![Vec::with_capacity(k); s];
    let mut log_target = vec![Vec::with_capacity(k); s];
    let mut log_q = vec![Vec::with_capacity(k); s];
    for (si, comp) in approx.components.iter().enumerate() {
        for _ in 0..k {
            let (z1, z2) = comp.sample(rng);
            draws[si].push((z1, z2));
            log_target[si].push(target.log_prob(z1, z2));
            log_q[si].push(approx.components.iter().map(|c| c.log_prob(z1, z2)).collect());
        }
    }
    let sig = signals_from_scores(&log_target, &log_q)?;
    let n = approx.components[0].n_params();
    let mut grads = vec![vec![0.0; n]; s];
    for si in 0..s {
        for ki in 0..k {
            let (z1, z2) = draws[si][ki];
            for i in 0..s {
                let c = score_coefficient(&sig, i, si, ki);
                if c != 0.0 {
                    approx.components[i].accumulate_score(z1, z2, c, &mut grads[i]);
                }
            }
        }
    }
    Ok((grads, sig))
}

/// Importance estimate of the toy's log normalizer (which is zero): the
/// log-mean of p/q_mix over draws from the mixture.
pub fn toy_marginal_estimate<R: Rng>(
    approx: &HierApprox,
    target: &HierTarget,
    n: usize,
    rng: &mut R,
) -> f64 {
    let s = approx.n_components();
    let ratios: Vec<f64> = (0..n)
        .map(|_| {
            let comp = &approx.components[rng.gen_range(0..s)];
            let (z1, z2) = comp.sample(rng);
            target.log_prob(z1, z2) - approx.mixture_log_prob(z1, z2)
        })
        .collect();
    log_sum_exp(&ratios) - (n as f64).ln()
}

/// Result of a toy training run: final approximation, exact-KL curve
/// sampled every `KL_EVERY` iterations, and the KL at initialization.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub approx: HierApprox,
    pub curve: Vec<(u64, f64)>,
    pub initial_kl: f64,
}

pub const KL_EVERY: u64 = 100;

/// Train a uniform-initialized mixture with the VIMCO estimator and plain
/// SGD, logging exact KL(q_mix || p) every hundred iterations.
pub fn train_toy(
    target: &HierTarget,
    s: usize,
    k: usize,
    iters: u64,
    lr: f64,
    seed: u64,
) -> Result<ToyRun> {
    if s < 1 {
        return Err(Error::Contract("need at least one component".into()));
    }
    if k < 2 {
        return Err(Error::BaselineUndefined(format!("toy training needs K >= 2, got {k}")));
    }
    let mut approx = HierApprox::uniform(s, target.n1(), target.n2());
    let initial_kl = kl_q_to_p(&approx, target);
    let mut curve = Vec::new();
    for iter in 1..=iters {
        let mut rng = stream_rng(seed, &[0x71, iter]);
        let (grads, _) = toy_vimco_grads(&approx, target, k, &mut rng)?;
        for (comp, grad) in approx.components.iter_mut().zip(&grads) {
            let mut flat = comp.flatten();
            for (p, g) in flat.iter_mut().zip(grad) {
                *p += lr * g;
            }
            *comp = HierComponent::unflatten(target.n1(), target.n2(), &flat);
        }
        if iter % KL_EVERY == 0 {
            curve.push((iter, kl_q_to_p(&approx, target)));
        }
    }
    Ok(ToyRun { approx, curve, initial_kl })
}
