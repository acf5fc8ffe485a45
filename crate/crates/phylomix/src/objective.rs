//! The estimators: multi-sample importance-weighted bounds, the mixture
//! bound over stratified per-component samples, the mixture VIMCO gradient
//! with per-sample leave-one-out baselines, and the evaluation metrics
//! (importance-sampled marginal likelihood, KL against a reference
//! posterior).
//!
//! Everything is computed in log space; sums over particles and components
//! go through log-sum-exp. The signal layer below is shared with the
//! discrete-toy experiment, which has no branch terms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodEngine, PriorConfig};
use crate::math::log_sum_exp;
use crate::mixture::MixtureApprox;
use crate::rng::stream_rng;
use crate::sbn::TopologyRecords;
use crate::topology::{EdgeContext, Topology};

/// One sampled (topology, branches) draw with every quantity the
/// estimators need, including per-component densities.
#[derive(Debug, Clone)]
pub struct Particle {
    pub topology: Topology,
    pub records: TopologyRecords,
    pub ctxs: Vec<EdgeContext>,
    pub lengths: Vec<f64>,
    pub eps: Vec<f64>,
    pub log_lik: f64,
    pub log_prior: f64,
    pub log_q_topo: Vec<f64>,
    pub log_q_branch: Vec<f64>,
}

/// K particles per component, drawn component-wise.
#[derive(Debug, Clone)]
pub struct ParticleBatch {
    pub particles: Vec<Vec<Particle>>,
}

impl ParticleBatch {
    pub fn n_components(&self) -> usize {
        self.particles.len()
    }

    pub fn k(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }
}

/// Assemble a particle from a drawn topology and branch lengths, caching
/// the likelihood, prior and all per-component densities.
pub fn particle_from_draw(
    m: &MixtureApprox,
    engine: &LikelihoodEngine,
    prior: &PriorConfig,
    topology: Topology,
    lengths: Vec<f64>,
    eps: Vec<f64>,
) -> Result<Particle> {
    let records = m.support().index_topology(&topology)?;
    if records.n_valid() == 0 {
        return Err(Error::InvalidParticle(
            "every component assigns zero support to the particle's topology".into(),
        ));
    }
    let ctxs = topology.edge_contexts()?;
    let log_lik = engine.log_likelihood_lengths(&topology, &lengths)?;
    let log_prior = prior.log_prior_lengths(topology.n_taxa(), &lengths);
    let log_q_topo = m.component_log_probs(&records)?;
    let log_q_branch = m
        .components()
        .iter()
        .map(|c| c.branch.log_density_lengths(&ctxs, &lengths))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Particle { topology, records, ctxs, lengths, eps, log_lik, log_prior, log_q_topo, log_q_branch })
}

/// Draw K particles from each component. `rng_for(s, k)` supplies an
/// independent stream per particle so evaluation may run in parallel.
pub fn sample_batch<F>(
    m: &MixtureApprox,
    engine: &LikelihoodEngine,
    prior: &PriorConfig,
    k: usize,
    rng_for: F,
) -> Result<ParticleBatch>
where
    F: Fn(usize, usize) -> ChaCha8Rng + Sync,
{
    if k == 0 {
        return Err(Error::Contract("batch needs at least one particle".into()));
    }
    let s = m.n_components();
    let flat: Vec<Particle> = (0..s * k)
        .into_par_iter()
        .map(|idx| {
            let (si, ki) = (idx / k, idx % k);
            let mut rng = rng_for(si, ki);
            let comp = m.component(si);
            let topology = comp.sbn.sample(&mut rng);
            let ctxs = topology.edge_contexts()?;
            let (lengths, eps) = comp.branch.sample_branches(&ctxs, &mut rng)?;
            particle_from_draw(m, engine, prior, topology, lengths, eps)
        })
        .collect::<Result<_>>()?;
    let mut particles: Vec<Vec<Particle>> = Vec::with_capacity(s);
    let mut it = flat.into_iter();
    for _ in 0..s {
        particles.push(it.by_ref().take(k).collect());
    }
    Ok(ParticleBatch { particles })
}

/// The log importance weight of Eq.-style f: annealed data likelihood plus
/// priors over the uniform mixture density. Annealing scales only the data
/// likelihood.
pub fn log_f(m: &MixtureApprox, p: &Particle, beta: f64) -> f64 {
    let joint: Vec<f64> =
        p.log_q_topo.iter().zip(&p.log_q_branch).map(|(&t, &b)| t + b).collect();
    let mix = log_sum_exp(&joint) - m.ln_s();
    beta * p.log_lik + p.log_prior - mix
}

pub fn log_f_matrix(m: &MixtureApprox, batch: &ParticleBatch, beta: f64) -> Vec<Vec<f64>> {
    batch
        .particles
        .iter()
        .map(|row| row.iter().map(|p| log_f(m, p, beta)).collect())
        .collect()
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// The K-sample importance-weighted bound estimate for a single component's
/// particles: log-mean-exp of the standard importance log-weights
/// (component 0's own densities in the denominator).
pub fn single_component_bound(particles: &[Particle], beta: f64) -> Result<f64> {
    if particles.is_empty() {
        return Err(Error::Contract("empty particle set".into()));
    }
    let logw: Vec<f64> = particles
        .iter()
        .map(|p| beta * p.log_lik + p.log_prior - (p.log_q_topo[0] + p.log_q_branch[0]))
        .collect();
    Ok(log_mean_exp(&logw))
}

/// The mixture bound estimate: the average over components of the
/// log-mean-exp of their particles' mixture-denominator log weights.
pub fn miselbo(m: &MixtureApprox, batch: &ParticleBatch, beta: f64) -> Result<f64> {
    if batch.particles.is_empty() || batch.k() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let lf = log_f_matrix(m, batch, beta);
    let total: f64 = lf.iter().map(|row| log_mean_exp(row)).sum();
    Ok(total / batch.n_components() as f64)
}

/// Per-component bounds, local learning signals, normalized importance
/// weights and mixture responsibilities: everything the VIMCO estimator
/// consumes. Shared with the discrete toy, which passes empty branch terms.
#[derive(Debug, Clone)]
pub struct LearningSignals {
    /// L-hat per component.
    pub lhat: Vec<f64>,
    /// Local leave-one-out signals, [s][k].
    pub local: Vec<Vec<f64>>,
    /// Normalized importance weights, [s][k]; each row sums to one.
    pub weights: Vec<Vec<f64>>,
    /// Mixture responsibilities, [s][k][j]; each sums to one over j.
    pub resp: Vec<Vec<Vec<f64>>>,
    /// Raw log f values, [s][k].
    pub log_f: Vec<Vec<f64>>,
}

impl LearningSignals {
    pub fn miselbo(&self) -> f64 {
        self.lhat.iter().sum::<f64>() / self.lhat.len() as f64
    }
}

/// Compute the signals from log-target values and per-component log
/// densities: `log_target[s][k]` is the (annealed) log joint of particle
/// (s,k); `log_q[s][k][j]` is component j's log density on it.
pub fn signals_from_scores(
    log_target: &[Vec<f64>],
    log_q: &[Vec<Vec<f64>>],
) -> Result<LearningSignals> {
    let s = log_target.len();
    if s == 0 || log_q.len() != s {
        return Err(Error::Contract("score matrices must agree on S".into()));
    }
    let k = log_target[0].len();
    if k < 2 {
        return Err(Error::BaselineUndefined(format!(
            "the leave-one-out baseline needs K >= 2, got {k}"
        )));
    }
    let ln_s = (s as f64).ln();
    let mut log_f = vec![vec![0.0; k]; s];
    let mut resp = vec![vec![vec![0.0; s]; k]; s];
    for si in 0..s {
        if log_target[si].len() != k || log_q[si].len() != k {
            return Err(Error::Contract("ragged score matrices".into()));
        }
        for ki in 0..k {
            let lqs = &log_q[si][ki];
            if lqs.len() != s {
                return Err(Error::Contract("per-component densities must have length S".into()));
            }
            let mix = log_sum_exp(lqs) - ln_s;
            log_f[si][ki] = log_target[si][ki] - mix;
            let z = log_sum_exp(lqs);
            for j in 0..s {
                resp[si][ki][j] = (lqs[j] - z).exp();
            }
        }
    }
    let lhat: Vec<f64> = log_f.iter().map(|row| log_mean_exp(row)).collect();
    let mut local = vec![vec![0.0; k]; s];
    let mut weights = vec![vec![0.0; k]; s];
    for si in 0..s {
        let row = &log_f[si];
        let z = log_sum_exp(row);
        for ki in 0..k {
            weights[si][ki] = (row[ki] - z).exp();
            // Geometric-mean replacement for the held-out sample, computed
            // over the annealed log f values.
            let others: Vec<f64> =
                (0..k).filter(|&j| j != ki).map(|j| row[j]).collect();
            let ghat = others.iter().sum::<f64>() / (k - 1) as f64;
            let mut pool = others;
            pool.push(ghat);
            let baseline = log_mean_exp(&pool);
            local[si][ki] = lhat[si] - baseline;
        }
    }
    Ok(LearningSignals { lhat, local, weights, resp, log_f })
}

pub fn signals(batch: &ParticleBatch, beta: f64) -> Result<LearningSignals> {
    let log_target: Vec<Vec<f64>> = batch
        .particles
        .iter()
        .map(|row| row.iter().map(|p| beta * p.log_lik + p.log_prior).collect())
        .collect();
    let log_q: Vec<Vec<Vec<f64>>> = batch
        .particles
        .iter()
        .map(|row| {
            row.iter()
                .map(|p| {
                    p.log_q_topo.iter().zip(&p.log_q_branch).map(|(&t, &b)| t + b).collect()
                })
                .collect()
        })
        .collect();
    signals_from_scores(&log_target, &log_q)
}

/// The scalar multiplying `grad log q_{phi_i}(tau_s^k)` in the VIMCO
/// estimator: the local learning signal on component i's own particles,
/// minus the responsibility-weighted mixture term on every particle.
pub fn score_coefficient(sig: &LearningSignals, i: usize, s: usize, k: usize) -> f64 {
    let n = sig.lhat.len() as f64;
    let own = if i == s { sig.local[s][k] } else { 0.0 };
    (own - sig.weights[s][k] * sig.resp[s][k][i]) / n
}

/// Gradients for every component's SBN logits and branch parameters.
#[derive(Debug, Clone)]
pub struct MixtureGrads {
    pub sbn: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
}

impl MixtureGrads {
    pub fn is_finite(&self) -> bool {
        self.sbn.iter().chain(self.branch.iter()).all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// The mixture VIMCO estimator: score-function gradients for the SBN logits
/// with local leave-one-out learning signals, and reparameterized gradients
/// for the branch parameters (likelihood and prior through the sample path,
/// responsibility-weighted density terms at fixed lengths).
pub fn vimco_grads(
    m: &MixtureApprox,
    engine: &LikelihoodEngine,
    prior: &PriorConfig,
    batch: &ParticleBatch,
    beta: f64,
) -> Result<(MixtureGrads, LearningSignals)> {
    let sig = signals(batch, beta)?;
    let s = m.n_components();
    let k = batch.k();
    let mut grads = MixtureGrads {
        sbn: vec![vec![0.0; m.support().n_params()]; s],
        branch: vec![vec![0.0; m.layout().n_params()]; s],
    };

    // Likelihood gradients are the expensive pure part; evaluate them in
    // parallel, then accumulate sequentially in a fixed order.
    let flat: Vec<&Particle> = batch.particles.iter().flatten().collect();
    let lik_grads: Vec<Vec<f64>> = flat
        .par_iter()
        .map(|p| engine.grad_branches_lengths(&p.topology, &p.lengths))
        .collect::<Result<_>>()?;

    for si in 0..s {
        for ki in 0..k {
            let p = &batch.particles[si][ki];
            // Term 1 + term 2 for every phi_i on this particle.
            for i in 0..s {
                let c = score_coefficient(&sig, i, si, ki);
                if c != 0.0 {
                    m.component(i).sbn.accumulate_grad_log_prob(&p.records, c, &mut grads.sbn[i])?;
                }
            }
            // Pathwise branch gradient for the particle's own component:
            // d log f / d b(e), then the chain through b = exp(mu+sigma eps).
            let dll = &lik_grads[si * k + ki];
            let mut dlogf_db = vec![0.0; p.lengths.len()];
            let joint: Vec<f64> =
                p.log_q_topo.iter().zip(&p.log_q_branch).map(|(&t, &b)| t + b).collect();
            let z = log_sum_exp(&joint);
            for (j, comp) in m.components().iter().enumerate() {
                let r = (joint[j] - z).exp();
                let dq = comp.branch.dlog_density_db(&p.ctxs, &p.lengths)?;
                for (d, &x) in dlogf_db.iter_mut().zip(&dq) {
                    *d -= r * x;
                }
            }
            for (e, d) in dlogf_db.iter_mut().enumerate() {
                *d += beta * dll[e] - prior.branch_rate;
            }
            let w = sig.weights[si][ki] / s as f64;
            let scaled: Vec<f64> = dlogf_db.iter().map(|&d| d * w).collect();
            m.component(si).branch.accumulate_grad_reparam(
                &p.ctxs,
                &p.lengths,
                &p.eps,
                &scaled,
                &mut grads.branch[si],
            )?;
            // Explicit mixture-density term for every psi_i.
            for i in 0..s {
                let wi = -sig.weights[si][ki] * sig.resp[si][ki][i] / s as f64;
                m.component(i).branch.accumulate_grad_density(
                    &p.ctxs,
                    &p.lengths,
                    wi,
                    &mut grads.branch[i],
                )?;
            }
        }
    }
    Ok((grads, sig))
}

/// Importance-sampled marginal log-likelihood: mean and standard deviation
/// over repeated runs of log-mean of p(X,tau,B)/q_mix(tau,B) with draws
/// from the mixture.
#[derive(Debug, Clone)]
pub struct MarginalEstimate {
    pub mean: f64,
    pub stddev: f64,
    pub per_run: Vec<f64>,
}

pub fn estimate_marginal_ll(
    m: &MixtureApprox,
    engine: &LikelihoodEngine,
    prior: &PriorConfig,
    n_samples: usize,
    runs: usize,
    k_inner: usize,
    seed: u64,
) -> Result<MarginalEstimate> {
    if n_samples == 0 || runs == 0 || k_inner == 0 {
        return Err(Error::Contract("samples, runs and k_inner must be positive".into()));
    }
    let s = m.n_components();
    let per_run: Vec<f64> = (0..runs)
        .map(|run| {
            let ratios: Vec<f64> = (0..n_samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream_rng(seed, &[0x45, run as u64, i as u64]);
                    let comp = m.component(rng.gen_range(0..s));
                    let topology = comp.sbn.sample(&mut rng);
                    let ctxs = topology.edge_contexts()?;
                    let inner: Vec<f64> = (0..k_inner)
                        .map(|_| {
                            let (lengths, eps) = comp.branch.sample_branches(&ctxs, &mut rng)?;
                            let p = particle_from_draw(
                                m,
                                engine,
                                prior,
                                topology.clone(),
                                lengths,
                                eps,
                            )?;
                            Ok(log_f(m, &p, 1.0))
                        })
                        .collect::<Result<_>>()?;
                    Ok(log_mean_exp(&inner))
                })
                .collect::<Result<_>>()?;
            Ok(log_mean_exp(&ratios))
        })
        .collect::<Result<_>>()?;
    let mean = per_run.iter().sum::<f64>() / runs as f64;
    let var = if runs > 1 {
        per_run.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (runs - 1) as f64
    } else {
        0.0
    };
    Ok(MarginalEstimate { mean, stddev: var.sqrt(), per_run })
}

/// KL(p || q_mix) over an enumerable reference, excluding topologies with
/// zero support in every component and reporting their total mass.
#[derive(Debug, Clone)]
pub struct KlReport {
    pub kl: f64,
    pub out_of_support_mass: f64,
    pub covered_mass: f64,
}

pub fn kl_reference_to_model(
    entries: &[(Topology, f64)],
    m: &MixtureApprox,
) -> Result<KlReport> {
    let mut kl = 0.0;
    let mut out = 0.0;
    let mut covered = 0.0;
    for (t, p) in entries {
        if *p <= 0.0 {
            continue;
        }
        match m.mixture_log_prob(t) {
            Ok(lq) => {
                kl += p * (p.ln() - lq);
                covered += p;
            }
            Err(Error::SupportViolation(_)) => out += p,
            Err(e) => return Err(e),
        }
    }
    Ok(KlReport { kl, out_of_support_mass: out, covered_mass: covered })
}
