//! Slow, independent reference implementations used to verify the fast
//! paths: ancestral-state enumeration for the pruning likelihood, per-edge
//! quadrature for branch-integrated marginal likelihoods, and exhaustive
//! enumeration for the discrete-toy estimators.
//!
//! Everything here trades speed for directness; nothing below shares code
//! with the implementations it checks.

use crate::alignment::{Alignment, AMBIGUOUS, N_STATES};
use crate::error::{Error, Result};
use crate::likelihood::jc69_transition;
use crate::math::{log_sum_exp, unrooted_count};
use crate::taxa::Taxa;
use crate::topology::{enumerate_unrooted, Topology};
use crate::toy::{HierApprox, HierComponent, HierTarget};

/// Brute-force log-likelihood: sum over every joint assignment of states to
/// internal nodes (and ambiguous leaves), one site at a time.
pub fn enumerated_log_likelihood_lengths(
    aln: &Alignment,
    t: &Topology,
    lengths: &[f64],
) -> Result<f64> {
    if t.is_rooted() {
        return Err(Error::WrongRootedness("likelihood takes an unrooted tree".into()));
    }
    let n_nodes = t.n_nodes();
    if lengths.len() != n_nodes - 1 {
        return Err(Error::Contract("one length per edge required".into()));
    }
    let trans: Vec<[[f64; N_STATES]; N_STATES]> =
        lengths.iter().map(|&b| jc69_transition(b)).collect::<Result<_>>()?;

    let mut total = 0.0;
    for site in 0..aln.n_sites() {
        // Free nodes: internal nodes plus ambiguous leaves.
        let mut fixed: Vec<Option<usize>> = vec![None; n_nodes];
        let mut free: Vec<usize> = Vec::new();
        for v in 0..n_nodes {
            match t.taxon_of(v) {
                Some(tx) => {
                    let s = aln.site(tx, site);
                    if s == AMBIGUOUS {
                        free.push(v);
                    } else {
                        fixed[v] = Some(s as usize);
                    }
                }
                None => free.push(v),
            }
        }
        let mut site_lik = 0.0;
        let combos = (N_STATES as u64).pow(free.len() as u32);
        for assign in 0..combos {
            let mut state = fixed.clone();
            let mut a = assign;
            for &v in &free {
                state[v] = Some((a % N_STATES as u64) as usize);
                a /= N_STATES as u64;
            }
            let mut term = 0.25;
            for v in 0..n_nodes {
                if let Some(p) = t.parent_of(v) {
                    term *= trans[v - 1][state[p].unwrap()][state[v].unwrap()];
                }
            }
            site_lik += term;
        }
        total += site_lik.ln();
    }
    Ok(total)
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Per-edge branch integrals for an M-site alignment under the exponential
/// branch prior: `g(d)` is the expectation of the product of M JC69
/// transition entries along one edge when d of the site pairs differ,
///
///   g(d) = Int (1/4 + 3/4 u)^(M-d) (1/4 - 1/4 u)^d lambda e^(-lambda b) db
///
/// with u = exp(-4b/3). These are the only branch integrals a marginal
/// likelihood needs: conditioned on joint ancestral states at both ends,
/// edges are independent.
#[derive(Debug, Clone)]
pub struct BranchIntegrals {
    g: Vec<f64>,
}

impl BranchIntegrals {
    pub fn n_sites(&self) -> usize {
        self.g.len() - 1
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Closed form via the binomial expansion and the moments
/// E[u^k] = lambda / (lambda + 4k/3).
pub fn branch_integrals_moments(m_sites: usize, lambda: f64) -> BranchIntegrals {
    let mut g = vec![0.0; m_sites + 1];
    for (d, gd) in g.iter_mut().enumerate() {
        let same = m_sites - d;
        let mut total = 0.0;
        for i in 0..=same {
            for j in 0..=d {
                let coeff = binomial(same, i)
                    * binomial(d, j)
                    * 0.25f64.powi((same - i) as i32)
                    * 0.75f64.powi(i as i32)
                    * 0.25f64.powi((d - j) as i32)
                    * (-0.25f64).powi(j as i32);
                let k = (i + j) as f64;
                total += coeff * lambda / (lambda + 4.0 * k / 3.0);
            }
        }
        *gd = total;
    }
    BranchIntegrals { g }
}

/// 1D Gauss-Legendre quadrature of the same integrals over the branch
/// length, prior weight included, on panels covering the prior's mass up to
/// a truncation of exp(-60).
pub fn branch_integrals_quadrature(
    m_sites: usize,
    lambda: f64,
    n_points: usize,
) -> BranchIntegrals {
    let (nodes, weights) = gauss_legendre(n_points);
    let panels = [(0.0, 10.0 / lambda), (10.0 / lambda, 60.0 / lambda)];
    let mut g = vec![0.0; m_sites + 1];
    for (d, gd) in g.iter_mut().enumerate() {
        let mut total = 0.0;
        for &(lo, hi) in &panels {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (&x, &w) in nodes.iter().zip(&weights) {
                let b = mid + half * x;
                let u = (-4.0 * b / 3.0).exp();
                let f = (0.25 + 0.75 * u).powi((m_sites - d) as i32)
                    * (0.25 - 0.25 * u).powi(d as i32);
                total += half * w * f * lambda * (-lambda * b).exp();
            }
        }
        *gd = total;
    }
    BranchIntegrals { g }
}

fn packed_hamming(a: u64, b: u64) -> usize {
    let z = a ^ b;
    ((z | (z >> 1)) & 0x5555_5555_5555_5555u64).count_ones() as usize
}

/// Exact log marginal likelihood log p(X | tau) with branch lengths
/// integrated out: a dynamic program over joint per-site states with the
/// per-edge integrals above. Restricted to unambiguous alignments of at
/// most 7 sites.
pub fn marginal_log_likelihood(
    aln: &Alignment,
    t: &Topology,
    integrals: &BranchIntegrals,
) -> Result<f64> {
    if t.is_rooted() {
        return Err(Error::WrongRootedness("marginal likelihood takes an unrooted tree".into()));
    }
    let m = aln.n_sites();
    if m != integrals.n_sites() {
        return Err(Error::Contract("integral table does not match the site count".into()));
    }
    if m > 7 {
        return Err(Error::UnsupportedSize(format!(
            "joint-state oracle supports at most 7 sites, got {m}"
        )));
    }
    if t.n_taxa() < 3 {
        return Err(Error::UnsupportedSize("oracle needs >= 3 taxa".into()));
    }
    let n_states = 1usize << (2 * m);
    let mut obs = vec![0u64; t.n_nodes()];
    for v in 0..t.n_nodes() {
        if let Some(tx) = t.taxon_of(v) {
            let mut packed = 0u64;
            for site in 0..m {
                let s = aln.site(tx, site);
                if s == AMBIGUOUS {
                    return Err(Error::Domain("oracle does not support ambiguity codes".into()));
                }
                packed |= (s as u64) << (2 * site);
            }
            obs[v] = packed;
        }
    }
    let g = &integrals.g;
    let mut partial: Vec<Option<Vec<f64>>> = vec![None; t.n_nodes()];
    for v in t.post_order() {
        if t.is_leaf(v) {
            continue;
        }
        let mut acc = vec![1.0f64; n_states];
        for &c in t.children_of(v) {
            if t.is_leaf(c) {
                let oc = obs[c];
                for (x, a) in acc.iter_mut().enumerate() {
                    *a *= g[packed_hamming(x as u64, oc)];
                }
            } else {
                let d = partial[c].take().expect("post-order");
                for (x, a) in acc.iter_mut().enumerate() {
                    let mut msg = 0.0;
                    for (y, &dy) in d.iter().enumerate() {
                        msg += g[packed_hamming(x as u64, y as u64)] * dy;
                    }
                    *a *= msg;
                }
            }
        }
        partial[v] = Some(acc);
    }
    let root = partial[t.root()].take().expect("root partial");
    let pi = 0.25f64.powi(m as i32);
    let total: f64 = root.iter().map(|&x| pi * x).sum();
    Ok(total.ln())
}

/// Enumerate the exact topology posterior of a small alignment: uniform
/// topology prior, exponential branch prior integrated out per edge.
/// Returns (topology, posterior probability) pairs and the log evidence
/// (topology-prior constant included).
pub fn enumerate_posterior(
    aln: &Alignment,
    taxa: &Taxa,
    lambda: f64,
    quadrature_points: usize,
) -> Result<(Vec<(Topology, f64)>, f64)> {
    let trees = enumerate_unrooted(taxa)?;
    let integrals = branch_integrals_quadrature(aln.n_sites(), lambda, quadrature_points);
    let mls: Vec<f64> = trees
        .iter()
        .map(|t| marginal_log_likelihood(aln, t, &integrals))
        .collect::<Result<_>>()?;
    let z = log_sum_exp(&mls);
    let posterior: Vec<(Topology, f64)> =
        trees.into_iter().zip(&mls).map(|(t, &ml)| (t, (ml - z).exp())).collect();
    let log_evidence = z - (unrooted_count(taxa.len()) as f64).ln();
    Ok((posterior, log_evidence))
}

/// Exact mixture bound for the discrete toy by enumerating every K-tuple of
/// states per component.
pub fn toy_exact_miselbo(approx: &HierApprox, target: &HierTarget, k: usize) -> f64 {
    let n1 = target.n1();
    let n2 = target.n2();
    let states: Vec<(usize, usize)> =
        (0..n1).flat_map(|a| (0..n2).map(move |b| (a, b))).collect();
    let s = approx.n_components();
    let log_f: Vec<f64> = states
        .iter()
        .map(|&(z1, z2)| target.log_prob(z1, z2) - approx.mixture_log_prob(z1, z2))
        .collect();
    let mut total = 0.0;
    for comp in &approx.components {
        let log_q: Vec<f64> = states.iter().map(|&(z1, z2)| comp.log_prob(z1, z2)).collect();
        let mut tuple = vec![0usize; k];
        let mut comp_total = 0.0;
        loop {
            let weight: f64 = tuple.iter().map(|&i| log_q[i].exp()).product();
            if weight > 0.0 {
                let lf: Vec<f64> = tuple.iter().map(|&i| log_f[i]).collect();
                comp_total += weight * (log_sum_exp(&lf) - (k as f64).ln());
            }
            let mut pos = 0;
            loop {
                if pos == k {
                    break;
                }
                tuple[pos] += 1;
                if tuple[pos] < states.len() {
                    break;
                }
                tuple[pos] = 0;
                pos += 1;
            }
            if pos == k {
                break;
            }
        }
        total += comp_total;
    }
    total / s as f64
}

/// Exact gradient of the toy mixture bound by central differences on the
/// enumerated objective, flattened per component.
pub fn toy_exact_miselbo_grad(
    approx: &HierApprox,
    target: &HierTarget,
    k: usize,
    h: f64,
) -> Vec<Vec<f64>> {
    let n1 = target.n1();
    let n2 = target.n2();
    let mut grads = Vec::with_capacity(approx.n_components());
    for ci in 0..approx.n_components() {
        let flat = approx.components[ci].flatten();
        let mut grad = vec![0.0; flat.len()];
        for (j, g) in grad.iter_mut().enumerate() {
            let mut up = approx.clone();
            let mut fu = flat.clone();
            fu[j] += h;
            up.components[ci] = HierComponent::unflatten(n1, n2, &fu);
            let mut dn = approx.clone();
            let mut fd = flat.clone();
            fd[j] -= h;
            dn.components[ci] = HierComponent::unflatten(n1, n2, &fd);
            *g = (toy_exact_miselbo(&up, target, k) - toy_exact_miselbo(&dn, target, k))
                / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}
