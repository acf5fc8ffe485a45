//! Amortized LogNormal branch-length models.
//!
//! Each edge's LogNormal location and scale come from a global table keyed
//! by the edge's split, optionally refined by additive terms for the PSPs
//! neighboring the split. Parameters are shared across every topology in
//! which a split (and PSP context) occurs. The scale is kept positive with
//! a softplus over the stored raw value; the transform applies after the
//! split and PSP raw terms are summed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, softplus_inv};
use crate::sbn::SbnSupport;
use crate::taxa::{canonical_subsplit, Psp, Split, Taxa};
use crate::topology::{BranchLengths, EdgeContext, Topology};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchMode {
    SplitOnly,
    SplitPsp,
}

/// Table structure shared by all branch models of a run: every split and
/// PSP that can occur in a support-representable tree.
#[derive(Debug)]
pub struct BranchLayout {
    taxa: Taxa,
    mode: BranchMode,
    splits: Vec<Split>,
    split_index: BTreeMap<Split, usize>,
    psps: Vec<Psp>,
    psp_index: BTreeMap<Psp, usize>,
}

impl BranchLayout {
    /// Build directly from explicit split and PSP tables.
    pub fn from_tables(taxa: Taxa, mode: BranchMode, splits: Vec<Split>, psps: Vec<Psp>) -> Self {
        let splits: Vec<Split> = {
            let set: BTreeSet<Split> = splits.into_iter().collect();
            set.into_iter().collect()
        };
        let split_index: BTreeMap<Split, usize> =
            splits.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let psps: Vec<Psp> = {
            let set: BTreeSet<Psp> = psps.into_iter().collect();
            set.into_iter().collect()
        };
        let psp_index: BTreeMap<Psp, usize> =
            psps.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self { taxa, mode, splits, split_index, psps, psp_index }
    }

    /// Derive the split and PSP tables from an SBN support. Splits are the
    /// support's root splits. PSPs come from conditional tables whose
    /// parent context spans the full taxon set, plus the forced subsplit of
    /// any two-taxon split side.
    pub fn from_support(support: &SbnSupport, mode: BranchMode) -> Result<Self> {
        let taxa = support.taxa().clone();
        let splits = support.root_splits().to_vec();
        let split_index: BTreeMap<Split, usize> =
            splits.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut psps: BTreeSet<Psp> = BTreeSet::new();
        if mode == BranchMode::SplitPsp {
            for table in support.tables() {
                let union = table.parent.clade.union(&table.parent.sister);
                if !union.is_full() {
                    continue;
                }
                let anchor = Split::new(canonical_subsplit(
                    table.parent.clade.clone(),
                    table.parent.sister.clone(),
                )?)?;
                for child in &table.children {
                    psps.insert(Psp::new(anchor.clone(), child.clone())?);
                }
            }
            for split in &splits {
                for side in [split.first(), split.second()] {
                    if side.count() == 2 {
                        let mut it = side.taxa();
                        let n = taxa.len();
                        let a = crate::taxa::Clade::singleton(n, it.next().expect("two"));
                        let b = crate::taxa::Clade::singleton(n, it.next().expect("two"));
                        let forced = canonical_subsplit(a, b)?;
                        psps.insert(Psp::new(split.clone(), forced)?);
                    }
                }
            }
        }
        let psps: Vec<Psp> = psps.into_iter().collect();
        let psp_index: BTreeMap<Psp, usize> =
            psps.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Ok(Self { taxa, mode, splits, split_index, psps, psp_index })
    }

    pub fn taxa(&self) -> &Taxa {
        &self.taxa
    }

    pub fn mode(&self) -> BranchMode {
        self.mode
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn psps(&self) -> &[Psp] {
        &self.psps
    }

    pub fn n_splits(&self) -> usize {
        self.splits.len()
    }

    pub fn n_psps(&self) -> usize {
        self.psps.len()
    }

    /// Parameter vector layout: psi_mu | psi_sigma_raw | gamma_mu |
    /// gamma_sigma_raw.
    pub fn n_params(&self) -> usize {
        2 * self.splits.len() + 2 * self.psps.len()
    }

    pub fn psi_mu_index(&self, split: usize) -> usize {
        split
    }

    pub fn psi_sigma_index(&self, split: usize) -> usize {
        self.splits.len() + split
    }

    pub fn gamma_mu_index(&self, psp: usize) -> usize {
        2 * self.splits.len() + psp
    }

    pub fn gamma_sigma_index(&self, psp: usize) -> usize {
        2 * self.splits.len() + self.psps.len() + psp
    }

    pub fn split_position(&self, s: &Split) -> Option<usize> {
        self.split_index.get(s).copied()
    }

    pub fn psp_position(&self, p: &Psp) -> Option<usize> {
        self.psp_index.get(p).copied()
    }
}

/// One component's branch-length approximation: a LogNormal per edge with
/// amortized parameters.
#[derive(Debug, Clone)]
pub struct BranchModel {
    layout: Arc<BranchLayout>,
    params: Vec<f64>,
}

impl BranchModel {
    pub fn new(layout: Arc<BranchLayout>, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.n_params() {
            return Err(Error::Contract(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.n_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("branch parameters must be finite".into()));
        }
        Ok(Self { layout, params })
    }

    /// Prior-scale start: location log(0.1), scale 0.25, PSP terms zero.
    pub fn init(layout: Arc<BranchLayout>) -> Self {
        let mut params = vec![0.0; layout.n_params()];
        let mu0 = 0.1f64.ln();
        let sr0 = softplus_inv(0.25);
        for i in 0..layout.n_splits() {
            params[layout.psi_mu_index(i)] = mu0;
            params[layout.psi_sigma_index(i)] = sr0;
        }
        Self { layout, params }
    }

    pub fn layout(&self) -> &Arc<BranchLayout> {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn raw_params(&self, ctx: &EdgeContext) -> Result<(f64, f64)> {
        let s = self.layout.split_position(&ctx.split).ok_or_else(|| {
            Error::SupportViolation(format!("split {} not in branch tables", ctx.split))
        })?;
        let mut mu = self.params[self.layout.psi_mu_index(s)];
        let mut sigma_raw = self.params[self.layout.psi_sigma_index(s)];
        if self.layout.mode == BranchMode::SplitPsp {
            for psp in &ctx.psps {
                // PSP contexts absent from the tables contribute zero.
                if let Some(i) = self.layout.psp_position(psp) {
                    mu += self.params[self.layout.gamma_mu_index(i)];
                    sigma_raw += self.params[self.layout.gamma_sigma_index(i)];
                }
            }
        }
        Ok((mu, sigma_raw))
    }

    /// LogNormal (mu, sigma) for one edge.
    pub fn edge_params(&self, ctx: &EdgeContext) -> Result<(f64, f64)> {
        let (mu, sigma_raw) = self.raw_params(ctx)?;
        Ok((mu, softplus(sigma_raw)))
    }

    /// b(e) = exp(mu + sigma * eps) for given standard-normal draws.
    pub fn branches_from_eps(&self, ctxs: &[EdgeContext], eps: &[f64]) -> Result<Vec<f64>> {
        if ctxs.len() != eps.len() {
            return Err(Error::Contract("one eps per edge required".into()));
        }
        ctxs.iter()
            .zip(eps)
            .map(|(ctx, &e)| {
                let (mu, sigma) = self.edge_params(ctx)?;
                Ok((mu + sigma * e).exp())
            })
            .collect()
    }

    /// Reparameterized draw; the eps vector is returned for gradients.
    pub fn sample_branches<R: Rng>(
        &self,
        ctxs: &[EdgeContext],
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let eps: Vec<f64> = (0..ctxs.len()).map(|_| StandardNormal.sample(rng)).collect();
        let b = self.branches_from_eps(ctxs, &eps)?;
        Ok((b, eps))
    }

    /// Sum of per-edge LogNormal log-densities.
    pub fn log_density_lengths(&self, ctxs: &[EdgeContext], lengths: &[f64]) -> Result<f64> {
        if ctxs.len() != lengths.len() {
            return Err(Error::Contract("one length per edge required".into()));
        }
        let mut total = 0.0;
        for (ctx, &b) in ctxs.iter().zip(lengths) {
            if !(b > 0.0) {
                return Err(Error::Domain(format!("branch length must be positive, got {b}")));
            }
            let (mu, sigma) = self.edge_params(ctx)?;
            let z = (b.ln() - mu) / sigma;
            total += -b.ln() - sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z;
        }
        Ok(total)
    }

    pub fn log_density(&self, t: &Topology, b: &BranchLengths) -> Result<f64> {
        let ctxs = t.edge_contexts()?;
        let lengths: Vec<f64> = ctxs
            .iter()
            .map(|c| {
                b.get(&c.split)
                    .ok_or_else(|| Error::MissingEdge(format!("no branch length for {}", c.split)))
            })
            .collect::<Result<_>>()?;
        self.log_density_lengths(&ctxs, &lengths)
    }

    /// d log q(B) / d b(e) per edge, at fixed parameters.
    pub fn dlog_density_db(&self, ctxs: &[EdgeContext], lengths: &[f64]) -> Result<Vec<f64>> {
        ctxs.iter()
            .zip(lengths)
            .map(|(ctx, &b)| {
                let (mu, sigma) = self.edge_params(ctx)?;
                Ok(-1.0 / b - (b.ln() - mu) / (sigma * sigma * b))
            })
            .collect()
    }

    /// Accumulate the reparameterization-path gradient: chain
    /// `dlogf_db -> b(e) = exp(mu + sigma eps) -> (psi, gamma)`, with the
    /// softplus derivative on the raw scale parameters.
    pub fn accumulate_grad_reparam(
        &self,
        ctxs: &[EdgeContext],
        lengths: &[f64],
        eps: &[f64],
        dlogf_db: &[f64],
        acc: &mut [f64],
    ) -> Result<()> {
        if ctxs.len() != lengths.len() || ctxs.len() != eps.len() || ctxs.len() != dlogf_db.len() {
            return Err(Error::Contract("edge vectors must share one length".into()));
        }
        if acc.len() != self.layout.n_params() {
            return Err(Error::Contract("gradient buffer has the wrong size".into()));
        }
        for (i, ctx) in ctxs.iter().enumerate() {
            let s = self.layout.split_position(&ctx.split).ok_or_else(|| {
                Error::SupportViolation(format!("split {} not in branch tables", ctx.split))
            })?;
            let (_, sigma_raw) = self.raw_params(ctx)?;
            let g_mu = dlogf_db[i] * lengths[i];
            let g_sigma = dlogf_db[i] * lengths[i] * eps[i] * sigmoid(sigma_raw);
            acc[self.layout.psi_mu_index(s)] += g_mu;
            acc[self.layout.psi_sigma_index(s)] += g_sigma;
            if self.layout.mode == BranchMode::SplitPsp {
                for psp in &ctx.psps {
                    if let Some(p) = self.layout.psp_position(psp) {
                        acc[self.layout.gamma_mu_index(p)] += g_mu;
                        acc[self.layout.gamma_sigma_index(p)] += g_sigma;
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate `weight * d log q(B) / d params` at fixed lengths (the
    /// explicit density term of the mixture gradient).
    pub fn accumulate_grad_density(
        &self,
        ctxs: &[EdgeContext],
        lengths: &[f64],
        weight: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        for (i, ctx) in ctxs.iter().enumerate() {
            let s = self.layout.split_position(&ctx.split).ok_or_else(|| {
                Error::SupportViolation(format!("split {} not in branch tables", ctx.split))
            })?;
            let (mu, sigma_raw) = self.raw_params(ctx)?;
            let sigma = softplus(sigma_raw);
            let z = (lengths[i].ln() - mu) / sigma;
            let d_mu = weight * z / sigma;
            let d_sigma = weight * (z * z - 1.0) / sigma * sigmoid(sigma_raw);
            acc[self.layout.psi_mu_index(s)] += d_mu;
            acc[self.layout.psi_sigma_index(s)] += d_sigma;
            if self.layout.mode == BranchMode::SplitPsp {
                for psp in &ctx.psps {
                    if let Some(p) = self.layout.psp_position(psp) {
                        acc[self.layout.gamma_mu_index(p)] += d_mu;
                        acc[self.layout.gamma_sigma_index(p)] += d_sigma;
                    }
                }
            }
        }
        Ok(())
    }
}
