//! Uniformly weighted mixtures of (SBN, branch model) pairs: the object the
//! mixture objective trains. All components share one support and one
//! branch-table layout.

use std::sync::Arc;

use crate::branch::{BranchLayout, BranchMode, BranchModel};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::sbn::{Sbn, SbnSupport, TopologyRecords};
use crate::taxa::Taxa;
use crate::topology::{BranchLengths, Topology};

#[derive(Debug, Clone)]
pub struct Component {
    pub sbn: Sbn,
    pub branch: BranchModel,
}

#[derive(Debug, Clone)]
pub struct MixtureApprox {
    components: Vec<Component>,
}

impl MixtureApprox {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Contract("a mixture needs at least one component".into()));
        }
        let support = components[0].sbn.support();
        let layout = components[0].branch.layout();
        for c in &components[1..] {
            if !Arc::ptr_eq(c.sbn.support(), support) {
                return Err(Error::Contract("components must share one SBN support".into()));
            }
            if !Arc::ptr_eq(c.branch.layout(), layout) {
                return Err(Error::Contract("components must share one branch layout".into()));
            }
        }
        Ok(Self { components })
    }

    /// Build an S-component mixture from candidate trees: shared support,
    /// frequency-initialized SBN logits, prior-scale branch parameters.
    /// Components start identical; sampling noise breaks the symmetry
    /// during training.
    pub fn init_from_candidates(
        taxa: Taxa,
        candidates: &[Topology],
        n_components: usize,
        mode: BranchMode,
    ) -> Result<Self> {
        let support = Arc::new(SbnSupport::build(taxa, candidates)?);
        let layout = Arc::new(BranchLayout::from_support(&support, mode)?);
        let sbn = Sbn::from_frequencies(support, candidates)?;
        let branch = BranchModel::init(layout);
        let components =
            (0..n_components).map(|_| Component { sbn: sbn.clone(), branch: branch.clone() }).collect();
        Self::new(components)
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Component {
        &self.components[i]
    }

    pub fn support(&self) -> &Arc<SbnSupport> {
        self.components[0].sbn.support()
    }

    pub fn layout(&self) -> &Arc<BranchLayout> {
        self.components[0].branch.layout()
    }

    pub fn taxa(&self) -> &Taxa {
        self.support().taxa()
    }

    pub fn ln_s(&self) -> f64 {
        (self.components.len() as f64).ln()
    }

    pub fn replace(&mut self, i: usize, component: Component) -> Result<()> {
        if !Arc::ptr_eq(component.sbn.support(), self.support()) {
            return Err(Error::Contract("replacement must share the SBN support".into()));
        }
        if !Arc::ptr_eq(component.branch.layout(), self.layout()) {
            return Err(Error::Contract("replacement must share the branch layout".into()));
        }
        self.components[i] = component;
        Ok(())
    }

    /// Per-component log q_{phi_j}(tau) from resolved records.
    pub fn component_log_probs(&self, recs: &TopologyRecords) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.sbn.log_prob_records(recs)).collect()
    }

    /// log of the uniform mixture over topology marginals.
    pub fn mixture_log_prob(&self, t: &Topology) -> Result<f64> {
        let recs = self.support().index_topology(t)?;
        let lqs = self.component_log_probs(&recs)?;
        Ok(log_sum_exp(&lqs) - self.ln_s())
    }

    /// log of the uniform mixture over (topology, branch) joints.
    pub fn mixture_log_joint(&self, t: &Topology, b: &BranchLengths) -> Result<f64> {
        let recs = self.support().index_topology(t)?;
        let ctxs = t.edge_contexts()?;
        let lengths: Vec<f64> = ctxs
            .iter()
            .map(|c| {
                b.get(&c.split)
                    .ok_or_else(|| Error::MissingEdge(format!("no branch length for {}", c.split)))
            })
            .collect::<Result<_>>()?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                Ok(c.sbn.log_prob_records(&recs)? + c.branch.log_density_lengths(&ctxs, &lengths)?)
            })
            .collect::<Result<_>>()?;
        Ok(log_sum_exp(&terms) - self.ln_s())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newick;
    use crate::taxa::taxa;
    use crate::topology::enumerate_unrooted;

    fn quartet_mixture(s: usize) -> (Vec<Topology>, MixtureApprox) {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let all = enumerate_unrooted(&tx).unwrap();
        let m =
            MixtureApprox::init_from_candidates(tx, &all, s, BranchMode::SplitPsp).unwrap();
        (all, m)
    }

    #[test]
    fn single_component_mixture_equals_component() {
        let (all, m) = quartet_mixture(1);
        for t in &all {
            let a = m.mixture_log_prob(t).unwrap();
            let b = m.component(0).sbn.log_prob(t).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn identical_components_equal_single() {
        let (all, m1) = quartet_mixture(1);
        let (_, m3) = quartet_mixture(3);
        for t in &all {
            let a = m1.mixture_log_prob(t).unwrap();
            let b = m3.mixture_log_prob(t).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_mixture_with_identical_components_matches_single() {
        let (all, m1) = quartet_mixture(1);
        let (_, m2) = quartet_mixture(2);
        let t = &all[0];
        let mut b = BranchLengths::new();
        for ctx in t.edge_contexts().unwrap() {
            b.insert(ctx.split, 0.12).unwrap();
        }
        let a = m1.mixture_log_joint(t, &b).unwrap();
        let c = m2.mixture_log_joint(t, &b).unwrap();
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn conflicting_pair_mixture_gives_log_half() {
        // Two components, each deterministic on one of the two reused
        // pairings: the mixture puts probability 1/2 on each.
        let tx = taxa(["1", "2", "3", "4", "5", "6"]).unwrap();
        let trees: Vec<Topology> = [
            "(((1,2),3),((4,5),6));",
            "((1,(2,3)),(4,(5,6)));",
            "(((1,2),3),(4,(5,6)));",
            "((1,(2,3)),((4,5),6));",
        ]
        .iter()
        .map(|s| newick::parse(s, &tx).unwrap().0.unroot().unwrap())
        .collect();
        let support = Arc::new(SbnSupport::build(tx, &trees).unwrap());
        let layout =
            Arc::new(BranchLayout::from_support(&support, BranchMode::SplitOnly).unwrap());
        let make_det = |target: &Topology| -> Sbn {
            let recs = support.index_topology(target).unwrap();
            let mut logits = vec![0.0; support.n_params()];
            for rec in recs.rootings.iter().flatten() {
                logits[rec.root] = 50.0;
                for &(tbl, child) in &rec.conds {
                    let (off, _) = support.group(tbl);
                    logits[off + child] = 50.0;
                }
            }
            Sbn::new(support.clone(), logits).unwrap()
        };
        let m = MixtureApprox::new(vec![
            Component { sbn: make_det(&trees[0]), branch: BranchModel::init(layout.clone()) },
            Component { sbn: make_det(&trees[1]), branch: BranchModel::init(layout) },
        ])
        .unwrap();
        let lp = m.mixture_log_prob(&trees[0]).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-6, "lp={lp}");
        let lp2 = m.mixture_log_prob(&trees[1]).unwrap();
        assert!((lp2 - 0.5f64.ln()).abs() < 1e-6);
    }
}
