//! Subsplit Bayesian networks over tree topologies.
//!
//! The support is a conditional probability table structure harvested from
//! every rooting of every candidate tree: an ordered list of root splits
//! plus, for each parent context (a clade and its sister), the child
//! subsplits seen for it. Parameters are unconstrained logits with a
//! softmax per table. The probability of an unrooted topology sums the
//! rooted factorization over all of its 2N-3 rootings; clades of two taxa
//! decompose deterministically and carry no table.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::taxa::{canonical_subsplit, Clade, Split, Subsplit, Taxa};
use crate::topology::{ParentKey, Topology, TreeSpec};

/// One conditional table: the child subsplits recorded for a parent
/// context, canonically ordered.
#[derive(Debug, Clone)]
pub struct CondTable {
    pub parent: ParentKey,
    pub children: Vec<Subsplit>,
    child_index: BTreeMap<Subsplit, usize>,
    offset: usize,
}

/// Support structure shared by every SBN (and mixture component) of a run.
#[derive(Debug, Clone)]
pub struct SbnSupport {
    taxa: Taxa,
    root_splits: Vec<Split>,
    root_index: BTreeMap<Split, usize>,
    tables: Vec<CondTable>,
    table_index: BTreeMap<ParentKey, usize>,
    n_params: usize,
}

/// Resolved table entries for one rooting: flat indices into the logit
/// vector for the root split and every conditional record.
#[derive(Debug, Clone)]
pub struct RootingRecord {
    pub root: usize,
    pub conds: Vec<(usize, usize)>,
}

/// Per-rooting records for an unrooted topology; `None` marks a rooting
/// that violates the support.
#[derive(Debug, Clone)]
pub struct TopologyRecords {
    pub rootings: Vec<Option<RootingRecord>>,
}

impl TopologyRecords {
    pub fn n_valid(&self) -> usize {
        self.rootings.iter().filter(|r| r.is_some()).count()
    }
}

impl SbnSupport {
    /// Support from explicit rooted trees: one root-split entry and one
    /// conditional record per internal node per tree.
    pub fn from_rootings(taxa: Taxa, rooted: &[Topology]) -> Result<Self> {
        if rooted.is_empty() {
            return Err(Error::EmptyInput("no trees for support construction".into()));
        }
        let mut roots: BTreeMap<Split, ()> = BTreeMap::new();
        let mut tables: BTreeMap<ParentKey, BTreeMap<Subsplit, ()>> = BTreeMap::new();
        for t in rooted {
            if !t.is_rooted() {
                return Err(Error::WrongRootedness("from_rootings takes rooted trees".into()));
            }
            let (root, records) = t.subsplit_decomposition()?;
            roots.insert(root, ());
            for (pk, sub) in records {
                tables.entry(pk).or_default().insert(sub, ());
            }
        }
        let root_splits: Vec<Split> = roots.into_keys().collect();
        let root_index: BTreeMap<Split, usize> =
            root_splits.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut offset = root_splits.len();
        let mut built = Vec::with_capacity(tables.len());
        let mut table_index = BTreeMap::new();
        for (i, (parent, children)) in tables.into_iter().enumerate() {
            let children: Vec<Subsplit> = children.into_keys().collect();
            let child_index: BTreeMap<Subsplit, usize> =
                children.iter().cloned().enumerate().map(|(j, c)| (c, j)).collect();
            table_index.insert(parent.clone(), i);
            let len = children.len();
            built.push(CondTable { parent, children, child_index, offset });
            offset += len;
        }
        Ok(Self {
            taxa,
            root_splits,
            root_index,
            tables: built,
            table_index,
            n_params: offset,
        })
    }

    /// Rebuild a support from serialized parts. Entries are validated and
    /// canonically re-ordered, so the result is independent of input order.
    pub fn from_parts(
        taxa: Taxa,
        root_splits: Vec<Split>,
        cond: Vec<(ParentKey, Subsplit)>,
    ) -> Result<Self> {
        if root_splits.is_empty() {
            return Err(Error::EmptyInput("support has no root splits".into()));
        }
        let n = taxa.len();
        let mut roots: BTreeMap<Split, ()> = BTreeMap::new();
        for s in root_splits {
            if s.first().n_taxa() != n {
                return Err(Error::TaxonSet("split width does not match the taxon set".into()));
            }
            roots.insert(s, ());
        }
        let mut tables: BTreeMap<ParentKey, BTreeMap<Subsplit, ()>> = BTreeMap::new();
        for (pk, sub) in cond {
            if sub.union() != pk.clade {
                return Err(Error::InvalidClade(format!(
                    "subsplit {sub} does not partition parent clade {}",
                    pk.clade.bitstring()
                )));
            }
            tables.entry(pk).or_default().insert(sub, ());
        }
        let root_splits: Vec<Split> = roots.into_keys().collect();
        let root_index: BTreeMap<Split, usize> =
            root_splits.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut offset = root_splits.len();
        let mut built = Vec::with_capacity(tables.len());
        let mut table_index = BTreeMap::new();
        for (i, (parent, children)) in tables.into_iter().enumerate() {
            let children: Vec<Subsplit> = children.into_keys().collect();
            let child_index: BTreeMap<Subsplit, usize> =
                children.iter().cloned().enumerate().map(|(j, c)| (c, j)).collect();
            table_index.insert(parent.clone(), i);
            let len = children.len();
            built.push(CondTable { parent, children, child_index, offset });
            offset += len;
        }
        Ok(Self { taxa, root_splits, root_index, tables: built, table_index, n_params: offset })
    }

    /// Support covering every rooting of every candidate tree. Duplicate
    /// candidates do not change the result.
    pub fn build(taxa: Taxa, candidates: &[Topology]) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyInput("no candidate trees".into()));
        }
        let mut rootings = Vec::new();
        for t in candidates {
            rootings.extend(t.all_rootings()?);
        }
        Self::from_rootings(taxa, &rootings)
    }

    pub fn taxa(&self) -> &Taxa {
        &self.taxa
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn root_splits(&self) -> &[Split] {
        &self.root_splits
    }

    pub fn tables(&self) -> &[CondTable] {
        &self.tables
    }

    /// (offset, len) of softmax group `g`: group 0 is the root table,
    /// group i+1 is conditional table i.
    pub fn group(&self, g: usize) -> (usize, usize) {
        if g == 0 {
            (0, self.root_splits.len())
        } else {
            let t = &self.tables[g - 1];
            (t.offset, t.children.len())
        }
    }

    pub fn n_groups(&self) -> usize {
        1 + self.tables.len()
    }

    fn directed_clades(&self, t: &Topology) -> (Vec<Clade>, Vec<Vec<usize>>) {
        let down = t.subtree_clades();
        let mut adj = vec![Vec::new(); t.n_nodes()];
        for v in 0..t.n_nodes() {
            adj[v].extend_from_slice(t.children_of(v));
            if let Some(p) = t.parent_of(v) {
                adj[v].push(p);
            }
        }
        (down, adj)
    }

    fn clade_toward(&self, t: &Topology, down: &[Clade], from: usize, to: usize) -> Clade {
        if t.parent_of(to) == Some(from) {
            down[to].clone()
        } else {
            down[from].complement()
        }
    }

    /// Collect conditional records walking away from `v` (approached from
    /// `from`), with `sister` the other clade of the parent subsplit.
    /// Returns false on a support violation.
    fn collect(
        &self,
        t: &Topology,
        down: &[Clade],
        adj: &[Vec<usize>],
        v: usize,
        from: usize,
        clade: &Clade,
        sister: &Clade,
        out: &mut Vec<(usize, usize)>,
    ) -> bool {
        if clade.count() < 3 {
            return true;
        }
        let away: Vec<usize> = adj[v].iter().copied().filter(|&z| z != from).collect();
        debug_assert_eq!(away.len(), 2);
        let w1 = self.clade_toward(t, down, v, away[0]);
        let w2 = self.clade_toward(t, down, v, away[1]);
        let sub = canonical_subsplit(w1.clone(), w2.clone()).expect("disjoint by construction");
        let pk = ParentKey { clade: clade.clone(), sister: sister.clone() };
        let Some(&tbl) = self.table_index.get(&pk) else { return false };
        let Some(&child) = self.tables[tbl].child_index.get(&sub) else { return false };
        out.push((tbl + 1, child));
        self.collect(t, down, adj, away[0], v, &w1, &w2, out)
            && self.collect(t, down, adj, away[1], v, &w2, &w1, out)
    }

    /// Resolve every rooting of an unrooted topology against the support.
    pub fn index_topology(&self, t: &Topology) -> Result<TopologyRecords> {
        if t.is_rooted() {
            return Err(Error::WrongRootedness("index_topology takes an unrooted tree".into()));
        }
        if t.n_taxa() < 3 {
            return Err(Error::UnsupportedSize("SBNs need >= 3 taxa".into()));
        }
        let (down, adj) = self.directed_clades(t);
        let mut rootings = Vec::with_capacity(t.n_nodes() - 1);
        for v in 1..t.n_nodes() {
            let u = t.parent_of(v).expect("non-root node");
            let below = down[v].clone();
            let above = below.complement();
            let record = (|| {
                let split = Split::from_clade(&below).ok()?;
                let root = *self.root_index.get(&split)?;
                let mut conds = Vec::new();
                if !self.collect(t, &down, &adj, v, u, &below, &above, &mut conds) {
                    return None;
                }
                if !self.collect(t, &down, &adj, u, v, &above, &below, &mut conds) {
                    return None;
                }
                conds.sort_unstable();
                Some(RootingRecord { root, conds })
            })();
            rootings.push(record);
        }
        Ok(TopologyRecords { rootings })
    }

    /// Resolve a rooted tree; any missing record is a support violation.
    pub fn index_rooted(&self, t: &Topology) -> Result<RootingRecord> {
        let (root_split, records) = t.subsplit_decomposition()?;
        let root = *self
            .root_index
            .get(&root_split)
            .ok_or_else(|| Error::SupportViolation(format!("root split {root_split} not in support")))?;
        let mut conds = Vec::with_capacity(records.len());
        for (pk, sub) in records {
            let tbl = *self
                .table_index
                .get(&pk)
                .ok_or_else(|| Error::SupportViolation(format!("no table for parent {pk}")))?;
            let child = *self.tables[tbl]
                .child_index
                .get(&sub)
                .ok_or_else(|| Error::SupportViolation(format!("subsplit {sub} not under {pk}")))?;
            conds.push((tbl + 1, child));
        }
        conds.sort_unstable();
        Ok(RootingRecord { root, conds })
    }

    pub fn table(&self, pk: &ParentKey) -> Option<&CondTable> {
        self.table_index.get(pk).map(|&i| &self.tables[i])
    }
}

/// An SBN: shared support plus one logit per table entry. Per-table log
/// normalizers are cached at construction; values are immutable afterwards.
#[derive(Debug, Clone)]
pub struct Sbn {
    support: Arc<SbnSupport>,
    logits: Vec<f64>,
    log_z: Vec<f64>,
}

impl Sbn {
    pub fn new(support: Arc<SbnSupport>, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != support.n_params() {
            return Err(Error::Contract(format!(
                "{} logits for a support of {} parameters",
                logits.len(),
                support.n_params()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("SBN logits must be finite".into()));
        }
        let log_z = (0..support.n_groups())
            .map(|g| {
                let (off, len) = support.group(g);
                log_sum_exp(&logits[off..off + len])
            })
            .collect();
        Ok(Self { support, logits, log_z })
    }

    pub fn uniform(support: Arc<SbnSupport>) -> Self {
        let n = support.n_params();
        Self::new(support, vec![0.0; n]).expect("zero logits are valid")
    }

    /// Logits set to the log of Laplace-smoothed rooting frequencies of the
    /// candidate trees (count + 1); entries never observed fall back to 0.
    pub fn from_frequencies(support: Arc<SbnSupport>, candidates: &[Topology]) -> Result<Self> {
        let mut counts = vec![0.0f64; support.n_params()];
        for t in candidates {
            let recs = support.index_topology(t)?;
            for rec in recs.rootings.iter() {
                let rec = rec.as_ref().ok_or_else(|| {
                    Error::SupportViolation("candidate tree not covered by support".into())
                })?;
                counts[rec.root] += 1.0;
                for &(tbl, child) in &rec.conds {
                    let (off, _) = support.group(tbl);
                    counts[off + child] += 1.0;
                }
            }
        }
        let logits = counts.iter().map(|c| (c + 1.0).ln()).collect();
        Self::new(support, logits)
    }

    pub fn support(&self) -> &Arc<SbnSupport> {
        &self.support
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn taxa(&self) -> &Taxa {
        self.support.taxa()
    }

    fn entry_log_prob(&self, group: usize, flat: usize) -> f64 {
        self.logits[flat] - self.log_z[group]
    }

    pub fn log_prob_record(&self, rec: &RootingRecord) -> f64 {
        let mut lp = self.entry_log_prob(0, rec.root);
        for &(tbl, child) in &rec.conds {
            let (off, _) = self.support.group(tbl);
            lp += self.entry_log_prob(tbl, off + child);
        }
        lp
    }

    /// Log probability of a rooted tree under the SBN factorization.
    pub fn log_prob_rooted(&self, t: &Topology) -> Result<f64> {
        let rec = self.support.index_rooted(t)?;
        Ok(self.log_prob_record(&rec))
    }

    pub fn log_prob_records(&self, recs: &TopologyRecords) -> Result<f64> {
        let lps: Vec<f64> = recs
            .rootings
            .iter()
            .flatten()
            .map(|r| self.log_prob_record(r))
            .collect();
        if lps.is_empty() {
            return Err(Error::SupportViolation("every rooting violates the support".into()));
        }
        Ok(log_sum_exp(&lps))
    }

    /// Log probability of an unrooted tree: log-sum-exp over its rootings,
    /// skipping rootings outside the support. An error is raised only when
    /// all rootings violate.
    pub fn log_prob(&self, t: &Topology) -> Result<f64> {
        let recs = self.support.index_topology(t)?;
        self.log_prob_records(&recs)
    }

    fn draw_group<R: Rng>(&self, group: usize, rng: &mut R) -> usize {
        let (off, len) = self.support.group(group);
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for j in 0..len {
            acc += (self.logits[off + j] - self.log_z[group]).exp();
            if u < acc {
                return j;
            }
        }
        len - 1
    }

    fn sample_clade<R: Rng>(&self, clade: &Clade, sister: &Clade, rng: &mut R) -> TreeSpec {
        match clade.count() {
            1 => TreeSpec::Leaf(clade.taxa().next().expect("singleton")),
            2 => {
                let mut it = clade.taxa();
                let a = it.next().expect("two taxa");
                let b = it.next().expect("two taxa");
                TreeSpec::Internal(vec![TreeSpec::Leaf(a), TreeSpec::Leaf(b)])
            }
            _ => {
                let pk = ParentKey { clade: clade.clone(), sister: sister.clone() };
                let tbl = self
                    .support
                    .table_index
                    .get(&pk)
                    .copied()
                    .expect("support built from whole trees is completable");
                let j = self.draw_group(tbl + 1, rng);
                let sub = &self.support.tables[tbl].children[j];
                TreeSpec::Internal(vec![
                    self.sample_clade(sub.first(), sub.second(), rng),
                    self.sample_clade(sub.second(), sub.first(), rng),
                ])
            }
        }
    }

    /// Ancestral sampling: draw a root split, then child subsplits until
    /// every clade is a singleton; the rooted draw is returned unrooted.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Topology {
        let split = &self.support.root_splits[self.draw_group(0, rng)];
        let spec = TreeSpec::Internal(vec![
            self.sample_clade(split.first(), split.second(), rng),
            self.sample_clade(split.second(), split.first(), rng),
        ]);
        Topology::rooted_from_spec(self.taxa().clone(), &spec)
            .expect("sampled spec is a valid rooted tree")
            .unroot()
            .expect("sampled tree unroots")
    }

    fn add_entry_grad(&self, group: usize, idx: usize, w: f64, acc: &mut [f64]) {
        let (off, len) = self.support.group(group);
        acc[off + idx] += w;
        for j in 0..len {
            acc[off + j] -= w * (self.logits[off + j] - self.log_z[group]).exp();
        }
    }

    /// Accumulate `weight * d log q(tau) / d logits` into `acc`. Each
    /// rooting contributes in proportion to its posterior responsibility;
    /// within a table the softmax score is indicator minus probability.
    pub fn accumulate_grad_log_prob(
        &self,
        recs: &TopologyRecords,
        weight: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let valid: Vec<&RootingRecord> = recs.rootings.iter().flatten().collect();
        if valid.is_empty() {
            return Err(Error::SupportViolation("every rooting violates the support".into()));
        }
        let lps: Vec<f64> = valid.iter().map(|r| self.log_prob_record(r)).collect();
        let total = log_sum_exp(&lps);
        for (rec, lp) in valid.iter().zip(&lps) {
            let rho = (lp - total).exp() * weight;
            self.add_entry_grad(0, rec.root, rho, acc);
            for &(tbl, child) in &rec.conds {
                self.add_entry_grad(tbl, child, rho, acc);
            }
        }
        Ok(())
    }

    /// Exact gradient of `log_prob` with respect to every logit.
    pub fn grad_log_prob(&self, t: &Topology) -> Result<Vec<f64>> {
        let recs = self.support.index_topology(t)?;
        let mut acc = vec![0.0; self.support.n_params()];
        self.accumulate_grad_log_prob(&recs, 1.0, &mut acc)?;
        Ok(acc)
    }
}

/// Fit a uniform mixture of SBNs to a known topology distribution by exact
/// KL(p || q_mix) gradient descent; targets are (unrooted tree, probability)
/// pairs. Component logits start from seeded jitter so identical components
/// can specialize.
pub fn fit_mixture_to_reference(
    support: &Arc<SbnSupport>,
    targets: &[(Topology, f64)],
    n_components: usize,
    iters: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<Sbn>> {
    use rand::SeedableRng;
    if targets.is_empty() {
        return Err(Error::EmptyInput("no target topologies".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = support.n_params();
    let mut comps: Vec<Sbn> = (0..n_components)
        .map(|_| {
            let logits: Vec<f64> = (0..n).map(|_| 0.1 * rng.gen::<f64>() - 0.05).collect();
            Sbn::new(support.clone(), logits)
        })
        .collect::<Result<_>>()?;
    let records: Vec<(TopologyRecords, f64)> = targets
        .iter()
        .map(|(t, p)| Ok((support.index_topology(t)?, *p)))
        .collect::<Result<_>>()?;
    let mut opts: Vec<crate::opt::Adam> =
        (0..n_components).map(|_| crate::opt::Adam::new(lr, n)).collect();
    let log_s = (n_components as f64).ln();
    for _ in 0..iters {
        let mut grads = vec![vec![0.0; n]; n_components];
        for (recs, p) in &records {
            let lqs: Vec<f64> =
                comps.iter().map(|c| c.log_prob_records(recs)).collect::<Result<_>>()?;
            let lmix = log_sum_exp(&lqs) - log_s;
            for (i, comp) in comps.iter().enumerate() {
                // d KL / d logits_i = -p(tau) r_i(tau) d log q_i / d logits;
                // we ascend the negative.
                let resp = (lqs[i] - log_s - lmix).exp();
                comp.accumulate_grad_log_prob(recs, p * resp, &mut grads[i])?;
            }
        }
        for i in 0..n_components {
            let mut logits = comps[i].logits().to_vec();
            opts[i].step(&mut logits, &grads[i]);
            comps[i] = Sbn::new(support.clone(), logits)?;
        }
    }
    Ok(comps)
}

/// Exact KL(p || q_mix) of a uniform SBN mixture against an enumerable
/// target; out-of-support targets are excluded and their mass returned
/// separately.
pub fn kl_reference_to_sbn_mixture(
    comps: &[Sbn],
    targets: &[(Topology, f64)],
) -> Result<(f64, f64)> {
    let log_s = (comps.len() as f64).ln();
    let mut kl = 0.0;
    let mut out_mass = 0.0;
    for (t, p) in targets {
        if *p <= 0.0 {
            continue;
        }
        let support = comps[0].support();
        let recs = support.index_topology(t)?;
        if recs.n_valid() == 0 {
            out_mass += p;
            continue;
        }
        let lqs: Vec<f64> =
            comps.iter().map(|c| c.log_prob_records(&recs)).collect::<Result<_>>()?;
        let lmix = log_sum_exp(&lqs) - log_s;
        kl += p * (p.ln() - lmix);
    }
    Ok((kl, out_mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newick;
    use crate::taxa::taxa;
    use crate::topology::enumerate_unrooted;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quartet_taxa() -> Taxa {
        taxa(["A", "B", "C", "D"]).unwrap()
    }

    fn tree(tx: &Taxa, s: &str) -> Topology {
        newick::parse(s, tx).unwrap().0
    }

    #[test]
    fn single_quartet_support_shape() {
        let tx = quartet_taxa();
        let t = tree(&tx, "((A,B),C,D);");
        let sup = SbnSupport::build(tx, &[t]).unwrap();
        // Root splits are the 5 edge splits; each leaf rooting adds one
        // singleton conditional table.
        assert_eq!(sup.root_splits().len(), 5);
        assert_eq!(sup.tables().len(), 4);
        for table in sup.tables() {
            assert_eq!(table.children.len(), 1);
        }
        assert_eq!(sup.n_params(), 9);
    }

    #[test]
    fn duplicates_do_not_change_support() {
        let tx = quartet_taxa();
        let t1 = tree(&tx, "((A,B),C,D);");
        let t2 = tree(&tx, "((A,C),B,D);");
        let a = SbnSupport::build(tx.clone(), &[t1.clone(), t2.clone()]).unwrap();
        let b = SbnSupport::build(tx, &[t1.clone(), t1, t2]).unwrap();
        assert_eq!(a.n_params(), b.n_params());
        assert_eq!(a.root_splits(), b.root_splits());
        assert_eq!(a.tables().len(), b.tables().len());
    }

    #[test]
    fn full_quartet_support_covers_all_topologies() {
        let tx = quartet_taxa();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let sbn = Sbn::uniform(sup);
        for t in &all {
            sbn.log_prob(t).unwrap();
        }
    }

    #[test]
    fn deterministic_single_tree_support_has_unit_mass() {
        let tx = quartet_taxa();
        let t = tree(&tx, "((A,B),C,D);");
        let sup = Arc::new(SbnSupport::build(tx, &[t.clone()]).unwrap());
        let sbn = Sbn::uniform(sup);
        // Rootings partition the mass: 5 rootings of 1/5 each.
        let lp = sbn.log_prob(&t).unwrap();
        assert!(lp.abs() < 1e-12);
    }

    #[test]
    fn singleton_tables_give_zero_rooted_log_prob() {
        let tx = quartet_taxa();
        let rooted = tree(&tx, "(((A,B),C),D);");
        let sup = Arc::new(SbnSupport::from_rootings(tx, &[rooted.clone()]).unwrap());
        let sbn = Sbn::uniform(sup);
        assert!(sbn.log_prob_rooted(&rooted).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_entry_root_table_gives_log_half() {
        let tx = quartet_taxa();
        let r1 = tree(&tx, "((A,B),(C,D));");
        let r2 = tree(&tx, "(((A,B),C),D);");
        let sup = Arc::new(SbnSupport::from_rootings(tx, &[r1.clone(), r2]).unwrap());
        let sbn = Sbn::uniform(sup);
        let lp = sbn.log_prob_rooted(&r1).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_built_three_level_product() {
        let tx = taxa(["a", "b", "c", "d", "e"]).unwrap();
        let r1 = tree(&tx, "((((a,b),c),d),e);");
        let r2 = tree(&tx, "((((a,c),b),d),e);");
        let r3 = tree(&tx, "((((a,b),d),c),e);");
        let r4 = tree(&tx, "(a,(((b,c),d),e));");
        let sup =
            Arc::new(SbnSupport::from_rootings(tx, &[r1.clone(), r2, r3, r4]).unwrap());
        // Tables: root {abcd}|{e} vs {a}|{bcde}; under {abcd}~{e} the
        // children {abc}|{d} and {abd}|{c}; under {abc}~{d} the children
        // {ab}|{c} and {ac}|{b}.
        let mut logits = vec![0.0; sup.n_params()];
        let root_idx = sup
            .root_splits()
            .iter()
            .position(|s| s.encode() == "11110|00001")
            .unwrap();
        logits[root_idx] = 2.0f64.ln(); // root: 2/3 vs 1/3
        let t2 = sup
            .table(&ParentKey::decode("11110~00001").unwrap())
            .unwrap();
        let j2 = t2.child_index[&Subsplit::decode("11100|00010").unwrap()];
        logits[t2.offset + j2] = 3.0f64.ln(); // level 2: 3/4 vs 1/4
        let t3 = sup.table(&ParentKey::decode("11100~00010").unwrap()).unwrap();
        let j3 = t3.child_index[&Subsplit::decode("11000|00100").unwrap()];
        logits[t3.offset + j3] = 4.0f64.ln(); // level 3: 4/5 vs 1/5
        let sbn = Sbn::new(sup, logits).unwrap();
        let want = (2.0f64 / 3.0).ln() + (3.0f64 / 4.0).ln() + (4.0f64 / 5.0).ln();
        assert!((sbn.log_prob_rooted(&r1).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn out_of_support_rooted_tree_is_a_violation() {
        let tx = quartet_taxa();
        let t = tree(&tx, "((A,B),C,D);");
        let sup = Arc::new(SbnSupport::build(tx.clone(), &[t]).unwrap());
        let sbn = Sbn::uniform(sup);
        let other = tree(&tx, "(((A,C),B),D);");
        assert!(matches!(sbn.log_prob_rooted(&other), Err(Error::SupportViolation(_))));
        let other_unrooted = tree(&tx, "((A,C),B,D);");
        assert!(matches!(sbn.log_prob(&other_unrooted), Err(Error::SupportViolation(_))));
    }

    #[test]
    fn full_support_uniform_logits_normalize_at_n4() {
        let tx = quartet_taxa();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let sbn = Sbn::uniform(sup);
        let total: f64 = all.iter().map(|t| sbn.log_prob(t).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // With uniform logits every topology gets exactly 1/3.
        for t in &all {
            assert!((sbn.log_prob(t).unwrap().exp() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_support_random_logits_normalize() {
        for n in [4usize, 5] {
            let names: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
            let tx = taxa(names).unwrap();
            let all = enumerate_unrooted(&tx).unwrap();
            let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let logits: Vec<f64> =
                (0..sup.n_params()).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
            let sbn = Sbn::new(sup, logits).unwrap();
            let total: f64 = all.iter().map(|t| sbn.log_prob(t).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-8, "n={n}: total={total}");
        }
    }

    #[test]
    fn probabilities_stay_in_unit_interval() {
        let tx = quartet_taxa();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..sup.n_params()).map(|_| 4.0 * rng.gen::<f64>()).collect();
        let sbn = Sbn::new(sup, logits).unwrap();
        for t in &all {
            let p = sbn.log_prob(t).unwrap().exp();
            assert!(p > 0.0 && p <= 1.0);
        }
    }

    #[test]
    fn deterministic_cpts_sample_one_topology() {
        let tx = quartet_taxa();
        let t = tree(&tx, "((A,B),C,D);");
        let sup = Arc::new(SbnSupport::build(tx, &[t.clone()]).unwrap());
        let sbn = Sbn::uniform(sup);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sbn.sample(&mut rng).key(), t.key());
        }
    }

    #[test]
    fn fixed_seed_gives_reproducible_samples() {
        let tx = quartet_taxa();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let sbn = Sbn::uniform(sup);
        let draw = |seed: u64| -> Vec<TopologyKey> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sbn.sample(&mut rng).key()).collect()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
    use crate::topology::TopologyKey;

    #[test]
    fn sampler_matches_density_within_three_sigma() {
        let tx = quartet_taxa();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits: Vec<f64> =
            (0..sup.n_params()).map(|_| 1.5 * rng.gen::<f64>() - 0.75).collect();
        let sbn = Sbn::new(sup, logits).unwrap();
        let n = 100_000usize;
        let mut counts: BTreeMap<TopologyKey, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(sbn.sample(&mut rng).key()).or_insert(0) += 1;
        }
        for t in &all {
            let p = sbn.log_prob(t).unwrap().exp();
            let got = *counts.get(&t.key()).unwrap_or(&0) as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (got - n as f64 * p).abs() < 3.0 * sigma,
                "p={p}, got {got}/{n}"
            );
        }
    }

    #[test]
    fn grad_log_prob_matches_finite_differences() {
        let tx = taxa(["A", "B", "C", "D", "E"]).unwrap();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> =
            (0..sup.n_params()).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        let sbn = Sbn::new(sup.clone(), logits.clone()).unwrap();
        let h = 1e-5;
        for t in all.iter().take(4) {
            let grad = sbn.grad_log_prob(t).unwrap();
            for i in (0..sup.n_params()).step_by(3) {
                let mut up = logits.clone();
                up[i] += h;
                let mut dn = logits.clone();
                dn[i] -= h;
                let fd = (Sbn::new(sup.clone(), up).unwrap().log_prob(t).unwrap()
                    - Sbn::new(sup.clone(), dn).unwrap().log_prob(t).unwrap())
                    / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-6);
                assert!(rel < 1e-4, "coord {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn grad_sums_to_zero_within_each_table() {
        let tx = quartet_taxa();
        let all = enumerate_unrooted(&tx).unwrap();
        let sup = Arc::new(SbnSupport::build(tx, &all).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits: Vec<f64> = (0..sup.n_params()).map(|_| rng.gen::<f64>()).collect();
        let sbn = Sbn::new(sup.clone(), logits).unwrap();
        let grad = sbn.grad_log_prob(&all[0]).unwrap();
        for g in 0..sup.n_groups() {
            let (off, len) = sup.group(g);
            let sum: f64 = grad[off..off + len].iter().sum();
            assert!(sum.abs() < 1e-12, "group {g}");
        }
    }

    #[test]
    fn single_rooting_support_gradient_is_categorical_score() {
        // With one representable rooting, the gradient reduces to the plain
        // softmax score (indicator minus probability) per touched table.
        let tx = quartet_taxa();
        let r1 = tree(&tx, "((A,B),(C,D));");
        let r2 = tree(&tx, "((A,C),(B,D));");
        let sup = Arc::new(SbnSupport::from_rootings(tx.clone(), &[r1, r2]).unwrap());
        let logits = vec![0.3, -0.2];
        let sbn = Sbn::new(sup.clone(), logits.clone()).unwrap();
        let t = tree(&tx, "((A,B),C,D);");
        let grad = sbn.grad_log_prob(&t).unwrap();
        let hit = sup
            .root_splits()
            .iter()
            .position(|s| s.encode() == "1100|0011")
            .unwrap();
        let z = log_sum_exp(&logits);
        let p_hit = (logits[hit] - z).exp();
        let p_other = (logits[1 - hit] - z).exp();
        assert!((grad[hit] - (1.0 - p_hit)).abs() < 1e-12);
        assert!((grad[1 - hit] + p_other).abs() < 1e-12);
    }

    #[test]
    fn frequency_init_counts_duplicates() {
        let tx = quartet_taxa();
        let t1 = tree(&tx, "((A,B),C,D);");
        let t2 = tree(&tx, "((A,C),B,D);");
        let sup = Arc::new(SbnSupport::build(tx, &[t1.clone(), t2.clone()]).unwrap());
        let once = Sbn::from_frequencies(sup.clone(), &[t1.clone(), t2.clone()]).unwrap();
        let twice = Sbn::from_frequencies(sup.clone(), &[t1.clone(), t1.clone(), t2]).unwrap();
        let lp_once = once.log_prob(&t1).unwrap();
        let lp_twice = twice.log_prob(&t1).unwrap();
        assert!(lp_twice > lp_once);
    }

    #[test]
    fn mixture_fit_on_conflicting_pair_splits_apart() {
        // Four-tree family: the two reused pairings get probability 1/2
        // each under a two-component fit.
        let tx = taxa(["1", "2", "3", "4", "5", "6"]).unwrap();
        let trees: Vec<Topology> = [
            "(((1,2),3),((4,5),6));",
            "((1,(2,3)),(4,(5,6)));",
            "(((1,2),3),(4,(5,6)));",
            "((1,(2,3)),((4,5),6));",
        ]
        .iter()
        .map(|s| tree(&tx, s).unroot().unwrap())
        .collect();
        let sup = Arc::new(SbnSupport::build(tx, &trees).unwrap());
        let targets = vec![(trees[0].clone(), 0.5), (trees[1].clone(), 0.5)];
        let comps = fit_mixture_to_reference(&sup, &targets, 2, 1500, 0.1, 0).unwrap();
        let (kl, out) = kl_reference_to_sbn_mixture(&comps, &targets).unwrap();
        assert!(out == 0.0);
        assert!(kl < 1e-3, "kl={kl}");
    }
}
