//! JC69 substitution model, pruning log-likelihood with per-site rescaling,
//! analytic branch-length gradients, and the tree/branch priors.
//!
//! The substitution model has uniform stationary frequencies, so a JC69
//! transition is fully described by its diagonal and off-diagonal entries.
//! Matrix-vector products in the pruning recursion reduce to
//! `(diag - off) * v + off * sum(v)`.

use std::collections::BTreeMap;

use crate::alignment::{Alignment, AMBIGUOUS, N_STATES};
use crate::error::{Error, Result};
use crate::math::ln_unrooted_count;
use crate::taxa::Split;
use crate::topology::{BranchLengths, Topology};

/// P(j|i, t) as a full stochastic matrix.
pub fn jc69_transition(t: f64) -> Result<[[f64; N_STATES]; N_STATES]> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative branch length {t}")));
    }
    let e = (-4.0 * t / 3.0).exp();
    let diag = 0.25 + 0.75 * e;
    let off = 0.25 - 0.25 * e;
    let mut m = [[off; N_STATES]; N_STATES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = diag;
    }
    Ok(m)
}

/// dP/dt: diagonal -exp(-4t/3), off-diagonal exp(-4t/3)/3.
pub fn jc69_transition_deriv(t: f64) -> Result<[[f64; N_STATES]; N_STATES]> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative branch length {t}")));
    }
    let e = (-4.0 * t / 3.0).exp();
    let mut m = [[e / 3.0; N_STATES]; N_STATES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = -e;
    }
    Ok(m)
}

/// Priors of the generative model: exponential branch lengths and a uniform
/// topology prior whose normalizing constant can be toggled.
#[derive(Debug, Clone)]
pub struct PriorConfig {
    pub branch_rate: f64,
    pub include_topology_constant: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { branch_rate: 10.0, include_topology_constant: true }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.branch_rate > 0.0) {
            return Err(Error::Domain(format!("branch rate must be positive, got {}", self.branch_rate)));
        }
        Ok(())
    }

    /// log p(tau) + log p(B|tau) for per-edge lengths.
    pub fn log_prior_lengths(&self, n_taxa: usize, lengths: &[f64]) -> f64 {
        let lam = self.branch_rate;
        let branches: f64 = lengths.iter().map(|&b| lam.ln() - lam * b).sum();
        if self.include_topology_constant {
            branches - ln_unrooted_count(n_taxa)
        } else {
            branches
        }
    }
}

/// log p(tau, B) under the priors.
pub fn log_prior(t: &Topology, b: &BranchLengths, cfg: &PriorConfig) -> Result<f64> {
    cfg.validate()?;
    b.validate_for(t)?;
    let lengths: Vec<f64> = edge_lengths(t, b)?;
    Ok(cfg.log_prior_lengths(t.n_taxa(), &lengths))
}

/// Site-pattern-compressed alignment.
#[derive(Debug, Clone)]
pub struct PatternAlignment {
    n_taxa: usize,
    patterns: Vec<Vec<u8>>,
    weights: Vec<f64>,
    n_sites: usize,
}

impl PatternAlignment {
    pub fn from_alignment(aln: &Alignment) -> Self {
        let mut counts: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for site in 0..aln.n_sites() {
            let col: Vec<u8> = (0..aln.n_taxa()).map(|t| aln.site(t, site)).collect();
            *counts.entry(col).or_insert(0.0) += 1.0;
        }
        let (patterns, weights): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        Self { n_taxa: aln.n_taxa(), patterns, weights, n_sites: aln.n_sites() }
    }

    pub fn n_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }
}

/// Reusable pruning engine over one alignment.
#[derive(Debug, Clone)]
pub struct LikelihoodEngine {
    pat: PatternAlignment,
}

struct Oriented {
    post: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// Index into the caller's edge-length slice for the edge above each
    /// node (orientation-root excluded).
    edge_of: Vec<usize>,
}

/// Per-edge lengths in arena order: entry v-1 is the edge above node v.
pub fn edge_lengths(t: &Topology, b: &BranchLengths) -> Result<Vec<f64>> {
    let clades = t.subtree_clades();
    (1..t.n_nodes())
        .map(|v| {
            let split = Split::from_clade(&clades[v])?;
            b.get(&split)
                .ok_or_else(|| Error::MissingEdge(format!("no branch length for {split}")))
        })
        .collect()
}

impl LikelihoodEngine {
    pub fn new(aln: &Alignment) -> Self {
        Self { pat: PatternAlignment::from_alignment(aln) }
    }

    pub fn n_patterns(&self) -> usize {
        self.pat.n_patterns()
    }

    fn check(&self, t: &Topology, lengths: &[f64]) -> Result<()> {
        if t.is_rooted() {
            return Err(Error::WrongRootedness("likelihood takes an unrooted tree".into()));
        }
        if t.n_taxa() != self.pat.n_taxa {
            return Err(Error::Contract(format!(
                "tree has {} taxa, alignment has {}",
                t.n_taxa(),
                self.pat.n_taxa
            )));
        }
        if lengths.len() != t.n_nodes() - 1 {
            return Err(Error::Contract(format!(
                "{} edge lengths for {} edges",
                lengths.len(),
                t.n_nodes() - 1
            )));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Domain(format!("branch length must be positive, got {bad}")));
        }
        Ok(())
    }

    /// Orientation from an arbitrary traversal root. The arena shape is the
    /// default; the result is invariant to this choice.
    fn orient(t: &Topology, root: usize) -> Oriented {
        let n = t.n_nodes();
        let mut adj = vec![Vec::new(); n];
        for v in 0..n {
            adj[v].extend_from_slice(t.children_of(v));
            if let Some(p) = t.parent_of(v) {
                adj[v].push(p);
            }
        }
        let mut children = vec![Vec::new(); n];
        let mut edge_of = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![(root, usize::MAX)];
        while let Some((v, from)) = stack.pop() {
            order.push(v);
            for &z in &adj[v] {
                if z != from {
                    children[v].push(z);
                    // The undirected edge {v,z} is the arena edge above
                    // whichever endpoint is the arena child.
                    let arena_child = if t.parent_of(z) == Some(v) { z } else { v };
                    edge_of[z] = arena_child - 1;
                    stack.push((z, v));
                }
            }
        }
        order.reverse();
        Oriented { post: order, children, edge_of }
    }

    fn leaf_partial(state: u8) -> [f64; N_STATES] {
        if state == AMBIGUOUS {
            [1.0; N_STATES]
        } else {
            let mut p = [0.0; N_STATES];
            p[state as usize] = 1.0;
            p
        }
    }

    /// Post-order partials with per-node, per-pattern rescaling. Returns
    /// (partials, per-pattern accumulated log-scalers at each node).
    fn partials(
        &self,
        t: &Topology,
        or: &Oriented,
        trans: &[(f64, f64)],
    ) -> (Vec<Vec<[f64; N_STATES]>>, Vec<Vec<f64>>) {
        let np = self.pat.n_patterns();
        let n = t.n_nodes();
        let mut partial = vec![vec![[0.0; N_STATES]; np]; n];
        let mut scale = vec![vec![0.0; np]; n];
        for &v in &or.post {
            if let Some(tx) = t.taxon_of(v) {
                for (p, pat) in self.pat.patterns.iter().enumerate() {
                    partial[v][p] = Self::leaf_partial(pat[tx]);
                }
                if or.children[v].is_empty() {
                    continue;
                }
            } else {
                for p in 0..np {
                    partial[v][p] = [1.0; N_STATES];
                }
            }
            for p in 0..np {
                let mut acc = partial[v][p];
                let mut s = 0.0;
                for &c in &or.children[v] {
                    let (diag, off) = trans[or.edge_of[c]];
                    let d = &partial[c][p];
                    let sum: f64 = d.iter().sum();
                    for (a, &dx) in acc.iter_mut().zip(d.iter()) {
                        *a *= (diag - off) * dx + off * sum;
                    }
                    s += scale[c][p];
                }
                let max = acc.iter().copied().fold(0.0f64, f64::max);
                if max > 0.0 {
                    for a in &mut acc {
                        *a /= max;
                    }
                    s += max.ln();
                }
                partial[v][p] = acc;
                scale[v][p] = s;
            }
        }
        (partial, scale)
    }

    fn log_likelihood_oriented(&self, t: &Topology, lengths: &[f64], root: usize) -> Result<f64> {
        self.check(t, lengths)?;
        let or = Self::orient(t, root);
        let trans: Vec<(f64, f64)> = lengths
            .iter()
            .map(|&b| {
                let e = (-4.0 * b / 3.0).exp();
                (0.25 + 0.75 * e, 0.25 - 0.25 * e)
            })
            .collect();
        let (partial, scale) = self.partials(t, &or, &trans);
        let mut total = 0.0;
        for p in 0..self.pat.n_patterns() {
            let site: f64 = partial[root][p].iter().map(|x| 0.25 * x).sum();
            if site <= 0.0 {
                return Err(Error::NonFinite("site likelihood underflowed to zero".into()));
            }
            total += self.pat.weights[p] * (site.ln() + scale[root][p]);
        }
        Ok(total)
    }

    /// Pruning log-likelihood with lengths in arena edge order.
    pub fn log_likelihood_lengths(&self, t: &Topology, lengths: &[f64]) -> Result<f64> {
        self.log_likelihood_oriented(t, lengths, t.root())
    }

    /// Pruning log-likelihood; the traversal root is an implementation
    /// detail and does not affect the result.
    pub fn log_likelihood(&self, t: &Topology, b: &BranchLengths) -> Result<f64> {
        let lengths = edge_lengths(t, b)?;
        self.log_likelihood_lengths(t, &lengths)
    }

    /// As `log_likelihood` but pruning from the given node; exposed to
    /// verify traversal-root invariance.
    pub fn log_likelihood_at(&self, t: &Topology, b: &BranchLengths, root: usize) -> Result<f64> {
        let lengths = edge_lengths(t, b)?;
        self.log_likelihood_oriented(t, &lengths, root)
    }

    /// d log p(X|tau,B) / d b(e) for every edge, arena order. Two passes:
    /// post-order partials, then pre-order outside vectors; the per-edge
    /// derivative contracts dP/dt against both.
    pub fn grad_branches_lengths(&self, t: &Topology, lengths: &[f64]) -> Result<Vec<f64>> {
        self.check(t, lengths)?;
        let root = t.root();
        let or = Self::orient(t, root);
        let np = self.pat.n_patterns();
        let es: Vec<f64> = lengths.iter().map(|&b| (-4.0 * b / 3.0).exp()).collect();
        let trans: Vec<(f64, f64)> =
            es.iter().map(|&e| (0.25 + 0.75 * e, 0.25 - 0.25 * e)).collect();
        let (partial, _) = self.partials(t, &or, &trans);

        // outside[v]: per pattern, the vector B with L = sum_xy B(x) P_xy D_v(y)
        // for the edge above v. Rescaled per node; scalers cancel in ratios.
        let mut outside = vec![vec![[0.0; N_STATES]; np]; t.n_nodes()];
        let mut above = vec![vec![[0.0; N_STATES]; np]; t.n_nodes()];
        for p in 0..np {
            above[root][p] = [0.25; N_STATES];
        }
        let mut grad = vec![0.0; lengths.len()];
        let mut pre = or.post.clone();
        pre.reverse();
        for &u in &pre {
            // own factor: a leaf used as traversal root constrains its state
            let own: Option<usize> = t.taxon_of(u).map(|tx| tx).filter(|_| u == root);
            for &v in &or.children[u] {
                let (diag, off) = trans[or.edge_of[v]];
                let e = es[or.edge_of[v]];
                let mut gsum = 0.0;
                for p in 0..np {
                    let mut b = above[u][p];
                    if let Some(tx) = own {
                        let lp = Self::leaf_partial(self.pat.patterns[p][tx]);
                        for (bx, &l) in b.iter_mut().zip(lp.iter()) {
                            *bx *= l;
                        }
                    }
                    for &w in &or.children[u] {
                        if w == v {
                            continue;
                        }
                        let (dw, ow) = trans[or.edge_of[w]];
                        let d = &partial[w][p];
                        let sum: f64 = d.iter().sum();
                        for (bx, &dx) in b.iter_mut().zip(d.iter()) {
                            *bx *= (dw - ow) * dx + ow * sum;
                        }
                    }
                    outside[v][p] = b;
                    let d = &partial[v][p];
                    let dot: f64 = b.iter().zip(d.iter()).map(|(&x, &y)| x * y).sum();
                    let sb: f64 = b.iter().sum();
                    let sd: f64 = d.iter().sum();
                    let den = e * dot + off * sb * sd;
                    let num = e * (-4.0 / 3.0 * dot + sb * sd / 3.0);
                    gsum += self.pat.weights[p] * num / den;
                }
                grad[or.edge_of[v]] = gsum;
                // A_v = P^T B, rescaled
                for p in 0..np {
                    let b = &outside[v][p];
                    let sum: f64 = b.iter().sum();
                    let mut a = [0.0; N_STATES];
                    for (ax, &bx) in a.iter_mut().zip(b.iter()) {
                        *ax = (diag - off) * bx + off * sum;
                    }
                    let max = a.iter().copied().fold(0.0f64, f64::max);
                    if max > 0.0 {
                        for ax in &mut a {
                            *ax /= max;
                        }
                    }
                    above[v][p] = a;
                }
            }
        }
        Ok(grad)
    }

    pub fn grad_branches(&self, t: &Topology, b: &BranchLengths) -> Result<BTreeMap<Split, f64>> {
        let lengths = edge_lengths(t, b)?;
        let grad = self.grad_branches_lengths(t, &lengths)?;
        let clades = t.subtree_clades();
        let mut out = BTreeMap::new();
        for v in 1..t.n_nodes() {
            out.insert(Split::from_clade(&clades[v])?, grad[v - 1]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::parse_fasta;
    use crate::newick;
    use crate::oracle;
    use crate::taxa::taxa;
    use crate::topology::TreeSpec;

    #[test]
    fn jc69_zero_branch_is_identity() {
        let m = jc69_transition(0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m[i][j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jc69_long_branch_is_stationary() {
        let m = jc69_transition(1e4).unwrap();
        for row in &m {
            for &x in row {
                assert!((x - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jc69_matches_matrix_exponential() {
        // Generator: -1 on the diagonal, 1/3 off; expm via Taylor series,
        // which converges fast for |Qt| this small.
        let t = 0.1;
        let mut q = [[1.0f64 / 3.0; 4]; 4];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = -1.0;
        }
        let mut m = [[0.0f64; 4]; 4];
        let mut term = [[0.0f64; 4]; 4];
        for i in 0..4 {
            m[i][i] = 1.0;
            term[i][i] = 1.0;
        }
        for n in 1..=30 {
            let mut next = [[0.0f64; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    next[i][j] = (0..4).map(|l| term[i][l] * q[l][j] * t / n as f64).sum();
                }
            }
            term = next;
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += term[i][j];
                }
            }
        }
        let jc = jc69_transition(t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((jc[i][j] - m[i][j]).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn jc69_rows_sum_to_one() {
        for &t in &[0.0, 1e-6, 0.1, 1.0, 10.0, 100.0] {
            let m = jc69_transition(t).unwrap();
            for row in &m {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14, "t={t}");
            }
        }
    }

    #[test]
    fn negative_branch_is_a_domain_error() {
        assert!(matches!(jc69_transition(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn two_taxon_identical_site() {
        // Single edge t, same character on both sides: L = 1/4 (1/4 + 3/4 e^{-4t/3}).
        let tx = taxa(["A", "B"]).unwrap();
        let t = Topology::unrooted_from_spec(
            tx,
            &TreeSpec::Internal(vec![TreeSpec::Leaf(0), TreeSpec::Leaf(1)]),
        )
        .unwrap();
        let aln = parse_fasta(">A\nC\n>B\nC\n").unwrap();
        let engine = LikelihoodEngine::new(&aln);
        for &len in &[0.05, 0.3, 1.7] {
            let e = (-4.0f64 * len / 3.0).exp();
            let want = (0.25 * (0.25 + 0.75 * e)).ln();
            let got = engine.log_likelihood_lengths(&t, &[len]).unwrap();
            assert!((got - want).abs() < 1e-13, "len={len}");
        }
    }

    #[test]
    fn three_taxon_star_matches_state_enumeration() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        let (t, _) = newick::parse("(A,B,C);", &tx).unwrap();
        let aln = parse_fasta(">A\nA\n>B\nC\n>C\nC\n").unwrap();
        let engine = LikelihoodEngine::new(&aln);
        let lengths = [0.1, 0.2, 0.3];
        let got = engine.log_likelihood_lengths(&t, &lengths).unwrap();
        let want = oracle::enumerated_log_likelihood_lengths(&aln, &t, &lengths).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn all_ambiguous_alignment_has_zero_log_likelihood() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let (t, _) = newick::parse("((A,B),C,D);", &tx).unwrap();
        let aln = parse_fasta(">A\n--??\n>B\nNN--\n>C\n????\n>D\nNNNN\n").unwrap();
        let engine = LikelihoodEngine::new(&aln);
        let ll = engine.log_likelihood_lengths(&t, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert!(ll.abs() < 1e-12);
    }

    #[test]
    fn traversal_root_invariance() {
        let tx = taxa(["A", "B", "C", "D", "E", "F"]).unwrap();
        let (t, _) = newick::parse("((A,(B,F)),(C,E),D);", &tx).unwrap();
        let aln = parse_fasta(
            ">A\nACGTAC\n>B\nACGTAA\n>C\nCCGTAC\n>D\nACGGAC\n>E\nACTTAC\n>F\nAAGTAC\n",
        )
        .unwrap();
        let engine = LikelihoodEngine::new(&aln);
        let mut b = BranchLengths::new();
        for (i, ctx) in t.edge_contexts().unwrap().into_iter().enumerate() {
            b.insert(ctx.split, 0.05 + 0.04 * i as f64).unwrap();
        }
        let base = engine.log_likelihood(&t, &b).unwrap();
        for v in 0..t.n_nodes() {
            let ll = engine.log_likelihood_at(&t, &b, v).unwrap();
            assert!((ll - base).abs() < 1e-10, "root {v}: {ll} vs {base}");
        }
    }

    #[test]
    fn tiny_branch_large_tree_does_not_underflow() {
        // 20 taxa, 100 sites, branches of 1e-9: rescaling must keep the
        // log-likelihood finite.
        let n = 20usize;
        let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let tx = taxa(names.clone()).unwrap();
        let mut s = "(t0,t1)".to_string();
        for i in 2..n - 2 {
            s = format!("({s},t{i})");
        }
        let s = format!("({s},t{},t{});", n - 2, n - 1);
        let (t, _) = newick::parse(&s, &tx).unwrap();
        let mut fasta = String::new();
        for (i, name) in names.iter().enumerate() {
            fasta.push_str(&format!(">{name}\n"));
            let row: String =
                (0..100).map(|j| ['A', 'C', 'G', 'T'][(i + j) % 4]).collect();
            fasta.push_str(&row);
            fasta.push('\n');
        }
        let aln = parse_fasta(&fasta).unwrap();
        let engine = LikelihoodEngine::new(&aln);
        let lengths = vec![1e-9; t.n_edges()];
        let ll = engine.log_likelihood_lengths(&t, &lengths).unwrap();
        assert!(ll.is_finite());
        assert!(ll < 0.0);
    }

    #[test]
    fn grad_two_taxon_closed_form() {
        let tx = taxa(["A", "B"]).unwrap();
        let t = Topology::unrooted_from_spec(
            tx,
            &TreeSpec::Internal(vec![TreeSpec::Leaf(0), TreeSpec::Leaf(1)]),
        )
        .unwrap();
        let aln = parse_fasta(">A\nC\n>B\nC\n").unwrap();
        let engine = LikelihoodEngine::new(&aln);
        let len = 0.23;
        let e = (-4.0f64 * len / 3.0).exp();
        let want = -e / (0.25 + 0.75 * e);
        let got = engine.grad_branches_lengths(&t, &[len]).unwrap();
        assert!((got[0] - want).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let tx = taxa(["A", "B", "C", "D", "E"]).unwrap();
        let (t, _) = newick::parse("((A,B),(C,E),D);", &tx).unwrap();
        let aln = parse_fasta(">A\nACGTAC\n>B\nACGTTA\n>C\nCCGAAC\n>D\nATGGAC\n>E\nACTTGC\n")
            .unwrap();
        let engine = LikelihoodEngine::new(&aln);
        for _ in 0..20 {
            let lengths: Vec<f64> =
                (0..t.n_edges()).map(|_| rng.gen_range(0.02..0.8)).collect();
            let grad = engine.grad_branches_lengths(&t, &lengths).unwrap();
            for i in 0..lengths.len() {
                let h = 1e-6;
                let mut up = lengths.clone();
                up[i] += h;
                let mut dn = lengths.clone();
                dn[i] -= h;
                let fd = (engine.log_likelihood_lengths(&t, &up).unwrap()
                    - engine.log_likelihood_lengths(&t, &dn).unwrap())
                    / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-8);
                assert!(rel < 1e-5, "edge {i}: analytic {} fd {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn grad_all_ambiguous_is_zero() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let (t, _) = newick::parse("((A,B),C,D);", &tx).unwrap();
        let aln = parse_fasta(">A\n??\n>B\n--\n>C\nNN\n>D\n??\n").unwrap();
        let engine = LikelihoodEngine::new(&aln);
        let grad = engine.grad_branches_lengths(&t, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        for g in grad {
            assert!(g.abs() < 1e-14);
        }
    }

    #[test]
    fn prior_single_edge() {
        // b = 0.1, rate 10: log 10 - 1, no topology constant at N=2.
        let cfg = PriorConfig { branch_rate: 10.0, include_topology_constant: false };
        let lp = cfg.log_prior_lengths(2, &[0.1]);
        assert!((lp - (10.0f64.ln() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn prior_topology_constant_quartet() {
        let on = PriorConfig { branch_rate: 10.0, include_topology_constant: true };
        let off = PriorConfig { branch_rate: 10.0, include_topology_constant: false };
        let lens = [0.1; 5];
        let diff = on.log_prior_lengths(4, &lens) - off.log_prior_lengths(4, &lens);
        assert!((diff + 3.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn prior_default_rate_is_ten() {
        assert!((PriorConfig::default().branch_rate - 10.0).abs() < 1e-15);
        assert!(PriorConfig::default().include_topology_constant);
    }

    #[test]
    fn site_compression_preserves_likelihood() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let (t, _) = newick::parse("((A,B),C,D);", &tx).unwrap();
        // Duplicate columns: compressed pattern count shrinks, result equal.
        let aln = parse_fasta(">A\nAAGG\n>B\nAAGG\n>C\nCCGG\n>D\nCCTT\n").unwrap();
        let engine = LikelihoodEngine::new(&aln);
        assert_eq!(engine.n_patterns(), 2);
        let single = parse_fasta(">A\nAG\n>B\nAG\n>C\nCG\n>D\nCT\n").unwrap();
        let e2 = LikelihoodEngine::new(&single);
        let lens = [0.1, 0.2, 0.3, 0.4, 0.5];
        let a = engine.log_likelihood_lengths(&t, &lens).unwrap();
        let b = e2.log_likelihood_lengths(&t, &lens).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
}
