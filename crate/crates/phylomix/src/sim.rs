//! Synthetic data generation: uniform random topologies, exponential branch
//! lengths, JC69 character simulation, and NNI perturbation for building
//! candidate tree sets around a true tree.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::alignment::Alignment;
use crate::error::{Error, Result};
use crate::likelihood::jc69_transition;
use crate::taxa::Taxa;
use crate::topology::{BranchLengths, Topology, TreeSpec};

/// Uniform over the (2N-5)!! unrooted topologies: insert taxa one at a time
/// into a uniformly chosen edge.
pub fn random_unrooted_topology<R: Rng>(taxa: &Taxa, rng: &mut R) -> Result<Topology> {
    let n = taxa.len();
    if n < 3 {
        return Err(Error::UnsupportedSize("random topology needs >= 3 taxa".into()));
    }
    let mut spec =
        TreeSpec::Internal(vec![TreeSpec::Leaf(0), TreeSpec::Leaf(1), TreeSpec::Leaf(2)]);
    for t in 3..n {
        let mut paths = Vec::new();
        collect_paths(&spec, &mut Vec::new(), &mut paths);
        let path = &paths[rng.gen_range(0..paths.len())];
        spec = insert_at(&spec, path, t);
    }
    Topology::unrooted_from_spec(taxa.clone(), &spec)
}

fn collect_paths(spec: &TreeSpec, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if let TreeSpec::Internal(children) = spec {
        for (i, child) in children.iter().enumerate() {
            prefix.push(i);
            out.push(prefix.clone());
            collect_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn insert_at(spec: &TreeSpec, path: &[usize], taxon: usize) -> TreeSpec {
    match spec {
        TreeSpec::Internal(children) => {
            let mut children = children.clone();
            if path.len() == 1 {
                let old = children[path[0]].clone();
                children[path[0]] = TreeSpec::Internal(vec![old, TreeSpec::Leaf(taxon)]);
            } else {
                children[path[0]] = insert_at(&children[path[0]], &path[1..], taxon);
            }
            TreeSpec::Internal(children)
        }
        TreeSpec::Leaf(_) => unreachable!("paths address internal children"),
    }
}

/// Independent Exp(rate) draws, one per edge.
pub fn random_branch_lengths<R: Rng>(
    t: &Topology,
    rate: f64,
    rng: &mut R,
) -> Result<BranchLengths> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("rate must be positive, got {rate}")));
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut b = BranchLengths::new();
    for ctx in t.edge_contexts()? {
        let mut draw: f64 = exp.sample(rng);
        if draw <= 0.0 {
            draw = f64::MIN_POSITIVE;
        }
        b.insert(ctx.split, draw)?;
    }
    Ok(b)
}

/// Simulate characters down the tree: stationary root states, JC69
/// transitions along every edge.
pub fn simulate_jc69<R: Rng>(
    t: &Topology,
    b: &BranchLengths,
    n_sites: usize,
    rng: &mut R,
) -> Result<Alignment> {
    if n_sites == 0 {
        return Err(Error::Contract("need at least one site".into()));
    }
    b.validate_for(t)?;
    let lengths = crate::likelihood::edge_lengths(t, b)?;
    let trans: Vec<[[f64; 4]; 4]> =
        lengths.iter().map(|&l| jc69_transition(l)).collect::<Result<_>>()?;
    let order = t.post_order();
    let mut states = vec![vec![0u8; n_sites]; t.n_nodes()];
    for &v in order.iter().rev() {
        if v == t.root() {
            for s in 0..n_sites {
                states[v][s] = rng.gen_range(0..4) as u8;
            }
        } else {
            let p = t.parent_of(v).expect("non-root");
            let rows = &trans[v - 1];
            for s in 0..n_sites {
                let row = &rows[states[p][s] as usize];
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut drawn = 3u8;
                for (j, &pr) in row.iter().enumerate() {
                    acc += pr;
                    if u < acc {
                        drawn = j as u8;
                        break;
                    }
                }
                states[v][s] = drawn;
            }
        }
    }
    let mut rows = vec![Vec::new(); t.n_taxa()];
    for v in 0..t.n_nodes() {
        if let Some(tx) = t.taxon_of(v) {
            rows[tx] = states[v].clone();
        }
    }
    Alignment::new(t.taxa().clone(), rows)
}

/// One random nearest-neighbor interchange across a uniformly chosen
/// internal edge.
pub fn random_nni_neighbor<R: Rng>(t: &Topology, rng: &mut R) -> Result<Topology> {
    if t.is_rooted() {
        return Err(Error::WrongRootedness("NNI operates on unrooted trees".into()));
    }
    if t.n_taxa() < 4 {
        return Err(Error::UnsupportedSize("NNI needs >= 4 taxa".into()));
    }
    let mut adj = vec![Vec::new(); t.n_nodes()];
    for v in 0..t.n_nodes() {
        adj[v].extend_from_slice(t.children_of(v));
        if let Some(p) = t.parent_of(v) {
            adj[v].push(p);
        }
    }
    // Internal edges: both endpoints internal.
    let internal: Vec<usize> = (1..t.n_nodes())
        .filter(|&v| !t.is_leaf(v) && !t.is_leaf(t.parent_of(v).expect("non-root")))
        .collect();
    let v = internal[rng.gen_range(0..internal.len())];
    let u = t.parent_of(v).expect("non-root");
    let below: Vec<usize> = adj[v].iter().copied().filter(|&z| z != u).collect();
    let above: Vec<usize> = adj[u].iter().copied().filter(|&z| z != v).collect();
    debug_assert_eq!(below.len(), 2);
    debug_assert_eq!(above.len(), 2);
    // Swap one below-corner with one above-corner; both alternative
    // pairings are NNI neighbors.
    let (c, z) = (below[rng.gen_range(0..2)], above[rng.gen_range(0..2)]);
    let keep_c = below.iter().copied().find(|&x| x != c).expect("two corners");
    let keep_z = above.iter().copied().find(|&x| x != z).expect("two corners");
    let spec = TreeSpec::Internal(vec![
        t.spec_away(&adj, keep_c, v),
        t.spec_away(&adj, z, u),
        TreeSpec::Internal(vec![t.spec_away(&adj, c, v), t.spec_away(&adj, keep_z, u)]),
    ]);
    Topology::unrooted_from_spec(t.taxa().clone(), &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::taxa::taxa;
    use crate::topology::enumerate_unrooted;
    use std::collections::BTreeMap;

    #[test]
    fn random_topologies_are_uniform_over_quartets() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let mut rng = stream_rng(1, &[]);
        let mut counts: BTreeMap<_, usize> = BTreeMap::new();
        let n = 30_000;
        for _ in 0..n {
            let t = random_unrooted_topology(&tx, &mut rng).unwrap();
            *counts.entry(t.key()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        for (_, c) in counts {
            let p = 1.0 / 3.0;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let tx = taxa(["A", "B", "C", "D", "E"]).unwrap();
        let mut rng = stream_rng(3, &[]);
        let t = random_unrooted_topology(&tx, &mut rng).unwrap();
        let b = random_branch_lengths(&t, 10.0, &mut rng).unwrap();
        let mut r1 = stream_rng(4, &[]);
        let mut r2 = stream_rng(4, &[]);
        let a1 = simulate_jc69(&t, &b, 50, &mut r1).unwrap();
        let a2 = simulate_jc69(&t, &b, 50, &mut r2).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn substitution_fraction_matches_the_transition_probability() {
        // Two taxa, one long edge: the fraction of differing sites is
        // binomial with p = 3/4 (1 - e^{-4b/3}).
        let tx = taxa(["A", "B"]).unwrap();
        let t = Topology::unrooted_from_spec(
            tx,
            &TreeSpec::Internal(vec![TreeSpec::Leaf(0), TreeSpec::Leaf(1)]),
        )
        .unwrap();
        let mut b = BranchLengths::new();
        let len = 0.8;
        b.insert(t.splits().unwrap().pop().unwrap(), len).unwrap();
        let m = 100_000;
        let mut rng = stream_rng(9, &[]);
        let aln = simulate_jc69(&t, &b, m, &mut rng).unwrap();
        let diff = (0..m).filter(|&s| aln.site(0, s) != aln.site(1, s)).count() as f64;
        let p = 0.75 * (1.0 - (-4.0f64 * len / 3.0).exp());
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        assert!((diff - m as f64 * p).abs() < 3.0 * sigma, "diff={diff}");
    }

    #[test]
    fn nni_neighbors_are_distinct_valid_topologies() {
        let tx = taxa(["A", "B", "C", "D", "E", "F"]).unwrap();
        let mut rng = stream_rng(5, &[]);
        let t = random_unrooted_topology(&tx, &mut rng).unwrap();
        let enumerated = enumerate_unrooted(t.taxa()).unwrap();
        for _ in 0..50 {
            let n = random_nni_neighbor(&t, &mut rng).unwrap();
            assert_ne!(n.key(), t.key());
            assert!(enumerated.iter().any(|e| e.key() == n.key()));
        }
    }

    #[test]
    fn branch_lengths_are_positive_and_exponential_scaled() {
        let tx = taxa(["A", "B", "C", "D", "E", "F", "G"]).unwrap();
        let mut rng = stream_rng(6, &[]);
        let t = random_unrooted_topology(&tx, &mut rng).unwrap();
        let mut total = 0.0;
        let reps = 3000;
        for _ in 0..reps {
            let b = random_branch_lengths(&t, 10.0, &mut rng).unwrap();
            for (_, l) in b.iter() {
                assert!(l > 0.0);
                total += l;
            }
        }
        let n = (reps * t.n_edges()) as f64;
        let mean = total / n;
        assert!((mean - 0.1).abs() < 4.0 * 0.1 / n.sqrt(), "mean={mean}");
    }
}
