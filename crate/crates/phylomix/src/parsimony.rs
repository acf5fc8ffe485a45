//! Small parsimony via the Sankoff dynamic program with unit substitution
//! cost. Reports per-root-state minimum change counts, which is what the
//! conflicting-signal demo tables show.

use crate::alignment::{encode_char, N_STATES};
use crate::error::{Error, Result};
use crate::taxa::taxa;
use crate::topology::Topology;

const INF: u32 = u32::MAX / 4;

/// One site: a character per taxon over {A,C,G,T}.
#[derive(Debug, Clone)]
pub struct SiteColumn(Vec<u8>);

impl SiteColumn {
    pub fn new(states: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = states.iter().find(|&&s| s as usize >= N_STATES) {
            return Err(Error::Domain(format!("unknown character code {bad}")));
        }
        Ok(Self(states))
    }

    pub fn from_chars(chars: &str) -> Result<Self> {
        let states = chars
            .chars()
            .map(|c| {
                let s = encode_char(c)?;
                if s as usize >= N_STATES {
                    return Err(Error::Domain(format!("ambiguity code {c:?} not allowed here")));
                }
                Ok(s)
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(states)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn state(&self, taxon: usize) -> u8 {
        self.0[taxon]
    }
}

/// Minimum substitution count for each possible root state.
pub fn sankoff_scores(t: &Topology, col: &SiteColumn) -> Result<[u32; N_STATES]> {
    if !t.is_rooted() {
        return Err(Error::WrongRootedness("sankoff scoring takes a rooted tree".into()));
    }
    if col.len() != t.n_taxa() {
        return Err(Error::Contract(format!(
            "column has {} characters for {} taxa",
            col.len(),
            t.n_taxa()
        )));
    }
    let mut cost = vec![[0u32; N_STATES]; t.n_nodes()];
    for v in t.post_order() {
        if let Some(tx) = t.taxon_of(v) {
            let observed = col.state(tx) as usize;
            for s in 0..N_STATES {
                cost[v][s] = if s == observed { 0 } else { INF };
            }
        } else {
            let mut acc = [0u32; N_STATES];
            for &c in t.children_of(v) {
                for (s, a) in acc.iter_mut().enumerate() {
                    let best = (0..N_STATES)
                        .map(|y| cost[c][y] + u32::from(s != y))
                        .min()
                        .expect("four states");
                    *a += best;
                }
            }
            cost[v] = acc;
        }
    }
    Ok(cost[t.root()])
}

/// Minimum substitution count over all root states.
pub fn parsimony_score(t: &Topology, col: &SiteColumn) -> Result<u32> {
    Ok(*sankoff_scores(t, col)?.iter().min().expect("four states"))
}

/// The six-taxon, two-site fixture demonstrating conflicting signal: the
/// two pairings that reuse subtree structure score 5 substitutions while
/// the two cross pairings score 6.
pub mod conflict_demo {
    use super::*;
    use crate::newick;
    use crate::taxa::Taxa;

    pub const SITE_NAMES: [&str; 2] = ["i", "j"];
    /// Characters for taxa 1..6, one row per site.
    pub const SITE_CHARS: [&str; 2] = ["ACCAGG", "CCAGGA"];
    pub const SUBTREE_NAMES: [&str; 4] = ["A=((1,2),3)", "B=((4,5),6)", "A'=(1,(2,3))", "B'=(4,(5,6))"];
    pub const TREE_NAMES: [&str; 4] = ["t1 (A^B)", "t2 (A'^B')", "t3 (A^B')", "t4 (A'^B)"];

    pub struct Demo {
        pub taxa: Taxa,
        /// Rooted three-taxon subtrees A, B, A', B' over their own taxa.
        pub subtrees: Vec<(Topology, Vec<SiteColumn>)>,
        /// The four rooted six-taxon pairings.
        pub trees: Vec<Topology>,
        /// Full six-taxon columns for sites i and j.
        pub columns: Vec<SiteColumn>,
    }

    pub fn build() -> Demo {
        let tx6 = taxa(["1", "2", "3", "4", "5", "6"]).expect("fixed names");
        let left = taxa(["1", "2", "3"]).expect("fixed names");
        let right = taxa(["4", "5", "6"]).expect("fixed names");

        let sub = |tx: &Taxa, s: &str| newick::parse(s, tx).expect("fixture newick").0;
        let cols3 = |offset: usize| -> Vec<SiteColumn> {
            SITE_CHARS
                .iter()
                .map(|row| SiteColumn::from_chars(&row[offset..offset + 3]).expect("fixture"))
                .collect()
        };

        let subtrees = vec![
            (sub(&left, "((1,2),3);"), cols3(0)),
            (sub(&right, "((4,5),6);"), cols3(3)),
            (sub(&left, "(1,(2,3));"), cols3(0)),
            (sub(&right, "(4,(5,6));"), cols3(3)),
        ];
        let trees = vec![
            sub(&tx6, "(((1,2),3),((4,5),6));"),
            sub(&tx6, "((1,(2,3)),(4,(5,6)));"),
            sub(&tx6, "(((1,2),3),(4,(5,6)));"),
            sub(&tx6, "((1,(2,3)),((4,5),6));"),
        ];
        let columns = SITE_CHARS
            .iter()
            .map(|row| SiteColumn::from_chars(row).expect("fixture"))
            .collect();
        Demo { taxa: tx6, subtrees, trees, columns }
    }

    impl Demo {
        /// Per-site, per-subtree root-state scores.
        pub fn subtree_scores(&self) -> Vec<Vec<[u32; N_STATES]>> {
            self.subtrees
                .iter()
                .map(|(t, cols)| {
                    cols.iter().map(|c| sankoff_scores(t, c).expect("fixture")).collect()
                })
                .collect()
        }

        /// Per-site, per-tree root-state scores.
        pub fn tree_scores(&self) -> Vec<Vec<[u32; N_STATES]>> {
            self.trees
                .iter()
                .map(|t| {
                    self.columns
                        .iter()
                        .map(|c| sankoff_scores(t, c).expect("fixture"))
                        .collect()
                })
                .collect()
        }

        /// Total parsimony score per tree, summed over both sites.
        pub fn totals(&self) -> Vec<u32> {
            self.trees
                .iter()
                .map(|t| {
                    self.columns
                        .iter()
                        .map(|c| parsimony_score(t, c).expect("fixture"))
                        .sum()
                })
                .collect()
        }
    }
}
