//! Reference posterior files: tab-separated `newick<TAB>probability` lines,
//! used for KL evaluation against a trained approximation.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::newick;
use crate::taxa::Taxa;
use crate::topology::Topology;

/// Distinct topologies with positive probabilities summing to at most one
/// (truncated credible sets are fine).
#[derive(Debug, Clone)]
pub struct ReferencePosterior {
    entries: Vec<(Topology, f64)>,
}

impl ReferencePosterior {
    pub fn new(entries: Vec<(Topology, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("reference posterior has no entries".into()));
        }
        let mut seen = BTreeSet::new();
        let mut total = 0.0;
        for (t, p) in &entries {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Range(format!("probability {p} outside (0, 1]")));
            }
            if !seen.insert(t.key()) {
                return Err(Error::Duplicate("repeated topology in reference posterior".into()));
            }
            total += p;
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::Range(format!("probabilities sum to {total} > 1")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(Topology, f64)] {
        &self.entries
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

pub fn parse_reference_posterior(text: &str, taxa: &Taxa) -> Result<ReferencePosterior> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (tree_str, prob_str) = line.split_once('\t').ok_or(Error::Parse {
            line: lineno + 1,
            msg: "expected newick<TAB>probability".into(),
        })?;
        let (t, _) = newick::parse(tree_str.trim(), taxa).map_err(|e| match e {
            Error::TaxonSet(m) => Error::TaxonSet(m),
            other => Error::Parse { line: lineno + 1, msg: other.to_string() },
        })?;
        let t = if t.is_rooted() { t.unroot()? } else { t };
        let p: f64 = prob_str.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad probability {prob_str:?}"),
        })?;
        entries.push((t, p));
    }
    ReferencePosterior::new(entries)
}

pub fn read_reference_posterior(path: &Path, taxa: &Taxa) -> Result<ReferencePosterior> {
    parse_reference_posterior(&std::fs::read_to_string(path)?, taxa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxa::taxa;

    #[test]
    fn two_halves_are_valid() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let text = "((A,B),C,D);\t0.5\n((A,C),B,D);\t0.5\n";
        let r = parse_reference_posterior(text, &tx).unwrap();
        assert_eq!(r.entries().len(), 2);
        assert!((r.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_credible_set_is_valid() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let text = "((A,B),C,D);\t0.6\n((A,C),B,D);\t0.35\n";
        let r = parse_reference_posterior(text, &tx).unwrap();
        assert!((r.total_mass() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn negative_probability_is_a_range_error() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        assert!(matches!(
            parse_reference_posterior("((A,B),C,D);\t-0.1\n", &tx),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn mass_above_one_is_a_range_error() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let text = "((A,B),C,D);\t0.7\n((A,C),B,D);\t0.7\n";
        assert!(matches!(parse_reference_posterior(text, &tx), Err(Error::Range(_))));
    }

    #[test]
    fn duplicate_topology_is_rejected() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        // Same topology written two ways.
        let text = "((A,B),C,D);\t0.3\n((B,A),D,C);\t0.3\n";
        assert!(matches!(parse_reference_posterior(text, &tx), Err(Error::Duplicate(_))));
    }
}
