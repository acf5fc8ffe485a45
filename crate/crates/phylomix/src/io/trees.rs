//! Candidate tree set ingestion: one Newick tree per line, branch lengths
//! discarded, rooted lines unrooted on ingest, empty lines skipped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::newick;
use crate::taxa::Taxa;
use crate::topology::Topology;

/// Candidate trees over one taxon set. Duplicates are kept: they carry
/// weight for frequency-based initialization, though support membership is
/// a set.
#[derive(Debug, Clone)]
pub struct CandidateTreeSet {
    taxa: Taxa,
    trees: Vec<Topology>,
}

impl CandidateTreeSet {
    pub fn new(taxa: Taxa, trees: Vec<Topology>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::EmptyInput("no candidate trees".into()));
        }
        for t in &trees {
            if t.taxa().names() != taxa.names() {
                return Err(Error::TaxonSet("candidate tree over a different taxon set".into()));
            }
        }
        Ok(Self { taxa, trees })
    }

    pub fn taxa(&self) -> &Taxa {
        &self.taxa
    }

    pub fn trees(&self) -> &[Topology] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn n_distinct(&self) -> usize {
        let keys: std::collections::BTreeSet<_> = self.trees.iter().map(|t| t.key()).collect();
        keys.len()
    }
}

pub fn parse_tree_list(text: &str, taxa: &Taxa) -> Result<CandidateTreeSet> {
    let mut trees = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (t, _) = newick::parse(line, taxa).map_err(|e| match e {
            Error::TaxonSet(m) => Error::TaxonSet(m),
            Error::DuplicateTaxon(m) => Error::TaxonSet(format!("taxon {m} repeated")),
            other => Error::Parse { line: lineno + 1, msg: other.to_string() },
        })?;
        let t = if t.is_rooted() {
            t.unroot().map_err(|e| Error::Parse { line: lineno + 1, msg: e.to_string() })?
        } else {
            t
        };
        trees.push(t);
    }
    CandidateTreeSet::new(taxa.clone(), trees)
}

pub fn read_tree_list(path: &Path, taxa: &Taxa) -> Result<CandidateTreeSet> {
    parse_tree_list(&std::fs::read_to_string(path)?, taxa)
}
