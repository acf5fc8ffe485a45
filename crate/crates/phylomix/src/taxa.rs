//! Taxon sets and the bitset types built over them: clades, subsplits,
//! splits and primary subsplit pairs (PSPs).
//!
//! A clade is a non-empty subset of the taxon set, stored as a fixed-width
//! bitset. Bit layout puts taxon 0 in the most significant position of the
//! first block, so comparing blocks lexicographically compares clades as
//! bitstrings with taxon 0 most significant. The leading clade of a
//! canonical subsplit is then simply the greater of the two.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// An ordered set of distinct taxon names. The order is fixed for the
/// lifetime of a run and defines the bit positions of every clade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TaxonSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyInput("taxon set has no names".into()));
        }
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidClade("empty taxon name".into()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateTaxon(name.clone()));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

const BLOCK_BITS: usize = 64;

type Blocks = SmallVec<[u64; 1]>;

/// A non-empty subset of the taxon set, as a fixed-width bitset.
///
/// Equality, ordering and hashing are bitwise and deterministic. Derived
/// `Ord` on the block vector realizes the canonical clade order: blocks are
/// compared front to back and taxon 0 occupies the most significant bit of
/// block 0.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Clade {
    n_taxa: usize,
    blocks: Blocks,
}

impl Clade {
    fn n_blocks(n_taxa: usize) -> usize {
        n_taxa.div_ceil(BLOCK_BITS)
    }

    fn bit(taxon: usize) -> (usize, u64) {
        (taxon / BLOCK_BITS, 1u64 << (BLOCK_BITS - 1 - taxon % BLOCK_BITS))
    }

    pub fn empty(n_taxa: usize) -> Self {
        Self { n_taxa, blocks: smallvec::smallvec![0; Self::n_blocks(n_taxa)] }
    }

    pub fn from_taxa(n_taxa: usize, taxa: &[usize]) -> Result<Self> {
        let mut clade = Self::empty(n_taxa);
        for &t in taxa {
            if t >= n_taxa {
                return Err(Error::InvalidClade(format!(
                    "taxon index {t} out of range for {n_taxa} taxa"
                )));
            }
            let (b, m) = Self::bit(t);
            clade.blocks[b] |= m;
        }
        if clade.is_empty_set() {
            return Err(Error::InvalidClade("clade must be non-empty".into()));
        }
        Ok(clade)
    }

    pub fn singleton(n_taxa: usize, taxon: usize) -> Self {
        Self::from_taxa(n_taxa, &[taxon]).expect("singleton in range")
    }

    pub fn full(n_taxa: usize) -> Self {
        let mut clade = Self::empty(n_taxa);
        for t in 0..n_taxa {
            let (b, m) = Self::bit(t);
            clade.blocks[b] |= m;
        }
        clade
    }

    pub fn n_taxa(&self) -> usize {
        self.n_taxa
    }

    pub fn contains(&self, taxon: usize) -> bool {
        let (b, m) = Self::bit(taxon);
        self.blocks[b] & m != 0
    }

    pub fn count(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty_set(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn union(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n_taxa, other.n_taxa);
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a | b).collect();
        Self { n_taxa: self.n_taxa, blocks }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.blocks.iter().zip(&other.blocks).any(|(a, b)| a & b != 0)
    }

    pub fn complement(&self) -> Self {
        let mut c = Self::full(self.n_taxa);
        for (cb, sb) in c.blocks.iter_mut().zip(&self.blocks) {
            *cb &= !sb;
        }
        c
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.n_taxa
    }

    pub fn taxa(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_taxa).filter(|&t| self.contains(t))
    }

    /// Bitstring in taxon order (taxon 0 first), as used in checkpoints.
    pub fn bitstring(&self) -> String {
        (0..self.n_taxa).map(|t| if self.contains(t) { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let n = s.len();
        if n == 0 {
            return Err(Error::InvalidClade("empty bitstring".into()));
        }
        let mut taxa = Vec::new();
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '1' => taxa.push(i),
                '0' => {}
                _ => return Err(Error::InvalidClade(format!("bad bitstring char {ch:?}"))),
            }
        }
        Self::from_taxa(n, &taxa)
    }
}

impl fmt::Display for Clade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bitstring())
    }
}

/// An ordered partition of a clade into two disjoint clades.
///
/// The leading clade is the one containing the lowest-index taxon of the
/// union, which coincides with the bitwise-greater clade under `Clade`'s
/// canonical order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subsplit {
    first: Clade,
    second: Clade,
}

impl Subsplit {
    pub fn first(&self) -> &Clade {
        &self.first
    }

    pub fn second(&self) -> &Clade {
        &self.second
    }

    pub fn union(&self) -> Clade {
        self.first.union(&self.second)
    }

    pub fn encode(&self) -> String {
        format!("{}|{}", self.first.bitstring(), self.second.bitstring())
    }

    pub fn decode(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('|')
            .ok_or_else(|| Error::InvalidClade(format!("missing '|' in subsplit {s:?}")))?;
        canonical_subsplit(Clade::from_bitstring(a)?, Clade::from_bitstring(b)?)
    }
}

impl fmt::Display for Subsplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.encode())
    }
}

/// Deterministic ordering of a disjoint clade pair; argument order does not
/// matter.
pub fn canonical_subsplit(c1: Clade, c2: Clade) -> Result<Subsplit> {
    if c1.n_taxa() != c2.n_taxa() {
        return Err(Error::InvalidClade("clades over different taxon sets".into()));
    }
    if c1.is_empty_set() || c2.is_empty_set() {
        return Err(Error::InvalidClade("subsplit clades must be non-empty".into()));
    }
    if c1.intersects(&c2) {
        return Err(Error::InvalidClade(format!(
            "overlapping clades {} and {}",
            c1.bitstring(),
            c2.bitstring()
        )));
    }
    if c1 > c2 {
        Ok(Subsplit { first: c1, second: c2 })
    } else {
        Ok(Subsplit { first: c2, second: c1 })
    }
}

/// A root subsplit: a bipartition of the full taxon set, induced by a tree
/// edge. Edges are identified by their split, stable across re-rooting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Split(Subsplit);

impl Split {
    pub fn new(s: Subsplit) -> Result<Self> {
        if !s.union().is_full() {
            return Err(Error::InvalidClade(format!(
                "subsplit {} does not cover the taxon set",
                s.encode()
            )));
        }
        Ok(Self(s))
    }

    pub fn from_clade(c: &Clade) -> Result<Self> {
        if c.is_full() || c.is_empty_set() {
            return Err(Error::InvalidClade("split side must be a proper subset".into()));
        }
        Self::new(canonical_subsplit(c.clone(), c.complement())?)
    }

    pub fn subsplit(&self) -> &Subsplit {
        &self.0
    }

    pub fn first(&self) -> &Clade {
        self.0.first()
    }

    pub fn second(&self) -> &Clade {
        self.0.second()
    }

    pub fn encode(&self) -> String {
        self.0.encode()
    }

    pub fn decode(s: &str) -> Result<Self> {
        Self::new(Subsplit::decode(s)?)
    }

    /// The side of this split containing the given clade, if one does.
    pub fn side_containing(&self, c: &Clade) -> Option<&Clade> {
        if !c.intersects(self.second()) {
            Some(self.first())
        } else if !c.intersects(self.first()) {
            Some(self.second())
        } else {
            None
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.encode())
    }
}

/// A primary subsplit pair: a subsplit conditioned on a split. `side` must
/// partition exactly one side of `anchor`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Psp {
    anchor: Split,
    side: Subsplit,
}

impl Psp {
    pub fn new(anchor: Split, side: Subsplit) -> Result<Self> {
        let u = side.union();
        if u != *anchor.first() && u != *anchor.second() {
            return Err(Error::InvalidClade(format!(
                "PSP side {} does not partition a side of {}",
                side.encode(),
                anchor.encode()
            )));
        }
        Ok(Self { anchor, side })
    }

    pub fn anchor(&self) -> &Split {
        &self.anchor
    }

    pub fn side(&self) -> &Subsplit {
        &self.side
    }

    pub fn encode(&self) -> String {
        format!("{} {}", self.anchor.encode(), self.side.encode())
    }

    pub fn decode(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(' ')
            .ok_or_else(|| Error::InvalidClade(format!("missing space in PSP {s:?}")))?;
        Self::new(Split::decode(a)?, Subsplit::decode(b)?)
    }
}

impl fmt::Display for Psp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.encode())
    }
}

/// Shared handle to a taxon set; topologies and models over the same run
/// hold clones of one `Arc`.
pub type Taxa = Arc<TaxonSet>;

pub fn taxa<I, S>(names: I) -> Result<Taxa>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    TaxonSet::new(names).map(Arc::new)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clade(n: usize, taxa: &[usize]) -> Clade {
        Clade::from_taxa(n, taxa).unwrap()
    }

    #[test]
    fn taxon_set_rejects_duplicates() {
        assert!(matches!(TaxonSet::new(["A", "B", "A"]), Err(Error::DuplicateTaxon(_))));
    }

    #[test]
    fn canonical_is_argument_order_invariant() {
        // ({A},{B}) and ({B},{A}) give the identical value.
        let a = clade(3, &[0]);
        let b = clade(3, &[1]);
        let s1 = canonical_subsplit(a.clone(), b.clone()).unwrap();
        let s2 = canonical_subsplit(b, a).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn canonical_leading_clade_contains_lowest_taxon() {
        // ({A,C},{B}) with order A<B<C: leading clade is the one with A.
        let ac = clade(3, &[0, 2]);
        let b = clade(3, &[1]);
        let s = canonical_subsplit(b, ac.clone()).unwrap();
        assert_eq!(*s.first(), ac);

        // ({B},{C,D}) with order A<B<C<D: leading clade is {B}.
        let bb = clade(4, &[1]);
        let cd = clade(4, &[2, 3]);
        let s = canonical_subsplit(cd, bb.clone()).unwrap();
        assert_eq!(*s.first(), bb);
    }

    #[test]
    fn canonical_is_idempotent() {
        let s = canonical_subsplit(clade(4, &[1, 2]), clade(4, &[0])).unwrap();
        let again = canonical_subsplit(s.first().clone(), s.second().clone()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn overlapping_clades_rejected() {
        let r = canonical_subsplit(clade(3, &[0, 1]), clade(3, &[1, 2]));
        assert!(matches!(r, Err(Error::InvalidClade(_))));
    }

    #[test]
    fn bitstring_round_trip() {
        let c = clade(6, &[0, 3, 5]);
        assert_eq!(c.bitstring(), "100101");
        assert_eq!(Clade::from_bitstring("100101").unwrap(), c);
    }

    #[test]
    fn split_requires_full_union() {
        let s = canonical_subsplit(clade(4, &[0, 1]), clade(4, &[2])).unwrap();
        assert!(Split::new(s).is_err());
        let s = canonical_subsplit(clade(4, &[0, 1]), clade(4, &[2, 3])).unwrap();
        assert!(Split::new(s).is_ok());
    }

    #[test]
    fn psp_side_must_partition_anchor_side() {
        let anchor = Split::from_clade(&clade(4, &[0, 1])).unwrap();
        let good = canonical_subsplit(clade(4, &[2]), clade(4, &[3])).unwrap();
        assert!(Psp::new(anchor.clone(), good).is_ok());
        let bad = canonical_subsplit(clade(4, &[1]), clade(4, &[2])).unwrap();
        assert!(Psp::new(anchor, bad).is_err());
    }

    #[test]
    fn clade_order_is_bitstring_order() {
        // Taxon 0 is most significant: {A} > {B,C,D}.
        let a = clade(4, &[0]);
        let bcd = clade(4, &[1, 2, 3]);
        assert!(a > bcd);
    }

    #[test]
    fn wide_clades_cross_block_boundary() {
        let n = 70;
        let c = clade(n, &[0, 64, 69]);
        assert_eq!(c.count(), 3);
        assert!(c.contains(64));
        assert!(!c.contains(63));
        let comp = c.complement();
        assert_eq!(comp.count(), n - 3);
        assert!(!comp.intersects(&c));
        assert_eq!(Clade::from_bitstring(&c.bitstring()).unwrap(), c);
    }
}
