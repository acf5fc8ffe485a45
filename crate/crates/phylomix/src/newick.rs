//! Newick subset parser and serializer.
//!
//! Grammar: `tree := subtree ";"`, `subtree := leaf | "(" subtree ("," subtree)+ ")"`,
//! with an optional `:length` after any subtree. Names are `[A-Za-z0-9_.-]+`
//! or single-quoted. A top-level trifurcation parses as unrooted, a top-level
//! bifurcation as rooted. Branch lengths are attached to edges by split and
//! are only retained for unrooted trees; serialization emits 10 significant
//! digits.

use crate::error::{Error, Result};
use crate::math::fmt_sig;
use crate::taxa::{Split, Taxa};
use crate::topology::{BranchLengths, Topology, TreeSpec};

#[derive(Debug)]
enum PSpec {
    Leaf(String, Option<f64>),
    Internal(Vec<PSpec>, Option<f64>),
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Self { s: s.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.bump() {
            Some(got) if got == c => Ok(()),
            got => Err(parse_err(format!(
                "expected {:?}, got {:?}",
                c as char,
                got.map(|g| g as char)
            ))),
        }
    }
}

fn parse_err(msg: String) -> Error {
    Error::Parse { line: 1, msg }
}

fn is_name_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'-'
}

fn parse_name(cur: &mut Cursor) -> Result<String> {
    match cur.peek() {
        Some(b'\'') => {
            cur.bump();
            let mut out = String::new();
            loop {
                match cur.s.get(cur.pos).copied() {
                    Some(b'\'') => {
                        cur.pos += 1;
                        if cur.s.get(cur.pos) == Some(&b'\'') {
                            out.push('\'');
                            cur.pos += 1;
                        } else {
                            break;
                        }
                    }
                    Some(c) => {
                        out.push(c as char);
                        cur.pos += 1;
                    }
                    None => return Err(parse_err("unterminated quoted name".into())),
                }
            }
            if out.is_empty() {
                return Err(parse_err("empty quoted name".into()));
            }
            Ok(out)
        }
        Some(c) if is_name_char(c) => {
            let start = cur.pos;
            while cur.pos < cur.s.len() && is_name_char(cur.s[cur.pos]) {
                cur.pos += 1;
            }
            Ok(String::from_utf8_lossy(&cur.s[start..cur.pos]).into_owned())
        }
        got => Err(parse_err(format!("expected a name, got {:?}", got.map(|g| g as char)))),
    }
}

fn parse_length(cur: &mut Cursor) -> Result<Option<f64>> {
    if cur.peek() == Some(b':') {
        cur.bump();
        cur.skip_ws();
        let start = cur.pos;
        while cur.pos < cur.s.len()
            && matches!(cur.s[cur.pos], b'0'..=b'9' | b'.' | b'+' | b'-' | b'e' | b'E')
        {
            cur.pos += 1;
        }
        let txt = std::str::from_utf8(&cur.s[start..cur.pos]).unwrap_or("");
        let v: f64 = txt
            .parse()
            .map_err(|_| parse_err(format!("bad branch length {txt:?}")))?;
        Ok(Some(v))
    } else {
        Ok(None)
    }
}

fn parse_subtree(cur: &mut Cursor) -> Result<PSpec> {
    if cur.peek() == Some(b'(') {
        cur.bump();
        let mut children = vec![parse_subtree(cur)?];
        while cur.peek() == Some(b',') {
            cur.bump();
            children.push(parse_subtree(cur)?);
        }
        cur.expect(b')')?;
        if children.len() < 2 {
            return Err(parse_err("internal node needs at least two children".into()));
        }
        let len = parse_length(cur)?;
        Ok(PSpec::Internal(children, len))
    } else {
        let name = parse_name(cur)?;
        let len = parse_length(cur)?;
        Ok(PSpec::Leaf(name, len))
    }
}

fn to_tree_spec(
    p: &PSpec,
    taxa: &Taxa,
    lengths: &mut Vec<(Vec<usize>, f64)>,
) -> Result<(TreeSpec, Vec<usize>)> {
    match p {
        PSpec::Leaf(name, len) => {
            let t = taxa
                .position(name)
                .ok_or_else(|| Error::TaxonSet(format!("unknown taxon {name:?}")))?;
            if let Some(l) = len {
                lengths.push((vec![t], *l));
            }
            Ok((TreeSpec::Leaf(t), vec![t]))
        }
        PSpec::Internal(children, len) => {
            if children.len() > 2 {
                return Err(parse_err("multifurcation below the top level".into()));
            }
            let mut specs = Vec::new();
            let mut members = Vec::new();
            for c in children {
                let (s, m) = to_tree_spec(c, taxa, lengths)?;
                specs.push(s);
                members.extend(m);
            }
            if let Some(l) = len {
                lengths.push((members.clone(), *l));
            }
            Ok((TreeSpec::Internal(specs), members))
        }
    }
}

/// Parse a single Newick tree over a known taxon set. Branch lengths are
/// returned keyed by split; for rooted trees the length map is empty.
pub fn parse(s: &str, taxa: &Taxa) -> Result<(Topology, BranchLengths)> {
    let mut cur = Cursor::new(s);
    if cur.peek().is_none() {
        return Err(Error::EmptyInput("empty newick string".into()));
    }
    let top = parse_subtree(&mut cur)?;
    cur.expect(b';')?;
    if cur.peek().is_some() {
        return Err(parse_err("trailing content after ';'".into()));
    }

    let n = taxa.len();
    let mut lengths = Vec::new();
    let (topology, rooted) = match &top {
        PSpec::Leaf(name, _) => {
            if n != 1 {
                return Err(Error::TaxonSet(format!(
                    "single-leaf tree over a {n}-taxon set"
                )));
            }
            let t = taxa
                .position(name)
                .ok_or_else(|| Error::TaxonSet(format!("unknown taxon {name:?}")))?;
            (Topology::rooted_from_spec(taxa.clone(), &TreeSpec::Leaf(t))?, true)
        }
        PSpec::Internal(children, _) => match children.len() {
            2 => {
                let mut specs = Vec::new();
                for c in children {
                    let (s, _) = to_tree_spec(c, taxa, &mut lengths)?;
                    specs.push(s);
                }
                if n == 2 {
                    lengths.clear();
                    let mut ls = Vec::new();
                    for c in children {
                        to_tree_spec(c, taxa, &mut ls)?;
                    }
                    (
                        Topology::unrooted_from_spec(taxa.clone(), &TreeSpec::Internal(specs))?,
                        false,
                    )
                } else {
                    lengths.clear();
                    (Topology::rooted_from_spec(taxa.clone(), &TreeSpec::Internal(specs))?, true)
                }
            }
            3 => {
                let mut specs = Vec::new();
                for c in children {
                    let (s, _) = to_tree_spec(c, taxa, &mut lengths)?;
                    specs.push(s);
                }
                (
                    Topology::unrooted_from_spec(taxa.clone(), &TreeSpec::Internal(specs))?,
                    false,
                )
            }
            k => return Err(parse_err(format!("top-level node of arity {k}"))),
        },
    };

    let mut bl = BranchLengths::new();
    if !rooted {
        for (members, l) in lengths {
            let clade = crate::taxa::Clade::from_taxa(n, &members)?;
            if clade.is_full() {
                continue;
            }
            bl.insert(Split::from_clade(&clade)?, l)?;
        }
    }
    Ok((topology, bl))
}

fn needs_quoting(name: &str) -> bool {
    name.is_empty() || !name.bytes().all(is_name_char)
}

fn write_name(out: &mut String, name: &str) {
    if needs_quoting(name) {
        out.push('\'');
        for c in name.chars() {
            if c == '\'' {
                out.push('\'');
            }
            out.push(c);
        }
        out.push('\'');
    } else {
        out.push_str(name);
    }
}

fn write_subtree(
    t: &Topology,
    v: usize,
    lengths: Option<&BranchLengths>,
    clades: &[crate::taxa::Clade],
    out: &mut String,
) -> Result<()> {
    if let Some(tx) = t.taxon_of(v) {
        if t.children_of(v).is_empty() {
            write_name(out, t.taxa().name(tx));
        } else {
            // Degenerate two-taxon pseudo-root: emit as a pair.
            out.push('(');
            write_name(out, t.taxa().name(tx));
            for &c in t.children_of(v) {
                out.push(',');
                write_subtree(t, c, lengths, clades, out)?;
            }
            out.push(')');
            return Ok(());
        }
    } else {
        out.push('(');
        for (i, &c) in t.children_of(v).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_subtree(t, c, lengths, clades, out)?;
        }
        out.push(')');
    }
    if let Some(bl) = lengths {
        if v != t.root() {
            let split = Split::from_clade(&clades[v])?;
            let l = bl
                .get(&split)
                .ok_or_else(|| Error::MissingEdge(format!("no branch length for {split}")))?;
            out.push(':');
            out.push_str(&fmt_sig(l, 10));
        }
    }
    Ok(())
}

/// Serialize a topology, optionally with branch lengths (unrooted only).
pub fn serialize(t: &Topology, lengths: Option<&BranchLengths>) -> Result<String> {
    if lengths.is_some() && t.is_rooted() {
        return Err(Error::WrongRootedness(
            "branch lengths serialize on unrooted trees only".into(),
        ));
    }
    let clades = t.subtree_clades();
    let mut out = String::new();
    write_subtree(t, t.root(), lengths, &clades, &mut out)?;
    out.push(';');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxa::taxa;

    #[test]
    fn parses_unrooted_trifurcation() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let (t, _) = parse("((A,B),C,D);", &tx).unwrap();
        assert!(!t.is_rooted());
        assert_eq!(t.n_edges(), 5);
    }

    #[test]
    fn parses_rooted_bifurcation() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let (t, _) = parse("((A,B),(C,D));", &tx).unwrap();
        assert!(t.is_rooted());
    }

    #[test]
    fn lengths_key_by_split() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let (_, bl) = parse("((A:0.1,B:0.2):0.3,C:0.4,D:0.5);", &tx).unwrap();
        assert_eq!(bl.len(), 5);
        let internal = Split::decode("1100|0011").unwrap();
        assert!((bl.get(&internal).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn round_trip_with_lengths() {
        let tx = taxa(["A", "B", "C", "D", "E"]).unwrap();
        let s = "((A:0.1,B:0.25):0.3,(C:0.7,E:0.11):0.013,D:0.5);";
        let (t, bl) = parse(s, &tx).unwrap();
        let out = serialize(&t, Some(&bl)).unwrap();
        let (t2, bl2) = parse(&out, &tx).unwrap();
        assert_eq!(t.key(), t2.key());
        for (split, l) in bl.iter() {
            assert!((bl2.get(split).unwrap() - l).abs() < 1e-9);
        }
    }

    #[test]
    fn quoted_names_and_whitespace() {
        let tx = taxa(["taxon one", "B", "C"]).unwrap();
        let ( t, _) = parse(" ( 'taxon one' , B , C ) ; ", &tx).unwrap();
        assert!(!t.is_rooted());
        let out = serialize(&t, None).unwrap();
        assert!(out.contains("'taxon one'"));
        let (t2, _) = parse(&out, &tx).unwrap();
        assert_eq!(t.key(), t2.key());
    }

    #[test]
    fn scientific_notation_lengths() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        let (_, bl) = parse("(A:1.000000000e-1,B:2e-2,C:3.5E-3);", &tx).unwrap();
        let a = Split::decode("100|011").unwrap();
        assert!((bl.get(&a).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn unknown_taxon_is_an_error() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        assert!(matches!(parse("(A,B,X);", &tx), Err(Error::TaxonSet(_))));
    }

    #[test]
    fn missing_taxon_is_an_error() {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        assert!(parse("(A,B,C);", &tx).is_err());
    }

    #[test]
    fn inner_multifurcation_is_an_error() {
        let tx = taxa(["A", "B", "C", "D", "E"]).unwrap();
        assert!(matches!(parse("((A,B,C),D,E);", &tx), Err(Error::Parse { .. })));
    }

    #[test]
    fn garbage_is_a_parse_error() {
        let tx = taxa(["A", "B", "C"]).unwrap();
        assert!(parse("((A,B,C;", &tx).is_err());
        assert!(parse("", &tx).is_err());
    }

    #[test]
    fn two_taxon_pair_parses_as_degenerate_unrooted() {
        let tx = taxa(["A", "B"]).unwrap();
        let (t, _) = parse("(A,B);", &tx).unwrap();
        assert!(!t.is_rooted());
        assert_eq!(t.n_edges(), 1);
        assert_eq!(serialize(&t, None).unwrap(), "(A,B);");
    }
}
