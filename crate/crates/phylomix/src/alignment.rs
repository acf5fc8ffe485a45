//! Multiple sequence alignments over {A,C,G,T} with ambiguity codes, plus
//! FASTA reading and writing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::taxa::{taxa, Taxa};

/// State codes: A=0, C=1, G=2, T=3. `AMBIGUOUS` covers `-`, `?` and `N`,
/// all mapped to the all-ones leaf partial.
pub const N_STATES: usize = 4;
pub const AMBIGUOUS: u8 = 4;

pub fn encode_char(c: char) -> Result<u8> {
    match c.to_ascii_uppercase() {
        'A' => Ok(0),
        'C' => Ok(1),
        'G' => Ok(2),
        'T' => Ok(3),
        '-' | '?' | 'N' => Ok(AMBIGUOUS),
        other => Err(Error::Domain(format!("unsupported alignment character {other:?}"))),
    }
}

pub fn decode_state(s: u8) -> char {
    match s {
        0 => 'A',
        1 => 'C',
        2 => 'G',
        3 => 'T',
        _ => 'N',
    }
}

/// N taxa by M sites, uppercase-normalized, row order = taxon order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    taxa: Taxa,
    rows: Vec<Vec<u8>>,
}

impl Alignment {
    pub fn new(taxa: Taxa, rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.len() != taxa.len() {
            return Err(Error::AlignmentShape(format!(
                "{} rows for {} taxa",
                rows.len(),
                taxa.len()
            )));
        }
        let m = rows.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(Error::AlignmentShape("alignment has no sites".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::AlignmentShape(format!(
                    "row {} has {} sites, expected {m}",
                    taxa.name(i),
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&s| s > AMBIGUOUS) {
                return Err(Error::Domain(format!("bad state code {bad}")));
            }
        }
        Ok(Self { taxa, rows })
    }

    pub fn from_strings<I, S>(names: I, seqs: &[&str]) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tx = taxa(names)?;
        let rows = seqs
            .iter()
            .map(|s| s.chars().map(encode_char).collect::<Result<Vec<u8>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(tx, rows)
    }

    pub fn taxa(&self) -> &Taxa {
        &self.taxa
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_sites(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, taxon: usize) -> &[u8] {
        &self.rows[taxon]
    }

    pub fn site(&self, taxon: usize, site: usize) -> u8 {
        self.rows[taxon][site]
    }

    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            let _ = writeln!(out, ">{}", self.taxa.name(i));
            let seq: String = row.iter().map(|&s| decode_state(s)).collect();
            let _ = writeln!(out, "{seq}");
        }
        out
    }
}

/// Parse FASTA text: `>name` headers (trimmed), sequence lines concatenated,
/// consistent lengths required. Taxon order follows file order.
pub fn parse_fasta(text: &str) -> Result<Alignment> {
    let mut names: Vec<String> = Vec::new();
    let mut seqs: Vec<Vec<u8>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.trim().to_string();
            if name.is_empty() {
                return Err(Error::Parse { line: lineno + 1, msg: "empty FASTA header".into() });
            }
            names.push(name);
            seqs.push(Vec::new());
        } else {
            let seq = seqs.last_mut().ok_or(Error::Parse {
                line: lineno + 1,
                msg: "sequence data before any header".into(),
            })?;
            for c in line.chars() {
                seq.push(encode_char(c).map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: e.to_string(),
                })?);
            }
        }
    }
    if names.is_empty() {
        return Err(Error::EmptyInput("no FASTA records".into()));
    }
    let tx = taxa(names)?;
    Alignment::new(tx, seqs)
}

pub fn read_fasta(path: &Path) -> Result<Alignment> {
    parse_fasta(&std::fs::read_to_string(path)?)
}
