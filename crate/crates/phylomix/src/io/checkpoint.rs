//! Line-oriented text checkpoints: `[meta]`, `[taxa]`, `[support]`, then
//! `[component k]` blocks with `[sbn]` and `[branch]` subsections.
//! Subsplits are encoded as `bits(first)|bits(second)` in taxon order and
//! every value carries 17 significant digits, so a round trip is exact and
//! a re-save is byte-identical. Optional `[trainer]`/`[optimizer ...]`
//! sections carry the step count and optimizer moments needed for exact
//! resumption; plain model loads ignore them.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::branch::{BranchLayout, BranchMode, BranchModel};
use crate::error::{Error, Result};
use crate::math::fmt_sig;
use crate::mixture::{Component, MixtureApprox};
use crate::sbn::{Sbn, SbnSupport};
use crate::taxa::{taxa, Psp, Split, Subsplit, Taxa};
use crate::topology::ParentKey;

const VERSION: u32 = 1;

/// Serialized optimizer moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Training-loop state stored alongside the model for exact resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub iteration: u64,
    pub opt_sbn: Vec<OptState>,
    pub opt_branch: Vec<OptState>,
}

fn fmt(x: f64) -> String {
    fmt_sig(x, 17)
}

/// Render a checkpoint to a string.
pub fn checkpoint_string(model: &MixtureApprox, trainer: Option<&TrainerState>) -> String {
    let mut out = String::new();
    let support = model.support();
    let layout = model.layout();
    let taxa = model.taxa();
    let mode = match layout.mode() {
        BranchMode::SplitOnly => "split",
        BranchMode::SplitPsp => "psp",
    };
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "version={VERSION}");
    let _ = writeln!(out, "s={}", model.n_components());
    let _ = writeln!(out, "n_taxa={}", taxa.len());
    let _ = writeln!(out, "branch_mode={mode}");
    let _ = writeln!(out, "[taxa]");
    for name in taxa.names() {
        let _ = writeln!(out, "{name}");
    }
    let _ = writeln!(out, "[support]");
    for s in support.root_splits() {
        let _ = writeln!(out, "root {}", s.encode());
    }
    for table in support.tables() {
        for child in &table.children {
            let _ = writeln!(out, "cond {} {}", table.parent.encode(), child.encode());
        }
    }
    for (i, comp) in model.components().iter().enumerate() {
        let _ = writeln!(out, "[component {i}]");
        let _ = writeln!(out, "[sbn]");
        let logits = comp.sbn.logits();
        for (j, s) in support.root_splits().iter().enumerate() {
            let _ = writeln!(out, "root {} {}", s.encode(), fmt(logits[j]));
        }
        for (ti, table) in support.tables().iter().enumerate() {
            let (off, _) = support.group(ti + 1);
            for (j, child) in table.children.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "cond {} {} {}",
                    table.parent.encode(),
                    child.encode(),
                    fmt(logits[off + j])
                );
            }
        }
        let _ = writeln!(out, "[branch]");
        let params = comp.branch.params();
        for (j, s) in layout.splits().iter().enumerate() {
            let _ = writeln!(
                out,
                "psi {} {} {}",
                s.encode(),
                fmt(params[layout.psi_mu_index(j)]),
                fmt(params[layout.psi_sigma_index(j)])
            );
        }
        for (j, p) in layout.psps().iter().enumerate() {
            let _ = writeln!(
                out,
                "gamma {} {} {}",
                p.encode(),
                fmt(params[layout.gamma_mu_index(j)]),
                fmt(params[layout.gamma_sigma_index(j)])
            );
        }
    }
    if let Some(tr) = trainer {
        let _ = writeln!(out, "[trainer]");
        let _ = writeln!(out, "iteration={}", tr.iteration);
        for (name, opts) in [("sbn", &tr.opt_sbn), ("branch", &tr.opt_branch)] {
            for (i, o) in opts.iter().enumerate() {
                let _ = writeln!(out, "[optimizer {name} {i}]");
                let _ = writeln!(out, "t={}", o.t);
                for (m, v) in o.m.iter().zip(&o.v) {
                    let _ = writeln!(out, "mv {} {}", fmt(*m), fmt(*v));
                }
            }
        }
    }
    out
}

/// Atomic write: temp file in the same directory, then rename.
pub fn save_checkpoint(
    path: &Path,
    model: &MixtureApprox,
    trainer: Option<&TrainerState>,
) -> Result<()> {
    let text = checkpoint_string(model, trainer);
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Start,
    Meta,
    Taxa,
    Support,
    Sbn(usize),
    Branch(usize),
    Component(usize),
    Trainer,
    OptSbn(usize),
    OptBranch(usize),
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(format!("line {}: {}", line, msg.into()))
}

struct RawComponent {
    sbn_root: Vec<(Split, f64)>,
    sbn_cond: Vec<(ParentKey, Subsplit, f64)>,
    psi: Vec<(Split, f64, f64)>,
    gamma: Vec<(Psp, f64, f64)>,
}

/// Parse a checkpoint, reading the taxon set from the file itself.
pub fn parse_checkpoint(text: &str) -> Result<(Taxa, MixtureApprox, Option<TrainerState>)> {
    let mut section = Section::Start;
    let mut version: Option<u32> = None;
    let mut s_decl: Option<usize> = None;
    let mut n_taxa_decl: Option<usize> = None;
    let mut mode: Option<BranchMode> = None;
    let mut names: Vec<String> = Vec::new();
    let mut root_splits: Vec<Split> = Vec::new();
    let mut cond: Vec<(ParentKey, Subsplit)> = Vec::new();
    let mut comps: Vec<RawComponent> = Vec::new();
    let mut trainer_iter: Option<u64> = None;
    let mut opt_sbn: Vec<OptState> = Vec::new();
    let mut opt_branch: Vec<OptState> = Vec::new();

    let parse_f64 = |tok: &str, ln: usize| -> Result<f64> {
        tok.parse::<f64>().map_err(|_| bad(ln, format!("bad float {tok:?}")))
    };

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match header {
                "meta" => Section::Meta,
                "taxa" => Section::Taxa,
                "support" => Section::Support,
                "sbn" => match section {
                    Section::Component(i) | Section::Sbn(i) | Section::Branch(i) => {
                        Section::Sbn(i)
                    }
                    _ => return Err(bad(ln, "[sbn] outside a component")),
                },
                "branch" => match section {
                    Section::Component(i) | Section::Sbn(i) | Section::Branch(i) => {
                        Section::Branch(i)
                    }
                    _ => return Err(bad(ln, "[branch] outside a component")),
                },
                "trainer" => Section::Trainer,
                other => {
                    if let Some(rest) = other.strip_prefix("component ") {
                        let i: usize =
                            rest.parse().map_err(|_| bad(ln, "bad component index"))?;
                        if i != comps.len() {
                            return Err(bad(ln, "component sections out of order"));
                        }
                        comps.push(RawComponent {
                            sbn_root: Vec::new(),
                            sbn_cond: Vec::new(),
                            psi: Vec::new(),
                            gamma: Vec::new(),
                        });
                        Section::Component(i)
                    } else if let Some(rest) = other.strip_prefix("optimizer sbn ") {
                        let i: usize = rest.parse().map_err(|_| bad(ln, "bad optimizer index"))?;
                        if i != opt_sbn.len() {
                            return Err(bad(ln, "optimizer sections out of order"));
                        }
                        opt_sbn.push(OptState { m: Vec::new(), v: Vec::new(), t: 0 });
                        Section::OptSbn(i)
                    } else if let Some(rest) = other.strip_prefix("optimizer branch ") {
                        let i: usize = rest.parse().map_err(|_| bad(ln, "bad optimizer index"))?;
                        if i != opt_branch.len() {
                            return Err(bad(ln, "optimizer sections out of order"));
                        }
                        opt_branch.push(OptState { m: Vec::new(), v: Vec::new(), t: 0 });
                        Section::OptBranch(i)
                    } else {
                        return Err(bad(ln, format!("unknown section [{other}]")));
                    }
                }
            };
            continue;
        }
        match section {
            Section::Start => return Err(bad(ln, "content before any section")),
            Section::Meta => {
                let (k, v) =
                    line.split_once('=').ok_or_else(|| bad(ln, "expected key=value"))?;
                match k {
                    "version" => {
                        let ver: u32 = v.parse().map_err(|_| bad(ln, "bad version"))?;
                        if ver != VERSION {
                            return Err(Error::IncompatibleCheckpoint(format!(
                                "version {ver} is not supported (expected {VERSION})"
                            )));
                        }
                        version = Some(ver);
                    }
                    "s" => s_decl = Some(v.parse().map_err(|_| bad(ln, "bad s"))?),
                    "n_taxa" => n_taxa_decl = Some(v.parse().map_err(|_| bad(ln, "bad n_taxa"))?),
                    "branch_mode" => {
                        mode = Some(match v {
                            "split" => BranchMode::SplitOnly,
                            "psp" => BranchMode::SplitPsp,
                            other => return Err(bad(ln, format!("unknown branch mode {other}"))),
                        })
                    }
                    other => return Err(bad(ln, format!("unknown meta key {other}"))),
                }
            }
            Section::Taxa => names.push(line.to_string()),
            Section::Support => {
                let mut toks = line.split_whitespace();
                match toks.next() {
                    Some("root") => {
                        let enc = toks.next().ok_or_else(|| bad(ln, "missing split"))?;
                        root_splits.push(Split::decode(enc).map_err(|e| bad(ln, e.to_string()))?);
                    }
                    Some("cond") => {
                        let pk = toks.next().ok_or_else(|| bad(ln, "missing parent key"))?;
                        let sub = toks.next().ok_or_else(|| bad(ln, "missing subsplit"))?;
                        cond.push((
                            ParentKey::decode(pk).map_err(|e| bad(ln, e.to_string()))?,
                            Subsplit::decode(sub).map_err(|e| bad(ln, e.to_string()))?,
                        ));
                    }
                    _ => return Err(bad(ln, "expected root/cond entry")),
                }
            }
            Section::Component(_) => return Err(bad(ln, "expected [sbn] or [branch]")),
            Section::Sbn(i) => {
                let mut toks = line.split_whitespace();
                match toks.next() {
                    Some("root") => {
                        let enc = toks.next().ok_or_else(|| bad(ln, "missing split"))?;
                        let val = toks.next().ok_or_else(|| bad(ln, "missing value"))?;
                        comps[i].sbn_root.push((
                            Split::decode(enc).map_err(|e| bad(ln, e.to_string()))?,
                            parse_f64(val, ln)?,
                        ));
                    }
                    Some("cond") => {
                        let pk = toks.next().ok_or_else(|| bad(ln, "missing parent key"))?;
                        let sub = toks.next().ok_or_else(|| bad(ln, "missing subsplit"))?;
                        let val = toks.next().ok_or_else(|| bad(ln, "missing value"))?;
                        comps[i].sbn_cond.push((
                            ParentKey::decode(pk).map_err(|e| bad(ln, e.to_string()))?,
                            Subsplit::decode(sub).map_err(|e| bad(ln, e.to_string()))?,
                            parse_f64(val, ln)?,
                        ));
                    }
                    _ => return Err(bad(ln, "expected root/cond logit")),
                }
            }
            Section::Branch(i) => {
                let mut toks = line.split_whitespace();
                match toks.next() {
                    Some("psi") => {
                        let enc = toks.next().ok_or_else(|| bad(ln, "missing split"))?;
                        let mu = toks.next().ok_or_else(|| bad(ln, "missing mu"))?;
                        let sr = toks.next().ok_or_else(|| bad(ln, "missing sigma"))?;
                        comps[i].psi.push((
                            Split::decode(enc).map_err(|e| bad(ln, e.to_string()))?,
                            parse_f64(mu, ln)?,
                            parse_f64(sr, ln)?,
                        ));
                    }
                    Some("gamma") => {
                        let anchor = toks.next().ok_or_else(|| bad(ln, "missing anchor"))?;
                        let side = toks.next().ok_or_else(|| bad(ln, "missing side"))?;
                        let mu = toks.next().ok_or_else(|| bad(ln, "missing mu"))?;
                        let sr = toks.next().ok_or_else(|| bad(ln, "missing sigma"))?;
                        comps[i].gamma.push((
                            Psp::decode(&format!("{anchor} {side}"))
                                .map_err(|e| bad(ln, e.to_string()))?,
                            parse_f64(mu, ln)?,
                            parse_f64(sr, ln)?,
                        ));
                    }
                    _ => return Err(bad(ln, "expected psi/gamma entry")),
                }
            }
            Section::Trainer => {
                let (k, v) =
                    line.split_once('=').ok_or_else(|| bad(ln, "expected key=value"))?;
                match k {
                    "iteration" => {
                        trainer_iter = Some(v.parse().map_err(|_| bad(ln, "bad iteration"))?)
                    }
                    other => return Err(bad(ln, format!("unknown trainer key {other}"))),
                }
            }
            Section::OptSbn(i) | Section::OptBranch(i) => {
                let opts = if matches!(section, Section::OptSbn(_)) {
                    &mut opt_sbn
                } else {
                    &mut opt_branch
                };
                if let Some((k, v)) = line.split_once('=') {
                    if k == "t" {
                        opts[i].t = v.parse().map_err(|_| bad(ln, "bad t"))?;
                    } else {
                        return Err(bad(ln, format!("unknown optimizer key {k}")));
                    }
                } else {
                    let mut toks = line.split_whitespace();
                    if toks.next() != Some("mv") {
                        return Err(bad(ln, "expected mv line"));
                    }
                    let m = toks.next().ok_or_else(|| bad(ln, "missing m"))?;
                    let v = toks.next().ok_or_else(|| bad(ln, "missing v"))?;
                    opts[i].m.push(parse_f64(m, ln)?);
                    opts[i].v.push(parse_f64(v, ln)?);
                }
            }
        }
    }

    if version.is_none() {
        return Err(Error::IncompatibleCheckpoint("missing version".into()));
    }
    let mode = mode.ok_or_else(|| Error::IncompatibleCheckpoint("missing branch_mode".into()))?;
    let tx = taxa(names)?;
    if let Some(n) = n_taxa_decl {
        if n != tx.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "n_taxa={n} but {} taxa listed",
                tx.len()
            )));
        }
    }
    let support = Arc::new(SbnSupport::from_parts(tx.clone(), root_splits, cond)?);
    let layout = Arc::new(BranchLayout::from_support(&support, mode)?);
    if let Some(s) = s_decl {
        if s != comps.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "s={s} but {} component sections",
                comps.len()
            )));
        }
    }
    if comps.is_empty() {
        return Err(Error::IncompatibleCheckpoint("no components".into()));
    }

    let mut components = Vec::with_capacity(comps.len());
    for (i, raw) in comps.iter().enumerate() {
        let mut logits = vec![f64::NAN; support.n_params()];
        for (split, val) in &raw.sbn_root {
            let j = support
                .root_splits()
                .iter()
                .position(|s| s == split)
                .ok_or_else(|| {
                    Error::IncompatibleCheckpoint(format!(
                        "component {i}: root split {split} not in support"
                    ))
                })?;
            logits[j] = *val;
        }
        for (pk, sub, val) in &raw.sbn_cond {
            let table = support.table(pk).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("component {i}: unknown parent {pk}"))
            })?;
            let ti = support
                .tables()
                .iter()
                .position(|t| t.parent == *pk)
                .expect("table just found");
            let j = table.children.iter().position(|c| c == sub).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("component {i}: unknown child {sub}"))
            })?;
            let (off, _) = support.group(ti + 1);
            logits[off + j] = *val;
        }
        if logits.iter().any(|l| l.is_nan()) {
            return Err(Error::IncompatibleCheckpoint(format!(
                "component {i}: missing SBN logits"
            )));
        }
        let mut params = vec![f64::NAN; layout.n_params()];
        for (split, mu, sr) in &raw.psi {
            let j = layout.split_position(split).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("component {i}: unknown split {split}"))
            })?;
            params[layout.psi_mu_index(j)] = *mu;
            params[layout.psi_sigma_index(j)] = *sr;
        }
        for (psp, mu, sr) in &raw.gamma {
            let j = layout.psp_position(psp).ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("component {i}: unknown PSP {psp}"))
            })?;
            params[layout.gamma_mu_index(j)] = *mu;
            params[layout.gamma_sigma_index(j)] = *sr;
        }
        if params.iter().any(|p| p.is_nan()) {
            return Err(Error::IncompatibleCheckpoint(format!(
                "component {i}: missing branch parameters"
            )));
        }
        components.push(Component {
            sbn: Sbn::new(support.clone(), logits)?,
            branch: BranchModel::new(layout.clone(), params)?,
        });
    }
    let model = MixtureApprox::new(components)?;

    let trainer = match trainer_iter {
        Some(iteration) => {
            if opt_sbn.len() != model.n_components() || opt_branch.len() != model.n_components() {
                return Err(Error::IncompatibleCheckpoint(
                    "optimizer sections do not match the component count".into(),
                ));
            }
            for o in &opt_sbn {
                if o.m.len() != support.n_params() {
                    return Err(Error::IncompatibleCheckpoint("optimizer size mismatch".into()));
                }
            }
            for o in &opt_branch {
                if o.m.len() != layout.n_params() {
                    return Err(Error::IncompatibleCheckpoint("optimizer size mismatch".into()));
                }
            }
            Some(TrainerState { iteration, opt_sbn, opt_branch })
        }
        None => None,
    };
    Ok((tx, model, trainer))
}

/// Read a checkpoint, taking the taxon set from the file.
pub fn read_checkpoint(path: &Path) -> Result<(Taxa, MixtureApprox, Option<TrainerState>)> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

/// Read a checkpoint and require its taxon set to match `expected` exactly,
/// including order.
pub fn load_checkpoint(
    path: &Path,
    expected: &Taxa,
) -> Result<(MixtureApprox, Option<TrainerState>)> {
    let (tx, model, trainer) = read_checkpoint(path)?;
    if tx.names() != expected.names() {
        return Err(Error::IncompatibleCheckpoint(
            "taxon set does not match (names or order differ)".into(),
        ));
    }
    Ok((model, trainer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::BranchMode;
    use crate::taxa::taxa;
    use crate::topology::enumerate_unrooted;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(s: usize, seed: u64) -> MixtureApprox {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let all = enumerate_unrooted(&tx).unwrap();
        let mut m =
            MixtureApprox::init_from_candidates(tx, &all, s, BranchMode::SplitPsp).unwrap();
        // Perturb so components differ.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..s {
            let mut logits = m.component(i).sbn.logits().to_vec();
            for l in &mut logits {
                *l += rng.gen::<f64>() - 0.5;
            }
            let sbn = Sbn::new(m.support().clone(), logits).unwrap();
            let mut params = m.component(i).branch.params().to_vec();
            for p in &mut params {
                *p += rng.gen::<f64>() - 0.5;
            }
            let branch = BranchModel::new(m.layout().clone(), params).unwrap();
            m.replace(i, Component { sbn, branch }).unwrap();
        }
        m
    }

    #[test]
    fn round_trip_preserves_everything_exactly() {
        let m = model(3, 1);
        let text = checkpoint_string(&m, None);
        let (tx, loaded, trainer) = parse_checkpoint(&text).unwrap();
        assert!(trainer.is_none());
        assert_eq!(tx.names(), m.taxa().names());
        assert_eq!(loaded.n_components(), 3);
        for i in 0..3 {
            assert_eq!(loaded.component(i).sbn.logits(), m.component(i).sbn.logits());
            assert_eq!(loaded.component(i).branch.params(), m.component(i).branch.params());
        }
        // Densities agree exactly on every enumerable topology.
        let all = enumerate_unrooted(m.taxa()).unwrap();
        for t in &all {
            let a = m.mixture_log_prob(t).unwrap();
            let b = loaded.mixture_log_prob(t).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn second_save_is_byte_identical() {
        let m = model(2, 2);
        let text = checkpoint_string(&m, None);
        let (_, loaded, _) = parse_checkpoint(&text).unwrap();
        let text2 = checkpoint_string(&loaded, None);
        assert_eq!(text, text2);
    }

    #[test]
    fn component_count_is_reported() {
        let m = model(3, 3);
        let text = checkpoint_string(&m, None);
        assert!(text.contains("s=3"));
        let (_, loaded, _) = parse_checkpoint(&text).unwrap();
        assert_eq!(loaded.n_components(), 3);
    }

    #[test]
    fn permuted_taxa_are_incompatible() {
        let m = model(1, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &m, None).unwrap();
        let permuted = taxa(["B", "A", "C", "D"]).unwrap();
        assert!(matches!(
            load_checkpoint(&path, &permuted),
            Err(Error::IncompatibleCheckpoint(_))
        ));
        let ok = taxa(["A", "B", "C", "D"]).unwrap();
        assert!(load_checkpoint(&path, &ok).is_ok());
    }

    #[test]
    fn trainer_state_round_trips() {
        let m = model(2, 5);
        let ns = m.support().n_params();
        let nb = m.layout().n_params();
        let tr = TrainerState {
            iteration: 123,
            opt_sbn: (0..2)
                .map(|i| OptState {
                    m: (0..ns).map(|j| (i * ns + j) as f64 * 0.25).collect(),
                    v: (0..ns).map(|j| (i * ns + j) as f64 * 0.5).collect(),
                    t: 123,
                })
                .collect(),
            opt_branch: (0..2)
                .map(|_| OptState { m: vec![0.1; nb], v: vec![0.2; nb], t: 123 })
                .collect(),
        };
        let text = checkpoint_string(&m, Some(&tr));
        let (_, _, loaded) = parse_checkpoint(&text).unwrap();
        assert_eq!(loaded, Some(tr));
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let m = model(1, 6);
        let text = checkpoint_string(&m, None);
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(parse_checkpoint(&truncated).is_err());
        let garbled = text.replace("psi", "phi");
        assert!(parse_checkpoint(&garbled).is_err());
    }
}
