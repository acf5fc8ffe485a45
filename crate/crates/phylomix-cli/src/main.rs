//! Command-line surface: support construction, training, evaluation,
//! sampling, the discrete-toy experiment, JC69 simulation and the
//! parsimony demo. All outputs are deterministic given seeds; errors exit
//! nonzero with an `error:` prefix on stderr.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use phylomix::alignment::read_fasta;
use phylomix::branch::BranchMode;
use phylomix::io::checkpoint::{read_checkpoint, save_checkpoint, OptState, TrainerState};
use phylomix::io::reference::read_reference_posterior;
use phylomix::io::trees::read_tree_list;
use phylomix::likelihood::{LikelihoodEngine, PriorConfig};
use phylomix::mixture::{Component, MixtureApprox};
use phylomix::objective::{estimate_marginal_ll, kl_reference_to_model};
use phylomix::opt::Adam;
use phylomix::parsimony::conflict_demo;
use phylomix::rng::stream_rng;
use phylomix::sim;
use phylomix::taxa::taxa;
use phylomix::topology::Topology;
use phylomix::toy;
use phylomix::train::{train, TrainConfig, TrainState};
use phylomix::{newick, Error};

#[derive(Parser)]
#[command(name = "phylomix", version, about = "Mixture variational inference over phylogenies")]
struct Cli {
    /// Threads for particle evaluation (1 keeps runs fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an SBN support from candidate trees and write an
    /// initialized single-component checkpoint.
    BuildSupport(BuildSupportArgs),
    /// Train a mixture approximation.
    Train(TrainArgs),
    /// Importance-sampled marginal log-likelihood of a trained model.
    EvalMl(EvalMlArgs),
    /// KL divergence from a reference posterior to a trained model.
    EvalKl(EvalKlArgs),
    /// Draw topologies from a trained model.
    Sample(SampleArgs),
    /// Train mixtures on the two-level categorical toy and emit KL curves.
    Toy(ToyArgs),
    /// Simulate a JC69 alignment from a random tree.
    Simulate(SimulateArgs),
    /// Print the conflicting-sites parsimony tables.
    ParsimonyDemo,
}

#[derive(Args)]
struct BuildSupportArgs {
    /// Newick tree list, one per line.
    #[arg(long)]
    trees: PathBuf,
    /// Alignment fixing the taxon set and order.
    #[arg(long)]
    fasta: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Branch parameterization: "split" or "psp".
    #[arg(long, default_value = "psp")]
    branch_mode: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    fasta: PathBuf,
    /// Support checkpoint from build-support (or a full checkpoint with
    /// --resume).
    #[arg(long)]
    support: PathBuf,
    /// Flat key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, id = "S")]
    s: Option<usize>,
    #[arg(long, id = "K")]
    k: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr_sbn: Option<f64>,
    #[arg(long)]
    lr_branch: Option<f64>,
    #[arg(long)]
    annealing_init: Option<f64>,
    #[arg(long)]
    annealing_horizon: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Exponential branch-prior rate.
    #[arg(long)]
    lambda: Option<f64>,
    /// Drop the uniform-topology normalizing constant from the prior.
    #[arg(long)]
    no_topology_constant: bool,
    /// Continue a run from a checkpoint carrying trainer state.
    #[arg(long)]
    resume: bool,
    /// Add wall-clock seconds to the run log (breaks byte-identical logs).
    #[arg(long)]
    timing: bool,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Run-log CSV path (default: <out>.log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalMlArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    fasta: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    k_inner: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long)]
    no_topology_constant: bool,
}

#[derive(Args)]
struct EvalKlArgs {
    #[arg(long)]
    model: PathBuf,
    /// Reference posterior: newick<TAB>probability lines.
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, id = "N")]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Emit a newick/count/component frequency table instead of raw draws.
    #[arg(long)]
    freq: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 5)]
    n1: usize,
    #[arg(long, default_value_t = 10)]
    n2: usize,
    #[arg(long, id = "S", default_value_t = 1)]
    s: usize,
    /// Importance samples per component; defaults to floor(20 / S).
    #[arg(long, id = "K")]
    k: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learning rate; defaults to the grid-searched per-S value.
    #[arg(long)]
    lr: Option<f64>,
    /// KL-curve CSV path; final probabilities go to <out>.probs.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    taxa: usize,
    #[arg(long)]
    sites: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// FASTA output path; the true tree goes to <out>.tree.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: contract violation: --threads must be at least 1");
        return ExitCode::FAILURE;
    }
    if let Err(e) =
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()
    {
        eprintln!("error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::BuildSupport(args) => cmd_build_support(args),
        Command::Train(args) => cmd_train(args),
        Command::EvalMl(args) => cmd_eval_ml(args),
        Command::EvalKl(args) => cmd_eval_kl(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Toy(args) => cmd_toy(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::ParsimonyDemo => cmd_parsimony_demo(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_mode(s: &str) -> anyhow::Result<BranchMode> {
    match s {
        "split" => Ok(BranchMode::SplitOnly),
        "psp" => Ok(BranchMode::SplitPsp),
        other => bail!("unknown branch mode {other:?} (expected split or psp)"),
    }
}

fn cmd_build_support(args: BuildSupportArgs) -> anyhow::Result<()> {
    let mode = parse_mode(&args.branch_mode)?;
    let aln = read_fasta(&args.fasta).context("reading alignment")?;
    let set = read_tree_list(&args.trees, aln.taxa()).context("reading candidate trees")?;
    let model = MixtureApprox::init_from_candidates(aln.taxa().clone(), set.trees(), 1, mode)?;
    save_checkpoint(&args.out, &model, None)?;
    let support = model.support();
    let entries: usize = support.tables().iter().map(|t| t.children.len()).sum();
    println!("candidate trees: {} ({} distinct)", set.len(), set.n_distinct());
    println!("root splits: {}", support.root_splits().len());
    println!("conditional tables: {}", support.tables().len());
    println!("table entries: {}", entries);
    println!("branch splits: {}", model.layout().n_splits());
    println!("branch psps: {}", model.layout().n_psps());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn read_config(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in std::fs::read_to_string(path)?.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    cfg: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match cfg.get(key) {
        Some(raw) => raw.parse().map_err(|e| anyhow!("config key {key}: {e}")),
        None => Ok(default),
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let file_cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => BTreeMap::new(),
    };
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        s: pick(args.s, &file_cfg, "s", 1)?,
        k: pick(args.k, &file_cfg, "k", d.k)?,
        iterations: pick(args.iters, &file_cfg, "iters", d.iterations)?,
        lr_sbn: pick(args.lr_sbn, &file_cfg, "lr_sbn", d.lr_sbn)?,
        lr_branch: pick(args.lr_branch, &file_cfg, "lr_branch", d.lr_branch)?,
        annealing_init: pick(args.annealing_init, &file_cfg, "annealing_init", d.annealing_init)?,
        annealing_horizon: pick(
            args.annealing_horizon,
            &file_cfg,
            "annealing_horizon",
            d.annealing_horizon,
        )?,
        seed: pick(args.seed, &file_cfg, "seed", d.seed)?,
        checkpoint_every: pick(
            args.checkpoint_every,
            &file_cfg,
            "checkpoint_every",
            d.checkpoint_every,
        )?,
        eval_every: pick(args.eval_every, &file_cfg, "eval_every", d.eval_every)?,
    };
    let lambda = pick(args.lambda, &file_cfg, "lambda", 10.0)?;
    let prior = PriorConfig {
        branch_rate: lambda,
        include_topology_constant: !args.no_topology_constant,
    };

    let aln = read_fasta(&args.fasta).context("reading alignment")?;
    let engine = LikelihoodEngine::new(&aln);
    let (base, trainer_state) = phylomix::io::checkpoint::load_checkpoint(
        &args.support,
        aln.taxa(),
    )
    .context("loading support checkpoint")?;

    let (mut model, mut state) = if args.resume {
        let ts = trainer_state
            .ok_or_else(|| anyhow!("--resume needs a checkpoint with trainer state"))?;
        if base.n_components() != cfg.s {
            bail!(
                "checkpoint has {} components but --S {} was requested",
                base.n_components(),
                cfg.s
            );
        }
        let state = TrainState {
            iteration: ts.iteration,
            opt_sbn: ts
                .opt_sbn
                .into_iter()
                .map(|o| Adam::restore(cfg.lr_sbn, o.m, o.v, o.t))
                .collect(),
            opt_branch: ts
                .opt_branch
                .into_iter()
                .map(|o| Adam::restore(cfg.lr_branch, o.m, o.v, o.t))
                .collect(),
        };
        (base, state)
    } else {
        // Replicate component 0 of the support checkpoint S times.
        let comp = base.component(0);
        let comps: Vec<Component> = (0..cfg.s)
            .map(|_| Component { sbn: comp.sbn.clone(), branch: comp.branch.clone() })
            .collect();
        let model = MixtureApprox::new(comps)?;
        let state = TrainState::fresh(&model, &cfg);
        (model, state)
    };

    let out = args.out.clone();
    let log = train(&mut model, &engine, &prior, &cfg, &mut state, |m, st| {
        save_checkpoint(&out, m, Some(&snapshot(st)))?;
        Ok(())
    })?;
    save_checkpoint(&args.out, &model, Some(&snapshot(&state)))?;
    let log_path = args.log.unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    std::fs::write(&log_path, log.to_csv(cfg.s, args.timing))?;
    println!("trained {} iterations (S={}, K={})", state.iteration, cfg.s, cfg.k);
    if let Some(r) = log.records.last() {
        println!("final miselbo estimate: {:.4}", r.miselbo);
    }
    println!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn snapshot(state: &TrainState) -> TrainerState {
    TrainerState {
        iteration: state.iteration,
        opt_sbn: state
            .opt_sbn
            .iter()
            .map(|a| {
                let (m, v, t) = a.state();
                OptState { m: m.to_vec(), v: v.to_vec(), t }
            })
            .collect(),
        opt_branch: state
            .opt_branch
            .iter()
            .map(|a| {
                let (m, v, t) = a.state();
                OptState { m: m.to_vec(), v: v.to_vec(), t }
            })
            .collect(),
    }
}

fn cmd_eval_ml(args: EvalMlArgs) -> anyhow::Result<()> {
    let aln = read_fasta(&args.fasta)?;
    let (model, _) = phylomix::io::checkpoint::load_checkpoint(&args.model, aln.taxa())?;
    let engine = LikelihoodEngine::new(&aln);
    let prior = PriorConfig {
        branch_rate: args.lambda,
        include_topology_constant: !args.no_topology_constant,
    };
    let est = estimate_marginal_ll(
        &model,
        &engine,
        &prior,
        args.samples,
        args.runs,
        args.k_inner,
        args.seed,
    )?;
    println!("{:.2} ({:.2})", est.mean, est.stddev);
    Ok(())
}

fn cmd_eval_kl(args: EvalKlArgs) -> anyhow::Result<()> {
    let (tx, model, _) = read_checkpoint(&args.model)?;
    let reference = read_reference_posterior(&args.reference, &tx)?;
    let report = kl_reference_to_model(reference.entries(), &model)?;
    println!("kl={:.6}", report.kl);
    println!("out_of_support_mass={:.6}", report.out_of_support_mass);
    println!("covered_mass={:.6}", report.covered_mass);
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> anyhow::Result<()> {
    let (_, model, _) = read_checkpoint(&args.model)?;
    let s = model.n_components();
    if args.freq {
        let mut rows: Vec<(String, u64, String)> = Vec::new();
        let mut mixture: BTreeMap<String, u64> = BTreeMap::new();
        for c in 0..s {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for i in 0..args.n {
                let mut rng = stream_rng(args.seed, &[0x53, c as u64, i as u64]);
                let t = model.component(c).sbn.sample(&mut rng).canonicalized();
                let nwk = newick::serialize(&t, None)?;
                *counts.entry(nwk.clone()).or_insert(0) += 1;
                *mixture.entry(nwk).or_insert(0) += 1;
            }
            for (nwk, count) in counts {
                rows.push((nwk, count, c.to_string()));
            }
        }
        for (nwk, count) in mixture {
            rows.push((nwk, count, "mix".to_string()));
        }
        let mut out = String::from("newick\tcount\tcomponent\n");
        for (nwk, count, comp) in rows {
            let _ = writeln!(out, "{nwk}\t{count}\t{comp}");
        }
        std::fs::write(&args.out, out)?;
    } else {
        let mut out = String::new();
        for i in 0..args.n {
            let mut rng = stream_rng(args.seed, &[0x54, i as u64]);
            let c = phylomix::rand::Rng::gen_range(&mut rng, 0..s);
            let t = model.component(c).sbn.sample(&mut rng).canonicalized();
            let _ = writeln!(out, "{}", newick::serialize(&t, None)?);
        }
        std::fs::write(&args.out, out)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_toy(args: ToyArgs) -> anyhow::Result<()> {
    let k = args.k.unwrap_or_else(|| (20 / args.s).max(2));
    let lr = args.lr.unwrap_or_else(|| toy::default_lr(args.s));
    let target = toy::make_target(args.n1, args.n2, args.seed)?;
    let run = toy::train_toy(&target, args.s, k, args.iters, lr, args.seed)?;
    let mut csv = String::from("iter,kl\n");
    for (iter, kl) in &run.curve {
        let _ = writeln!(csv, "{iter},{kl:.10e}");
    }
    std::fs::write(&args.out, csv)?;

    let mut probs = String::from("z1\tz2\tp");
    for c in 0..args.s {
        let _ = write!(probs, "\tq_{c}");
    }
    probs.push_str("\tq_mix\n");
    for z1 in 0..args.n1 {
        for z2 in 0..args.n2 {
            let _ = write!(probs, "{z1}\t{z2}\t{:.10e}", target.prob(z1, z2));
            for c in 0..args.s {
                let _ = write!(
                    probs,
                    "\t{:.10e}",
                    run.approx.components[c].log_prob(z1, z2).exp()
                );
            }
            let _ = writeln!(probs, "\t{:.10e}", run.approx.mixture_log_prob(z1, z2).exp());
        }
    }
    let mut probs_path = args.out.as_os_str().to_owned();
    probs_path.push(".probs.tsv");
    std::fs::write(PathBuf::from(probs_path), probs)?;

    println!("S={} K={k} lr={lr}", args.s);
    println!("initial kl={:.6}", run.initial_kl);
    if let Some((_, kl)) = run.curve.last() {
        println!("final kl={kl:.6}");
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    if args.taxa < 3 {
        return Err(Error::UnsupportedSize("simulate needs at least 3 taxa".into()).into());
    }
    let names: Vec<String> = (1..=args.taxa).map(|i| format!("T{i}")).collect();
    let tx = taxa(names)?;
    let mut rng = stream_rng(args.seed, &[0x51]);
    let t: Topology = sim::random_unrooted_topology(&tx, &mut rng)?;
    let b = sim::random_branch_lengths(&t, args.lambda, &mut rng)?;
    let aln = sim::simulate_jc69(&t, &b, args.sites, &mut rng)?;
    std::fs::write(&args.out, aln.to_fasta())?;
    let mut tree_path = args.out.as_os_str().to_owned();
    tree_path.push(".tree");
    let tree_path = PathBuf::from(tree_path);
    std::fs::write(&tree_path, format!("{}\n", newick::serialize(&t, Some(&b))?))?;
    println!(
        "simulated {} taxa x {} sites (lambda={})",
        args.taxa, args.sites, args.lambda
    );
    println!("wrote {} and {}", args.out.display(), tree_path.display());
    Ok(())
}

fn cmd_parsimony_demo() -> anyhow::Result<()> {
    let demo = conflict_demo::build();
    println!("Site characters for taxa 1..6:");
    for (name, chars) in conflict_demo::SITE_NAMES.iter().zip(conflict_demo::SITE_CHARS) {
        let spaced: Vec<String> = chars.chars().map(|c| c.to_string()).collect();
        println!("  site {name}: {}", spaced.join(" "));
    }
    let states = ['A', 'C', 'G', 'T'];
    let fmt_scores = |scores: &[u32; 4]| -> String {
        let min = *scores.iter().min().expect("four states");
        states
            .iter()
            .zip(scores)
            .map(|(s, &v)| {
                if v == min {
                    format!("{s}->{v}*")
                } else {
                    format!("{s}->{v}")
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!();
    println!("Minimum changes per root state, subtrees (* marks minima):");
    let sub = demo.subtree_scores();
    for (si, site) in conflict_demo::SITE_NAMES.iter().enumerate() {
        for (ti, name) in conflict_demo::SUBTREE_NAMES.iter().enumerate() {
            println!("  site {site}  {name}: {}", fmt_scores(&sub[ti][si]));
        }
    }
    println!();
    println!("Minimum changes per root state, pairings:");
    let trees = demo.tree_scores();
    for (si, site) in conflict_demo::SITE_NAMES.iter().enumerate() {
        for (ti, name) in conflict_demo::TREE_NAMES.iter().enumerate() {
            println!("  site {site}  {name}: {}", fmt_scores(&trees[ti][si]));
        }
    }
    println!();
    let totals = demo.totals();
    let joined: Vec<String> = totals
        .iter()
        .enumerate()
        .map(|(i, t)| format!("t{}={t}", i + 1))
        .collect();
    println!("Totals over both sites: {}", joined.join(" "));
    Ok(())
}
