//! The training loop: per-step particle batches, VIMCO gradients, adaptive
//! parameter updates, likelihood annealing, logging and checkpoint hooks.
//!
//! One master seed spawns an independent RNG stream per (iteration,
//! component, particle), so runs are reproducible regardless of evaluation
//! parallelism and can resume mid-run.

use std::fmt::Write as _;
use std::time::Instant;

use crate::branch::BranchModel;
use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodEngine, PriorConfig};
use crate::mixture::{Component, MixtureApprox};
use crate::newick;
use crate::objective::{sample_batch, vimco_grads};
use crate::opt::Adam;
use crate::rng::stream_rng;
use crate::sbn::Sbn;

const CTX_TRAIN: u64 = 0x7261;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub s: usize,
    pub k: usize,
    pub iterations: u64,
    pub lr_sbn: f64,
    pub lr_branch: f64,
    pub annealing_init: f64,
    pub annealing_horizon: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            s: 1,
            k: 10,
            iterations: 400_000,
            lr_sbn: 0.001,
            lr_branch: 0.001,
            annealing_init: 0.001,
            annealing_horizon: 100_000,
            seed: 0,
            checkpoint_every: 50_000,
            eval_every: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::BaselineUndefined(format!("training needs K >= 2, got {}", self.k)));
        }
        if !(self.lr_sbn > 0.0) || !(self.lr_branch > 0.0) {
            return Err(Error::Contract("learning rates must be positive".into()));
        }
        if !(self.annealing_init > 0.0 && self.annealing_init <= 1.0) {
            return Err(Error::Contract(format!(
                "annealing_init must lie in (0,1], got {}",
                self.annealing_init
            )));
        }
        Ok(())
    }
}

/// Annealing factor on the data log-likelihood: linear warmup from
/// `annealing_init` to one across the horizon.
pub fn anneal(iter: u64, cfg: &TrainConfig) -> f64 {
    if cfg.annealing_horizon == 0 {
        return 1.0;
    }
    let b = cfg.annealing_init
        + iter as f64 * (1.0 - cfg.annealing_init) / cfg.annealing_horizon as f64;
    b.min(1.0)
}

/// One logged evaluation point.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub iteration: u64,
    pub miselbo: f64,
    pub per_component_elbo: Vec<f64>,
    pub beta: f64,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    /// CSV emission. Wall-clock is opt-in: the default output is
    /// byte-identical across re-runs of the same seed.
    pub fn to_csv(&self, s: usize, timing: bool) -> String {
        let mut out = String::from("iteration,miselbo");
        for i in 0..s {
            let _ = write!(out, ",elbo_{i}");
        }
        out.push_str(",beta");
        if timing {
            out.push_str(",seconds");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:.10e}", r.iteration, r.miselbo);
            for e in &r.per_component_elbo {
                let _ = write!(out, ",{e:.10e}");
            }
            let _ = write!(out, ",{:.6}", r.beta);
            if timing {
                let _ = write!(out, ",{:.3}", r.wall_clock);
            }
            out.push('\n');
        }
        out
    }
}

/// Mutable training state: global step count plus per-component optimizer
/// moments. Checkpointing this alongside the model makes resumption exact.
#[derive(Debug)]
pub struct TrainState {
    pub iteration: u64,
    pub opt_sbn: Vec<Adam>,
    pub opt_branch: Vec<Adam>,
}

impl TrainState {
    pub fn fresh(model: &MixtureApprox, cfg: &TrainConfig) -> Self {
        let s = model.n_components();
        Self {
            iteration: 0,
            opt_sbn: (0..s).map(|_| Adam::new(cfg.lr_sbn, model.support().n_params())).collect(),
            opt_branch: (0..s)
                .map(|_| Adam::new(cfg.lr_branch, model.layout().n_params()))
                .collect(),
        }
    }
}

/// Draw K particles per component, compute VIMCO gradients, update every
/// component. Deterministic given (seed, iteration).
pub fn train_step(
    model: &mut MixtureApprox,
    engine: &LikelihoodEngine,
    prior: &PriorConfig,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<RunRecord> {
    state.iteration += 1;
    let iter = state.iteration;
    let beta = anneal(iter.saturating_sub(1), cfg);
    let batch = sample_batch(model, engine, prior, cfg.k, |s, k| {
        stream_rng(cfg.seed, &[CTX_TRAIN, iter, s as u64, k as u64])
    })?;
    let (grads, sig) = vimco_grads(model, engine, prior, &batch, beta)?;
    if !grads.is_finite() {
        let culprit = batch
            .particles
            .iter()
            .flatten()
            .find(|p| !p.log_lik.is_finite() || !p.log_prior.is_finite())
            .map(|p| newick::serialize(&p.topology, None).unwrap_or_default())
            .unwrap_or_else(|| "gradient accumulation".into());
        return Err(Error::NonFinite(format!(
            "non-finite gradient at iteration {iter} ({culprit})"
        )));
    }
    for i in 0..model.n_components() {
        let comp = model.component(i);
        let mut logits = comp.sbn.logits().to_vec();
        state.opt_sbn[i].step(&mut logits, &grads.sbn[i]);
        let sbn = Sbn::new(model.support().clone(), logits)?;
        let mut params = comp.branch.params().to_vec();
        state.opt_branch[i].step(&mut params, &grads.branch[i]);
        let branch = BranchModel::new(model.layout().clone(), params)?;
        model.replace(i, Component { sbn, branch })?;
    }
    Ok(RunRecord {
        iteration: iter,
        miselbo: sig.miselbo(),
        per_component_elbo: sig.lhat.clone(),
        beta,
        wall_clock: 0.0,
    })
}

/// Run the loop from the state's current iteration up to
/// `cfg.iterations`, logging every `eval_every` steps and invoking the
/// checkpoint hook every `checkpoint_every` steps.
pub fn train<F>(
    model: &mut MixtureApprox,
    engine: &LikelihoodEngine,
    prior: &PriorConfig,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_checkpoint: F,
) -> Result<RunLog>
where
    F: FnMut(&MixtureApprox, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    prior.validate()?;
    let start = Instant::now();
    let mut log = RunLog::default();
    while state.iteration < cfg.iterations {
        let mut record = train_step(model, engine, prior, cfg, state)?;
        let iter = state.iteration;
        if cfg.eval_every > 0 && iter % cfg.eval_every == 0 {
            record.wall_clock = start.elapsed().as_secs_f64();
            log.records.push(record);
        }
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
            on_checkpoint(model, state)?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::parse_fasta;
    use crate::branch::BranchMode;
    use crate::taxa::taxa;
    use crate::topology::enumerate_unrooted;

    fn setup(s: usize) -> (MixtureApprox, LikelihoodEngine, PriorConfig) {
        let tx = taxa(["A", "B", "C", "D"]).unwrap();
        let all = enumerate_unrooted(&tx).unwrap();
        let m = MixtureApprox::init_from_candidates(tx, &all, s, BranchMode::SplitPsp).unwrap();
        let aln = parse_fasta(">A\nACGTACGT\n>B\nACGTTCGT\n>C\nCCGTACGA\n>D\nACTTACGT\n").unwrap();
        (m, LikelihoodEngine::new(&aln), PriorConfig::default())
    }

    fn cfg(iters: u64, seed: u64) -> TrainConfig {
        TrainConfig {
            s: 2,
            k: 4,
            iterations: iters,
            eval_every: 1,
            checkpoint_every: 0,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn anneal_schedule() {
        let c = TrainConfig::default();
        assert!((anneal(0, &c) - 0.001).abs() < 1e-15);
        assert!((anneal(100_000, &c) - 1.0).abs() < 1e-15);
        assert!((anneal(200_000, &c) - 1.0).abs() < 1e-15);
        assert!((anneal(50_000, &c) - 0.5005).abs() < 1e-12);
        // Non-decreasing and capped at one.
        let mut last = 0.0;
        for i in (0..250_000).step_by(10_000) {
            let b = anneal(i, &c);
            assert!(b >= last && b <= 1.0);
            last = b;
        }
    }

    #[test]
    fn zero_iterations_leave_the_model_unchanged() {
        let (mut m, engine, prior) = setup(2);
        let before = m.component(0).sbn.logits().to_vec();
        let c = cfg(0, 1);
        let mut state = TrainState::fresh(&m, &c);
        let log = train(&mut m, &engine, &prior, &c, &mut state, |_, _| Ok(())).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(m.component(0).sbn.logits(), &before[..]);
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let (mut m1, engine, prior) = setup(2);
        let (mut m2, _, _) = setup(2);
        let c = cfg(5, 7);
        let mut s1 = TrainState::fresh(&m1, &c);
        let mut s2 = TrainState::fresh(&m2, &c);
        train(&mut m1, &engine, &prior, &c, &mut s1, |_, _| Ok(())).unwrap();
        train(&mut m2, &engine, &prior, &c, &mut s2, |_, _| Ok(())).unwrap();
        for i in 0..2 {
            let a = m1.component(i).sbn.logits();
            let b = m2.component(i).sbn.logits();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            let a = m1.component(i).branch.params();
            let b = m2.component(i).branch.params();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn log_rows_and_checkpoint_hook_counts() {
        let (mut m, engine, prior) = setup(1);
        let c = TrainConfig {
            s: 1,
            k: 3,
            iterations: 3,
            eval_every: 1,
            checkpoint_every: 1,
            seed: 2,
            ..TrainConfig::default()
        };
        let mut state = TrainState::fresh(&m, &c);
        let mut checkpoints = 0usize;
        let log = train(&mut m, &engine, &prior, &c, &mut state, |_, _| {
            checkpoints += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(log.records.len(), 3);
        assert_eq!(checkpoints, 3);
        assert_eq!(log.records[0].iteration, 1);
        assert_eq!(log.records[2].iteration, 3);
    }

    #[test]
    fn interrupted_run_resumes_exactly() {
        let (mut straight, engine, prior) = setup(2);
        let c = cfg(6, 11);
        let mut s_straight = TrainState::fresh(&straight, &c);
        train(&mut straight, &engine, &prior, &c, &mut s_straight, |_, _| Ok(())).unwrap();

        let (mut halves, _, _) = setup(2);
        let c_half = TrainConfig { iterations: 3, ..c.clone() };
        let mut state = TrainState::fresh(&halves, &c_half);
        train(&mut halves, &engine, &prior, &c_half, &mut state, |_, _| Ok(())).unwrap();
        let c_rest = TrainConfig { iterations: 6, ..c };
        train(&mut halves, &engine, &prior, &c_rest, &mut state, |_, _| Ok(())).unwrap();

        for i in 0..2 {
            let a = straight.component(i).sbn.logits();
            let b = halves.component(i).sbn.logits();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn training_improves_the_exact_bound_on_a_small_problem() {
        // The exact mixture bound (enumerated over all quartet topologies
        // with fixed-eps branch draws) should mostly increase.
        let (mut m, engine, prior) = setup(1);
        let c = TrainConfig {
            s: 1,
            k: 6,
            iterations: 400,
            eval_every: 0,
            checkpoint_every: 0,
            seed: 3,
            lr_sbn: 0.05,
            lr_branch: 0.05,
            annealing_init: 1.0,
            annealing_horizon: 0,
            ..TrainConfig::default()
        };
        let mut state = TrainState::fresh(&m, &c);
        let bound = |m: &MixtureApprox| {
            let batch = sample_batch(m, &engine, &prior, 64, |s, k| {
                stream_rng(99, &[s as u64, k as u64])
            })
            .unwrap();
            crate::objective::miselbo(m, &batch, 1.0).unwrap()
        };
        let before = bound(&m);
        train(&mut m, &engine, &prior, &c, &mut state, |_, _| Ok(())).unwrap();
        let after = bound(&m);
        assert!(after > before, "bound did not improve: {before} -> {after}");
    }

    #[test]
    fn k_below_two_is_rejected() {
        let c = TrainConfig { k: 1, ..TrainConfig::default() };
        assert!(matches!(c.validate(), Err(Error::BaselineUndefined(_))));
    }

    #[test]
    fn csv_layout() {
        let log = RunLog {
            records: vec![RunRecord {
                iteration: 10,
                miselbo: -1.5,
                per_component_elbo: vec![-1.4, -1.6],
                beta: 0.5,
                wall_clock: 2.0,
            }],
        };
        let csv = log.to_csv(2, false);
        assert!(csv.starts_with("iteration,miselbo,elbo_0,elbo_1,beta\n"));
        assert!(!csv.contains("seconds"));
        let csv_t = log.to_csv(2, true);
        assert!(csv_t.contains("seconds"));
    }
}
