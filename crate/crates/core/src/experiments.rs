//! Experiment drivers behind the command-line tool.
//!
//! Each driver is a pure function of an [`ExperimentConfig`] and returns its
//! tables; [`run_experiment`] writes them, together with the resolved config
//! and a seed manifest, into the output directory.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts;
use crate::config::{ExperimentConfig, ExperimentKind, SweepAxis};
use crate::error::{Error, Result};
use crate::inference::{cot_error, icl_error, EvalConfig};
use crate::io::{self, Checkpoint, SeedManifest};
use crate::model::{random_model, AttentionModel};
use crate::patterns::{attach_tsr_basis, make_trr_basis, PatternBasis};
use crate::prompts::build_training_prompt;
use crate::rng;
use crate::tasks::{
    correct_probs_for_tau, example1_model, fit_violating_model, make_transition_model,
    random_cyclic_task, Bound, ReasoningTask, RunnerUpLayout, TransitionModel,
};
use crate::training::{
    evaluate_training, grad_w, loss, make_probes, probe_breakdown, sgd_train_observed,
    TrainHistory,
};

/// Stream tags under the master seed.
mod tag {
    pub const TRR: u64 = 10;
    pub const TSR: u64 = 11;
    pub const POOL: u64 = 12;
    pub const EVAL: u64 = 13;
    pub const FRESH_PROBES: u64 = 14;
    pub const SWEEP_TASK: u64 = 20;
    pub const SWEEP_MODEL: u64 = 21;
    pub const SWEEP_COT: u64 = 22;
    pub const SWEEP_ICL: u64 = 23;
    pub const DI_TASK: u64 = 30;
    pub const DI_VIOLATING: u64 = 31;
    pub const DI_HOLDING: u64 = 32;
    pub const DI_COT: u64 = 33;
    pub const DI_ICL: u64 = 34;
    pub const GRADCHECK: u64 = 40;
    pub const TRAIN_RUN: u64 = 50;
}

/// Pattern basis and training-task pool shared by every stage of a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub basis: PatternBasis,
    pub pool: Vec<ReasoningTask>,
    pub basis_seed: u64,
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let p = &cfg.patterns;
    let basis_seed = rng::derive_seed(cfg.seed, &[tag::TRR]);
    let basis = make_trr_basis(p.dim, p.m, p.k, basis_seed)?;
    let basis = attach_tsr_basis(basis, p.m_prime, rng::derive_seed(cfg.seed, &[tag::TSR]))?;
    let mut r = rng::stream(cfg.seed, &[tag::POOL]);
    let pool = (0..cfg.training.task_pool)
        .map(|_| random_cyclic_task(p.m, p.k, &mut r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Setup {
        basis,
        pool,
        basis_seed,
    })
}

/// A pass/fail statement checked by `--assert`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: AttentionModel,
    pub history: TrainHistory,
    pub seed: u64,
}

/// Train on the setup with training seed `seed`, calling `checkpoint` every
/// `checkpoint_every` iterations when that is positive.
pub fn train(
    cfg: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
    checkpoint: &mut dyn FnMut(&AttentionModel, usize) -> Result<()>,
) -> Result<TrainedRun> {
    let tc = cfg.train_config(seed);
    let probes = make_probes(
        &setup.basis,
        &setup.pool,
        cfg.training.probes,
        tc.l_tr,
        tc.alpha,
        seed,
    )?;
    let every = cfg.training.checkpoint_every;
    let (model, history) = sgd_train_observed(&tc, &setup.basis, &setup.pool, &probes, &mut |m, t| {
        if every > 0 && t % every == 0 {
            checkpoint(m, t)
        } else {
            Ok(())
        }
    })?;
    Ok(TrainedRun {
        model,
        history,
        seed,
    })
}

/// Load the configured checkpoint, or train with the master seed.
pub fn train_or_load(cfg: &ExperimentConfig, setup: &Setup) -> Result<AttentionModel> {
    if let Some(path) = &cfg.training.checkpoint {
        let ck = Checkpoint::load(path)?;
        if ck.d_x != cfg.patterns.dim || ck.k != cfg.patterns.k || ck.basis_seed != setup.basis_seed {
            return Err(Error::Config(format!(
                "checkpoint {} was trained on a different basis",
                path.display()
            )));
        }
        return ck.to_model();
    }
    Ok(train(cfg, setup, cfg.seed, &mut |_, _| Ok(()))?.model)
}

/// Iterations bracketing the two training stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOrdering {
    /// First logged iteration with same-pattern-same-step mass above 0.5.
    pub first_concentrated: Option<usize>,
    /// Earliest logged iteration from which both different-step cells stay
    /// below 0.05.
    pub step_separated: Option<usize>,
    pub holds: bool,
}

pub fn stage_ordering(history: &TrainHistory) -> StageOrdering {
    let r = &history.records;
    let first_concentrated = r
        .iter()
        .find(|h| h.attn_same_pat_same_step > 0.5)
        .map(|h| h.iter);
    let mut step_separated = None;
    for h in r.iter().rev() {
        if h.attn_same_pat_diff_step < 0.05 && h.attn_diff_pat_diff_step < 0.05 {
            step_separated = Some(h.iter);
        } else {
            break;
        }
    }
    let holds = matches!((first_concentrated, step_separated), (Some(c), Some(s)) if s <= c);
    StageOrdering {
        first_concentrated,
        step_separated,
        holds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub seed: u64,
    pub iter: usize,
    pub loss: f64,
    pub attn_same_pat_same_step: f64,
    pub attn_same_pat_diff_step: f64,
    pub attn_diff_pat_same_step: f64,
    pub attn_diff_pat_diff_step: f64,
    pub w_fro_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub seed: u64,
    pub eval_loss: f64,
    pub min_step_accuracy: f64,
    /// Same-pattern-same-step mass on fresh probes after training.
    pub concentration: f64,
    pub diff_step_mass: f64,
    pub first_concentrated: Option<usize>,
    pub step_separated: Option<usize>,
    pub ordering_holds: bool,
}

#[derive(Debug, Clone)]
pub struct DynamicsReport {
    pub rows: Vec<DynamicsRow>,
    pub summary: Vec<DynamicsSummary>,
    pub runs: Vec<TrainedRun>,
}

/// Summarize a trained run on fresh evaluation data.
pub fn summarize_run(cfg: &ExperimentConfig, setup: &Setup, run: &TrainedRun) -> Result<DynamicsSummary> {
    let tc = cfg.train_config(run.seed);
    let k = cfg.patterns.k;
    let cells = k * cfg.patterns.m;
    let eval_batch = (600usize).div_ceil(cells) * cells;
    let ev = evaluate_training(
        &run.model,
        &setup.basis,
        &setup.pool,
        eval_batch,
        tc.l_tr,
        tc.alpha,
        rng::derive_seed(run.seed, &[tag::EVAL]),
    )?;
    let probes = make_probes(
        &setup.basis,
        &setup.pool,
        cfg.training.probes,
        tc.l_tr,
        tc.alpha,
        rng::derive_seed(run.seed, &[tag::FRESH_PROBES]),
    )?;
    let b = probe_breakdown(&run.model, &setup.basis, &probes)?;
    let ord = stage_ordering(&run.history);
    Ok(DynamicsSummary {
        seed: run.seed,
        eval_loss: ev.loss,
        min_step_accuracy: ev.step_accuracy.iter().cloned().fold(f64::INFINITY, f64::min),
        concentration: b.same_pattern_same_step,
        diff_step_mass: b.same_pattern_diff_step + b.diff_pattern_diff_step,
        first_concentrated: ord.first_concentrated,
        step_separated: ord.step_separated,
        ordering_holds: ord.holds,
    })
}

/// Training seed of dynamics run `i`.
pub fn run_seed(master: u64, i: usize) -> u64 {
    if i == 0 {
        master
    } else {
        rng::derive_seed(master, &[tag::TRAIN_RUN, i as u64])
    }
}

pub fn run_dynamics(cfg: &ExperimentConfig, setup: &Setup) -> Result<DynamicsReport> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut runs = Vec::new();
    for i in 0..cfg.training.n_seeds {
        let seed = run_seed(cfg.seed, i);
        let run = train(cfg, setup, seed, &mut |_, _| Ok(()))?;
        rows.extend(run.history.records.iter().map(|h| DynamicsRow {
            seed,
            iter: h.iter,
            loss: h.loss,
            attn_same_pat_same_step: h.attn_same_pat_same_step,
            attn_same_pat_diff_step: h.attn_same_pat_diff_step,
            attn_diff_pat_same_step: h.attn_diff_pat_same_step,
            attn_diff_pat_diff_step: h.attn_diff_pat_diff_step,
            w_fro_norm: h.w_fro_norm,
        }));
        summary.push(summarize_run(cfg, setup, &run)?);
        runs.push(run);
    }
    Ok(DynamicsReport {
        rows,
        summary,
        runs,
    })
}

pub fn dynamics_checks(summary: &[DynamicsSummary]) -> Vec<Check> {
    let worst_loss = summary.iter().map(|s| s.eval_loss).fold(0.0, f64::max);
    let worst_acc = summary
        .iter()
        .map(|s| s.min_step_accuracy)
        .fold(f64::INFINITY, f64::min);
    let worst_conc = summary
        .iter()
        .map(|s| s.concentration)
        .fold(f64::INFINITY, f64::min);
    let ordered = summary.iter().filter(|s| s.ordering_holds).count();
    let need = (summary.len() * 4).div_ceil(5);
    vec![
        Check::new("eval_loss", worst_loss <= 0.1, format!("max eval loss {worst_loss:.5} (<= 0.1)")),
        Check::new(
            "step_accuracy",
            worst_acc >= 0.99,
            format!("min per-step accuracy {worst_acc:.4} (>= 0.99)"),
        ),
        Check::new(
            "concentration",
            worst_conc >= 0.9,
            format!("min concentration {worst_conc:.4} (>= 0.9)"),
        ),
        Check::new(
            "two_stage_ordering",
            ordered >= need,
            format!("ordering holds on {ordered}/{} seeds (need {need})", summary.len()),
        ),
    ]
}

/// One (axis value, seed, l_ts) cell of a sweep. Error statistics refer to
/// the realized transition model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_hash: String,
    pub axis: String,
    pub axis_value: f64,
    pub seed: usize,
    pub l_ts: usize,
    pub alpha_prime: f64,
    pub tau: f64,
    pub rho: f64,
    pub tau_o: f64,
    pub rho_o: f64,
    pub condition1: bool,
    pub cot_error: f64,
    pub cot_stderr: f64,
    pub icl_error: f64,
    pub icl_stderr: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<String>,
}

struct Cell<'a> {
    label: String,
    value: f64,
    seed: usize,
    alpha_prime: f64,
    transition: &'a TransitionModel,
    l_ts: Vec<usize>,
    n_queries: usize,
    cot_seed: u64,
    icl_seed: u64,
}

fn eval_cell(
    hash: &str,
    model: &AttentionModel,
    basis: &PatternBasis,
    noise: f64,
    cell: &Cell<'_>,
) -> Result<Vec<SweepRow>> {
    let st = cell.transition.stats()?;
    cell.l_ts
        .iter()
        .enumerate()
        .map(|(li, &l)| {
            let mk = |seed: u64| EvalConfig {
                n_queries: cell.n_queries,
                l_ts: l,
                alpha_prime: cell.alpha_prime,
                noise,
                seed: rng::derive_seed(seed, &[li as u64]),
            };
            let c = cot_error(model, basis, cell.transition, &mk(cell.cot_seed))?;
            let i = icl_error(model, basis, cell.transition, &mk(cell.icl_seed))?;
            Ok(SweepRow {
                config_hash: hash.to_string(),
                axis: cell.label.clone(),
                axis_value: cell.value,
                seed: cell.seed,
                l_ts: l,
                alpha_prime: cell.alpha_prime,
                tau: st.tau,
                rho: st.rho,
                tau_o: st.tau_o,
                rho_o: st.rho_o,
                condition1: st.condition1.holds,
                cot_error: c.mean,
                cot_stderr: c.stderr,
                icl_error: i.mean,
                icl_stderr: i.stderr,
                n_queries: cell.n_queries,
            })
        })
        .collect()
}

/// Sweep one of α', τ, ρ with the other two fixed. Seed `s` fixes the
/// testing task, the runner-up layout and the evaluation streams, so every
/// axis value is compared on common random numbers.
pub fn run_sweep(cfg: &ExperimentConfig, setup: &Setup, model: &AttentionModel) -> Result<SweepOutcome> {
    let t = &cfg.testing;
    let k = cfg.patterns.k;
    let hash = cfg.hash();
    let axis = cfg.sweep.axis;
    let mut models: Vec<(usize, usize, TransitionModel)> = Vec::new();
    let mut skipped = Vec::new();
    for s in 0..t.n_seeds {
        let mut r = rng::stream(cfg.seed, &[tag::SWEEP_TASK, s as u64]);
        let task = random_cyclic_task(cfg.patterns.m_prime, k, &mut r)?;
        for (vi, &v) in cfg.sweep.values.iter().enumerate() {
            let (tau, rho) = match axis {
                SweepAxis::AlphaPrime => (t.tau, t.rho),
                SweepAxis::Tau => (v, t.rho),
                SweepAxis::Rho => (t.tau, v),
            };
            let mut r = rng::stream(cfg.seed, &[tag::SWEEP_MODEL, s as u64]);
            match make_transition_model(&task, &correct_probs_for_tau(tau, k), rho, RunnerUpLayout::Random, &mut r) {
                Ok(m) => models.push((vi, s, m)),
                Err(e) => skipped.push(format!("{}={v} seed={s}: {e}", axis.name())),
            }
        }
    }
    let cells: Vec<Cell<'_>> = models
        .iter()
        .map(|(vi, s, m)| {
            let v = cfg.sweep.values[*vi];
            Cell {
                label: axis.name().to_string(),
                value: v,
                seed: *s,
                alpha_prime: if axis == SweepAxis::AlphaPrime { v } else { t.alpha_prime },
                transition: m,
                l_ts: t.l_ts.clone(),
                n_queries: t.n_queries,
                cot_seed: rng::derive_seed(cfg.seed, &[tag::SWEEP_COT, *s as u64]),
                icl_seed: rng::derive_seed(cfg.seed, &[tag::SWEEP_ICL, *s as u64]),
            }
        })
        .collect();
    let rows = cells
        .par_iter()
        .map(|c| eval_cell(&hash, model, &setup.basis, t.noise, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then(a.seed.cmp(&b.seed))
            .then(a.l_ts.cmp(&b.l_ts))
    });
    Ok(SweepOutcome { rows, skipped })
}

/// Mean of `metric` over seeds for each (axis value, l_ts), sorted.
pub fn curve_means(rows: &[SweepRow], metric: fn(&SweepRow) -> f64) -> Vec<(f64, Vec<(usize, f64)>)> {
    let mut values: Vec<f64> = rows.iter().map(|r| r.axis_value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut ls: Vec<usize> = rows.iter().map(|r| r.l_ts).collect();
    ls.sort_unstable();
    ls.dedup();
    values
        .into_iter()
        .map(|v| {
            let pts = ls
                .iter()
                .filter_map(|&l| {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.axis_value == v && r.l_ts == l)
                        .map(metric)
                        .collect();
                    (!xs.is_empty()).then(|| (l, xs.iter().sum::<f64>() / xs.len() as f64))
                })
                .collect();
            (v, pts)
        })
        .collect()
}

/// Pairs of curves `(lower, higher)` and their number of l_ts points where
/// the higher axis value has strictly larger mean error.
pub fn inversions(curves: &[(f64, Vec<(usize, f64)>)]) -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let (lo, a) = &curves[i];
            let (hi, b) = &curves[j];
            let n = a
                .iter()
                .zip(b)
                .filter(|(pa, pb)| pa.0 == pb.0 && pb.1 > pa.1 + 1e-12)
                .count();
            out.push((*lo, *hi, n));
        }
    }
    out
}

pub fn sweep_checks(cfg: &ExperimentConfig, rows: &[SweepRow]) -> Vec<Check> {
    let metric: fn(&SweepRow) -> f64 = if cfg.kind == ExperimentKind::IclSweep {
        |r| r.icl_error
    } else {
        |r| r.cot_error
    };
    let curves = curve_means(rows, metric);
    let inv = inversions(&curves);
    let worst = inv.iter().map(|x| x.2).max().unwrap_or(0);
    let mut checks = vec![Check::new(
        "ordered_curves",
        worst <= 1,
        format!("max inversions per curve pair {worst} (<= 1)"),
    )];
    if let Some((v, pts)) = curves.last() {
        if let Some(&(l, e)) = pts.last() {
            checks.push(Check::new(
                "largest_l_error",
                e <= 0.02,
                format!("{}={v}: error {e:.4} at l_ts={l} (<= 0.02)", cfg.sweep.axis.name()),
            ));
        }
    }
    checks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyBounds {
    pub cot_bound_violating: f64,
    pub icl_bound_violating: f64,
    pub icl_bound_holding: f64,
    pub l_violating: Vec<usize>,
    pub l_holding: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DichotomyOutcome {
    pub rows: Vec<SweepRow>,
    pub bounds: DichotomyBounds,
}

/// CoT versus ICL on a Condition-1-violating model and on a holding model.
/// Context lengths are common to all seeds: the largest per-seed bound is
/// used at each multiple.
pub fn run_dichotomy(cfg: &ExperimentConfig, setup: &Setup, model: &AttentionModel) -> Result<DichotomyOutcome> {
    let t = &cfg.testing;
    let d = &cfg.dichotomy;
    let k = cfg.patterns.k;
    let m = cfg.patterns.m;
    let hash = cfg.hash();
    let mut pairs = Vec::with_capacity(t.n_seeds);
    for s in 0..t.n_seeds {
        let mut r = rng::stream(cfg.seed, &[tag::DI_TASK, s as u64]);
        let task = random_cyclic_task(cfg.patterns.m_prime, k, &mut r)?;
        let mut rv = rng::stream(cfg.seed, &[tag::DI_VIOLATING, s as u64]);
        let violating = fit_violating_model(&task, d.tau_o, d.rho_o, d.grid, &mut rv)?.model;
        let mut rh = rng::stream(cfg.seed, &[tag::DI_HOLDING, s as u64]);
        let holding =
            make_transition_model(&task, &correct_probs_for_tau(t.tau, k), t.rho, RunnerUpLayout::Random, &mut rh)?;
        pairs.push((violating, holding));
    }
    let mut cot_v: f64 = 0.0;
    let mut icl_v: f64 = 0.0;
    let mut icl_h: f64 = 0.0;
    for (v, h) in &pairs {
        let sv = v.stats()?;
        let sh = h.stats()?;
        cot_v = cot_v.max(Bound::CotTest { alpha_prime: t.alpha_prime, tau: sv.tau, rho: sv.rho, m }.evaluate(1.0)?);
        icl_v = icl_v.max(Bound::IclTest { alpha_prime: t.alpha_prime, tau_o: sv.tau_o, rho_o: sv.rho_o, m }.evaluate(1.0)?);
        icl_h = icl_h.max(Bound::IclTest { alpha_prime: t.alpha_prime, tau_o: sh.tau_o, rho_o: sh.rho_o, m }.evaluate(1.0)?);
    }
    let mut l_violating: Vec<usize> = d
        .icl_bound_multiples
        .iter()
        .map(|x| (x * icl_v).ceil().max(1.0) as usize)
        .collect();
    l_violating.push(cot_v.ceil() as usize);
    l_violating.sort_unstable();
    l_violating.dedup();
    let l_holding = vec![icl_h.ceil() as usize];

    let mut cells = Vec::new();
    for (s, (v, h)) in pairs.iter().enumerate() {
        for (holds, tm, ls) in [(false, v, &l_violating), (true, h, &l_holding)] {
            let lane = u64::from(holds);
            cells.push(Cell {
                label: "condition1".into(),
                value: f64::from(u8::from(holds)),
                seed: s,
                alpha_prime: t.alpha_prime,
                transition: tm,
                l_ts: ls.clone(),
                n_queries: d.n_queries,
                cot_seed: rng::derive_seed(cfg.seed, &[tag::DI_COT, s as u64, lane]),
                icl_seed: rng::derive_seed(cfg.seed, &[tag::DI_ICL, s as u64, lane]),
            });
        }
    }
    let rows = cells
        .par_iter()
        .map(|c| eval_cell(&hash, model, &setup.basis, t.noise, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then(a.seed.cmp(&b.seed))
            .then(a.l_ts.cmp(&b.l_ts))
    });
    Ok(DichotomyOutcome {
        rows,
        bounds: DichotomyBounds {
            cot_bound_violating: cot_v,
            icl_bound_violating: icl_v,
            icl_bound_holding: icl_h,
            l_violating,
            l_holding,
        },
    })
}

pub fn dichotomy_checks(out: &DichotomyOutcome) -> Vec<Check> {
    let b = &out.bounds;
    let cot_curves = curve_means(&out.rows, |r| r.cot_error);
    let icl_curves = curve_means(&out.rows, |r| r.icl_error);
    let find = |curves: &[(f64, Vec<(usize, f64)>)], holds: f64, l: usize| {
        curves
            .iter()
            .find(|c| c.0 == holds)
            .and_then(|c| c.1.iter().find(|p| p.0 == l))
            .map_or(f64::NAN, |p| p.1)
    };
    let l_cot = b.cot_bound_violating.ceil() as usize;
    let limit = (4.0 * b.icl_bound_violating).ceil() as usize;
    let min_icl_v = icl_curves
        .iter()
        .find(|c| c.0 == 0.0)
        .map_or(f64::NAN, |c| {
            c.1.iter()
                .filter(|p| p.0 <= limit)
                .map(|p| p.1)
                .fold(f64::INFINITY, f64::min)
        });
    let cot_v = find(&cot_curves, 0.0, l_cot);
    let l_h = b.l_holding[0];
    let icl_h = find(&icl_curves, 1.0, l_h);
    vec![
        Check::new(
            "violating_icl_stays_high",
            min_icl_v >= 0.3,
            format!("min ICL error {min_icl_v:.4} up to l_ts={limit} (>= 0.3)"),
        ),
        Check::new(
            "violating_cot_succeeds",
            cot_v < 0.05,
            format!("CoT error {cot_v:.4} at l_ts={l_cot} (< 0.05)"),
        ),
        Check::new(
            "holding_icl_succeeds",
            icl_h < 0.05,
            format!("ICL error {icl_h:.4} at l_ts={l_h} (< 0.05)"),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Report {
    pub b: [[f64; 2]; 2],
    pub tau: f64,
    pub tau_o: f64,
    pub rho: f64,
    pub rho_o: f64,
    pub condition1_holds: bool,
    /// 1-based indices of violating input patterns.
    pub violating: Vec<usize>,
}

impl Example1Report {
    pub fn render(&self) -> String {
        let c1 = if self.condition1_holds {
            "holds".to_string()
        } else {
            let idx: Vec<String> = self.violating.iter().map(ToString::to_string).collect();
            format!("violated at index {}", idx.join(", "))
        };
        format!(
            "B = [[{:.2}, {:.2}], [{:.2}, {:.2}]]\ntau = {:.2}\ntau_o = {:.2}\nrho = {:.4}\nrho_o = {:.4}\nCondition 1: {c1}\n",
            self.b[0][0], self.b[0][1], self.b[1][0], self.b[1][1], self.tau, self.tau_o, self.rho, self.rho_o
        )
    }
}

pub fn example1() -> Result<Example1Report> {
    let m = example1_model();
    let st = m.stats()?;
    let b = m.b();
    Ok(Example1Report {
        b: [[b[(0, 0)], b[(0, 1)]], [b[(1, 0)], b[(1, 1)]]],
        tau: st.tau,
        tau_o: st.tau_o,
        rho: st.rho,
        rho_o: st.rho_o,
        condition1_holds: st.condition1.holds,
        violating: st.condition1.violating.iter().map(|i| i + 1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub instance: usize,
    pub dim: usize,
    pub k: usize,
    pub context_columns: usize,
    pub grad_norm: f64,
    pub rel_error: f64,
}

/// Central-difference check of the analytic gradient on random models and
/// training prompts.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradcheckRow>> {
    let g = &cfg.gradcheck;
    if g.dims.is_empty() || g.steps.is_empty() {
        return Err(Error::Config("gradcheck: dims and steps must be nonempty".into()));
    }
    (0..g.instances)
        .into_par_iter()
        .map(|i| {
            let dim = g.dims[i % g.dims.len()];
            let k = g.steps[(i / g.dims.len()) % g.steps.len()];
            let m = (dim / 2).max(2).min(dim);
            let mut r = rng::stream(cfg.seed, &[tag::GRADCHECK, i as u64]);
            let basis = make_trr_basis(dim, m, k, rand::Rng::random(&mut r))?;
            let task = random_cyclic_task(m, k, &mut r)?;
            let step = rand::Rng::random_range(&mut r, 1..=k);
            let l_tr = rand::Rng::random_range(&mut r, 2..=6);
            let (p, label) = build_training_prompt(&basis, &task, 0, step, l_tr, 0.5, &mut r)?;
            let model = random_model(dim, 1.0 / (dim as f64).sqrt(), &mut r);
            let analytic = grad_w(&model, &basis, &p, label)?;
            let n = 2 * dim;
            let mut fd = nalgebra::DMatrix::zeros(n, n);
            let mut probe = model.clone();
            for a in 0..n {
                for b in 0..n {
                    let w0 = probe.w()[(a, b)];
                    probe.w_mut()[(a, b)] = w0 + g.h;
                    let lp = loss(&probe, &basis, &p, label)?;
                    probe.w_mut()[(a, b)] = w0 - g.h;
                    let lm = loss(&probe, &basis, &p, label)?;
                    probe.w_mut()[(a, b)] = w0;
                    fd[(a, b)] = (lp - lm) / (2.0 * g.h);
                }
            }
            let denom = analytic.norm().max(fd.norm()).max(1e-300);
            Ok(GradcheckRow {
                instance: i,
                dim,
                k,
                context_columns: p.len() - 1,
                grad_norm: analytic.norm(),
                rel_error: (&analytic - &fd).norm() / denom,
            })
        })
        .collect()
}

pub fn gradcheck_checks(cfg: &ExperimentConfig, rows: &[GradcheckRow]) -> Vec<Check> {
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    vec![Check::new(
        "gradient_relative_error",
        worst < cfg.gradcheck.tolerance,
        format!("max relative error {worst:.3e} over {} instances (< {:e})", rows.len(), cfg.gradcheck.tolerance),
    )]
}

/// Summary of a finished experiment.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub checks: Vec<Check>,
    pub messages: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn write_setup_seeds(manifest: &mut SeedManifest, cfg: &ExperimentConfig, setup: &Setup) {
    manifest.record("trr_basis", setup.basis_seed);
    manifest.record("tsr_basis", rng::derive_seed(cfg.seed, &[tag::TSR]));
    manifest.record("task_pool", rng::derive_seed(cfg.seed, &[tag::POOL]));
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// Run the configured experiment and write every artifact to
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut manifest = SeedManifest::new(cfg.seed, cfg.hash());
    let mut report = RunReport::default();
    let chart = |name: &str, svg: String| std::fs::write(dir.join(name), svg).map_err(Error::from);
    match cfg.kind {
        ExperimentKind::Example1 => {
            let r = example1()?;
            io::write_json(&dir.join("example1.json"), &r)?;
            report.messages.push(r.render());
            let violated = !r.condition1_holds && r.violating == vec![1];
            report.checks.push(Check::new(
                "example1",
                violated && (r.tau - 0.36).abs() < 1e-10 && (r.tau_o - 0.56).abs() < 1e-10,
                "tau = 0.36, tau_o = 0.56, Condition 1 violated at index 1".into(),
            ));
        }
        ExperimentKind::Gradcheck => {
            manifest.record("gradcheck", rng::derive_seed(cfg.seed, &[tag::GRADCHECK]));
            let rows = run_gradcheck(cfg)?;
            io::write_csv(&dir.join("gradcheck.csv"), &rows)?;
            report.checks = gradcheck_checks(cfg, &rows);
        }
        ExperimentKind::TrainDynamics => {
            let setup = build_setup(cfg)?;
            write_setup_seeds(&mut manifest, cfg, &setup);
            for i in 0..cfg.training.n_seeds {
                manifest.record(format!("train_run_{i}"), run_seed(cfg.seed, i));
            }
            let rep = run_dynamics(cfg, &setup)?;
            io::write_csv(&dir.join("dynamics.csv"), &rep.rows)?;
            io::write_csv(&dir.join("dynamics_summary.csv"), &rep.summary)?;
            if let Some(run) = rep.runs.first() {
                Checkpoint::from_model(&run.model, cfg.patterns.k, setup.basis_seed)
                    .save(&dir.join("model.json"))?;
            }
            if cfg.charts.enabled {
                let text = std::fs::read_to_string(dir.join("dynamics.csv"))?;
                chart("dynamics.svg", charts::dynamics_chart(&text, cfg.charts.width, cfg.charts.height)?)?;
            }
            report.checks = dynamics_checks(&rep.summary);
        }
        ExperimentKind::CotSweep | ExperimentKind::IclSweep => {
            let setup = build_setup(cfg)?;
            write_setup_seeds(&mut manifest, cfg, &setup);
            let model = train_or_load(cfg, &setup)?;
            let out = run_sweep(cfg, &setup, &model)?;
            for s in &out.skipped {
                report.messages.push(format!("skipped {s}"));
            }
            manifest.skipped = out.skipped.clone();
            io::write_csv(&dir.join("sweep.csv"), &out.rows)?;
            if cfg.charts.enabled {
                let text = std::fs::read_to_string(dir.join("sweep.csv"))?;
                let metric = if cfg.kind == ExperimentKind::IclSweep { "icl_error" } else { "cot_error" };
                chart("sweep.svg", charts::sweep_chart(&text, metric, cfg.charts.width, cfg.charts.height)?)?;
            }
            report.checks = sweep_checks(cfg, &out.rows);
        }
        ExperimentKind::CotVsIcl => {
            let setup = build_setup(cfg)?;
            write_setup_seeds(&mut manifest, cfg, &setup);
            let model = train_or_load(cfg, &setup)?;
            let out = run_dichotomy(cfg, &setup, &model)?;
            io::write_csv(&dir.join("cot_vs_icl.csv"), &out.rows)?;
            io::write_json(&dir.join("bounds.json"), &out.bounds)?;
            if cfg.charts.enabled {
                let text = std::fs::read_to_string(dir.join("cot_vs_icl.csv"))?;
                chart("cot_vs_icl.svg", charts::dichotomy_chart(&text, cfg.charts.width, cfg.charts.height)?)?;
            }
            report.checks = dichotomy_checks(&out);
        }
    }
    io::write_json(&dir.join("seeds.json"), &manifest)?;
    Ok(report)
}

/// Train with the master seed and write the history and final checkpoint.
pub fn run_training(cfg: &ExperimentConfig) -> Result<RunReport> {
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut manifest = SeedManifest::new(cfg.seed, cfg.hash());
    let setup = build_setup(cfg)?;
    write_setup_seeds(&mut manifest, cfg, &setup);
    manifest.record("train_run_0", cfg.seed);
    let k = cfg.patterns.k;
    let ckdir = dir.clone();
    let run = train(cfg, &setup, cfg.seed, &mut |m, t| {
        Checkpoint::from_model(m, k, setup.basis_seed).save(&ckdir.join(format!("model_{t:06}.json")))
    })?;
    let mut f = std::fs::File::create(dir.join("history.csv"))?;
    run.history.write_csv(&mut f)?;
    Checkpoint::from_model(&run.model, k, setup.basis_seed).save(&dir.join("model.json"))?;
    let summary = summarize_run(cfg, &setup, &run)?;
    io::write_csv(&dir.join("summary.csv"), std::slice::from_ref(&summary))?;
    io::write_json(&dir.join("seeds.json"), &manifest)?;
    let mut checks = dynamics_checks(std::slice::from_ref(&summary));
    checks.retain(|c| c.name != "two_stage_ordering");
    Ok(RunReport {
        checks,
        messages: vec![format!(
            "eval loss {:.5}, min step accuracy {:.4}, concentration {:.4}",
            summary.eval_loss, summary.min_step_accuracy, summary.concentration
        )],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::HistoryRecord;

    fn rec(iter: usize, ss: f64, sd: f64, dd: f64) -> HistoryRecord {
        HistoryRecord {
            iter,
            loss: 0.0,
            attn_same_pat_same_step: ss,
            attn_same_pat_diff_step: sd,
            attn_diff_pat_same_step: 1.0 - ss - sd - dd,
            attn_diff_pat_diff_step: dd,
            w_fro_norm: 0.0,
        }
    }

    #[test]
    fn ordering_detects_both_outcomes() {
        let good = TrainHistory {
            records: vec![rec(0, 0.1, 0.1, 0.5), rec(10, 0.3, 0.01, 0.04), rec(20, 0.6, 0.0, 0.01)],
        };
        let o = stage_ordering(&good);
        assert_eq!(o.first_concentrated, Some(20));
        assert_eq!(o.step_separated, Some(10));
        assert!(o.holds);
        let bad = TrainHistory {
            records: vec![rec(0, 0.1, 0.1, 0.5), rec(10, 0.6, 0.01, 0.1), rec(20, 0.8, 0.0, 0.01)],
        };
        let o = stage_ordering(&bad);
        assert_eq!(o.step_separated, Some(20));
        assert!(!o.holds);
        let relapse = TrainHistory {
            records: vec![rec(0, 0.1, 0.01, 0.01), rec(10, 0.6, 0.2, 0.0), rec(20, 0.8, 0.0, 0.01)],
        };
        assert_eq!(stage_ordering(&relapse).step_separated, Some(20));
    }

    #[test]
    fn inversion_count() {
        let curves = vec![
            (0.2, vec![(1, 0.5), (2, 0.3), (3, 0.1)]),
            (0.8, vec![(1, 0.4), (2, 0.35), (3, 0.05)]),
        ];
        assert_eq!(inversions(&curves), vec![(0.2, 0.8, 1)]);
    }

    #[test]
    fn example1_report_text() {
        let r = example1().unwrap();
        let text = r.render();
        assert!(text.contains("B = [[0.56, 0.44], [0.64, 0.36]]"), "{text}");
        assert!(text.contains("tau = 0.36"));
        assert!(text.contains("violated at index 1"));
    }

    #[test]
    fn small_gradcheck_passes() {
        let mut cfg = ExperimentConfig::default();
        cfg.gradcheck.instances = 4;
        cfg.gradcheck.dims = vec![3];
        let rows = run_gradcheck(&cfg).unwrap();
        assert!(gradcheck_checks(&cfg, &rows)[0].passed, "{rows:?}");
    }
}
