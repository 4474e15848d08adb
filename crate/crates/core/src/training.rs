//! Squared loss, its analytic gradient, balanced batches and plain SGD.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{breakdown_from_attn, AttnBreakdown};
use crate::model::AttentionModel;
use crate::patterns::PatternBasis;
use crate::prompts::{build_training_prompt, PatternSet, PositionedPrompt, Prompt};
use crate::rng;
use crate::tasks::ReasoningTask;

/// A prompt paired with the index of its label pattern.
pub type Sample = (Prompt, usize);

/// Label vector of `prompt`'s pattern set.
pub fn label_vector(basis: &PatternBasis, prompt: &Prompt, label: usize) -> DVector<f64> {
    match prompt.kind().pattern_set() {
        PatternSet::Trr => basis.trr(label).into_owned(),
        PatternSet::Tsr => basis.tsr(label).into_owned(),
    }
}

/// `½‖z − F‖²` for an explicit label vector.
pub fn loss_positioned(
    model: &AttentionModel,
    prompt: &PositionedPrompt,
    z: DVectorView<'_, f64>,
) -> Result<f64> {
    let f = model.forward(prompt)?;
    Ok(0.5 * (f.output - z).norm_squared())
}

pub fn loss(model: &AttentionModel, basis: &PatternBasis, prompt: &Prompt, label: usize) -> Result<f64> {
    let z = label_vector(basis, prompt, label);
    loss_positioned(model, &prompt.add_positional(basis), z.as_view())
}

/// The gradient of the squared loss is `u q̃ᵀ`; this returns the pair
/// `(u, q̃)` together with the loss value.
pub struct RankOneGrad {
    pub u: DVector<f64>,
    pub query: DVector<f64>,
    pub loss: f64,
}

impl RankOneGrad {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        &self.u * self.query.transpose()
    }
}

/// Gradient factors for one positioned prompt.
///
/// With `r = F − z`, `s` the attention and `v_i` the value of column `i`,
/// `u = Σ_i s_i (r·v_i) (p̃_i − Σ_j s_j p̃_j)`.
pub fn grad_factors(
    model: &AttentionModel,
    prompt: &PositionedPrompt,
    z: DVectorView<'_, f64>,
) -> Result<RankOneGrad> {
    let f = model.forward(prompt)?;
    let d = model.dim();
    let l = prompt.context_len();
    let r = &f.output - z;
    let ctx = prompt.tokens.columns(0, l);
    let rv = ctx.rows(d, d).tr_mul(&r);
    let a = f.attn.component_mul(&rv);
    let a_sum = a.sum();
    let mut u = &ctx * &a;
    u.axpy(-a_sum, &(&ctx * &f.attn), 1.0);
    Ok(RankOneGrad {
        u,
        query: prompt.query().into_owned(),
        loss: 0.5 * r.norm_squared(),
    })
}

pub fn grad_w_positioned(
    model: &AttentionModel,
    prompt: &PositionedPrompt,
    z: DVectorView<'_, f64>,
) -> Result<DMatrix<f64>> {
    Ok(grad_factors(model, prompt, z)?.to_matrix())
}

/// Exact gradient of [`loss`] with respect to `W`.
pub fn grad_w(
    model: &AttentionModel,
    basis: &PatternBasis,
    prompt: &Prompt,
    label: usize,
) -> Result<DMatrix<f64>> {
    let z = label_vector(basis, prompt, label);
    grad_w_positioned(model, &prompt.add_positional(basis), z.as_view())
}

/// Smallest multiple of `K·M` that is at least `M·ln M`.
pub fn default_batch_size(k: usize, m: usize) -> usize {
    let cell = (k * m).max(1);
    let target = (m as f64 * (m as f64).ln()).ceil().max(1.0) as usize;
    target.div_ceil(cell) * cell
}

/// `⌈10/α⌉` training examples per prompt.
pub fn default_l_tr(alpha: f64) -> usize {
    (10.0 / alpha - 1e-9).ceil().max(1.0) as usize
}

/// Batch with exactly `B/(K·M)` prompts for every (query step, step-input
/// pattern) cell. Sample `n` draws from its own stream `(seed, n)`.
pub fn balanced_batch(
    basis: &PatternBasis,
    task_pool: &[ReasoningTask],
    batch: usize,
    l_tr: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    let task0 = task_pool
        .first()
        .ok_or_else(|| Error::InvalidParameter("task pool is empty".into()))?;
    let k = task0.k();
    let m = basis.m();
    if task_pool.iter().any(|t| t.k() != k || t.pattern_count() != m) {
        return Err(Error::ShapeMismatch(
            "task pool entries must share K and act on the M TRR patterns".into(),
        ));
    }
    let cells = k * m;
    if batch == 0 || batch % cells != 0 {
        return Err(Error::BalanceInfeasible { batch, cells });
    }
    let per_cell = batch / cells;
    (0..batch)
        .into_par_iter()
        .map(|n| {
            let cell = n / per_cell;
            let step = cell / m + 1;
            let pattern = cell % m;
            let mut r = rng::stream(seed, &[n as u64]);
            let task = &task_pool[r.random_range(0..task_pool.len())];
            let z0 = task.preimage(pattern, step - 1)?;
            build_training_prompt(basis, task, z0, step, l_tr, alpha, &mut r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub xi: f64,
    pub l_tr: usize,
    pub alpha: f64,
    pub seed: u64,
    /// History is recorded every `log_every` iterations (and at the end).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.9,
            iterations: 3000,
            batch_size: 120,
            xi: crate::model::DEFAULT_XI,
            l_tr: 25,
            alpha: 0.4,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} must lie in [0, 1)", self.eta));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.l_tr == 0 || self.log_every == 0 {
            return bad("iterations, batch_size, l_tr and log_every must be positive".into());
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return bad(format!("xi = {} must be positive", self.xi));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha = {} outside (0, 1]", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub loss: f64,
    pub attn_same_pat_same_step: f64,
    pub attn_same_pat_diff_step: f64,
    pub attn_diff_pat_same_step: f64,
    pub attn_diff_pat_diff_step: f64,
    pub w_fro_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub const HEADER: [&'static str; 7] = [
        "iter",
        "loss",
        "attn_same_pat_same_step",
        "attn_same_pat_diff_step",
        "attn_diff_pat_same_step",
        "attn_diff_pat_diff_step",
        "w_fro_norm",
    ];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<HistoryRecord>, _>>()
            .map_err(|e| Error::Io(e.to_string()))?;
        Ok(Self { records })
    }
}

/// Mean attention breakdown over probes, each referenced to its own query.
pub fn probe_breakdown(
    model: &AttentionModel,
    basis: &PatternBasis,
    probes: &[Prompt],
) -> Result<AttnBreakdown> {
    let parts = probes
        .par_iter()
        .map(|p| {
            let f = model.forward(&p.add_positional(basis))?;
            let q = p.query_meta();
            Ok(breakdown_from_attn(
                f.attn.as_slice(),
                &p.meta()[..p.len() - 1],
                p.query_step(),
                q.in_pattern,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttnBreakdown::mean(&parts))
}

/// Per-sample gradient factors and the mean loss of a batch.
///
/// Samples are processed in parallel but the result is assembled in sample
/// order, and the gradient is formed by one matrix product, so the outcome
/// does not depend on the thread count.
fn batch_gradient(
    model: &AttentionModel,
    basis: &PatternBasis,
    batch: &[Sample],
) -> Result<(DMatrix<f64>, f64)> {
    let factors = batch
        .par_iter()
        .map(|(p, label)| {
            let z = label_vector(basis, p, *label);
            grad_factors(model, &p.add_positional(basis), z.as_view())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = 2 * model.dim();
    let b = factors.len();
    let mut u = DMatrix::zeros(n, b);
    let mut q = DMatrix::zeros(n, b);
    let mut loss = 0.0;
    for (j, f) in factors.iter().enumerate() {
        u.set_column(j, &f.u);
        q.set_column(j, &f.query);
        loss += f.loss;
    }
    let scale = 1.0 / b as f64;
    Ok((u * q.transpose() * scale, loss * scale))
}

/// Callback invoked after every update with the model and iteration count.
pub type Observer<'a> = dyn FnMut(&AttentionModel, usize) -> Result<()> + 'a;

pub fn sgd_train(
    config: &TrainConfig,
    basis: &PatternBasis,
    task_pool: &[ReasoningTask],
    probes: &[Prompt],
) -> Result<(AttentionModel, TrainHistory)> {
    sgd_train_observed(config, basis, task_pool, probes, &mut |_, _| Ok(()))
}

/// SGD from a fresh initialization. Batch `t` is drawn from stream
/// `(seed, 1, t)`, the initialization from `(seed, 0)`.
pub fn sgd_train_observed(
    config: &TrainConfig,
    basis: &PatternBasis,
    task_pool: &[ReasoningTask],
    probes: &[Prompt],
    observer: &mut Observer<'_>,
) -> Result<(AttentionModel, TrainHistory)> {
    config.validate()?;
    let init_seed = rng::derive_seed(config.seed, &[0]);
    let mut model = AttentionModel::init(basis.dim(), config.xi, init_seed)?;
    let mut history = TrainHistory::default();
    for t in 0..=config.iterations {
        let batch_seed = rng::derive_seed(config.seed, &[1, t as u64]);
        let batch = balanced_batch(
            basis,
            task_pool,
            config.batch_size,
            config.l_tr,
            config.alpha,
            batch_seed,
        )?;
        let (grad, loss) = batch_gradient(&model, basis, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: t, what: "loss" });
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Divergence { iteration: t, what: "gradient" });
        }
        if t % config.log_every == 0 || t == config.iterations {
            let b = if probes.is_empty() {
                AttnBreakdown::default()
            } else {
                probe_breakdown(&model, basis, probes)?
            };
            history.records.push(HistoryRecord {
                iter: t,
                loss,
                attn_same_pat_same_step: b.same_pattern_same_step,
                attn_same_pat_diff_step: b.same_pattern_diff_step,
                attn_diff_pat_same_step: b.diff_pattern_same_step,
                attn_diff_pat_diff_step: b.diff_pattern_diff_step,
                w_fro_norm: model.w().norm(),
            });
        }
        if t == config.iterations {
            break;
        }
        model.apply_update(&grad, config.eta);
        observer(&model, t + 1)?;
    }
    Ok((model, history))
}

/// Fixed probe prompts for history logging, drawn from stream `(seed, 2)`.
pub fn make_probes(
    basis: &PatternBasis,
    task_pool: &[ReasoningTask],
    count: usize,
    l_tr: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Prompt>> {
    let k = task_pool.first().map_or(1, ReasoningTask::k);
    let cells = k * basis.m();
    let batch = count.div_ceil(cells) * cells;
    let out = balanced_batch(
        basis,
        task_pool,
        batch,
        l_tr,
        alpha,
        rng::derive_seed(seed, &[2]),
    )?;
    // Interleave cells so a truncated probe set still covers every step.
    let per_cell = batch / cells;
    let mut order: Vec<usize> = (0..batch).collect();
    order.sort_by_key(|&n| (n % per_cell, n / per_cell % basis.m(), n / per_cell / basis.m()));
    Ok(order.iter().take(count).map(|&n| out[n].0.clone()).collect())
}

/// Loss and per-step greedy-decode accuracy on a balanced batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEval {
    pub loss: f64,
    pub step_accuracy: Vec<f64>,
}

pub fn evaluate_training(
    model: &AttentionModel,
    basis: &PatternBasis,
    task_pool: &[ReasoningTask],
    batch: usize,
    l_tr: usize,
    alpha: f64,
    seed: u64,
) -> Result<TrainEval> {
    let samples = balanced_batch(basis, task_pool, batch, l_tr, alpha, seed)?;
    let k = task_pool[0].k();
    let per = samples
        .par_iter()
        .map(|(p, label)| {
            let pp = p.add_positional(basis);
            let f = model.forward(&pp)?;
            let z = basis.trr(*label);
            let decoded = crate::inference::greedy_decode(
                f.output.as_view(),
                basis,
                crate::inference::CandidateSet::Trr,
            )?;
            Ok((0.5 * (f.output - z).norm_squared(), p.query_step(), decoded.index == *label))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    let mut loss = 0.0;
    for (l, step, ok) in &per {
        loss += l;
        counts[step - 1] += 1;
        hits[step - 1] += usize::from(*ok);
    }
    Ok(TrainEval {
        loss: loss / per.len() as f64,
        step_accuracy: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| h as f64 / c.max(1) as f64)
            .collect(),
    })
}
