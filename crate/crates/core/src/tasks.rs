//! K-step reasoning tasks and the transition models of erroneous examples.
//!
//! A task is a K-tuple of permutations of the pattern indices. Testing
//! examples follow row-stochastic step matrices `A_1..A_K` whose target entry
//! (the image under the accurate task) is a strict row maximum. All indices
//! are 0-based here; user-facing output adds one.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::TIE_TOL;

const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTask {
    /// `steps[k - 1][i]` is the image of pattern `i` under step `k`.
    steps: Vec<Vec<usize>>,
    pattern_count: usize,
}

fn check_permutation(p: &[usize]) -> Result<()> {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || seen[v] {
            return Err(Error::InvalidPermutation(format!("{p:?} is not a bijection")));
        }
        seen[v] = true;
    }
    Ok(())
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

impl ReasoningTask {
    pub fn new(steps: Vec<Vec<usize>>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::InvalidParameter("a task needs at least one step".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::InvalidPermutation("empty permutation".into()));
        }
        for s in &steps {
            if s.len() != n {
                return Err(Error::InvalidPermutation("steps act on different sizes".into()));
            }
            check_permutation(s)?;
        }
        Ok(Self {
            steps,
            pattern_count: n,
        })
    }

    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_count
    }

    /// The permutation realizing step `k` (1-based).
    pub fn step(&self, k: usize) -> &[usize] {
        &self.steps[k - 1]
    }

    pub fn steps(&self) -> &[Vec<usize>] {
        &self.steps
    }

    /// `f_upto ∘ … ∘ f_1 (i)`; `upto = 0` is the identity.
    pub fn apply(&self, i: usize, upto: usize) -> Result<usize> {
        if upto > self.k() {
            return Err(Error::StepOutOfRange {
                step: upto,
                max: self.k(),
            });
        }
        if i >= self.pattern_count {
            return Err(Error::InvalidParameter(format!("pattern {} out of range", i + 1)));
        }
        Ok(self.steps[..upto].iter().fold(i, |x, s| s[x]))
    }

    /// Pattern `z` with `apply(z, upto) = j`.
    pub fn preimage(&self, j: usize, upto: usize) -> Result<usize> {
        if upto > self.k() {
            return Err(Error::StepOutOfRange {
                step: upto,
                max: self.k(),
            });
        }
        Ok(self.steps[..upto]
            .iter()
            .rev()
            .fold(j, |x, s| s.iter().position(|&v| v == x).expect("bijection")))
    }

    /// `[z_0, z_1, …, z_K]` for `z_0 = i`.
    pub fn trajectory(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k() + 1);
        out.push(i);
        for s in &self.steps {
            let last = *out.last().unwrap();
            out.push(s[last]);
        }
        out
    }
}

/// Task with `f_k(p_i) = p_{(i + k) mod N}` for a permutation `p` of `[N]`.
pub fn make_cyclic_task(perm: &[usize], k: usize) -> Result<ReasoningTask> {
    check_permutation(perm)?;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be positive".into()));
    }
    let n = perm.len();
    let steps = (1..=k)
        .map(|step| {
            let mut s = vec![0; n];
            for i in 0..n {
                s[perm[i]] = perm[(i + step) % n];
            }
            s
        })
        .collect();
    ReasoningTask::new(steps)
}

pub fn random_cyclic_task<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<ReasoningTask> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    make_cyclic_task(&perm, k)
}

/// Where each row of a generated step matrix puts its runner-up mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunnerUpLayout {
    /// A uniformly random column other than the target.
    #[default]
    Random,
    /// Columns chosen so that every single-error trajectory of input `i`
    /// ends at one fixed wrong label `w(i)`. With enough runner-up mass this
    /// makes the most probable K-step output wrong for every input.
    Coherent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    task: ReasoningTask,
    a: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    /// Per step and row, columns by decreasing mass (ties by index).
    order: Vec<Vec<Vec<usize>>>,
}

fn check_stochastic(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().any(|&v| !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&v)) {
            return Err(Error::InvalidTransition(format!(
                "{what} row {} has entries outside [0, 1]",
                i + 1
            )));
        }
        if (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidTransition(format!(
                "{what} row {} sums to {}",
                i + 1,
                row.sum()
            )));
        }
    }
    Ok(())
}

/// Ordered product `A_1 · A_2 · … · A_K`.
pub fn k_step_matrix(a: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = a
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no step matrices".into()))?;
    let n = first.nrows();
    for (k, m) in a.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "A_{} is {}x{}, expected {n}x{n}",
                k + 1,
                m.nrows(),
                m.ncols()
            )));
        }
    }
    Ok(a[1..].iter().fold(first.clone(), |acc, m| acc * m))
}

impl TransitionModel {
    pub fn new(task: ReasoningTask, a: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.len() != task.k() {
            return Err(Error::ShapeMismatch(format!(
                "{} step matrices for a {}-step task",
                a.len(),
                task.k()
            )));
        }
        let b = k_step_matrix(&a)?;
        let n = task.pattern_count();
        if b.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "step matrices are {}x{}, task acts on {n} patterns",
                b.nrows(),
                b.ncols()
            )));
        }
        for (k, m) in a.iter().enumerate() {
            check_stochastic(m, &format!("A_{}", k + 1))?;
            let target = task.step(k + 1);
            for i in 0..n {
                let t = m[(i, target[i])];
                if (0..n).any(|j| j != target[i] && m[(i, j)] >= t) {
                    return Err(Error::InvalidTransition(format!(
                        "A_{} row {}: target column {} is not a strict maximum",
                        k + 1,
                        i + 1,
                        target[i] + 1
                    )));
                }
            }
        }
        check_stochastic(&b, "B")?;
        let order = a
            .iter()
            .map(|m| {
                (0..n)
                    .map(|i| {
                        let mut cols: Vec<usize> = (0..n).collect();
                        cols.sort_by(|&x, &y| m[(i, y)].total_cmp(&m[(i, x)]).then(x.cmp(&y)));
                        cols
                    })
                    .collect()
            })
            .collect();
        Ok(Self { task, a, b, order })
    }

    pub fn task(&self) -> &ReasoningTask {
        &self.task
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn size(&self) -> usize {
        self.b.nrows()
    }

    /// Step matrix `A_k` (1-based).
    pub fn step_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.a[k - 1]
    }

    pub fn step_matrices(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Sample the step-`k` output index given the step input `i`.
    ///
    /// Inverse-CDF over the columns sorted by decreasing mass, so one uniform
    /// draw lands on the target whenever `u < a` regardless of how the rest of
    /// the row is spread. Sweeps over `rho` share draws and stay coupled.
    pub fn sample_step<R: Rng + ?Sized>(&self, k: usize, i: usize, rng: &mut R) -> usize {
        sample_row(&self.a[k - 1], i, &self.order[k - 1][i], rng)
    }

    /// Sample a full erroneous chain `[i, y_1, …, y_K]`.
    pub fn sample_chain<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k() + 1);
        out.push(i);
        for k in 1..=self.k() {
            let prev = *out.last().unwrap();
            out.push(self.sample_step(k, prev, rng));
        }
        out
    }

    pub fn is_deterministic(&self) -> bool {
        self.a
            .iter()
            .all(|m| m.iter().all(|&v| v == 0.0 || v == 1.0))
    }

    pub fn stats(&self) -> Result<TransitionStats> {
        let (rho, rho_o) = primacy(self)?;
        Ok(TransitionStats {
            tau: tau_trajectory(self),
            tau_o: tau_io(&self.b),
            rho,
            rho_o,
            condition1: check_condition1(self)?,
        })
    }
}

fn sample_row<R: Rng + ?Sized>(m: &DMatrix<f64>, i: usize, order: &[usize], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &j in order {
        acc += m[(i, j)];
        if u < acc {
            return j;
        }
    }
    // Rounding: fall back to the last column with positive mass.
    order.iter().rev().copied().find(|&j| m[(i, j)] > 0.0).unwrap_or(order[0])
}

fn random_derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

/// Runner-up column for every (step, row) pair.
fn runner_up_columns<R: Rng + ?Sized>(
    task: &ReasoningTask,
    layout: RunnerUpLayout,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let n = task.pattern_count();
    let k = task.k();
    match layout {
        RunnerUpLayout::Random => (1..=k)
            .map(|step| {
                let target = task.step(step);
                (0..n)
                    .map(|i| {
                        let r = rng.random_range(0..n - 1);
                        if r >= target[i] {
                            r + 1
                        } else {
                            r
                        }
                    })
                    .collect()
            })
            .collect(),
        RunnerUpLayout::Coherent => {
            let full: Vec<usize> = (0..n).map(|i| task.apply(i, k).unwrap()).collect();
            let shift = random_derangement(n, rng);
            let wrong: Vec<usize> = (0..n).map(|i| full[shift[i]]).collect();
            let inverses: Vec<Vec<usize>> = task.steps().iter().map(|s| invert(s)).collect();
            (1..=k)
                .map(|step| {
                    let mut g = vec![0; n];
                    for i in 0..n {
                        let x = task.apply(i, step - 1).unwrap();
                        // Undo steps K..step+1 from the wrong label.
                        let y = (step..k).rev().fold(wrong[i], |acc, s| inverses[s][acc]);
                        g[x] = y;
                    }
                    g
                })
                .collect()
        }
    }
}

/// Equal per-step correct probabilities whose product is `tau`.
pub fn correct_probs_for_tau(tau: f64, k: usize) -> Vec<f64> {
    vec![tau.powf(1.0 / k as f64); k]
}

/// Generate step matrices with target mass `a_k`, runner-up mass
/// `(1 − ρ)·a_k`, and the remainder spread evenly over the other columns.
pub fn make_transition_model<R: Rng + ?Sized>(
    task: &ReasoningTask,
    correct_prob: &[f64],
    rho_target: f64,
    layout: RunnerUpLayout,
    rng: &mut R,
) -> Result<TransitionModel> {
    let n = task.pattern_count();
    let k = task.k();
    if correct_prob.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} correct probabilities for a {k}-step task",
            correct_prob.len()
        )));
    }
    if !(rho_target > 0.0 && rho_target <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho target {rho_target} outside (0, 1]"
        )));
    }
    if n < 2 && rho_target < 1.0 {
        return Err(Error::DegenerateSize(format!(
            "M' = {n} leaves no runner-up column"
        )));
    }
    let mut a_mats = Vec::with_capacity(k);
    let runner = if n >= 2 {
        runner_up_columns(task, layout, rng)
    } else {
        vec![vec![0; n]; k]
    };
    for (step, &a) in correct_prob.iter().enumerate() {
        if !(a > 1.0 / n as f64 && a <= 1.0) {
            return Err(Error::InfeasiblePrimacy(format!(
                "a_{} = {a} outside (1/M', 1]",
                step + 1
            )));
        }
        let runner_mass = (1.0 - rho_target) * a;
        let rest = 1.0 - a - runner_mass;
        if rest < -1e-12 {
            return Err(Error::InfeasiblePrimacy(format!(
                "a_{} = {a} with rho = {rho_target} leaves negative mass {rest}",
                step + 1
            )));
        }
        let rest = rest.max(0.0);
        let tail = if n > 2 {
            rest / (n - 2) as f64
        } else if rest > 1e-12 {
            return Err(Error::InfeasiblePrimacy(format!(
                "M' = {n}: mass {rest} has no column to go to"
            )));
        } else {
            0.0
        };
        if tail > runner_mass + 1e-15 {
            return Err(Error::InfeasiblePrimacy(format!(
                "tail mass {tail} exceeds runner-up mass {runner_mass} at step {}",
                step + 1
            )));
        }
        let target = task.step(step + 1);
        let mut m = DMatrix::from_element(n, n, tail);
        for i in 0..n {
            m[(i, target[i])] = a;
            if n >= 2 {
                m[(i, runner[step][i])] = runner_mass;
            }
        }
        a_mats.push(m);
    }
    TransitionModel::new(task.clone(), a_mats)
}

/// Result of [`fit_violating_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: TransitionModel,
    /// Per-step correct probability used.
    pub correct_prob: f64,
    /// Step primacy used by the generator.
    pub rho: f64,
}

/// Search a grid of (correct probability, step primacy) pairs for a
/// [`RunnerUpLayout::Coherent`] model that violates Condition 1 and whose
/// `(τ_o, ρ_o)` is closest to the targets. The layout is drawn once from
/// `rng` and shared by every grid point.
pub fn fit_violating_model<R: Rng + ?Sized>(
    task: &ReasoningTask,
    tau_o_target: f64,
    rho_o_target: f64,
    grid: usize,
    rng: &mut R,
) -> Result<FittedModel> {
    let n = task.pattern_count();
    if n < 2 || grid < 2 {
        return Err(Error::InvalidParameter(
            "fitting needs at least two patterns and two grid points".into(),
        ));
    }
    let layout_seed: u64 = rng.random();
    let lo = 1.0 / n as f64;
    let mut best: Option<(f64, FittedModel)> = None;
    for ia in 1..=grid {
        let a = lo + (1.0 - lo) * ia as f64 / (grid + 1) as f64;
        for ir in 1..grid {
            let rho = ir as f64 / grid as f64;
            let mut r = crate::rng::seeded(layout_seed);
            let Ok(model) = make_transition_model(task, &vec![a; task.k()], rho, RunnerUpLayout::Coherent, &mut r) else {
                continue;
            };
            let Ok(st) = model.stats() else { continue };
            if st.condition1.holds {
                continue;
            }
            let dist = (st.tau_o - tau_o_target).powi(2) + (st.rho_o - rho_o_target).powi(2);
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((
                    dist,
                    FittedModel {
                        model,
                        correct_prob: a,
                        rho,
                    },
                ));
            }
        }
    }
    best.map(|(_, f)| f).ok_or_else(|| {
        Error::InfeasiblePrimacy("no grid point violates Condition 1".into())
    })
}

/// Deterministic model whose step matrices are the task's permutation matrices.
pub fn deterministic_model(task: &ReasoningTask) -> TransitionModel {
    let n = task.pattern_count();
    let a = (1..=task.k())
        .map(|step| {
            let target = task.step(step);
            DMatrix::from_fn(n, n, |i, j| if target[i] == j { 1.0 } else { 0.0 })
        })
        .collect();
    TransitionModel::new(task.clone(), a).expect("permutation matrices are valid")
}

/// `min_i Π_k A_k[z_{k-1}(i), z_k(i)]` along the accurate trajectories.
pub fn tau_trajectory(model: &TransitionModel) -> f64 {
    (0..model.size())
        .map(|i| {
            let traj = model.task.trajectory(i);
            (1..=model.k())
                .map(|k| model.a[k - 1][(traj[k - 1], traj[k])])
                .product::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `min_i max_j B[i, j]`.
pub fn tau_io(b: &DMatrix<f64>) -> f64 {
    b.row_iter()
        .map(|row| row.max())
        .fold(f64::INFINITY, f64::min)
}

/// Largest ρ with `A_k[i, j*] ≥ A_k[i, j] / (1 − ρ)` for all `j ≠ j*`, and
/// the same quantity for `B` with `j*` its row argmax. Rows without competing
/// mass report 1.
pub fn primacy(model: &TransitionModel) -> Result<(f64, f64)> {
    let n = model.size();
    let mut worst: f64 = 0.0;
    for k in 1..=model.k() {
        let m = &model.a[k - 1];
        let target = model.task.step(k);
        for i in 0..n {
            let t = m[(i, target[i])];
            if t == 0.0 {
                return Err(Error::DivisionDegenerate {
                    step: k,
                    row: i + 1,
                    col: target[i] + 1,
                });
            }
            for j in (0..n).filter(|&j| j != target[i]) {
                worst = worst.max(m[(i, j)] / t);
            }
        }
    }
    let mut worst_o: f64 = 0.0;
    for row in model.b.row_iter() {
        let (star, &top) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty row");
        if top == 0.0 {
            return Err(Error::InvalidTransition("B has an all-zero row".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            if j != star {
                worst_o = worst_o.max(v / top);
            }
        }
    }
    Ok((1.0 - worst, 1.0 - worst_o))
}

/// Outcome of the Condition-1 check: most probable K-step output equals the
/// accurate label for every input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition1 {
    pub holds: bool,
    /// 0-based indices of violating input patterns.
    pub violating: Vec<usize>,
}

pub fn check_condition1(model: &TransitionModel) -> Result<Condition1> {
    let mut violating = Vec::new();
    for (i, row) in model.b.row_iter().enumerate() {
        let (star, &top) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty row");
        if row
            .iter()
            .enumerate()
            .any(|(j, &v)| j != star && (top - v).abs() <= TIE_TOL)
        {
            return Err(Error::AmbiguousCondition { row: i + 1 });
        }
        if star != model.task.apply(i, model.k())? {
            violating.push(i);
        }
    }
    Ok(Condition1 {
        holds: violating.is_empty(),
        violating,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub tau: f64,
    pub tau_o: f64,
    pub rho: f64,
    pub rho_o: f64,
    pub condition1: Condition1,
}

/// Sample-size lower bounds with a caller-supplied constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    /// `c · α⁻¹` training context examples.
    TrainContext { alpha: f64 },
    /// `c · (α'·τ·ρ)⁻² · log M` CoT testing examples.
    CotTest {
        alpha_prime: f64,
        tau: f64,
        rho: f64,
        m: usize,
    },
    /// `c · (α'·τ_o·ρ_o)⁻² · log M` ICL testing examples.
    IclTest {
        alpha_prime: f64,
        tau_o: f64,
        rho_o: f64,
        m: usize,
    },
}

impl Bound {
    pub fn evaluate(&self, constant: f64) -> Result<f64> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        let c = positive(constant, "constant")?;
        match *self {
            Bound::TrainContext { alpha } => Ok(c / positive(alpha, "alpha")?),
            Bound::CotTest {
                alpha_prime,
                tau,
                rho,
                m,
            } => {
                let prod = positive(alpha_prime, "alpha'")? * positive(tau, "tau")? * positive(rho, "rho")?;
                let m = positive(m as f64, "M")?;
                Ok(c * m.ln() / (prod * prod))
            }
            Bound::IclTest {
                alpha_prime,
                tau_o,
                rho_o,
                m,
            } => {
                let prod = positive(alpha_prime, "alpha'")?
                    * positive(tau_o, "tau_o")?
                    * positive(rho_o, "rho_o")?;
                let m = positive(m as f64, "M")?;
                Ok(c * m.ln() / (prod * prod))
            }
        }
    }
}

/// The two-step, two-pattern model of the worked example: `f_1` is the
/// identity, `f_2` swaps the patterns.
pub fn example1_model() -> TransitionModel {
    let task = ReasoningTask::new(vec![vec![0, 1], vec![1, 0]]).expect("valid task");
    let a1 = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.4, 0.6]);
    let a2 = DMatrix::from_row_slice(2, 2, &[0.4, 0.6, 0.8, 0.2]);
    TransitionModel::new(task, vec![a1, a2]).expect("valid model")
}
