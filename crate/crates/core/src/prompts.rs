//! Prompt assembly for training, CoT testing and ICL testing.
//!
//! A prompt is a `2·d × L` matrix. Each column stacks an input token over an
//! output token; the last column is the query, whose lower half is zero.
//! Column metadata records the step (1-based), pattern identities and the
//! example the column came from, so diagnostics never have to recover them
//! from noisy vectors.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{PatternBasis, NOISE_BOUND};
use crate::tasks::{ReasoningTask, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Training,
    CotTest,
    IclTest,
}

impl PromptKind {
    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Training => "training",
            PromptKind::CotTest => "cot_test",
            PromptKind::IclTest => "icl_test",
        }
    }

    /// Pattern set the prompt's tokens are drawn from.
    pub fn pattern_set(self) -> PatternSet {
        match self {
            PromptKind::Training => PatternSet::Trr,
            _ => PatternSet::Tsr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternSet {
    Trr,
    Tsr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    /// Context example index; `None` for the query block.
    pub example: Option<usize>,
    /// Reasoning step, 1-based.
    pub step: usize,
    /// Pattern identity of the input token; `None` for zero-padded columns.
    pub in_pattern: Option<usize>,
    /// Pattern identity of the output token; `None` when the lower half is zero.
    pub out_pattern: Option<usize>,
    pub is_query: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    columns: DMatrix<f64>,
    meta: Vec<ColumnMeta>,
    query_step: usize,
    kind: PromptKind,
    k: usize,
}

/// Number of examples realizing a fraction `alpha` of `l` exactly: `⌈α·l⌉`.
pub fn matching_count(alpha: f64, l: usize) -> usize {
    // Guard against products like 0.7 * 10 = 7.000000000000001.
    ((alpha * l as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Patterns for the `l` context examples: exactly `matching_count` equal to
/// `query`, the rest uniform over the other patterns, in random order.
fn example_inputs<R: Rng + ?Sized>(
    n: usize,
    query: usize,
    l: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let matched = matching_count(alpha, l).min(l);
    if matched < l && n < 2 {
        return Err(Error::InvalidParameter(
            "non-matching examples need at least two patterns".into(),
        ));
    }
    let mut xs = vec![query; matched];
    for _ in matched..l {
        let r = rng.random_range(0..n - 1);
        xs.push(if r >= query { r + 1 } else { r });
    }
    xs.shuffle(rng);
    Ok(xs)
}

struct Builder {
    dim: usize,
    columns: Vec<f64>,
    meta: Vec<ColumnMeta>,
}

impl Builder {
    fn new(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            columns: Vec::with_capacity(capacity * 2 * dim),
            meta: Vec::with_capacity(capacity),
        }
    }

    fn push(
        &mut self,
        upper: Option<DVectorView<'_, f64>>,
        lower: Option<DVectorView<'_, f64>>,
        meta: ColumnMeta,
    ) {
        for half in [upper, lower] {
            match half {
                Some(v) => self.columns.extend(v.iter()),
                None => self.columns.extend(std::iter::repeat_n(0.0, self.dim)),
            }
        }
        self.meta.push(meta);
    }

    fn finish(self, kind: PromptKind, k: usize, query_step: usize) -> Prompt {
        let l = self.meta.len();
        Prompt {
            columns: DMatrix::from_vec(2 * self.dim, l, self.columns),
            meta: self.meta,
            query_step,
            kind,
            k,
        }
    }
}

fn check_alpha(alpha: f64, name: &str) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {alpha} outside (0, 1]")))
    }
}

/// Training prompt for query input `z_0 = query_pattern` at step `k`, and its
/// label `z_k`. Examples follow the task exactly.
pub fn build_training_prompt<R: Rng + ?Sized>(
    basis: &PatternBasis,
    task: &ReasoningTask,
    query_pattern: usize,
    k: usize,
    l_tr: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<(Prompt, usize)> {
    let kk = task.k();
    if k == 0 || k > kk {
        return Err(Error::StepOutOfRange { step: k, max: kk });
    }
    if kk > basis.k() {
        return Err(Error::DimensionInfeasible(format!(
            "{kk}-step task but only {} positional encodings",
            basis.k()
        )));
    }
    if l_tr == 0 {
        return Err(Error::InvalidParameter("l_tr must be positive".into()));
    }
    check_alpha(alpha, "alpha")?;
    let n = task.pattern_count();
    if n != basis.m() {
        return Err(Error::ShapeMismatch(format!(
            "task acts on {n} patterns, basis has M = {}",
            basis.m()
        )));
    }
    let xs = example_inputs(n, query_pattern, l_tr, alpha, rng)?;
    let mut b = Builder::new(basis.dim(), l_tr * kk + k);
    for (s, &x) in xs.iter().enumerate() {
        let chain = task.trajectory(x);
        for j in 1..=kk {
            b.push(
                Some(basis.trr(chain[j - 1])),
                Some(basis.trr(chain[j])),
                ColumnMeta {
                    example: Some(s),
                    step: j,
                    in_pattern: Some(chain[j - 1]),
                    out_pattern: Some(chain[j]),
                    is_query: false,
                },
            );
        }
    }
    let z = task.trajectory(query_pattern);
    for j in 1..k {
        b.push(
            Some(basis.trr(z[j - 1])),
            Some(basis.trr(z[j])),
            ColumnMeta {
                example: None,
                step: j,
                in_pattern: Some(z[j - 1]),
                out_pattern: Some(z[j]),
                is_query: false,
            },
        );
    }
    b.push(
        Some(basis.trr(z[k - 1])),
        None,
        ColumnMeta {
            example: None,
            step: k,
            in_pattern: Some(z[k - 1]),
            out_pattern: None,
            is_query: true,
        },
    );
    Ok((b.finish(PromptKind::Training, kk, k), z[k]))
}

fn check_test_inputs(
    basis: &PatternBasis,
    model: &TransitionModel,
    query_pattern: usize,
    l_ts: usize,
    alpha_prime: f64,
    noise_level: f64,
) -> Result<()> {
    if l_ts == 0 {
        return Err(Error::InvalidParameter("l_ts must be positive".into()));
    }
    check_alpha(alpha_prime, "alpha'")?;
    if !(0.0..=NOISE_BOUND).contains(&noise_level) {
        return Err(Error::NoiseBound { level: noise_level });
    }
    if model.size() != basis.m_prime() {
        return Err(Error::ShapeMismatch(format!(
            "transition model acts on {} patterns, basis has M' = {}",
            model.size(),
            basis.m_prime()
        )));
    }
    if model.k() > basis.k() {
        return Err(Error::DimensionInfeasible(format!(
            "{}-step model but only {} positional encodings",
            model.k(),
            basis.k()
        )));
    }
    if query_pattern >= basis.m_prime() {
        return Err(Error::InvalidParameter(format!(
            "query pattern {} out of range",
            query_pattern + 1
        )));
    }
    Ok(())
}

/// CoT testing prompt: erroneous chains sampled from the step matrices, every
/// context token noisy, the query a clean TSR pattern.
pub fn build_cot_test_prompt<R: Rng + ?Sized>(
    basis: &PatternBasis,
    model: &TransitionModel,
    query_pattern: usize,
    l_ts: usize,
    alpha_prime: f64,
    noise_level: f64,
    rng: &mut R,
) -> Result<Prompt> {
    check_test_inputs(basis, model, query_pattern, l_ts, alpha_prime, noise_level)?;
    let kk = model.k();
    let xs = example_inputs(model.size(), query_pattern, l_ts, alpha_prime, rng)?;
    let mut b = Builder::new(basis.dim(), l_ts * kk + 1);
    for (s, &x) in xs.iter().enumerate() {
        let chain = model.sample_chain(x, rng);
        let tokens = chain
            .iter()
            .map(|&i| basis.add_noise(i, noise_level, rng).map(|t| t.vector))
            .collect::<Result<Vec<_>>>()?;
        for j in 1..=kk {
            b.push(
                Some(tokens[j - 1].as_view()),
                Some(tokens[j].as_view()),
                ColumnMeta {
                    example: Some(s),
                    step: j,
                    in_pattern: Some(chain[j - 1]),
                    out_pattern: Some(chain[j]),
                    is_query: false,
                },
            );
        }
    }
    b.push(
        Some(basis.tsr(query_pattern)),
        None,
        ColumnMeta {
            example: None,
            step: 1,
            in_pattern: Some(query_pattern),
            out_pattern: None,
            is_query: true,
        },
    );
    Ok(b.finish(PromptKind::CotTest, kk, 1))
}

/// ICL testing prompt: each example keeps only its input and final output;
/// the remaining `K − 1` columns of each block are zero.
pub fn build_icl_test_prompt<R: Rng + ?Sized>(
    basis: &PatternBasis,
    model: &TransitionModel,
    query_pattern: usize,
    l_ts: usize,
    alpha_prime: f64,
    noise_level: f64,
    rng: &mut R,
) -> Result<Prompt> {
    check_test_inputs(basis, model, query_pattern, l_ts, alpha_prime, noise_level)?;
    let kk = model.k();
    let xs = example_inputs(model.size(), query_pattern, l_ts, alpha_prime, rng)?;
    let mut b = Builder::new(basis.dim(), l_ts * kk + 1);
    for (s, &x) in xs.iter().enumerate() {
        let chain = model.sample_chain(x, rng);
        let y = chain[kk];
        let xin = basis.add_noise(x, noise_level, rng)?.vector;
        let yout = basis.add_noise(y, noise_level, rng)?.vector;
        b.push(
            Some(xin.as_view()),
            Some(yout.as_view()),
            ColumnMeta {
                example: Some(s),
                step: 1,
                in_pattern: Some(x),
                out_pattern: Some(y),
                is_query: false,
            },
        );
        for j in 2..=kk {
            b.push(
                None,
                None,
                ColumnMeta {
                    example: Some(s),
                    step: j,
                    in_pattern: None,
                    out_pattern: None,
                    is_query: false,
                },
            );
        }
    }
    b.push(
        Some(basis.tsr(query_pattern)),
        None,
        ColumnMeta {
            example: None,
            step: 1,
            in_pattern: Some(query_pattern),
            out_pattern: None,
            is_query: true,
        },
    );
    Ok(b.finish(PromptKind::IclTest, kk, 1))
}

/// Prompt columns with positional encodings added; the last column is the query.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionedPrompt {
    pub tokens: DMatrix<f64>,
}

impl PositionedPrompt {
    pub fn len(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.ncols() == 0
    }

    pub fn context_len(&self) -> usize {
        self.tokens.ncols().saturating_sub(1)
    }

    pub fn query(&self) -> DVectorView<'_, f64> {
        self.tokens.column(self.tokens.ncols() - 1)
    }
}

impl Prompt {
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn query_step(&self) -> usize {
        self.query_step
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    /// Number of reasoning steps of the task the prompt was built for.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn query_meta(&self) -> &ColumnMeta {
        self.meta.last().expect("prompt has a query column")
    }

    /// `p̃_i = p_i + c_{step(i)}` for every column, query included.
    pub fn add_positional(&self, basis: &PatternBasis) -> PositionedPrompt {
        let mut tokens = self.columns.clone();
        for (i, m) in self.meta.iter().enumerate() {
            tokens.column_mut(i).axpy(1.0, &basis.pos_enc(m.step), 1.0);
        }
        PositionedPrompt { tokens }
    }

    /// CoT update `P_k → P_{k+1}`: the current query column becomes
    /// `(v_{k−1}; v_k)` and a fresh query `(v_k; 0)` is appended.
    pub fn append_query_step(
        &mut self,
        basis: &PatternBasis,
        v_prev: DVectorView<'_, f64>,
        v_new: DVectorView<'_, f64>,
    ) -> Result<()> {
        if self.kind != PromptKind::CotTest {
            return Err(Error::PromptKind {
                expected: PromptKind::CotTest.name(),
                got: self.kind.name(),
            });
        }
        if self.query_step >= self.k {
            return Err(Error::ReasoningComplete(self.query_step));
        }
        let d = basis.dim();
        let last = self.columns.ncols() - 1;
        let new_pattern = basis.tsr_of(v_new)?;
        {
            let mut col = self.columns.column_mut(last);
            col.rows_mut(0, d).copy_from(&v_prev);
            col.rows_mut(d, d).copy_from(&v_new);
        }
        let prev_pattern = basis.tsr_of(v_prev)?;
        let meta = self.meta.last_mut().expect("query column");
        meta.is_query = false;
        meta.in_pattern = Some(prev_pattern);
        meta.out_pattern = Some(new_pattern);

        let mut fresh = DVector::zeros(2 * d);
        fresh.rows_mut(0, d).copy_from(&v_new);
        let cols = std::mem::replace(&mut self.columns, DMatrix::zeros(0, 0));
        self.columns = cols.insert_column(last + 1, 0.0);
        self.columns.column_mut(last + 1).copy_from(&fresh);
        self.query_step += 1;
        self.meta.push(ColumnMeta {
            example: None,
            step: self.query_step,
            in_pattern: Some(new_pattern),
            out_pattern: None,
            is_query: true,
        });
        Ok(())
    }

    /// Debug dump: one line per column with step, patterns (1-based) and four
    /// leading vector entries.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let fmt_pat = |p: Option<usize>| p.map_or_else(|| "-".to_string(), |v| (v + 1).to_string());
        for (i, m) in self.meta.iter().enumerate() {
            let col = self.columns.column(i);
            let head: Vec<String> = col.iter().take(4).map(|v| format!("{v:+.4}")).collect();
            let _ = writeln!(
                out,
                "{:>4} step={} ex={} in={} out={}{} [{}]",
                i + 1,
                m.step,
                m.example.map_or_else(|| "q".to_string(), |e| (e + 1).to_string()),
                fmt_pat(m.in_pattern),
                fmt_pat(m.out_pattern),
                if m.is_query { " query" } else { "" },
                head.join(", ")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{attach_tsr_basis, make_trr_basis};
    use crate::rng;
    use crate::tasks::{
        deterministic_model, make_transition_model, random_cyclic_task, RunnerUpLayout,
    };

    fn setup() -> (PatternBasis, ReasoningTask) {
        let basis = attach_tsr_basis(make_trr_basis(30, 20, 3, 7).unwrap(), 10, 1).unwrap();
        let task = random_cyclic_task(20, 3, &mut rng::seeded(3)).unwrap();
        (basis, task)
    }

    #[test]
    fn matching_count_is_exact_ceiling() {
        assert_eq!(matching_count(0.4, 25), 10);
        assert_eq!(matching_count(0.7, 10), 7);
        assert_eq!(matching_count(0.8, 50), 40);
        assert_eq!(matching_count(0.41, 10), 5);
        assert_eq!(matching_count(0.01, 1), 1);
    }

    #[test]
    fn training_prompt_shape_and_labels() {
        let (basis, task) = setup();
        let mut r = rng::seeded(9);
        let (p, label) = build_training_prompt(&basis, &task, 4, 2, 20, 0.4, &mut r).unwrap();
        assert_eq!(p.len(), 20 * 3 + 2);
        assert_eq!(label, task.apply(4, 2).unwrap());
        let matched = p
            .meta()
            .iter()
            .filter(|m| m.example.is_some() && m.step == 1 && m.in_pattern == Some(4))
            .count();
        assert_eq!(matched, 8);
        let q = p.query_meta();
        assert!(q.is_query && q.step == 2);
        assert!(p.columns().column(p.len() - 1).rows(30, 30).iter().all(|&v| v == 0.0));
        assert_eq!(p.meta().iter().filter(|m| m.is_query).count(), 1);
        // Chaining: lower half of step j equals upper half of step j + 1.
        for s in 0..20 {
            for j in 0..2 {
                let c = s * 3 + j;
                assert_eq!(
                    p.columns().column(c).rows(30, 30),
                    p.columns().column(c + 1).rows(0, 30)
                );
            }
        }
    }

    #[test]
    fn training_prompt_forced_match() {
        let (basis, task) = setup();
        let mut r = rng::seeded(0);
        let (p, _) = build_training_prompt(&basis, &task, 6, 3, 1, 1.0, &mut r).unwrap();
        let traj = task.trajectory(6);
        for j in 0..3 {
            assert_eq!(p.meta()[j].in_pattern, Some(traj[j]));
            assert_eq!(p.meta()[j].out_pattern, Some(traj[j + 1]));
        }
    }

    #[test]
    fn training_prompt_errors() {
        let (basis, task) = setup();
        let mut r = rng::seeded(0);
        assert!(build_training_prompt(&basis, &task, 0, 0, 5, 0.4, &mut r).is_err());
        assert!(build_training_prompt(&basis, &task, 0, 4, 5, 0.4, &mut r).is_err());
        assert!(build_training_prompt(&basis, &task, 0, 1, 5, 0.0, &mut r).is_err());
        assert!(build_training_prompt(&basis, &task, 0, 1, 5, 1.5, &mut r).is_err());
    }

    #[test]
    fn cot_prompt_composition() {
        let (basis, _) = setup();
        let mut r = rng::seeded(2);
        let task = random_cyclic_task(10, 3, &mut r).unwrap();
        let model =
            make_transition_model(&task, &[0.8; 3], 0.8, RunnerUpLayout::Random, &mut r).unwrap();
        let p = build_cot_test_prompt(&basis, &model, 3, 50, 0.8, 0.2, &mut r).unwrap();
        assert_eq!(p.len(), 50 * 3 + 1);
        let matched = p
            .meta()
            .iter()
            .filter(|m| m.step == 1 && !m.is_query && m.in_pattern == Some(3))
            .count();
        assert_eq!(matched, 40);
        assert_eq!(p.columns().column(p.len() - 1).rows(0, 30), basis.tsr(3));
        for (i, m) in p.meta().iter().enumerate().filter(|(_, m)| !m.is_query) {
            let col = p.columns().column(i);
            assert_eq!(basis.tsr_of(col.rows(0, 30)).unwrap(), m.in_pattern.unwrap());
            assert_eq!(basis.tsr_of(col.rows(30, 30)).unwrap(), m.out_pattern.unwrap());
            let delta = col.rows(0, 30) - basis.tsr(m.in_pattern.unwrap());
            assert!((delta.norm() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn cot_prompt_clean_deterministic() {
        let (basis, _) = setup();
        let mut r = rng::seeded(2);
        let task = random_cyclic_task(10, 3, &mut r).unwrap();
        let model = deterministic_model(&task);
        let p = build_cot_test_prompt(&basis, &model, 1, 6, 0.5, 0.0, &mut r).unwrap();
        for m in p.meta().iter().filter(|m| !m.is_query) {
            assert_eq!(
                m.out_pattern.unwrap(),
                task.step(m.step)[m.in_pattern.unwrap()]
            );
        }
    }

    #[test]
    fn icl_prompt_layout() {
        let (basis, _) = setup();
        let mut r = rng::seeded(5);
        let task = random_cyclic_task(10, 3, &mut r).unwrap();
        let model = deterministic_model(&task);
        let p = build_icl_test_prompt(&basis, &model, 2, 7, 0.8, 0.2, &mut r).unwrap();
        assert_eq!(p.len(), 7 * 3 + 1);
        for s in 0..7 {
            let m = &p.meta()[s * 3];
            assert_eq!(m.out_pattern.unwrap(), task.apply(m.in_pattern.unwrap(), 3).unwrap());
            for j in 1..3 {
                assert!(p.columns().column(s * 3 + j).iter().all(|&v| v == 0.0));
                assert_eq!(p.meta()[s * 3 + j].step, j + 1);
            }
        }
    }

    #[test]
    fn positional_encoding_is_additive() {
        let (basis, task) = setup();
        let mut r = rng::seeded(1);
        let (p, _) = build_training_prompt(&basis, &task, 0, 3, 4, 0.5, &mut r).unwrap();
        let pos = p.add_positional(&basis);
        for (i, m) in p.meta().iter().enumerate() {
            let c = basis.pos_enc(m.step);
            assert!((pos.tokens.column(i).dot(&c) - 1.0).abs() < 1e-12);
            let stripped = pos.tokens.column(i) - c;
            assert!((stripped - p.columns().column(i)).amax() < 1e-15);
        }
        // Same pattern and label parts: same-step product exceeds the
        // different-step product by exactly one.
        let a = pos.tokens.column(0);
        let same_upper = basis.lift(basis.trr(p.meta()[0].in_pattern.unwrap()));
        let same = &same_upper + basis.pos_enc(1);
        let diff = &same_upper + basis.pos_enc(2);
        assert!((a.dot(&same) - a.dot(&diff) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn append_query_step_updates_layout() {
        let (basis, _) = setup();
        let mut r = rng::seeded(8);
        let task = random_cyclic_task(10, 3, &mut r).unwrap();
        let model = deterministic_model(&task);
        let mut p = build_cot_test_prompt(&basis, &model, 0, 4, 1.0, 0.0, &mut r).unwrap();
        let traj = task.trajectory(0);
        p.append_query_step(&basis, basis.tsr(traj[0]), basis.tsr(traj[1])).unwrap();
        assert_eq!(p.len(), 4 * 3 + 2);
        assert_eq!(p.query_step(), 2);
        p.append_query_step(&basis, basis.tsr(traj[1]), basis.tsr(traj[2])).unwrap();
        assert_eq!(p.len(), 4 * 3 + 3);
        assert!(matches!(
            p.append_query_step(&basis, basis.tsr(traj[2]), basis.tsr(traj[3])),
            Err(Error::ReasoningComplete(3))
        ));
        // The query block now matches a training-style block built directly.
        for j in 0..2 {
            let m = &p.meta()[12 + j];
            assert_eq!(m.in_pattern, Some(traj[j]));
            assert_eq!(m.out_pattern, Some(traj[j + 1]));
            assert_eq!(m.step, j + 1);
            let col = p.columns().column(12 + j);
            assert_eq!(col.rows(0, 30), basis.tsr(traj[j]));
            assert_eq!(col.rows(30, 30), basis.tsr(traj[j + 1]));
        }
        let q = p.query_meta();
        assert!(q.is_query && q.step == 3 && q.in_pattern == Some(traj[2]));
    }

    #[test]
    fn append_rejects_other_kinds() {
        let (basis, task) = setup();
        let mut r = rng::seeded(1);
        let (mut p, _) = build_training_prompt(&basis, &task, 0, 1, 2, 0.5, &mut r).unwrap();
        let v = basis.tsr(0).into_owned();
        assert!(matches!(
            p.append_query_step(&basis, v.as_view(), v.as_view()),
            Err(Error::PromptKind { .. })
        ));
    }

    #[test]
    fn dump_has_one_line_per_column() {
        let (basis, task) = setup();
        let mut r = rng::seeded(1);
        let (p, _) = build_training_prompt(&basis, &task, 0, 2, 2, 0.5, &mut r).unwrap();
        let text = p.dump();
        assert_eq!(text.lines().count(), p.len());
        assert!(text.lines().last().unwrap().contains("query"));
    }
}
