//! Greedy decoding, chain-of-thought generation, one-shot ICL prediction and
//! Monte-Carlo estimates of the two generalization errors.

use nalgebra::DVectorView;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::concentration_from_attn;
use crate::model::AttentionModel;
use crate::patterns::{PatternBasis, TIE_TOL};
use crate::prompts::{build_cot_test_prompt, build_icl_test_prompt, Prompt, PromptKind};
use crate::rng;
use crate::tasks::{ReasoningTask, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSet {
    Trr,
    Tsr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub index: usize,
    /// Another candidate was equally close; the lowest index was kept.
    pub tie: bool,
}

/// Nearest candidate pattern to `output`. All candidates have unit norm, so
/// the nearest one maximizes the inner product.
pub fn greedy_decode(
    output: DVectorView<'_, f64>,
    basis: &PatternBasis,
    set: CandidateSet,
) -> Result<Decoded> {
    let cands = match set {
        CandidateSet::Trr => basis.trr_matrix(),
        CandidateSet::Tsr => basis.tsr_matrix(),
    };
    if cands.ncols() == 0 {
        return Err(Error::InvalidParameter("empty candidate set".into()));
    }
    let scores = cands.tr_mul(&output);
    let best = scores.imax();
    let top = scores[best];
    let tol = TIE_TOL * top.abs().max(1.0);
    let index = (0..scores.len())
        .find(|&j| top - scores[j] <= tol)
        .expect("best index qualifies");
    let tie = (0..scores.len()).filter(|&j| top - scores[j] <= tol).count() > 1;
    Ok(Decoded { index, tie })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotResult {
    /// `v_1, …, v_K` as TSR indices.
    pub outputs: Vec<usize>,
    /// Attention on the matching in-step columns at each step.
    pub concentration: Vec<f64>,
    pub correct: Vec<bool>,
    pub ties: Vec<bool>,
    /// Prompt width after the final step.
    pub width: usize,
}

impl CotResult {
    pub fn error(&self) -> f64 {
        let wrong = self.correct.iter().filter(|c| !**c).count();
        wrong as f64 / self.correct.len().max(1) as f64
    }
}

/// Run `K` rounds of forward, decode and prompt update starting from a CoT
/// test prompt at step 1.
pub fn cot_generate(
    model: &AttentionModel,
    prompt: &Prompt,
    basis: &PatternBasis,
    task: &ReasoningTask,
) -> Result<CotResult> {
    if prompt.kind() != PromptKind::CotTest {
        return Err(Error::PromptKind {
            expected: PromptKind::CotTest.name(),
            got: prompt.kind().name(),
        });
    }
    if prompt.query_step() != 1 {
        return Err(Error::InvalidParameter(format!(
            "CoT generation starts at step 1, prompt is at step {}",
            prompt.query_step()
        )));
    }
    let kk = prompt.k();
    let query = prompt
        .query_meta()
        .in_pattern
        .ok_or_else(|| Error::InvalidParameter("query has no pattern".into()))?;
    let mut p = prompt.clone();
    let mut res = CotResult {
        outputs: Vec::with_capacity(kk),
        concentration: Vec::with_capacity(kk),
        correct: Vec::with_capacity(kk),
        ties: Vec::with_capacity(kk),
        width: 0,
    };
    let mut v_prev = basis.tsr(query).into_owned();
    for k in 1..=kk {
        let f = model.forward(&p.add_positional(basis))?;
        let d = greedy_decode(f.output.as_view(), basis, CandidateSet::Tsr)?;
        let reference = p.query_meta().in_pattern.expect("query pattern");
        let ctx = &p.meta()[..p.len() - 1];
        res.concentration
            .push(concentration_from_attn(f.attn.as_slice(), ctx, k, reference).mass);
        res.outputs.push(d.index);
        res.ties.push(d.tie);
        res.correct.push(d.index == task.apply(query, k)?);
        if k < kk {
            let v_new = basis.tsr(d.index).into_owned();
            p.append_query_step(basis, v_prev.as_view(), v_new.as_view())?;
            v_prev = v_new;
        }
    }
    res.width = p.len();
    Ok(res)
}

/// Single forward pass on an ICL test prompt, decoded over the TSR patterns.
pub fn icl_predict(model: &AttentionModel, prompt: &Prompt, basis: &PatternBasis) -> Result<Decoded> {
    if prompt.kind() != PromptKind::IclTest {
        return Err(Error::PromptKind {
            expected: PromptKind::IclTest.name(),
            got: prompt.kind().name(),
        });
    }
    let f = model.forward(&prompt.add_positional(basis))?;
    greedy_decode(f.output.as_view(), basis, CandidateSet::Tsr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_queries: usize,
    pub l_ts: usize,
    pub alpha_prime: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub mean: f64,
    /// `√(p(1 − p)/n)` for the mean `p`.
    pub stderr: f64,
    /// Error rate at each step; a single entry for ICL.
    pub per_step: Vec<f64>,
    pub n_queries: usize,
    pub ties: usize,
}

fn summarize(per_query: &[(Vec<bool>, usize)]) -> ErrorEstimate {
    let n = per_query.len();
    let steps = per_query.first().map_or(0, |q| q.0.len());
    let mut per_step = vec![0.0; steps];
    let mut total = 0.0;
    let mut ties = 0;
    for (wrong, t) in per_query {
        let mut e = 0.0;
        for (s, &w) in wrong.iter().enumerate() {
            if w {
                per_step[s] += 1.0;
                e += 1.0;
            }
        }
        total += e / steps.max(1) as f64;
        ties += t;
    }
    let nf = n.max(1) as f64;
    per_step.iter_mut().for_each(|v| *v /= nf);
    let mean = total / nf;
    ErrorEstimate {
        mean,
        stderr: (mean * (1.0 - mean) / nf).max(0.0).sqrt(),
        per_step,
        n_queries: n,
        ties,
    }
}

/// Average of per-query error indicators. `query(q, rng)` returns the
/// per-step "wrong" flags and the tie count for query `q`, using the stream
/// `(seed, q)`.
pub fn monte_carlo_error<F>(n_queries: usize, seed: u64, query: F) -> Result<ErrorEstimate>
where
    F: Fn(usize, &mut rng::StreamRng) -> Result<(Vec<bool>, usize)> + Sync,
{
    if n_queries == 0 {
        return Err(Error::InvalidParameter("n_queries must be positive".into()));
    }
    let per = (0..n_queries)
        .into_par_iter()
        .map(|q| query(q, &mut rng::stream(seed, &[q as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&per))
}

/// Monte-Carlo CoT error over uniformly drawn TSR queries.
pub fn cot_error(
    model: &AttentionModel,
    basis: &PatternBasis,
    transition: &TransitionModel,
    cfg: &EvalConfig,
) -> Result<ErrorEstimate> {
    monte_carlo_error(cfg.n_queries, cfg.seed, |_, r| {
        let x = r.random_range(0..transition.size());
        let p = build_cot_test_prompt(basis, transition, x, cfg.l_ts, cfg.alpha_prime, cfg.noise, r)?;
        let res = cot_generate(model, &p, basis, transition.task())?;
        let ties = res.ties.iter().filter(|t| **t).count();
        Ok((res.correct.iter().map(|c| !c).collect(), ties))
    })
}

/// Monte-Carlo ICL error on the final-step label.
pub fn icl_error(
    model: &AttentionModel,
    basis: &PatternBasis,
    transition: &TransitionModel,
    cfg: &EvalConfig,
) -> Result<ErrorEstimate> {
    let kk = transition.k();
    monte_carlo_error(cfg.n_queries, cfg.seed, |_, r| {
        let x = r.random_range(0..transition.size());
        let p = build_icl_test_prompt(basis, transition, x, cfg.l_ts, cfg.alpha_prime, cfg.noise, r)?;
        let d = icl_predict(model, &p, basis)?;
        let wrong = d.index != transition.task().apply(x, kk)?;
        Ok((vec![wrong], usize::from(d.tie)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{attach_tsr_basis, make_trr_basis};
    use crate::tasks::{deterministic_model, make_cyclic_task};
    use nalgebra::DVector;
    use rand_distr::StandardNormal;

    fn basis() -> PatternBasis {
        attach_tsr_basis(make_trr_basis(12, 6, 3, 2).unwrap(), 5, 3).unwrap()
    }

    #[test]
    fn exact_pattern_decodes_to_itself() {
        let b = basis();
        let d = greedy_decode(b.tsr(3), &b, CandidateSet::Tsr).unwrap();
        assert_eq!(d, Decoded { index: 3, tie: false });
        let d = greedy_decode(b.trr(4), &b, CandidateSet::Trr).unwrap();
        assert_eq!(d.index, 4);
    }

    #[test]
    fn zero_output_is_a_tie() {
        let b = basis();
        let z = DVector::zeros(12);
        let d = greedy_decode(z.as_view(), &b, CandidateSet::Tsr).unwrap();
        assert_eq!(d, Decoded { index: 0, tie: true });
    }

    #[test]
    fn decode_matches_distance_scan() {
        let b = basis();
        let mut r = rng::seeded(8);
        for _ in 0..1000 {
            let o = DVector::from_fn(12, |_, _| r.sample::<f64, _>(StandardNormal));
            let d = greedy_decode(o.as_view(), &b, CandidateSet::Tsr).unwrap();
            let mut best = (f64::INFINITY, 0);
            for j in 0..5 {
                let dist = 0.5 * (&o - b.tsr(j)).norm_squared();
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            assert_eq!(d.index, best.1);
        }
    }

    #[test]
    fn uniform_model_on_consistent_context() {
        // With a single example, W = 0 attends uniformly to identical labels
        // at each step once the previous outputs are appended.
        let b = basis();
        let task = make_cyclic_task(&[0, 1, 2, 3, 4], 3).unwrap();
        let tm = deterministic_model(&task);
        let mut r = rng::seeded(1);
        let p = build_cot_test_prompt(&b, &tm, 2, 1, 1.0, 0.0, &mut r).unwrap();
        let model = AttentionModel::zeros(12);
        let res = cot_generate(&model, &p, &b, &task).unwrap();
        assert_eq!(res.width, 3 + 3);
        assert_eq!(res.outputs.len(), 3);
        assert_eq!(res.outputs[0], task.apply(2, 1).unwrap());
    }

    #[test]
    fn icl_single_example_with_zero_weights() {
        let b = basis();
        let task = make_cyclic_task(&[0, 1, 2, 3, 4], 3).unwrap();
        let tm = deterministic_model(&task);
        let mut r = rng::seeded(1);
        let p = build_icl_test_prompt(&b, &tm, 4, 1, 1.0, 0.0, &mut r).unwrap();
        let model = AttentionModel::zeros(12);
        let d = icl_predict(&model, &p, &b).unwrap();
        assert_eq!(d.index, task.apply(4, 3).unwrap());
        assert!(!d.tie);
        assert!(matches!(
            cot_generate(&model, &p, &b, &task),
            Err(Error::PromptKind { .. })
        ));
    }

    #[test]
    fn clean_single_example_is_always_right() {
        let b = basis();
        let task = make_cyclic_task(&[0, 1, 2, 3, 4], 1).unwrap();
        let tm = deterministic_model(&task);
        let cfg = EvalConfig {
            n_queries: 200,
            l_ts: 1,
            alpha_prime: 1.0,
            noise: 0.0,
            seed: 4,
        };
        let model = AttentionModel::zeros(12);
        let est = cot_error(&model, &b, &tm, &cfg).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.n_queries, 200);
        assert_eq!(icl_error(&model, &b, &tm, &cfg).unwrap().mean, 0.0);
    }

    #[test]
    fn constant_predictor_error_rate() {
        let m_prime = 10;
        let est = monte_carlo_error(20_000, 6, |_, r| {
            let x = r.random_range(0..m_prime);
            Ok((vec![x != 0], 0))
        })
        .unwrap();
        assert!((est.mean - 0.9).abs() < 4.0 * est.stderr + 1e-3, "{}", est.mean);
    }
}
