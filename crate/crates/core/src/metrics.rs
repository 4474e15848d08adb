//! Attention diagnostics: concentration on the matching in-step columns and
//! the four-way split of attention mass by pattern and step.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::AttentionModel;
use crate::patterns::PatternBasis;
use crate::prompts::{ColumnMeta, Prompt};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttnBreakdown {
    pub same_pattern_same_step: f64,
    pub same_pattern_diff_step: f64,
    pub diff_pattern_same_step: f64,
    pub diff_pattern_diff_step: f64,
}

impl AttnBreakdown {
    pub fn total(&self) -> f64 {
        self.same_pattern_same_step
            + self.same_pattern_diff_step
            + self.diff_pattern_same_step
            + self.diff_pattern_diff_step
    }

    /// Cell-wise mean; the default (all zero) for an empty slice.
    pub fn mean(parts: &[AttnBreakdown]) -> AttnBreakdown {
        if parts.is_empty() {
            return AttnBreakdown::default();
        }
        let n = parts.len() as f64;
        let mut acc = AttnBreakdown::default();
        for p in parts {
            acc.same_pattern_same_step += p.same_pattern_same_step;
            acc.same_pattern_diff_step += p.same_pattern_diff_step;
            acc.diff_pattern_same_step += p.diff_pattern_same_step;
            acc.diff_pattern_diff_step += p.diff_pattern_diff_step;
        }
        acc.same_pattern_same_step /= n;
        acc.same_pattern_diff_step /= n;
        acc.diff_pattern_same_step /= n;
        acc.diff_pattern_diff_step /= n;
        acc
    }
}

/// Attention mass on the columns with `step = k` and input pattern
/// `reference`. On training prompts this is the `p_n` statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentration {
    pub mass: f64,
    /// No context column belongs to the target set.
    pub empty: bool,
}

/// Split `attn` (one entry per context column) by whether the column's input
/// pattern equals `reference` and whether its step equals `k`. Zero-padded
/// columns count as a different pattern.
pub fn breakdown_from_attn(
    attn: &[f64],
    context: &[ColumnMeta],
    k: usize,
    reference: Option<usize>,
) -> AttnBreakdown {
    let mut b = AttnBreakdown::default();
    for (a, m) in attn.iter().zip(context) {
        let same_pat = reference.is_some() && m.in_pattern == reference;
        let cell = match (same_pat, m.step == k) {
            (true, true) => &mut b.same_pattern_same_step,
            (true, false) => &mut b.same_pattern_diff_step,
            (false, true) => &mut b.diff_pattern_same_step,
            (false, false) => &mut b.diff_pattern_diff_step,
        };
        *cell += a;
    }
    b
}

pub fn concentration_from_attn(
    attn: &[f64],
    context: &[ColumnMeta],
    k: usize,
    reference: usize,
) -> Concentration {
    let mut mass = 0.0;
    let mut empty = true;
    for (a, m) in attn.iter().zip(context) {
        if m.step == k && m.in_pattern == Some(reference) {
            mass += a;
            empty = false;
        }
    }
    Concentration { mass, empty }
}

pub fn concentration(
    model: &AttentionModel,
    basis: &PatternBasis,
    prompt: &Prompt,
    k: usize,
    reference: usize,
) -> Result<Concentration> {
    let f = model.forward(&prompt.add_positional(basis))?;
    let ctx = &prompt.meta()[..prompt.len() - 1];
    Ok(concentration_from_attn(f.attn.as_slice(), ctx, k, reference))
}

pub fn breakdown(
    model: &AttentionModel,
    basis: &PatternBasis,
    prompt: &Prompt,
    k: usize,
    reference: usize,
) -> Result<AttnBreakdown> {
    let f = model.forward(&prompt.add_positional(basis))?;
    let ctx = &prompt.meta()[..prompt.len() - 1];
    Ok(breakdown_from_attn(f.attn.as_slice(), ctx, k, Some(reference)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_model;
    use crate::patterns::make_trr_basis;
    use crate::prompts::build_training_prompt;
    use crate::rng;
    use crate::tasks::random_cyclic_task;

    fn training_prompt(seed: u64) -> (PatternBasis, Prompt) {
        let basis = make_trr_basis(12, 5, 3, 1).unwrap();
        let mut r = rng::seeded(seed);
        let task = random_cyclic_task(5, 3, &mut r).unwrap();
        let (p, _) = build_training_prompt(&basis, &task, 2, 2, 10, 0.4, &mut r).unwrap();
        (basis, p)
    }

    #[test]
    fn uniform_attention_counts_columns() {
        let (basis, p) = training_prompt(3);
        let model = AttentionModel::zeros(basis.dim());
        let q = p.query_meta().in_pattern.unwrap();
        let c = concentration(&model, &basis, &p, 2, q).unwrap();
        let ctx = &p.meta()[..p.len() - 1];
        let m = ctx.iter().filter(|c| c.step == 2 && c.in_pattern == Some(q)).count();
        assert_eq!(m, 4);
        assert!((c.mass - m as f64 / ctx.len() as f64).abs() < 1e-12);
        assert!(!c.empty);
    }

    #[test]
    fn breakdown_partitions_and_matches_tally() {
        for seed in 0..10 {
            let (basis, p) = training_prompt(seed);
            let model = random_model(basis.dim(), 0.5, &mut rng::seeded(seed + 50));
            let q = p.query_meta().in_pattern.unwrap();
            let b = breakdown(&model, &basis, &p, 2, q).unwrap();
            assert!((b.total() - 1.0).abs() < 1e-10);
            let c = concentration(&model, &basis, &p, 2, q).unwrap();
            assert_eq!(c.mass, b.same_pattern_same_step);

            let attn = model.forward(&p.add_positional(&basis)).unwrap().attn;
            let mut cells = [0.0; 4];
            for i in 0..p.len() - 1 {
                let m = &p.meta()[i];
                let idx = usize::from(m.in_pattern != Some(q)) * 2 + usize::from(m.step != 2);
                cells[idx] += attn[i];
            }
            assert!((cells[0] - b.same_pattern_same_step).abs() < 1e-14);
            assert!((cells[1] - b.same_pattern_diff_step).abs() < 1e-14);
            assert!((cells[2] - b.diff_pattern_same_step).abs() < 1e-14);
            assert!((cells[3] - b.diff_pattern_diff_step).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_target_set_is_flagged() {
        let (basis, p) = training_prompt(4);
        let model = AttentionModel::zeros(basis.dim());
        let c = concentration(&model, &basis, &p, 3, basis.m()).unwrap();
        assert!(c.empty);
        assert_eq!(c.mass, 0.0);
    }

    #[test]
    fn mean_of_breakdowns() {
        let a = AttnBreakdown {
            same_pattern_same_step: 1.0,
            ..Default::default()
        };
        let b = AttnBreakdown {
            diff_pattern_diff_step: 1.0,
            ..Default::default()
        };
        let m = AttnBreakdown::mean(&[a, b]);
        assert_eq!(m.same_pattern_same_step, 0.5);
        assert_eq!(m.diff_pattern_diff_step, 0.5);
        assert_eq!(AttnBreakdown::mean(&[]), AttnBreakdown::default());
    }
}
