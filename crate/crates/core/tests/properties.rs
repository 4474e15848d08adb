use nalgebra::DMatrix;
use proptest::prelude::*;

use cotsim::model::random_model;
use cotsim::patterns::{attach_tsr_basis, make_trr_basis};
use cotsim::prompts::{build_cot_test_prompt, build_training_prompt, matching_count};
use cotsim::rng;
use cotsim::tasks::{correct_probs_for_tau, make_transition_model, random_cyclic_task, RunnerUpLayout};

fn permuted(tokens: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = tokens.clone();
    for (dst, &src) in perm.iter().enumerate() {
        out.set_column(dst, &tokens.column(src));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_ignores_context_order(seed in any::<u64>(), l_tr in 1usize..8, scale in 0.1f64..4.0) {
        let mut r = rng::seeded(seed);
        let basis = make_trr_basis(12, 4, 2, seed).unwrap();
        let task = random_cyclic_task(4, 2, &mut r).unwrap();
        let (p, _) = build_training_prompt(&basis, &task, 1, 2, l_tr, 0.5, &mut r).unwrap();
        let model = random_model(12, scale, &mut r);
        let mut pp = p.add_positional(&basis);
        let base = model.forward(&pp).unwrap();

        let l = pp.context_len();
        let mut perm: Vec<usize> = (0..l).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut r);
        let mut full = perm.clone();
        full.push(l);
        pp.tokens = permuted(&pp.tokens, &full);
        let shuffled = model.forward(&pp).unwrap();

        prop_assert!((&base.output - &shuffled.output).amax() < 1e-12);
        for (dst, &src) in perm.iter().enumerate() {
            prop_assert!((shuffled.attn[dst] - base.attn[src]).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_is_a_distribution(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let mut r = rng::seeded(seed);
        let basis = make_trr_basis(10, 5, 3, seed ^ 1).unwrap();
        let task = random_cyclic_task(5, 3, &mut r).unwrap();
        let (p, _) = build_training_prompt(&basis, &task, 0, 3, 6, 0.4, &mut r).unwrap();
        let model = random_model(10, scale, &mut r);
        let f = model.forward(&p.add_positional(&basis)).unwrap();
        prop_assert!(f.attn.iter().all(|a| *a >= 0.0 && a.is_finite()));
        prop_assert!((f.attn.sum() - 1.0).abs() < 1e-12);
        // Outputs are convex combinations of unit-norm (or zero) value parts.
        prop_assert!(f.output.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn bases_are_orthonormal(seed in any::<u64>(), m in 2usize..8, k in 1usize..4, frac in 0.3f64..1.0) {
        let dim = 2 * m.max(k) + 2;
        let m_prime = ((m as f64 * frac).round() as usize).clamp(1, m);
        let basis = make_trr_basis(dim, m, k, seed).unwrap();
        let basis = attach_tsr_basis(basis, m_prime, seed.wrapping_add(1)).unwrap();
        prop_assert!(basis.check_invariants(1e-10).is_ok());
        let g = basis.tsr_matrix().tr_mul(basis.tsr_matrix());
        prop_assert!((g - DMatrix::identity(m_prime, m_prime)).amax() < 1e-10);
    }

    #[test]
    fn noise_keeps_the_pattern_identity(seed in any::<u64>(), level in 0.0f64..0.7) {
        let mut r = rng::seeded(seed);
        let basis = attach_tsr_basis(make_trr_basis(20, 8, 3, seed).unwrap(), 5, seed ^ 7).unwrap();
        let j = (seed % 5) as usize;
        let t = basis.add_noise(j, level, &mut r).unwrap();
        let delta = &t.vector - basis.tsr(j);
        prop_assert!((delta.norm() - level).abs() < 1e-10);
        prop_assert!(basis.tsr_matrix().tr_mul(&delta).amax() < 1e-10);
        prop_assert_eq!(basis.tsr_of(t.vector.as_view()).unwrap(), j);
    }

    #[test]
    fn training_prompts_realize_the_matching_fraction(
        seed in any::<u64>(), l_tr in 1usize..30, alpha in 0.05f64..0.99, step in 1usize..=3,
    ) {
        let mut r = rng::seeded(seed);
        let basis = make_trr_basis(16, 6, 3, seed).unwrap();
        let task = random_cyclic_task(6, 3, &mut r).unwrap();
        let q = (seed % 6) as usize;
        let (p, label) = build_training_prompt(&basis, &task, q, step, l_tr, alpha, &mut r).unwrap();
        let query = p.query_meta().clone();
        prop_assert_eq!(p.query_step(), step);
        prop_assert_eq!(label, task.apply(q, step).unwrap());
        let matched = p
            .meta()
            .iter()
            .filter(|m| !m.is_query && m.step == step && m.in_pattern == query.in_pattern)
            .count();
        prop_assert_eq!(matched, matching_count(alpha, l_tr));
        prop_assert_eq!(matching_count(alpha, l_tr), (alpha * l_tr as f64 - 1e-9).ceil() as usize);
    }

    #[test]
    fn generated_rows_have_requested_shape(seed in any::<u64>(), tau in 0.2f64..0.6, rho in 0.5f64..0.99) {
        let mut r = rng::seeded(seed);
        let task = random_cyclic_task(10, 3, &mut r).unwrap();
        let a = tau.powf(1.0 / 3.0);
        let runner = (1.0 - rho) * a;
        let tail = (1.0 - a - runner) / 8.0;
        let feasible = tail >= 0.0 && tail <= runner;
        let t = make_transition_model(&task, &correct_probs_for_tau(tau, 3), rho, RunnerUpLayout::Random, &mut r);
        if !feasible {
            prop_assert!(matches!(t, Err(cotsim::Error::InfeasiblePrimacy(_))));
            return Ok(());
        }
        let t = t.unwrap();
        for m in t.step_matrices() {
            for row in m.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
        let s = t.stats().unwrap();
        prop_assert!((s.tau - tau).abs() < 1e-9);
        prop_assert!((s.rho - rho).abs() < 1e-9);
    }

    #[test]
    fn cot_prompts_have_one_block_per_example(seed in any::<u64>(), l_ts in 1usize..12) {
        let mut r = rng::seeded(seed);
        let basis = attach_tsr_basis(make_trr_basis(24, 10, 3, seed).unwrap(), 6, seed ^ 3).unwrap();
        let task = random_cyclic_task(6, 3, &mut r).unwrap();
        let t = make_transition_model(&task, &correct_probs_for_tau(0.5, 3), 0.8, RunnerUpLayout::Random, &mut r)
            .unwrap();
        let p = build_cot_test_prompt(&basis, &t, 2, l_ts, 0.8, 0.2, &mut r).unwrap();
        prop_assert_eq!(p.len(), 3 * l_ts + 1);
        prop_assert_eq!(p.query_step(), 1);
        let matched = p
            .meta()
            .iter()
            .filter(|m| !m.is_query && m.step == 1 && m.in_pattern == Some(2))
            .count();
        prop_assert_eq!(matched, matching_count(0.8, l_ts));
    }
}
