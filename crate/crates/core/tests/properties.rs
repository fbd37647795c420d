use active_sampling::estimation::{
    delta_variance, martingale_variance, pool_totals, pooled_design_variance, BatchRecord,
};
use active_sampling::linalg::is_symmetric_psd;
use active_sampling::schemes::{
    draw_multinomial, mix_with_uniform, optimal_probabilities, optimal_scheme_known,
    optimal_scheme_predictive, scheme_from_scores,
};
use active_sampling::{BatchDraw, Characteristic, CharacteristicKind, SamplingScheme};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 2..max_len)
        .prop_filter("some positive score", |c| c.iter().any(|v| *v > 1e-6))
}

fn objective(c: &[f64], pi: &[f64]) -> f64 {
    c.iter().zip(pi).map(|(c, p)| c / p).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scores_are_scale_free(c in scores(20), k in 1e-3f64..1e3) {
        let a = scheme_from_scores(&c, 1e-3).unwrap();
        let scaled: Vec<f64> = c.iter().map(|v| v * k).collect();
        let b = scheme_from_scores(&scaled, 1e-3).unwrap();
        for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_minimizes_the_objective(
        c in prop::collection::vec(0.01f64..10.0, 2..15),
        raw in prop::collection::vec(0.01f64..1.0, 15),
    ) {
        let star = optimal_probabilities(&c).unwrap();
        let other = SamplingScheme::proportional(&raw[..c.len()]).unwrap();
        let best = objective(&c, &star);
        prop_assert!(best <= objective(&c, other.probabilities()) * (1.0 + 1e-10));
    }

    #[test]
    fn floored_schemes_respect_the_floor(c in scores(30), eps in 1e-4f64..0.5) {
        let s = scheme_from_scores(&c, eps).unwrap();
        let floor = eps / c.len() as f64;
        prop_assert!(s.min_probability() >= floor * (1.0 - 1e-12));
        prop_assert!((s.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_covariance_equals_known_responses(
        means in prop::collection::vec(-5.0f64..5.0, 3..20),
        g in -2.0f64..2.0,
    ) {
        prop_assume!(g.abs() > 1e-3 && means.iter().any(|m| m.abs() > 1e-3));
        let y = DMatrix::from_column_slice(means.len(), 1, &means);
        let grad = DVector::from_element(1, g);
        let zeros = vec![DMatrix::zeros(1, 1); means.len()];
        let a = optimal_scheme_predictive(&y, &zeros, &grad, 1e-3).unwrap();
        let b = optimal_scheme_known(&y, &grad, 1e-3).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn large_residual_variance_tends_to_uniform(
        means in prop::collection::vec(-5.0f64..5.0, 3..20),
    ) {
        let n = means.len();
        let y = DMatrix::from_column_slice(n, 1, &means);
        let grad = DVector::from_element(1, 1.0);
        let uniform = SamplingScheme::uniform(n);
        let mut last = f64::INFINITY;
        for v in [1.0, 1e2, 1e4, 1e8] {
            let covs = vec![DMatrix::from_element(1, 1, v); n];
            let s = optimal_scheme_predictive(&y, &covs, &grad, 1e-3).unwrap();
            let tv = s.total_variation(&uniform);
            prop_assert!(tv <= last + 1e-12);
            last = tv;
        }
        prop_assert!(last < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences(u1 in 0.5f64..20.0, u2 in -20.0f64..20.0, n in 1usize..50) {
        for kind in [
            CharacteristicKind::LinearTotal,
            CharacteristicKind::LinearMean,
            CharacteristicKind::HajekMean,
            CharacteristicKind::RatioOfWeightedTotals,
        ] {
            let c = Characteristic::of_kind(kind, n);
            let t: Vec<f64> = if c.dimension() == 1 { vec![u2] } else { vec![u1, u2] };
            let g = c.gradient(&t).unwrap();
            for j in 0..t.len() {
                let h = 1e-6 * t[j].abs().max(1.0);
                let mut hi = t.clone();
                let mut lo = t.clone();
                hi[j] += h;
                lo[j] -= h;
                let fd = (c.eval(&hi).unwrap() - c.eval(&lo).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn delta_ignores_directions_orthogonal_to_the_gradient(
        u1 in 0.5f64..10.0, u2 in -10.0f64..10.0, a in 0.1f64..3.0, rho in -0.99f64..0.99, k in -5.0f64..5.0,
    ) {
        let c = Characteristic::hajek_mean();
        let t = [u1, u2];
        let g = c.gradient(&t).unwrap();
        let b = rho * (a * (a + 1.0)).sqrt();
        let psi = DMatrix::from_row_slice(2, 2, &[a, b, b, a + 1.0]);
        let perp = DVector::from_vec(vec![-g[1], g[0]]);
        let shifted = &psi + &perp * perp.transpose() * k;
        let base = delta_variance(&c, &t, &psi).unwrap();
        let moved = (g.transpose() * &shifted * &g)[(0, 0)];
        prop_assert!((base - moved).abs() <= 1e-10 * base.abs().max(1.0));
    }

    #[test]
    fn variance_estimates_are_psd(seed in 0u64..1000, k in 1usize..6, n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(12, 2, |i, c| if c == 0 { 1.0 } else { (i as f64 * 0.7).sin() * 3.0 });
        let probs: Vec<f64> = (0..12).map(|i| 1.0 + (i % 4) as f64).collect();
        let scheme = SamplingScheme::proportional(&probs).unwrap();
        let recs: Vec<BatchRecord> = (0..k)
            .map(|_| BatchRecord::new(draw_multinomial(&scheme, n, &mut rng), &y).unwrap())
            .collect();
        let design = pooled_design_variance(&recs).unwrap();
        let mart = martingale_variance(&recs).unwrap().covariance;
        for m in [design, mart] {
            prop_assert!((&m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0));
            prop_assert!(is_symmetric_psd(&m, 1e-12));
        }
    }

    #[test]
    fn pooling_is_size_weighted(seed in 0u64..1000, k1 in 1usize..5, k2 in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(8, 1, |i, _| 0.5 + i as f64);
        let scheme = SamplingScheme::uniform(8);
        let make = |rng: &mut ChaCha8Rng, k: usize| -> Vec<BatchRecord> {
            (0..k).map(|j| BatchRecord::new(draw_multinomial(&scheme, 2 + j, rng), &y).unwrap()).collect()
        };
        let a = make(&mut rng, k1);
        let b = make(&mut rng, k2);
        let (ma, mb) = (
            a.iter().map(|r| r.batch_size()).sum::<usize>() as f64,
            b.iter().map(|r| r.batch_size()).sum::<usize>() as f64,
        );
        let joint: Vec<BatchRecord> = a.iter().chain(&b).cloned().collect();
        let expected = (pool_totals(&a).unwrap()[0] * ma + pool_totals(&b).unwrap()[0] * mb) / (ma + mb);
        prop_assert!((pool_totals(&joint).unwrap()[0] - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn mixing_with_uniform_keeps_the_simplex(raw in prop::collection::vec(0.0f64..1.0, 2..20), eps in 0.0f64..0.9) {
        prop_assume!(raw.iter().sum::<f64>() > 0.0);
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if eps > 0.0 {
            let s = mix_with_uniform(&probs, eps).unwrap();
            prop_assert!((s.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn draws_have_the_requested_size(seed in 0u64..1000, n in 1usize..60) {
        let scheme = SamplingScheme::proportional(&[0.1, 3.0, 0.5, 0.0001, 2.0]).unwrap();
        let draw = draw_multinomial(&scheme, n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(draw.counts().iter().map(|&c| c as usize).sum::<usize>(), n);
        let again = BatchDraw::new(draw.counts().to_vec(), &scheme).unwrap();
        prop_assert_eq!(again, draw);
    }
}
