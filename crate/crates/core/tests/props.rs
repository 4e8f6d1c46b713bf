//! Property tests for the core invariants that hold for arbitrary inputs.

use proptest::prelude::*;
use wavespk_core::dsp;
use wavespk_core::metrics::{eer, ScoreSet};
use wavespk_core::num_complex::Complex64;
use wavespk_core::scoring::cosine_score;

fn finite_signal(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_ifft_roundtrip(signal in finite_signal(128)) {
        let input: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let back = dsp::ifft(&dsp::fft(&input).unwrap()).unwrap();
        let scale = signal.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in input.iter().zip(&back) {
            prop_assert!((a - b).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn hilbert_pair_is_analytic(signal in prop::collection::vec(-10.0f64..10.0, 2..256)) {
        let im = dsp::hilbert(&signal).unwrap();
        let pair: Vec<Complex64> = signal
            .iter()
            .zip(&im)
            .map(|(&re, &imv)| Complex64::new(re, imv))
            .collect();
        let spec = dsp::fft(&pair).unwrap();
        let n = spec.len();
        let peak = spec.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let upper = n / 2 + 1;
        for bin in &spec[upper..] {
            prop_assert!(bin.norm() <= 1e-9 * peak.max(1e-300));
        }
    }

    #[test]
    fn hilbert_is_linear(
        a in prop::collection::vec(-5.0f64..5.0, 16),
        b in prop::collection::vec(-5.0f64..5.0, 16),
        ca in -3.0f64..3.0,
        cb in -3.0f64..3.0,
    ) {
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect();
        let lhs = dsp::hilbert(&combo).unwrap();
        let ha = dsp::hilbert(&a).unwrap();
        let hb = dsp::hilbert(&b).unwrap();
        for i in 0..16 {
            prop_assert!((lhs[i] - (ca * ha[i] + cb * hb[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn eer_invariant_under_affine_maps(
        targets in prop::collection::vec(-5.0f64..5.0, 2..40),
        nontargets in prop::collection::vec(-5.0f64..5.0, 2..40),
        scale in 0.01f64..50.0,
        offset in -10.0f64..10.0,
    ) {
        let build = |t: &[f64], n: &[f64]| {
            let mut scores = t.to_vec();
            scores.extend_from_slice(n);
            let mut labels = vec![true; t.len()];
            labels.extend(vec![false; n.len()]);
            ScoreSet::new(scores, labels).unwrap()
        };
        let base = eer(&build(&targets, &nontargets)).unwrap();
        let t2: Vec<f64> = targets.iter().map(|v| scale * v + offset).collect();
        let n2: Vec<f64> = nontargets.iter().map(|v| scale * v + offset).collect();
        let mapped = eer(&build(&t2, &n2)).unwrap();
        prop_assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn cosine_invariant_under_positive_scaling(
        a in prop::collection::vec(-5.0f64..5.0, 4..16),
        scale_a in 0.001f64..100.0,
        scale_b in 0.001f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().rev().map(|v| v + 0.5).collect();
        prop_assume!(a.iter().any(|&v| v != 0.0));
        prop_assume!(b.iter().any(|&v| v != 0.0));
        let s0 = cosine_score(&a, &b).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| v * scale_a).collect();
        let b2: Vec<f64> = b.iter().map(|v| v * scale_b).collect();
        prop_assert!((cosine_score(&a2, &b2).unwrap() - s0).abs() < 1e-12);
    }
}
