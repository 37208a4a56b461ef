//! Randomized structural invariants: spectral identities of the matrix
//! exponential, orthonormality of the thin SVD, unconditional stability of
//! the parametrized generator, stratification of the sampler, and parameter
//! layout roundtrips.

use koopman_core::data::DiffDataset;
use koopman_core::dynamics::lhs_sample;
use koopman_core::linalg::{eigenvalues, matexp, thin_svd, Matrix};
use koopman_core::model::{init_from_dmd, DmdData, NormalizationMode, Normalizer, StableKoopman};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (2..=max_dim).prop_flat_map(|n| {
        prop::collection::vec(-2.0..2.0f64, n * n)
            .prop_map(move |data| Matrix::from_vec(n, n, data))
    })
}

fn stable_generator(max_dim: usize) -> impl Strategy<Value = StableKoopman> {
    (2..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-2.0..2.0f64, d - 1),
        )
            .prop_map(|(sigma, zeta)| StableKoopman::new(sigma, zeta).unwrap())
    })
}

fn trace(a: &Matrix) -> f64 {
    (0..a.rows()).map(|i| a.get(i, i)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn matrix_exponential_satisfies_the_semigroup_law(
        k in stable_generator(6),
        s in 0.0..1.5f64,
        t in 0.0..1.5f64,
    ) {
        let m = k.matrix();
        let whole = matexp(&m.scale(s + t)).unwrap();
        let split = matexp(&m.scale(s)).unwrap().matmul(&matexp(&m.scale(t)).unwrap());
        let err = whole.sub(&split).norm_fro() / (1.0 + whole.norm_fro());
        prop_assert!(err < 1e-10, "semigroup violation {err}");
    }

    #[test]
    fn exponential_determinant_equals_exponential_trace(a in square_matrix(5)) {
        // det e^A = e^{tr A}, with det computed from the spectrum of e^A
        let expa = matexp(&a).unwrap();
        let eigs = eigenvalues(&expa).unwrap();
        let det: Complex64 = eigs.values().iter().product();
        let expected = trace(&a).exp();
        prop_assert!(
            (det.re - expected).abs() <= 1e-7 * expected.abs().max(1.0),
            "det {det} vs e^tr {expected}"
        );
        prop_assert!(det.im.abs() <= 1e-7 * expected.abs().max(1.0));
    }

    #[test]
    fn eigenvalues_are_conjugate_closed_and_sum_to_the_trace(a in square_matrix(6)) {
        let eigs = eigenvalues(&a).unwrap();
        let sum: Complex64 = eigs.values().iter().sum();
        let t = trace(&a);
        prop_assert!((sum.re - t).abs() <= 1e-8 * t.abs().max(1.0));
        prop_assert!(sum.im.abs() <= 1e-8 * (1.0 + t.abs()));
    }

    #[test]
    fn thin_svd_returns_orthonormal_factors(
        (m, n, data) in (2..=10usize, 2..=5usize)
            .prop_flat_map(|(m, n)| {
                prop::collection::vec(-3.0..3.0f64, m * n).prop_map(move |d| (m, n, d))
            })
    ) {
        let a = Matrix::from_vec(m, n, data);
        let svd = thin_svd(&a).unwrap();
        let k = svd.s.len();
        let utu = svd.u.transpose().matmul(&svd.u);
        let vtv = svd.v.transpose().matmul(&svd.v);
        prop_assert!(utu.sub(&Matrix::identity(k)).norm_max() < 1e-9);
        prop_assert!(vtv.sub(&Matrix::identity(k)).norm_max() < 1e-9);
        for w in svd.s.windows(2) {
            prop_assert!(w[0] >= w[1], "singular values out of order");
        }
        let mut recon = svd.u.clone();
        for i in 0..recon.rows() {
            for j in 0..k {
                recon.set(i, j, recon.get(i, j) * svd.s[j]);
            }
        }
        let recon = recon.matmul(&svd.v.transpose());
        prop_assert!(recon.sub(&a).norm_fro() <= 1e-9 * (1.0 + a.norm_fro()));
    }

    #[test]
    fn every_generator_draw_is_stable(k in stable_generator(12)) {
        prop_assert!(k.spectrum().unwrap().max_real() <= 1e-9);
    }

    #[test]
    fn realized_spectra_match_their_targets(k in stable_generator(8)) {
        let target = k.spectrum().unwrap();
        let rebuilt = StableKoopman::from_spectrum(&target).unwrap();
        let sorted = target.sorted();
        let resorted = rebuilt.spectrum().unwrap().sorted();
        for (a, b) in sorted.iter().zip(&resorted) {
            prop_assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn latin_hypercube_fills_every_stratum(
        seed in any::<u64>(),
        n in 2..40usize,
        dim in 1..4usize,
    ) {
        let bounds: Vec<(f64, f64)> = (0..dim).map(|j| (-1.0 - j as f64, 2.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = lhs_sample(&bounds, n, &mut rng).unwrap();
        for j in 0..dim {
            let (lo, hi) = bounds[j];
            let mut hit = vec![false; n];
            for i in 0..n {
                let u = (points.get(i, j) - lo) / (hi - lo);
                prop_assert!((0.0..1.0).contains(&u));
                let stratum = ((u * n as f64) as usize).min(n - 1);
                prop_assert!(!hit[stratum], "stratum {stratum} hit twice in dim {j}");
                hit[stratum] = true;
            }
        }
    }

    #[test]
    fn parameter_layout_roundtrips(seed in any::<u64>(), raw in prop::collection::vec(-2.0..2.0f64, 40)) {
        let states = Matrix::from_fn(12, 2, |i, j| ((i * 2 + j) as f64 * 0.37).sin());
        let derivs = states.scale(-0.5);
        let ds = DiffDataset::new(states.clone(), derivs).unwrap();
        let normalizer = Normalizer::fit(&states, NormalizationMode::PerComponent).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = init_from_dmd(
            DmdData::Derivatives(&ds),
            2,
            normalizer,
            &[2, 4, 2],
            &[2, 4, 2],
            &mut rng,
        )
        .unwrap();
        let mut flat = model.flatten_params();
        for (slot, v) in flat.iter_mut().zip(&raw) {
            *slot = *v;
        }
        model.set_params(&flat);
        prop_assert_eq!(model.flatten_params(), flat);
    }
}
