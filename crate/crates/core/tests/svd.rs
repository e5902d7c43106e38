mod common;

use common::{
    max_abs_diff, oracle_deviation, orthonormality_error, random_matrix, relative_reconstruction_error, rng, sign_fix,
    ORACLE_TOLERANCE,
};
use otf_adapt::nn::Matrix;
use otf_adapt::spectral::{select_bases, svd_spectrum, window_basis_input};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn agrees_with_nalgebra_on_100_random_windows() {
    let mut r = rng(2024);
    for case in 0..100 {
        let f = r.gen_range(1..=80);
        let t = r.gen_range(1..=60);
        let s = random_matrix(&mut r, f, t, 3.0);
        let dec = svd_spectrum(&s).unwrap();
        let dev = oracle_deviation(&s, &dec);
        assert!(dev < ORACLE_TOLERANCE, "case {case} ({f}x{t}): deviation {dev:e}");
    }
}

#[test]
fn log_mel_like_window_matches_oracle() {
    // Rank-deficient: every frame is one of two spectral shapes.
    let mut r = rng(5);
    let a: Vec<f64> = (0..40).map(|_| r.gen_range(-8.0..0.0)).collect();
    let b: Vec<f64> = (0..40).map(|_| r.gen_range(-8.0..0.0)).collect();
    let mut s = Matrix::zeros(40, 12);
    for t in 0..12 {
        let (w1, w2) = (1.0 + t as f64 * 0.1, (t % 3) as f64);
        for i in 0..40 {
            s.set(i, t, w1 * a[i] + w2 * b[i]);
        }
    }
    let dec = svd_spectrum(&s).unwrap();
    assert_eq!(dec.rank(), 2);
    assert!(oracle_deviation(&s, &dec) < ORACLE_TOLERANCE);
    let bases = select_bases(&dec, 3).unwrap();
    assert_eq!(bases.valid, vec![true, true, false]);
    assert_eq!(bases.sigma[2], 0.0);
}

#[test]
fn repeated_calls_are_bit_identical() {
    let mut r = rng(11);
    let s = random_matrix(&mut r, 30, 17, 1.0);
    assert_eq!(svd_spectrum(&s).unwrap(), svd_spectrum(&s).unwrap());
    let lm = random_matrix(&mut r, 50, 30, 4.0);
    assert_eq!(
        window_basis_input(&lm, 3..20, 2).unwrap(),
        window_basis_input(&lm, 3..20, 2).unwrap()
    );
    assert!(window_basis_input(&lm, 10..10, 2).is_err());
    assert!(window_basis_input(&lm, 40..51, 2).is_err());
}

fn window() -> impl Strategy<Value = Matrix> {
    (1usize..=40, 1usize..=30, any::<u64>()).prop_map(|(f, t, seed)| random_matrix(&mut rng(seed), f, t, 5.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn left_and_right_vectors_are_orthonormal(s in window()) {
        let dec = svd_spectrum(&s).unwrap();
        let r = dec.rank();
        prop_assert!(orthonormality_error(&dec.u, dec.u.cols()) < 1e-6);
        prop_assert!(orthonormality_error(&dec.vt.transpose(), r) < 1e-6);
    }

    #[test]
    fn reconstruction_is_exact(s in window()) {
        let dec = svd_spectrum(&s).unwrap();
        prop_assert!(relative_reconstruction_error(&s, &dec) < 1e-6);
    }

    #[test]
    fn singular_values_are_sorted_and_nonnegative(s in window()) {
        let dec = svd_spectrum(&s).unwrap();
        prop_assert!(dec.sigma.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(dec.sigma.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dominant_entry_of_every_basis_is_positive(s in window()) {
        let dec = svd_spectrum(&s).unwrap();
        for k in 0..dec.rank() {
            let mut c = dec.u.column(k);
            let before = c.clone();
            sign_fix(&mut c);
            prop_assert_eq!(c, before);
        }
    }

    #[test]
    fn scaling_scales_sigma_and_keeps_bases(s in window(), c in 0.01f64..100.0) {
        let a = svd_spectrum(&s).unwrap();
        let b = svd_spectrum(&s.scale(c)).unwrap();
        let top = a.sigma[0].max(1e-300);
        for (x, y) in a.sigma.iter().zip(&b.sigma) {
            prop_assert!((c * x - y).abs() <= 1e-9 * c * top);
        }
        for k in 0..a.rank() {
            let gap = a.sigma.iter().enumerate().filter(|(j, _)| *j != k)
                .map(|(_, v)| (v - a.sigma[k]).abs()).fold(f64::INFINITY, f64::min);
            if gap > 1e-3 * top {
                prop_assert!(max_abs_diff(&a.u.column(k), &b.u.column(k)) < 1e-7);
            }
        }
    }

    #[test]
    fn transposed_window_swaps_factors(s in window()) {
        let a = svd_spectrum(&s).unwrap();
        let b = svd_spectrum(&s.transpose()).unwrap();
        for (x, y) in a.sigma.iter().zip(&b.sigma) {
            prop_assert!((x - y).abs() < 1e-9 * a.sigma[0].max(1.0));
        }
    }
}
