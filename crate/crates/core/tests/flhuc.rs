mod common;

use common::{am_config, random_matrix, rng, ToyWorld};
use nalgebra::{DMatrix, SymmetricEigen};
use otf_adapt::flhuc::{
    fit_affine, pca_fit, stream_predictions, train_regression, AffineMap, OnTheFlyGenerator, PcaModel,
    RegressionConfig, RegressionStream,
};
use otf_adapt::lhuc::{sat_train, SatConfig, SpeakerData};
use otf_adapt::nn::matrix::{cosine, dot};
use otf_adapt::nn::Matrix;
use otf_adapt::Error;
use proptest::prelude::*;
use rand::Rng;

const PCA_ORACLE_TOLERANCE: f64 = 1e-8;

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Squared reconstruction error of every row after projecting onto the
/// model's components.
fn reconstruction_error(p: &PcaModel, rows: &[Vec<f64>]) -> f64 {
    rows.iter()
        .map(|r| {
            let back = p.reconstruct(&p.project(r));
            r.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum()
}

/// Brute-force covariance eigendecomposition: eigenvalues (descending) and
/// the matching eigenvectors.
fn covariance_eigen(rows: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let (n, d) = (rows.len(), rows[0].len());
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n - 1) as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn oracle_reconstruction_error(rows: &[Vec<f64>], pairs: &[(f64, Vec<f64>)], k: usize) -> f64 {
    let d = rows[0].len();
    let n = rows.len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    rows.iter()
        .map(|r| {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(a, m)| a - m).collect();
            let mut back = vec![0.0; d];
            for (_, v) in &pairs[..k] {
                let w = dot(v, &c);
                back.iter_mut().zip(v).for_each(|(b, x)| *b += w * x);
            }
            c.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum()
}

#[test]
fn pca_matches_brute_force_eigensolver() {
    for seed in 0..10 {
        let rows = rows_of(&random_matrix(&mut rng(seed), 10, 40, 1.0));
        let pairs = covariance_eigen(&rows);
        for k in [1, 3, 5, 9] {
            let p = pca_fit(&rows, k).unwrap();
            let got = reconstruction_error(&p, &rows);
            let want = oracle_reconstruction_error(&rows, &pairs, k);
            assert!(
                (got - want).abs() < PCA_ORACLE_TOLERANCE,
                "seed {seed} k {k}: {got} vs {want}"
            );
            for (c, (val, _)) in p.explained.iter().zip(&pairs) {
                assert!(
                    (c - val).abs() < PCA_ORACLE_TOLERANCE,
                    "seed {seed}: variance {c} vs {val}"
                );
            }
            for (i, row) in p.components.iter_rows().enumerate() {
                let align = dot(row, &pairs[i].1).abs();
                assert!((align - 1.0).abs() < 1e-8, "seed {seed} component {i}: |cos| {align}");
            }
        }
    }
}

#[test]
fn pca_sign_convention_makes_peak_positive() {
    let rows = rows_of(&random_matrix(&mut rng(77), 12, 9, 2.0));
    let p = pca_fit(&rows, 4).unwrap();
    for row in p.components.iter_rows() {
        let peak = row
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(peak > 0.0);
    }
}

#[test]
fn pca_input_errors() {
    assert!(matches!(pca_fit(&[vec![1.0, 2.0]], 1), Err(Error::Data(_))));
    assert!(matches!(pca_fit(&[vec![1.0], vec![2.0]], 0), Err(Error::Config(_))));
    assert!(matches!(pca_fit(&[vec![1.0, 2.0], vec![2.0]], 1), Err(Error::Data(_))));
}

fn affine_max_error(a: &AffineMap, w: &Matrix, b: &[f64]) -> f64 {
    let dw =
        a.w.data()
            .iter()
            .zip(w.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
    let db = a.b.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    dw.max(db)
}

#[test]
fn affine_recovers_two_i_plus_one() {
    let mut r = rng(5);
    let k = 4;
    let ys: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..k).map(|_| r.gen_range(-2.0..2.0)).collect())
        .collect();
    let xs: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().map(|v| 2.0 * v + 1.0).collect()).collect();
    let a = fit_affine(&ys, &xs).unwrap();
    let mut two_i = Matrix::zeros(k, k);
    (0..k).for_each(|i| two_i.set(i, i, 2.0));
    assert!(!a.ridge_used);
    assert!(affine_max_error(&a, &two_i, &[1.0; 4]) < 1e-8);
}

#[test]
fn affine_has_zero_residual_when_determined() {
    let mut r = rng(9);
    let (k, d) = (5, 30);
    // k + 1 speakers in general position: exact interpolation is possible.
    let ys: Vec<Vec<f64>> = (0..k + 1)
        .map(|_| (0..k).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let xs: Vec<Vec<f64>> = (0..k + 1)
        .map(|_| (0..d).map(|_| r.gen_range(-3.0..3.0)).collect())
        .collect();
    let a = fit_affine(&ys, &xs).unwrap();
    for (y, x) in ys.iter().zip(&xs) {
        let err = a.apply(y).iter().zip(x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "residual {err}");
    }
}

#[test]
fn affine_degenerate_predictions_give_mean_transform() {
    let ys = vec![vec![0.3, -0.1, 0.7]; 5];
    let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 10.0 - i as f64]).collect();
    let a = fit_affine(&ys, &xs).unwrap();
    assert!(a.ridge_used);
    let out = a.apply(&ys[0]);
    assert!((out[0] - 2.0).abs() < 1e-6 && (out[1] - 8.0).abs() < 1e-6, "{out:?}");
}

fn small_regression(epochs: usize, alpha: f64) -> RegressionConfig {
    RegressionConfig {
        hidden: 16,
        epochs,
        lr: 3e-3,
        alpha,
    }
}

#[test]
fn single_speaker_constant_stream_converges() {
    let stream = RegressionStream {
        speaker: "only".into(),
        segments: vec![Matrix::filled(12, 5, 0.4); 6],
        target: vec![1.5, -0.5, 0.25],
    };
    let (_, trace) = train_regression(&[stream], &small_regression(40, 0.9), 3).unwrap();
    let blocks: Vec<f64> = trace
        .chunks(10)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{blocks:?}");
    assert!(
        trace.last().unwrap() < &(0.05 * trace[0]),
        "{:?}",
        (trace[0], trace.last())
    );
}

#[test]
fn regression_rejects_inconsistent_targets() {
    let seg = Matrix::filled(4, 3, 1.0);
    let a = RegressionStream {
        speaker: "a".into(),
        segments: vec![seg.clone()],
        target: vec![1.0, 2.0],
    };
    let b = RegressionStream {
        speaker: "b".into(),
        segments: vec![seg],
        target: vec![1.0],
    };
    assert!(matches!(
        train_regression(&[a, b], &small_regression(1, 0.9), 0),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        train_regression(&[], &small_regression(1, 0.9), 0),
        Err(Error::Data(_))
    ));
}

fn split_frames(m: &Matrix, len: usize) -> Vec<Matrix> {
    (0..m.rows())
        .step_by(len)
        .map(|s| m.slice_rows(s, (s + len).min(m.rows())))
        .collect()
}

#[test]
fn generator_with_alpha_one_matches_one_big_segment() {
    let frames = random_matrix(&mut rng(12), 90, 6, 1.0);
    let stream = RegressionStream {
        speaker: "g".into(),
        segments: split_frames(&frames, 30),
        target: vec![0.5, -0.5],
    };
    let (tdnn, _) = train_regression(&[stream], &small_regression(2, 1.0), 4).unwrap();
    let affine = AffineMap {
        w: Matrix::identity(2),
        b: vec![0.0; 2],
        ridge_used: false,
    };
    // Splicing looks at neighbouring frames, so compare on hidden frames
    // computed once for the whole utterance and then cut up.
    let hidden = tdnn.hidden_frames(&frames).unwrap();
    let mut state = tdnn.new_state();
    let mut last = None;
    for seg in split_frames(&hidden, 7) {
        last = state.update(&seg).unwrap();
    }
    let mut whole = tdnn.new_state();
    let once = whole.update(&hidden).unwrap().unwrap();
    for (a, b) in last.unwrap().iter().zip(&once) {
        assert!((a - b).abs() < 1e-12);
    }

    let mut g = OnTheFlyGenerator::new(&tdnn, &affine, "g", &[1, 1]).unwrap();
    assert_eq!(g.state().count, 0.0);
    assert!(g.state().sum.iter().all(|&v| v == 0.0));
    let first = g.push_segment(&frames.slice_rows(0, 30)).unwrap().unwrap();
    let mut fresh = tdnn.new_state();
    let m0 = fresh
        .update(&tdnn.hidden_frames(&frames.slice_rows(0, 30)).unwrap())
        .unwrap()
        .unwrap();
    assert_eq!(first.m, m0);
    assert!(matches!(g.push_segment(&Matrix::zeros(3, 2)), Err(Error::Config(_))));
}

fn sat_speakers(world: &ToyWorld, n: u64) -> Vec<SpeakerData> {
    (0..n)
        .map(|s| world.random_speaker(&format!("t{s:02}"), 240, 300 + s))
        .collect()
}

#[test]
fn generated_transforms_approximate_sat_transforms() {
    let world = ToyWorld::new(31);
    let speakers = sat_speakers(&world, 12);
    let sat_cfg = SatConfig {
        rounds: 10,
        batch_size: 32,
        shared_lr: 3e-3,
        transform_lr: 3e-2,
    };
    let sat = sat_train(am_config().build(41).unwrap(), &speakers, &sat_cfg, 5).unwrap();
    let dims = sat.net.lhuc_dims();
    let flat: Vec<Vec<f64>> = speakers.iter().map(|s| sat.transforms[&s.speaker].flatten()).collect();
    let pca = pca_fit(&flat, 4).unwrap();
    let streams: Vec<RegressionStream> = speakers
        .iter()
        .zip(&flat)
        .map(|(s, x)| RegressionStream {
            speaker: s.speaker.clone(),
            segments: split_frames(&s.inputs, 40),
            target: pca.project(x),
        })
        .collect();
    let (tdnn, _) = train_regression(&streams, &small_regression(150, 0.9), 6).unwrap();
    let preds = stream_predictions(&tdnn, &streams).unwrap();
    let ys: Vec<Vec<f64>> = speakers.iter().map(|s| preds[&s.speaker].clone()).collect();
    let affine = fit_affine(&ys, &flat).unwrap();

    let mean_xi: Vec<f64> = (0..flat[0].len())
        .map(|j| flat.iter().map(|f| f[j]).sum::<f64>() / flat.len() as f64)
        .collect();
    let centred = |v: &[f64]| -> Vec<f64> { v.iter().zip(&mean_xi).map(|(a, m)| a - m).collect() };
    let mut identified = 0;
    for (si, s) in speakers.iter().enumerate() {
        let mut g = OnTheFlyGenerator::new(&tdnn, &affine, &s.speaker, &dims).unwrap();
        let mut last = None;
        for seg in &streams[si].segments {
            last = g.push_segment(seg).unwrap();
        }
        let generated = last.unwrap().transform;
        let r_cos = cosine(&generated.amplitudes(), &sat.transforms[&s.speaker].amplitudes());
        assert!(r_cos > 0.7, "{}: cosine {r_cos}", s.speaker);
        let gen_c = centred(&generated.flatten());
        let best = flat
            .iter()
            .enumerate()
            .max_by(|a, b| cosine(&gen_c, &centred(a.1)).total_cmp(&cosine(&gen_c, &centred(b.1))))
            .unwrap()
            .0;
        identified += usize::from(best == si);
    }
    assert!(
        identified >= 9,
        "only {identified} of 12 speakers matched their own transform"
    );
}

proptest! {
    #[test]
    fn components_orthonormal_and_variances_sorted(seed in any::<u64>(), n in 3usize..12, d in 2usize..20, k in 1usize..10) {
        let rows = rows_of(&random_matrix(&mut rng(seed), n, d, 1.0));
        let p = pca_fit(&rows, k).unwrap();
        prop_assert_eq!(p.k(), k.min(n - 1).min(d));
        for i in 0..p.k() {
            for j in 0..p.k() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot(p.components.row(i), p.components.row(j)) - want).abs() < 1e-6);
            }
        }
        prop_assert!(p.explained.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn affine_residual_vanishes_on_affine_data(seed in any::<u64>(), k in 1usize..5, d in 1usize..8) {
        let mut r = rng(seed);
        let w = random_matrix(&mut r, d, k, 2.0);
        let b: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ys: Vec<Vec<f64>> = (0..k + 4).map(|_| (0..k).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let xs: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| w.iter_rows().zip(&b).map(|(row, bi)| dot(row, y) + bi).collect())
            .collect();
        let a = fit_affine(&ys, &xs).unwrap();
        for (y, x) in ys.iter().zip(&xs) {
            let err = a.apply(y).iter().zip(x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-6, "residual {}", err);
        }
    }
}
