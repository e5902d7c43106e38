//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use otf_adapt::nn::{grad_check, AuxState, LayerSpec, Matrix, Network, OnlineAvgState, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPSILON: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub const LAYER_KINDS: [&str; 8] = [
    "affine",
    "sigmoid",
    "relu",
    "softmax-ce-head",
    "mse-head",
    "lhuc-scale",
    "context-splice",
    "online-average",
];

/// Largest relative gradient error of a small network built around `kind`.
pub fn grad_error(kind: &str, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let (d_in, h, d_out, frames) = (4, 5, 3, 6);
    let x = random_matrix(&mut r, frames, d_in, 1.0);
    let labels: Vec<usize> = (0..frames).map(|_| r.gen_range(0..d_out)).collect();
    let mse_target = |r: &mut ChaCha8Rng, rows| random_matrix(r, rows, d_out, 1.0);
    let affine = |i, o| LayerSpec::Affine { in_dim: i, out_dim: o };
    let check = |layers: Vec<LayerSpec>, target: Target<'_>, aux: AuxState<'_>, input: &Matrix| {
        let net = Network::new(layers, seed).unwrap();
        let rep = grad_check(&net, input, target, GRAD_EPSILON, aux).unwrap();
        assert!(rep.checked > 0);
        rep.max_rel_error
    };
    match kind {
        "affine" | "mse-head" => {
            let t = mse_target(&mut r, frames);
            check(
                vec![affine(d_in, d_out), LayerSpec::MseHead { dim: d_out }],
                Target::Values(&t),
                AuxState::default(),
                &x,
            )
        }
        "sigmoid" | "relu" => {
            let act = if kind == "sigmoid" {
                LayerSpec::Sigmoid { dim: h }
            } else {
                LayerSpec::Relu { dim: h }
            };
            let t = mse_target(&mut r, frames);
            check(
                vec![
                    affine(d_in, h),
                    act,
                    affine(h, d_out),
                    LayerSpec::MseHead { dim: d_out },
                ],
                Target::Values(&t),
                AuxState::default(),
                &x,
            )
        }
        "softmax-ce-head" => check(
            vec![
                affine(d_in, h),
                LayerSpec::Sigmoid { dim: h },
                affine(h, d_out),
                LayerSpec::SoftmaxCeHead { dim: d_out },
            ],
            Target::Classes(&labels),
            AuxState::default(),
            &x,
        ),
        "lhuc-scale" => {
            let xi = vec![(0..h).map(|_| r.gen_range(-2.0..2.0)).collect::<Vec<f64>>()];
            check(
                vec![
                    affine(d_in, h),
                    LayerSpec::Sigmoid { dim: h },
                    LayerSpec::LhucScale { dim: h },
                    affine(h, d_out),
                    LayerSpec::SoftmaxCeHead { dim: d_out },
                ],
                Target::Classes(&labels),
                AuxState::with_lhuc(&xi),
                &x,
            )
        }
        "context-splice" => {
            let t = mse_target(&mut r, frames);
            check(
                vec![
                    LayerSpec::ContextSplice {
                        in_dim: d_in,
                        offsets: vec![-2, 0, 1],
                    },
                    affine(3 * d_in, h),
                    LayerSpec::Sigmoid { dim: h },
                    affine(h, d_out),
                    LayerSpec::MseHead { dim: d_out },
                ],
                Target::Values(&t),
                AuxState::default(),
                &x,
            )
        }
        "online-average" => {
            let mut state = OnlineAvgState::new(h, r.gen_range(0.0..1.0)).unwrap();
            state.update(&random_matrix(&mut r, 4, h, 1.0)).unwrap();
            let t = mse_target(&mut r, 1);
            check(
                vec![
                    affine(d_in, h),
                    LayerSpec::Sigmoid { dim: h },
                    LayerSpec::OnlineAverage { dim: h },
                    affine(h, d_out),
                    LayerSpec::MseHead { dim: d_out },
                ],
                Target::Values(&t),
                AuxState {
                    lhuc: None,
                    online: Some(&state),
                },
                &x,
            )
        }
        other => panic!("unknown layer kind {other}"),
    }
}

/// Small two-group, four-speaker embedding data set: each speaker's windows
/// scatter around a speaker-specific centre.
pub fn toy_embedding_data(seed: u64, in_dim: usize, per_speaker: usize) -> otf_adapt::svr::EmbeddingData {
    let mut r = rng(seed);
    let names: Vec<String> = ["a0", "a1", "b0", "b1"].map(String::from).to_vec();
    let centres: Vec<Vec<f64>> = (0..4)
        .map(|s| {
            (0..in_dim)
                .map(|i| if (i + s) % 4 == 0 { 1.0 } else { 0.0 } + r.gen_range(-0.2..0.2))
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let (mut groups, mut speakers) = (Vec::new(), Vec::new());
    for (s, c) in centres.iter().enumerate() {
        for _ in 0..per_speaker {
            rows.push(c.iter().map(|v| v + r.gen_range(-0.3..0.3)).collect::<Vec<f64>>());
            groups.push(s / 2);
            speakers.push(s);
        }
    }
    otf_adapt::svr::EmbeddingData::new(Matrix::from_rows(&rows).unwrap(), groups, speakers, names, 2).unwrap()
}

pub fn toy_embedding_config(epochs: usize) -> otf_adapt::svr::EmbeddingConfig {
    otf_adapt::svr::EmbeddingConfig {
        hidden: 16,
        shared: 8,
        epochs,
        batch_size: 8,
        lr: 5e-3,
    }
}

/// Splits `n` frames at random points into segments (some possibly empty).
pub fn random_segmentation(r: &mut ChaCha8Rng, n: usize) -> Vec<std::ops::Range<usize>> {
    let mut cuts: Vec<usize> = (0..r.gen_range(0..8)).map(|_| r.gen_range(0..=n)).collect();
    cuts.push(0);
    cuts.push(n);
    cuts.sort_unstable();
    cuts.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Largest gap, over `cases` random sequences and segmentations, between
/// the alpha = 1 online average after each segment and the plain mean of all
/// frames seen so far.
pub fn cumulative_mean_gap(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = r.gen_range(1..60);
        let dim = r.gen_range(1..5);
        let x = random_matrix(&mut r, n, dim, 10.0);
        let mut state = OnlineAvgState::new(dim, 1.0).unwrap();
        for seg in random_segmentation(&mut r, n) {
            let Some(m) = state.update(&x.slice_rows(seg.start, seg.end)).unwrap() else {
                continue;
            };
            let seen = x.slice_rows(0, seg.end);
            for (a, b) in m.iter().zip(seen.column_means()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Largest gap between the alpha = 0 output and the current segment mean.
pub fn history_free_gap(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = r.gen_range(1..40);
        let x = random_matrix(&mut r, n, 3, 10.0);
        let mut state = OnlineAvgState::new(3, 0.0).unwrap();
        for seg in random_segmentation(&mut r, n) {
            if let Some(m) = state.update(&x.slice_rows(seg.start, seg.end)).unwrap() {
                for (a, b) in m.iter().zip(x.slice_rows(seg.start, seg.end).column_means()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    worst
}

/// `m` after a history of `G = 10, N = 5` and a segment summing to 6 over 3
/// frames, with alpha = 0.9.
pub fn worked_substitution() -> f64 {
    let mut s = OnlineAvgState::new(1, 0.9).unwrap();
    s.sum = vec![10.0];
    s.count = 5.0;
    let seg = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
    s.update(&seg).unwrap().unwrap()[0]
}

/// Largest gap between streamed outputs and the closed form
/// `sum_j alpha^(k-j) S_j / sum_j alpha^(k-j) T_j` over random streams.
pub fn geometric_decay_gap(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let alpha: f64 = r.gen_range(0.05..0.95);
        let k = r.gen_range(1..6);
        let segs: Vec<Matrix> = (0..k)
            .map(|_| {
                let rows = r.gen_range(1..7);
                random_matrix(&mut r, rows, 1, 5.0)
            })
            .collect();
        let mut state = OnlineAvgState::new(1, alpha).unwrap();
        let mut last = 0.0;
        for s in &segs {
            last = state.update(s).unwrap().unwrap()[0];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (j, s) in segs.iter().enumerate() {
            let w = alpha.powi((k - 1 - j) as i32);
            num += w * s.data().iter().sum::<f64>();
            den += w * s.rows() as f64;
        }
        worst = worst.max((last - num / den).abs());
    }
    worst
}

pub const DIM: usize = 6;
pub const CLASSES: usize = 4;

/// Frame classifier used by the adaptation tests.
pub fn am_config() -> otf_adapt::am::AmConfig {
    otf_adapt::am::AmConfig {
        base_dim: DIM,
        aux_dim: 0,
        hidden_layers: 2,
        hidden_dim: 24,
        classes: CLASSES,
        epochs: 0,
        batch_size: 32,
        lr: 3e-3,
    }
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    let u: f64 = r.gen_range(1e-12..1.0);
    let v: f64 = r.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Class-conditional Gaussian frames seen through a speaker-specific
/// per-dimension gain and offset.
pub struct ToyWorld {
    pub centres: Vec<Vec<f64>>,
}

impl ToyWorld {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let centres = (0..CLASSES)
            .map(|_| (0..DIM).map(|_| 1.5 * gauss(&mut r)).collect())
            .collect();
        Self { centres }
    }

    pub fn speaker(
        &self,
        name: &str,
        gain: &[f64],
        offset: &[f64],
        frames: usize,
        seed: u64,
    ) -> otf_adapt::lhuc::SpeakerData {
        let mut r = rng(seed);
        let mut rows = Vec::with_capacity(frames);
        let mut labels = Vec::with_capacity(frames);
        for t in 0..frames {
            let c = t % CLASSES;
            rows.push(
                (0..DIM)
                    .map(|i| gain[i] * (self.centres[c][i] + 0.6 * gauss(&mut r)) + offset[i])
                    .collect::<Vec<f64>>(),
            );
            labels.push(c);
        }
        otf_adapt::lhuc::SpeakerData {
            speaker: name.to_owned(),
            inputs: Matrix::from_rows(&rows).unwrap(),
            labels,
        }
    }

    pub fn random_speaker(&self, name: &str, frames: usize, seed: u64) -> otf_adapt::lhuc::SpeakerData {
        let mut r = rng(seed ^ 0x5eed);
        let gain: Vec<f64> = (0..DIM).map(|_| r.gen_range(0.5..1.6)).collect();
        let offset: Vec<f64> = (0..DIM).map(|_| r.gen_range(-1.0..1.0)).collect();
        self.speaker(name, &gain, &offset, frames, seed)
    }
}

pub const ORACLE_TOLERANCE: f64 = 1e-8;

pub fn to_nalgebra(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Flips `v` so its largest-magnitude entry is positive (first of ties).
pub fn sign_fix(v: &mut [f64]) {
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(i) = v.iter().position(|x| x.abs() >= peak * (1.0 - 1e-9)) {
        if v[i] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation from the nalgebra decomposition over singular values
/// and over left vectors whose singular value is well separated.
pub fn oracle_deviation(s: &Matrix, dec: &otf_adapt::spectral::SpectralDecomposition) -> f64 {
    let svd = to_nalgebra(s).svd(true, false);
    let mut pairs: Vec<(f64, Vec<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(k, &sv)| (sv, svd.u.as_ref().unwrap().column(k).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = pairs[0].0.max(1e-300);
    let mut worst: f64 = 0.0;
    for (k, (sv, u_ref)) in pairs.iter().enumerate() {
        worst = worst.max((dec.sigma[k] - sv).abs());
        let gap = pairs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, p)| (p.0 - sv).abs())
            .fold(f64::INFINITY, f64::min);
        if *sv > 1e-6 * top && gap > 1e-3 * top {
            let mut a = dec.u.column(k);
            let mut b = u_ref.clone();
            sign_fix(&mut a);
            sign_fix(&mut b);
            worst = worst.max(max_abs_diff(&a, &b));
        }
    }
    worst
}

pub fn orthonormality_error(u: &Matrix, cols: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..cols {
        for j in 0..cols {
            let d: f64 = (0..u.rows()).map(|r| u.get(r, i) * u.get(r, j)).sum();
            worst = worst.max((d - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

pub fn relative_reconstruction_error(s: &Matrix, dec: &otf_adapt::spectral::SpectralDecomposition) -> f64 {
    let r = dec.reconstruct();
    let diff: f64 = s
        .data()
        .iter()
        .zip(r.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / s.frobenius_norm().max(1e-300)
}
