use otf_adapt::frontend::logmel::{mel_center_frequencies, DEFAULT_LOG_FLOOR};
use otf_adapt::frontend::{
    append_deltas, apply_cmvn, compute_logmel, segment_windows, CmvnScope, Waveform, WindowSpec,
};
use otf_adapt::nn::matrix::argmax;
use otf_adapt::nn::Matrix;
use proptest::prelude::*;

mod common;

const RATE: u32 = 16_000;

fn sine(freq: f64, secs: f64) -> Waveform {
    let n = (secs * RATE as f64) as usize;
    let samples = (0..n)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / RATE as f64).sin())
        .collect();
    Waveform::new(samples, RATE).unwrap()
}

#[test]
fn one_point_two_seconds_gives_118_frames() {
    let s = compute_logmel(&sine(440.0, 1.2), 80, 25.0, 10.0).unwrap();
    assert_eq!(s.num_frames(), 118);
    assert_eq!(s.num_bins(), 80);
}

#[test]
fn one_kilohertz_tone_peaks_in_nearest_filter() {
    for n_mels in [23, 40, 80] {
        let centers = mel_center_frequencies(n_mels, RATE);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let s = compute_logmel(&sine(1000.0, 0.5), n_mels, 25.0, 10.0).unwrap();
        for t in 0..s.num_frames() {
            assert_eq!(argmax(s.frames.row(t)), nearest, "n_mels {n_mels}, frame {t}");
        }
    }
}

#[test]
fn silence_sits_exactly_on_the_floor() {
    let w = Waveform::new(vec![0.0; 8000], RATE).unwrap();
    let s = compute_logmel(&w, 40, 25.0, 10.0).unwrap();
    let floor = DEFAULT_LOG_FLOOR.ln();
    assert!(s.frames.data().iter().all(|&v| v == floor));
}

#[test]
fn delta_examples() {
    let constant = Matrix::filled(7, 3, 4.2);
    let d = append_deltas(&constant);
    assert_eq!(d.shape(), (7, 6));
    for t in 0..7 {
        assert_eq!(&d.row(t)[..3], constant.row(t));
        assert!(d.row(t)[3..].iter().all(|&v| v == 0.0));
    }

    let k = 0.75;
    let ramp = Matrix::from_vec(12, 1, (0..12).map(|t| k * t as f64 - 2.0).collect()).unwrap();
    let d = append_deltas(&ramp);
    for t in 2..10 {
        assert!((d.get(t, 1) - k).abs() < 1e-12, "frame {t}: {}", d.get(t, 1));
    }

    let single = Matrix::row_vector(&[1.0, -3.0]);
    let d = append_deltas(&single);
    assert_eq!(d.row(0), &[1.0, -3.0, 0.0, 0.0]);
}

#[test]
fn cmvn_examples() {
    let mut rng = common::rng(3);
    let mut u = common::random_matrix(&mut rng, 50, 4, 2.0);
    for t in 0..50 {
        u.set(t, 2, 9.0);
    }
    let out = &apply_cmvn(&[u], &["s"], CmvnScope::Utterance)[0].0;
    for (j, mean) in out.column_means().iter().enumerate() {
        assert!(mean.abs() < 1e-12, "column {j} mean {mean}");
    }
    assert!(out.column(2).iter().all(|&v| v == 0.0));

    let a = common::random_matrix(&mut rng, 20, 3, 1.0);
    let b = common::random_matrix(&mut rng, 30, 3, 3.0);
    let per_speaker = apply_cmvn(&[a.clone(), b.clone()], &["x", "x"], CmvnScope::Speaker);
    let joined = &apply_cmvn(&[Matrix::vstack(&[a, b]).unwrap()], &["x"], CmvnScope::Utterance)[0].0;
    let stacked = Matrix::vstack(&[per_speaker[0].0.clone(), per_speaker[1].0.clone()]).unwrap();
    for (p, q) in stacked.data().iter().zip(joined.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn window_examples() {
    let w300 = segment_windows(100, 10.0, WindowSpec::millis(300).unwrap()).unwrap();
    assert_eq!(w300, vec![0..30, 30..60, 60..90, 90..100]);
    assert_eq!(segment_windows(118, 10.0, WindowSpec::Utterance).unwrap(), vec![0..118]);
    let w10 = segment_windows(100, 10.0, WindowSpec::millis(10).unwrap()).unwrap();
    assert_eq!(w10.len(), 100);
    assert!(w10.iter().enumerate().all(|(i, r)| *r == (i..i + 1)));
    assert!(segment_windows(0, 10.0, WindowSpec::Utterance).is_err());
    assert!(WindowSpec::millis(25).is_err());
}

proptest! {
    #[test]
    fn windows_partition_the_utterance(frames in 1usize..2000, which in 0usize..6) {
        let spec = WindowSpec::all()[which];
        let ranges = segment_windows(frames, 10.0, spec).unwrap();
        prop_assert_eq!(ranges[0].start, 0);
        prop_assert_eq!(ranges.last().unwrap().end, frames);
        for pair in ranges.windows(2) {
            prop_assert_eq!(pair[0].end, pair[1].start);
        }
        prop_assert!(ranges.iter().all(|r| !r.is_empty()));
        if let WindowSpec::Millis(ms) = spec {
            let len = (ms / 10) as usize;
            prop_assert!(ranges.iter().all(|r| r.len() <= len));
            prop_assert!(ranges[..ranges.len() - 1].iter().all(|r| r.len() == len));
        }
    }

    #[test]
    fn frame_count_follows_the_hop(samples in 400usize..40_000) {
        let w = Waveform::new(vec![0.01; samples], RATE).unwrap();
        let s = compute_logmel(&w, 24, 25.0, 10.0).unwrap();
        prop_assert_eq!(s.num_frames(), (samples - 400) / 160 + 1);
    }
}
