//! Log-Mel filterbank features: Hann-windowed power spectrum, HTK-style
//! triangular Mel filters, log with an energy floor.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Waveform;
use crate::nn::Matrix;

pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    /// T x F, one row per frame.
    pub frames: Matrix,
    pub frame_shift_ms: f64,
    pub frame_len_ms: f64,
    /// Energy floor applied before the log.
    pub log_floor: f64,
}

impl LogMelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub n_mels: usize,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            frame_len_ms: 25.0,
            frame_shift_ms: 10.0,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of `n_mels` filters spanning 0..sample_rate/2.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|m| mel_to_hz(top * m as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Number of frames produced for `n_samples` samples.
pub fn frame_count(n_samples: usize, frame_len: usize, frame_shift: usize) -> Option<usize> {
    (n_samples >= frame_len).then(|| (n_samples - frame_len) / frame_shift + 1)
}

/// Reusable analysis state (FFT plan, window, filterbank).
pub struct LogMelExtractor {
    sample_rate: u32,
    frame_len: usize,
    frame_shift: usize,
    n_fft: usize,
    window: Vec<f64>,
    /// Per filter: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
    config: FrontendConfig,
}

impl LogMelExtractor {
    pub fn new(config: FrontendConfig, sample_rate: u32) -> Result<Self> {
        if config.n_mels == 0 {
            return Err(Error::config("n_mels must be positive"));
        }
        if !(config.frame_len_ms > 0.0 && config.frame_shift_ms > 0.0) {
            return Err(Error::config("frame length and shift must be positive"));
        }
        let frame_len = (sample_rate as f64 * config.frame_len_ms / 1000.0).round() as usize;
        let frame_shift = (sample_rate as f64 * config.frame_shift_ms / 1000.0).round() as usize;
        if frame_len == 0 || frame_shift == 0 {
            return Err(Error::config("frame length or shift rounds to zero samples"));
        }
        let n_fft = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (frame_len - 1).max(1) as f64).cos())
            .collect();

        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|m| mel_to_hz(top * m as f64 / (config.n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(config.n_mels);
        for m in 0..config.n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            sample_rate,
            frame_len,
            frame_shift,
            n_fft,
            window,
            filters,
            fft,
            config,
        })
    }

    pub fn config(&self) -> FrontendConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_len_samples(&self) -> usize {
        self.frame_len
    }

    pub fn frame_shift_samples(&self) -> usize {
        self.frame_shift
    }

    pub fn compute(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate() != self.sample_rate {
            return Err(Error::config(format!(
                "extractor configured for {} Hz, waveform is {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        let samples = w.samples();
        let t = frame_count(samples.len(), self.frame_len, self.frame_shift).ok_or(Error::ShortInput {
            needed: self.frame_len,
            got: samples.len(),
        })?;
        let floor_log = DEFAULT_LOG_FLOOR.ln();
        let mut frames = Matrix::zeros(t, self.config.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for i in 0..t {
            let start = i * self.frame_shift;
            let frame = &samples[start..start + self.frame_len];
            for (b, (&s, &win)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(s * win, 0.0);
            }
            buf[self.frame_len..]
                .iter_mut()
                .for_each(|b| *b = Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = frames.row_mut(i);
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                row[m] = if e > DEFAULT_LOG_FLOOR { e.ln() } else { floor_log };
            }
        }
        Ok(LogMelSpectrogram {
            frames,
            frame_shift_ms: self.config.frame_shift_ms,
            frame_len_ms: self.config.frame_len_ms,
            log_floor: DEFAULT_LOG_FLOOR,
        })
    }
}

pub fn compute_logmel(
    w: &Waveform,
    n_mels: usize,
    frame_len_ms: f64,
    frame_shift_ms: f64,
) -> Result<LogMelSpectrogram> {
    LogMelExtractor::new(
        FrontendConfig {
            n_mels,
            frame_len_ms,
            frame_shift_ms,
        },
        w.sample_rate(),
    )?
    .compute(w)
}
