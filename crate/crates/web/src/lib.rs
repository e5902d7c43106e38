//! Browser bindings for three views of the library: synthesizing a speaker's
//! token as a log-Mel spectrogram, decomposing a window of it into spectral
//! bases, and stepping the streaming online average over segmented input.
//!
//! Each binding wraps a plain Rust function so the logic can be tested
//! natively; the wrappers only translate errors into JavaScript exceptions.

use otf_adapt::corpus::{make_profiles, make_vocabulary, synth, CorpusConfig};
use otf_adapt::frontend::{compute_logmel, Waveform};
use otf_adapt::io::derive_seed;
use otf_adapt::nn::{Matrix, OnlineAvgState};
use otf_adapt::spectral::{select_bases, svd_spectrum};
use otf_adapt::{Error, Result};
use wasm_bindgen::prelude::*;

const FRAME_LEN_MS: f64 = 25.0;
const FRAME_SHIFT_MS: f64 = 10.0;
const SEGMENT_SECS: f64 = 0.25;

/// A `frames x bins` log-Mel matrix stored row-major.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
    speaker: String,
    severity: f64,
}

#[wasm_bindgen]
impl Spectrogram {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Row-major values, one row per frame.
    #[wasm_bindgen(getter)]
    pub fn data(&self) -> Vec<f64> {
        self.data.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn speaker(&self) -> String {
        self.speaker.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn severity(&self) -> f64 {
        self.severity
    }
}

impl Spectrogram {
    fn matrix(&self) -> Result<Matrix> {
        Matrix::from_vec(self.frames, self.bins, self.data.clone())
    }
}

/// Top spectral bases of one analysis window.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Bases {
    bins: usize,
    sigma: Vec<f64>,
    vectors: Vec<f64>,
}

#[wasm_bindgen]
impl Bases {
    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Singular values, largest first; zero past the window's rank.
    #[wasm_bindgen(getter)]
    pub fn sigma(&self) -> Vec<f64> {
        self.sigma.clone()
    }

    /// `d` basis vectors of length `bins`, concatenated.
    #[wasm_bindgen(getter)]
    pub fn vectors(&self) -> Vec<f64> {
        self.vectors.clone()
    }
}

fn demo_corpus() -> CorpusConfig {
    CorpusConfig::default()
}

/// Speaker ids of the demo corpus for `seed`, most severe group first.
pub fn speaker_ids(seed: u32) -> Result<Vec<String>> {
    Ok(make_profiles(&demo_corpus(), seed as u64)?
        .into_iter()
        .map(|p| p.id)
        .collect())
}

/// Renders `token` for speaker number `speaker` and returns its log-Mel
/// spectrogram with `n_mels` bins.
pub fn synthesize_spectrogram(seed: u32, speaker: usize, token: usize, n_mels: usize) -> Result<Spectrogram> {
    let cfg = demo_corpus();
    let profiles = make_profiles(&cfg, seed as u64)?;
    let profile = profiles
        .get(speaker)
        .ok_or_else(|| Error::Usage(format!("speaker index {speaker} out of range 0..{}", profiles.len())))?;
    let vocab = make_vocabulary(cfg.tokens, seed as u64);
    let template = vocab
        .get(token)
        .ok_or_else(|| Error::Usage(format!("token {token} out of range 0..{}", vocab.len())))?;
    let samples = synth::render(
        template,
        profile,
        SEGMENT_SECS,
        cfg.sample_rate,
        derive_seed(seed as u64, &format!("demo/{}/{token}", profile.id)),
    );
    let lm = compute_logmel(
        &Waveform::new(samples, cfg.sample_rate)?,
        n_mels,
        FRAME_LEN_MS,
        FRAME_SHIFT_MS,
    )?;
    Ok(Spectrogram {
        frames: lm.frames.rows(),
        bins: lm.frames.cols(),
        data: lm.frames.into_vec(),
        speaker: profile.id.clone(),
        severity: profile.severity,
    })
}

/// Spectral bases of frames `start..start + len` of `spec`.
pub fn window_bases(spec: &Spectrogram, start: usize, len: usize, d: usize) -> Result<Bases> {
    let end = start.saturating_add(len).min(spec.frames);
    if start >= end {
        return Err(Error::Usage(format!(
            "window starting at frame {start} is empty for {} frames",
            spec.frames
        )));
    }
    let window = spec.matrix()?.slice_rows(start, end).transpose();
    let set = select_bases(&svd_spectrum(&window)?, d)?;
    Ok(Bases {
        bins: spec.bins,
        sigma: set.sigma,
        vectors: set.bases.concat(),
    })
}

/// Feeds `values` to a one-dimensional online average in consecutive
/// segments of the given lengths and returns the average after each
/// segment. Zero-length segments leave the state alone and repeat the
/// previous output (NaN before the first frame).
pub fn online_average_trace(values: &[f64], segment_lengths: &[u32], alpha: f64) -> Result<Vec<f64>> {
    let total: usize = segment_lengths.iter().map(|&n| n as usize).sum();
    if total != values.len() {
        return Err(Error::Usage(format!(
            "segment lengths cover {total} frames but {} values were given",
            values.len()
        )));
    }
    let mut state = OnlineAvgState::new(1, alpha)?;
    let mut out = Vec::with_capacity(segment_lengths.len());
    let mut last = f64::NAN;
    let mut at = 0;
    for &n in segment_lengths {
        let n = n as usize;
        let seg = Matrix::from_vec(n, 1, values[at..at + n].to_vec())?;
        if let Some(m) = state.update(&seg)? {
            last = m[0];
        }
        out.push(last);
        at += n;
    }
    Ok(out)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = speakerIds)]
pub fn speaker_ids_js(seed: u32) -> std::result::Result<Vec<String>, JsError> {
    speaker_ids(seed).map_err(js)
}

#[wasm_bindgen(js_name = synthesize)]
pub fn synthesize_js(
    seed: u32,
    speaker: usize,
    token: usize,
    n_mels: usize,
) -> std::result::Result<Spectrogram, JsError> {
    synthesize_spectrogram(seed, speaker, token, n_mels).map_err(js)
}

#[wasm_bindgen(js_name = windowBases)]
pub fn window_bases_js(spec: &Spectrogram, start: usize, len: usize, d: usize) -> std::result::Result<Bases, JsError> {
    window_bases(spec, start, len, d).map_err(js)
}

#[wasm_bindgen(js_name = onlineAverage)]
pub fn online_average_js(
    values: Vec<f64>,
    segment_lengths: Vec<u32>,
    alpha: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    online_average_trace(&values, &segment_lengths, alpha).map_err(js)
}
