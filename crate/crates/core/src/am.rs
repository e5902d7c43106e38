//! Frame classifier with per-layer LHUC slots, scoring, score combination
//! and token-level evaluation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lhuc::LhucTransform;
use crate::nn::layer::log_softmax_rows;
use crate::nn::{AuxState, Dataset, LayerSpec, Matrix, Network, OptimState, Targets, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationMode {
    None,
    AuxFeature,
    LhucOffline,
    FLhuc,
    AuxFLhuc,
}

impl AdaptationMode {
    pub fn uses_aux(self) -> bool {
        matches!(self, AdaptationMode::AuxFeature | AdaptationMode::AuxFLhuc)
    }

    pub fn uses_lhuc(self) -> bool {
        matches!(
            self,
            AdaptationMode::LhucOffline | AdaptationMode::FLhuc | AdaptationMode::AuxFLhuc
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmConfig {
    /// Width of the spliced base feature vector.
    pub base_dim: usize,
    /// Width of the appended adaptation feature (0 when unused).
    pub aux_dim: usize,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl AmConfig {
    pub fn input_dim(&self) -> usize {
        self.base_dim + self.aux_dim
    }

    /// `hidden_layers` blocks of affine, sigmoid and LHUC scaling, then the
    /// softmax output.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.hidden_layers == 0 || self.hidden_dim == 0 || self.classes < 2 || self.base_dim == 0 {
            return Err(Error::config(format!("invalid acoustic model shape {self:?}")));
        }
        let h = self.hidden_dim;
        let mut layers = Vec::with_capacity(3 * self.hidden_layers + 2);
        let mut in_dim = self.input_dim();
        for _ in 0..self.hidden_layers {
            layers.push(LayerSpec::Affine { in_dim, out_dim: h });
            layers.push(LayerSpec::Sigmoid { dim: h });
            layers.push(LayerSpec::LhucScale { dim: h });
            in_dim = h;
        }
        layers.push(LayerSpec::Affine {
            in_dim: h,
            out_dim: self.classes,
        });
        layers.push(LayerSpec::SoftmaxCeHead { dim: self.classes });
        Ok(layers)
    }

    pub fn build(&self, seed: u64) -> Result<Network> {
        Network::new(self.layers()?, seed)
    }
}

/// Stacks spliced base features with an optional per-frame auxiliary block.
pub fn assemble_input(base: &Matrix, offsets: &[i32], aux: Option<&Matrix>) -> Result<Matrix> {
    let spliced = crate::nn::layer::splice_forward(base, offsets);
    match aux {
        None => Ok(spliced),
        Some(a) => {
            if a.rows() != base.rows() {
                return Err(Error::data(format!(
                    "auxiliary features have {} rows for {} frames",
                    a.rows(),
                    base.rows()
                )));
            }
            spliced.hstack(a)
        }
    }
}

pub fn train_am(cfg: &AmConfig, inputs: Matrix, labels: Vec<usize>, seed: u64) -> Result<(Network, Vec<f64>)> {
    if inputs.cols() != cfg.input_dim() {
        return Err(Error::config(format!(
            "acoustic model expects {} input columns, got {}",
            cfg.input_dim(),
            inputs.cols()
        )));
    }
    let data = Dataset::new(inputs, Targets::Classes(labels))?;
    let mut net = cfg.build(seed)?;
    let mut opt = OptimState::adam(net.param_count(), cfg.lr);
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
    };
    let trace = crate::nn::train(&mut net, &data, &mut opt, &opts)?;
    Ok((net, trace))
}

/// Per-frame log-posteriors. A transform is required exactly when the mode
/// uses LHUC.
pub fn score_frames(
    net: &Network,
    inputs: &Matrix,
    mode: AdaptationMode,
    transform: Option<&LhucTransform>,
) -> Result<Matrix> {
    let aux = match (mode.uses_lhuc(), transform) {
        (true, None) => {
            return Err(Error::config(format!("mode {mode:?} needs an LHUC transform")));
        }
        (false, Some(_)) => {
            return Err(Error::config(format!("mode {mode:?} does not take an LHUC transform")));
        }
        (true, Some(t)) => AuxState::with_lhuc(&t.xi),
        (false, None) => AuxState::default(),
    };
    let logits = net.infer_pre_head(inputs, aux)?;
    Ok(log_softmax_rows(&logits))
}

/// `lambda * a + (1 - lambda) * b`, renormalized per row in the log domain.
pub fn combine_scores(a: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::data(format!(
            "cannot combine scores of shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("combination weight {lambda} outside [0, 1]")));
    }
    let mut mix = a.clone();
    for (m, &y) in mix.data_mut().iter_mut().zip(b.data()) {
        *m = lambda * *m + (1.0 - lambda) * y;
    }
    Ok(log_softmax_rows(&mix))
}

/// A labeled stretch of frames sharing one token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub frames: Range<usize>,
    pub token: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub log_posteriors: Matrix,
    pub frame_hyp: Vec<usize>,
    pub token_hyp: Vec<usize>,
}

/// Most frequent class in `frames`; ties go to the smallest class index.
pub fn majority_vote(frame_hyp: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes.max(1)];
    for &c in frame_hyp {
        if c < counts.len() {
            counts[c] += 1;
        }
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == best).unwrap_or(0)
}

pub fn decode(log_posteriors: Matrix, segments: &[LabeledSegment]) -> Result<DecodeResult> {
    let frame_hyp: Vec<usize> = (0..log_posteriors.rows())
        .map(|t| log_posteriors.argmax_row(t))
        .collect();
    let mut token_hyp = Vec::with_capacity(segments.len());
    for s in segments {
        if s.frames.end > frame_hyp.len() || s.frames.is_empty() {
            return Err(Error::data(format!("segment {:?} outside decoded frames", s.frames)));
        }
        token_hyp.push(majority_vote(&frame_hyp[s.frames.clone()], log_posteriors.cols()));
    }
    Ok(DecodeResult {
        log_posteriors,
        frame_hyp,
        token_hyp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub frames: usize,
    pub frame_errors: usize,
    pub tokens: usize,
    pub token_errors: usize,
}

impl ErrorReport {
    pub fn fer(&self) -> f64 {
        ratio(self.frame_errors, self.frames)
    }

    pub fn ter(&self) -> f64 {
        ratio(self.token_errors, self.tokens)
    }

    pub fn merge(&mut self, other: &ErrorReport) {
        self.frames += other.frames;
        self.frame_errors += other.frame_errors;
        self.tokens += other.tokens;
        self.token_errors += other.token_errors;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn evaluate(hyp: &DecodeResult, frame_ref: &[usize], segments: &[LabeledSegment]) -> Result<ErrorReport> {
    if frame_ref.is_empty() || segments.is_empty() {
        return Err(Error::data("empty reference"));
    }
    if frame_ref.len() != hyp.frame_hyp.len() || segments.len() != hyp.token_hyp.len() {
        return Err(Error::data("hypothesis and reference are not aligned"));
    }
    Ok(ErrorReport {
        frames: frame_ref.len(),
        frame_errors: frame_ref.iter().zip(&hyp.frame_hyp).filter(|(r, h)| r != h).count(),
        tokens: segments.len(),
        token_errors: segments
            .iter()
            .zip(&hyp.token_hyp)
            .filter(|(s, &h)| s.token != h)
            .count(),
    })
}
