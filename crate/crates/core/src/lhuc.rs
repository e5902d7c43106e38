//! Speaker-dependent hidden unit scaling: transforms, speaker adaptive
//! training and test-time estimation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::lhuc_amplitude;
use crate::nn::train::epoch_batches;
use crate::nn::{AuxState, Matrix, Network, OptimState, Target};

/// Raw scaling parameters, one vector per LHUC layer. Amplitudes are
/// `2 * sigmoid(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhucTransform {
    pub speaker: String,
    pub xi: Vec<Vec<f64>>,
}

impl LhucTransform {
    pub fn identity(speaker: &str, dims: &[usize]) -> Self {
        Self {
            speaker: speaker.to_owned(),
            xi: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.xi.iter().map(Vec::len).collect()
    }

    /// Layers concatenated in network order.
    pub fn flatten(&self) -> Vec<f64> {
        self.xi.concat()
    }

    pub fn from_flat(speaker: &str, dims: &[usize], flat: &[f64]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if flat.len() != total {
            return Err(Error::config(format!(
                "flattened transform has {} values, layers need {total}",
                flat.len()
            )));
        }
        let mut xi = Vec::with_capacity(dims.len());
        let mut start = 0;
        for &d in dims {
            xi.push(flat[start..start + d].to_vec());
            start += d;
        }
        Ok(Self {
            speaker: speaker.to_owned(),
            xi,
        })
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.xi.iter().flatten().map(|&v| lhuc_amplitude(v)).collect()
    }
}

/// Scales each column of `activations` by `2 * sigmoid(xi)`.
pub fn apply_lhuc(activations: &Matrix, xi: &[f64]) -> Result<Matrix> {
    if activations.cols() != xi.len() {
        return Err(Error::config(format!(
            "LHUC vector has {} entries for {} hidden units",
            xi.len(),
            activations.cols()
        )));
    }
    Ok(crate::nn::layer::lhuc_forward(activations, xi))
}

/// Frames and frame labels of one training speaker.
#[derive(Debug, Clone)]
pub struct SpeakerData {
    pub speaker: String,
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatConfig {
    /// Number of (shared epoch, transform epoch) pairs.
    pub rounds: usize,
    pub batch_size: usize,
    pub shared_lr: f64,
    pub transform_lr: f64,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            batch_size: 64,
            shared_lr: 1e-3,
            transform_lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SatState {
    pub net: Network,
    pub transforms: BTreeMap<String, LhucTransform>,
    /// Mean loss of every shared and transform epoch, in order.
    pub trace: Vec<(SatPhase, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SatPhase {
    Shared,
    Transform,
}

/// Alternates an epoch of shared-parameter updates (transforms frozen) with
/// an epoch of transform updates (shared parameters frozen). `init` is the
/// starting network, typically a speaker-independent model of the same
/// shape.
pub fn sat_train(init: Network, speakers: &[SpeakerData], cfg: &SatConfig, seed: u64) -> Result<SatState> {
    if speakers.is_empty() {
        return Err(Error::data("speaker adaptive training needs at least one speaker"));
    }
    let dims = init.lhuc_dims();
    if dims.is_empty() {
        return Err(Error::config("network has no LHUC layers"));
    }
    for s in speakers {
        if s.inputs.rows() == 0 || s.inputs.rows() != s.labels.len() {
            return Err(Error::data(format!("speaker {} has no usable frames", s.speaker)));
        }
    }
    let mut net = init;
    let mut transforms: Vec<LhucTransform> = speakers
        .iter()
        .map(|s| LhucTransform::identity(&s.speaker, &dims))
        .collect();
    let flat_len: usize = dims.iter().sum();
    let mut t_opts: Vec<OptimState> = speakers
        .iter()
        .map(|_| OptimState::adam(flat_len, cfg.transform_lr))
        .collect();
    let mut shared_opt = OptimState::adam(net.param_count(), cfg.shared_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_frames: usize = speakers.iter().map(|s| s.labels.len()).sum();
    let mut trace = Vec::with_capacity(2 * cfg.rounds);

    for round in 0..cfg.rounds {
        // Shared parameters, speaker-pure minibatches in shuffled order.
        let mut jobs: Vec<(usize, Vec<usize>)> = Vec::new();
        for (si, s) in speakers.iter().enumerate() {
            for b in epoch_batches(s.labels.len(), cfg.batch_size, &mut rng) {
                jobs.push((si, b));
            }
        }
        jobs.shuffle(&mut rng);
        let mut total = 0.0;
        for (si, batch) in &jobs {
            let s = &speakers[*si];
            let aux = AuxState::with_lhuc(&transforms[*si].xi);
            let (loss, grads) = batch_grads(&net, s, batch, aux)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    phase: "sat-shared".into(),
                    epoch: round,
                });
            }
            shared_opt.step(net.params_mut(), &grads.params)?;
            total += loss * batch.len() as f64;
        }
        trace.push((SatPhase::Shared, total / total_frames as f64));

        // Transforms, one speaker at a time.
        let mut total = 0.0;
        for (si, s) in speakers.iter().enumerate() {
            for batch in epoch_batches(s.labels.len(), cfg.batch_size, &mut rng) {
                let aux = AuxState::with_lhuc(&transforms[si].xi);
                let (loss, grads) = batch_grads(&net, s, &batch, aux)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        phase: "sat-transform".into(),
                        epoch: round,
                    });
                }
                let mut flat = transforms[si].flatten();
                t_opts[si].step(&mut flat, &grads.lhuc.concat())?;
                transforms[si] = LhucTransform::from_flat(&s.speaker, &dims, &flat)?;
                total += loss * batch.len() as f64;
            }
        }
        trace.push((SatPhase::Transform, total / total_frames as f64));
    }
    Ok(SatState {
        net,
        transforms: transforms.into_iter().map(|t| (t.speaker.clone(), t)).collect(),
        trace,
    })
}

fn batch_grads(
    net: &Network,
    s: &SpeakerData,
    batch: &[usize],
    aux: AuxState<'_>,
) -> Result<(f64, crate::nn::Gradients)> {
    let x = s.inputs.select_rows(batch);
    let labels: Vec<usize> = batch.iter().map(|&i| s.labels[i]).collect();
    let pass = net.forward(&x, aux)?;
    let (loss, g) = net.loss(&pass.output, Target::Classes(&labels))?;
    Ok((loss, net.backward(&pass, aux, &g)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self { steps: 20, lr: 0.1 }
    }
}

/// Estimates a transform for one speaker by full-batch gradient descent on
/// the cross-entropy against (hypothesis) labels, shared parameters frozen.
pub fn adapt_offline(
    net: &Network,
    speaker: &str,
    inputs: &Matrix,
    labels: &[usize],
    cfg: &OfflineConfig,
) -> Result<LhucTransform> {
    if inputs.rows() == 0 || labels.is_empty() {
        return Err(Error::data(format!("no adaptation data for speaker {speaker}")));
    }
    let dims = net.lhuc_dims();
    let mut t = LhucTransform::identity(speaker, &dims);
    let mut opt = OptimState::sgd(cfg.lr);
    for step in 0..cfg.steps {
        let aux = AuxState::with_lhuc(&t.xi);
        let pass = net.forward(inputs, aux)?;
        let (loss, g) = net.loss(&pass.output, Target::Classes(labels))?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                phase: "offline-lhuc".into(),
                epoch: step,
            });
        }
        let grads = net.backward(&pass, aux, &g)?;
        let mut flat = t.flatten();
        opt.step(&mut flat, &grads.lhuc.concat())?;
        t = LhucTransform::from_flat(speaker, &dims, &flat)?;
    }
    Ok(t)
}
