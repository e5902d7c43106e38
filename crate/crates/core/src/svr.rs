//! Spectral basis embeddings from paired bottleneck classifiers.
//!
//! The upper classifier learns group (and optionally speaker) labels from
//! spectral basis inputs; its bottleneck outputs averaged per speaker become
//! regression targets for the lower classifier, which is trained with a
//! weighted sum of a bottleneck MSE term and the classification terms.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::epoch_batches;
use crate::nn::{cross_entropy, mse, AuxState, LayerSpec, Matrix, Network, OptimState};
use crate::spectral::window_basis_input;

pub const EMBEDDING_DIM: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtlWeights {
    pub w_mse: f64,
    pub w_ce_group: f64,
    pub w_ce_id: f64,
}

impl MtlWeights {
    /// Equal weighting of all three terms (severity-group corpora).
    pub const THREE_WAY: MtlWeights = MtlWeights {
        w_mse: 1.0 / 3.0,
        w_ce_group: 1.0 / 3.0,
        w_ce_id: 1.0 / 3.0,
    };
    /// MSE and group terms only (binary aged/non-aged corpora).
    pub const TWO_WAY: MtlWeights = MtlWeights {
        w_mse: 0.5,
        w_ce_group: 0.5,
        w_ce_id: 0.0,
    };

    pub fn new(w_mse: f64, w_ce_group: f64, w_ce_id: f64) -> Result<Self> {
        let w = MtlWeights {
            w_mse,
            w_ce_group,
            w_ce_id,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_mse, self.w_ce_group, self.w_ce_id];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config(format!(
                "MTL weights must be finite and >= 0, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::config("at least one MTL weight must be positive"));
        }
        Ok(())
    }
}

/// Individual loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtlLoss {
    pub total: f64,
    pub mse: f64,
    pub ce_group: f64,
    pub ce_id: f64,
}

/// Combines already-computed terms. `ce_id` is `None` when the network has no
/// speaker head, which is only allowed with a zero speaker weight.
pub fn combine_terms(mse: f64, ce_group: f64, ce_id: Option<f64>, w: &MtlWeights) -> Result<MtlLoss> {
    if w.w_ce_id != 0.0 && ce_id.is_none() {
        return Err(Error::config(
            "speaker-id weight is non-zero but there is no speaker head",
        ));
    }
    let ce_id = ce_id.unwrap_or(0.0);
    Ok(MtlLoss {
        total: w.w_mse * mse + w.w_ce_group * ce_group + w.w_ce_id * ce_id,
        mse,
        ce_group,
        ce_id,
    })
}

/// Multitask loss over a batch: bottleneck MSE against speaker targets plus
/// cross-entropy of the group and (optional) speaker posteriors.
pub fn mtl_loss(
    bottleneck: &Matrix,
    target: &Matrix,
    group_probs: &Matrix,
    group_labels: &[usize],
    id: Option<(&Matrix, &[usize])>,
    w: &MtlWeights,
) -> Result<MtlLoss> {
    let (m, _) = mse(bottleneck, target)?;
    let (g, _) = cross_entropy(group_probs, group_labels)?;
    let i = match id {
        Some((p, l)) => Some(cross_entropy(p, l)?.0),
        None => None,
    };
    combine_terms(m, g, i, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Upper classifier, no variance regularization.
    Sbe,
    /// Lower classifier trained with the MSE pull.
    Svr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub hidden: usize,
    pub shared: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            shared: 128,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

/// Bottleneck classifier split into the embedding trunk and its heads so the
/// bottleneck activations are directly addressable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork {
    pub trunk: Network,
    pub shared: Network,
    pub group_head: Network,
    pub id_head: Option<Network>,
    pub provenance: Provenance,
}

impl EmbeddingNetwork {
    fn layouts(
        in_dim: usize,
        cfg: &EmbeddingConfig,
        n_groups: usize,
        n_ids: Option<usize>,
    ) -> [Option<Vec<LayerSpec>>; 4] {
        let h = cfg.hidden;
        let s = cfg.shared;
        let trunk = vec![
            LayerSpec::Affine { in_dim, out_dim: h },
            LayerSpec::Sigmoid { dim: h },
            LayerSpec::Affine { in_dim: h, out_dim: h },
            LayerSpec::Sigmoid { dim: h },
            LayerSpec::Affine {
                in_dim: h,
                out_dim: EMBEDDING_DIM,
            },
        ];
        let shared = vec![
            LayerSpec::Affine {
                in_dim: EMBEDDING_DIM,
                out_dim: s,
            },
            LayerSpec::Sigmoid { dim: s },
        ];
        let head = |n| {
            vec![
                LayerSpec::Affine { in_dim: s, out_dim: n },
                LayerSpec::SoftmaxCeHead { dim: n },
            ]
        };
        [Some(trunk), Some(shared), Some(head(n_groups)), n_ids.map(head)]
    }

    pub fn new(
        in_dim: usize,
        cfg: &EmbeddingConfig,
        n_groups: usize,
        n_ids: Option<usize>,
        provenance: Provenance,
        seed: u64,
    ) -> Result<Self> {
        Self::build(in_dim, cfg, n_groups, n_ids, provenance, |l, k| {
            Network::new(l, seed.wrapping_add(k))
        })
    }

    /// Same layout with every parameter zero.
    pub fn zeroed(in_dim: usize, cfg: &EmbeddingConfig, n_groups: usize, n_ids: Option<usize>) -> Result<Self> {
        Self::build(in_dim, cfg, n_groups, n_ids, Provenance::Sbe, |l, _| {
            Network::with_zero_params(l, 0)
        })
    }

    fn build(
        in_dim: usize,
        cfg: &EmbeddingConfig,
        n_groups: usize,
        n_ids: Option<usize>,
        provenance: Provenance,
        make: impl Fn(Vec<LayerSpec>, u64) -> Result<Network>,
    ) -> Result<Self> {
        if n_groups < 2 {
            return Err(Error::config("embedding classifier needs at least two groups"));
        }
        if n_ids.is_some_and(|n| n < 2) {
            return Err(Error::config("speaker head needs at least two speakers"));
        }
        let [t, s, g, i] = Self::layouts(in_dim, cfg, n_groups, n_ids);
        Ok(Self {
            trunk: make(t.unwrap(), 0)?,
            shared: make(s.unwrap(), 1)?,
            group_head: make(g.unwrap(), 2)?,
            id_head: i.map(|l| make(l, 3)).transpose()?,
            provenance,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    /// Bottleneck activations, one row per input row.
    pub fn embed(&self, inputs: &Matrix) -> Result<Matrix> {
        self.trunk.infer(inputs, AuxState::default())
    }

    pub fn group_posteriors(&self, inputs: &Matrix) -> Result<Matrix> {
        let b = self.embed(inputs)?;
        let h = self.shared.infer(&b, AuxState::default())?;
        self.group_head.infer(&h, AuxState::default())
    }

    /// All networks in a fixed order, for serialization.
    pub fn parts(&self) -> Vec<&Network> {
        let mut v = vec![&self.trunk, &self.shared, &self.group_head];
        v.extend(self.id_head.as_ref());
        v
    }
}

pub fn extract_bottleneck(net: &EmbeddingNetwork, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.in_dim() {
        return Err(Error::config(format!(
            "embedding network expects {} inputs, got {}",
            net.in_dim(),
            x.len()
        )));
    }
    Ok(net.embed(&Matrix::row_vector(x))?.into_vec())
}

/// Training examples: one spectral basis input per window.
#[derive(Debug, Clone)]
pub struct EmbeddingData {
    pub inputs: Matrix,
    pub groups: Vec<usize>,
    pub speakers: Vec<usize>,
    pub speaker_names: Vec<String>,
    pub n_groups: usize,
}

impl EmbeddingData {
    pub fn new(
        inputs: Matrix,
        groups: Vec<usize>,
        speakers: Vec<usize>,
        speaker_names: Vec<String>,
        n_groups: usize,
    ) -> Result<Self> {
        let n = inputs.rows();
        if n == 0 {
            return Err(Error::data("no embedding training windows"));
        }
        if groups.len() != n || speakers.len() != n {
            return Err(Error::data("every window needs a group and a speaker label"));
        }
        if groups.iter().any(|&g| g >= n_groups) || speakers.iter().any(|&s| s >= speaker_names.len()) {
            return Err(Error::data("window label out of range"));
        }
        let mut seen = vec![false; n_groups];
        groups.iter().for_each(|&g| seen[g] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::config("embedding training data holds fewer than two groups"));
        }
        Ok(Self {
            inputs,
            groups,
            speakers,
            speaker_names,
            n_groups,
        })
    }
}

/// Trains the upper classifier: cross-entropy heads only, group and speaker
/// terms weighted equally when a speaker head is used.
pub fn train_upper(
    data: &EmbeddingData,
    with_id_head: bool,
    cfg: &EmbeddingConfig,
    seed: u64,
) -> Result<(EmbeddingNetwork, Vec<f64>)> {
    let w = if with_id_head {
        MtlWeights::new(0.0, 0.5, 0.5)?
    } else {
        MtlWeights::new(0.0, 1.0, 0.0)?
    };
    let mut net = EmbeddingNetwork::new(
        data.inputs.cols(),
        cfg,
        data.n_groups,
        with_id_head.then_some(data.speaker_names.len()),
        Provenance::Sbe,
        seed,
    )?;
    let trace = fit(&mut net, data, None, &w, cfg, seed)?;
    Ok((net, trace))
}

/// Trains the lower classifier against the speaker-averaged upper embeddings.
pub fn train_lower(
    data: &EmbeddingData,
    table: &SpeakerTable,
    w: &MtlWeights,
    cfg: &EmbeddingConfig,
    seed: u64,
) -> Result<(EmbeddingNetwork, Vec<f64>)> {
    w.validate()?;
    let mut targets = Matrix::zeros(data.inputs.rows(), EMBEDDING_DIM);
    for (r, &s) in data.speakers.iter().enumerate() {
        let name = &data.speaker_names[s];
        let e = table
            .mean(name)
            .ok_or_else(|| Error::data(format!("speaker table has no entry for {name}")))?;
        targets.row_mut(r).copy_from_slice(e);
    }
    let mut net = EmbeddingNetwork::new(
        data.inputs.cols(),
        cfg,
        data.n_groups,
        (w.w_ce_id > 0.0).then_some(data.speaker_names.len()),
        Provenance::Svr,
        seed,
    )?;
    let trace = fit(&mut net, data, Some(&targets), w, cfg, seed)?;
    Ok((net, trace))
}

fn fit(
    net: &mut EmbeddingNetwork,
    data: &EmbeddingData,
    targets: Option<&Matrix>,
    w: &MtlWeights,
    cfg: &EmbeddingConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut opt_t = OptimState::adam(net.trunk.param_count(), cfg.lr);
    let mut opt_s = OptimState::adam(net.shared.param_count(), cfg.lr);
    let mut opt_g = OptimState::adam(net.group_head.param_count(), cfg.lr);
    let mut opt_i = net.id_head.as_ref().map(|h| OptimState::adam(h.param_count(), cfg.lr));
    let aux = AuxState::default();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(data.inputs.rows(), cfg.batch_size, &mut rng) {
            let x = data.inputs.select_rows(&batch);
            let groups: Vec<usize> = batch.iter().map(|&i| data.groups[i]).collect();
            let ids: Vec<usize> = batch.iter().map(|&i| data.speakers[i]).collect();
            let tp = net.trunk.forward(&x, aux)?;
            let b = &tp.output;
            let mut grad_b = Matrix::zeros(b.rows(), b.cols());
            let mut mse_term = 0.0;
            if let (Some(t), true) = (targets, w.w_mse > 0.0) {
                let (l, g) = mse(b, &t.select_rows(&batch))?;
                mse_term = l;
                crate::nn::matrix::axpy(w.w_mse, g.data(), grad_b.data_mut());
            }
            let need_heads = w.w_ce_group > 0.0 || w.w_ce_id > 0.0;
            let (mut ce_g, mut ce_i) = (0.0, None);
            if need_heads {
                let sp = net.shared.forward(b, aux)?;
                let mut grad_h = Matrix::zeros(sp.output.rows(), sp.output.cols());
                let gp = net.group_head.forward(&sp.output, aux)?;
                let (l, g) = cross_entropy(&gp.output, &groups)?;
                ce_g = l;
                let gg = net.group_head.backward(&gp, aux, &g.scale(w.w_ce_group))?;
                crate::nn::matrix::axpy(1.0, gg.input.data(), grad_h.data_mut());
                opt_g.step(net.group_head.params_mut(), &gg.params)?;
                if let (Some(head), Some(opt)) = (net.id_head.as_mut(), opt_i.as_mut()) {
                    let ip = head.forward(&sp.output, aux)?;
                    let (l, g) = cross_entropy(&ip.output, &ids)?;
                    ce_i = Some(l);
                    let ig = head.backward(&ip, aux, &g.scale(w.w_ce_id))?;
                    crate::nn::matrix::axpy(1.0, ig.input.data(), grad_h.data_mut());
                    opt.step(head.params_mut(), &ig.params)?;
                }
                let sg = net.shared.backward(&sp, aux, &grad_h)?;
                crate::nn::matrix::axpy(1.0, sg.input.data(), grad_b.data_mut());
                opt_s.step(net.shared.params_mut(), &sg.params)?;
            }
            let loss = combine_terms(mse_term, ce_g, ce_i, w)?.total;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    phase: "embedding".into(),
                    epoch,
                });
            }
            let tg = net.trunk.backward(&tp, aux, &grad_b)?;
            opt_t.step(net.trunk.params_mut(), &tg.params)?;
            total += loss * batch.len() as f64;
        }
        trace.push(total / data.inputs.rows() as f64);
    }
    Ok(trace)
}

/// Per-speaker mean embedding and the number of embeddings averaged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeakerTable {
    entries: BTreeMap<String, (Vec<f64>, usize)>,
}

impl SpeakerTable {
    pub fn mean(&self, speaker: &str) -> Option<&[f64]> {
        self.entries.get(speaker).map(|(v, _)| v.as_slice())
    }

    pub fn count(&self, speaker: &str) -> Option<usize> {
        self.entries.get(speaker).map(|(_, c)| *c)
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, speaker: &str, mean: Vec<f64>, count: usize) {
        self.entries.insert(speaker.to_owned(), (mean, count));
    }
}

/// Averages embeddings per speaker. Summation follows sorted embedding order
/// within each speaker so the table does not depend on input order.
pub fn speaker_average<'a>(items: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<SpeakerTable> {
    let mut grouped: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (s, e) in items {
        grouped.entry(s).or_default().push(e);
    }
    let mut table = SpeakerTable::default();
    for (s, mut es) in grouped {
        let dim = es[0].len();
        if es.iter().any(|e| e.len() != dim) {
            return Err(Error::data(format!("speaker {s} has embeddings of differing length")));
        }
        es.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut sum = vec![0.0; dim];
        for e in &es {
            crate::nn::matrix::axpy(1.0, e, &mut sum);
        }
        let n = es.len();
        sum.iter_mut().for_each(|v| *v /= n as f64);
        table.insert(s, sum, n);
    }
    if table.is_empty() {
        return Err(Error::data("no embeddings to average"));
    }
    Ok(table)
}

/// Mean over speakers of the trace of the within-speaker (population)
/// covariance. Speakers with a single embedding are skipped.
pub fn intra_speaker_variance(by_speaker: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for es in by_speaker.values() {
        if es.len() < 2 {
            continue;
        }
        let dim = es[0].len();
        let mut mean = vec![0.0; dim];
        for e in es {
            crate::nn::matrix::axpy(1.0 / es.len() as f64, e, &mut mean);
        }
        let tr: f64 = es
            .iter()
            .map(|e| e.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
            .sum::<f64>()
            / es.len() as f64;
        sum += tr;
        n += 1;
    }
    if n == 0 {
        return Err(Error::data(
            "intra-speaker variance needs a speaker with two or more embeddings",
        ));
    }
    Ok(sum / n as f64)
}

/// One embedding per window of a `T x F` log-Mel matrix.
pub fn extract_svr(net: &EmbeddingNetwork, logmel: &Matrix, windows: &[Range<usize>], d: usize) -> Result<Matrix> {
    let mut inputs = Matrix::zeros(windows.len(), net.in_dim());
    for (i, r) in windows.iter().enumerate() {
        let v = window_basis_input(logmel, r.clone(), d)?;
        if v.len() != net.in_dim() {
            return Err(Error::config(format!(
                "basis input has {} values, embedding network expects {}",
                v.len(),
                net.in_dim()
            )));
        }
        inputs.row_mut(i).copy_from_slice(&v);
    }
    net.embed(&inputs)
}

/// Repeats each window's embedding on every frame of that window.
pub fn broadcast_windows(per_window: &Matrix, windows: &[Range<usize>], frames: usize) -> Result<Matrix> {
    if per_window.rows() != windows.len() {
        return Err(Error::data("one embedding per window required"));
    }
    let mut out = Matrix::zeros(frames, per_window.cols());
    let mut covered = 0;
    for (i, r) in windows.iter().enumerate() {
        if r.end > frames {
            return Err(Error::data("window extends past the utterance"));
        }
        for t in r.clone() {
            out.row_mut(t).copy_from_slice(per_window.row(i));
        }
        covered += r.len();
    }
    if covered != frames {
        return Err(Error::data("windows do not cover every frame"));
    }
    Ok(out)
}
