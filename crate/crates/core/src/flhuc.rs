//! Feature-driven LHUC: transforms predicted from acoustic features.
//!
//! Training speakers' SAT transforms are compressed with PCA. A TDNN with an
//! online averaging layer regresses the compressed vectors from frames, and
//! an affine map lifts its predictions back to full transforms. At test time
//! each incoming segment updates the speaker's running average and yields a
//! fresh transform with a single forward pass.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lhuc::LhucTransform;
use crate::nn::matrix::dot;
use crate::nn::{mse, AuxState, LayerSpec, Matrix, Network, OnlineAvgState, OptimState};
use crate::spectral::svd_spectrum;

pub use crate::nn::OnlineAvgState as OnlineAverage;

/// Splice offsets of the four context layers.
pub const SPLICE_OFFSETS: [&[i32]; 4] = [&[-2, -1, 0, 1, 2], &[-2, 0, 2], &[-3, 0, 3], &[-4, 0, 4]];

pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Runs one segment through the online average, returning the summary vector
/// and advancing the state. Empty segments return `None` and leave the state
/// untouched.
pub fn online_average(state: &mut OnlineAvgState, segment: &Matrix) -> Result<Option<Vec<f64>>> {
    state.update(segment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x D`, orthonormal rows.
    pub components: Matrix,
    /// Sample variance along each component, non-increasing.
    pub explained: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components.iter_rows().map(|c| dot(c, &centered)).collect()
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter_rows().zip(y) {
            crate::nn::matrix::axpy(w, c, &mut out);
        }
        out
    }
}

/// Principal components of one flattened transform per speaker. `k` is
/// clamped to `#speakers - 1` and to the dimension.
pub fn pca_fit(rows: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::data("PCA needs at least two speakers"));
    }
    if k == 0 {
        return Err(Error::config("PCA dimension must be at least 1"));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::data("PCA rows must share a non-zero length"));
    }
    let n = rows.len();
    let limit = (n - 1).min(dim);
    let k_eff = if k > limit {
        log::warn!("PCA dimension {k} exceeds {limit} (speakers - 1 or dimension); clamping");
        limit
    } else {
        k
    };
    let mut mean = vec![0.0; dim];
    for r in rows {
        crate::nn::matrix::axpy(1.0 / n as f64, r, &mut mean);
    }
    // Centered data as a D x n matrix; its left singular vectors are the
    // covariance eigenvectors.
    let mut xt = Matrix::zeros(dim, n);
    for (j, r) in rows.iter().enumerate() {
        for i in 0..dim {
            xt.set(i, j, r[i] - mean[i]);
        }
    }
    let dec = svd_spectrum(&xt)?;
    let mut components = Matrix::zeros(k_eff, dim);
    let mut explained = Vec::with_capacity(k_eff);
    for c in 0..k_eff {
        for i in 0..dim {
            components.set(c, i, dec.u.get(i, c));
        }
        let s = dec.sigma.get(c).copied().unwrap_or(0.0);
        explained.push(s * s / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained,
    })
}

/// `x = W y + b` from `k`-dim predictions to full transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    /// `D x k`.
    pub w: Matrix,
    pub b: Vec<f64>,
    pub ridge_used: bool,
}

impl AffineMap {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (o, row) in out.iter_mut().zip(self.w.iter_rows()) {
            *o += dot(row, y);
        }
        out
    }
}

/// Least-squares affine fit on centred data. Falls back to ridge
/// regularization when the predictions are rank deficient.
pub fn fit_affine(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<AffineMap> {
    let n = predictions.len();
    if n == 0 || n != targets.len() {
        return Err(Error::data("affine fit needs one target per prediction"));
    }
    let k = predictions[0].len();
    let dim = targets[0].len();
    if predictions.iter().any(|p| p.len() != k) || targets.iter().any(|t| t.len() != dim) {
        return Err(Error::data("ragged affine fit inputs"));
    }
    let mean = |rows: &[Vec<f64>], d: usize| {
        let mut m = vec![0.0; d];
        for r in rows {
            crate::nn::matrix::axpy(1.0 / n as f64, r, &mut m);
        }
        m
    };
    let ym = mean(predictions, k);
    let xm = mean(targets, dim);
    let yc: Vec<Vec<f64>> = predictions
        .iter()
        .map(|p| p.iter().zip(&ym).map(|(a, b)| a - b).collect())
        .collect();
    // Normal equations G w_row = c_row for every output dimension.
    let mut g = Matrix::zeros(k, k);
    for r in &yc {
        for a in 0..k {
            for b in 0..k {
                g.set(a, b, g.get(a, b) + r[a] * r[b]);
            }
        }
    }
    let mut rhs = Matrix::zeros(k, dim);
    for (r, t) in yc.iter().zip(targets) {
        for (a, &ra) in r.iter().enumerate().take(k) {
            for i in 0..dim {
                rhs.set(a, i, rhs.get(a, i) + ra * (t[i] - xm[i]));
            }
        }
    }
    let (sol, ridge_used) = match solve_spd(&g, &rhs, 0.0) {
        Some(s) => (s, false),
        None => {
            log::warn!("affine fit is rank deficient; using ridge lambda {RIDGE_LAMBDA}");
            let s =
                solve_spd(&g, &rhs, RIDGE_LAMBDA).ok_or_else(|| Error::data("ridge-regularized affine fit failed"))?;
            (s, true)
        }
    };
    // sol is k x D; W is its transpose.
    let w = sol.transpose();
    let mut b = xm;
    for (bi, row) in b.iter_mut().zip(w.iter_rows()) {
        *bi -= dot(row, &ym);
    }
    Ok(AffineMap { w, b, ridge_used })
}

/// Solves `(G + lambda I) X = R` by Cholesky. Returns `None` when the matrix
/// is not numerically positive definite.
fn solve_spd(g: &Matrix, r: &Matrix, lambda: f64) -> Option<Matrix> {
    let k = g.rows();
    let scale = (0..k).map(|i| g.get(i, i)).fold(0.0f64, f64::max).max(1.0);
    let mut l = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let mut s = g.get(i, j) + if i == j { lambda } else { 0.0 };
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            if i == j {
                if s <= 1e-12 * scale {
                    return None;
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    let mut x = r.clone();
    for c in 0..r.cols() {
        for i in 0..k {
            let mut s = x.get(i, c);
            for p in 0..i {
                s -= l.get(i, p) * x.get(p, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..k).rev() {
            let mut s = x.get(i, c);
            for p in i + 1..k {
                s -= l.get(p, i) * x.get(p, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub alpha: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 10,
            lr: 1e-3,
            alpha: 0.9,
        }
    }
}

/// Layer stack: four splice/affine/ReLU blocks, the online average, and a
/// linear projection to `k` outputs.
pub fn regression_layers(in_dim: usize, hidden: usize, k: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut d = in_dim;
    for offsets in SPLICE_OFFSETS {
        layers.push(LayerSpec::ContextSplice {
            in_dim: d,
            offsets: offsets.to_vec(),
        });
        layers.push(LayerSpec::Affine {
            in_dim: d * offsets.len(),
            out_dim: hidden,
        });
        layers.push(LayerSpec::Relu { dim: hidden });
        d = hidden;
    }
    layers.push(LayerSpec::OnlineAverage { dim: hidden });
    layers.push(LayerSpec::Affine {
        in_dim: hidden,
        out_dim: k,
    });
    layers.push(LayerSpec::MseHead { dim: k });
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTdnn {
    pub net: Network,
    pub alpha: f64,
    online_index: usize,
}

impl RegressionTdnn {
    pub fn new(net: Network, alpha: f64) -> Result<Self> {
        let online: Vec<usize> = net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::OnlineAverage { .. }))
            .map(|(i, _)| i)
            .collect();
        if online.len() != 1 {
            return Err(Error::config(
                "regression network needs exactly one online-average layer",
            ));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self {
            net,
            alpha,
            online_index: online[0],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn k(&self) -> usize {
        self.net.out_dim()
    }

    pub fn hidden(&self) -> usize {
        self.net.layers()[self.online_index].in_dim()
    }

    pub fn new_state(&self) -> OnlineAvgState {
        OnlineAvgState::new(self.hidden(), self.alpha).expect("alpha validated at construction")
    }

    /// Frame-level hidden vectors entering the online average.
    pub fn hidden_frames(&self, segment: &Matrix) -> Result<Matrix> {
        self.net
            .infer_layers(segment, AuxState::default(), 0..self.online_index)
    }

    /// Maps an averaged hidden vector to the `k` outputs.
    pub fn project(&self, m: &[f64]) -> Result<Vec<f64>> {
        let end = self.net.layers().len() - 1;
        Ok(self
            .net
            .infer_layers(&Matrix::row_vector(m), AuxState::default(), self.online_index + 1..end)?
            .into_vec())
    }
}

/// Utterances of one training speaker in presentation order, plus the
/// speaker's compressed transform target.
#[derive(Debug, Clone)]
pub struct RegressionStream {
    pub speaker: String,
    pub segments: Vec<Matrix>,
    pub target: Vec<f64>,
}

/// Trains the regression network. Each epoch resets every speaker's running
/// average and then proceeds in rounds: a round takes the next segment of
/// every speaker that still has one, in shuffled speaker order, and makes a
/// single update from the summed gradients. Segment order within a speaker
/// is preserved. Gradients flow only through the current segment.
pub fn train_regression(
    streams: &[RegressionStream],
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<(RegressionTdnn, Vec<f64>)> {
    let first = streams
        .iter()
        .flat_map(|s| s.segments.first())
        .next()
        .ok_or_else(|| Error::data("regression training needs at least one segment"))?;
    let in_dim = first.cols();
    let k = streams[0].target.len();
    if k == 0 || streams.iter().any(|s| s.target.len() != k) {
        return Err(Error::data("every speaker needs a target of the same length"));
    }
    let net = Network::new(regression_layers(in_dim, cfg.hidden, k), seed)?;
    let mut tdnn = RegressionTdnn::new(net, cfg.alpha)?;
    let mut opt = OptimState::adam(tdnn.net.param_count(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<Matrix> = streams.iter().map(|s| Matrix::row_vector(&s.target)).collect();
    let rounds = streams.iter().map(|s| s.segments.len()).max().unwrap_or(0);
    let mut order: Vec<usize> = (0..streams.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut states: Vec<OnlineAvgState> = streams.iter().map(|_| tdnn.new_state()).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for round in 0..rounds {
            order.shuffle(&mut rng);
            let mut acc = vec![0.0; tdnn.net.param_count()];
            let mut used = 0usize;
            for &si in &order {
                let Some(seg) = streams[si].segments.get(round).filter(|m| m.rows() > 0) else {
                    continue;
                };
                let aux = AuxState {
                    lhuc: None,
                    online: Some(&states[si]),
                };
                let pass = tdnn.net.forward(seg, aux)?;
                let (loss, g) = mse(&pass.output, &targets[si])?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        phase: "regression".into(),
                        epoch,
                    });
                }
                let grads = tdnn.net.backward(&pass, aux, &g)?;
                crate::nn::matrix::axpy(1.0, &grads.params, &mut acc);
                let h = pass
                    .layer_input(tdnn.online_index)
                    .expect("forward pass keeps its cache")
                    .clone();
                states[si].update(&h)?;
                total += loss;
                count += 1;
                used += 1;
            }
            if used > 0 {
                acc.iter_mut().for_each(|v| *v /= used as f64);
                opt.step(tdnn.net.params_mut(), &acc)?;
            }
        }
        trace.push(total / count.max(1) as f64);
    }
    Ok((tdnn, trace))
}

/// Streaming per-speaker generator: one forward pass per segment.
#[derive(Debug, Clone)]
pub struct OnTheFlyGenerator<'a> {
    tdnn: &'a RegressionTdnn,
    affine: &'a AffineMap,
    dims: Vec<usize>,
    speaker: String,
    state: OnlineAvgState,
    last_m: Option<Vec<f64>>,
}

/// What one segment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStep {
    pub m: Vec<f64>,
    pub prediction: Vec<f64>,
    pub transform: LhucTransform,
}

impl<'a> OnTheFlyGenerator<'a> {
    pub fn new(tdnn: &'a RegressionTdnn, affine: &'a AffineMap, speaker: &str, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if affine.b.len() != total {
            return Err(Error::config(format!(
                "affine map produces {} values, LHUC layers need {total}",
                affine.b.len()
            )));
        }
        if affine.w.cols() != tdnn.k() {
            return Err(Error::config("affine map and regression output widths differ"));
        }
        Ok(Self {
            tdnn,
            affine,
            dims: dims.to_vec(),
            speaker: speaker.to_owned(),
            state: tdnn.new_state(),
            last_m: None,
        })
    }

    pub fn state(&self) -> &OnlineAvgState {
        &self.state
    }

    pub fn last_m(&self) -> Option<&[f64]> {
        self.last_m.as_deref()
    }

    /// Consumes a segment. Returns `None` for an empty segment.
    pub fn push_segment(&mut self, segment: &Matrix) -> Result<Option<GeneratedStep>> {
        if segment.rows() == 0 {
            return Ok(None);
        }
        if segment.cols() != self.tdnn.in_dim() {
            return Err(Error::config(format!(
                "regression network expects {} feature columns, got {}",
                self.tdnn.in_dim(),
                segment.cols()
            )));
        }
        let h = self.tdnn.hidden_frames(segment)?;
        let m = self.state.update(&h)?.expect("non-empty segment yields an average");
        let prediction = self.tdnn.project(&m)?;
        let flat = self.affine.apply(&prediction);
        let transform = LhucTransform::from_flat(&self.speaker, &self.dims, &flat)?;
        self.last_m = Some(m.clone());
        Ok(Some(GeneratedStep {
            m,
            prediction,
            transform,
        }))
    }
}

/// Mean regression prediction per speaker, averaged over the speaker's
/// streamed segments (used as affine fit inputs).
pub fn stream_predictions(tdnn: &RegressionTdnn, streams: &[RegressionStream]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for s in streams {
        let mut state = tdnn.new_state();
        let mut acc = vec![0.0; tdnn.k()];
        let mut n = 0usize;
        for seg in &s.segments {
            if seg.rows() == 0 {
                continue;
            }
            let h = tdnn.hidden_frames(seg)?;
            let m = state.update(&h)?.expect("non-empty");
            crate::nn::matrix::axpy(1.0, &tdnn.project(&m)?, &mut acc);
            n += 1;
        }
        if n == 0 {
            return Err(Error::data(format!("speaker {} has no segments", s.speaker)));
        }
        acc.iter_mut().for_each(|v| *v /= n as f64);
        out.insert(s.speaker.clone(), acc);
    }
    Ok(out)
}
