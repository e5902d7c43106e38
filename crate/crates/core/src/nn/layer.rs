use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::{axpy, dot};
use crate::nn::{Matrix, OnlineAvgState};

/// One stage of a feed-forward chain.
///
/// Only `Affine` owns shared parameters. `LhucScale` reads its speaker
/// parameters from the per-call auxiliary state, and `OnlineAverage` reads the
/// per-speaker history from the same place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Affine {
        in_dim: usize,
        out_dim: usize,
    },
    Sigmoid {
        dim: usize,
    },
    Relu {
        dim: usize,
    },
    SoftmaxCeHead {
        dim: usize,
    },
    MseHead {
        dim: usize,
    },
    LhucScale {
        dim: usize,
    },
    ContextSplice {
        in_dim: usize,
        offsets: Vec<i32>,
    },
    /// Pools a whole segment into a single row.
    OnlineAverage {
        dim: usize,
    },
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Affine { in_dim, .. } | LayerSpec::ContextSplice { in_dim, .. } => in_dim,
            LayerSpec::Sigmoid { dim }
            | LayerSpec::Relu { dim }
            | LayerSpec::SoftmaxCeHead { dim }
            | LayerSpec::MseHead { dim }
            | LayerSpec::LhucScale { dim }
            | LayerSpec::OnlineAverage { dim } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerSpec::Affine { out_dim, .. } => *out_dim,
            LayerSpec::ContextSplice { in_dim, offsets } => in_dim * offsets.len(),
            other => other.in_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Affine { in_dim, out_dim } => in_dim * out_dim + out_dim,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Affine { .. } => "affine",
            LayerSpec::Sigmoid { .. } => "sigmoid",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::SoftmaxCeHead { .. } => "softmax-ce-head",
            LayerSpec::MseHead { .. } => "mse-head",
            LayerSpec::LhucScale { .. } => "lhuc-scale",
            LayerSpec::ContextSplice { .. } => "context-splice",
            LayerSpec::OnlineAverage { .. } => "online-average",
        }
    }

    pub fn is_head(&self) -> bool {
        matches!(self, LayerSpec::SoftmaxCeHead { .. } | LayerSpec::MseHead { .. })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.in_dim() == 0 || self.out_dim() == 0 {
            return Err(Error::config(format!("{} layer has a zero dimension", self.name())));
        }
        if let LayerSpec::ContextSplice { offsets, .. } = self {
            if offsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(format!(
                    "context-splice offsets must be strictly increasing: {offsets:?}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// LHUC amplitude `2 * sigmoid(xi)`, always in (0, 2).
pub fn lhuc_amplitude(xi: f64) -> f64 {
    2.0 * sigmoid(xi)
}

pub(crate) fn affine_forward(params: &[f64], in_dim: usize, out_dim: usize, x: &Matrix) -> Matrix {
    let (w, b) = params.split_at(in_dim * out_dim);
    let mut y = Matrix::zeros(x.rows(), out_dim);
    for t in 0..x.rows() {
        let xr = x.row(t);
        let yr = y.row_mut(t);
        for j in 0..out_dim {
            yr[j] = b[j] + dot(&w[j * in_dim..(j + 1) * in_dim], xr);
        }
    }
    y
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
pub(crate) fn affine_backward(
    params: &[f64],
    in_dim: usize,
    out_dim: usize,
    x: &Matrix,
    dy: &Matrix,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Matrix {
    let (w, _) = params.split_at(in_dim * out_dim);
    let (gw, gb) = grad.split_at_mut(in_dim * out_dim);
    let mut dx = if need_input_grad {
        Matrix::zeros(x.rows(), in_dim)
    } else {
        Matrix::zeros(0, in_dim)
    };
    for t in 0..x.rows() {
        let xr = x.row(t);
        let dyr = dy.row(t);
        for j in 0..out_dim {
            let g = dyr[j];
            if g == 0.0 {
                continue;
            }
            gb[j] += g;
            axpy(g, xr, &mut gw[j * in_dim..(j + 1) * in_dim]);
        }
        if need_input_grad {
            let dxr = dx.row_mut(t);
            for j in 0..out_dim {
                let g = dyr[j];
                if g != 0.0 {
                    axpy(g, &w[j * in_dim..(j + 1) * in_dim], dxr);
                }
            }
        }
    }
    dx
}

pub(crate) fn softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for t in 0..y.rows() {
        let row = y.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    y
}

pub(crate) fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for t in 0..y.rows() {
        let row = y.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    y
}

pub(crate) fn softmax_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for t in 0..y.rows() {
        let yr = y.row(t);
        let dyr = dy.row(t);
        let s = dot(yr, dyr);
        for ((d, &p), &g) in dx.row_mut(t).iter_mut().zip(yr).zip(dyr) {
            *d = p * (g - s);
        }
    }
    dx
}

pub(crate) fn lhuc_forward(x: &Matrix, xi: &[f64]) -> Matrix {
    let amps: Vec<f64> = xi.iter().map(|&v| lhuc_amplitude(v)).collect();
    let mut y = x.clone();
    for t in 0..y.rows() {
        for (v, a) in y.row_mut(t).iter_mut().zip(&amps) {
            *v *= a;
        }
    }
    y
}

/// Returns (input gradient, xi gradient).
pub(crate) fn lhuc_backward(x: &Matrix, xi: &[f64], dy: &Matrix) -> (Matrix, Vec<f64>) {
    let s: Vec<f64> = xi.iter().map(|&v| sigmoid(v)).collect();
    let mut dx = dy.clone();
    let mut dxi = vec![0.0; xi.len()];
    for t in 0..x.rows() {
        let xr = x.row(t);
        let dyr = dy.row(t);
        let dxr = dx.row_mut(t);
        for j in 0..xi.len() {
            dxr[j] *= 2.0 * s[j];
            dxi[j] += dyr[j] * xr[j];
        }
    }
    for j in 0..xi.len() {
        dxi[j] *= 2.0 * s[j] * (1.0 - s[j]);
    }
    (dx, dxi)
}

#[inline]
fn clamp_frame(t: usize, offset: i32, frames: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, frames as i64 - 1) as usize
}

pub(crate) fn splice_forward(x: &Matrix, offsets: &[i32]) -> Matrix {
    let d = x.cols();
    let frames = x.rows();
    let mut y = Matrix::zeros(frames, d * offsets.len());
    for t in 0..frames {
        let yr = y.row_mut(t);
        for (k, &o) in offsets.iter().enumerate() {
            yr[k * d..(k + 1) * d].copy_from_slice(x.row(clamp_frame(t, o, frames)));
        }
    }
    y
}

pub(crate) fn splice_backward(dy: &Matrix, in_dim: usize, offsets: &[i32]) -> Matrix {
    let frames = dy.rows();
    let mut dx = Matrix::zeros(frames, in_dim);
    for t in 0..frames {
        for (k, &o) in offsets.iter().enumerate() {
            let src = clamp_frame(t, o, frames);
            let g = &dy.row(t)[k * in_dim..(k + 1) * in_dim];
            axpy(1.0, g, dx.row_mut(src));
        }
    }
    dx
}

pub(crate) fn online_forward(x: &Matrix, state: Option<&OnlineAvgState>) -> Result<Matrix> {
    let m = match state {
        Some(s) => s.peek(x)?,
        None => OnlineAvgState::new(x.cols(), 1.0)?.peek(x)?,
    };
    Ok(Matrix::row_vector(&m))
}

/// History is a constant: only the current segment's frames receive gradient.
pub(crate) fn online_backward(frames: usize, state: Option<&OnlineAvgState>, dy: &Matrix) -> Matrix {
    let denom = match state {
        Some(s) => s.denominator(frames),
        None => frames as f64,
    };
    let mut dx = Matrix::zeros(frames, dy.cols());
    let g: Vec<f64> = dy.row(0).iter().map(|v| v / denom).collect();
    for t in 0..frames {
        dx.row_mut(t).copy_from_slice(&g);
    }
    dx
}
