//! Singular value decomposition of log-Mel windows and spectral basis
//! selection.
//!
//! A window is arranged as an `F x T` matrix (mel bins by frames) so the
//! left singular vectors are length-`F` spectral shapes. The decomposition is
//! a one-sided Jacobi iteration operating on whichever orientation has more
//! rows than columns.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::matrix::{dot, norm};
use crate::nn::Matrix;

/// Off-diagonal convergence threshold, relative to the column norms.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 60;

/// Singular values at or below `RANK_TOLERANCE * sigma_max` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

const SIGN_TIE: f64 = 1e-9;

/// `S = U diag(sigma) Vt` with `U: F x r`, `Vt: r x T`, `r = min(F, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
    pub sweeps: usize,
}

impl SpectralDecomposition {
    pub fn rank(&self) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma
            .iter()
            .filter(|&&s| s > 0.0 && s > RANK_TOLERANCE * top)
            .count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let (f, r) = self.u.shape();
        let t = self.vt.cols();
        let mut out = Matrix::zeros(f, t);
        for i in 0..f {
            let row = out.row_mut(i);
            for k in 0..r {
                let c = self.u.get(i, k) * self.sigma[k];
                if c != 0.0 {
                    crate::nn::matrix::axpy(c, self.vt.row(k), row);
                }
            }
        }
        out
    }
}

/// Top-`d` spectral bases. Missing ranks are zero vectors with `valid = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasisSet {
    pub bases: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub valid: Vec<bool>,
}

impl SpectralBasisSet {
    pub fn d(&self) -> usize {
        self.bases.len()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Index of the largest-magnitude entry, taking the first one among
/// near-ties so that the choice survives rounding noise.
fn dominant_index(v: &[f64]) -> Option<usize> {
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return None;
    }
    v.iter().position(|x| x.abs() >= peak * (1.0 - SIGN_TIE))
}

/// Flips `v` so that its dominant entry is positive. Returns whether it flipped.
pub fn normalize_sign(v: &mut [f64]) -> bool {
    match dominant_index(v) {
        Some(i) if v[i] < 0.0 => {
            v.iter_mut().for_each(|x| *x = -*x);
            true
        }
        _ => false,
    }
}

type JacobiOutput = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, usize);

/// One-sided Jacobi on the columns of an `m x n` matrix with `m >= n`.
/// Returns `(left vectors as columns, sigma, right vectors as columns, sweeps)`
/// sorted by descending sigma. Left vectors of zero singular values are left
/// as zero columns.
fn jacobi_columns(mut cols: Vec<Vec<f64>>) -> JacobiOutput {
    let n = cols.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    if sweeps == MAX_SWEEPS {
        log::warn!("Jacobi SVD stopped after {MAX_SWEEPS} sweeps without full convergence");
    }
    let mut sigma: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let top = order.first().map(|&i| sigma[i]).unwrap_or(0.0);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut sorted_sigma = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        if s > 0.0 && s > RANK_TOLERANCE * top {
            left.push(cols[j].iter().map(|x| x / s).collect());
            sorted_sigma.push(s);
        } else {
            left.push(vec![0.0; cols[j].len()]);
            sorted_sigma.push(if s > 0.0 { s } else { 0.0 });
        }
        right.push(std::mem::take(&mut v[j]));
    }
    sigma.clear();
    (left, sorted_sigma, right, sweeps)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (a, b) = (&mut lo[p], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Replaces zero columns with unit vectors orthogonal to every other column
/// (modified Gram-Schmidt against the standard basis).
fn complete_orthonormal(cols: &mut [Vec<f64>]) {
    let m = cols.first().map_or(0, Vec::len);
    let mut next_axis = 0;
    for j in 0..cols.len() {
        if norm(&cols[j]) > 0.5 {
            continue;
        }
        while next_axis < m {
            let mut cand = vec![0.0; m];
            cand[next_axis] = 1.0;
            next_axis += 1;
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k != j && norm(other) > 0.5 {
                        let proj = dot(&cand, other);
                        crate::nn::matrix::axpy(-proj, other, &mut cand);
                    }
                }
            }
            let nrm = norm(&cand);
            if nrm > 1e-6 {
                cand.iter_mut().for_each(|x| *x /= nrm);
                cols[j] = cand;
                break;
            }
        }
    }
}

/// Decomposes an `F x T` spectral window.
pub fn svd_spectrum(s: &Matrix) -> Result<SpectralDecomposition> {
    let (f, t) = s.shape();
    if f == 0 || t == 0 {
        return Err(Error::data("cannot decompose an empty window"));
    }
    if !s.is_finite() {
        return Err(Error::data("window contains non-finite values"));
    }
    let r = f.min(t);
    // Columns of the tall orientation.
    let tall_is_s = f >= t;
    let cols: Vec<Vec<f64>> = if tall_is_s {
        (0..t).map(|j| s.column(j)).collect()
    } else {
        (0..f).map(|i| s.row(i).to_vec()).collect()
    };
    let (mut left, sigma, right, sweeps) = jacobi_columns(cols);
    complete_orthonormal(&mut left);
    // In the tall orientation `left` spans the mel axis; otherwise the right
    // vectors do.
    let (mut u_cols, mut v_cols) = if tall_is_s { (left, right) } else { (right, left) };
    for (uc, vc) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        if normalize_sign(uc) {
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut u = Matrix::zeros(f, r);
    let mut vt = Matrix::zeros(r, t);
    for k in 0..r {
        for (i, &x) in u_cols[k].iter().enumerate().take(f) {
            u.set(i, k, x);
        }
        vt.row_mut(k).copy_from_slice(&v_cols[k][..t]);
    }
    Ok(SpectralDecomposition {
        u,
        sigma: sigma[..r].to_vec(),
        vt,
        sweeps,
    })
}

/// Keeps the top `d` left singular vectors, zero-padding past the numerical rank.
pub fn select_bases(dec: &SpectralDecomposition, d: usize) -> Result<SpectralBasisSet> {
    if d == 0 {
        return Err(Error::config("number of spectral bases must be at least 1"));
    }
    let f = dec.u.rows();
    let rank = dec.rank();
    let mut out = SpectralBasisSet {
        bases: Vec::with_capacity(d),
        sigma: Vec::with_capacity(d),
        valid: Vec::with_capacity(d),
    };
    for k in 0..d {
        if k < rank {
            let mut b = dec.u.column(k);
            normalize_sign(&mut b);
            out.bases.push(b);
            out.sigma.push(dec.sigma[k]);
            out.valid.push(true);
        } else {
            out.bases.push(vec![0.0; f]);
            out.sigma.push(0.0);
            out.valid.push(false);
        }
    }
    Ok(out)
}

/// Concatenates the bases into one classifier input vector of length `d * F`.
pub fn basis_input_vector(bs: &SpectralBasisSet) -> Vec<f64> {
    bs.bases.concat()
}

/// Spectral basis input for frames `range` of a `T x F` log-Mel matrix.
pub fn window_basis_input(logmel: &Matrix, range: Range<usize>, d: usize) -> Result<Vec<f64>> {
    if range.is_empty() || range.end > logmel.rows() {
        return Err(Error::data(format!(
            "window {range:?} outside utterance of {} frames",
            logmel.rows()
        )));
    }
    let window = logmel.slice_rows(range.start, range.end).transpose();
    let dec = svd_spectrum(&window)?;
    Ok(basis_input_vector(&select_bases(&dec, d)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn diagonal() {
        let s = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let dec = svd_spectrum(&s).unwrap();
        assert!(close(&dec.sigma, &[2.0, 1.0], 1e-12));
        let bs = select_bases(&dec, 2).unwrap();
        assert!(close(&bs.bases[0], &[1.0, 0.0], 1e-12));
        assert!(close(&bs.bases[1], &[0.0, 1.0], 1e-12));
    }

    #[test]
    fn rank_one_symmetric() {
        let s = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let dec = svd_spectrum(&s).unwrap();
        assert!(close(&dec.sigma, &[2.0, 0.0], 1e-12));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&dec.u.column(0), &[h, h], 1e-12));
        let utu = dec.u.transpose().matmul(&dec.u).unwrap();
        assert!(close(utu.data(), Matrix::identity(2).data(), 1e-12));
        assert!(close(dec.reconstruct().data(), s.data(), 1e-12));
        let bs = select_bases(&dec, 2).unwrap();
        assert_eq!(bs.valid, vec![true, false]);
    }

    #[test]
    fn single_frame_window() {
        let frame = [3.0, -4.0, 0.0];
        let s = Matrix::from_vec(3, 1, frame.to_vec()).unwrap();
        let bs = select_bases(&svd_spectrum(&s).unwrap(), 3).unwrap();
        assert!(close(&bs.bases[0], &[-0.6, 0.8, 0.0], 1e-12));
        assert_eq!(bs.valid, vec![true, false, false]);
        assert!(bs.bases[1].iter().chain(&bs.bases[2]).all(|&x| x == 0.0));
    }

    #[test]
    fn concatenation_and_padding() {
        let bs = SpectralBasisSet {
            bases: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            sigma: vec![1.0, 1.0],
            valid: vec![true, true],
        };
        assert_eq!(basis_input_vector(&bs), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let padded = SpectralBasisSet {
            bases: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            sigma: vec![1.0, 0.0],
            valid: vec![true, false],
        };
        assert_eq!(basis_input_vector(&padded), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_d_rejected() {
        let dec = svd_spectrum(&Matrix::identity(2)).unwrap();
        assert!(matches!(select_bases(&dec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let s = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(matches!(svd_spectrum(&s), Err(Error::Data(_))));
    }

    #[test]
    fn wide_and_zero_matrices() {
        let s = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [2.0, 0.5, -1.0, 0.0]]).unwrap();
        let dec = svd_spectrum(&s).unwrap();
        assert_eq!(dec.u.shape(), (2, 2));
        assert_eq!(dec.vt.shape(), (2, 4));
        assert!(close(dec.reconstruct().data(), s.data(), 1e-12));
        let z = svd_spectrum(&Matrix::zeros(3, 2)).unwrap();
        let utu = z.u.transpose().matmul(&z.u).unwrap();
        assert!(close(utu.data(), Matrix::identity(2).data(), 1e-12));
        assert_eq!(z.rank(), 0);
    }
}
