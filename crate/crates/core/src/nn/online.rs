//! Online averaging with exponential forgetting of speaker history.
//!
//! For segment `i` of speaker `s` with hidden frames `h_1..h_T`:
//!
//! ```text
//! m = (sum_t h_t + alpha * G) / (T + alpha * N)
//! G <- sum_t h_t + alpha * G
//! N <- T + alpha * N
//! ```
//!
//! `G` and `N` start at zero for a new speaker, so the first segment yields its
//! own mean. With `alpha = 1` the output is the cumulative mean of everything
//! seen so far; with `alpha = 0` it is the current segment mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineAvgState {
    /// Accumulated (decayed) sum of hidden vectors.
    pub sum: Vec<f64>,
    /// Accumulated (decayed) frame count.
    pub count: f64,
    pub alpha: f64,
}

impl OnlineAvgState {
    pub fn new(dim: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self {
            sum: vec![0.0; dim],
            count: 0.0,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|g| *g = 0.0);
        self.count = 0.0;
    }

    /// Denominator `T + alpha * N` for a segment of `frames` frames.
    pub fn denominator(&self, frames: usize) -> f64 {
        frames as f64 + self.alpha * self.count
    }

    /// Average for a segment without mutating the state.
    pub fn peek(&self, segment: &Matrix) -> Result<Vec<f64>> {
        if segment.cols() != self.dim() {
            return Err(Error::config(format!(
                "online average expects {} dims, segment has {}",
                self.dim(),
                segment.cols()
            )));
        }
        let denom = self.denominator(segment.rows());
        let mut m: Vec<f64> = self.sum.iter().map(|g| self.alpha * g).collect();
        for row in segment.iter_rows() {
            crate::nn::matrix::axpy(1.0, row, &mut m);
        }
        if denom > 0.0 {
            m.iter_mut().for_each(|v| *v /= denom);
        }
        Ok(m)
    }

    /// Folds a segment into the state and returns its averaged vector.
    ///
    /// An empty segment leaves the state untouched and returns `None`.
    pub fn update(&mut self, segment: &Matrix) -> Result<Option<Vec<f64>>> {
        if segment.rows() == 0 {
            return Ok(None);
        }
        let m = self.peek(segment)?;
        let mut seg_sum = vec![0.0; self.dim()];
        for row in segment.iter_rows() {
            crate::nn::matrix::axpy(1.0, row, &mut seg_sum);
        }
        for (g, s) in self.sum.iter_mut().zip(&seg_sum) {
            *g = s + self.alpha * *g;
        }
        self.count = segment.rows() as f64 + self.alpha * self.count;
        Ok(Some(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn cold_start_is_segment_mean() {
        let mut s = OnlineAvgState::new(1, 0.9).unwrap();
        let m = s.update(&column(&[1.0, 3.0])).unwrap().unwrap();
        assert_eq!(m, vec![2.0]);
        assert_eq!(s.sum, vec![4.0]);
        assert_eq!(s.count, 2.0);
    }

    #[test]
    fn worked_substitution() {
        let mut s = OnlineAvgState {
            sum: vec![10.0],
            count: 5.0,
            alpha: 0.9,
        };
        let m = s.update(&column(&[1.0, 2.0, 3.0])).unwrap().unwrap();
        assert!((m[0] - 2.0).abs() < 1e-12);
        assert!((s.sum[0] - 15.0).abs() < 1e-12);
        assert!((s.count - 7.5).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_forgets_history() {
        let mut s = OnlineAvgState {
            sum: vec![100.0],
            count: 1.0,
            alpha: 0.0,
        };
        let m = s.update(&column(&[4.0, 6.0])).unwrap().unwrap();
        assert_eq!(m, vec![5.0]);
    }

    #[test]
    fn empty_segment_is_skipped() {
        let mut s = OnlineAvgState::new(2, 0.5).unwrap();
        let before = s.clone();
        assert!(s.update(&Matrix::zeros(0, 2)).unwrap().is_none());
        assert_eq!(s, before);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        assert!(OnlineAvgState::new(1, 1.5).is_err());
        assert!(OnlineAvgState::new(1, -0.1).is_err());
    }
}
