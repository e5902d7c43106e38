use serde::{Deserialize, Serialize};

use crate::nn::Matrix;

/// Dimensions whose standard deviation falls below this are only mean-centred.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmvnScope {
    Utterance,
    Speaker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    /// Population standard deviation per dimension.
    pub std: Vec<f64>,
    pub frames: usize,
}

impl CmvnStats {
    pub fn accumulate<'a>(parts: impl IntoIterator<Item = &'a Matrix>) -> CmvnStats {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        let parts: Vec<&Matrix> = parts.into_iter().collect();
        for m in &parts {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
            }
            for row in m.iter_rows() {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
            n += m.rows();
        }
        let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        let mean: Vec<f64> = sum.iter().map(|s| s * inv).collect();
        // second pass for numerically sound variance
        sq.resize(mean.len(), 0.0);
        for m in &parts {
            for row in m.iter_rows() {
                for ((q, &v), mu) in sq.iter_mut().zip(row).zip(&mean) {
                    *q += (v - mu) * (v - mu);
                }
            }
        }
        CmvnStats {
            mean,
            std: sq.iter().map(|q| (q * inv).sqrt()).collect(),
            frames: n,
        }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for t in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(t).iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= mu;
                if *sd > MIN_STD {
                    *v /= sd;
                }
            }
        }
        out
    }
}

/// Normalizes each utterance with statistics over the requested scope.
/// `groups[i]` is the speaker of `utterances[i]` (ignored for utterance scope).
pub fn apply_cmvn(utterances: &[Matrix], groups: &[&str], scope: CmvnScope) -> Vec<(Matrix, CmvnStats)> {
    match scope {
        CmvnScope::Utterance => utterances
            .iter()
            .map(|u| {
                let s = CmvnStats::accumulate([u]);
                (s.apply(u), s)
            })
            .collect(),
        CmvnScope::Speaker => {
            let mut by_speaker: std::collections::BTreeMap<&str, Vec<&Matrix>> = Default::default();
            for (u, g) in utterances.iter().zip(groups) {
                by_speaker.entry(g).or_default().push(u);
            }
            let stats: std::collections::BTreeMap<&str, CmvnStats> = by_speaker
                .into_iter()
                .map(|(k, v)| (k, CmvnStats::accumulate(v)))
                .collect();
            utterances
                .iter()
                .zip(groups)
                .map(|(u, g)| {
                    let s = stats[g].clone();
                    (s.apply(u), s)
                })
                .collect()
        }
    }
}
