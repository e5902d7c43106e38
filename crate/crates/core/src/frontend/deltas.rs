use crate::nn::Matrix;

/// Appends first-order deltas computed by regression over +/-2 frames with
/// edge clamping: `d_t = sum_{n=1..2} n (c_{t+n} - c_{t-n}) / 10`.
pub fn append_deltas(frames: &Matrix) -> Matrix {
    let (t_len, f) = frames.shape();
    let mut out = Matrix::zeros(t_len, 2 * f);
    let last = t_len as i64 - 1;
    let at = |t: i64| frames.row(t.clamp(0, last.max(0)) as usize);
    for t in 0..t_len {
        let ti = t as i64;
        let (p1, m1, p2, m2) = (at(ti + 1), at(ti - 1), at(ti + 2), at(ti - 2));
        let row = out.row_mut(t);
        row[..f].copy_from_slice(frames.row(t));
        for j in 0..f {
            row[f + j] = ((p1[j] - m1[j]) + 2.0 * (p2[j] - m2[j])) / 10.0;
        }
    }
    out
}
