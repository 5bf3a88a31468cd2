//! Forward kernels shared between tape ops and the plain (non-recorded)
//! numerical code, so both paths produce bitwise identical values.

use super::tensor::Tensor;

/// Denominator guard for divisions and norms.
pub const EPS: f64 = 1e-12;

/// Pushes a denominator away from zero by [`EPS`], keeping its sign.
#[inline]
pub fn guard(d: f64) -> f64 {
    if d >= 0.0 {
        d + EPS
    } else {
        d - EPS
    }
}

/// `C = A·B` for row-major slices, overwriting `c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_strided(m, k, n, a, (k, 1), b, (n, 1), c, 0.0);
}

/// General product with explicit (row, col) strides for `a` and `b`;
/// `c` is row-major `m×n` and receives `beta·c + a·b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches with the given
    // strides (row/col strides describe dense m×k, k×n and m×n layouts).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise L2 norms.
pub fn row_norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Rows scaled to unit norm, `x / (‖x‖ + ε)`.
pub fn normalize_rows(x: &Tensor) -> Tensor {
    let norms = row_norms(x);
    let cols = x.cols();
    let mut out = x.clone();
    for (r, n) in norms.iter().enumerate() {
        let s = 1.0 / (n + EPS);
        for v in &mut out.data_mut()[r * cols..(r + 1) * cols] {
            *v *= s;
        }
    }
    out
}

/// Effective per-row coefficients of a segment mean.
///
/// Row `i` contributes `coef[i]·x_i` to the output row `segments[i]`. Weights
/// are normalized per segment; a segment whose total weight is zero falls back
/// to the plain mean of its members, and an empty segment yields a zero row.
pub fn segment_coefficients(segments: &[usize], weights: &[f64], n_segments: usize) -> Vec<f64> {
    let mut totals = vec![0.0; n_segments];
    let mut counts = vec![0usize; n_segments];
    for (&s, &w) in segments.iter().zip(weights) {
        totals[s] += w;
        counts[s] += 1;
    }
    segments
        .iter()
        .zip(weights)
        .map(|(&s, &w)| {
            if totals[s] > 0.0 {
                w / totals[s]
            } else {
                1.0 / counts[s] as f64
            }
        })
        .collect()
}

/// Weighted per-segment mean of the rows of `x`.
pub fn segment_mean(x: &Tensor, segments: &[usize], coef: &[f64], n_segments: usize) -> Tensor {
    let d = x.cols();
    let mut out = Tensor::zeros(n_segments, d);
    let od = out.data_mut();
    for (i, (&s, &c)) in segments.iter().zip(coef).enumerate() {
        if c == 0.0 {
            continue;
        }
        let row = x.row_slice(i);
        for (o, v) in od[s * d..(s + 1) * d].iter_mut().zip(row) {
            *o += c * v;
        }
    }
    out
}

/// Euclidean distances between every row of `a` (`n×d`) and every row of `b` (`k×d`).
pub fn row_distances(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, d) = (a.rows(), b.rows(), a.cols());
    let mut out = Tensor::zeros(n, k);
    let od = out.data_mut();
    for i in 0..n {
        let ai = &a.data()[i * d..(i + 1) * d];
        for l in 0..k {
            let bl = &b.data()[l * d..(l + 1) * d];
            let s: f64 = ai.iter().zip(bl).map(|(x, y)| (x - y) * (x - y)).sum();
            od[i * k + l] = s.sqrt();
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Tensor) -> Tensor {
    let k = z.cols();
    let mut out = z.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}
