//! Dense primitives shared by the solvers: robust scale estimation,
//! soft-thresholding, column projections, spectral norms and the
//! regularised pseudo-inverse.

use crate::error::{Result, SbssError};
use crate::mat::{dot, Mat};

/// Median of a slice, reordering it in place. Even lengths average the two
/// central order statistics.
pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

pub fn median(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    Ok(median_in_place(&mut v.to_vec()))
}

/// Median absolute deviation, `median(|v - median(v)|)`.
pub fn mad(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    let mut buf = v.to_vec();
    let med = median_in_place(&mut buf);
    for x in buf.iter_mut() {
        *x = (*x - med).abs();
    }
    Ok(median_in_place(&mut buf))
}

/// Row-wise [`mad`].
pub fn mad_rows(m: &Mat) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    (0..m.rows()).map(|i| mad(m.row(i))).collect()
}

/// Scalar soft-thresholding, the proximal map of `t·|x|`.
#[inline]
pub fn soft(x: f64, t: f64) -> f64 {
    let mag = x.abs() - t;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

/// Entrywise soft-thresholding with per-entry thresholds.
pub fn soft_threshold(m: &Mat, thresholds: &Mat) -> Result<Mat> {
    m.check_same_shape(thresholds)?;
    if let Some((index, &value)) = thresholds
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, t)| **t < 0.0)
    {
        return Err(SbssError::NegativeThreshold { index, value });
    }
    m.zip_with(thresholds, soft)
}

/// Projects every column onto the unit ℓ2 ball.
pub fn project_columns_ball(a: &Mat) -> Mat {
    let mut out = a.clone();
    for j in 0..a.cols() {
        let norm = a.col_norm(j);
        if norm > 1.0 {
            for i in 0..a.rows() {
                out[(i, j)] /= norm;
            }
        }
    }
    out
}

/// Column normalisation onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub matrix: Mat,
    /// Norm each column was divided by; 1 for zero columns.
    pub scales: Vec<f64>,
    /// Indices of all-zero columns, left untouched.
    pub degenerate: Vec<usize>,
}

pub fn normalize_columns_sphere(a: &Mat) -> Normalized {
    let mut matrix = a.clone();
    let mut scales = Vec::with_capacity(a.cols());
    let mut degenerate = Vec::new();
    for j in 0..a.cols() {
        let norm = a.col_norm(j);
        if norm > 0.0 {
            for i in 0..a.rows() {
                matrix[(i, j)] /= norm;
            }
            scales.push(norm);
        } else {
            scales.push(1.0);
            degenerate.push(j);
        }
    }
    Normalized {
        matrix,
        scales,
        degenerate,
    }
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `MᵀM`, started from the
/// normalised all-ones vector.
pub fn spectral_norm(m: &Mat, tol: f64, max_iter: usize) -> Result<SpectralNorm> {
    if m.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    if !(tol > 0.0) {
        return Err(SbssError::invalid("tol", "must be positive"));
    }
    let start = vec![1.0; m.cols()];
    let (sq, _) = power_iteration(
        m.cols(),
        |v, out| {
            let mv: Vec<f64> = (0..m.rows()).map(|i| dot(m.row(i), v)).collect();
            out.iter_mut().for_each(|o| *o = 0.0);
            for (i, &w) in mv.iter().enumerate() {
                for (o, &mij) in out.iter_mut().zip(m.row(i)) {
                    *o += mij * w;
                }
            }
        },
        &start,
        || largest_column(m),
        tol,
        max_iter,
    );
    Ok(SpectralNorm {
        value: sq.value.max(0.0).sqrt(),
        ..sq
    })
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from `start`. Returns the estimate and the final iterate so the
/// next call can be warm-started.
pub fn top_eigenvalue_psd(
    gram: &Mat,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> (SpectralNorm, Vec<f64>) {
    debug_assert_eq!(gram.rows(), gram.cols());
    power_iteration(
        gram.cols(),
        |v, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(gram.row(i), v);
            }
        },
        start,
        || largest_column(gram),
        tol,
        max_iter,
    )
}

fn largest_column(m: &Mat) -> Vec<f64> {
    let best = (0..m.cols())
        .map(|j| (j, m.col_norm(j)))
        .fold((0, 0.0), |acc, (j, n)| if n > acc.1 { (j, n) } else { acc });
    let mut e = vec![0.0; m.cols()];
    e[best.0] = 1.0;
    e
}

/// Power iteration for a PSD operator. A symmetric start such as the
/// all-ones vector can be an exact eigenvector of a smaller eigenvalue, so a
/// second run from a fixed generic vector is made and the larger Rayleigh
/// quotient kept.
fn power_iteration(
    n: usize,
    apply: impl Fn(&[f64], &mut [f64]),
    start: &[f64],
    fallback_start: impl Fn() -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (SpectralNorm, Vec<f64>) {
    let first = power_iteration_from(n, &apply, start, &fallback_start, tol, max_iter);
    let generic: Vec<f64> = (0..n)
        .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / (k as f64 + 1.5))
        .collect();
    let second = power_iteration_from(n, &apply, &generic, &fallback_start, tol, max_iter);
    let iterations = first.0.iterations + second.0.iterations;
    let (mut best, vec) = if second.0.value > first.0.value { second } else { first };
    best.iterations = iterations;
    (best, vec)
}

/// Single power iteration run; the estimate is the Rayleigh quotient.
fn power_iteration_from(
    n: usize,
    apply: impl Fn(&[f64], &mut [f64]),
    start: &[f64],
    fallback_start: impl Fn() -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (SpectralNorm, Vec<f64>) {
    let mut v = start.to_vec();
    if !normalize(&mut v) {
        v = fallback_start();
        normalize(&mut v);
    }
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    let mut retried = false;
    for it in 1..=max_iter.max(1) {
        apply(&v, &mut w);
        let rayleigh = dot(&v, &w);
        if !normalize(&mut w) {
            if !retried {
                // start vector orthogonal to the range
                retried = true;
                v = fallback_start();
                normalize(&mut v);
                continue;
            }
            return (
                SpectralNorm {
                    value: 0.0,
                    iterations: it,
                    converged: true,
                },
                v,
            );
        }
        std::mem::swap(&mut v, &mut w);
        let change = (rayleigh - estimate).abs();
        estimate = rayleigh;
        if it > 1 && change <= tol * estimate.abs() {
            return (
                SpectralNorm {
                    value: estimate,
                    iterations: it,
                    converged: true,
                },
                v,
            );
        }
    }
    (
        SpectralNorm {
            value: estimate,
            iterations: max_iter,
            converged: false,
        },
        v,
    )
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
        true
    } else {
        false
    }
}

/// Moore–Penrose pseudo-inverse through the normal equations, with `ridge·I`
/// added to the smaller Gram matrix.
pub fn pseudo_inverse(m: &Mat, ridge: f64) -> Result<Mat> {
    if m.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    if !(ridge >= 0.0) {
        return Err(SbssError::invalid("ridge", "must be non-negative"));
    }
    if m.rows() >= m.cols() {
        // (MᵀM + rI)⁻¹ Mᵀ
        let gram = m.t_matmul(m)?;
        let inv = spd_inverse(&gram, ridge)?;
        inv.matmul_t(m)
    } else {
        // Mᵀ (MMᵀ + rI)⁻¹
        let gram = m.matmul_t(m)?;
        let inv = spd_inverse(&gram, ridge)?;
        m.t_matmul(&inv)
    }
}

/// Pseudo-inverse with the ridge expressed relative to the largest diagonal
/// entry of the Gram matrix.
pub fn pseudo_inverse_relative(m: &Mat, relative_ridge: f64) -> Result<Mat> {
    let max_diag = if m.rows() >= m.cols() {
        (0..m.cols()).map(|j| m.col_norm(j).powi(2)).fold(0.0, f64::max)
    } else {
        (0..m.rows()).map(|i| dot(m.row(i), m.row(i))).fold(0.0, f64::max)
    };
    pseudo_inverse(m, relative_ridge * max_diag)
}

/// Inverse of `gram + ridge·I` by Cholesky factorisation.
fn spd_inverse(gram: &Mat, ridge: f64) -> Result<Mat> {
    let n = gram.rows();
    let max_diag = (0..n).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let floor = (max_diag + ridge) * f64::EPSILON * (4 * n) as f64;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = gram[(j, j)] + ridge;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(SbssError::RankDeficient);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = gram[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    // Solve L Lᵀ X = I column by column.
    let mut inv = Mat::zeros(n, n);
    let mut y = vec![0.0; n];
    for c in 0..n {
        for i in 0..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * inv[(k, c)];
            }
            inv[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(inv)
}
