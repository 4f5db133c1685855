//! GMCA warm-up: projected alternating least squares with automatic
//! MAD-based thresholds in the starlet domain and a linearly decreasing
//! threshold multiplier.

use crate::error::{Result, SbssError, Stage};
use crate::kernel::{mad, normalize_columns_sphere, pseudo_inverse_relative, soft};
use crate::mat::Mat;
use crate::objective::accurate_sum;
use crate::result::{Diagnostics, SeparationResult, TraceEntry};
use crate::rng::{self, streams, SbssRng};
use crate::starlet::{starlet_inverse, Geometry, Starlet};
use serde::{Deserialize, Serialize};

/// Ridge used inside the solvers, relative to the largest Gram diagonal.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmcaConfig {
    pub n_iters: usize,
    pub k_final: f64,
    pub k_start: f64,
    /// Relative ridge for the pseudo-inverses.
    pub ridge: f64,
    /// Seeds the re-draw of collapsed mixing columns.
    pub rng_seed: u64,
}

impl Default for GmcaConfig {
    fn default() -> Self {
        Self {
            n_iters: 100,
            k_final: 3.0,
            k_start: 30.0,
            ridge: DEFAULT_RELATIVE_RIDGE,
            rng_seed: 0,
        }
    }
}

impl GmcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 {
            return Err(SbssError::invalid("gmca.n_iters", "must be at least 1"));
        }
        if !(self.k_final >= 0.0) || !(self.k_start >= self.k_final) {
            return Err(SbssError::invalid(
                "gmca.k_start",
                format!("need k_start ≥ k_final ≥ 0, got {} and {}", self.k_start, self.k_final),
            ));
        }
        if !(self.ridge >= 0.0) {
            return Err(SbssError::invalid("gmca.ridge", "must be non-negative"));
        }
        Ok(())
    }

    /// Threshold multiplier at iteration `it`, linear from `k_start` to `k_final`.
    pub fn k_at(&self, it: usize) -> f64 {
        if self.n_iters <= 1 {
            return self.k_final;
        }
        let frac = it as f64 / (self.n_iters - 1) as f64;
        self.k_start + (self.k_final - self.k_start) * frac
    }
}

/// Least-squares sources followed by per-scale soft-thresholding at
/// `k · MAD` of each detail plane. Returns the sources and the `n × n_scales`
/// thresholds.
pub fn gmca_update_s(
    x: &Mat,
    a: &Mat,
    k: f64,
    transform: &Starlet,
    ridge: f64,
) -> Result<(Mat, Mat)> {
    let geometry = transform.geometry();
    geometry.check_sources(x)?;
    if a.rows() != x.rows() {
        return Err(SbssError::shape(format!(
            "mixing has {} rows, data has {}",
            a.rows(),
            x.rows()
        )));
    }
    if a.max_abs() == 0.0 {
        return Err(SbssError::ZeroMixing);
    }
    let s_ls = pseudo_inverse_relative(a, ridge)?.matmul(x)?;
    let n = a.cols();
    let mut s = Mat::zeros(n, geometry.pixels());
    let mut thresholds = Mat::zeros(n, geometry.n_scales);
    for i in 0..n {
        let mut pyramid = transform.forward(s_ls.row(i))?;
        for (j, plane) in pyramid.details.iter_mut().enumerate() {
            let tau = k * mad(plane)?;
            thresholds[(i, j)] = tau;
            plane.iter_mut().for_each(|c| *c = soft(*c, tau));
        }
        s.row_mut(i).copy_from_slice(&starlet_inverse(&pyramid));
    }
    Ok((s, thresholds))
}

/// Least-squares mixing `X S⁺` projected onto unit-norm columns. Columns
/// belonging to all-zero sources, or collapsing to zero, are re-drawn from
/// `rng`. Returns the matrix and the number of re-drawn columns.
pub fn gmca_update_a(x: &Mat, s: &Mat, ridge: f64, rng: &mut SbssRng) -> Result<(Mat, usize)> {
    if s.cols() != x.cols() {
        return Err(SbssError::shape(format!(
            "sources have {} samples, data has {}",
            s.cols(),
            x.cols()
        )));
    }
    let active: Vec<usize> = (0..s.rows())
        .filter(|&i| s.row(i).iter().any(|&v| v != 0.0))
        .collect();
    if active.is_empty() {
        return Err(SbssError::SeparationCollapsed);
    }
    let s_active = Mat::from_fn(active.len(), s.cols(), |r, c| s[(active[r], c)]);
    let a_active = x.matmul(&pseudo_inverse_relative(&s_active, ridge)?)?;
    let mut a = Mat::zeros(x.rows(), s.rows());
    for (r, &i) in active.iter().enumerate() {
        for row in 0..x.rows() {
            a[(row, i)] = a_active[(row, r)];
        }
    }
    let normalized = normalize_columns_sphere(&a);
    let mut a = normalized.matrix;
    for &j in &normalized.degenerate {
        let fresh = rng::random_unit_columns(x.rows(), 1, rng);
        for row in 0..x.rows() {
            a[(row, j)] = fresh[(row, 0)];
        }
    }
    Ok((a, normalized.degenerate.len()))
}

/// Runs `n_iters` GMCA iterations from `a0`.
pub fn run_gmca(x: &Mat, geometry: Geometry, config: &GmcaConfig, a0: &Mat) -> Result<SeparationResult> {
    config.validate()?;
    if x.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    geometry.check_sources(x)?;
    if a0.rows() != x.rows() || a0.cols() == 0 {
        return Err(SbssError::shape(format!(
            "initial mixing is {}x{}, data has {} observations",
            a0.rows(),
            a0.cols(),
            x.rows()
        )));
    }
    let transform = Starlet::new(geometry)?;
    let mut rng = rng::stream(config.rng_seed, streams::REDRAW);
    let mut a = a0.clone();
    let mut s = Mat::zeros(a0.cols(), x.cols());
    let mut thresholds = Mat::zeros(a0.cols(), geometry.n_scales);
    let mut history = Vec::with_capacity(config.n_iters);
    let mut trace = Vec::with_capacity(config.n_iters);
    let mut diagnostics = Diagnostics::default();

    for it in 0..config.n_iters {
        let k = config.k_at(it);
        let (s_new, tau) = gmca_update_s(x, &a, k, &transform, config.ridge)
            .map_err(|e| e.at_iteration(Stage::Warmup, it))?;
        let (a_new, redrawn) = gmca_update_a(x, &s_new, config.ridge, &mut rng)
            .map_err(|e| e.at_iteration(Stage::Warmup, it))?;
        diagnostics.degenerate_columns += redrawn;
        s = s_new;
        a = a_new;
        trace.push(gmca_trace(x, &a, &s, &tau, &transform, it)?);
        history.push(tau.clone());
        thresholds = tau;
    }

    Ok(SeparationResult {
        a,
        s,
        final_thresholds: thresholds,
        threshold_history: history,
        trace,
        iterations: config.n_iters,
        diagnostics,
        warmup: None,
    })
}

/// Fidelity plus the ℓ1 penalty with the current thresholds as weights.
fn gmca_trace(
    x: &Mat,
    a: &Mat,
    s: &Mat,
    tau: &Mat,
    transform: &Starlet,
    it: usize,
) -> Result<TraceEntry> {
    let fidelity = crate::objective::data_fidelity(x, a, s)?;
    let g = transform.geometry();
    let details = crate::starlet::detail_matrix(s, transform)?;
    let p = g.pixels();
    let penalty = accurate_sum((0..s.rows()).flat_map(|i| {
        let row = details.row(i);
        (0..g.n_scales).map(move |j| tau[(i, j)] * row[j * p..(j + 1) * p].iter().map(|c| c.abs()).sum::<f64>())
    }));
    Ok(TraceEntry {
        stage: Stage::Warmup,
        iteration: it,
        fidelity,
        penalty,
        objective: fidelity + penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn sparse_sources(n: usize, g: Geometry, seed: u64) -> Mat {
        use rand::Rng;
        let mut r = rng::stream(seed, 9);
        Mat::from_fn(n, g.pixels(), |_, _| {
            if r.random::<f64>() < 0.05 {
                r.random_range(-10.0..10.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn k_schedule_is_linear_and_ends_at_k_final() {
        let c = GmcaConfig {
            n_iters: 5,
            k_start: 11.0,
            k_final: 3.0,
            ..Default::default()
        };
        let ks: Vec<f64> = (0..5).map(|i| c.k_at(i)).collect();
        assert_eq!(ks, vec![11.0, 9.0, 7.0, 5.0, 3.0]);
        let one = GmcaConfig { n_iters: 1, ..c };
        assert_eq!(one.k_at(0), 3.0);
        assert!(GmcaConfig { k_start: 1.0, ..Default::default() }.validate().is_err());
        assert!(GmcaConfig { n_iters: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn update_s_exact_with_zero_threshold() {
        let g = Geometry::new(16, 16, 2).unwrap();
        let t = Starlet::new(g).unwrap();
        let a = Mat::from_rows(&[vec![0.8, 0.6], vec![0.6, -0.8]]).unwrap();
        let s = sparse_sources(2, g, 1);
        let x = a.matmul(&s).unwrap();
        let (est, tau) = gmca_update_s(&x, &a, 0.0, &t, DEFAULT_RELATIVE_RIDGE).unwrap();
        assert!(est.max_abs_diff(&s) < 1e-8);
        assert_eq!(tau.max_abs(), 0.0);
    }

    #[test]
    fn update_s_of_zero_data_is_zero() {
        let g = Geometry::new(8, 8, 2).unwrap();
        let t = Starlet::new(g).unwrap();
        let a = Mat::identity(2);
        let (s, tau) = gmca_update_s(&Mat::zeros(2, 64), &a, 3.0, &t, 0.0).unwrap();
        assert_eq!(s.max_abs(), 0.0);
        assert_eq!(tau.max_abs(), 0.0);
        assert!(matches!(
            gmca_update_s(&Mat::zeros(2, 64), &Mat::zeros(2, 2), 3.0, &t, 0.0),
            Err(SbssError::ZeroMixing)
        ));
    }

    #[test]
    fn update_a_recovers_mixing_and_normalizes() {
        let g = Geometry::new(16, 16, 2).unwrap();
        let a = Mat::from_rows(&[vec![0.8, 0.6], vec![0.6, -0.8]]).unwrap();
        let s = sparse_sources(2, g, 2);
        let x = a.matmul(&s).unwrap();
        let mut r = rng::stream(0, streams::REDRAW);
        let (est, redrawn) = gmca_update_a(&x, &s, DEFAULT_RELATIVE_RIDGE, &mut r).unwrap();
        assert_eq!(redrawn, 0);
        assert!(est.max_abs_diff(&a) < 1e-8);

        let noisy = x.add(&standard_normal(2, 256, &mut r)).unwrap();
        let (est, _) = gmca_update_a(&noisy, &s, DEFAULT_RELATIVE_RIDGE, &mut r).unwrap();
        for j in 0..2 {
            assert!((est.col_norm(j) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn update_a_orthonormal_rows() {
        // rows of S orthonormal: S⁺ = Sᵀ
        let s = Mat::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.6, 0.8, 0.0]]).unwrap();
        let x = Mat::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.0, 2.0]]).unwrap();
        let mut r = rng::stream(0, 1);
        let (est, _) = gmca_update_a(&x, &s, 0.0, &mut r).unwrap();
        let expected = normalize_columns_sphere(&x.matmul_t(&s).unwrap()).matrix;
        assert!(est.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn update_a_handles_zero_rows() {
        let s = Mat::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0; 3]]).unwrap();
        let x = Mat::from_rows(&[vec![1.0, 2.0, 0.0], vec![2.0, 4.0, 0.0]]).unwrap();
        let mut r = rng::stream(3, 1);
        let (a, redrawn) = gmca_update_a(&x, &s, 0.0, &mut r).unwrap();
        assert_eq!(redrawn, 1);
        assert!((a.col_norm(1) - 1.0).abs() < 1e-12);
        assert!(matches!(
            gmca_update_a(&x, &Mat::zeros(2, 3), 0.0, &mut r),
            Err(SbssError::SeparationCollapsed)
        ));
    }

    #[test]
    fn collapse_reports_iteration() {
        let g = Geometry::new(8, 8, 1).unwrap();
        let err = run_gmca(&Mat::zeros(2, 64), g, &GmcaConfig::default(), &Mat::identity(2)).unwrap_err();
        assert!(matches!(
            err,
            SbssError::Iteration { stage: Stage::Warmup, iteration: 0, .. }
        ));
    }

    #[test]
    fn one_iteration_oracle_recovery() {
        let g = Geometry::new(16, 16, 2).unwrap();
        let a = Mat::from_rows(&[vec![0.8, 0.6], vec![0.6, -0.8]]).unwrap();
        let s = sparse_sources(2, g, 4);
        let x = a.matmul(&s).unwrap();
        let cfg = GmcaConfig {
            n_iters: 1,
            k_start: 0.0,
            k_final: 0.0,
            ..Default::default()
        };
        let r = run_gmca(&x, g, &cfg, &a).unwrap();
        assert!(r.s.max_abs_diff(&s) < 1e-8);
        assert!(r.a.max_abs_diff(&a) < 1e-8);
        assert_eq!(r.threshold_history.len(), 1);
    }
}
