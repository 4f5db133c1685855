//! PALM refinement: alternating proximal gradient steps on the sources and
//! the mixing matrix.
//!
//! The source step thresholds the starlet detail coefficients of the
//! gradient point and re-synthesises. Because the starlet frame is
//! redundant, that shortcut is not the exact proximal map of the analysis
//! penalty, so every candidate is checked against the proximal model
//! `‖S − G‖²/(2t) + penalty(S)`. A candidate that does not improve on the
//! current iterate is replaced by the exact proximal map, computed on the
//! dual box-constrained problem with FISTA. Any step accepted this way
//! decreases the objective when `t ≤ 1/L`.

use crate::error::{Result, SbssError, Stage};
use crate::kernel::{mad, project_columns_ball, soft, top_eigenvalue_psd};
use crate::mat::Mat;
use crate::objective::{data_fidelity, penalty_from_details, Penalty};
use crate::result::{Diagnostics, SeparationResult, TraceEntry};
use crate::starlet::{detail_matrix, starlet_inverse, Geometry, Starlet};

/// How the per-source, per-scale regularisation weights `λ` are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdMode {
    /// `λ` re-estimated every iteration from the MAD of the gradient point's
    /// detail coefficients, so that the applied threshold is `k · MAD`.
    RecomputeMad,
    /// Fixed `n × n_scales` weights; the objective is then a fixed function
    /// and the iterates decrease it monotonically.
    Frozen(Mat),
    /// `RecomputeMad` for the first `burn_in` fraction of the iterations,
    /// then frozen at the last estimate.
    MadThenFreeze { burn_in: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalmConfig {
    pub n_iters: usize,
    /// Step-size safety factor in `(0, 1]`.
    pub gamma: f64,
    pub k_mad: f64,
    pub threshold_mode: ThresholdMode,
    /// Reweighting `W` (`n × n_scales·pixels`); `None` means all ones.
    pub weights: Option<Mat>,
    /// Relative objective change that stops a frozen-threshold run when it
    /// holds for [`STALL_WINDOW`] consecutive iterations.
    pub tol_objective: f64,
    /// Relative ridge for the pseudo-inverse used by random initialisation.
    pub ridge: f64,
    pub spectral_tol: f64,
    pub spectral_max_iter: usize,
    /// With fixed thresholds, reject transform-domain thresholding steps
    /// that raise the objective and fall back to the exact proximal map.
    /// Guarantees a monotone objective; without it the step is the plain
    /// threshold-and-resynthesise heuristic.
    pub safeguard: bool,
    /// Dual iterations per exact proximal map (warm-started).
    pub prox_max_iter: usize,
}

pub const STALL_WINDOW: usize = 10;

impl Default for PalmConfig {
    fn default() -> Self {
        Self {
            n_iters: 2000,
            gamma: 0.9,
            k_mad: 3.0,
            threshold_mode: ThresholdMode::RecomputeMad,
            weights: None,
            tol_objective: 1e-8,
            ridge: crate::gmca::DEFAULT_RELATIVE_RIDGE,
            spectral_tol: 1e-10,
            spectral_max_iter: 1000,
            safeguard: true,
            prox_max_iter: 30,
        }
    }
}

impl PalmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(SbssError::invalid("palm.gamma", "must lie in (0, 1]"));
        }
        if !(self.k_mad > 0.0) {
            return Err(SbssError::invalid("palm.k_mad", "must be positive"));
        }
        match &self.threshold_mode {
            ThresholdMode::Frozen(l) if l.as_slice().iter().any(|&v| v < 0.0) => {
                return Err(SbssError::invalid("palm.lambdas", "must be non-negative"));
            }
            ThresholdMode::MadThenFreeze { burn_in } if !(0.0..=1.0).contains(burn_in) => {
                return Err(SbssError::invalid("palm.burn_in", "must lie in [0, 1]"));
            }
            _ => {}
        }
        if !(self.tol_objective >= 0.0) || !(self.spectral_tol > 0.0) {
            return Err(SbssError::invalid("palm.tol", "tolerances must be positive"));
        }
        Ok(())
    }
}

/// Result of one source step.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStep {
    pub s: Mat,
    /// `λ` used for this step (`n × n_scales`).
    pub lambdas: Mat,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Transform-domain thresholding was accepted.
    Thresholded,
    /// The exact proximal map was needed.
    ExactProx,
    /// No improvement found; iterate unchanged.
    Rejected,
}

/// Solver state reused across iterations of one solve.
pub struct Palm<'c> {
    cfg: &'c PalmConfig,
    transform: Starlet,
    weights: Mat,
    mixing_vec: Vec<f64>,
    source_vec: Vec<f64>,
    detail_lipschitz: f64,
    dual: Option<Mat>,
    /// Detail coefficients of the last accepted source iterate.
    cached: Option<(Mat, Mat)>,
    pub diagnostics: Diagnostics,
}

impl<'c> Palm<'c> {
    pub fn new(cfg: &'c PalmConfig, geometry: Geometry, n_sources: usize) -> Result<Self> {
        cfg.validate()?;
        let transform = Starlet::new(geometry)?;
        let weights = match &cfg.weights {
            Some(w) => {
                Penalty::new(Mat::zeros(n_sources, geometry.n_scales), w.clone(), geometry)?;
                w.clone()
            }
            None => Mat::filled(n_sources, geometry.detail_len(), 1.0),
        };
        if let ThresholdMode::Frozen(l) = &cfg.threshold_mode {
            if l.shape() != (n_sources, geometry.n_scales) {
                return Err(SbssError::shape(format!(
                    "frozen lambdas are {}x{}, expected {}x{}",
                    l.rows(),
                    l.cols(),
                    n_sources,
                    geometry.n_scales
                )));
            }
        }
        let detail_lipschitz = detail_operator_norm_sq(&transform);
        Ok(Self {
            cfg,
            transform,
            weights,
            mixing_vec: vec![1.0; n_sources],
            source_vec: vec![1.0; n_sources],
            detail_lipschitz,
            dual: None,
            cached: None,
            diagnostics: Diagnostics::default(),
        })
    }

    fn geometry(&self) -> Geometry {
        self.transform.geometry()
    }

    /// Largest eigenvalue of a small Gram matrix, warm-started.
    fn lipschitz(&mut self, gram: &Mat, mixing: bool) -> f64 {
        let start = if mixing { &self.mixing_vec } else { &self.source_vec };
        let (est, vec) = top_eigenvalue_psd(gram, start, self.cfg.spectral_tol, self.cfg.spectral_max_iter);
        if !est.converged {
            self.diagnostics.spectral_not_converged += 1;
        }
        if mixing {
            self.mixing_vec = vec;
        } else {
            self.source_vec = vec;
        }
        est.value
    }

    fn details_of(&mut self, s: &Mat) -> Result<Mat> {
        if let Some((cached_s, d)) = &self.cached {
            if cached_s == s {
                return Ok(d.clone());
            }
        }
        detail_matrix(s, &self.transform)
    }

    /// Proximal gradient step on the sources. `lambdas = None` re-estimates
    /// them from the MAD of the gradient point.
    pub fn step_s(&mut self, x: &Mat, a: &Mat, s: &Mat, lambdas: Option<&Mat>) -> Result<SourceStep> {
        let g = self.geometry();
        check_shapes(x, a, s, g)?;
        let n = a.cols();
        let gram = a.t_matmul(a)?;
        let lip = self.lipschitz(&gram, true);
        if !(lip > 0.0) {
            return Err(SbssError::ZeroMixing);
        }
        let step = self.cfg.gamma / lip;
        let resid = a.matmul(s)?.sub(x)?;
        let point = s.axpy(-step, &a.t_matmul(&resid)?)?;

        let mut pyramids = Vec::with_capacity(n);
        for i in 0..n {
            pyramids.push(self.transform.forward(point.row(i))?);
        }
        let frozen = lambdas.is_some();
        let lambdas = match lambdas {
            Some(l) => l.clone(),
            None => {
                let mut l = Mat::zeros(n, g.n_scales);
                for (i, p) in pyramids.iter().enumerate() {
                    for (j, plane) in p.details.iter().enumerate() {
                        l[(i, j)] = self.cfg.k_mad * mad(plane)? / step;
                    }
                }
                l
            }
        };
        let penalty = Penalty {
            lambdas: lambdas.clone(),
            weights: self.weights.clone(),
        };
        let thresholds = self.thresholds(&lambdas, step);

        let pix = g.pixels();
        let mut candidate = Mat::zeros(n, pix);
        for (i, mut p) in pyramids.into_iter().enumerate() {
            let tau = thresholds.row(i);
            for (j, plane) in p.details.iter_mut().enumerate() {
                for (c, t) in plane.iter_mut().zip(&tau[j * pix..(j + 1) * pix]) {
                    *c = soft(*c, *t);
                }
            }
            candidate.row_mut(i).copy_from_slice(&starlet_inverse(&p));
        }

        let cand_details = detail_matrix(&candidate, &self.transform)?;
        if !frozen || !self.cfg.safeguard {
            self.cached = Some((candidate.clone(), cand_details));
            return Ok(SourceStep {
                s: candidate,
                lambdas,
                outcome: StepOutcome::Thresholded,
            });
        }

        // Thresholding in a redundant frame is not the exact prox; keep the
        // candidate only if the objective does not go up.
        let current_details = self.details_of(s)?;
        let objective = |sources: &Mat, details: &Mat| -> Result<f64> {
            Ok(data_fidelity(x, a, sources)? + penalty_from_details(details, &penalty, g))
        };
        let current = objective(s, &current_details)?;
        let slack = 8.0 * f64::EPSILON * current.abs();
        let (next, next_details, outcome) = if objective(&candidate, &cand_details)? <= current + slack {
            (candidate, cand_details, StepOutcome::Thresholded)
        } else {
            let exact = self.exact_prox(&point, &thresholds)?;
            let exact_details = detail_matrix(&exact, &self.transform)?;
            if objective(&exact, &exact_details)? <= current + slack {
                self.diagnostics.exact_prox_steps += 1;
                (exact, exact_details, StepOutcome::ExactProx)
            } else {
                self.diagnostics.rejected_steps += 1;
                (s.clone(), current_details, StepOutcome::Rejected)
            }
        };
        self.cached = Some((next.clone(), next_details));
        Ok(SourceStep {
            s: next,
            lambdas,
            outcome,
        })
    }

    /// Per-coefficient thresholds `step · λ · W`.
    fn thresholds(&self, lambdas: &Mat, step: f64) -> Mat {
        let g = self.geometry();
        let pix = g.pixels();
        Mat::from_fn(lambdas.rows(), g.detail_len(), |i, k| {
            step * lambdas[(i, k / pix)] * self.weights[(i, k)]
        })
    }

    /// Exact proximal map of the weighted analysis ℓ1 penalty at `point`,
    /// via FISTA on the dual problem `min ½‖point − Dᵀv‖²` s.t. `|v| ≤ τ`.
    fn exact_prox(&mut self, point: &Mat, thresholds: &Mat) -> Result<Mat> {
        let g = self.geometry();
        let len = g.detail_len();
        let n = point.rows();
        let inv_l = 1.0 / self.detail_lipschitz;
        let mut dual = match self.dual.take() {
            Some(d) if d.shape() == thresholds.shape() => d,
            _ => Mat::zeros(n, len),
        };
        let mut out = Mat::zeros(n, g.pixels());
        let mut primal = vec![0.0; g.pixels()];
        let mut back = vec![0.0; g.pixels()];
        let mut grad = vec![0.0; len];
        for i in 0..n {
            let tau = thresholds.row(i);
            let p = point.row(i);
            let mut v: Vec<f64> = dual.row(i).iter().zip(tau).map(|(v, t)| v.clamp(-t, *t)).collect();
            let mut y = v.clone();
            let mut t_k = 1.0f64;
            for _ in 0..self.cfg.prox_max_iter {
                self.transform.details_adjoint_into(&y, &mut back);
                for ((s, p), b) in primal.iter_mut().zip(p).zip(&back) {
                    *s = p - b;
                }
                self.transform.details_into(&primal, &mut grad);
                let mut change = 0.0;
                let mut scale = 0.0;
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
                let momentum = (t_k - 1.0) / t_next;
                for k in 0..len {
                    let fresh = (y[k] + inv_l * grad[k]).clamp(-tau[k], tau[k]);
                    let delta = fresh - v[k];
                    change += delta * delta;
                    scale += fresh * fresh;
                    y[k] = fresh + momentum * delta;
                    v[k] = fresh;
                }
                t_k = t_next;
                if change <= 1e-24 * scale.max(1e-300) {
                    break;
                }
            }
            self.transform.details_adjoint_into(&v, &mut back);
            for ((o, p), b) in out.row_mut(i).iter_mut().zip(p).zip(&back) {
                *o = p - b;
            }
            dual.row_mut(i).copy_from_slice(&v);
        }
        self.dual = Some(dual);
        Ok(out)
    }

    /// Projected gradient step on the mixing matrix.
    pub fn step_a(&mut self, x: &Mat, a: &Mat, s: &Mat) -> Result<Mat> {
        check_shapes(x, a, s, self.geometry())?;
        let gram = s.matmul_t(s)?;
        let lip = self.lipschitz(&gram, false);
        if !(lip > 0.0) {
            return Err(SbssError::ZeroSources);
        }
        let step = self.cfg.gamma / lip;
        let grad = a.matmul(s)?.sub(x)?.matmul_t(s)?;
        Ok(project_columns_ball(&a.axpy(-step, &grad)?))
    }

    fn penalty_value(&mut self, s: &Mat, lambdas: &Mat) -> Result<f64> {
        let details = self.details_of(s)?;
        let penalty = Penalty {
            lambdas: lambdas.clone(),
            weights: self.weights.clone(),
        };
        Ok(penalty_from_details(&details, &penalty, self.geometry()))
    }
}

fn check_shapes(x: &Mat, a: &Mat, s: &Mat, g: Geometry) -> Result<()> {
    g.check_sources(x)?;
    if a.rows() != x.rows() || a.cols() != s.rows() || s.cols() != x.cols() {
        return Err(SbssError::shape(format!(
            "X {}x{}, A {}x{}, S {}x{}",
            x.rows(),
            x.cols(),
            a.rows(),
            a.cols(),
            s.rows(),
            s.cols()
        )));
    }
    Ok(())
}

/// Upper bound on `‖D‖²` for the detail map `D`, by power iteration on
/// `DᵀD` with a 5% margin.
fn detail_operator_norm_sq(transform: &Starlet) -> f64 {
    let g = transform.geometry();
    let mut v: Vec<f64> = (0..g.pixels()).map(|k| ((k * 7919) % 113) as f64 - 56.0).collect();
    let mut coefs = vec![0.0; g.detail_len()];
    let mut w = vec![0.0; g.pixels()];
    let mut estimate = 0.0;
    for _ in 0..200 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        transform.details_into(&v, &mut coefs);
        transform.details_adjoint_into(&coefs, &mut w);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut v, &mut w);
        if (next - estimate).abs() <= 1e-6 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    1.05 * estimate
}

/// One source step with a fresh solver state.
pub fn palm_step_s(
    x: &Mat,
    a: &Mat,
    s: &Mat,
    cfg: &PalmConfig,
    geometry: Geometry,
    lambdas: Option<&Mat>,
) -> Result<SourceStep> {
    Palm::new(cfg, geometry, a.cols())?.step_s(x, a, s, lambdas)
}

/// One mixing step with a fresh solver state.
pub fn palm_step_a(x: &Mat, a: &Mat, s: &Mat, cfg: &PalmConfig, geometry: Geometry) -> Result<Mat> {
    Palm::new(cfg, geometry, a.cols())?.step_a(x, a, s)
}

/// Reweighting factors `ε / (ε + |d| / max|d|)` over the starlet detail
/// coefficients of each source. Rows without detail energy get weight 1.
pub fn compute_reweighting(s_ref: &Mat, epsilon: f64, geometry: Geometry) -> Result<Mat> {
    if !(epsilon > 0.0) {
        return Err(SbssError::invalid("epsilon", "must be positive"));
    }
    let transform = Starlet::new(geometry)?;
    let mut details = detail_matrix(s_ref, &transform)?;
    for i in 0..details.rows() {
        let row = details.row_mut(i);
        let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            row.iter_mut().for_each(|w| *w = 1.0);
        } else {
            row.iter_mut()
                .for_each(|w| *w = epsilon / (epsilon + w.abs() / max));
        }
    }
    Ok(details)
}

/// Runs PALM from `(a0, s0)`.
pub fn run_palm(x: &Mat, geometry: Geometry, cfg: &PalmConfig, a0: &Mat, s0: &Mat) -> Result<SeparationResult> {
    check_shapes(x, a0, s0, geometry)?;
    let n = a0.cols();
    let mut solver = Palm::new(cfg, geometry, n)?;
    let (burn_in, mut frozen) = match &cfg.threshold_mode {
        ThresholdMode::RecomputeMad => (cfg.n_iters, None),
        ThresholdMode::Frozen(l) => (0, Some(l.clone())),
        ThresholdMode::MadThenFreeze { burn_in } => ((burn_in * cfg.n_iters as f64).ceil() as usize, None),
    };
    if frozen.is_some() {
        solver.diagnostics.frozen_at = Some(0);
    }
    let mut a = a0.clone();
    let mut s = s0.clone();
    let mut last_lambdas = frozen.clone().unwrap_or_else(|| Mat::zeros(n, geometry.n_scales));
    let mut history = Vec::with_capacity(cfg.n_iters);
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(cfg.n_iters);
    let mut stalled = 0;
    let mut iterations = 0;

    for it in 0..cfg.n_iters {
        let wrap = |e: SbssError| e.at_iteration(Stage::Refinement, it);
        let in_frozen_phase = it >= burn_in;
        let fixed = if in_frozen_phase { frozen.as_ref() } else { None };
        let step = solver.step_s(x, &a, &s, fixed).map_err(wrap)?;
        s = step.s;
        last_lambdas = step.lambdas;
        if frozen.is_none() && it + 1 == burn_in && burn_in < cfg.n_iters {
            frozen = Some(last_lambdas.clone());
            solver.diagnostics.frozen_at = Some(it + 1);
        }
        a = solver.step_a(x, &a, &s).map_err(wrap)?;
        iterations = it + 1;

        let fidelity = data_fidelity(x, &a, &s).map_err(wrap)?;
        let penalty = solver.penalty_value(&s, &last_lambdas).map_err(wrap)?;
        let objective = fidelity + penalty;
        if let (true, Some(prev)) = (in_frozen_phase, trace.last()) {
            let rel = (prev.objective - objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
            stalled = if rel < cfg.tol_objective { stalled + 1 } else { 0 };
        }
        trace.push(TraceEntry {
            stage: Stage::Refinement,
            iteration: it,
            fidelity,
            penalty,
            objective,
        });
        history.push(last_lambdas.clone());
        if stalled >= STALL_WINDOW {
            solver.diagnostics.stopped_early = true;
            break;
        }
    }

    Ok(SeparationResult {
        a,
        s,
        final_thresholds: last_lambdas,
        threshold_history: history,
        trace,
        iterations,
        diagnostics: solver.diagnostics,
        warmup: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, standard_normal};

    fn setup(seed: u64) -> (Geometry, Mat, Mat, Mat) {
        use rand::Rng;
        let g = Geometry::new(16, 16, 2).unwrap();
        let mut r = rng::stream(seed, 11);
        let a = rng::random_unit_columns(2, 2, &mut r);
        let s = Mat::from_fn(2, g.pixels(), |_, _| {
            if r.random::<f64>() < 0.05 {
                r.random_range(-10.0..10.0)
            } else {
                0.0
            }
        });
        let x = a
            .matmul(&s)
            .unwrap()
            .add(&standard_normal(2, g.pixels(), &mut r).scale(0.1))
            .unwrap();
        (g, a, s, x)
    }

    #[test]
    fn zero_threshold_fixed_point() {
        let (g, a, s, _) = setup(1);
        let x = a.matmul(&s).unwrap();
        let zero = Mat::zeros(2, 2);
        let step = palm_step_s(&x, &a, &s, &PalmConfig::default(), g, Some(&zero)).unwrap();
        assert!(step.s.max_abs_diff(&s) < 1e-10);
        let a2 = palm_step_a(&x, &a, &s, &PalmConfig::default(), g).unwrap();
        assert!(a2.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn huge_lambda_zeroes_details() {
        let (g, a, s, x) = setup(2);
        let huge = Mat::filled(2, 2, 1e9);
        let cfg = PalmConfig::default();
        let step = palm_step_s(&x, &a, &s, &cfg, g, Some(&huge)).unwrap();
        assert_eq!(step.outcome, StepOutcome::Thresholded);
        // every thresholded detail vanishes, leaving the coarse plane of the
        // gradient point
        let lip = crate::kernel::spectral_norm(&a, 1e-14, 1000).unwrap().value.powi(2);
        let point = s
            .axpy(-cfg.gamma / lip, &crate::objective::grad_s(&x, &a, &s).unwrap())
            .unwrap();
        let t = Starlet::new(g).unwrap();
        for i in 0..2 {
            let coarse = t.forward(point.row(i)).unwrap().coarse;
            let got = step.s.row(i);
            assert!(coarse.iter().zip(got).all(|(c, v)| (c - v).abs() < 1e-9));
        }
    }

    #[test]
    fn zero_iterates_error() {
        let (g, a, s, x) = setup(3);
        let cfg = PalmConfig::default();
        assert!(matches!(
            palm_step_s(&x, &Mat::zeros(2, 2), &s, &cfg, g, None),
            Err(SbssError::ZeroMixing)
        ));
        assert!(matches!(
            palm_step_a(&x, &a, &Mat::zeros(2, 256), &cfg, g),
            Err(SbssError::ZeroSources)
        ));
    }

    #[test]
    fn mixing_step_projects_onto_ball() {
        let g = Geometry::new(4, 4, 1).unwrap();
        // large residual aligned with the first column pushes it outward
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = Mat::from_fn(2, 16, |i, k| if i == k && k < 2 { 1.0 } else { 0.0 });
        let x = Mat::from_fn(2, 16, |i, k| if i == 0 && k == 0 { 10.0 } else if i == 1 && k == 1 { 1.0 } else { 0.0 });
        let out = palm_step_a(&x, &a, &s, &PalmConfig::default(), g).unwrap();
        assert!((out.col_norm(0) - 1.0).abs() < 1e-15);
        assert_eq!(out.col(1), vec![0.0, 1.0]);
    }

    #[test]
    fn steps_descend() {
        let (g, a0, s, x) = setup(4);
        let mut r = rng::stream(5, 1);
        let a = rng::random_unit_columns(2, 2, &mut r);
        let cfg = PalmConfig::default();
        let lambdas = Mat::filled(2, 2, 0.3);
        let pen = Penalty::uniform(&[0.3, 0.3], g).unwrap();
        let before = crate::objective::full_objective(&x, &a, &s, &pen, g).unwrap().total;
        let step = palm_step_s(&x, &a, &s, &cfg, g, Some(&lambdas)).unwrap();
        let after = crate::objective::full_objective(&x, &a, &step.s, &pen, g).unwrap().total;
        assert!(after <= before + 1e-12, "{after} > {before}");

        let f0 = data_fidelity(&x, &a, &s).unwrap();
        let a1 = palm_step_a(&x, &a, &s, &cfg, g).unwrap();
        assert!(data_fidelity(&x, &a1, &s).unwrap() <= f0);
        let _ = a0;
    }

    #[test]
    fn safeguard_keeps_reweighted_objective_monotone() {
        let (g, a_true, s_true, x) = setup(8);
        let weights = compute_reweighting(&s_true, 1e-3, g).unwrap();
        let lambdas = Mat::filled(2, 2, 0.5);
        let mut r = rng::stream(9, 1);
        let a0 = rng::random_unit_columns(2, 2, &mut r)
            .axpy(3.0, &a_true)
            .unwrap()
            .map(|v| v / 4.0);
        let cfg = PalmConfig {
            n_iters: 60,
            threshold_mode: ThresholdMode::Frozen(lambdas),
            weights: Some(weights),
            tol_objective: 0.0,
            ..PalmConfig::default()
        };
        let out = run_palm(&x, g, &cfg, &project_columns_ball(&a0), &s_true).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12 * w[0].objective.abs());
        }
    }

    #[test]
    fn pure_gradient_step_decreases_fidelity() {
        let (g, a, s, x) = setup(6);
        let mut r = rng::stream(6, 2);
        let s_bad = standard_normal(2, g.pixels(), &mut r);
        let zero = Mat::zeros(2, 2);
        let out = palm_step_s(&x, &a, &s_bad, &PalmConfig::default(), g, Some(&zero)).unwrap();
        assert!(data_fidelity(&x, &a, &out.s).unwrap() < data_fidelity(&x, &a, &s_bad).unwrap());
        let _ = s;
    }

    #[test]
    fn reweighting_examples() {
        let g = Geometry::new(8, 8, 1).unwrap();
        let s = Mat::from_fn(1, 64, |_, k| if k == 27 { 1.0 } else { 0.0 });
        let w = compute_reweighting(&s, 1e-3, g).unwrap();
        let t = Starlet::new(g).unwrap();
        let d = detail_matrix(&s, &t).unwrap();
        let max = d.max_abs();
        for k in 0..64 {
            let expected = 1e-3 / (1e-3 + d[(0, k)].abs() / max);
            assert!((w[(0, k)] - expected).abs() < 1e-15);
            if d[(0, k)] == 0.0 {
                assert_eq!(w[(0, k)], 1.0);
            }
            if d[(0, k)].abs() == max {
                assert!((w[(0, k)] - 1e-3 / 1.001).abs() < 1e-15);
            }
        }
        let zero = compute_reweighting(&Mat::zeros(1, 64), 1e-3, g).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 1.0));
        assert!(compute_reweighting(&s, 0.0, g).is_err());
    }

    #[test]
    fn run_palm_stationary_at_truth() {
        let (g, a, s, _) = setup(7);
        let x = a.matmul(&s).unwrap();
        let cfg = PalmConfig {
            n_iters: 50,
            threshold_mode: ThresholdMode::Frozen(Mat::zeros(2, 2)),
            ..Default::default()
        };
        let r = run_palm(&x, g, &cfg, &a, &s).unwrap();
        assert!(r.a.max_abs_diff(&a) < 1e-10);
        assert!(r.s.max_abs_diff(&s) < 1e-10);
    }

    #[test]
    fn zero_budget_returns_start() {
        let (g, a, s, x) = setup(8);
        let cfg = PalmConfig {
            n_iters: 0,
            ..Default::default()
        };
        let r = run_palm(&x, g, &cfg, &a, &s).unwrap();
        assert_eq!((r.a, r.s, r.iterations), (a, s, 0));
    }

    #[test]
    fn mad_then_freeze_freezes_at_burn_in() {
        let (g, a, s, x) = setup(9);
        let cfg = PalmConfig {
            n_iters: 20,
            tol_objective: 0.0,
            threshold_mode: ThresholdMode::MadThenFreeze { burn_in: 0.5 },
            ..Default::default()
        };
        let r = run_palm(&x, g, &cfg, &a, &s).unwrap();
        assert_eq!(r.diagnostics.frozen_at, Some(10));
        for h in &r.threshold_history[10..] {
            assert_eq!(h, &r.threshold_history[9]);
        }
        for w in r.trace[10..].windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PalmConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(PalmConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(PalmConfig { k_mad: 0.0, ..Default::default() }.validate().is_err());
        assert!(PalmConfig {
            threshold_mode: ThresholdMode::Frozen(Mat::filled(1, 1, -1.0)),
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
