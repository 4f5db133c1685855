use crate::error::Stage;
use crate::mat::Mat;
use serde::Serialize;

/// One objective evaluation along a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub iteration: usize,
    pub fidelity: f64,
    pub penalty: f64,
    pub objective: f64,
}

/// Counters that describe how a solve went without affecting its output.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Mixing columns that collapsed to zero and were re-drawn.
    pub degenerate_columns: usize,
    /// Power iterations that hit their budget.
    pub spectral_not_converged: usize,
    /// Source steps where the transform-domain threshold did not decrease
    /// the proximal model and the exact proximal map was computed instead.
    pub exact_prox_steps: usize,
    /// Source steps rejected outright (iterate kept).
    pub rejected_steps: usize,
    /// Iteration at which PALM thresholds were frozen, if they were.
    pub frozen_at: Option<usize>,
    pub stopped_early: bool,
}

/// Output of any solver or pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// Estimated mixing matrix, `m × n`.
    pub a: Mat,
    /// Estimated sources, `n × t`.
    pub s: Mat,
    /// Final per-source, per-scale thresholds (`n × n_scales`). GMCA reports
    /// the thresholds it applied to `A⁺X`; PALM reports the regularisation
    /// weights `λ` of the objective.
    pub final_thresholds: Mat,
    /// One entry per iteration, same layout as `final_thresholds`.
    pub threshold_history: Vec<Mat>,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
    /// Warm-up output when this result comes from the two-step pipeline.
    pub warmup: Option<Box<SeparationResult>>,
}
