//! Two-step separation: a GMCA warm-up followed by PALM refinement that
//! inherits its initial point, thresholds and reweighting from the warm-up.

use crate::error::{Result, SbssError, Stage};
use crate::gmca::{run_gmca, GmcaConfig};
use crate::kernel::{mad, pseudo_inverse_relative};
use crate::mat::Mat;
use crate::palm::{compute_reweighting, run_palm, PalmConfig, ThresholdMode};
use crate::result::SeparationResult;
use crate::rng::{self, derive_seed, streams};
use crate::starlet::{Geometry, Starlet};
use serde::{Deserialize, Serialize};

/// Where the refinement stage's `λ` come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSeed {
    /// `k · MAD` per scale of the starlet details of `Aᵀ(X − AS)` at the
    /// warm-up solution: the noise level seen by the PALM gradient step.
    ProjectedResidual,
    /// GMCA's final thresholds, reused as is.
    WarmupThresholds,
}

/// Threshold policy of the refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum RefinementThresholds {
    /// Frozen at the warm-up seed for the whole refinement.
    FrozenFromWarmup,
    /// MAD re-estimation for the first `burn_in` fraction, then frozen.
    MadThenFreeze { burn_in: f64 },
    /// MAD re-estimation throughout.
    RecomputeMad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepConfig {
    pub gmca: GmcaConfig,
    /// `threshold_mode` and `weights` are set by the pipeline.
    pub palm: PalmConfig,
    pub epsilon: f64,
    pub use_reweighting: bool,
    pub refinement: RefinementThresholds,
    pub lambda_seed: LambdaSeed,
    /// Number of sources; `None` means one per observation.
    pub n_sources: Option<usize>,
    pub rng_seed: u64,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        Self {
            gmca: GmcaConfig::default(),
            palm: PalmConfig {
                safeguard: false,
                ..PalmConfig::default()
            },
            epsilon: 1e-3,
            use_reweighting: true,
            refinement: RefinementThresholds::FrozenFromWarmup,
            lambda_seed: LambdaSeed::ProjectedResidual,
            n_sources: None,
            rng_seed: 0,
        }
    }
}

impl TwoStepConfig {
    pub fn validate(&self) -> Result<()> {
        self.gmca.validate()?;
        self.palm.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(SbssError::invalid("epsilon", "must be positive"));
        }
        if let RefinementThresholds::MadThenFreeze { burn_in } = self.refinement {
            if !(0.0..=1.0).contains(&burn_in) {
                return Err(SbssError::invalid("burn_in", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Pipeline variants compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TwoStep,
    GmcaOnly,
    PalmMadRandomInit,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::TwoStep, Mode::GmcaOnly, Mode::PalmMadRandomInit];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::TwoStep => "two-step",
            Mode::GmcaOnly => "gmca",
            Mode::PalmMadRandomInit => "palm",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "two-step" | "twostep" | "2step" => Ok(Mode::TwoStep),
            "gmca" | "gmca-only" => Ok(Mode::GmcaOnly),
            "palm" | "palm-mad-random-init" => Ok(Mode::PalmMadRandomInit),
            other => Err(format!("unknown mode `{other}` (expected two-step, gmca or palm)")),
        }
    }
}

/// Seeded random initial mixing matrix with unit columns.
pub fn random_init(m: usize, n: usize, seed: u64) -> Mat {
    let mut r = rng::stream(seed, streams::INIT);
    rng::random_unit_columns(m, n, &mut r)
}

/// `λ` for the refinement stage from the warm-up solution.
pub fn seed_lambdas(
    x: &Mat,
    warmup: &SeparationResult,
    k: f64,
    seed: LambdaSeed,
    geometry: Geometry,
) -> Result<Mat> {
    match seed {
        LambdaSeed::WarmupThresholds => Ok(warmup.final_thresholds.clone()),
        LambdaSeed::ProjectedResidual => {
            let resid = x.sub(&warmup.a.matmul(&warmup.s)?)?;
            let projected = warmup.a.t_matmul(&resid)?;
            let transform = Starlet::new(geometry)?;
            let mut lambdas = Mat::zeros(projected.rows(), geometry.n_scales);
            for i in 0..projected.rows() {
                let p = transform.forward(projected.row(i))?;
                for (j, plane) in p.details.iter().enumerate() {
                    lambdas[(i, j)] = k * mad(plane)?;
                }
            }
            Ok(lambdas)
        }
    }
}

/// GMCA warm-up from a random start, then PALM refinement.
pub fn run_two_step(x: &Mat, geometry: Geometry, cfg: &TwoStepConfig) -> Result<SeparationResult> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(SbssError::EmptyInput);
    }
    let n = cfg_sources(cfg, x)?;
    let a0 = random_init(x.rows(), n, cfg.rng_seed);
    let gmca_cfg = GmcaConfig {
        rng_seed: derive_seed(cfg.rng_seed, &[streams::REDRAW]),
        ..cfg.gmca.clone()
    };
    let warmup = run_gmca(x, geometry, &gmca_cfg, &a0).map_err(|e| e.in_stage(Stage::Warmup))?;
    if cfg.palm.n_iters == 0 {
        return Ok(SeparationResult {
            warmup: Some(Box::new(warmup.clone())),
            ..warmup
        });
    }

    let refine = || -> Result<SeparationResult> {
        let weights = if cfg.use_reweighting {
            Some(compute_reweighting(&warmup.s, cfg.epsilon, geometry)?)
        } else {
            None
        };
        let threshold_mode = match cfg.refinement {
            RefinementThresholds::FrozenFromWarmup => ThresholdMode::Frozen(seed_lambdas(
                x,
                &warmup,
                cfg.palm.k_mad,
                cfg.lambda_seed,
                geometry,
            )?),
            RefinementThresholds::MadThenFreeze { burn_in } => ThresholdMode::MadThenFreeze { burn_in },
            RefinementThresholds::RecomputeMad => ThresholdMode::RecomputeMad,
        };
        let palm_cfg = PalmConfig {
            threshold_mode,
            weights,
            ..cfg.palm.clone()
        };
        run_palm(x, geometry, &palm_cfg, &warmup.a, &warmup.s)
    };
    let mut refined = refine().map_err(|e| e.in_stage(Stage::Refinement))?;
    refined.diagnostics.degenerate_columns += warmup.diagnostics.degenerate_columns;
    refined.warmup = Some(Box::new(warmup));
    Ok(refined)
}

fn cfg_sources(cfg: &TwoStepConfig, x: &Mat) -> Result<usize> {
    match cfg.n_sources {
        None => Ok(x.rows()),
        Some(n) if n >= 1 && n <= x.rows() => Ok(n),
        Some(n) => Err(SbssError::invalid(
            "n_sources",
            format!("need 1 ≤ n ≤ {} observations, got {n}", x.rows()),
        )),
    }
}

/// Dispatches one of the benchmark pipelines.
pub fn run_mode(x: &Mat, geometry: Geometry, mode: Mode, cfg: &TwoStepConfig) -> Result<SeparationResult> {
    match mode {
        Mode::TwoStep => run_two_step(x, geometry, cfg),
        Mode::GmcaOnly => {
            let mut only = cfg.clone();
            only.palm.n_iters = 0;
            let mut r = run_two_step(x, geometry, &only)?;
            r.warmup = None;
            Ok(r)
        }
        Mode::PalmMadRandomInit => {
            cfg.validate()?;
            let a0 = random_init(x.rows(), cfg_sources(cfg, x)?, cfg.rng_seed);
            let s0 = pseudo_inverse_relative(&a0, cfg.palm.ridge)?.matmul(x)?;
            let palm_cfg = PalmConfig {
                threshold_mode: ThresholdMode::RecomputeMad,
                weights: None,
                ..cfg.palm.clone()
            };
            run_palm(x, geometry, &palm_cfg, &a0, &s0).map_err(|e| e.in_stage(Stage::Refinement))
        }
    }
}
