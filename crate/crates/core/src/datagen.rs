//! Synthetic separation problems: starlet-sparse sources, mixing matrices
//! with a prescribed condition number and Gaussian noise at a prescribed SNR.
//!
//! Sources are synthesised from planted pyramids: each detail coefficient is
//! active with probability `sparsity_rate`, active values are
//! `N(0, 1) · ACTIVE_AMPLITUDE · 2^{-j}` at scale `j` (finest is 0), and the
//! coarse plane is a smooth zero-mean random field of standard deviation
//! `COARSE_STD`. The planted pyramid is exactly sparse; the starlet analysis
//! of the resulting image is approximately sparse, since the frame is
//! redundant.

use crate::error::{Result, SbssError};
use crate::kernel::normalize_columns_sphere;
use crate::mat::Mat;
use crate::metrics::snr_db;
use crate::rng::{self, streams, SbssRng};
use crate::starlet::{synthesize_sources, Geometry, Starlet, StarletPyramid};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const ACTIVE_AMPLITUDE: f64 = 10.0;
pub const COARSE_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_sources: usize,
    pub width: usize,
    pub height: usize,
    /// Number of observations; `None` means `n_sources`.
    pub m_obs: Option<usize>,
    pub sparsity_rate: f64,
    pub condition_number: f64,
    /// Target SNR in dB; `inf` gives noiseless data.
    pub snr_db: f64,
    pub n_scales: usize,
    pub rng_seed: u64,
    /// Overrides `rng_seed` for the noise stream only.
    pub noise_seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_sources: 2,
            width: 128,
            height: 128,
            m_obs: None,
            sparsity_rate: 0.02,
            condition_number: 10.0,
            snr_db: 20.0,
            n_scales: 3,
            rng_seed: 0,
            noise_seed: None,
        }
    }
}

impl SyntheticSpec {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            width: self.width,
            height: self.height,
            n_scales: self.n_scales,
        }
    }

    pub fn observations(&self) -> usize {
        self.m_obs.unwrap_or(self.n_sources)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(SbssError::invalid("n_sources", "must be at least 1"));
        }
        if self.observations() < self.n_sources {
            return Err(SbssError::invalid("m_obs", "must be at least n_sources"));
        }
        if !(self.condition_number >= 1.0) || !self.condition_number.is_finite() {
            return Err(SbssError::invalid("condition_number", "must be a finite value ≥ 1"));
        }
        if !(self.sparsity_rate > 0.0 && self.sparsity_rate <= 1.0) {
            return Err(SbssError::invalid("sparsity_rate", "must lie in (0, 1]"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(SbssError::invalid("snr_db", "must be a number or +inf"));
        }
        self.geometry().validate()
    }
}

/// Sources plus the pyramids they were synthesised from.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSources {
    pub s: Mat,
    pub planted: Vec<StarletPyramid>,
}

pub fn gen_sources(spec: &SyntheticSpec) -> Result<GeneratedSources> {
    spec.validate()?;
    let g = spec.geometry();
    let transform = Starlet::new(g)?;
    let mut rng = rng::stream(spec.rng_seed, streams::SOURCES);
    let mut planted = Vec::with_capacity(spec.n_sources);
    for _ in 0..spec.n_sources {
        let details = (0..g.n_scales)
            .map(|j| {
                let amplitude = ACTIVE_AMPLITUDE * 0.5f64.powi(j as i32);
                (0..g.pixels())
                    .map(|_| {
                        if rng.random::<f64>() < spec.sparsity_rate {
                            let v: f64 = StandardNormal.sample(&mut rng);
                            amplitude * v
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let coarse = smooth_field(&transform, &mut rng)?;
        planted.push(StarletPyramid {
            width: g.width,
            height: g.height,
            details,
            coarse,
        });
    }
    let s = synthesize_sources(&planted)?;
    Ok(GeneratedSources { s, planted })
}

/// Zero-mean smooth field: coarse plane of white noise, rescaled to
/// `COARSE_STD`.
fn smooth_field(transform: &Starlet, rng: &mut SbssRng) -> Result<Vec<f64>> {
    let g = transform.geometry();
    let white: Vec<f64> = (0..g.pixels()).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let mut field = transform.forward(&white)?.coarse;
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    field.iter_mut().for_each(|v| *v -= mean);
    let std = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
    if std > 0.0 {
        field.iter_mut().for_each(|v| *v *= COARSE_STD / std);
    }
    Ok(field)
}

/// A drawn mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDraw {
    /// Unit-column mixing matrix.
    pub a: Mat,
    /// Matrix with the prescribed singular values, before normalisation.
    pub raw: Mat,
    pub raw_condition: f64,
    pub condition: f64,
}

pub fn condition_number(m: &Mat) -> f64 {
    let sv = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice()).singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Gaussian matrix whose singular values are replaced by a geometric ramp
/// from 1 to `1 / condition_number`, then normalised to unit columns.
pub fn gen_mixing(spec: &SyntheticSpec) -> Result<MixingDraw> {
    spec.validate()?;
    let (m, n) = (spec.observations(), spec.n_sources);
    let mut rng = rng::stream(spec.rng_seed, streams::MIXING);
    let draw = rng::standard_normal(m, n, &mut rng);
    let svd = DMatrix::from_row_slice(m, n, draw.as_slice()).svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let ramp: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                1.0
            } else {
                spec.condition_number.powf(-(k as f64) / (n - 1) as f64)
            }
        })
        .collect();
    // nalgebra sorts singular values in decreasing order, so the ramp keeps
    // the original ordering of the singular vectors
    let raw = Mat::from_fn(m, n, |i, j| (0..n).map(|k| u[(i, k)] * ramp[k] * v_t[(k, j)]).sum());
    let a = normalize_columns_sphere(&raw).matrix;
    Ok(MixingDraw {
        raw_condition: condition_number(&raw),
        condition: condition_number(&a),
        a,
        raw,
    })
}

/// Adds i.i.d. Gaussian noise scaled to hit `snr_db` exactly. An infinite
/// target yields zero noise.
pub fn add_noise(x_clean: &Mat, snr_db_target: f64, seed: u64) -> Result<(Mat, Mat)> {
    if x_clean.frobenius_sq() == 0.0 {
        return Err(SbssError::invalid("x_clean", "cannot set an SNR on zero data"));
    }
    if snr_db_target == f64::INFINITY {
        return Ok((x_clean.clone(), Mat::zeros(x_clean.rows(), x_clean.cols())));
    }
    if !snr_db_target.is_finite() {
        return Err(SbssError::invalid("snr_db", "must be a number or +inf"));
    }
    let mut rng = rng::stream(seed, streams::NOISE);
    let raw = rng::standard_normal(x_clean.rows(), x_clean.cols(), &mut rng);
    let target_energy = x_clean.frobenius_sq() / 10f64.powf(snr_db_target / 10.0);
    let noise = raw.scale((target_energy / raw.frobenius_sq()).sqrt());
    Ok((x_clean.add(&noise)?, noise))
}

/// Ground truth of a synthetic problem. Kept apart from the observations so
/// that solvers, which only ever receive `x`, cannot read it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub a: Mat,
    pub s: Mat,
    pub n: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemMetadata {
    pub spec: SyntheticSpec,
    pub achieved_snr_db: f64,
    pub raw_condition_number: f64,
    pub condition_number: f64,
    pub singular_value_ramp: &'static str,
    pub active_amplitude: f64,
    pub amplitude_decay_per_scale: f64,
    pub coarse_std: f64,
    pub rng: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationProblem {
    pub x: Mat,
    pub geometry: Geometry,
    pub truth: Option<GroundTruth>,
    pub metadata: Option<ProblemMetadata>,
}

pub fn gen_problem(spec: &SyntheticSpec) -> Result<SeparationProblem> {
    let sources = gen_sources(spec)?;
    let mixing = gen_mixing(spec)?;
    let clean = mixing.a.matmul(&sources.s)?;
    let (x, n) = add_noise(&clean, spec.snr_db, spec.noise_seed.unwrap_or(spec.rng_seed))?;
    let metadata = ProblemMetadata {
        spec: spec.clone(),
        achieved_snr_db: snr_db(&clean, &n)?,
        raw_condition_number: mixing.raw_condition,
        condition_number: mixing.condition,
        singular_value_ramp: "geometric",
        active_amplitude: ACTIVE_AMPLITUDE,
        amplitude_decay_per_scale: 0.5,
        coarse_std: COARSE_STD,
        rng: "ChaCha8 (rand_chacha), one stream per role",
    };
    Ok(SeparationProblem {
        x,
        geometry: spec.geometry(),
        truth: Some(GroundTruth {
            a: mixing.a,
            s: sources.s,
            n,
        }),
        metadata: Some(metadata),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            width: 32,
            height: 32,
            rng_seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn planted_pyramid_synthesizes_sources() {
        let g = gen_sources(&small()).unwrap();
        assert_eq!(g.s.shape(), (2, 1024));
        for (i, p) in g.planted.iter().enumerate() {
            let img = crate::starlet::starlet_inverse(p);
            assert!(img.iter().zip(g.s.row(i)).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        assert_eq!(gen_sources(&small()).unwrap(), g);
    }

    #[test]
    fn orthogonal_when_perfectly_conditioned() {
        let spec = SyntheticSpec {
            condition_number: 1.0,
            ..small()
        };
        let m = gen_mixing(&spec).unwrap();
        let gram = m.raw.t_matmul(&m.raw).unwrap();
        assert!(gram.max_abs_diff(&Mat::identity(2)) < 1e-10);
    }

    #[test]
    fn noise_hits_target_and_infinite_is_clean() {
        let x = Mat::from_fn(2, 50, |i, k| ((i + 1) * k) as f64 * 0.1);
        let (noisy, n) = add_noise(&x, 20.0, 3).unwrap();
        assert!((snr_db(&x, &n).unwrap() - 20.0).abs() < 1e-9);
        assert!(noisy.sub(&x).unwrap().max_abs_diff(&n) < 1e-12);
        let (clean, zero) = add_noise(&x, f64::INFINITY, 3).unwrap();
        assert_eq!(clean, x);
        assert_eq!(zero.max_abs(), 0.0);
        assert!(add_noise(&Mat::zeros(2, 2), 10.0, 1).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec { condition_number: 0.5, ..small() }.validate().is_err());
        assert!(SyntheticSpec { m_obs: Some(1), ..small() }.validate().is_err());
        assert!(SyntheticSpec { sparsity_rate: 0.0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { width: 4, ..small() }.validate().is_err());
    }
}
