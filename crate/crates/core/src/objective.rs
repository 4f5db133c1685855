//! The separation objective
//!
//! ```text
//! ½‖X − AS‖²_F + ι{‖Aⁱ‖₂ ≤ 1 ∀i}(A) + ‖(Λ W) ⊙ (S Φᵀ)‖₁
//! ```
//!
//! where `Φ` keeps only the starlet detail planes (the coarse plane is not
//! penalised), `Λ` holds one regularisation weight per source and scale and
//! `W` holds the per-coefficient reweighting factors.

use crate::error::{Result, SbssError};
use crate::mat::Mat;
use crate::starlet::{detail_matrix, Geometry, Starlet};
use serde::Serialize;

/// Column-norm slack tolerated by the feasibility flag.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Regularisation `R_S = Λ W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    /// `n × n_scales`, non-negative.
    pub lambdas: Mat,
    /// `n × (n_scales · pixels)`, entries in `(0, 1]`.
    pub weights: Mat,
}

impl Penalty {
    pub fn new(lambdas: Mat, weights: Mat, geometry: Geometry) -> Result<Self> {
        let p = Self { lambdas, weights };
        p.validate(geometry)?;
        Ok(p)
    }

    /// Same weight `lambdas[i]` on every scale of source `i`, `W ≡ 1`.
    pub fn uniform(lambdas: &[f64], geometry: Geometry) -> Result<Self> {
        let n = lambdas.len();
        Self::new(
            Mat::from_fn(n, geometry.n_scales, |i, _| lambdas[i]),
            Mat::filled(n, geometry.detail_len(), 1.0),
            geometry,
        )
    }

    pub fn validate(&self, geometry: Geometry) -> Result<()> {
        if self.lambdas.cols() != geometry.n_scales
            || self.weights.rows() != self.lambdas.rows()
            || self.weights.cols() != geometry.detail_len()
        {
            return Err(SbssError::shape(format!(
                "penalty lambdas {}x{} / weights {}x{} do not match {} scales of {}x{}",
                self.lambdas.rows(),
                self.lambdas.cols(),
                self.weights.rows(),
                self.weights.cols(),
                geometry.n_scales,
                geometry.width,
                geometry.height
            )));
        }
        if self.lambdas.as_slice().iter().any(|&l| l < 0.0) {
            return Err(SbssError::invalid("lambdas", "must be non-negative"));
        }
        if self.weights.as_slice().iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(SbssError::invalid("weights", "entries must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Neumaier-compensated sum.
pub(crate) fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn residual(x: &Mat, a: &Mat, s: &Mat) -> Result<Mat> {
    let as_ = a.matmul(s)?;
    as_.check_same_shape(x)
        .map_err(|_| SbssError::shape(format!("AS is {}x{} but X is {}x{}", as_.rows(), as_.cols(), x.rows(), x.cols())))?;
    as_.sub(x)
}

/// `½‖X − AS‖²_F`.
pub fn data_fidelity(x: &Mat, a: &Mat, s: &Mat) -> Result<f64> {
    let r = residual(x, a, s)?;
    Ok(0.5 * accurate_sum(r.as_slice().iter().map(|v| v * v)))
}

/// Weighted ℓ1 norm of precomputed detail coefficients.
pub(crate) fn penalty_from_details(details: &Mat, penalty: &Penalty, geometry: Geometry) -> f64 {
    let p = geometry.pixels();
    accurate_sum((0..details.rows()).flat_map(|i| {
        let coefs = details.row(i);
        let weights = penalty.weights.row(i);
        (0..geometry.n_scales).map(move |j| {
            let lambda = penalty.lambdas[(i, j)];
            if lambda == 0.0 {
                return 0.0;
            }
            let range = j * p..(j + 1) * p;
            lambda
                * accurate_sum(
                    coefs[range.clone()]
                        .iter()
                        .zip(&weights[range])
                        .map(|(c, w)| w * c.abs()),
                )
        })
    }))
}

/// `Σᵢ Σⱼ λᵢⱼ Σₖ Wᵢₖ |dᵢₖ|` over the starlet detail coefficients of `S`.
pub fn sparsity_penalty(s: &Mat, penalty: &Penalty, geometry: Geometry) -> Result<f64> {
    penalty.validate(geometry)?;
    if penalty.lambdas.rows() != s.rows() {
        return Err(SbssError::shape("penalty rows differ from source count"));
    }
    let transform = Starlet::new(geometry)?;
    let details = detail_matrix(s, &transform)?;
    Ok(penalty_from_details(&details, penalty, geometry))
}

/// Value of the full objective, with the indicator reported as a flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub fidelity: f64,
    pub penalty: f64,
    pub total: f64,
    pub feasible: bool,
}

pub fn is_feasible(a: &Mat) -> bool {
    (0..a.cols()).all(|j| a.col_norm(j) <= 1.0 + FEASIBILITY_TOL)
}

pub fn full_objective(
    x: &Mat,
    a: &Mat,
    s: &Mat,
    penalty: &Penalty,
    geometry: Geometry,
) -> Result<ObjectiveValue> {
    let fidelity = data_fidelity(x, a, s)?;
    let pen = sparsity_penalty(s, penalty, geometry)?;
    Ok(ObjectiveValue {
        fidelity,
        penalty: pen,
        total: fidelity + pen,
        feasible: is_feasible(a),
    })
}

/// `Aᵀ(AS − X)`.
pub fn grad_s(x: &Mat, a: &Mat, s: &Mat) -> Result<Mat> {
    a.t_matmul(&residual(x, a, s)?)
}

/// `(AS − X)Sᵀ`.
pub fn grad_a(x: &Mat, a: &Mat, s: &Mat) -> Result<Mat> {
    residual(x, a, s)?.matmul_t(s)
}
