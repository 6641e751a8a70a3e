//! Observation models: isotropic Gaussian noise and probit classification.
//!
//! Both factor over measurement vectors and, within one vector, depend on the
//! coefficients only through the projections `A·x_t`. The Gaussian factor is
//! already Gaussian in `x` and needs no approximation; the probit factor is
//! handled with scalar EP sites on the projections, one per observation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{log_norm_cdf, norm_pdf_over_cdf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// `y_t = A x_t + e`, `e ~ N(0, σ² I)`.
    Gaussian { noise_variance: f64 },
    /// `p(y | x) = ∏ Φ(y_n · a_n x_t)` with labels in {-1, +1}.
    Probit,
}

/// A linear inverse problem (or classification task): forward model,
/// observations, and the noise model tying them together.
#[derive(Debug, Clone)]
pub struct Problem {
    pub a: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub likelihood: Likelihood,
}

impl Problem {
    pub fn new(a: DMatrix<f64>, y: DMatrix<f64>, likelihood: Likelihood) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::invalid("forward model must be nonempty"));
        }
        if y.nrows() != a.nrows() {
            return Err(Error::invalid(format!(
                "observation rows {} do not match forward model rows {}",
                y.nrows(),
                a.nrows()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entries in problem data"));
        }
        match likelihood {
            Likelihood::Gaussian { noise_variance } => {
                if !(noise_variance > 0.0) || !noise_variance.is_finite() {
                    return Err(Error::invalid("noise variance must be positive"));
                }
            }
            Likelihood::Probit => {
                if y.iter().any(|&v| v != 1.0 && v != -1.0) {
                    return Err(Error::invalid("probit observations must be ±1"));
                }
            }
        }
        Ok(Problem { a, y, likelihood })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }
}

/// Gaussian observation factor for one measurement vector, in natural form:
/// precision `AᵀA/σ²` (kept factored, never materialized) and
/// precision-times-mean `Aᵀy/σ²`. Expressed as per-observation scalar sites of
/// precision `1/σ²` and information `y_n/σ²` on the projections `a_n·x`.
pub fn gaussian_f1_naturals(
    a: &DMatrix<f64>,
    y_col: &DVector<f64>,
    noise_variance: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(noise_variance > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    if y_col.len() != a.nrows() {
        return Err(Error::invalid("observation length mismatch"));
    }
    let theta = DVector::from_element(a.nrows(), 1.0 / noise_variance);
    let nu = y_col / noise_variance;
    Ok((theta, nu))
}

/// Tilted moments of one probit factor `Φ(label·s)` against `N(s | m, v)`.
#[derive(Debug, Clone, Copy)]
pub struct ProbitMoments {
    pub log_z: f64,
    pub mean: f64,
    pub var: f64,
}

/// Standard probit tilt: with `z̃ = label·m/√(1+v)` the normalizer is `Φ(z̃)`
/// and the first two moments follow from the Gaussian-CDF derivative
/// identities (the support-link moments at `p = 1` use the same algebra).
pub fn probit_tilted_moments(cav_mean: f64, cav_var: f64, label: f64) -> Result<ProbitMoments> {
    if !(cav_var > 0.0) {
        return Err(Error::invalid("probit cavity variance must be positive"));
    }
    if label != 1.0 && label != -1.0 {
        return Err(Error::invalid("probit label must be ±1"));
    }
    let denom = (1.0 + cav_var).sqrt();
    let z = label * cav_mean / denom;
    let ratio = norm_pdf_over_cdf(z);
    let mean = cav_mean + label * cav_var * ratio / denom;
    let var = cav_var - cav_var * cav_var * ratio * (z + ratio) / (1.0 + cav_var);
    Ok(ProbitMoments {
        log_z: log_norm_cdf(z),
        mean,
        var,
    })
}
