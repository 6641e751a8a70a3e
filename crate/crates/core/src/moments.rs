//! Tilted moments for the two prior factor families.
//!
//! Each site couples one continuous variable with one support indicator, so
//! the moment-matching integrals reduce to a binary sum over `z` and a 1-D
//! Gaussian integral with closed form. All normalizers are handled in the log
//! domain; `log_z0` feeds the marginal-likelihood accumulation.

use crate::error::{Error, Result};
use crate::math::{log_norm_cdf, log_norm_pdf0, log_sum_exp, norm_cdf, norm_pdf_over_cdf};
use crate::prior::SlabParams;
use crate::sites::PROB_EPS;

/// Matched moments of the slab/spike factor tilted by its Gaussian cavity
/// `N(x | m, v)` and Bernoulli cavity `Ber(z | p)`.
#[derive(Debug, Clone, Copy)]
pub struct F2Moments {
    pub mean: f64,
    pub var: f64,
    pub e_z: f64,
    /// Log normalizer of the tilted distribution.
    pub log_z0: f64,
}

/// Tilted moments of the coefficient factor
/// `(1-z)·δ(x) + z·N(x | ρ₀, τ₀)` against cavity `N(x|m,v)·Ber(z|p)`.
///
/// With `Z₁ = p·N(0 | m-ρ₀, v+τ₀)` the normalizer is
/// `X₀ = (1-p)·N(0|m,v) + Z₁`; the slab branch contributes the
/// Gaussian-product mean `(m·τ₀ + ρ₀·v)/(τ₀+v)` and variance `τ₀v/(τ₀+v)`,
/// the spike branch a point mass at zero.
pub fn moments_f2(cav_mean: f64, cav_var: f64, cav_prob: f64, slab: &SlabParams) -> Result<F2Moments> {
    if !(cav_var > 0.0) {
        return Err(Error::invalid("f2 cavity variance must be positive"));
    }
    let p = cav_prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (rho, tau) = (slab.mean, slab.variance);
    let log_z1 = p.ln() + log_norm_pdf0(cav_mean - rho, cav_var + tau);
    let log_spike = (1.0 - p).ln() + log_norm_pdf0(cav_mean, cav_var);
    let log_z0 = log_sum_exp(log_spike, log_z1);
    let e_z = (log_z1 - log_z0).exp();
    let slab_mean = (cav_mean * tau + rho * cav_var) / (tau + cav_var);
    let slab_var = tau * cav_var / (tau + cav_var);
    let mean = e_z * slab_mean;
    let var = e_z * (slab_mean * slab_mean + slab_var) - mean * mean;
    let out = F2Moments {
        mean,
        var,
        e_z,
        log_z0,
    };
    if !(mean.is_finite() && var.is_finite() && log_z0.is_finite()) {
        return Err(Error::numerical(format!(
            "f2 moments not finite at cavity ({cav_mean:.3e}, {cav_var:.3e}, p={p:.3e})"
        )));
    }
    Ok(out)
}

/// Matched moments of the support-link factor tilted by its cavity.
#[derive(Debug, Clone, Copy)]
pub struct F3Moments {
    pub mean: f64,
    pub var: f64,
    pub e_z: f64,
    pub log_z0: f64,
}

/// Tilted moments of the link factor `Ber(z | Φ(γ))` against cavity
/// `N(γ | μ, Σ)·Ber(z | p)`.
///
/// Writing `c = μ/√(1+Σ)`, the two branches integrate to `Φ(c)` and
/// `1 - Φ(c)`, giving `G₀ = (1-p)(1-Φ(c)) + p·Φ(c)` and `Z₁ = p·Φ(c)`. The
/// first and second γ-moments follow from the probit-tilt identities with
/// `d = Σ·φ(c) / (Φ(c)·√(1+Σ))` and
/// `b = Σ²·c·φ(c) / (Φ(c)·(1+Σ))`:
/// `G₁ = G₀·μ + (2Z₁ - Φ(c))·d` and
/// `G₂ = (1-p)·(μ² + Σ - Φ(c)·w) + Z₁·w` with
/// `w = 2μ(μ+d) + (Σ - μ²) - b`.
pub fn moments_f3(cav_mean: f64, cav_var: f64, cav_prob: f64) -> Result<F3Moments> {
    if !(cav_var > 0.0) {
        return Err(Error::invalid("f3 cavity variance must be positive"));
    }
    let p = cav_prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let denom = (1.0 + cav_var).sqrt();
    let c = cav_mean / denom;
    let phi_c = norm_cdf(c);
    let ratio = norm_pdf_over_cdf(c); // φ(c)/Φ(c), stable in the deep tail
    let d = cav_var * ratio / denom;
    let b = cav_var * cav_var * c * ratio / (1.0 + cav_var);
    let w = 2.0 * cav_mean * (cav_mean + d) + (cav_var - cav_mean * cav_mean) - b;

    // G0 in the log domain: both branches can underflow separately.
    let log_phi_c = log_norm_cdf(c);
    let log_one_minus_phi_c = log_norm_cdf(-c);
    let log_z1 = p.ln() + log_phi_c;
    let log_g0 = log_sum_exp((1.0 - p).ln() + log_one_minus_phi_c, log_z1);
    let g0 = log_g0.exp();
    let z1 = log_z1.exp();

    let g1 = g0 * cav_mean + (2.0 * z1 - phi_c) * d;
    let g2 = (1.0 - p) * (cav_mean * cav_mean + cav_var - phi_c * w) + z1 * w;
    let mean = g1 / g0;
    let var = g2 / g0 - mean * mean;
    let e_z = (log_z1 - log_g0).exp();
    if !(mean.is_finite() && var.is_finite() && log_g0.is_finite()) {
        return Err(Error::numerical(format!(
            "f3 moments not finite at cavity ({cav_mean:.3e}, {cav_var:.3e}, p={p:.3e})"
        )));
    }
    if var <= 0.0 {
        return Err(Error::NonPositiveTiltedVariance {
            mean,
            var,
            e_z,
            log_z0: log_g0,
        });
    }
    Ok(F3Moments {
        mean,
        var,
        e_z,
        log_z0: log_g0,
    })
}
