//! Scalar probability functions used throughout the EP updates.
//!
//! Everything here is written to stay finite in the deep tails: densities and
//! CDFs are evaluated in the log domain, and `log_norm_cdf` switches to an
//! asymptotic expansion where `erfc` loses relative accuracy.

use libm::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal log-density.
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * (LN_2PI + x * x)
}

/// Log of the standard normal CDF, accurate for arbitrarily negative `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // ln Φ(x) = ln φ(x) - ln|x| + ln(1 - 1/x² + 3/x⁴ - 15/x⁶ + 105/x⁸ - 945/x¹⁰)
        let inv2 = 1.0 / (x * x);
        let series =
            1.0 - inv2 * (1.0 - inv2 * (3.0 - inv2 * (15.0 - inv2 * (105.0 - inv2 * 945.0))));
        norm_logpdf(x) - (-x).ln() + series.ln()
    }
}

/// Mills-ratio style quotient φ(x)/Φ(x), stable for very negative `x`.
pub fn norm_pdf_over_cdf(x: f64) -> f64 {
    (norm_logpdf(x) - log_norm_cdf(x)).exp()
}

/// log N(0 | mean, var).
pub fn log_norm_pdf0(mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + mean * mean / var)
}

/// ln(1 + eˣ) without overflow.
pub fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(norm_cdf(1.0), 0.841344746068543, max_relative = 1e-13);
        assert_relative_eq!(norm_cdf(-1.0), 1.0 - 0.841344746068543, max_relative = 1e-13);
    }

    #[test]
    fn log_cdf_matches_direct_in_bulk() {
        for &x in &[-8.0, -3.0, -0.5, 0.0, 1.5, 6.0] {
            assert_relative_eq!(log_norm_cdf(x), norm_cdf(x).ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn log_cdf_tail_continuity() {
        // The erfc branch still works at -31; the asymptotic branch must agree with it.
        let x = -31.0;
        let direct = (0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)).ln();
        assert_relative_eq!(log_norm_cdf(x), direct, max_relative = 1e-11);
        // Deep tail stays finite.
        assert!(log_norm_cdf(-300.0).is_finite());
        assert!(norm_pdf_over_cdf(-300.0).is_finite());
        // φ(x)/Φ(x) → -x for x → -∞.
        assert_relative_eq!(norm_pdf_over_cdf(-300.0), 300.0, max_relative = 1e-4);
    }

    #[test]
    fn logistic_pair() {
        for &x in &[-20.0, -1.0, 0.0, 0.3, 17.0] {
            assert_relative_eq!(logit(sigmoid(x)), x, max_relative = 1e-9);
        }
        assert_relative_eq!(log1pexp(50.0), 50.0, max_relative = 1e-15);
        assert_relative_eq!(log1pexp(0.0), std::f64::consts::LN_2, max_relative = 1e-15);
    }
}
