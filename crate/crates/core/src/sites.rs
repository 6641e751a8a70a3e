//! Site approximations in natural parameters.
//!
//! Every approximate factor is an exponential-family surrogate, so products
//! and quotients reduce to sums and differences of natural parameters.
//! Gaussian sites carry `(precision, precision·mean)`, Bernoulli sites carry
//! log-odds clamped to ±35 (beyond that a probit probability underflows in
//! double precision anyway).

use nalgebra::DMatrix;

use crate::math::{logit, sigmoid};

/// Log-odds magnitude beyond which Bernoulli sites saturate.
pub const LOG_ODDS_CLAMP: f64 = 35.0;

/// Cavity precisions at or below this are treated as invalid and the site
/// update is skipped for the sweep.
pub const MIN_CAVITY_PRECISION: f64 = 1e-12;

/// Probability clamp used before logit transforms.
pub const PROB_EPS: f64 = 1e-12;

/// Gaussian site in natural parameters. `precision = 0` is the uninformative site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSiteNat {
    pub precision: f64,
    pub precision_times_mean: f64,
}

impl GaussianSiteNat {
    pub const UNINFORMATIVE: GaussianSiteNat = GaussianSiteNat {
        precision: 0.0,
        precision_times_mean: 0.0,
    };

    pub fn from_moments(mean: f64, variance: f64) -> Self {
        GaussianSiteNat {
            precision: 1.0 / variance,
            precision_times_mean: mean / variance,
        }
    }

    pub fn mean(&self) -> f64 {
        self.precision_times_mean / self.precision
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }
}

/// Bernoulli site stored as clamped log-odds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliSiteNat {
    log_odds: f64,
}

impl BernoulliSiteNat {
    pub const NEUTRAL: BernoulliSiteNat = BernoulliSiteNat { log_odds: 0.0 };

    pub fn new(log_odds: f64) -> Self {
        BernoulliSiteNat {
            log_odds: log_odds.clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP),
        }
    }

    pub fn log_odds(&self) -> f64 {
        self.log_odds
    }

    pub fn prob(&self) -> f64 {
        sigmoid(self.log_odds)
    }
}

/// Combine two Bernoulli factors over the same variable: the product's
/// log-odds is the sum of the factors' log-odds.
pub fn combine_log_odds(a: f64, b: f64) -> f64 {
    a + b
}

/// Cavity of a scalar Gaussian marginal with one site removed, as
/// `(mean, variance)`. `None` signals an invalid cavity (the site holds more
/// precision than the marginal) and the caller skips the update this sweep.
pub fn cavity_gaussian(
    global_precision: f64,
    global_ptm: f64,
    site: &GaussianSiteNat,
) -> Option<(f64, f64)> {
    let prec = global_precision - site.precision;
    if prec <= MIN_CAVITY_PRECISION {
        return None;
    }
    let ptm = global_ptm - site.precision_times_mean;
    Some((ptm / prec, 1.0 / prec))
}

/// Damped natural-parameter site update from matched moments.
///
/// The undamped target is `Q* naturals − cavity naturals`; the new site is a
/// convex combination with the old one. A resulting negative precision is
/// replaced by the configured large variance with the site mean pinned to the
/// matched posterior mean, which is the positivity-constrained KL optimum.
pub fn site_update_from_moments(
    post_mean: f64,
    post_var: f64,
    cav_mean: f64,
    cav_var: f64,
    old: &GaussianSiteNat,
    damping: f64,
    clamp_variance: f64,
) -> GaussianSiteNat {
    let target_prec = 1.0 / post_var - 1.0 / cav_var;
    let target_ptm = post_mean / post_var - cav_mean / cav_var;
    let precision = (1.0 - damping) * old.precision + damping * target_prec;
    let ptm = (1.0 - damping) * old.precision_times_mean + damping * target_ptm;
    if precision < 0.0 || !precision.is_finite() || !ptm.is_finite() {
        return GaussianSiteNat {
            precision: 1.0 / clamp_variance,
            precision_times_mean: post_mean / clamp_variance,
        };
    }
    GaussianSiteNat {
        precision,
        precision_times_mean: ptm,
    }
}

/// Damped Bernoulli site update: the site's new log-odds is the tilted
/// expectation's logit minus the cavity log-odds (the Bernoulli quotient).
pub fn bernoulli_site_update(
    e_z: f64,
    cavity_log_odds: f64,
    old: &BernoulliSiteNat,
    damping: f64,
) -> BernoulliSiteNat {
    let target = logit(e_z.clamp(PROB_EPS, 1.0 - PROB_EPS)) - cavity_log_odds;
    BernoulliSiteNat::new((1.0 - damping) * old.log_odds + damping * target)
}

/// All site parameters of one EP run, flat over `(i, t)` with time slowest.
#[derive(Debug, Clone)]
pub struct SiteStore {
    pub f2_gauss: Vec<GaussianSiteNat>,
    pub f2_bern: Vec<BernoulliSiteNat>,
    pub f3_gauss: Vec<GaussianSiteNat>,
    pub f3_bern: Vec<BernoulliSiteNat>,
    /// Probit observation sites, `N x T` column-major; `None` under the
    /// Gaussian likelihood where the observation factor is exact.
    pub f1_gauss: Option<DMatrix<GaussianSiteNat>>,
}

impl SiteStore {
    pub fn new(d: usize, t: usize, n: usize, init_site_var: f64, probit: bool) -> Self {
        let count = d * t;
        let g = GaussianSiteNat {
            precision: 1.0 / init_site_var,
            precision_times_mean: 0.0,
        };
        SiteStore {
            f2_gauss: vec![g; count],
            f2_bern: vec![BernoulliSiteNat::NEUTRAL; count],
            f3_gauss: vec![g; count],
            f3_bern: vec![BernoulliSiteNat::NEUTRAL; count],
            f1_gauss: probit
                .then(|| DMatrix::from_element(n, t, GaussianSiteNat::UNINFORMATIVE)),
        }
    }

    /// Global support log-odds of entry `k`: sum of the two Bernoulli sites.
    pub fn support_log_odds(&self, k: usize) -> f64 {
        combine_log_odds(self.f2_bern[k].log_odds(), self.f3_bern[k].log_odds())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cavity_subtracts_naturals() {
        let site = GaussianSiteNat {
            precision: 1.0,
            precision_times_mean: 1.0,
        };
        let (m, v) = cavity_gaussian(2.0, 2.0, &site).unwrap();
        assert_relative_eq!(m, 1.0);
        assert_relative_eq!(v, 1.0);
    }

    #[test]
    fn cavity_of_uninformative_site_is_global() {
        let (m, v) = cavity_gaussian(4.0, 2.0, &GaussianSiteNat::UNINFORMATIVE).unwrap();
        assert_relative_eq!(m, 0.5);
        assert_relative_eq!(v, 0.25);
    }

    #[test]
    fn cavity_guard_trips_on_overconfident_site() {
        let site = GaussianSiteNat {
            precision: 3.0,
            precision_times_mean: 0.0,
        };
        assert!(cavity_gaussian(2.0, 0.0, &site).is_none());
    }

    #[test]
    fn site_update_cancels_when_posterior_equals_cavity() {
        let old = GaussianSiteNat::from_moments(0.4, 2.0);
        let s = site_update_from_moments(1.0, 0.5, 1.0, 0.5, &old, 1.0, 1e2);
        assert_relative_eq!(s.precision, 0.0, epsilon = 1e-14);
        assert_relative_eq!(s.precision_times_mean, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn site_update_zero_damping_keeps_site() {
        let old = GaussianSiteNat::from_moments(-1.0, 0.7);
        let s = site_update_from_moments(3.0, 0.1, 0.0, 1.0, &old, 0.0, 1e2);
        assert_relative_eq!(s.precision, old.precision);
        assert_relative_eq!(s.precision_times_mean, old.precision_times_mean);
    }

    #[test]
    fn negative_precision_clamps_to_large_variance() {
        // Posterior broader than the cavity forces a negative site precision.
        let old = GaussianSiteNat::UNINFORMATIVE;
        let s = site_update_from_moments(0.2, 2.0, 0.0, 1.0, &old, 1.0, 1e2);
        assert_relative_eq!(s.variance(), 1e2);
        assert_relative_eq!(s.mean(), 0.2);
    }

    /// Undamped site refresh followed by cavity recombination reproduces the
    /// matched posterior moments.
    #[test]
    fn cavity_update_round_trip() {
        let (cav_m, cav_v) = (0.7, 1.3);
        let (post_m, post_v) = (0.2, 0.4);
        let old = GaussianSiteNat::from_moments(-0.3, 5.0);
        let site = site_update_from_moments(post_m, post_v, cav_m, cav_v, &old, 1.0, 1e2);
        let joint_prec = 1.0 / cav_v + site.precision;
        let joint_ptm = cav_m / cav_v + site.precision_times_mean;
        assert_relative_eq!(1.0 / joint_prec, post_v, max_relative = 1e-10);
        assert_relative_eq!(joint_ptm / joint_prec, post_m, max_relative = 1e-10);
    }

    #[test]
    fn bernoulli_combination_rules() {
        // Neutral element.
        assert_relative_eq!(sigmoid(combine_log_odds(0.0, logit(0.3))), 0.3, max_relative = 1e-12);
        // Two 0.9 factors.
        let p = sigmoid(combine_log_odds(logit(0.9), logit(0.9)));
        assert_relative_eq!(p, 0.81 / 0.82, max_relative = 1e-12);
    }

    #[test]
    fn bernoulli_site_neutral_when_expectation_matches_cavity() {
        let s = bernoulli_site_update(0.7, logit(0.7), &BernoulliSiteNat::NEUTRAL, 1.0);
        assert_relative_eq!(s.log_odds(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_site_clamps() {
        let s = bernoulli_site_update(1.0 - 1e-18, -40.0, &BernoulliSiteNat::NEUTRAL, 1.0);
        assert_eq!(s.log_odds(), LOG_ODDS_CLAMP);
    }
}
