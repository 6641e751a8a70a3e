//! Parallel EP over the full hierarchy.
//!
//! One iteration refreshes, in order: the probit observation sites (when the
//! likelihood is non-Gaussian), the coefficient/support sites, the global
//! Gaussian over each coefficient column, the support/structure sites, and
//! the global Gaussian over the structure field. Within a family all sites
//! are refreshed against the same pre-sweep global approximation, so the
//! result does not depend on the order the sites are visited in.
//!
//! Damping blends old and new natural parameters; negative precisions fall
//! back to the configured large variances. The marginal-likelihood
//! approximation is accumulated every iteration from the tilted normalizers,
//! the site partition functions, and the partition of the final joint
//! products, and doubles as a convergence monitor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gamma::{aggregate_group_sites, GammaRefresh, GammaUpdater};
use crate::global_x::{update_global_x, XColumnUpdate};
use crate::kernel::RankTarget;
use crate::likelihood::{gaussian_f1_naturals, probit_tilted_moments, Likelihood, Problem};
use crate::math::{log1pexp, log_norm_pdf0, sigmoid, LN_2PI};
use crate::moments::{moments_f2, moments_f3};
use crate::prior::{GammaPriorSpec, GroupMap, PriorModel, SlabParams};
use crate::sites::{
    bernoulli_site_update, cavity_gaussian, site_update_from_moments, BernoulliSiteNat,
    GaussianSiteNat, MIN_CAVITY_PRECISION,
};

/// Strategy for refreshing the global structure posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Full,
    LowRank(RankTarget),
    CommonPrecision,
    Grouped {
        spatial: usize,
        temporal: usize,
        inner: GroupedInner,
    },
}

/// Refresh strategy applied on top of the grouped lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupedInner {
    Full,
    LowRank(RankTarget),
    CommonPrecision,
}

impl Scheme {
    fn uses_common_precision(&self) -> bool {
        matches!(
            self,
            Scheme::CommonPrecision
                | Scheme::Grouped {
                    inner: GroupedInner::CommonPrecision,
                    ..
                }
        )
    }
}

fn parse_rank_target(s: &str) -> Result<RankTarget> {
    if s.contains('.') {
        let f: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("invalid variance fraction '{s}'")))?;
        Ok(RankTarget::VarianceFraction(f))
    } else {
        let k: usize = s
            .parse()
            .map_err(|_| Error::Config(format!("invalid rank '{s}'")))?;
        Ok(RankTarget::Rank(k))
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// `full` | `lowrank:<K|frac>` | `cp` | `group:<gs>x<gt>[+full|+cp|+lowrank:<K|frac>]`
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Scheme::Full);
        }
        if s == "cp" {
            return Ok(Scheme::CommonPrecision);
        }
        if let Some(rest) = s.strip_prefix("lowrank:") {
            return Ok(Scheme::LowRank(parse_rank_target(rest)?));
        }
        if let Some(rest) = s.strip_prefix("group:") {
            let (sizes, inner) = match rest.split_once('+') {
                Some((a, b)) => (a, Some(b)),
                None => (rest, None),
            };
            let (gs, gt) = sizes
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("expected group:<gs>x<gt>, got '{s}'")))?;
            let spatial: usize = gs
                .parse()
                .map_err(|_| Error::Config(format!("invalid spatial group size '{gs}'")))?;
            let temporal: usize = gt
                .parse()
                .map_err(|_| Error::Config(format!("invalid temporal group size '{gt}'")))?;
            if spatial == 0 || temporal == 0 {
                return Err(Error::Config("group sizes must be >= 1".into()));
            }
            let inner = match inner {
                None | Some("full") => GroupedInner::Full,
                Some("cp") => GroupedInner::CommonPrecision,
                Some(other) => match other.strip_prefix("lowrank:") {
                    Some(t) => GroupedInner::LowRank(parse_rank_target(t)?),
                    None => {
                        return Err(Error::Config(format!(
                            "unknown grouped inner scheme '{other}'"
                        )))
                    }
                },
            };
            return Ok(Scheme::Grouped {
                spatial,
                temporal,
                inner,
            });
        }
        Err(Error::Config(format!("unknown scheme '{s}'")))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn target(t: &RankTarget) -> String {
            match t {
                RankTarget::Rank(k) => format!("{k}"),
                RankTarget::VarianceFraction(fr) => format!("{fr}"),
            }
        }
        match self {
            Scheme::Full => write!(f, "full"),
            Scheme::LowRank(t) => write!(f, "lowrank:{}", target(t)),
            Scheme::CommonPrecision => write!(f, "cp"),
            Scheme::Grouped {
                spatial,
                temporal,
                inner,
            } => {
                write!(f, "group:{spatial}x{temporal}")?;
                match inner {
                    GroupedInner::Full => Ok(()),
                    GroupedInner::CommonPrecision => write!(f, "+cp"),
                    GroupedInner::LowRank(t) => write!(f, "+lowrank:{}", target(t)),
                }
            }
        }
    }
}

/// Engine configuration. The defaults are the ones used throughout the
/// synthetic benchmarks.
#[derive(Debug, Clone)]
pub struct EpConfig {
    /// Convex-combination weight on the new site parameters.
    pub damping: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest site natural-parameter change.
    pub tol: f64,
    /// Alternative convergence threshold on the evidence change.
    pub evidence_tol: f64,
    /// Replacement variance when a coefficient site turns negative.
    pub v_inf: f64,
    /// Replacement variance when a structure site turns negative.
    pub sigma_inf: f64,
    pub init_site_var: f64,
    /// Structure-block refreshes per iteration under common precision.
    pub cp_inner_repeats: usize,
    /// Damping multiplier applied when the evidence drops late in a
    /// common-precision run.
    pub cp_damping_decay: f64,
    pub cp_decay_after: usize,
    pub scheme: Scheme,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig {
            damping: 0.5,
            max_iters: 200,
            tol: 1e-6,
            evidence_tol: 1e-8,
            v_inf: 1e2,
            sigma_inf: 1e6,
            init_site_var: 1e4,
            cp_inner_repeats: 5,
            cp_damping_decay: 0.9,
            cp_decay_after: 100,
            scheme: Scheme::Full,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        for (name, v) in [
            ("tol", self.tol),
            ("v_inf", self.v_inf),
            ("sigma_inf", self.sigma_inf),
            ("init_site_var", self.init_site_var),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Posterior summaries and diagnostics of one EP run.
#[derive(Debug, Clone)]
pub struct EpResult {
    pub x_mean: DMatrix<f64>,
    pub x_var: DMatrix<f64>,
    pub support_prob: DMatrix<f64>,
    /// Structure posterior mean (grouped resolution when a group map is active).
    pub gamma_mean: DVector<f64>,
    pub gamma_var: DVector<f64>,
    pub log_evidence: f64,
    pub iterations: usize,
    pub converged: bool,
    pub evidence_trace: Vec<f64>,
}

/// Build the grouped (or identity) lattice and matching prior for a scheme,
/// then run EP.
pub fn run_ep_model(
    problem: &Problem,
    model: &PriorModel,
    slab: &SlabParams,
    config: &EpConfig,
) -> Result<EpResult> {
    let (prior, map) = materialize_for_scheme(model, problem.d(), problem.t(), &config.scheme)?;
    run_ep(problem, &prior, slab, &map, config)
}

/// Materialize a kernel-level prior at the resolution the scheme needs.
pub fn materialize_for_scheme(
    model: &PriorModel,
    d: usize,
    t: usize,
    scheme: &Scheme,
) -> Result<(GammaPriorSpec, GroupMap)> {
    match scheme {
        Scheme::Grouped {
            spatial, temporal, ..
        } => {
            let map = crate::prior::build_group_map(d, t, *spatial, *temporal);
            let prior = model.materialize_grouped(&map)?;
            Ok((prior, map))
        }
        _ => Ok((model.materialize(d, t)?, GroupMap::identity(d, t))),
    }
}

/// log ∫ exp(−½θs² + νs)·N(s|m,v) ds — partition of one natural-form scalar
/// site against its cavity.
fn log_partition_scalar(theta: f64, nu: f64, m: f64, v: f64) -> f64 {
    let a = theta + 1.0 / v;
    let b = nu + m / v;
    b * b / (2.0 * a) - m * m / (2.0 * v) - 0.5 * (v * a).ln()
}

/// Σ_z of the product of two Bernoulli factors, in log-odds form.
fn log_bernoulli_partition(a: f64, b: f64) -> f64 {
    log1pexp(a + b) - log1pexp(a) - log1pexp(b)
}

/// Floor on stored site precisions; an exactly uninformative Gaussian site
/// has no finite partition function against its cavity.
const MIN_SITE_PRECISION: f64 = 1e-12;

struct Snapshot {
    x_mean: DMatrix<f64>,
    x_var: DMatrix<f64>,
    support_prob: DMatrix<f64>,
    gamma_mean: DVector<f64>,
    gamma_var: DVector<f64>,
    log_evidence: f64,
    iteration: usize,
}

/// Run parallel EP on a problem with a materialized prior.
///
/// `prior` lives on the lattice described by `map` (identity for ungrouped
/// runs); its dimension must equal `map.group_count`. The run is fully
/// deterministic: no randomness enters the engine.
pub fn run_ep(
    problem: &Problem,
    prior: &GammaPriorSpec,
    slab: &SlabParams,
    map: &GroupMap,
    config: &EpConfig,
) -> Result<EpResult> {
    config.validate()?;
    let (n, d, t_len) = (problem.n(), problem.d(), problem.t());
    let dt = d * t_len;
    if map.d != d || map.t != t_len {
        return Err(Error::invalid("group map does not match problem dimensions"));
    }
    if prior.dim() != map.group_count {
        return Err(Error::invalid(format!(
            "prior dimension {} does not match lattice size {}",
            prior.dim(),
            map.group_count
        )));
    }

    let updater = match &config.scheme {
        Scheme::Full => GammaUpdater::full(prior)?,
        Scheme::LowRank(t) => GammaUpdater::low_rank(prior, Some(*t))?,
        Scheme::CommonPrecision => GammaUpdater::common_precision(prior)?,
        Scheme::Grouped { inner, .. } => match inner {
            GroupedInner::Full => GammaUpdater::full(prior)?,
            GroupedInner::LowRank(t) => GammaUpdater::low_rank(prior, Some(*t))?,
            GroupedInner::CommonPrecision => GammaUpdater::common_precision(prior)?,
        },
    };

    let probit = matches!(problem.likelihood, Likelihood::Probit);
    let init_prec = 1.0 / config.init_site_var;

    // Site stores, flat over (i, t) with t slowest.
    let mut f2_prec = vec![init_prec; dt];
    let mut f2_ptm = vec![0.0f64; dt];
    let mut f2_lo = vec![0.0f64; dt];
    let mut f3_prec = vec![init_prec; dt];
    let mut f3_ptm = vec![0.0f64; dt];
    let mut f3_lo = vec![0.0f64; dt];
    let mut f1_theta = DMatrix::zeros(n, t_len);
    let mut f1_nu = DMatrix::zeros(n, t_len);

    // Per-column observation naturals for the coefficient refresh.
    let obs_naturals = |f1_theta: &DMatrix<f64>, f1_nu: &DMatrix<f64>, t: usize| -> Result<(DVector<f64>, DVector<f64>)> {
        match problem.likelihood {
            Likelihood::Gaussian { noise_variance } => {
                gaussian_f1_naturals(&problem.a, &problem.y.column(t).into_owned(), noise_variance)
            }
            Likelihood::Probit => Ok((
                f1_theta.column(t).into_owned(),
                f1_nu.column(t).into_owned(),
            )),
        }
    };

    let refresh_x = |f2_prec: &[f64], f2_ptm: &[f64], f1_theta: &DMatrix<f64>, f1_nu: &DMatrix<f64>| -> Result<Vec<XColumnUpdate>> {
        let mut cols = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let site_var = DVector::from_fn(d, |i, _| 1.0 / f2_prec[t * d + i]);
            let site_ptm = DVector::from_fn(d, |i, _| f2_ptm[t * d + i]);
            let (theta, nu) = obs_naturals(f1_theta, f1_nu, t)?;
            cols.push(update_global_x(&problem.a, &site_var, &site_ptm, &theta, &nu)?);
        }
        Ok(cols)
    };

    let refresh_gamma = |f3_prec: &[f64], f3_ptm: &[f64]| -> Result<GammaRefresh> {
        let (agg_prec, agg_ptm) = aggregate_group_sites(map, f3_prec, f3_ptm);
        updater.refresh(&agg_prec, &agg_ptm)
    };

    let mut x_cols = refresh_x(&f2_prec, &f2_ptm, &f1_theta, &f1_nu)?;
    let mut gamma = refresh_gamma(&f3_prec, &f3_ptm)?;

    // Per-observation Gaussian-likelihood constants for the evidence.
    let gauss_consts: f64 = match problem.likelihood {
        Likelihood::Gaussian { noise_variance } => problem
            .y
            .iter()
            .map(|&v| -0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * v * v / noise_variance)
            .sum(),
        Likelihood::Probit => 0.0,
    };

    let mut damping = config.damping;
    let mut trace: Vec<f64> = Vec::with_capacity(config.max_iters);
    let mut prev_evidence = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_evidence = f64::NEG_INFINITY;
    let cp_mode = config.scheme.uses_common_precision();

    for iter in 1..=config.max_iters {
        iterations = iter;
        let mut max_delta = 0.0f64;
        let mut term_f1 = 0.0f64;
        let mut term_f2 = 0.0f64;
        let mut term_f3 = 0.0f64;

        // --- observation sites (probit only)
        if probit {
            for t in 0..t_len {
                let (proj_mean, proj_var) = x_cols[t].projection_marginals(&problem.a);
                for obs in 0..n {
                    let theta = f1_theta[(obs, t)];
                    let nu = f1_nu[(obs, t)];
                    let global_prec = 1.0 / proj_var[obs];
                    let cav_prec = global_prec - theta;
                    if cav_prec <= MIN_CAVITY_PRECISION {
                        continue;
                    }
                    let cav_ptm = proj_mean[obs] * global_prec - nu;
                    let (mc, vc) = (cav_ptm / cav_prec, 1.0 / cav_prec);
                    let tilt = probit_tilted_moments(mc, vc, problem.y[(obs, t)])?;
                    let target_theta = 1.0 / tilt.var - cav_prec;
                    let target_nu = tilt.mean / tilt.var - cav_ptm;
                    let mut new_theta = (1.0 - damping) * theta + damping * target_theta;
                    let mut new_nu = (1.0 - damping) * nu + damping * target_nu;
                    if !(new_theta > 0.0) || !new_theta.is_finite() || !new_nu.is_finite() {
                        new_theta = 0.0;
                        new_nu = 0.0;
                    }
                    max_delta = max_delta
                        .max((new_theta - theta).abs())
                        .max((new_nu - nu).abs());
                    f1_theta[(obs, t)] = new_theta;
                    f1_nu[(obs, t)] = new_nu;
                    term_f1 += tilt.log_z - log_partition_scalar(new_theta, new_nu, mc, vc);
                }
            }
        }

        // --- coefficient/support sites
        for t in 0..t_len {
            let col = &x_cols[t];
            for i in 0..d {
                let k = t * d + i;
                let gv = col.var_diag[i];
                let global_prec = 1.0 / gv;
                let global_ptm = col.mean[i] * global_prec;
                let site = GaussianSiteNat {
                    precision: f2_prec[k],
                    precision_times_mean: f2_ptm[k],
                };
                let Some((mc, vc)) = cavity_gaussian(global_prec, global_ptm, &site) else {
                    continue;
                };
                let cav_lo = f3_lo[k];
                let fm = moments_f2(mc, vc, sigmoid(cav_lo), slab)?;
                let mut new_site = site_update_from_moments(
                    fm.mean, fm.var, mc, vc, &site, damping, config.v_inf,
                );
                new_site.precision = new_site.precision.max(MIN_SITE_PRECISION);
                let old_b = BernoulliSiteNat::new(f2_lo[k]);
                let new_b = bernoulli_site_update(fm.e_z, cav_lo, &old_b, damping);
                max_delta = max_delta
                    .max((new_site.precision - f2_prec[k]).abs())
                    .max((new_site.precision_times_mean - f2_ptm[k]).abs())
                    .max((new_b.log_odds() - f2_lo[k]).abs());
                f2_prec[k] = new_site.precision;
                f2_ptm[k] = new_site.precision_times_mean;
                f2_lo[k] = new_b.log_odds();
                let log_c = log_norm_pdf0(new_site.mean() - mc, new_site.variance() + vc)
                    + log_bernoulli_partition(new_b.log_odds(), cav_lo);
                term_f2 += fm.log_z0 - log_c;
            }
        }
        x_cols = refresh_x(&f2_prec, &f2_ptm, &f1_theta, &f1_nu)?;

        // --- structure sites and global; repeated under common precision to
        //     counter its slower information flow.
        let reps = if cp_mode { config.cp_inner_repeats.max(1) } else { 1 };
        for _ in 0..reps {
            term_f3 = 0.0;
            for t in 0..t_len {
                for i in 0..d {
                    let k = t * d + i;
                    let g = map.group_of(i, t);
                    let gv = gamma.var_diag[g];
                    let global_prec = 1.0 / gv;
                    let global_ptm = gamma.mean[g] * global_prec;
                    let site = GaussianSiteNat {
                        precision: f3_prec[k],
                        precision_times_mean: f3_ptm[k],
                    };
                    let Some((mc, vc)) = cavity_gaussian(global_prec, global_ptm, &site) else {
                        continue;
                    };
                    let cav_lo = f2_lo[k];
                    let (post_mean, post_var, e_z, log_z0) =
                        match moments_f3(mc, vc, sigmoid(cav_lo)) {
                            Ok(m) => (m.mean, m.var, m.e_z, m.log_z0),
                            // Cancellation produced a non-positive tilted
                            // variance: clamp this site to the wide fallback.
                            Err(Error::NonPositiveTiltedVariance {
                                mean, e_z, log_z0, ..
                            }) => (mean, -1.0, e_z, log_z0),
                            Err(e) => return Err(e),
                        };
                    let mut new_site = if post_var > 0.0 {
                        site_update_from_moments(
                            post_mean,
                            post_var,
                            mc,
                            vc,
                            &site,
                            damping,
                            config.sigma_inf,
                        )
                    } else {
                        GaussianSiteNat {
                            precision: 1.0 / config.sigma_inf,
                            precision_times_mean: post_mean / config.sigma_inf,
                        }
                    };
                    new_site.precision = new_site.precision.max(MIN_SITE_PRECISION);
                    let old_b = BernoulliSiteNat::new(f3_lo[k]);
                    let new_b = bernoulli_site_update(e_z, cav_lo, &old_b, damping);
                    max_delta = max_delta
                        .max((new_site.precision - f3_prec[k]).abs())
                        .max((new_site.precision_times_mean - f3_ptm[k]).abs())
                        .max((new_b.log_odds() - f3_lo[k]).abs());
                    f3_prec[k] = new_site.precision;
                    f3_ptm[k] = new_site.precision_times_mean;
                    f3_lo[k] = new_b.log_odds();
                    let log_c = log_norm_pdf0(new_site.mean() - mc, new_site.variance() + vc)
                        + log_bernoulli_partition(new_b.log_odds(), cav_lo);
                    term_f3 += log_z0 - log_c;
                }
            }
            gamma = refresh_gamma(&f3_prec, &f3_ptm)?;
        }

        // --- marginal-likelihood assembly
        let mut part_x = gauss_consts;
        for t in 0..t_len {
            let site_ptm = DVector::from_fn(d, |i, _| f2_ptm[t * d + i]);
            let (_, nu) = obs_naturals(&f1_theta, &f1_nu, t)?;
            part_x += x_cols[t].log_partition_natural(&problem.a, &site_ptm, &nu);
        }
        let mut part_z = 0.0;
        for k in 0..dt {
            part_z += log_bernoulli_partition(f2_lo[k], f3_lo[k]);
        }
        let mut gamma_site_consts = 0.0;
        for k in 0..dt {
            let v = 1.0 / f3_prec[k];
            let m = f3_ptm[k] * v;
            gamma_site_consts += -0.5 * (LN_2PI + v.ln()) - 0.5 * m * m / v;
        }
        let (agg_prec, agg_ptm) = aggregate_group_sites(map, &f3_prec, &f3_ptm);
        let part_gamma = gamma_site_consts + updater.log_partition(&agg_prec, &agg_ptm)?;
        let log_evidence = term_f1 + term_f2 + term_f3 + part_x + part_z + part_gamma;
        if !log_evidence.is_finite() {
            return Err(Error::numerical(format!(
                "marginal-likelihood approximation became non-finite at iteration {iter}"
            )));
        }
        trace.push(log_evidence);

        last_evidence = log_evidence;
        let evidence_delta = (log_evidence - prev_evidence).abs();
        if max_delta < config.tol || (iter > 1 && evidence_delta < config.evidence_tol) {
            converged = true;
            break;
        }
        // Stabilization for oscillating runs: progressively damp when the
        // evidence drops late in the run. Runs that are converging never
        // trigger this.
        if iter > config.cp_decay_after && log_evidence < prev_evidence {
            damping = (damping * config.cp_damping_decay).max(1e-3);
        }
        prev_evidence = log_evidence;
    }

    let final_snap = snapshot(
        d,
        t_len,
        &x_cols,
        &f2_lo,
        &f3_lo,
        &gamma,
        last_evidence,
        iterations,
    );

    Ok(EpResult {
        x_mean: final_snap.x_mean,
        x_var: final_snap.x_var,
        support_prob: final_snap.support_prob,
        gamma_mean: final_snap.gamma_mean,
        gamma_var: final_snap.gamma_var,
        log_evidence: final_snap.log_evidence,
        iterations,
        converged,
        evidence_trace: trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    d: usize,
    t_len: usize,
    x_cols: &[XColumnUpdate],
    f2_lo: &[f64],
    f3_lo: &[f64],
    gamma: &GammaRefresh,
    log_evidence: f64,
    iteration: usize,
) -> Snapshot {
    let mut x_mean = DMatrix::zeros(d, t_len);
    let mut x_var = DMatrix::zeros(d, t_len);
    let mut support = DMatrix::zeros(d, t_len);
    for t in 0..t_len {
        for i in 0..d {
            x_mean[(i, t)] = x_cols[t].mean[i];
            x_var[(i, t)] = x_cols[t].var_diag[i];
            support[(i, t)] = sigmoid(f2_lo[t * d + i] + f3_lo[t * d + i]);
        }
    }
    Snapshot {
        x_mean,
        x_var,
        support_prob: support,
        gamma_mean: gamma.mean.clone(),
        gamma_var: gamma.var_diag.clone(),
        log_evidence,
        iteration,
    }
}

impl Snapshot {
    #[allow(dead_code)]
    fn iteration(&self) -> usize {
        self.iteration
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::CoordinateGrid;
    use crate::prior::{SpatialCov, TemporalCov};
    use approx::assert_relative_eq;
    use nalgebra::Cholesky;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scheme(s: &str) -> Scheme {
        s.parse().unwrap()
    }

    #[test]
    fn scheme_round_trip() {
        for s in [
            "full",
            "cp",
            "lowrank:7",
            "lowrank:0.99",
            "group:5x10",
            "group:5x10+cp",
            "group:2x2+lowrank:0.95",
        ] {
            assert_eq!(scheme(s).to_string(), s);
        }
        assert!("nope".parse::<Scheme>().is_err());
        assert!("group:0x2".parse::<Scheme>().is_err());
    }

    fn toy_problem(seed: u64, n: usize, d: usize, snr_db: f64) -> (Problem, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x0 = DMatrix::from_fn(d, 1, |i, _| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y0 = &a * &x0;
        let mut e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = y0.norm() / (e.norm() * 10f64.powf(snr_db / 20.0));
        e *= scale;
        let s2 = e.norm_squared() / n as f64;
        let y = &y0 + &e;
        let problem = Problem::new(
            a,
            DMatrix::from_column_slice(n, 1, y.as_slice()),
            Likelihood::Gaussian { noise_variance: s2 },
        )
        .unwrap();
        (problem, x0, DMatrix::zeros(0, 0))
    }

    fn diag_model(variance: f64, mean: f64) -> PriorModel {
        PriorModel {
            mean_level: mean,
            spatial: SpatialCov::Diagonal { variance },
            temporal: TemporalCov::Identity,
        }
    }

    #[test]
    fn deterministic_repeat_runs_bit_identical() {
        let (problem, _, _) = toy_problem(3, 8, 16, 20.0);
        let model = diag_model(1.0, -1.0);
        let cfg = EpConfig::default();
        let a = run_ep_model(&problem, &model, &SlabParams::new(0.0, 1.0).unwrap(), &cfg).unwrap();
        let b = run_ep_model(&problem, &model, &SlabParams::new(0.0, 1.0).unwrap(), &cfg).unwrap();
        assert_eq!(a.x_mean, b.x_mean);
        assert_eq!(a.support_prob, b.support_prob);
        assert_eq!(a.log_evidence.to_bits(), b.log_evidence.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    /// Forcing the support on (huge prior mean) reduces the model to Bayesian
    /// linear regression with the slab prior; the evidence then has the
    /// closed form ln N(y | Aρ₀1, τ₀AAᵀ + σ²I).
    #[test]
    fn slab_certain_evidence_matches_gaussian_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d) = (4, 6);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x0 = DMatrix::from_fn(d, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &a * &x0 + DMatrix::from_fn(n, 1, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let s2 = 0.01;
        let problem = Problem::new(a.clone(), y.clone(), Likelihood::Gaussian { noise_variance: s2 }).unwrap();
        let (rho, tau) = (0.3, 1.7);
        let slab = SlabParams::new(rho, tau).unwrap();
        let model = diag_model(1e-4, 40.0);
        let mut cfg = EpConfig::default();
        cfg.damping = 0.8;
        cfg.max_iters = 600;
        cfg.tol = 1e-10;
        cfg.evidence_tol = 1e-13;
        let res = run_ep_model(&problem, &model, &slab, &cfg).unwrap();

        let ones = DVector::from_element(d, 1.0);
        let mean = &a * (rho * ones);
        let mut cov = tau * (&a * a.transpose());
        for i in 0..n {
            cov[(i, i)] += s2;
        }
        let r = DVector::from_column_slice(y.as_slice()) - mean;
        let chol = Cholesky::new(cov).unwrap();
        let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let oracle = -0.5 * (n as f64) * LN_2PI - half_logdet - 0.5 * r.dot(&chol.solve(&r));
        assert_relative_eq!(res.log_evidence, oracle, epsilon = 1e-6);
        // All support probabilities pinned on.
        assert!(res.support_prob.min() > 0.999);
        // The coefficient posterior reduces to the ridge-like closed form
        // (AᵀA/σ² + τ₀⁻¹I)⁻¹(Aᵀy/σ² + ρ₀/τ₀·1).
        let mut prec = a.transpose() * &a / s2;
        for j in 0..d {
            prec[(j, j)] += 1.0 / tau;
        }
        let cov = prec.try_inverse().unwrap();
        let rhs = a.transpose() * DVector::from_column_slice(y.as_slice()) / s2
            + DVector::from_element(d, rho / tau);
        let ridge_mean = &cov * rhs;
        for j in 0..d {
            assert_relative_eq!(res.x_mean[(j, 0)], ridge_mean[j], epsilon = 1e-8);
            assert_relative_eq!(res.x_var[(j, 0)], cov[(j, j)], epsilon = 1e-8);
        }
    }

    /// Relabeling the features permutes the posterior and leaves the
    /// evidence unchanged; within one parallel sweep no site ordering can
    /// leak into the result beyond float summation order.
    #[test]
    fn feature_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (n, d) = (8, 14);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x0 = DMatrix::from_fn(d, 1, |i, _| if i % 5 == 0 { 1.0 } else { 0.0 });
        let y = &a * &x0
            + DMatrix::from_fn(n, 1, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
        let perm: Vec<usize> = (0..d).rev().collect();
        let a_perm = a.select_columns(perm.iter());

        let model = diag_model(1.5, -1.0);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let cfg = EpConfig::default();
        let base = run_ep_model(
            &Problem::new(a, y.clone(), Likelihood::Gaussian { noise_variance: 0.0025 }).unwrap(),
            &model,
            &slab,
            &cfg,
        )
        .unwrap();
        let permuted = run_ep_model(
            &Problem::new(a_perm, y, Likelihood::Gaussian { noise_variance: 0.0025 }).unwrap(),
            &model,
            &slab,
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(base.log_evidence, permuted.log_evidence, epsilon = 1e-9);
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            assert_relative_eq!(
                base.x_mean[(old_idx, 0)],
                permuted.x_mean[(new_idx, 0)],
                epsilon = 1e-9
            );
            assert_relative_eq!(
                base.support_prob[(old_idx, 0)],
                permuted.support_prob[(new_idx, 0)],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn full_and_fullrank_lowrank_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, d) = (10, 20);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x0 = DMatrix::from_fn(d, 1, |i, _| if i >= 8 && i < 12 { 1.0 } else { 0.0 });
        let y = &a * &x0 + DMatrix::from_fn(n, 1, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
        let problem =
            Problem::new(a, y, Likelihood::Gaussian { noise_variance: 0.0025 }).unwrap();
        let model = PriorModel {
            mean_level: -0.5,
            spatial: SpatialCov::SquaredExponential {
                lengthscale: 3.0,
                magnitude: 2.0,
                coords: CoordinateGrid::regular_1d(d),
            },
            temporal: TemporalCov::Identity,
        };
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let mut cfg = EpConfig::default();
        cfg.scheme = scheme("full");
        let full = run_ep_model(&problem, &model, &slab, &cfg).unwrap();
        cfg.scheme = scheme("lowrank:1.0");
        let lr = run_ep_model(&problem, &model, &slab, &cfg).unwrap();
        assert!((&full.x_mean - &lr.x_mean).amax() < 1e-6);
        assert!((&full.support_prob - &lr.support_prob).amax() < 1e-6);
        assert_relative_eq!(full.log_evidence, lr.log_evidence, epsilon = 1e-5);
    }

    #[test]
    fn unit_groups_match_ungrouped() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, d, t) = (6, 8, 3);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x0 = DMatrix::from_fn(d, t, |i, tt| if (i + tt) % 5 == 0 { 0.8 } else { 0.0 });
        let y = &a * &x0 + DMatrix::from_fn(n, t, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
        let problem = Problem::new(a, y, Likelihood::Gaussian { noise_variance: 0.0025 }).unwrap();
        let model = PriorModel {
            mean_level: -0.4,
            spatial: SpatialCov::SquaredExponential {
                lengthscale: 2.0,
                magnitude: 1.5,
                coords: CoordinateGrid::regular_1d(d),
            },
            temporal: TemporalCov::SquaredExponential { lengthscale: 1.5 },
        };
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let mut cfg = EpConfig::default();
        cfg.scheme = scheme("full");
        let ungrouped = run_ep_model(&problem, &model, &slab, &cfg).unwrap();
        cfg.scheme = scheme("group:1x1");
        let grouped = run_ep_model(&problem, &model, &slab, &cfg).unwrap();
        assert!((&ungrouped.x_mean - &grouped.x_mean).amax() < 1e-10);
        assert!((&ungrouped.gamma_mean - &grouped.gamma_mean).amax() < 1e-10);
        assert_relative_eq!(ungrouped.log_evidence, grouped.log_evidence, epsilon = 1e-9);
    }

    #[test]
    fn grouped_runs_on_reduced_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (n, d, t) = (5, 4, 2);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let problem = Problem::new(a, y, Likelihood::Gaussian { noise_variance: 0.1 }).unwrap();
        let model = PriorModel {
            mean_level: 0.0,
            spatial: SpatialCov::SquaredExponential {
                lengthscale: 2.0,
                magnitude: 1.0,
                coords: CoordinateGrid::regular_1d(d),
            },
            temporal: TemporalCov::SquaredExponential { lengthscale: 2.0 },
        };
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let mut cfg = EpConfig::default();
        cfg.scheme = scheme("group:2x2");
        let res = run_ep_model(&problem, &model, &slab, &cfg).unwrap();
        assert_eq!(res.gamma_mean.len(), 2);
        assert_eq!(res.x_mean.shape(), (4, 2));
        for v in res.gamma_var.iter() {
            assert!(*v > 0.0);
        }
    }

    #[test]
    fn global_variances_stay_positive_and_probs_in_range() {
        let (problem, _, _) = toy_problem(21, 10, 24, 10.0);
        let model = diag_model(2.0, -1.0);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let res = run_ep_model(&problem, &model, &slab, &EpConfig::default()).unwrap();
        for v in res.x_var.iter() {
            assert!(*v > 0.0);
        }
        for p in res.support_prob.iter() {
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    /// Separable two-feature probit task: EP must classify the training
    /// points perfectly and orient the posterior mean with the labels.
    #[test]
    fn probit_separable_toy() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut a = DMatrix::zeros(n, 2);
        let mut y = DMatrix::zeros(n, 1);
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            // Feature 0 carries the class, feature 1 is noise.
            a[(i, 0)] = label * (1.5 + rng.gen::<f64>());
            a[(i, 1)] = rng.sample::<f64, _>(StandardNormal);
            y[(i, 0)] = label;
        }
        let problem = Problem::new(a.clone(), y.clone(), Likelihood::Probit).unwrap();
        let model = diag_model(1.0, 1.0);
        let slab = SlabParams::new(0.0, 4.0).unwrap();
        let mut cfg = EpConfig::default();
        cfg.max_iters = 400;
        let res = run_ep_model(&problem, &model, &slab, &cfg).unwrap();
        let proj = &a * res.x_mean.column(0);
        let mut correct = 0;
        for i in 0..n {
            if proj[i] * y[(i, 0)] > 0.0 {
                correct += 1;
            }
        }
        assert_eq!(correct, n, "training accuracy must be 100%");
        assert!(res.x_mean[(0, 0)] > 0.0);
    }

    #[test]
    fn probit_all_positive_labels_single_column() {
        let a = DMatrix::from_element(12, 1, 1.0);
        let y = DMatrix::from_element(12, 1, 1.0);
        let problem = Problem::new(a.clone(), y, Likelihood::Probit).unwrap();
        let model = diag_model(1.0, 2.0);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let res = run_ep_model(&problem, &model, &slab, &EpConfig::default()).unwrap();
        assert!(res.x_mean[(0, 0)] > 0.0);
    }

    /// Negating all labels negates all posterior projection means.
    #[test]
    fn probit_label_negation_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (n, d) = (16, 4);
        let a = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 1, |i, _| if a[(i, 0)] > 0.0 { 1.0 } else { -1.0 });
        let neg_y = -&y;
        let model = diag_model(1.0, 0.5);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let cfg = EpConfig::default();
        let plus = run_ep_model(
            &Problem::new(a.clone(), y, Likelihood::Probit).unwrap(),
            &model,
            &slab,
            &cfg,
        )
        .unwrap();
        let minus = run_ep_model(
            &Problem::new(a.clone(), neg_y, Likelihood::Probit).unwrap(),
            &model,
            &slab,
            &cfg,
        )
        .unwrap();
        assert!((&plus.x_mean + &minus.x_mean).amax() < 1e-8);
    }
}
