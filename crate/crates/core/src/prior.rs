//! Hierarchical sparsity prior.
//!
//! Coefficients are generated in three levels: a Gaussian field `γ` with mean
//! `ν₀` and covariance `Σ₀` carries the structure, binary support indicators
//! follow `z ~ Ber(Φ(γ))`, and active coefficients draw from the slab
//! `N(ρ₀, τ₀)` while inactive ones are exactly zero. A diagonal `Σ₀` recovers
//! the classical independent spike-and-slab model; structured `Σ₀` makes
//! nearby variables more likely to be jointly active.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{
    ar1_temporal_kernel, squared_exponential, CoordinateGrid, DenseCovariance, KroneckerCovariance,
    LowRankPlusDiagonal,
};
use crate::math::norm_cdf;

/// Slab component of the prior on active coefficients: `N(ρ₀, τ₀)`.
#[derive(Debug, Clone, Copy)]
pub struct SlabParams {
    pub mean: f64,
    pub variance: f64,
}

impl SlabParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::invalid("slab variance must be positive and finite"));
        }
        Ok(SlabParams { mean, variance })
    }
}

/// Covariance of the latent structure field, in whichever representation the
/// caller chose to build.
#[derive(Debug, Clone)]
pub enum GammaCovariance {
    Dense(DenseCovariance),
    Kronecker(KroneckerCovariance),
    LowRank(LowRankPlusDiagonal),
    Diagonal(DVector<f64>),
}

impl GammaCovariance {
    pub fn dim(&self) -> usize {
        match self {
            GammaCovariance::Dense(c) => c.dim(),
            GammaCovariance::Kronecker(c) => c.dim(),
            GammaCovariance::LowRank(c) => c.dim(),
            GammaCovariance::Diagonal(d) => d.len(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            GammaCovariance::Dense(c) => c.diagonal(),
            GammaCovariance::Kronecker(c) => c.diagonal(),
            GammaCovariance::LowRank(c) => c.diagonal_reconstruction(),
            GammaCovariance::Diagonal(d) => d.clone(),
        }
    }

    /// Marginal 2x2 covariance of entries `i, j`.
    pub fn marginal_pair(&self, i: usize, j: usize) -> (f64, f64, f64) {
        match self {
            GammaCovariance::Dense(c) => (
                c.values()[(i, i)],
                c.values()[(j, j)],
                c.values()[(i, j)],
            ),
            GammaCovariance::Kronecker(c) => {
                let d = c.spatial.dim();
                let (ti, si) = (i / d, i % d);
                let (tj, sj) = (j / d, j % d);
                let tv = c.temporal.values();
                let sv = c.spatial.values();
                (
                    tv[(ti, ti)] * sv[(si, si)],
                    tv[(tj, tj)] * sv[(sj, sj)],
                    tv[(ti, tj)] * sv[(si, sj)],
                )
            }
            GammaCovariance::LowRank(c) => {
                let mut vii = c.diagonal[i];
                let mut vjj = c.diagonal[j];
                let mut vij = if i == j { c.diagonal[i] } else { 0.0 };
                for k in 0..c.rank() {
                    let s = c.eigenvalues[k];
                    vii += s * c.basis[(i, k)] * c.basis[(i, k)];
                    vjj += s * c.basis[(j, k)] * c.basis[(j, k)];
                    if i != j {
                        vij += s * c.basis[(i, k)] * c.basis[(j, k)];
                    } else {
                        vij = vii;
                    }
                }
                (vii, vjj, vij)
            }
            GammaCovariance::Diagonal(d) => (d[i], d[j], if i == j { d[i] } else { 0.0 }),
        }
    }
}

/// Full specification of the structure prior over a `D x T` (or grouped `G`)
/// latent field: constant mean level plus covariance.
#[derive(Debug, Clone)]
pub struct GammaPriorSpec {
    pub mean_level: f64,
    pub covariance: GammaCovariance,
    /// Spatial extent the field covers (`D` features).
    pub d: usize,
    /// Temporal extent (`T` measurement vectors).
    pub t: usize,
}

impl GammaPriorSpec {
    pub fn new(mean_level: f64, covariance: GammaCovariance, d: usize, t: usize) -> Result<Self> {
        if !mean_level.is_finite() {
            return Err(Error::invalid("prior mean level must be finite"));
        }
        Ok(GammaPriorSpec {
            mean_level,
            covariance,
            d,
            t,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), self.mean_level)
    }
}

/// Surjective map from `(feature, time)` onto shared latent variables.
///
/// With unit group sizes this is the identity; with `gt = T` all time steps
/// of a feature share one support variable (the joint-sparsity model).
#[derive(Debug, Clone)]
pub struct GroupMap {
    table: Vec<usize>,
    pub d: usize,
    pub t: usize,
    pub group_count: usize,
    pub spatial_group_size: usize,
    pub temporal_group_size: usize,
}

impl GroupMap {
    pub fn identity(d: usize, t: usize) -> Self {
        build_group_map(d, t, 1, 1)
    }

    pub fn is_identity(&self) -> bool {
        self.group_count == self.d * self.t
    }

    #[inline]
    pub fn group_of(&self, i: usize, t: usize) -> usize {
        self.table[t * self.d + i]
    }

    #[inline]
    pub fn group_of_flat(&self, flat: usize) -> usize {
        self.table[flat]
    }

    /// Number of spatial blocks.
    pub fn spatial_groups(&self) -> usize {
        self.d.div_ceil(self.spatial_group_size)
    }

    /// Number of temporal blocks.
    pub fn temporal_groups(&self) -> usize {
        self.t.div_ceil(self.temporal_group_size)
    }

    /// Spatial centroids of the blocks, for evaluating a grouped kernel.
    pub fn spatial_centroids(&self, coords: &CoordinateGrid) -> Result<CoordinateGrid> {
        let gd = self.spatial_groups();
        let mut pts = Vec::with_capacity(gd);
        for b in 0..gd {
            let lo = b * self.spatial_group_size;
            let hi = ((b + 1) * self.spatial_group_size).min(self.d);
            let members: Vec<usize> = (lo..hi).collect();
            pts.push(coords.centroid(&members));
        }
        CoordinateGrid::from_points(pts)
    }

    /// Temporal centroids of the blocks on the regular time grid `0..T`.
    pub fn temporal_centroids(&self) -> Result<CoordinateGrid> {
        let gt = self.temporal_groups();
        let mut pts = Vec::with_capacity(gt);
        for b in 0..gt {
            let lo = b * self.temporal_group_size;
            let hi = ((b + 1) * self.temporal_group_size).min(self.t);
            let c = (lo..hi).map(|v| v as f64).sum::<f64>() / (hi - lo) as f64;
            pts.push(vec![c]);
        }
        CoordinateGrid::from_points(pts)
    }
}

/// Contiguous-block grouping: `⌈D/gs⌉ · ⌈T/gt⌉` groups, last block in each
/// dimension absorbing the remainder.
pub fn build_group_map(
    d: usize,
    t: usize,
    spatial_group_size: usize,
    temporal_group_size: usize,
) -> GroupMap {
    let gs = spatial_group_size.max(1);
    let gt = temporal_group_size.max(1);
    let gd = d.div_ceil(gs);
    let mut table = vec![0usize; d * t];
    for tt in 0..t {
        for i in 0..d {
            table[tt * d + i] = (tt / gt) * gd + i / gs;
        }
    }
    GroupMap {
        table,
        d,
        t,
        group_count: gd * t.div_ceil(gt),
        spatial_group_size: gs,
        temporal_group_size: gt,
    }
}

/// One draw from the generative hierarchy.
#[derive(Debug, Clone)]
pub struct PriorSample {
    /// Latent structure field, `D x T`.
    pub gamma: DMatrix<f64>,
    /// Binary support, `D x T`, entries 0/1.
    pub support: DMatrix<f64>,
    /// Coefficients, zero off-support.
    pub coefficients: DMatrix<f64>,
}

impl PriorSample {
    pub fn support_size(&self) -> usize {
        self.support.iter().filter(|&&v| v > 0.5).count()
    }
}

/// Result of cardinality-conditioned sampling.
#[derive(Debug, Clone)]
pub struct ConditionedSample {
    pub sample: PriorSample,
    pub achieved_support: usize,
    /// False when `max_tries` ran out and the closest-cardinality draw was kept.
    pub exact: bool,
}

/// Marginal activation probability `p(z = 1) = Φ(μ / √(1 + var))`.
pub fn marginal_activation_prob(mu: f64, var: f64) -> f64 {
    norm_cdf(mu / (1.0 + var).sqrt())
}

/// Monte Carlo estimate (with standard error) of the probability that entries
/// `i` and `j` are jointly active under the prior.
pub fn joint_activation_prob_mc(
    prior: &GammaPriorSpec,
    i: usize,
    j: usize,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(Error::invalid("joint activation MC needs >= 1000 samples"));
    }
    let dim = prior.dim();
    if i >= dim || j >= dim {
        return Err(Error::invalid("index out of range"));
    }
    let (vii, vjj, vij) = prior.covariance.marginal_pair(i, j);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 2x2 Cholesky of the pair marginal.
    if vii < 0.0 || vjj < 0.0 {
        return Err(Error::numerical("negative marginal variance"));
    }
    let l11 = vii.sqrt();
    let (l21, l22sq) = if i == j {
        (0.0, 0.0)
    } else {
        let l21 = if l11 > 0.0 { vij / l11 } else { 0.0 };
        (l21, vjj - l21 * l21)
    };
    if l22sq < -1e-10 * vjj.max(1.0) {
        return Err(Error::numerical("pair covariance is not PSD"));
    }
    let l22 = l22sq.max(0.0).sqrt();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let e1: f64 = rng.sample(StandardNormal);
        let gi = prior.mean_level + l11 * e1;
        // Same latent variable: being "jointly active" with itself is just
        // being active, so the estimator averages Φ(γ) rather than Φ(γ)².
        let v = if i == j {
            norm_cdf(gi)
        } else {
            let e2: f64 = rng.sample(StandardNormal);
            let gj = prior.mean_level + l21 * e1 + l22 * e2;
            norm_cdf(gi) * norm_cdf(gj)
        };
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Draw `γ ~ N(mean, Σ₀)` as a flat `dim` vector, consuming the RNG in a fixed
/// documented order (column-major field, then auxiliary diagonal noise for the
/// low-rank representation).
fn sample_gamma(prior: &GammaPriorSpec, mean_shift: f64, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let dim = prior.dim();
    let mu = prior.mean_level + mean_shift;
    let draw = |rng: &mut ChaCha8Rng, n: usize| {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let out = match &prior.covariance {
        GammaCovariance::Dense(c) => {
            let chol = c.cholesky().map_err(|e| {
                Error::numerical(format!("prior sampling Cholesky failed ({e}); add jitter"))
            })?;
            chol.l() * draw(rng, dim)
        }
        GammaCovariance::Kronecker(c) => {
            let lt = c.temporal.cholesky()?.l();
            let ls = c.spatial.cholesky()?.l();
            let d = c.spatial.dim();
            let t_len = c.temporal.dim();
            let xi = DMatrix::from_fn(d, t_len, |_, _| rng.sample::<f64, _>(StandardNormal));
            let field = &ls * xi * lt.transpose();
            DVector::from_column_slice(field.as_slice())
        }
        GammaCovariance::LowRank(c) => {
            let k = c.rank();
            let xi = draw(rng, k);
            let mut v = DVector::zeros(dim);
            for col in 0..k {
                let s = c.eigenvalues[col].max(0.0).sqrt();
                v.axpy(s * xi[col], &c.basis.column(col).into_owned(), 1.0);
            }
            let noise = draw(rng, dim);
            for i in 0..dim {
                v[i] += c.diagonal[i].max(0.0).sqrt() * noise[i];
            }
            v
        }
        GammaCovariance::Diagonal(dvec) => {
            let noise = draw(rng, dim);
            DVector::from_fn(dim, |i, _| dvec[i].max(0.0).sqrt() * noise[i])
        }
    };
    Ok(out.add_scalar(mu))
}

fn realize_sample(
    prior: &GammaPriorSpec,
    slab: &SlabParams,
    mean_shift: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PriorSample> {
    let (d, t_len) = (prior.d, prior.t);
    if prior.dim() != d * t_len {
        return Err(Error::invalid(
            "prior covariance dimension does not match D*T; grouped priors cannot be sampled directly",
        ));
    }
    let gamma_flat = sample_gamma(prior, mean_shift, rng)?;
    let gamma = DMatrix::from_column_slice(d, t_len, gamma_flat.as_slice());
    let mut support = DMatrix::zeros(d, t_len);
    for t in 0..t_len {
        for i in 0..d {
            let u: f64 = rng.gen();
            if u < norm_cdf(gamma[(i, t)]) {
                support[(i, t)] = 1.0;
            }
        }
    }
    // Slab values are only materialized for active entries.
    let mut coefficients = DMatrix::zeros(d, t_len);
    for t in 0..t_len {
        for i in 0..d {
            if support[(i, t)] > 0.5 {
                let c: f64 = rng.sample(StandardNormal);
                coefficients[(i, t)] = slab.mean + slab.variance.sqrt() * c;
            }
        }
    }
    Ok(PriorSample {
        gamma,
        support,
        coefficients,
    })
}

/// Draw one sample of `(γ, z, x)` from the hierarchy; deterministic given the seed.
pub fn sample_prior(prior: &GammaPriorSpec, slab: &SlabParams, seed: u64) -> Result<PriorSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    realize_sample(prior, slab, 0.0, &mut rng)
}

/// Mean shift `δ` such that the expected support size under `ν₀ + δ` equals
/// `target`; monotone bisection on the closed-form marginal.
fn bisect_mean_shift(prior: &GammaPriorSpec, target: f64) -> f64 {
    let diag = prior.covariance.diagonal();
    let expected = |delta: f64| -> f64 {
        diag.iter()
            .map(|&v| marginal_activation_prob(prior.mean_level + delta, v))
            .sum()
    };
    let scale = diag.iter().fold(0.0f64, |m, &v| m.max(v)).max(1.0).sqrt();
    let (mut lo, mut hi) = (-45.0 * scale, 45.0 * scale);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The scalar mean shift used when conditioning on an expected support size;
/// exposed so solvers can be handed the hyperparameters of the conditioned
/// generating distribution.
pub fn conditioned_mean_shift(prior: &GammaPriorSpec, target: f64) -> f64 {
    bisect_mean_shift(prior, target)
}

/// Sample from the prior conditioned on an exact support cardinality `k`.
///
/// A scalar shift of the prior mean first targets `E[‖z‖₀] = k`, which keeps
/// the correlation structure intact; rejection sampling then enforces the
/// cardinality exactly. If `max_tries` runs out the closest draw is returned
/// with `exact = false`.
pub fn sample_prior_conditioned(
    prior: &GammaPriorSpec,
    slab: &SlabParams,
    k: usize,
    seed: u64,
    max_tries: usize,
) -> Result<ConditionedSample> {
    let total = prior.d * prior.t;
    if k > total {
        return Err(Error::invalid(format!(
            "target support {k} exceeds {total} variables"
        )));
    }
    let delta = bisect_mean_shift(prior, k as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tries = max_tries.max(1);
    let mut best: Option<(usize, PriorSample)> = None;
    for _ in 0..tries {
        let sample = realize_sample(prior, slab, delta, &mut rng)?;
        let got = sample.support_size();
        if got == k {
            return Ok(ConditionedSample {
                sample,
                achieved_support: k,
                exact: true,
            });
        }
        let better = match &best {
            None => true,
            Some((b, _)) => got.abs_diff(k) < b.abs_diff(k),
        };
        if better {
            best = Some((got, sample));
        }
    }
    let (achieved, sample) = best.expect("at least one draw");
    Ok(ConditionedSample {
        sample,
        achieved_support: achieved,
        exact: false,
    })
}

// ---------------------------------------------------------------------------
// Kernel-level prior description
// ---------------------------------------------------------------------------

/// Spatial covariance family.
#[derive(Debug, Clone)]
pub enum SpatialCov {
    /// Independent entries with this variance.
    Diagonal { variance: f64 },
    /// Squared-exponential kernel over the supplied coordinates.
    SquaredExponential {
        lengthscale: f64,
        magnitude: f64,
        coords: CoordinateGrid,
    },
}

/// Temporal covariance family (unit marginal variance so the spatial factor
/// fixes the field magnitude).
#[derive(Debug, Clone, Copy)]
pub enum TemporalCov {
    /// Independent time steps.
    Identity,
    /// Squared-exponential kernel on the regular time grid.
    SquaredExponential { lengthscale: f64 },
    /// Stationary first-order autoregressive kernel.
    Ar1 { alpha: f64 },
}

/// Kernel-level description of the structure prior. This is what experiment
/// configuration speaks; [`PriorModel::materialize`] turns it into matrices,
/// optionally at grouped resolution.
#[derive(Debug, Clone)]
pub struct PriorModel {
    pub mean_level: f64,
    pub spatial: SpatialCov,
    pub temporal: TemporalCov,
}

impl PriorModel {
    fn temporal_matrix(&self, centroids: &CoordinateGrid) -> Result<DenseCovariance> {
        match self.temporal {
            TemporalCov::Identity => Ok(DenseCovariance::identity(centroids.len())),
            TemporalCov::SquaredExponential { lengthscale } => {
                squared_exponential(centroids, lengthscale, 1.0)
            }
            TemporalCov::Ar1 { alpha } => {
                // AR(1) is defined on the integer lattice; grouped centroids
                // fall back to the kernel value at the (possibly fractional) lag.
                if centroids.len() == 0 {
                    return Err(Error::invalid("empty temporal grid"));
                }
                if let Some(sp) = centroids.spacing() {
                    if (sp - 1.0).abs() < 1e-12 {
                        return ar1_temporal_kernel(alpha, centroids.len());
                    }
                }
                if !(0.0..1.0).contains(&alpha) {
                    return Err(Error::invalid("ar1 requires 0 <= alpha < 1"));
                }
                let n = centroids.len();
                let m = DMatrix::from_fn(n, n, |i, j| {
                    alpha.powf(centroids.distance_sq(i, j).sqrt())
                });
                DenseCovariance::new(m)
            }
        }
    }

    /// Materialize at full `D x T` resolution (identity grouping).
    pub fn materialize(&self, d: usize, t: usize) -> Result<GammaPriorSpec> {
        self.materialize_grouped(&GroupMap::identity(d, t))
    }

    /// Materialize on the group lattice of `map` (full resolution when `map`
    /// is the identity). Group kernels are evaluated at member centroids.
    pub fn materialize_grouped(&self, map: &GroupMap) -> Result<GammaPriorSpec> {
        let (d, t) = (map.d, map.t);
        match &self.spatial {
            SpatialCov::Diagonal { variance } => {
                if !(*variance > 0.0) {
                    return Err(Error::invalid("diagonal prior variance must be positive"));
                }
                let dim = map.group_count;
                Ok(GammaPriorSpec {
                    mean_level: self.mean_level,
                    covariance: GammaCovariance::Diagonal(DVector::from_element(dim, *variance)),
                    d,
                    t,
                })
            }
            SpatialCov::SquaredExponential {
                lengthscale,
                magnitude,
                coords,
            } => {
                if coords.len() != d {
                    return Err(Error::invalid(format!(
                        "coordinate grid has {} points but D = {d}",
                        coords.len()
                    )));
                }
                let s_coords = map.spatial_centroids(coords)?;
                let t_coords = map.temporal_centroids()?;
                let spatial = squared_exponential(&s_coords, *lengthscale, *magnitude)?;
                let temporal = self.temporal_matrix(&t_coords)?;
                Ok(GammaPriorSpec {
                    mean_level: self.mean_level,
                    covariance: GammaCovariance::Kronecker(KroneckerCovariance::new(
                        temporal, spatial,
                    )),
                    d,
                    t,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag_prior(d: usize, var: f64, mean: f64) -> GammaPriorSpec {
        GammaPriorSpec::new(
            mean,
            GammaCovariance::Diagonal(DVector::from_element(d, var)),
            d,
            1,
        )
        .unwrap()
    }

    #[test]
    fn marginal_activation_values() {
        assert_relative_eq!(marginal_activation_prob(0.0, 3.7), 0.5, max_relative = 1e-14);
        assert!(marginal_activation_prob(-600.0, 1.0) < 1e-300);
        assert_relative_eq!(
            marginal_activation_prob(1.0, 0.0),
            0.841344746068543,
            max_relative = 1e-12
        );
    }

    #[test]
    fn marginal_activation_monotone_in_mean() {
        let mut last = 0.0;
        for k in -30..=30 {
            let p = marginal_activation_prob(k as f64 * 0.25, 2.0);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn joint_activation_independent_case() {
        let prior = diag_prior(4, 1.0, 0.0);
        let (est, se) = joint_activation_prob_mc(&prior, 0, 2, 40_000, 1).unwrap();
        assert!((est - 0.25).abs() <= 3.0 * se.max(1e-4), "est={est} se={se}");
    }

    #[test]
    fn joint_activation_same_index_is_marginal() {
        let prior = diag_prior(3, 1e-12, 0.0);
        let (est, _) = joint_activation_prob_mc(&prior, 1, 1, 5_000, 2).unwrap();
        assert_relative_eq!(est, 0.5, max_relative = 1e-6);
    }

    #[test]
    fn joint_activation_increases_as_distance_shrinks() {
        // Shrinking the distance between two points raises the joint
        // activation probability toward its coincident-point limit
        // ∫Φ(γ)²N(γ|0,κ)dγ, the orthant probability with correlation
        // κ/(1+κ). The indicators stay conditionally independent given γ, so
        // this limit is below the single-variable activation probability.
        let kappa = 2.0;
        let mut prev = 0.0;
        for (k, dist) in [4.0, 1.0, 0.05].iter().enumerate() {
            let coords = CoordinateGrid::from_points(vec![vec![0.0], vec![*dist]]).unwrap();
            let cov = squared_exponential(&coords, 1.0, kappa).unwrap();
            let prior = GammaPriorSpec::new(
                0.0,
                GammaCovariance::Dense(cov),
                2,
                1,
            )
            .unwrap();
            let (est, _) = joint_activation_prob_mc(&prior, 0, 1, 60_000, 3).unwrap();
            if k > 0 {
                assert!(est > prev);
            }
            prev = est;
        }
        let rho: f64 = kappa / (1.0 + kappa);
        let limit = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        assert!((prev - limit).abs() < 0.01, "joint {prev} vs limit {limit}");
    }

    #[test]
    fn sample_prior_certain_activation() {
        let prior = diag_prior(20, 1e-8, 10.0);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let s = sample_prior(&prior, &slab, 0).unwrap();
        assert_eq!(s.support_size(), 20);
    }

    #[test]
    fn sample_prior_rate_matches_closed_form() {
        let prior = diag_prior(200, 1.0, 0.0);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let mut active = 0usize;
        let draws = 50;
        for seed in 0..draws {
            active += sample_prior(&prior, &slab, seed).unwrap().support_size();
        }
        let n = (200 * draws) as f64;
        let rate = active as f64 / n;
        let se = (0.25 / n).sqrt();
        assert!((rate - 0.5).abs() < 4.0 * se, "rate {rate}");
    }

    #[test]
    fn sample_prior_is_deterministic() {
        let prior = diag_prior(30, 2.0, -0.5);
        let slab = SlabParams::new(0.3, 1.5).unwrap();
        let a = sample_prior(&prior, &slab, 42).unwrap();
        let b = sample_prior(&prior, &slab, 42).unwrap();
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.support, b.support);
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn support_zero_implies_zero_coefficient() {
        let prior = diag_prior(100, 1.0, 0.0);
        let slab = SlabParams::new(0.5, 2.0).unwrap();
        let s = sample_prior(&prior, &slab, 9).unwrap();
        for i in 0..100 {
            if s.support[(i, 0)] < 0.5 {
                assert_eq!(s.coefficients[(i, 0)], 0.0);
            }
        }
    }

    #[test]
    fn conditioned_sampling_extremes() {
        let prior = diag_prior(12, 1.0, 0.0);
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let zero = sample_prior_conditioned(&prior, &slab, 0, 5, 1000).unwrap();
        assert!(zero.exact);
        assert_eq!(zero.sample.support_size(), 0);
        assert_eq!(zero.sample.coefficients.amax(), 0.0);
        let full = sample_prior_conditioned(&prior, &slab, 12, 5, 1000).unwrap();
        assert!(full.exact);
        assert_eq!(full.sample.support_size(), 12);
    }

    #[test]
    fn conditioned_sampling_hits_exact_cardinality() {
        let coords = CoordinateGrid::regular_1d(60);
        let cov = squared_exponential(&coords, 6.0, 9.0).unwrap();
        let prior = GammaPriorSpec::new(
            0.0,
            GammaCovariance::Kronecker(KroneckerCovariance::new(
                DenseCovariance::identity(1),
                cov,
            )),
            60,
            1,
        )
        .unwrap();
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let got = sample_prior_conditioned(&prior, &slab, 15, 11, 10_000).unwrap();
        assert!(got.exact);
        assert_eq!(got.sample.support_size(), 15);
    }

    /// Quarter-density conditioning at benchmark scale: a 500-point grid
    /// with the long squared-exponential kernel hits exactly 125 actives.
    #[test]
    fn conditioned_sampling_benchmark_scale() {
        let coords = CoordinateGrid::regular_1d(500);
        let cov = squared_exponential(&coords, 75.0, 100.0).unwrap();
        let prior = GammaPriorSpec::new(
            0.0,
            GammaCovariance::Kronecker(KroneckerCovariance::new(
                DenseCovariance::identity(1),
                cov,
            )),
            500,
            1,
        )
        .unwrap();
        let slab = SlabParams::new(0.0, 1.0).unwrap();
        let got = sample_prior_conditioned(&prior, &slab, 125, 4, 10_000).unwrap();
        assert!(got.exact);
        assert_eq!(got.sample.support_size(), 125);
    }

    #[test]
    fn group_map_block_arithmetic() {
        let m = build_group_map(4, 2, 2, 2);
        assert_eq!(m.group_count, 2);
        assert_eq!(m.group_of(0, 0), 0);
        assert_eq!(m.group_of(3, 1), 1);

        let id = build_group_map(5, 3, 1, 1);
        assert_eq!(id.group_count, 15);
        assert!(id.is_identity());

        // Joint sparsity: one latent shared across all time steps.
        let joint = build_group_map(4, 6, 1, 6);
        assert_eq!(joint.group_count, 4);
        for t in 0..6 {
            assert_eq!(joint.group_of(2, t), 2);
        }
    }

    #[test]
    fn group_map_non_divisible_sizes() {
        let m = build_group_map(5, 3, 2, 2);
        assert_eq!(m.spatial_groups(), 3);
        assert_eq!(m.temporal_groups(), 2);
        assert_eq!(m.group_count, 6);
        assert_eq!(m.group_of(4, 2), 5);
    }

    #[test]
    fn grouped_prior_with_unit_groups_equals_ungrouped() {
        let model = PriorModel {
            mean_level: -0.3,
            spatial: SpatialCov::SquaredExponential {
                lengthscale: 3.0,
                magnitude: 2.0,
                coords: CoordinateGrid::regular_1d(6),
            },
            temporal: TemporalCov::SquaredExponential { lengthscale: 2.0 },
        };
        let full = model.materialize(6, 4).unwrap();
        let grouped = model
            .materialize_grouped(&GroupMap::identity(6, 4))
            .unwrap();
        match (&full.covariance, &grouped.covariance) {
            (GammaCovariance::Kronecker(a), GammaCovariance::Kronecker(b)) => {
                assert_eq!(a.spatial.values(), b.spatial.values());
                assert_eq!(a.temporal.values(), b.temporal.values());
            }
            _ => panic!("expected Kronecker covariance"),
        }
    }
}
