//! Covariance construction and Kronecker / low-rank linear algebra.
//!
//! Latent fields over a `D`-point spatial grid and `T` time steps are stored
//! flat with the time index varying slowest: entry `(i, t)` lives at index
//! `t * D + i`. Under that convention the space-time covariance factorizes as
//! `Σ_temporal ⊗ Σ_spatial`, and `vec(S · X · Tᵀ)` implements the product of
//! that Kronecker matrix with `vec(X)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative diagonal jitter applied to squared-exponential kernels; SE
/// matrices with near-coincident points are numerically rank deficient.
pub const SE_JITTER: f64 = 1e-8;

/// Spatial locations attached to the feature indices.
#[derive(Debug, Clone)]
pub struct CoordinateGrid {
    points: Vec<Vec<f64>>,
    spacing: Option<f64>,
}

impl CoordinateGrid {
    /// Regular 1-D grid `0, 1, .., n-1`.
    pub fn regular_1d(n: usize) -> Self {
        CoordinateGrid {
            points: (0..n).map(|i| vec![i as f64]).collect(),
            spacing: Some(1.0),
        }
    }

    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("coordinate grid must be nonempty"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::invalid("coordinates must have dimension >= 1"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::invalid("all coordinates must share one dimension"));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite coordinate"));
            }
        }
        Ok(CoordinateGrid {
            points,
            spacing: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn distance_sq(&self, i: usize, j: usize) -> f64 {
        self.points[i]
            .iter()
            .zip(&self.points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Centroid of a subset of points; used to place grouped variables.
    pub fn centroid(&self, members: &[usize]) -> Vec<f64> {
        let dim = self.points[0].len();
        let mut c = vec![0.0; dim];
        for &m in members {
            for (k, v) in self.points[m].iter().enumerate() {
                c[k] += v;
            }
        }
        for v in &mut c {
            *v /= members.len() as f64;
        }
        c
    }
}

/// Symmetric positive semi-definite covariance matrix.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    values: DMatrix<f64>,
}

impl DenseCovariance {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::invalid("covariance must be square and nonempty"));
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..values.nrows() {
            for j in (i + 1)..values.ncols() {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        Ok(DenseCovariance { values })
    }

    pub fn identity(n: usize) -> Self {
        DenseCovariance {
            values: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.values.diagonal()
    }

    /// Cholesky factor, retrying once with a small diagonal jitter.
    pub fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        if let Some(c) = nalgebra::Cholesky::new(self.values.clone()) {
            return Ok(c);
        }
        let scale = self.values.diagonal().max().max(1.0);
        let mut jittered = self.values.clone();
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += 1e-10 * scale;
        }
        nalgebra::Cholesky::new(jittered).ok_or_else(|| {
            Error::numerical("covariance Cholesky failed even with jitter; matrix is not PSD")
        })
    }
}

/// `Σ_temporal ⊗ Σ_spatial` held in factored form.
#[derive(Debug, Clone)]
pub struct KroneckerCovariance {
    pub temporal: DenseCovariance,
    pub spatial: DenseCovariance,
}

impl KroneckerCovariance {
    pub fn new(temporal: DenseCovariance, spatial: DenseCovariance) -> Self {
        KroneckerCovariance { temporal, spatial }
    }

    pub fn dim(&self) -> usize {
        self.temporal.dim() * self.spatial.dim()
    }

    /// Diagonal of the (never materialized) product.
    pub fn diagonal(&self) -> DVector<f64> {
        let dt = self.temporal.diagonal();
        let ds = self.spatial.diagonal();
        let (t_len, d) = (dt.len(), ds.len());
        DVector::from_fn(t_len * d, |k, _| dt[k / d] * ds[k % d])
    }

    /// Materialize the full product; test/oracle use only, O((DT)²) storage.
    pub fn materialize(&self) -> DMatrix<f64> {
        self.temporal.values().kronecker(self.spatial.values())
    }
}

/// Orthonormal basis with nonincreasing eigenvalues.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl EigenDecomposition {
    /// Symmetric eigendecomposition sorted by decreasing eigenvalue.
    pub fn decompose(cov: &DenseCovariance) -> Result<Self> {
        let eig = cov.values().clone().symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let eigenvalues = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
        let mut basis = DMatrix::zeros(n, n);
        for (k, &src) in order.iter().enumerate() {
            basis.set_column(k, &eig.eigenvectors.column(src));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "eigendecomposition produced non-finite eigenvalues (dim {n}, max diag {:.3e})",
                cov.diagonal().max()
            )));
        }
        let max = eigenvalues[0].max(0.0);
        if eigenvalues[n - 1] < -1e-10 * max.max(1.0) {
            return Err(Error::numerical(format!(
                "matrix is not PSD: min eigenvalue {:.3e} vs max {:.3e}",
                eigenvalues[n - 1],
                max
            )));
        }
        Ok(EigenDecomposition { basis, eigenvalues })
    }
}

/// `U diag(S) Uᵀ + diag(Λ)` with the exact prior diagonal preserved where
/// possible (`Λ` is clamped at zero rather than being allowed to go negative).
#[derive(Debug, Clone)]
pub struct LowRankPlusDiagonal {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub diagonal: DVector<f64>,
    /// Largest diagonal deficit introduced by clamping Λ at zero.
    pub clamp_residual: f64,
}

impl LowRankPlusDiagonal {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// diag(U S Uᵀ) + Λ.
    pub fn diagonal_reconstruction(&self) -> DVector<f64> {
        let mut d = self.diagonal.clone();
        for k in 0..self.rank() {
            let s = self.eigenvalues[k];
            for i in 0..self.dim() {
                d[i] += s * self.basis[(i, k)] * self.basis[(i, k)];
            }
        }
        d
    }

    /// Materialize the represented matrix; test use only.
    pub fn materialize(&self) -> DMatrix<f64> {
        let mut m = &self.basis * DMatrix::from_diagonal(&self.eigenvalues) * self.basis.transpose();
        for i in 0..self.dim() {
            m[(i, i)] += self.diagonal[i];
        }
        m
    }

    /// Multiply the represented matrix with a vector.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.diagonal.component_mul(v);
        if self.rank() > 0 {
            let proj = self.basis.transpose() * v;
            out += &self.basis * proj.component_mul(&self.eigenvalues);
        }
        out
    }
}

/// Squared-exponential kernel `κ · exp(-‖dᵢ-dⱼ‖² / (2·ℓ²))` with diagonal jitter.
pub fn squared_exponential(
    coords: &CoordinateGrid,
    lengthscale: f64,
    magnitude: f64,
) -> Result<DenseCovariance> {
    if !(lengthscale > 0.0) || !lengthscale.is_finite() {
        return Err(Error::invalid("lengthscale must be positive and finite"));
    }
    if !(magnitude > 0.0) || !magnitude.is_finite() {
        return Err(Error::invalid("magnitude must be positive and finite"));
    }
    let n = coords.len();
    let inv = 1.0 / (2.0 * lengthscale * lengthscale);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = magnitude * (1.0 + SE_JITTER);
        for j in (i + 1)..n {
            let v = magnitude * (-coords.distance_sq(i, j) * inv).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    DenseCovariance::new(m)
}

/// Stationary first-order autoregressive kernel: entry `(t, t')` is
/// `alpha^|t-t'|`. This is the covariance of the recursion
/// `γ_t = (1-α)·μ + α·γ_{t-1} + ε_t`, `ε_t ~ N(0, β)` with `β = 1 - α²`, so
/// the marginal at every step equals the `t = 1` prior.
pub fn ar1_temporal_kernel(alpha: f64, t_len: usize) -> Result<DenseCovariance> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(
            "ar1 requires 0 <= alpha < 1; a frozen support pattern is expressed with temporal \
             grouping instead of alpha = 1",
        ));
    }
    if t_len == 0 {
        return Err(Error::invalid("ar1 kernel needs at least one step"));
    }
    let m = DMatrix::from_fn(t_len, t_len, |i, j| {
        let lag = i.abs_diff(j) as i32;
        alpha.powi(lag)
    });
    DenseCovariance::new(m)
}

/// Eigendecompose the two factors of a Kronecker covariance. The spectrum of
/// the product is all pairwise eigenvalue products and the eigenvectors are
/// Kronecker products of the factor eigenvectors.
pub fn kron_eigendecompose(
    cov: &KroneckerCovariance,
) -> Result<(EigenDecomposition, EigenDecomposition)> {
    let temporal = EigenDecomposition::decompose(&cov.temporal)?;
    let spatial = EigenDecomposition::decompose(&cov.spatial)?;
    Ok((temporal, spatial))
}

/// `(temporal ⊗ spatial) · v` without materializing the product.
///
/// `v` is the column-major flattening of a `spatial.nrows() × temporal.ncols()`
/// matrix (time slowest). The factors need not be symmetric, which lets the
/// same routine apply transposed eigenbases.
pub fn kron_matvec(
    temporal: &DMatrix<f64>,
    spatial: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (d_out, d_in) = (spatial.nrows(), spatial.ncols());
    let (t_out, t_in) = (temporal.nrows(), temporal.ncols());
    if v.len() != d_in * t_in {
        return Err(Error::invalid(format!(
            "kron_matvec: vector length {} does not match {}x{} factors",
            v.len(),
            t_in,
            d_in
        )));
    }
    let x = DMatrix::from_column_slice(d_in, t_in, v.as_slice());
    let out = spatial * x * temporal.transpose();
    let _ = (d_out, t_out);
    Ok(DVector::from_column_slice(out.as_slice()))
}

/// Truncation target for [`low_rank_approximate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankTarget {
    /// Keep exactly this many leading eigenpairs.
    Rank(usize),
    /// Keep the smallest count whose cumulative eigenvalue sum reaches this
    /// fraction of the trace.
    VarianceFraction(f64),
}

/// Approximate a Kronecker covariance by its `K` leading eigenpairs plus a
/// diagonal chosen to preserve the exact prior diagonal.
pub fn low_rank_approximate(
    cov: &KroneckerCovariance,
    target: RankTarget,
) -> Result<LowRankPlusDiagonal> {
    let (t_eig, s_eig) = kron_eigendecompose(cov)?;
    let d = cov.spatial.dim();
    let t_len = cov.temporal.dim();
    let dim = d * t_len;

    // Pairwise products, sorted by decreasing value with flat-index ties
    // resolved toward the lower index so truncation is deterministic.
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(dim);
    for a in 0..t_len {
        for b in 0..d {
            pairs.push((a, b, t_eig.eigenvalues[a] * s_eig.eigenvalues[b]));
        }
    }
    pairs.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((x.0 * d + x.1).cmp(&(y.0 * d + y.1)))
    });

    let positive = pairs.iter().filter(|p| p.2 > 0.0).count();
    let k = match target {
        RankTarget::Rank(k) => {
            if k > dim {
                return Err(Error::invalid(format!("rank {k} exceeds dimension {dim}")));
            }
            k.min(positive)
        }
        RankTarget::VarianceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid("variance fraction must lie in (0, 1]"));
            }
            let total: f64 = pairs.iter().map(|p| p.2.max(0.0)).sum();
            let mut acc = 0.0;
            let mut k = positive;
            for (idx, p) in pairs.iter().take(positive).enumerate() {
                acc += p.2;
                if acc >= f * total {
                    k = idx + 1;
                    break;
                }
            }
            k
        }
    };

    let mut basis = DMatrix::zeros(dim, k);
    let mut eigenvalues = DVector::zeros(k);
    for (col, &(a, b, s)) in pairs.iter().take(k).enumerate() {
        eigenvalues[col] = s;
        let ut = t_eig.basis.column(a);
        let us = s_eig.basis.column(b);
        for t in 0..t_len {
            for i in 0..d {
                basis[(t * d + i, col)] = ut[t] * us[i];
            }
        }
    }

    let exact_diag = cov.diagonal();
    let mut diagonal = exact_diag.clone();
    for col in 0..k {
        let s = eigenvalues[col];
        for i in 0..dim {
            diagonal[i] -= s * basis[(i, col)] * basis[(i, col)];
        }
    }
    let mut clamp_residual = 0.0f64;
    for v in diagonal.iter_mut() {
        if *v < 0.0 {
            clamp_residual = clamp_residual.max(-*v);
            *v = 0.0;
        }
    }

    Ok(LowRankPlusDiagonal {
        basis,
        eigenvalues,
        diagonal,
        clamp_residual,
    })
}
