//! Refresh strategies for the global Gaussian over the structure field.
//!
//! The posterior for `γ` is the product of the prior `N(μ₀, Σ₀)` with the
//! diagonal site product `N(μ₃, Σ₃)`; only its mean and variance diagonal are
//! consumed by the site sweeps. Four interchangeable strategies compute them:
//!
//! * `Dense` — exact, `O(dim³)` via one Cholesky of `Σ₀ + Σ₃`;
//! * `LowRank` — `Σ₀ = U S Uᵀ + Λ`, Woodbury with a `K×K` core, `O(K² dim)`;
//! * `CommonPrecision` — Kronecker eigenbases with the site precisions
//!   replaced by their mean inside the inverse, `O(D²T + T²D)`;
//! * `Diagonal` — elementwise product, for the independent prior.
//!
//! The mean is computed as `μ̂ = μ₀ + Σ₀ (Σ₀ + Σ₃)⁻¹ (μ₃ − μ₀)`, which is
//! algebraically the natural-parameter sum but never touches `Σ₀⁻¹` (the
//! prior may be numerically singular). Each strategy also evaluates the log
//! partition of its site product against the prior for the marginal-likelihood
//! accumulation, with the same internal approximation it uses for the refresh.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{kron_eigendecompose, kron_matvec, low_rank_approximate, LowRankPlusDiagonal, RankTarget};
use crate::prior::{GammaCovariance, GammaPriorSpec, GroupMap};

/// Mean and variance diagonal of the refreshed global Gaussian.
#[derive(Debug, Clone)]
pub struct GammaRefresh {
    pub mean: DVector<f64>,
    pub var_diag: DVector<f64>,
}

#[derive(Debug)]
pub enum GammaUpdater {
    Dense(DenseUpdater),
    LowRank(LowRankUpdater),
    CommonPrecision(CpUpdater),
    Diagonal(DiagonalUpdater),
}

impl GammaUpdater {
    /// Exact updater; Kronecker and low-rank priors are materialized.
    pub fn full(prior: &GammaPriorSpec) -> Result<Self> {
        let mu0 = prior.mean_vector();
        match &prior.covariance {
            GammaCovariance::Dense(c) => Ok(GammaUpdater::Dense(DenseUpdater {
                sigma0: c.values().clone(),
                diag0: c.diagonal(),
                mu0,
            })),
            GammaCovariance::Kronecker(c) => Ok(GammaUpdater::Dense(DenseUpdater {
                sigma0: c.materialize(),
                diag0: c.diagonal(),
                mu0,
            })),
            GammaCovariance::LowRank(c) => Ok(GammaUpdater::Dense(DenseUpdater {
                sigma0: c.materialize(),
                diag0: c.diagonal_reconstruction(),
                mu0,
            })),
            GammaCovariance::Diagonal(d) => Ok(GammaUpdater::Diagonal(DiagonalUpdater {
                diag0: d.clone(),
                mu0,
            })),
        }
    }

    /// Low-rank-plus-diagonal updater. A Kronecker prior is truncated to
    /// `target`; an already low-rank prior is used as-is.
    pub fn low_rank(prior: &GammaPriorSpec, target: Option<RankTarget>) -> Result<Self> {
        let mu0 = prior.mean_vector();
        match &prior.covariance {
            GammaCovariance::LowRank(c) => Ok(GammaUpdater::LowRank(LowRankUpdater::new(
                c.clone(),
                mu0,
            ))),
            GammaCovariance::Kronecker(c) => {
                let target = target.ok_or_else(|| {
                    Error::invalid("low-rank scheme on a Kronecker prior needs a rank target")
                })?;
                Ok(GammaUpdater::LowRank(LowRankUpdater::new(
                    low_rank_approximate(c, target)?,
                    mu0,
                )))
            }
            GammaCovariance::Diagonal(d) => Ok(GammaUpdater::Diagonal(DiagonalUpdater {
                diag0: d.clone(),
                mu0,
            })),
            GammaCovariance::Dense(_) => Err(Error::invalid(
                "low-rank scheme needs a Kronecker or low-rank prior covariance",
            )),
        }
    }

    /// Common-precision updater; requires a Kronecker prior.
    pub fn common_precision(prior: &GammaPriorSpec) -> Result<Self> {
        let mu0 = prior.mean_vector();
        match &prior.covariance {
            GammaCovariance::Kronecker(c) => {
                let (te, se) = kron_eigendecompose(c)?;
                let d = c.spatial.dim();
                let t_len = c.temporal.dim();
                let mut s_kron = DVector::zeros(d * t_len);
                for a in 0..t_len {
                    for b in 0..d {
                        s_kron[a * d + b] = (te.eigenvalues[a] * se.eigenvalues[b]).max(0.0);
                    }
                }
                let ht = te.basis.component_mul(&te.basis);
                let hs = se.basis.component_mul(&se.basis);
                Ok(GammaUpdater::CommonPrecision(CpUpdater {
                    ut: te.basis,
                    us: se.basis,
                    ht,
                    hs,
                    s_kron,
                    mu0,
                }))
            }
            GammaCovariance::Diagonal(d) => Ok(GammaUpdater::Diagonal(DiagonalUpdater {
                diag0: d.clone(),
                mu0,
            })),
            _ => Err(Error::invalid(
                "common-precision scheme needs a Kronecker prior covariance",
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GammaUpdater::Dense(u) => u.mu0.len(),
            GammaUpdater::LowRank(u) => u.mu0.len(),
            GammaUpdater::CommonPrecision(u) => u.mu0.len(),
            GammaUpdater::Diagonal(u) => u.mu0.len(),
        }
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        match self {
            GammaUpdater::Dense(u) => &u.mu0,
            GammaUpdater::LowRank(u) => &u.mu0,
            GammaUpdater::CommonPrecision(u) => &u.mu0,
            GammaUpdater::Diagonal(u) => &u.mu0,
        }
    }

    /// Refresh the global Gaussian from aggregated site naturals
    /// (`site_prec > 0` elementwise).
    pub fn refresh(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<GammaRefresh> {
        let dim = self.dim();
        if site_prec.len() != dim || site_ptm.len() != dim {
            return Err(Error::invalid("gamma refresh: site shape mismatch"));
        }
        if site_prec.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("gamma refresh: site precisions must be positive"));
        }
        let mut out = match self {
            GammaUpdater::Dense(u) => u.refresh(site_prec, site_ptm),
            GammaUpdater::LowRank(u) => u.refresh(site_prec, site_ptm),
            GammaUpdater::CommonPrecision(u) => u.refresh(site_prec, site_ptm),
            GammaUpdater::Diagonal(u) => u.refresh(site_prec, site_ptm),
        }?;
        // Strict positivity of stored variances, guarding roundoff.
        for v in out.var_diag.iter_mut() {
            if !(*v > 0.0) {
                *v = 1e-15;
            }
        }
        Ok(out)
    }

    /// `ln E_{γ~N(μ₀,Σ₀)}[exp(−½ γᵀ P γ + βᵀ γ)]` for diagonal `P` — the
    /// partition of the aggregated natural-form site product against the
    /// prior, evaluated with this strategy's internal approximation.
    pub fn log_partition(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<f64> {
        match self {
            GammaUpdater::Dense(u) => u.log_partition(site_prec, site_ptm),
            GammaUpdater::LowRank(u) => u.log_partition(site_prec, site_ptm),
            GammaUpdater::CommonPrecision(u) => u.log_partition(site_prec, site_ptm),
            GammaUpdater::Diagonal(u) => Ok(u.log_partition(site_prec, site_ptm)),
        }
    }
}

fn chol_with_jitter(mut m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let scale = m.diagonal().amax().max(1.0);
    for i in 0..m.nrows() {
        m[(i, i)] += 1e-10 * scale;
    }
    Cholesky::new(m).ok_or_else(|| Error::numerical(format!("{what}: Cholesky failed after jitter")))
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct DenseUpdater {
    sigma0: DMatrix<f64>,
    diag0: DVector<f64>,
    mu0: DVector<f64>,
}

impl DenseUpdater {
    fn refresh(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<GammaRefresh> {
        let dim = self.mu0.len();
        let mut c = self.sigma0.clone();
        for i in 0..dim {
            c[(i, i)] += 1.0 / site_prec[i];
        }
        let chol = chol_with_jitter(c, "gamma dense refresh")?;
        let mu3 = site_ptm.component_div(site_prec);
        let mean = &self.mu0 + &self.sigma0 * chol.solve(&(&mu3 - &self.mu0));
        let x = chol
            .l()
            .solve_lower_triangular(&self.sigma0)
            .ok_or_else(|| Error::numerical("gamma dense refresh: triangular solve failed"))?;
        let reduction = x.component_mul(&x).row_sum();
        let var_diag = DVector::from_fn(dim, |i, _| self.diag0[i] - reduction[i]);
        Ok(GammaRefresh { mean, var_diag })
    }

    fn log_partition(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<f64> {
        let dim = self.mu0.len();
        let w = site_prec.map(|p| p.sqrt());
        let mut b = self.sigma0.clone();
        for i in 0..dim {
            for j in 0..dim {
                b[(i, j)] *= w[i] * w[j];
            }
            b[(i, i)] += 1.0;
        }
        let chol = chol_with_jitter(b, "gamma dense partition")?;
        let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let sig_beta = &self.sigma0 * site_ptm;
        let q = &self.mu0 + &sig_beta;
        let wq = w.component_mul(&q);
        let solved = chol.solve(&wq);
        Ok(-half_logdet + site_ptm.dot(&self.mu0) + 0.5 * site_ptm.dot(&sig_beta)
            - 0.5 * wq.dot(&solved))
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct LowRankUpdater {
    lr: LowRankPlusDiagonal,
    mu0: DVector<f64>,
    diag0: DVector<f64>,
}

impl LowRankUpdater {
    pub fn new(lr: LowRankPlusDiagonal, mu0: DVector<f64>) -> Self {
        let diag0 = lr.diagonal_reconstruction();
        LowRankUpdater { lr, mu0, diag0 }
    }

    pub fn rank(&self) -> usize {
        self.lr.rank()
    }

    fn refresh(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<GammaRefresh> {
        let dim = self.mu0.len();
        let k = self.lr.rank();
        let u = &self.lr.basis;
        let s = &self.lr.eigenvalues;
        let lam = &self.lr.diagonal;
        // E = Λ + Σ₃ (diagonal of the Woodbury split).
        let e = DVector::from_fn(dim, |i, _| lam[i] + 1.0 / site_prec[i]);
        let mu3 = site_ptm.component_div(site_prec);
        let r = &mu3 - &self.mu0;

        if k == 0 {
            // Pure diagonal prior: independent Bayes rule per entry.
            let w = r.component_div(&e);
            let mean = &self.mu0 + lam.component_mul(&w);
            let var_diag = DVector::from_fn(dim, |i, _| lam[i] - lam[i] * lam[i] / e[i]);
            return Ok(GammaRefresh { mean, var_diag });
        }

        // K x K core: C = S⁻¹ + Uᵀ E⁻¹ U.
        let mut eu = u.clone();
        for i in 0..dim {
            eu.row_mut(i).scale_mut(1.0 / e[i]);
        }
        let f = u.transpose() * &eu; // Uᵀ E⁻¹ U
        let mut core = f.clone();
        for a in 0..k {
            core[(a, a)] += 1.0 / s[a];
        }
        let chol = chol_with_jitter(core, "gamma low-rank core")?;

        // w = (Σ₀+Σ₃)⁻¹ r  via Woodbury.
        let t1 = eu.transpose() * &r;
        let t2 = chol.solve(&t1);
        let w = r.component_div(&e) - &eu * &t2;

        // mean = μ₀ + Σ₀ w.
        let uw = u.transpose() * &w;
        let mean = &self.mu0 + u * uw.component_mul(s) + lam.component_mul(&w);

        // diag Σ̂ = diag Σ₀ − diag(Σ₀ M Σ₀) with M = E⁻¹ − E⁻¹U C⁻¹ UᵀE⁻¹.
        // Split Σ₀ E⁻¹ Σ₀ into basis/diagonal parts.
        let sf = DMatrix::from_fn(k, k, |a, b| s[a] * f[(a, b)] * s[b]); // S F S
        let usf = u * &sf;
        let mut diag_q = DVector::zeros(dim);
        for i in 0..dim {
            let mut acc = 0.0;
            for a in 0..k {
                acc += usf[(i, a)] * u[(i, a)];
            }
            // + 2·(Λ/E)·diag(U S Uᵀ) + Λ²/E
            let mut us_diag = 0.0;
            for a in 0..k {
                us_diag += s[a] * u[(i, a)] * u[(i, a)];
            }
            acc += 2.0 * lam[i] / e[i] * us_diag + lam[i] * lam[i] / e[i];
            diag_q[i] = acc;
        }
        // G = Σ₀ E⁻¹ U = U (S F) + (Λ/E) U.
        let sf_only = DMatrix::from_fn(k, k, |a, b| s[a] * f[(a, b)]);
        let mut g = u * &sf_only;
        for i in 0..dim {
            let scale = lam[i] / e[i];
            for a in 0..k {
                g[(i, a)] += scale * u[(i, a)];
            }
        }
        let gc = chol.solve(&g.transpose()); // C⁻¹ Gᵀ, K x dim
        let mut var_diag = DVector::zeros(dim);
        for i in 0..dim {
            let mut back = 0.0;
            for a in 0..k {
                back += g[(i, a)] * gc[(a, i)];
            }
            var_diag[i] = self.diag0[i] - (diag_q[i] - back);
        }
        Ok(GammaRefresh { mean, var_diag })
    }

    fn log_partition(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<f64> {
        let dim = self.mu0.len();
        let k = self.lr.rank();
        let u = &self.lr.basis;
        let s = &self.lr.eigenvalues;
        let lam = &self.lr.diagonal;
        let w = site_prec.map(|p| p.sqrt());

        // D0 = I + W Λ W (diagonal).
        let d0 = DVector::from_fn(dim, |i, _| 1.0 + site_prec[i] * lam[i]);
        let sig_beta = self.lr.mul_vec(site_ptm);
        let q = &self.mu0 + &sig_beta;
        let wq = w.component_mul(&q);

        if k == 0 {
            let logdet: f64 = d0.iter().map(|v| v.ln()).sum();
            let quad: f64 = (0..dim).map(|i| wq[i] * wq[i] / d0[i]).sum();
            return Ok(-0.5 * logdet + site_ptm.dot(&self.mu0) + 0.5 * site_ptm.dot(&sig_beta)
                - 0.5 * quad);
        }

        // WU and the symmetric K x K core I + √S (WU)ᵀ D0⁻¹ (WU) √S.
        let mut wu = u.clone();
        for i in 0..dim {
            wu.row_mut(i).scale_mut(w[i]);
        }
        let mut d0inv_wu = wu.clone();
        for i in 0..dim {
            d0inv_wu.row_mut(i).scale_mut(1.0 / d0[i]);
        }
        let m = wu.transpose() * &d0inv_wu; // (WU)ᵀ D0⁻¹ (WU)
        let sqrt_s = s.map(|v| v.max(0.0).sqrt());
        let mut core_sym = DMatrix::identity(k, k);
        for a in 0..k {
            for b in 0..k {
                core_sym[(a, b)] += sqrt_s[a] * m[(a, b)] * sqrt_s[b];
            }
        }
        let chol_sym = chol_with_jitter(core_sym, "gamma low-rank partition det")?;
        let logdet_b: f64 = d0.iter().map(|v| v.ln()).sum::<f64>()
            + 2.0 * chol_sym.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();

        // B⁻¹ wq via Woodbury with core S⁻¹ + (WU)ᵀ D0⁻¹ (WU).
        let mut core = m;
        for a in 0..k {
            core[(a, a)] += 1.0 / s[a];
        }
        let chol_core = chol_with_jitter(core, "gamma low-rank partition core")?;
        let rhs = d0inv_wu.transpose() * &wq;
        let inner = chol_core.solve(&rhs);
        let binv_wq = DVector::from_fn(dim, |i, _| wq[i] / d0[i]) - d0inv_wu * inner;

        Ok(-0.5 * logdet_b + site_ptm.dot(&self.mu0) + 0.5 * site_ptm.dot(&sig_beta)
            - 0.5 * wq.dot(&binv_wq))
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct CpUpdater {
    ut: DMatrix<f64>,
    us: DMatrix<f64>,
    /// Hadamard squares of the eigenbases, precomputed.
    ht: DMatrix<f64>,
    hs: DMatrix<f64>,
    s_kron: DVector<f64>,
    mu0: DVector<f64>,
}

impl CpUpdater {
    fn refresh(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<GammaRefresh> {
        let theta_bar = site_prec.mean();
        let sigma_bar = 1.0 / theta_bar;
        let m = self.s_kron.map(|s| s / (s + sigma_bar));
        // diag Σ̂ = Σ̄ (Ut∘Ut ⊗ Us∘Us) M
        let var_diag = kron_matvec(&self.ht, &self.hs, &m)?.scale(sigma_bar);
        // μ̂ = Σ̂ β + Σ̄ U diag(1/(s+Σ̄)) Uᵀ μ₀, using the exact site informations in β.
        let u_beta = kron_matvec(&self.ut.transpose(), &self.us.transpose(), site_ptm)?;
        let u_mu = kron_matvec(&self.ut.transpose(), &self.us.transpose(), &self.mu0)?;
        let inner = DVector::from_fn(self.mu0.len(), |kk, _| {
            sigma_bar * (m[kk] * u_beta[kk] + u_mu[kk] / (self.s_kron[kk] + sigma_bar))
        });
        let mean = kron_matvec(&self.ut, &self.us, &inner)?;
        Ok(GammaRefresh { mean, var_diag })
    }

    fn log_partition(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<f64> {
        let theta_bar = site_prec.mean();
        let logdet: f64 = self.s_kron.iter().map(|&s| (1.0 + theta_bar * s).ln()).sum();
        let u_beta = kron_matvec(&self.ut.transpose(), &self.us.transpose(), site_ptm)?;
        let sig_beta = kron_matvec(&self.ut, &self.us, &u_beta.component_mul(&self.s_kron))?;
        let q = &self.mu0 + &sig_beta;
        let uq = kron_matvec(&self.ut.transpose(), &self.us.transpose(), &q)?;
        let quad: f64 = (0..q.len())
            .map(|kk| theta_bar * uq[kk] * uq[kk] / (1.0 + theta_bar * self.s_kron[kk]))
            .sum();
        Ok(-0.5 * logdet + site_ptm.dot(&self.mu0) + 0.5 * site_ptm.dot(&sig_beta) - 0.5 * quad)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct DiagonalUpdater {
    diag0: DVector<f64>,
    mu0: DVector<f64>,
}

impl DiagonalUpdater {
    fn refresh(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> Result<GammaRefresh> {
        let dim = self.mu0.len();
        let mut mean = DVector::zeros(dim);
        let mut var_diag = DVector::zeros(dim);
        for i in 0..dim {
            let post_prec = 1.0 / self.diag0[i] + site_prec[i];
            var_diag[i] = 1.0 / post_prec;
            mean[i] = var_diag[i] * (self.mu0[i] / self.diag0[i] + site_ptm[i]);
        }
        Ok(GammaRefresh { mean, var_diag })
    }

    fn log_partition(&self, site_prec: &DVector<f64>, site_ptm: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.mu0.len() {
            let (s0, mu, p, beta) = (self.diag0[i], self.mu0[i], site_prec[i], site_ptm[i]);
            let denom = 1.0 + p * s0;
            let q = mu + s0 * beta;
            acc += -0.5 * denom.ln() + beta * mu + 0.5 * beta * beta * s0
                - 0.5 * p * q * q / denom;
        }
        acc
    }
}

// ---------------------------------------------------------------------------

/// Aggregate per-(i,t) site naturals onto the group lattice: a group's
/// Gaussian factor is the product of all member sites, so naturals add.
pub fn aggregate_group_sites(
    map: &GroupMap,
    site_prec: &[f64],
    site_ptm: &[f64],
) -> (DVector<f64>, DVector<f64>) {
    let mut prec = DVector::zeros(map.group_count);
    let mut ptm = DVector::zeros(map.group_count);
    for flat in 0..site_prec.len() {
        let g = map.group_of_flat(flat);
        prec[g] += site_prec[flat];
        ptm[g] += site_ptm[flat];
    }
    (prec, ptm)
}
