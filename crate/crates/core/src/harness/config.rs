//! JSON configuration surface of the CLI. Unknown keys are rejected
//! everywhere; the schema document shipped in `docs/config_schema.json`
//! mirrors these types.

use serde::{Deserialize, Serialize};

use crate::engine::{EpConfig, Scheme};
use crate::error::{Error, Result};
use crate::kernel::CoordinateGrid;
use crate::prior::{PriorModel, SlabParams, SpatialCov, TemporalCov};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabJson {
    pub mean: f64,
    pub variance: f64,
}

impl SlabJson {
    pub fn build(&self) -> Result<SlabParams> {
        SlabParams::new(self.mean, self.variance)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TemporalJson {
    Identity,
    Se { lengthscale: f64 },
    Ar1 { alpha: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceJson {
    /// Independent entries (classical spike-and-slab).
    Diagonal { variance: f64 },
    /// Squared-exponential over the regular 1-D feature grid; time steps
    /// independent.
    Se { lengthscale: f64, magnitude: f64 },
    /// Kronecker product of a spatial squared-exponential with a temporal
    /// kernel.
    Kronecker {
        spatial: SpatialSeJson,
        temporal: TemporalJson,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialSeJson {
    pub lengthscale: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorJson {
    pub mean_level: f64,
    pub covariance: CovarianceJson,
}

impl PriorJson {
    pub fn build(&self, d: usize) -> Result<PriorModel> {
        let spatial = match &self.covariance {
            CovarianceJson::Diagonal { variance } => SpatialCov::Diagonal { variance: *variance },
            CovarianceJson::Se {
                lengthscale,
                magnitude,
            } => SpatialCov::SquaredExponential {
                lengthscale: *lengthscale,
                magnitude: *magnitude,
                coords: CoordinateGrid::regular_1d(d),
            },
            CovarianceJson::Kronecker { spatial, .. } => SpatialCov::SquaredExponential {
                lengthscale: spatial.lengthscale,
                magnitude: spatial.magnitude,
                coords: CoordinateGrid::regular_1d(d),
            },
        };
        let temporal = match &self.covariance {
            CovarianceJson::Kronecker { temporal, .. } => match temporal {
                TemporalJson::Identity => TemporalCov::Identity,
                TemporalJson::Se { lengthscale } => TemporalCov::SquaredExponential {
                    lengthscale: *lengthscale,
                },
                TemporalJson::Ar1 { alpha } => TemporalCov::Ar1 { alpha: *alpha },
            },
            _ => TemporalCov::Identity,
        };
        Ok(PriorModel {
            mean_level: self.mean_level,
            spatial,
            temporal,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpJson {
    pub damping: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub evidence_tol: Option<f64>,
    pub v_inf: Option<f64>,
    pub sigma_inf: Option<f64>,
    pub init_site_var: Option<f64>,
    pub cp_inner_repeats: Option<usize>,
    pub cp_damping_decay: Option<f64>,
    pub cp_decay_after: Option<usize>,
    pub scheme: Option<String>,
}

impl EpJson {
    pub fn build(&self, scheme_override: Option<&str>) -> Result<EpConfig> {
        let mut cfg = EpConfig::default();
        if let Some(v) = self.damping {
            cfg.damping = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.evidence_tol {
            cfg.evidence_tol = v;
        }
        if let Some(v) = self.v_inf {
            cfg.v_inf = v;
        }
        if let Some(v) = self.sigma_inf {
            cfg.sigma_inf = v;
        }
        if let Some(v) = self.init_site_var {
            cfg.init_site_var = v;
        }
        if let Some(v) = self.cp_inner_repeats {
            cfg.cp_inner_repeats = v;
        }
        if let Some(v) = self.cp_damping_decay {
            cfg.cp_damping_decay = v;
        }
        if let Some(v) = self.cp_decay_after {
            cfg.cp_decay_after = v;
        }
        let scheme_str = scheme_override.or(self.scheme.as_deref()).unwrap_or("full");
        cfg.scheme = scheme_str.parse::<Scheme>()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_max_tries() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub d: usize,
    pub t: usize,
    pub prior: PriorJson,
    pub slab: SlabJson,
    pub seed: u64,
    /// Condition the draw on an exact support cardinality.
    #[serde(default)]
    pub condition_support: Option<usize>,
    #[serde(default = "default_max_tries")]
    pub max_tries: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LikelihoodJson {
    Gaussian { noise_variance: f64 },
    Probit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFilesJson {
    pub a_csv: String,
    pub y_csv: String,
    pub likelihood: LikelihoodJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub problem: ProblemFilesJson,
    pub prior: PriorJson,
    pub slab: SlabJson,
    #[serde(default)]
    pub ep: EpJson,
    #[serde(default)]
    pub seed: u64,
}

/// Synthetic test signal for the sweep commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalJson {
    /// Deterministic sparse signal: raised-cosine bumps on given blocks,
    /// zero elsewhere. Single measurement vector.
    BlocksCosine {
        blocks: Vec<BlockJson>,
        #[serde(default = "default_base")]
        base: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// Draw the signal from the prior, optionally conditioned on an exact
    /// support size.
    PriorSample {
        #[serde(default)]
        condition_support: Option<usize>,
        #[serde(default = "default_max_tries")]
        max_tries: usize,
    },
}

fn default_base() -> f64 {
    0.75
}

fn default_amplitude() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockJson {
    pub start: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridJson {
    Linspace { start: f64, stop: f64, count: usize },
    Explicit { values: Vec<f64> },
}

impl GridJson {
    pub fn points(&self) -> Result<Vec<f64>> {
        match self {
            GridJson::Linspace { start, stop, count } => {
                if *count == 0 {
                    return Err(Error::Config("grid count must be positive".into()));
                }
                if *count == 1 {
                    return Ok(vec![*start]);
                }
                let step = (stop - start) / (*count as f64 - 1.0);
                Ok((0..*count).map(|i| start + step * i as f64).collect())
            }
            GridJson::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::Config("grid values must be nonempty".into()));
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Lengthscale,
    MeanLevel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchConfig {
    pub d: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    pub n: usize,
    pub signal: SignalJson,
    pub snr_db: f64,
    #[serde(default)]
    pub normalize_columns: bool,
    pub prior: PriorJson,
    pub slab: SlabJson,
    #[serde(default)]
    pub ep: EpJson,
    pub parameter: SweepParameter,
    pub grid: GridJson,
    pub seed: u64,
}

fn default_t() -> usize {
    1
}

/// One solver entry of a phase-transition sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodJson {
    Ep {
        name: String,
        #[serde(default)]
        scheme: Option<String>,
        #[serde(default = "default_prior_variant")]
        prior: PriorVariant,
    },
    Omp {
        name: String,
    },
    OracleRidge {
        name: String,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

impl MethodJson {
    pub fn name(&self) -> &str {
        match self {
            MethodJson::Ep { name, .. } => name,
            MethodJson::Omp { name } => name,
            MethodJson::OracleRidge { name, .. } => name,
        }
    }
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_prior_variant() -> PriorVariant {
    PriorVariant::Structured
}

/// Which prior an EP method is handed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorVariant {
    /// The generating structured prior.
    Structured,
    /// Same marginals, no correlation (classical independent prior).
    Diagonal,
    /// Spatial correlation only; time steps independent.
    SpatialOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTransitionConfig {
    pub d: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    /// Exact support cardinality of every generated signal.
    pub k: usize,
    pub snr_db: f64,
    pub ratios: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_true")]
    pub normalize_columns: bool,
    pub prior: PriorJson,
    pub slab: SlabJson,
    #[serde(default)]
    pub ep: EpJson,
    pub methods: Vec<MethodJson>,
    #[serde(default = "default_max_tries")]
    pub max_tries: usize,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

pub fn load_config<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
