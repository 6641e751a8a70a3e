//! The four benchmark commands behind the CLI.
//!
//! Every command takes a JSON config plus an output directory and emits CSV
//! data with a JSON metadata sidecar. A master seed fully determines all
//! numeric output (wall-clock columns aside); trial and grid-point seeds are
//! derived, so sweeps reproduce exactly regardless of worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::engine::{run_ep_model, EpResult};
use crate::error::{Error, Result};
use crate::harness::config::*;
use crate::harness::synth::*;
use crate::io::{write_json, write_matrix_csv, SCHEMA_VERSION};
use crate::likelihood::{Likelihood, Problem};
use crate::metrics::{f_measure, nmse, omp, oracle_ridge, SupportMetrics};
use crate::prior::{
    conditioned_mean_shift, sample_prior, sample_prior_conditioned, PriorModel,
    SpatialCov, TemporalCov,
};

/// Files produced by `cmd_sample`.
#[derive(Debug, Clone, Serialize)]
pub struct SamplePaths {
    pub gamma: PathBuf,
    pub support: PathBuf,
    pub coefficients: PathBuf,
    pub metadata: PathBuf,
}

/// Draw (and optionally condition) one prior sample and write it out.
pub fn cmd_sample(config: &SampleConfig, out_dir: &Path) -> Result<SamplePaths> {
    std::fs::create_dir_all(out_dir)?;
    let model = config.prior.build(config.d)?;
    let prior = model.materialize(config.d, config.t)?;
    let slab = config.slab.build()?;

    let (sample, achieved, exact) = match config.condition_support {
        Some(k) => {
            let got = sample_prior_conditioned(&prior, &slab, k, config.seed, config.max_tries)?;
            (got.sample, got.achieved_support, got.exact)
        }
        None => {
            let s = sample_prior(&prior, &slab, config.seed)?;
            let k = s.support_size();
            (s, k, true)
        }
    };

    let paths = SamplePaths {
        gamma: out_dir.join("gamma.csv"),
        support: out_dir.join("support.csv"),
        coefficients: out_dir.join("coefficients.csv"),
        metadata: out_dir.join("sample_meta.json"),
    };
    write_matrix_csv(&paths.gamma, &sample.gamma)?;
    write_matrix_csv(&paths.support, &sample.support)?;
    write_matrix_csv(&paths.coefficients, &sample.coefficients)?;
    write_json(
        &paths.metadata,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "sample",
            "seed": config.seed,
            "config": config,
            "support_size": achieved,
            "conditioning_exact": exact,
        }),
    )?;
    Ok(paths)
}

/// Files produced by `cmd_solve`.
#[derive(Debug, Clone, Serialize)]
pub struct SolvePaths {
    pub x_mean: PathBuf,
    pub x_var: PathBuf,
    pub support_prob: PathBuf,
    pub gamma_mean: PathBuf,
    pub gamma_var: PathBuf,
    pub metadata: PathBuf,
}

fn load_problem(files: &ProblemFilesJson, base: &Path) -> Result<Problem> {
    let resolve = |p: &str| {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };
    let a = crate::io::read_matrix_csv(&resolve(&files.a_csv))?;
    let y = crate::io::read_matrix_csv(&resolve(&files.y_csv))?;
    let likelihood = match files.likelihood {
        LikelihoodJson::Gaussian { noise_variance } => Likelihood::Gaussian { noise_variance },
        LikelihoodJson::Probit => Likelihood::Probit,
    };
    Problem::new(a, y, likelihood)
}

/// Solve one problem from CSV inputs and write the posterior summaries.
pub fn cmd_solve(
    config: &SolveConfig,
    config_dir: &Path,
    out_dir: &Path,
    scheme_override: Option<&str>,
) -> Result<SolvePaths> {
    std::fs::create_dir_all(out_dir)?;
    let problem = load_problem(&config.problem, config_dir)?;
    let model = config.prior.build(problem.d())?;
    let slab = config.slab.build()?;
    let ep = config.ep.build(scheme_override)?;
    let res = run_ep_model(&problem, &model, &slab, &ep)?;

    let paths = SolvePaths {
        x_mean: out_dir.join("x_mean.csv"),
        x_var: out_dir.join("x_var.csv"),
        support_prob: out_dir.join("support_prob.csv"),
        gamma_mean: out_dir.join("gamma_mean.csv"),
        gamma_var: out_dir.join("gamma_var.csv"),
        metadata: out_dir.join("solve_meta.json"),
    };
    write_matrix_csv(&paths.x_mean, &res.x_mean)?;
    write_matrix_csv(&paths.x_var, &res.x_var)?;
    write_matrix_csv(&paths.support_prob, &res.support_prob)?;
    let g = res.gamma_mean.len();
    write_matrix_csv(
        &paths.gamma_mean,
        &DMatrix::from_fn(g, 1, |i, _| res.gamma_mean[i]),
    )?;
    write_matrix_csv(
        &paths.gamma_var,
        &DMatrix::from_fn(g, 1, |i, _| res.gamma_var[i]),
    )?;

    let train_accuracy = match problem.likelihood {
        Likelihood::Probit => {
            let mut correct = 0usize;
            for t in 0..problem.t() {
                let proj = &problem.a * res.x_mean.column(t);
                for i in 0..problem.n() {
                    if proj[i] * problem.y[(i, t)] > 0.0 {
                        correct += 1;
                    }
                }
            }
            Some(correct as f64 / (problem.n() * problem.t()) as f64)
        }
        Likelihood::Gaussian { .. } => None,
    };

    write_json(
        &paths.metadata,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "solve",
            "seed": config.seed,
            "scheme": ep.scheme.to_string(),
            "config": config,
            "log_evidence": res.log_evidence,
            "iterations": res.iterations,
            "converged": res.converged,
            "evidence_trace": res.evidence_trace,
            "train_accuracy": train_accuracy,
        }),
    )?;
    Ok(paths)
}

/// One row of a sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub grid_value: f64,
    pub trial: usize,
    pub method: String,
    pub nmse: f64,
    pub support: SupportMetrics,
    pub iterations: usize,
    pub converged: bool,
    pub log_evidence: f64,
    pub wall_ms: f64,
    pub snr_db_realized: f64,
}

/// A completed sweep: ordered rows plus the emitted file locations.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
    pub metadata_path: PathBuf,
}

fn write_sweep_csv(path: &Path, value_name: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        value_name,
        "trial",
        "method",
        "nmse",
        "f_measure",
        "precision",
        "recall",
        "iterations",
        "converged",
        "log_evidence",
        "wall_ms",
        "snr_db_realized",
    ])?;
    for r in rows {
        w.write_record([
            r.grid_value.to_string(),
            r.trial.to_string(),
            r.method.clone(),
            r.nmse.to_string(),
            r.support.f_measure.to_string(),
            r.support.precision.to_string(),
            r.support.recall.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.log_evidence.to_string(),
            r.wall_ms.to_string(),
            r.snr_db_realized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run independent jobs on up to `workers` scoped threads, preserving the
/// job order in the output regardless of scheduling.
fn run_jobs<J: Sync, R: Send>(
    jobs: &[J],
    workers: usize,
    run: impl Fn(&J) -> R + Sync,
) -> Vec<R> {
    let workers = workers.max(1).min(jobs.len().max(1));
    if workers <= 1 {
        return jobs.iter().map(&run).collect();
    }
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..jobs.len()).step_by(workers).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                let run = &run;
                scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|jid| (jid, run(&jobs[jid])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    indexed.sort_by_key(|(jid, _)| *jid);
    indexed.into_iter().map(|(_, r)| r).collect()
}

/// Evidence-based hyperparameter search over a fixed synthetic instance.
///
/// One problem is generated from the master seed; EP then runs once per grid
/// point with the swept parameter substituted into the prior. The winner is
/// the highest evidence, ties resolved toward the smaller parameter value.
pub fn cmd_gridsearch(config: &GridSearchConfig, out_dir: &Path, workers: usize) -> Result<SweepResult> {
    std::fs::create_dir_all(out_dir)?;
    let (d, t) = (config.d, config.t);
    let base_model = config.prior.build(d)?;
    let slab = config.slab.build()?;
    let gen_prior = base_model.materialize(d, t)?;
    let (x0, support0) = synthesize_signal(
        &config.signal,
        &gen_prior,
        &slab,
        d,
        t,
        derive_seed(config.seed, &[1]),
    )?;
    let a = gaussian_forward_model(config.n, d, config.normalize_columns, derive_seed(config.seed, &[2]));
    let clean = &a * &x0;
    let (e, sigma2) = noise_at_snr(&clean, config.snr_db, derive_seed(config.seed, &[3]))?;
    let y = &clean + &e;
    let snr_real = realized_snr_db(&clean, &e);
    let problem = Problem::new(a, y, Likelihood::Gaussian { noise_variance: sigma2 })?;

    let points = config.grid.points()?;
    let ep = config.ep.build(None)?;
    let mut rows = Vec::with_capacity(points.len());
    for &value in &points {
        let mut model = base_model.clone();
        match config.parameter {
            SweepParameter::Lengthscale => match &mut model.spatial {
                SpatialCov::SquaredExponential { lengthscale, .. } => *lengthscale = value,
                SpatialCov::Diagonal { .. } => {
                    return Err(Error::Config(
                        "lengthscale sweep needs a squared-exponential prior".into(),
                    ))
                }
            },
            SweepParameter::MeanLevel => model.mean_level = value,
        }
        let start = Instant::now();
        let row = match run_ep_model(&problem, &model, &slab, &ep) {
            Ok(res) => sweep_row_from_result(&res, &x0, &support0, value, 0, "ep", start, snr_real)?,
            // A failed grid point is recorded and the sweep continues.
            Err(err) => {
                eprintln!("gridsearch: point {value} failed: {err}");
                SweepRow {
                    grid_value: value,
                    trial: 0,
                    method: "ep".into(),
                    nmse: f64::NAN,
                    support: SupportMetrics {
                        f_measure: f64::NAN,
                        precision: f64::NAN,
                        recall: f64::NAN,
                    },
                    iterations: 0,
                    converged: false,
                    log_evidence: f64::NAN,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    snr_db_realized: snr_real,
                }
            }
        };
        rows.push(row);
    }

    // Argmax of the evidence, ties to the smaller grid value.
    let mut best: Option<(f64, f64)> = None;
    for r in &rows {
        if r.log_evidence.is_nan() {
            continue;
        }
        best = match best {
            None => Some((r.grid_value, r.log_evidence)),
            Some((bv, be)) => {
                if r.log_evidence > be || (r.log_evidence == be && r.grid_value < bv) {
                    Some((r.grid_value, r.log_evidence))
                } else {
                    Some((bv, be))
                }
            }
        };
    }

    let csv_path = out_dir.join("gridsearch.csv");
    let metadata_path = out_dir.join("gridsearch_meta.json");
    write_sweep_csv(&csv_path, "value", &rows)?;
    write_json(
        &metadata_path,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "gridsearch",
            "seed": config.seed,
            "config": config,
            "noise_variance": sigma2,
            "best_value": best.map(|b| b.0),
            "best_log_evidence": best.map(|b| b.1),
        }),
    )?;
    Ok(SweepResult {
        rows,
        csv_path,
        metadata_path,
    })
}

fn sweep_row_from_result(
    res: &EpResult,
    x0: &DMatrix<f64>,
    support0: &DMatrix<f64>,
    grid_value: f64,
    trial: usize,
    method: &str,
    start: Instant,
    snr_db_realized: f64,
) -> Result<SweepRow> {
    Ok(SweepRow {
        grid_value,
        trial,
        method: method.to_string(),
        nmse: nmse(&res.x_mean, x0)?,
        support: f_measure(&res.support_prob, support0, 0.5)?,
        iterations: res.iterations,
        converged: res.converged,
        log_evidence: res.log_evidence,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        snr_db_realized,
    })
}

/// The prior variant an EP method receives.
fn variant_model(base: &PriorModel, variant: PriorVariant) -> PriorModel {
    match variant {
        PriorVariant::Structured => base.clone(),
        PriorVariant::Diagonal => {
            let variance = match &base.spatial {
                SpatialCov::Diagonal { variance } => *variance,
                SpatialCov::SquaredExponential { magnitude, .. } => *magnitude,
            };
            PriorModel {
                mean_level: base.mean_level,
                spatial: SpatialCov::Diagonal { variance },
                temporal: TemporalCov::Identity,
            }
        }
        PriorVariant::SpatialOnly => PriorModel {
            mean_level: base.mean_level,
            spatial: base.spatial.clone(),
            temporal: TemporalCov::Identity,
        },
    }
}

/// Undersampling sweep: conditioned prior draws, fresh forward models and
/// noise per trial, every configured method solved per instance.
pub fn cmd_phase_transition(
    config: &PhaseTransitionConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<SweepResult> {
    std::fs::create_dir_all(out_dir)?;
    let (d, t) = (config.d, config.t);
    if config.ratios.is_empty() || config.trials == 0 || config.methods.is_empty() {
        return Err(Error::Config(
            "phase transition needs ratios, trials and methods".into(),
        ));
    }
    let base_model = config.prior.build(d)?;
    let slab = config.slab.build()?;
    let gen_prior = base_model.materialize(d, t)?;
    // The conditioning shift is part of the generating distribution;
    // solvers receive the shifted mean as the true hyperparameter.
    let delta = conditioned_mean_shift(&gen_prior, config.k as f64);
    let mut solver_base = base_model.clone();
    solver_base.mean_level += delta;
    let ep = config.ep.build(None)?;

    let jobs: Vec<(usize, usize)> = (0..config.ratios.len())
        .flat_map(|r| (0..config.trials).map(move |tr| (r, tr)))
        .collect();

    let run_job = |&(ridx, trial): &(usize, usize)| -> Result<Vec<SweepRow>> {
        let ratio = config.ratios[ridx];
        let n = ((ratio * d as f64).round() as usize).max(1);
        let seed_sample = derive_seed(config.seed, &[10, ridx as u64, trial as u64, 0]);
        let seed_a = derive_seed(config.seed, &[10, ridx as u64, trial as u64, 1]);
        let seed_e = derive_seed(config.seed, &[10, ridx as u64, trial as u64, 2]);

        let cond = sample_prior_conditioned(&gen_prior, &slab, config.k, seed_sample, config.max_tries)?;
        let x0 = cond.sample.coefficients.clone();
        let support0 = cond.sample.support.clone();
        let a = gaussian_forward_model(n, d, config.normalize_columns, seed_a);
        let clean = &a * &x0;
        let (e, sigma2) = noise_at_snr(&clean, config.snr_db, seed_e)?;
        let y = &clean + &e;
        let snr_real = realized_snr_db(&clean, &e);
        let problem = Problem::new(a.clone(), y.clone(), Likelihood::Gaussian { noise_variance: sigma2 })?;

        let mut rows = Vec::with_capacity(config.methods.len());
        for method in &config.methods {
            let start = Instant::now();
            let row = match method {
                MethodJson::Ep {
                    name,
                    scheme,
                    prior,
                } => {
                    let model = variant_model(&solver_base, *prior);
                    let mut mcfg = ep.clone();
                    if let Some(s) = scheme {
                        mcfg.scheme = s.parse()?;
                    }
                    let res = run_ep_model(&problem, &model, &slab, &mcfg)?;
                    sweep_row_from_result(&res, &x0, &support0, ratio, trial, name, start, snr_real)?
                }
                MethodJson::Omp { name } => {
                    let mut est = DMatrix::zeros(d, t);
                    for tt in 0..t {
                        let y_col = DVector::from_column_slice(y.column(tt).as_slice());
                        let k_col = support0
                            .column(tt)
                            .iter()
                            .filter(|&&v| v > 0.5)
                            .count()
                            .min(n);
                        let coef = omp(&a, &y_col, k_col)?;
                        est.set_column(tt, &coef);
                    }
                    let pred = est.map(|v| if v.abs() > 1e-12 { 1.0 } else { 0.0 });
                    SweepRow {
                        grid_value: ratio,
                        trial,
                        method: name.clone(),
                        nmse: nmse(&est, &x0)?,
                        support: f_measure(&pred, &support0, 0.5)?,
                        iterations: 0,
                        converged: true,
                        log_evidence: f64::NAN,
                        wall_ms: start.elapsed().as_secs_f64() * 1e3,
                        snr_db_realized: snr_real,
                    }
                }
                MethodJson::OracleRidge { name, lambda } => {
                    let mut est = DMatrix::zeros(d, t);
                    for tt in 0..t {
                        let y_col = DVector::from_column_slice(y.column(tt).as_slice());
                        let sup: Vec<bool> =
                            support0.column(tt).iter().map(|&v| v > 0.5).collect();
                        let coef = oracle_ridge(&a, &y_col, &sup, *lambda)?;
                        est.set_column(tt, &coef);
                    }
                    SweepRow {
                        grid_value: ratio,
                        trial,
                        method: name.clone(),
                        nmse: nmse(&est, &x0)?,
                        support: f_measure(&support0, &support0, 0.5)?,
                        iterations: 0,
                        converged: true,
                        log_evidence: f64::NAN,
                        wall_ms: start.elapsed().as_secs_f64() * 1e3,
                        snr_db_realized: snr_real,
                    }
                }
            };
            rows.push(row);
        }
        Ok(rows)
    };

    let workers = workers.max(1).min(jobs.len().max(1));
    let mut all_rows: Vec<(usize, Vec<SweepRow>)> = Vec::with_capacity(jobs.len());
    if workers <= 1 {
        for (jid, job) in jobs.iter().enumerate() {
            match run_job(job) {
                Ok(rows) => all_rows.push((jid, rows)),
                Err(err) => eprintln!(
                    "phase-transition: ratio {} trial {} failed: {err}",
                    config.ratios[job.0], job.1
                ),
            }
        }
    } else {
        let results: Vec<(usize, Result<Vec<SweepRow>>)> = std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..workers)
                .map(|w| (w..jobs.len()).step_by(workers).collect())
                .collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    let jobs = &jobs;
                    let run_job = &run_job;
                    scope.spawn(move || {
                        chunk
                            .into_iter()
                            .map(|jid| (jid, run_job(&jobs[jid])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        for (jid, res) in results {
            match res {
                Ok(rows) => all_rows.push((jid, rows)),
                Err(err) => {
                    let job = jobs[jid];
                    eprintln!(
                        "phase-transition: ratio {} trial {} failed: {err}",
                        config.ratios[job.0], job.1
                    );
                }
            }
        }
    }
    // Deterministic row order regardless of worker scheduling.
    all_rows.sort_by_key(|(jid, _)| *jid);
    let rows: Vec<SweepRow> = all_rows.into_iter().flat_map(|(_, r)| r).collect();

    let csv_path = out_dir.join("phase_transition.csv");
    let metadata_path = out_dir.join("phase_transition_meta.json");
    write_sweep_csv(&csv_path, "ratio", &rows)?;
    write_json(
        &metadata_path,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "phase-transition",
            "seed": config.seed,
            "config": config,
            "conditioning_mean_shift": delta,
            "methods": config.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        }),
    )?;
    Ok(SweepResult {
        rows,
        csv_path,
        metadata_path,
    })
}
