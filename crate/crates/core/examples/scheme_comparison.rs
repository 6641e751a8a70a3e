//! The four refresh strategies on one instance: exact dense, low-rank,
//! common precision, and grouped. Accuracy is nearly identical; cost is not.
//!
//! Run with: cargo run --release --example scheme_comparison

use std::time::Instant;

use spikeslab_ep::engine::{run_ep_model, EpConfig};
use spikeslab_ep::harness::synth::{gaussian_forward_model, noise_at_snr};
use spikeslab_ep::kernel::CoordinateGrid;
use spikeslab_ep::likelihood::{Likelihood, Problem};
use spikeslab_ep::metrics::{f_measure, nmse};
use spikeslab_ep::prior::{
    conditioned_mean_shift, sample_prior_conditioned, PriorModel, SlabParams, SpatialCov,
    TemporalCov,
};

fn main() -> spikeslab_ep::Result<()> {
    let (d, n, k) = (200usize, 100usize, 50usize);
    let model = PriorModel {
        mean_level: 0.0,
        spatial: SpatialCov::SquaredExponential {
            lengthscale: 20.0,
            magnitude: 25.0,
            coords: CoordinateGrid::regular_1d(d),
        },
        temporal: TemporalCov::Identity,
    };
    let slab = SlabParams::new(0.0, 1.0)?;
    let gen_prior = model.materialize(d, 1)?;
    let truth = sample_prior_conditioned(&gen_prior, &slab, k, 21, 10_000)?.sample;
    let a = gaussian_forward_model(n, d, true, 22);
    let clean = &a * &truth.coefficients;
    let (noise, sigma2) = noise_at_snr(&clean, 20.0, 23)?;
    let problem = Problem::new(a, &clean + &noise, Likelihood::Gaussian { noise_variance: sigma2 })?;

    let mut solver_model = model.clone();
    solver_model.mean_level += conditioned_mean_shift(&gen_prior, k as f64);

    println!("D = {d}, N = {n}, K = {k}, SNR = 20 dB\n");
    println!("{:<14} {:>8} {:>8} {:>7} {:>6} {:>9}", "scheme", "NMSE", "F", "iters", "conv", "time");
    for scheme in ["full", "lowrank:0.99", "cp", "group:10x1"] {
        let mut config = EpConfig::default();
        config.scheme = scheme.parse()?;
        let t0 = Instant::now();
        let result = run_ep_model(&problem, &solver_model, &slab, &config)?;
        let elapsed = t0.elapsed();
        let err = nmse(&result.x_mean, &truth.coefficients)?;
        let sup = f_measure(&result.support_prob, &truth.support, 0.5)?;
        println!(
            "{:<14} {:>8.4} {:>8.3} {:>7} {:>6} {:>8.0?}",
            scheme, err, sup.f_measure, result.iterations, result.converged, elapsed
        );
    }
    Ok(())
}
