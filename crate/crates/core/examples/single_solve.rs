//! Solve one underdetermined linear inverse problem with the structured
//! prior and compare against the ground truth.
//!
//! Run with: cargo run --release --example single_solve

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
    let (d, n, k, snr_db) = (128usize, 64usize, 32usize, 20.0);
    let model = PriorModel {
        mean_level: 0.0,
        spatial: SpatialCov::SquaredExponential {
            lengthscale: 16.0,
            magnitude: 25.0,
            coords: CoordinateGrid::regular_1d(d),
        },
        temporal: TemporalCov::Identity,
    };
    let slab = SlabParams::new(0.0, 1.0)?;
    let gen_prior = model.materialize(d, 1)?;

    // Draw a ground truth with exactly k active coefficients, observe it
    // through a unit-column Gaussian forward model at the target SNR.
    let truth = sample_prior_conditioned(&gen_prior, &slab, k, 3, 10_000)?.sample;
    let a = gaussian_forward_model(n, d, true, 4);
    let clean = &a * &truth.coefficients;
    let (noise, sigma2) = noise_at_snr(&clean, snr_db, 5)?;
    let y = &clean + &noise;
    let problem = Problem::new(a, y, Likelihood::Gaussian { noise_variance: sigma2 })?;

    // The solver gets the generating hyperparameters, including the mean
    // shift implied by conditioning on k.
    let mut solver_model = model.clone();
    solver_model.mean_level += conditioned_mean_shift(&gen_prior, k as f64);

    let config = EpConfig::default();
    let result = run_ep_model(&problem, &solver_model, &slab, &config)?;

    println!(
        "N = {n}, D = {d}, K = {k}, SNR = {snr_db} dB, scheme = {}",
        config.scheme
    );
    println!(
        "converged: {} after {} iterations, log evidence {:.2}",
        result.converged, result.iterations, result.log_evidence
    );
    let err = nmse(&result.x_mean, &truth.coefficients)?;
    let sup = f_measure(&result.support_prob, &truth.support, 0.5)?;
    println!(
        "NMSE {:.4} ({:.1} dB), F {:.3} (precision {:.3}, recall {:.3})",
        err,
        10.0 * err.log10(),
        sup.f_measure,
        sup.precision,
        sup.recall
    );

    println!("\ntruth support vs posterior support probability:");
    let truth_line: String = truth
        .support
        .iter()
        .map(|&v| if v > 0.5 { '#' } else { '.' })
        .collect();
    let post_line: String = result
        .support_prob
        .iter()
        .map(|&p| {
            if p > 0.9 {
                '#'
            } else if p > 0.5 {
                '+'
            } else if p > 0.1 {
                ':'
            } else {
                '.'
            }
        })
        .collect();
    println!("  truth : {truth_line}");
    println!("  post  : {post_line}");
    Ok(())
}
