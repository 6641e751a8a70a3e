//! The structured sparsity prior: activation probabilities and sampling.
//!
//! Run with: cargo run --release --example prior_sampling

use spikeslab_ep::kernel::CoordinateGrid;
use spikeslab_ep::prior::{
    joint_activation_prob_mc, marginal_activation_prob, sample_prior, sample_prior_conditioned,
    PriorModel, SlabParams, SpatialCov, TemporalCov,
};

fn main() -> spikeslab_ep::Result<()> {
    let d = 120;
    let (lengthscale, magnitude, mean_level) = (10.0, 5.0, -1.0);
    let model = PriorModel {
        mean_level,
        spatial: SpatialCov::SquaredExponential {
            lengthscale,
            magnitude,
            coords: CoordinateGrid::regular_1d(d),
        },
        temporal: TemporalCov::Identity,
    };
    let prior = model.materialize(d, 1)?;
    let slab = SlabParams::new(0.0, 1.0)?;

    println!("structured spike-and-slab prior on a {d}-point grid");
    println!("  kernel: squared-exponential, lengthscale {lengthscale}, magnitude {magnitude}");
    let p = marginal_activation_prob(mean_level, magnitude);
    println!("  marginal activation probability: {p:.4}\n");

    println!("joint activation vs distance (Monte Carlo, 200k draws):");
    for (i, j) in [(0usize, 60usize), (0, 20), (0, 8), (0, 2)] {
        let (est, se) = joint_activation_prob_mc(&prior, i, j, 200_000, 7)?;
        println!(
            "  p(z_{i} = 1, z_{j} = 1) = {est:.4} ± {:.4}   (independent would be {:.4})",
            2.0 * se,
            p * p
        );
    }

    let sample = sample_prior(&prior, &slab, 42)?;
    println!("\nunconditioned draw (seed 42): {} active of {d}", sample.support_size());
    print_support(&sample.support);

    let conditioned = sample_prior_conditioned(&prior, &slab, 30, 42, 10_000)?;
    println!(
        "\ndraw conditioned on exactly 30 actives (exact = {}):",
        conditioned.exact
    );
    print_support(&conditioned.sample.support);
    Ok(())
}

fn print_support(support: &nalgebra::DMatrix<f64>) {
    let line: String = support
        .iter()
        .map(|&v| if v > 0.5 { '#' } else { '.' })
        .collect();
    println!("  {line}");
}
