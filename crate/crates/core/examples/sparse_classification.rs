//! Sparse linear classification with the probit model: only a contiguous
//! band of features carries the class signal, and the structured prior
//! recovers that band from few labeled examples.
//!
//! Run with: cargo run --release --example sparse_classification

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spikeslab_ep::engine::{run_ep_model, EpConfig};
use spikeslab_ep::kernel::CoordinateGrid;
use spikeslab_ep::likelihood::{Likelihood, Problem};
use spikeslab_ep::prior::{PriorModel, SlabParams, SpatialCov, TemporalCov};

fn main() -> spikeslab_ep::Result<()> {
    let (n_train, n_test, d) = (120usize, 400usize, 80usize);
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // True weights: one active band of 12 features.
    let mut w = DVector::zeros(d);
    for i in 30..42 {
        w[i] = 0.8 + 0.4 * rng.sample::<f64, _>(StandardNormal).abs();
    }
    let draw = |rng: &mut ChaCha8Rng, rows: usize| {
        let a = DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let labels = DVector::from_fn(rows, |i, _| {
            let margin = (a.row(i) * &w)[0] + 0.5 * rng.sample::<f64, _>(StandardNormal);
            if margin > 0.0 {
                1.0
            } else {
                -1.0
            }
        });
        (a, labels)
    };
    let (a_train, y_train) = draw(&mut rng, n_train);
    let (a_test, y_test) = draw(&mut rng, n_test);

    let problem = Problem::new(
        a_train.clone(),
        DMatrix::from_column_slice(n_train, 1, y_train.as_slice()),
        Likelihood::Probit,
    )?;
    let model = PriorModel {
        mean_level: -1.0,
        spatial: SpatialCov::SquaredExponential {
            lengthscale: 6.0,
            magnitude: 4.0,
            coords: CoordinateGrid::regular_1d(d),
        },
        temporal: TemporalCov::Identity,
    };
    let slab = SlabParams::new(0.0, 1.0)?;
    let mut config = EpConfig::default();
    config.max_iters = 400;
    let result = run_ep_model(&problem, &model, &slab, &config)?;

    let accuracy = |a: &DMatrix<f64>, y: &DVector<f64>| {
        let proj = a * result.x_mean.column(0);
        let hits = proj
            .iter()
            .zip(y.iter())
            .filter(|(p, l)| p.signum() == l.signum())
            .count();
        hits as f64 / y.len() as f64
    };
    println!("probit model, D = {d}, {n_train} training labels");
    println!(
        "converged: {} after {} iterations, log evidence {:.1}",
        result.converged, result.iterations, result.log_evidence
    );
    println!("train accuracy: {:.3}", accuracy(&a_train, &y_train));
    println!("test accuracy : {:.3}", accuracy(&a_test, &y_test));

    let band: Vec<usize> = (0..d)
        .filter(|&i| result.support_prob[(i, 0)] > 0.5)
        .collect();
    println!(
        "\nselected features ({} of {d}): {:?}",
        band.len(),
        band
    );
    let line: String = (0..d)
        .map(|i| {
            let p = result.support_prob[(i, 0)];
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
    println!("posterior support: {line}");
    println!("true band        : {}", (0..d).map(|i| if w[i] != 0.0 { '#' } else { '.' }).collect::<String>());
    Ok(())
}
