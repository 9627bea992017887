//! Fit a Gaussian process to noisy samples of a 1-D function and print the
//! posterior band next to the truth.

use rand::Rng;
use tapmobo::gp::{fit, GpFitConfig};
use tapmobo::rng::rng_from;

fn truth(x: f64) -> f64 {
    (6.0 * x).sin() + 0.5 * x
}

fn main() -> tapmobo::Result<()> {
    let mut rng = rng_from(3);
    let x: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
    let y: Vec<f64> = x.iter().map(|p| truth(p[0]) + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let model = fit(&x, &y, &GpFitConfig::default())?;
    let hp = model.hyperparams();
    println!(
        "lengthscale {:.3}  signal variance {:.3}  noise variance {:.2e}",
        hp.lengthscales[0], hp.signal_variance, hp.noise_variance
    );

    let grid: Vec<Vec<f64>> = (0..=20).map(|i| vec![i as f64 / 20.0]).collect();
    let (mean, var) = model.predict(&grid);
    println!("{:>5} {:>8} {:>8} {:>8}", "x", "truth", "mean", "2 sd");
    for ((p, m), v) in grid.iter().zip(&mean).zip(&var) {
        println!("{:5.2} {:8.3} {:8.3} {:8.3}", p[0], truth(p[0]), m, 2.0 * v.sqrt());
    }

    let draws = model.sample_posterior(&grid[..3], 4, 9)?;
    println!("posterior draws at x = 0, 0.05, 0.1: {draws:.3?}");
    Ok(())
}
