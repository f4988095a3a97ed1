//! Online regression of gradients against positions.
//!
//! Feeds noisy samples of the gradient of `f(x) = 2 (x - 3)^2 / 2` into a 1D
//! regression state and reads back the curvature and the modeled minimizer,
//! then does the same for a 2D quadratic with a full Hessian.

use ogr::RegressionState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> ogr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut noise = || -> f64 { 0.1 * rng.sample::<f64, _>(StandardNormal) };

    let mut one = RegressionState::new(1);
    for t in 0..200 {
        let x = (t as f64 * 0.37).sin() * 2.0;
        one.update(&[x], &[2.0 * (x - 3.0) + noise()], 0.95)?;
    }
    let (lambda, p) = one.estimate_1d(0, 1e-6)?;
    println!(
        "1D: curvature {lambda:.4} (true 2), minimizer {p:.4} (true 3), s = {:.6}",
        one.s()
    );

    let h = [[3.0, 1.0], [1.0, 2.0]];
    let center = [1.0, -1.0];
    let mut two = RegressionState::new(2);
    for t in 0..300 {
        let x = [(t as f64 * 0.31).sin(), (t as f64 * 0.17).cos()];
        let g: Vec<f64> = (0..2)
            .map(|i| h[i][0] * (x[0] - center[0]) + h[i][1] * (x[1] - center[1]) + noise())
            .collect();
        two.update(&x, &g, 0.98)?;
    }
    let est = two.estimate_hessian()?;
    let p = two.estimate_stationary_point(&est)?;
    println!("2D: hessian {:?}", est.to_rows());
    println!("2D: stationary point {p:.4?} (true {center:?})");
    Ok(())
}
