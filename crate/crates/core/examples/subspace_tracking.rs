//! How well the tracked subspace captures the gradient over time.
//!
//! Prints the fraction of the gradient norm inside the subspace, the
//! curvature range seen by the model and the basis orthonormality error.

use ogr::{Ogr, OgrConfig, Optimizer, Problem, ProblemSpec};

fn main() -> ogr::Result<()> {
    let problem = Problem::new(ProblemSpec::Quadratic {
        dim: 40,
        condition: 100.0,
        noise: 0.01,
        seed: 3,
        hessian: None,
        center: None,
        start: None,
    })?;
    let mut ogr = Ogr::new(OgrConfig::with_dim(6), problem.start().to_vec(), 5)?;
    let mut oracle = problem.oracle(5, 0);
    println!(
        "{:>5} {:>9} {:>9} {:>9} {:>10}  events",
        "step", "captured", "lmin", "lmax", "ortho"
    );
    for _ in 0..2000 {
        let r = ogr.step(&mut oracle)?;
        if r.step % 100 == 0 {
            let captured = r.residual_norm.map_or(0.0, |res| {
                (1.0 - (res / r.grad_norm).powi(2)).max(0.0).sqrt()
            });
            let lmin = r.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
            let lmax = r.lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "{:>5} {:>9.3} {:>9.2} {:>9.2} {:>10.2e}  {}",
                r.step,
                captured,
                lmin,
                lmax,
                ogr.basis().orthonormality_error(),
                r.events()
            );
        }
    }
    Ok(())
}
