//! Crossing a nearly flat shelf: OGR against ADAM at three learning rates.
//!
//! The regressed curvature on the shelf is tiny, so OGR's modeled minimizer
//! lies far ahead and the step cap governs progress; ADAM crawls at its
//! learning rate.

use ogr::{Baseline, BaselineKind, Ogr, OgrConfig, Optimizer, Problem, ProblemSpec};

fn final_gap(problem: &Problem, mut opt: Box<dyn Optimizer>) -> ogr::Result<f64> {
    let mut oracle = problem.oracle(1, 0);
    for _ in 0..5000 {
        opt.step(&mut oracle)?;
    }
    Ok(problem.objective(opt.theta()) - problem.minimum().unwrap_or(0.0))
}

fn main() -> ogr::Result<()> {
    let problem = Problem::new(ProblemSpec::default_for("plateau")?)?;
    let start = problem.start().to_vec();
    println!(
        "start gap {:.3}",
        problem.objective(&start) - problem.minimum().unwrap_or(0.0)
    );
    let ogr = Ogr::new(OgrConfig::with_dim(problem.dim()), start.clone(), 1)?;
    println!("ogr            {:.3e}", final_gap(&problem, Box::new(ogr))?);
    for lr in [1e-3, 1e-2, 1e-1] {
        let adam = Baseline::new(BaselineKind::adam(lr), start.clone())?;
        println!(
            "adam lr {lr:<6} {:.3e}",
            final_gap(&problem, Box::new(adam))?
        );
    }
    Ok(())
}
