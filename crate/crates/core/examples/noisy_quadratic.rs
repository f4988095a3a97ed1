//! OGR against ADAM on a 50-dimensional ill-conditioned quadratic with noisy gradients.

use ogr::{Baseline, BaselineKind, Ogr, OgrConfig, Optimizer, Problem, ProblemSpec};

fn main() -> ogr::Result<()> {
    let problem = Problem::new(ProblemSpec::Quadratic {
        dim: 50,
        condition: 100.0,
        noise: 0.1,
        seed: 7,
        hessian: None,
        center: None,
        start: None,
    })?;
    let minimum = problem.minimum().unwrap_or(0.0);
    let config = OgrConfig {
        beta: 0.99,
        ..OgrConfig::with_dim(10)
    };
    let mut optimizers: Vec<Box<dyn Optimizer>> = vec![
        Box::new(Ogr::new(config, problem.start().to_vec(), 1)?),
        Box::new(Baseline::new(
            BaselineKind::adam(1e-2),
            problem.start().to_vec(),
        )?),
    ];
    println!("{:>6} {:>12} {:>12}", "step", "ogr gap", "adam gap");
    let mut oracles: Vec<_> = (0..2).map(|_| problem.oracle(1, 0)).collect();
    for step in 1..=5000 {
        let mut gaps = Vec::new();
        for (opt, oracle) in optimizers.iter_mut().zip(&mut oracles) {
            opt.step(oracle)?;
            gaps.push(problem.objective(opt.theta()) - minimum);
        }
        if step % 500 == 0 {
            println!("{step:>6} {:>12.3e} {:>12.3e}", gaps[0], gaps[1]);
        }
    }
    Ok(())
}
