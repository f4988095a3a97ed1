//! Training a small tanh network with minibatch gradients.

use ogr::{Baseline, BaselineKind, Ogr, OgrConfig, Optimizer, Problem, ProblemSpec};

fn main() -> ogr::Result<()> {
    let problem = Problem::new(ProblemSpec::default_for("mlp")?)?;
    println!(
        "{} parameters, {} batches per epoch",
        problem.dim(),
        problem.batches_per_epoch()
    );
    // Most parameters lie outside the 10 tracked directions and move by plain
    // SGD at rate `eta`, so raise it above the default.
    let config = OgrConfig {
        eta: 0.05,
        epsilon: 0.3,
        ..OgrConfig::with_dim(10)
    };
    let mut ogr = Ogr::new(config, problem.start().to_vec(), 2)?;
    let mut adam = Baseline::new(BaselineKind::adam(1e-2), problem.start().to_vec())?;
    let (mut a, mut b) = (problem.oracle(2, 0), problem.oracle(2, 0));
    println!("{:>5} {:>10} {:>10}", "step", "ogr loss", "adam loss");
    for step in 1..=3000 {
        ogr.step(&mut a)?;
        adam.step(&mut b)?;
        if step % 300 == 0 {
            println!(
                "{step:>5} {:>10.4} {:>10.4}",
                problem.objective(ogr.theta()),
                problem.objective(adam.theta())
            );
        }
    }
    Ok(())
}
