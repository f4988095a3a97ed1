//! Saddle-free steps versus plain model-Newton steps on `f = (x^2 - y^2) / 2`.
//!
//! Both variants fit the same curvatures. The Newton variant jumps to the
//! modeled stationary point, which is the saddle itself; the saddle-free
//! variant reverses the step along negative curvature and escapes.

use ogr::{GradientOracle, Ogr, OgrConfig, Optimizer};

fn run(saddle_free: bool) -> ogr::Result<()> {
    let config = OgrConfig {
        saddle_free,
        ..OgrConfig::with_dim(2)
    };
    let mut ogr = Ogr::new(config, vec![1.0, 0.1], 0)?;
    let mut gradient = |t: &[f64]| vec![t[0], -t[1]];
    let label = if saddle_free { "saddle-free" } else { "newton" };
    for _ in 0..14 {
        let report = ogr.step(&mut gradient as &mut dyn GradientOracle)?;
        let t = ogr.theta();
        println!(
            "{label:>11} step {:>2}  x {:>10.3e}  y {:>10.3e}  lambdas {:?}",
            report.step, t[0], t[1], report.lambdas
        );
    }
    Ok(())
}

fn main() -> ogr::Result<()> {
    run(true)?;
    println!();
    run(false)
}
