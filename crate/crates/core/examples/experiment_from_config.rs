//! Runs a TOML experiment config and prints the comparison table.
//!
//! ```text
//! cargo run --release --example experiment_from_config -- configs/saddle.toml
//! ```

use std::path::PathBuf;

use ogr::harness;

fn main() -> ogr::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../configs/saddle.toml"
            ))
        });
    let config = harness::load_config(&path)?;
    println!("{}", harness::emit_config(&config));
    let traces = harness::run_experiment(&config, None)?;
    let out = std::env::temp_dir().join("ogr-example");
    let summary = harness::write_outputs(&config, &traces, &out)?;
    println!("traces in {}", summary.parent().unwrap_or(&out).display());
    for table in harness::compare(&out)? {
        if table.experiment == config.name {
            println!("{}", table.render());
        }
    }
    Ok(())
}
