//! The quick benchmark profile end to end: shapes, baseline, single- and
//! multi-task QMD, report and directional checks.
//!
//! `cargo run --release --example benchmark -- /tmp/bench`

use qmd::shapes::{generate_splits, ShapesConfig, SplitSizes};
use qmd::toydet::benchmark::{directional_checks, run_benchmark, BenchmarkOptions};

fn main() -> qmd::Result<()> {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bench".into()));
    let shapes = out.join("shapes");
    let sizes = SplitSizes {
        train: 400,
        val: 40,
        test: 100,
    };
    generate_splits(&ShapesConfig::default(), sizes, &shapes, None)?;
    let report = run_benchmark(&shapes, Some(&out), &BenchmarkOptions::quick(), None)?;
    print!("{}", report.to_text());
    for c in directional_checks(&report) {
        println!("{} {} ({})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}
