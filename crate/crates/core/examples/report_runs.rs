//! Merges finished run directories into the comparison table and writes it
//! next to them.
//!
//! cargo run --release --example report_runs -- runs/ [more dirs...]

use std::env;

use rosmo::expyard::report;

fn main() -> anyhow::Result<()> {
    let mut dirs: Vec<String> = env::args().skip(1).collect();
    if dirs.is_empty() {
        dirs.push("runs".into());
    }
    let table = report(&dirs)?;
    for run in &table.runs {
        println!(
            "{:<40} {:<8} seed {:<3} final IQM {:.3}  best IQM {:.3}",
            run.dir.display(),
            run.algorithm,
            run.seed,
            run.final_iqm,
            run.best_iqm
        );
    }
    for dir in &table.skipped {
        println!("{:<40} unfinished, skipped", dir.display());
    }
    println!();
    print!("{}", table.to_markdown());
    table.write(&dirs[0])?;
    println!("\nwrote report.csv, report_runs.csv and report.md to {}", dirs[0]);
    Ok(())
}
