//! Fuzz a handful of sessions, write their logs, then code them and export
//! the conversational measures as CSV and JSON.
//!
//! cargo run --example metrics_report -- [out-dir]

use std::path::PathBuf;

use gallery_agents::analytics::{analyze_logs, export_report, render_csv, ReportFormat};
use gallery_agents::simbot::{fuzz_scenarios, FuzzOptions};

fn main() -> anyhow::Result<()> {
    let out =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gallery-metrics"));
    let logs = out.join("logs");
    std::fs::create_dir_all(&logs)?;
    let results = fuzz_scenarios(20, 9, &FuzzOptions { log_dir: Some(logs.clone()), ..Default::default() })?;
    let paths: Vec<PathBuf> = results.iter().filter_map(|r| r.log_path.clone()).collect();

    let (sessions, report) = analyze_logs(&paths)?;
    print!("{}", render_csv(&report)?);
    println!("\n{} sessions, patterns seen: {:?}", sessions.len(), report.patterns_observed());
    export_report(&report, ReportFormat::Csv, out.join("metrics.csv"))?;
    export_report(&report, ReportFormat::Json, out.join("metrics.json"))?;
    println!("wrote {}", out.display());
    Ok(())
}
