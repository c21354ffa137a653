//! JSON envelope and file writing.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::commands::{Outcome, Table};
use crate::config::{Format, RunConfig};

pub const TOOL: &str = "critlab";

pub fn envelope(config: &RunConfig, outcome: &Outcome) -> Value {
    json!({
        "tool": TOOL,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "subcommand": config.task.name(),
        "config": config,
        "status": if outcome.failures.is_empty() { "ok" } else { "diagnostic" },
        "diagnostics": outcome.failures,
        "result": outcome.result,
    })
}

fn write_csv(path: &Path, table: &Table) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()
}

/// Writes the requested files and returns their paths.
pub fn write_outputs(config: &RunConfig, outcome: &Outcome) -> std::io::Result<Vec<PathBuf>> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(config.format, Format::Json | Format::Both) {
        let path = dir.join(format!("{}.json", config.task.name()));
        let text = serde_json::to_string_pretty(&envelope(config, outcome)).expect("envelope serializes");
        std::fs::write(&path, text + "\n")?;
        written.push(path);
    }
    if matches!(config.format, Format::Csv | Format::Both) {
        for t in &outcome.tables {
            let path = dir.join(format!("{}.csv", t.name));
            write_csv(&path, t)?;
            written.push(path);
        }
    }
    Ok(written)
}
