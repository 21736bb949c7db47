//! JSON summary and CSV emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use nonlocal_dv::Result;

use crate::config::Command;
use crate::run::{Context, Outcome};

/// Which relation a reported quantity realizes and how it was computed.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub result: String,
    pub relation: String,
    pub method: String,
}

/// Numeric CSV with a header row; values in `{:.17e}`.
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.json` into the output directory and echoes the outcome
/// lines to stdout.
pub fn emit(ctx: &Context, command: Command, outcome: &Outcome) -> Result<()> {
    let summary = json!({
        "command": command.to_string(),
        "seed": ctx.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": ctx.config,
        "results": outcome.results,
        "provenance": outcome.provenance,
        "files": outcome.files,
    });
    let mut f = BufWriter::new(File::create(ctx.out.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    for line in &outcome.lines {
        println!("{line}");
    }
    Ok(())
}
