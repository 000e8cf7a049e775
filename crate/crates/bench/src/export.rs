//! Result export. CSV has one row per inner sweep of every trial; JSON holds
//! the full table plus the per-cell summary and reads back losslessly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::runner::{summarize, ResultTable, Summary};

pub const CSV_COLUMNS: [&str; 9] =
    ["scenario", "seed", "sweep_value", "algorithm", "iteration", "nmse_db", "rho_est", "terminated", "wall_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    seed: u64,
    sweep_value: Option<f64>,
    algorithm: &'a str,
    iteration: usize,
    nmse_db: Option<f64>,
    rho_est: f64,
    /// Set on a trial's last row only.
    terminated: &'a str,
    wall_ms: f64,
}

/// Writes the per-sweep rows. Empty cells mean "not applicable": no sweep,
/// an undefined NMSE, or a row before the trial's last. A trial that could
/// not run gets a single row with iteration 0.
pub fn write_csv<W: Write>(table: &ResultTable, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for t in &table.trials {
        let row = |iteration: usize, nmse_db: Option<f64>, rho_est: f64, last: bool| CsvRow {
            scenario: &table.scenario,
            seed: t.seed,
            sweep_value: t.sweep_value,
            algorithm: t.algorithm.as_str(),
            iteration,
            nmse_db,
            rho_est,
            terminated: if last { t.outcome.as_str() } else { "" },
            wall_ms: t.wall_ms,
        };
        if t.iterations.is_empty() {
            w.serialize(row(0, t.final_nmse.map(hygec::oracle::to_db), t.rho_final, true))?;
        }
        for (i, r) in t.iterations.iter().enumerate() {
            w.serialize(row(r.iteration, r.nmse_db, r.rho_est, i + 1 == t.iterations.len()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub table: ResultTable,
    pub summary: Vec<Summary>,
}

pub fn write_json<W: Write>(table: &ResultTable, out: W) -> Result<()> {
    let doc = ResultDocument { table: table.clone(), summary: summarize(table) };
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<ResultDocument> {
    Ok(serde_json::from_reader(input)?)
}

pub fn write_table<W: Write>(table: &ResultTable, format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(table, out),
        Format::Json => write_json(table, out),
    }
}

/// Human-readable summary, one line per (sweep point, algorithm).
pub fn render_summary(scenario: &str, summary: &[Summary]) -> String {
    let fmt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
    let mut s = format!("{scenario}: {} cells\n", summary.len());
    s.push_str("  sweep_value  algorithm         trials  scored  failures  median_dB  mean_dB  median_rho\n");
    for c in summary {
        s.push_str(&format!(
            "  {:>11}  {:<16}  {:>6}  {:>6}  {:>8}  {:>9}  {:>7}  {:>10}\n",
            fmt(c.sweep_value, 3),
            c.algorithm.as_str(),
            c.trials,
            c.scored,
            c.failures,
            fmt(c.median_nmse_db, 2),
            fmt(c.mean_nmse_db, 2),
            fmt(c.median_rho, 4),
        ));
    }
    s
}
