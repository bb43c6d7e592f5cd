//! CSV output. Numbers use Rust's shortest round-trip formatting, so equal
//! reports serialize to identical bytes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use sensor_sched::Schedule;

use crate::compare::ComparisonReport;
use crate::error::{HarnessError, Result};
use crate::monte_carlo::RmseReport;

pub const COMPARISON_HEADER: [&str; 8] = [
    "method",
    "N",
    "budget",
    "J_total",
    "nodes_visited",
    "relaxations_solved",
    "wall_ms",
    "schedule",
];

pub const RMSE_HEADER: [&str; 3] = ["method", "k", "rmse_position"];

/// One-based sensor numbers joined by `;`.
pub fn format_schedule(schedule: &Schedule) -> String {
    schedule
        .picks()
        .iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_schedule(text: &str, num_sensors: usize) -> Result<Schedule> {
    let picks = text
        .split(';')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(i) if i >= 1 => Ok(i - 1),
            _ => Err(HarnessError::config(format!("invalid sensor number '{t}' in schedule"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Schedule::new(picks, num_sensors)?)
}

/// Writes comparison rows. `wall_ms` stays empty unless `timing` is set,
/// which keeps repeated runs byte-identical.
pub fn write_comparison<W: Write>(out: W, reports: &[ComparisonReport], timing: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER)?;
    for report in reports {
        for row in &report.rows {
            let wall = if timing {
                (row.wall_time.as_secs_f64() * 1e3).to_string()
            } else {
                String::new()
            };
            w.write_record([
                row.method.name().to_string(),
                report.horizon.to_string(),
                report.budget.to_string(),
                row.j_total.to_string(),
                row.stats.nodes_visited.to_string(),
                row.stats.relaxations_solved.to_string(),
                wall,
                format_schedule(&row.schedule),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_rmse<W: Write>(out: W, report: &RmseReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RMSE_HEADER)?;
    for m in &report.methods {
        for (k, e) in m.rmse.iter().enumerate() {
            w.write_record([m.method.name().to_string(), (k + 1).to_string(), e.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// A report that can be written as CSV.
pub enum Report<'a> {
    Comparison(&'a [ComparisonReport]),
    Rmse(&'a RmseReport),
}

pub fn emit_csv(report: Report<'_>, path: impl AsRef<Path>, timing: bool) -> Result<()> {
    let path = path.as_ref();
    let file = create(path)?;
    match report {
        Report::Comparison(r) => write_comparison(file, r, timing),
        Report::Rmse(r) => write_rmse(file, r),
    }
    .map_err(csv_err(path))
}
