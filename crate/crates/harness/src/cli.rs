use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sensor_sched::{Method, ObjectiveKind, SearchOptions};

use crate::compare::{run_compare_with, ComparisonReport};
use crate::error::{HarnessError, Result};
use crate::monte_carlo::{evaluate_schedules, MonteCarloOptions};
use crate::output::{write_comparison, write_rmse};
use crate::scenario::{load_scenario, parse_scenario, BudgetRule, ScenarioConfig};

const BUNDLED: &str = include_str!("../scenarios/tracking2d.json");

#[derive(Debug, Parser)]
#[command(
    name = "sensor-sched",
    version,
    about = "Optimal sensor scheduling for linear Gaussian systems"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schedule with one method and print the result row.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "bbc")]
        method: Method,
    },
    /// Run several methods on the same scenario.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "convex,bbc,bbl,bbz,greedy,greedy-star")]
        method: Vec<Method>,
    },
    /// Monte Carlo position RMSE of each method's schedule.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bbc,convex,greedy,greedy-star")]
        method: Vec<Method>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
    /// Sweep the horizon from `--from` to `--horizon` and report search effort.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bbc,bbl,bbz")]
        method: Vec<Method>,
        #[arg(long, default_value_t = 1)]
        from: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON file; the bundled tracking scenario if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    /// VALUE, linear:RATE or linear:RATE:round
    #[arg(long)]
    budget: Option<BudgetRule>,
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Swap trials for the conversion step (default S·N).
    #[arg(long)]
    trials: Option<usize>,
    /// Fill the wall_ms column. Timed output is not reproducible.
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(path) => load_scenario(path)?,
            None => parse_scenario(BUNDLED)?,
        };
        if let Some(n) = self.horizon {
            if n == 0 {
                return Err(HarnessError::config("--horizon must be at least 1"));
            }
            cfg.horizon = n;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(o) = self.objective {
            cfg.objective = o;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn options(&self) -> SearchOptions {
        SearchOptions {
            swap_trials: self.trials,
            ..Default::default()
        }
    }

    fn emit(&self, write: impl FnOnce(&mut dyn Write) -> csv::Result<()>) -> Result<()> {
        match &self.out {
            Some(path) => {
                let mut file = std::fs::File::create(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                write(&mut file).map_err(|source| HarnessError::Csv {
                    path: path.clone(),
                    source,
                })
            }
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                write(&mut lock).map_err(|source| HarnessError::Csv {
                    path: "<stdout>".into(),
                    source,
                })
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { common, method } => {
            let cfg = common.config()?;
            let report = run_compare_with(&cfg, &[method], &common.options())?;
            common.emit(|w| write_comparison(w, &[report], common.timing))
        }
        Command::Compare { common, method } => {
            let cfg = common.config()?;
            let report = run_compare_with(&cfg, &method, &common.options())?;
            common.emit(|w| write_comparison(w, &[report], common.timing))
        }
        Command::Simulate { common, method, runs } => {
            let cfg = common.config()?;
            let report = run_compare_with(&cfg, &method, &common.options())?;
            let schedules: Vec<_> = report.rows.into_iter().map(|r| (r.method, r.schedule)).collect();
            let rmse = evaluate_schedules(
                &cfg,
                &schedules,
                MonteCarloOptions {
                    runs,
                    ..Default::default()
                },
            )?;
            common.emit(|w| write_rmse(w, &rmse))
        }
        Command::Bench { common, method, from } => {
            let mut cfg = common.config()?;
            let to = cfg.horizon;
            if from == 0 || from > to {
                return Err(HarnessError::config(format!("empty horizon range {from}..={to}")));
            }
            let reports = (from..=to)
                .map(|n| {
                    cfg.horizon = n;
                    run_compare_with(&cfg, &method, &common.options())
                })
                .collect::<Result<Vec<ComparisonReport>>>()?;
            common.emit(|w| write_comparison(w, &reports, common.timing))
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_to(dir: &tempfile::TempDir, name: &str, args: &[&str]) -> (i32, Vec<u8>) {
        let out = dir.path().join(name);
        let mut full = vec!["sensor-sched"];
        full.extend_from_slice(args);
        let out_str = out.to_str().unwrap().to_string();
        full.extend_from_slice(&["--out", &out_str]);
        let code = run(full);
        (code, std::fs::read(&out).unwrap_or_default())
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for (i, args) in [
            vec!["compare", "--horizon", "4", "--budget", "linear:1.5:round"],
            vec![
                "simulate",
                "--horizon",
                "4",
                "--runs",
                "10",
                "--seed",
                "3",
                "--method",
                "greedy,bbc",
            ],
            vec!["bench", "--horizon", "3", "--budget", "linear:3"],
        ]
        .into_iter()
        .enumerate()
        {
            let (c1, a) = run_to(&dir, &format!("a{i}.csv"), &args);
            let (c2, b) = run_to(&dir, &format!("b{i}.csv"), &args);
            assert_eq!((c1, c2), (0, 0), "{args:?}");
            assert!(!a.is_empty());
            assert_eq!(a, b, "{args:?}");
        }
    }

    #[test]
    fn solve_writes_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let (code, bytes) = run_to(&dir, "s.csv", &["solve", "--horizon", "3", "--method", "exhaustive"]);
        assert_eq!(code, 0);
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("exhaustive,3,5,"));
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.json");
        assert_eq!(
            run(["sensor-sched", "solve", "--scenario", missing.to_str().unwrap()]),
            2
        );
        assert_eq!(run(["sensor-sched", "solve", "--budget", "linear:x"]), 2);
        assert_eq!(run(["sensor-sched", "solve", "--method", "astar"]), 2);

        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"schema": 1}"#).unwrap();
        assert_eq!(run(["sensor-sched", "compare", "--scenario", bad.to_str().unwrap()]), 2);

        // no sensor is free, so a zero budget admits nothing
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        v["sensors"][6]["cost"] = serde_json::json!(1);
        let costly = dir.path().join("costly.json");
        std::fs::write(&costly, v.to_string()).unwrap();
        assert_eq!(
            run([
                "sensor-sched",
                "solve",
                "--scenario",
                costly.to_str().unwrap(),
                "--budget",
                "0"
            ]),
            3
        );

        let (code, _) = run_to(&dir, "big.csv", &["solve", "--method", "exhaustive", "--horizon", "9"]);
        assert_eq!(code, 5);
    }

    #[test]
    fn numerical_failures_exit_with_four() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        let zero = serde_json::json!([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]);
        v["dynamics"]["A"] = zero.clone();
        v["dynamics"]["Qw"] = zero;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("degenerate.json");
        std::fs::write(&path, v.to_string()).unwrap();
        assert_eq!(
            run([
                "sensor-sched",
                "solve",
                "--scenario",
                path.to_str().unwrap(),
                "--horizon",
                "2"
            ]),
            4
        );
    }
}
