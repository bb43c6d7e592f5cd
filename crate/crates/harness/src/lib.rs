//! Scenario files, method comparison, Monte Carlo tracking evaluation and
//! CSV output for the `sensor-sched` scheduler.

pub mod cli;
pub mod compare;
pub mod error;
pub mod monte_carlo;
pub mod output;
pub mod scenario;

pub use compare::{run_compare, run_compare_with, ComparisonReport, MethodReport};
pub use error::{HarnessError, Result};
pub use monte_carlo::{evaluate_schedules, run_monte_carlo, MonteCarloOptions, RmseReport};
pub use output::{emit_csv, Report};
pub use scenario::{load_scenario, parse_scenario, BudgetRule, Rounding, ScenarioConfig};
