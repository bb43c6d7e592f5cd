use std::time::Duration;

use sensor_sched::search::SearchStats;
use sensor_sched::{eval_j, run_method, Method, ObjectiveSpec, Schedule, SearchOptions};

use crate::error::Result;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone)]
pub struct MethodReport {
    pub method: Method,
    pub j_total: f64,
    pub per_step: Vec<f64>,
    pub schedule: Schedule,
    pub stats: SearchStats,
    pub wall_time: Duration,
    /// Relaxed optimum, where the method computes one.
    pub lower_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub fingerprint: String,
    pub horizon: usize,
    pub budget: f64,
    pub rows: Vec<MethodReport>,
}

impl ComparisonReport {
    pub fn get(&self, method: Method) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Runs each method on the scenario's horizon and budget. Objective values
/// are recomputed from the returned schedules.
pub fn run_compare(config: &ScenarioConfig, methods: &[Method]) -> Result<ComparisonReport> {
    run_compare_with(config, methods, &SearchOptions::default())
}

pub fn run_compare_with(config: &ScenarioConfig, methods: &[Method], opts: &SearchOptions) -> Result<ComparisonReport> {
    let fs = config.feasible_set()?;
    let spec = ObjectiveSpec::new(config.objective);
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let result = run_method(method, &config.system, &config.sensors, &fs, spec, opts)?;
        let value = eval_j(&config.system, &config.sensors, &result.schedule, spec)?;
        rows.push(MethodReport {
            method,
            j_total: value.total,
            per_step: value.per_step,
            schedule: result.schedule,
            wall_time: result.stats.wall_time,
            stats: result.stats,
            lower_bound: result.lower_bound,
        });
    }
    Ok(ComparisonReport {
        fingerprint: config.fingerprint.clone(),
        horizon: config.horizon,
        budget: fs.budget(),
        rows,
    })
}
