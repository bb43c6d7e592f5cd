//! Tracking-error evaluation of fixed schedules with common random numbers.
//!
//! Every run draws one ground truth (initial state, process noise and the
//! noise of every sensor at every step) from its own seed; all methods
//! filter that same ground truth with their own schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sensor_sched::model::{kalman_predict, kalman_update, simulate_ground_truth, GroundTruth, SimulationOptions};
use sensor_sched::{Method, Schedule};

use crate::compare::run_compare;
use crate::error::Result;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarloOptions {
    pub runs: usize,
    pub process_noise: bool,
    pub measurement_noise: bool,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            runs: 100,
            process_noise: true,
            measurement_noise: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodRmse {
    pub method: Method,
    pub schedule: Schedule,
    /// Position RMSE at steps `1..=N`.
    pub rmse: Vec<f64>,
}

impl MethodRmse {
    pub fn mean(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / self.rmse.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct RmseReport {
    pub runs: usize,
    pub seed: u64,
    pub horizon: usize,
    pub methods: Vec<MethodRmse>,
}

impl RmseReport {
    pub fn get(&self, method: Method) -> Option<&MethodRmse> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Seeds of the individual runs, drawn in order from the master seed.
pub fn run_seeds(master: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..runs).map(|_| rng.random()).collect()
}

/// Squared position error of a Kalman filter driven by `schedule` on one
/// ground truth, for each step `1..=N`.
pub fn squared_position_errors(
    config: &ScenarioConfig,
    truth: &GroundTruth<f64>,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    let sys = &config.system;
    let mut mean = sys.initial_mean().clone();
    let mut cov = sys.initial_cov().clone();
    let mut out = Vec::with_capacity(schedule.len());
    for (row, &sensor) in schedule.picks().iter().enumerate() {
        let k = row + 1;
        let (m, c) = kalman_predict(sys, k, &mean, &cov);
        (mean, cov) = match &truth.measurements[row][sensor] {
            Some(z) => kalman_update(&config.sensors, sensor, k, &m, &c, z)?,
            None => (m, c),
        };
        let err: f64 = config
            .position_indices
            .iter()
            .map(|&i| (mean[i] - truth.states[k][i]).powi(2))
            .sum();
        out.push(err);
    }
    Ok(out)
}

/// Computes each method's schedule once, then filters `runs` shared ground
/// truths with every schedule.
pub fn run_monte_carlo(config: &ScenarioConfig, methods: &[Method], opts: MonteCarloOptions) -> Result<RmseReport> {
    let report = run_compare(config, methods)?;
    let schedules: Vec<(Method, Schedule)> = report.rows.into_iter().map(|r| (r.method, r.schedule)).collect();
    evaluate_schedules(config, &schedules, opts)
}

pub fn evaluate_schedules(
    config: &ScenarioConfig,
    schedules: &[(Method, Schedule)],
    opts: MonteCarloOptions,
) -> Result<RmseReport> {
    let n = config.horizon;
    let mut sums = vec![vec![0.0; n]; schedules.len()];
    for seed in run_seeds(config.seed, opts.runs) {
        let truth = simulate_ground_truth(
            &config.system,
            &config.sensors,
            n,
            SimulationOptions {
                seed,
                process_noise: opts.process_noise,
                measurement_noise: opts.measurement_noise,
            },
        )?;
        for ((_, schedule), acc) in schedules.iter().zip(&mut sums) {
            for (a, e) in acc.iter_mut().zip(squared_position_errors(config, &truth, schedule)?) {
                *a += e;
            }
        }
    }
    let runs = opts.runs.max(1) as f64;
    let methods = schedules
        .iter()
        .zip(sums)
        .map(|((method, schedule), acc)| MethodRmse {
            method: *method,
            schedule: schedule.clone(),
            rmse: acc.into_iter().map(|s| (s / runs).sqrt()).collect(),
        })
        .collect();
    Ok(RmseReport {
        runs: opts.runs,
        seed: config.seed,
        horizon: n,
        methods,
    })
}
