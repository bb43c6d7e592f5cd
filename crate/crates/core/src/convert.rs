//! Rounding a relaxed schedule to a feasible binary schedule. The value of
//! the result is an upper bound on the binary optimum.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Problem, RelaxedSchedule, Schedule};
use crate::objective::ObjectiveSpec;
use crate::relax::FeasibleSet;
use crate::scalar::{to_f64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionMethod {
    Sampling,
    Swapping,
}

impl fmt::Display for ConversionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConversionMethod::Sampling => "sampling",
            ConversionMethod::Swapping => "swapping",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConversionResult<T: Scalar> {
    pub schedule: Schedule,
    /// `J(schedule)`
    pub j_upper: T,
    pub trials_used: usize,
    pub method: ConversionMethod,
    /// Objective of every accepted improvement, in order.
    pub improvements: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SamplingOptions {
    /// Total draws; `50·N` if unset.
    pub max_trials: Option<usize>,
    /// Draws without improvement before stopping; `10·N` if unset.
    pub stagnation_limit: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SwappingOptions {
    /// Attempted swaps; `S·N` if unset.
    pub max_trials: Option<usize>,
}

/// Cheapest sensor at every step, lowest index on ties.
pub fn min_cost_schedule<T: Scalar>(fs: &FeasibleSet<T>) -> Result<Schedule> {
    let picks: Vec<usize> = fs
        .costs()
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &c) in row.iter().enumerate() {
                if c < row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let schedule = Schedule::new(picks, fs.width())?;
    if !fs.admits(&schedule) {
        return Err(Error::Infeasible(format!(
            "cheapest schedule costs {}, budget is {}",
            fs.schedule_cost(&schedule),
            fs.budget()
        )));
    }
    Ok(schedule)
}

fn check_inputs<T: Scalar>(relaxed: &RelaxedSchedule<T>, fs: &FeasibleSet<T>, problem: &Problem<'_, T>) -> Result<()> {
    let u = relaxed.as_matrix();
    if u.shape() != fs.costs().shape() || fs.width() != problem.num_sensors() {
        return Err(Error::Config(format!(
            "relaxed schedule is {:?}, cost matrix is {:?}",
            u.shape(),
            fs.costs().shape()
        )));
    }
    problem.check_horizon(fs.steps())
}

fn draw_row<T: Scalar>(u: &DMatrix<T>, row: usize, rng: &mut ChaCha8Rng) -> usize {
    let weights: Vec<f64> = u.row(row).iter().map(|&w| to_f64(w).max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            if target < w {
                return i;
            }
            target -= w;
        }
    }
    last_positive
}

/// Draws one sensor per step from the relaxed rows, discards draws that
/// break the budget and keeps the best feasible draw. Falls back to the
/// cheapest schedule if no draw is feasible.
pub fn convert_sampling<T: Scalar>(
    relaxed: &RelaxedSchedule<T>,
    fs: &FeasibleSet<T>,
    problem: &Problem<'_, T>,
    spec: ObjectiveSpec,
    opts: SamplingOptions,
) -> Result<ConversionResult<T>> {
    check_inputs(relaxed, fs, problem)?;
    let n = fs.steps();
    let max_trials = opts.max_trials.unwrap_or(50 * n);
    let stagnation_limit = opts.stagnation_limit.unwrap_or(10 * n);
    let u = relaxed.as_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut best: Option<(Schedule, T)> = None;
    let mut improvements = Vec::new();
    let mut trials = 0;
    let mut stagnant = 0;
    while trials < max_trials && stagnant < stagnation_limit {
        trials += 1;
        let picks = (0..n).map(|r| draw_row(u, r, &mut rng)).collect();
        let candidate = Schedule::new(picks, fs.width())?;
        if !fs.admits(&candidate) {
            stagnant += 1;
            continue;
        }
        let j = problem.objective(&candidate, spec)?.total;
        if best.as_ref().is_none_or(|(_, b)| j < *b) {
            improvements.push(j);
            best = Some((candidate, j));
            stagnant = 0;
        } else {
            stagnant += 1;
        }
    }

    let (schedule, j_upper) = match best {
        Some(b) => b,
        None => {
            let fallback = min_cost_schedule(fs)?;
            let j = problem.objective(&fallback, spec)?.total;
            (fallback, j)
        }
    };
    Ok(ConversionResult {
        schedule,
        j_upper,
        trials_used: trials,
        method: ConversionMethod::Sampling,
        improvements,
    })
}

/// Starts from the cheapest schedule and visits the steps cyclically; at
/// each step the unselected sensors are tried in descending order of their
/// relaxed weight, and the first budget-feasible swap that strictly lowers
/// `J` is committed before moving on to the next step. Stops after
/// `max_trials` attempted swaps or a full pass without a commit.
pub fn convert_swapping<T: Scalar>(
    relaxed: &RelaxedSchedule<T>,
    fs: &FeasibleSet<T>,
    problem: &Problem<'_, T>,
    spec: ObjectiveSpec,
    opts: SwappingOptions,
) -> Result<ConversionResult<T>> {
    check_inputs(relaxed, fs, problem)?;
    let n = fs.steps();
    let width = fs.width();
    let max_trials = opts.max_trials.unwrap_or(width * n);
    let u = relaxed.as_matrix();

    let mut current = min_cost_schedule(fs)?;
    let mut j_current = problem.objective(&current, spec)?.total;
    let mut improvements = vec![j_current];
    let mut trials = 0;

    'passes: loop {
        let mut committed = false;
        for row in 0..n {
            let incumbent = current.picks()[row];
            let mut order: Vec<usize> = (0..width).filter(|&i| i != incumbent).collect();
            // stable sort keeps lower indices first on equal weights
            order.sort_by(|&a, &b| {
                u[(row, b)]
                    .partial_cmp(&u[(row, a)])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            for cand in order {
                if trials >= max_trials {
                    break 'passes;
                }
                trials += 1;
                let mut picks = current.picks().to_vec();
                picks[row] = cand;
                let modified = Schedule::new(picks, width)?;
                if !fs.admits(&modified) {
                    continue;
                }
                let j = problem.objective(&modified, spec)?.total;
                if j < j_current {
                    current = modified;
                    j_current = j;
                    improvements.push(j);
                    committed = true;
                    break;
                }
            }
        }
        if !committed {
            break;
        }
    }

    Ok(ConversionResult {
        schedule: current,
        j_upper: j_current,
        trials_used: trials,
        method: ConversionMethod::Swapping,
        improvements,
    })
}
