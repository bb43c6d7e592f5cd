//! Scenario files: JSON documents describing a system, its sensors, the
//! objective, the horizon and the budget rule.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "state_dim": 2,
//!   "dynamics": { "A": [[1, 1], [0, 1]], "Qw": [[0.1, 0], [0, 0.1]] },
//!   "initial": { "mean": [0, 1], "C0": [[10, 0], [0, 10]] },
//!   "sensors": [
//!     { "name": "pos", "H": [[1, 0]], "R": [[0.1]], "cost": 1 },
//!     { "name": "idle", "R": "null", "cost": 0 }
//!   ],
//!   "objective": "root-det",
//!   "horizon": 5,
//!   "budget": { "linear": { "rate": 1.5, "rounding": "half-away-from-zero" } },
//!   "seed": 7
//! }
//! ```
//!
//! `A`, `Qw`, `H` and `R` are row-major matrices or per-step lists of
//! them; `cost` is a number or a per-step list.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use sensor_sched::model::StepSeq;
use sensor_sched::{FeasibleSet, LinearGaussianSystem, ObjectiveKind, Sensor, SensorSet};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: u32,
    #[serde(default)]
    name: Option<String>,
    state_dim: usize,
    dynamics: RawDynamics,
    initial: RawInitial,
    sensors: Vec<RawSensor>,
    objective: String,
    horizon: usize,
    budget: RawBudget,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    position_indices: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    #[serde(rename = "A")]
    a: RawMatrices,
    #[serde(rename = "Qw")]
    qw: RawMatrices,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    mean: Vec<f64>,
    #[serde(rename = "C0")]
    c0: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMatrices {
    Single(Vec<Vec<f64>>),
    PerStep(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawNoise {
    Null(NullTag),
    Matrices(RawMatrices),
}

#[derive(Debug, Deserialize)]
enum NullTag {
    #[serde(rename = "null")]
    Null,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCost {
    Constant(f64),
    PerStep(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    #[serde(default)]
    name: Option<String>,
    #[serde(rename = "H", default)]
    h: Option<RawMatrices>,
    #[serde(rename = "R")]
    r: RawNoise,
    cost: RawCost,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawBudget {
    Value(f64),
    Linear(RawLinear),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinear {
    rate: f64,
    #[serde(default)]
    rounding: Rounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    None,
    HalfAwayFromZero,
}

/// Budget as a function of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetRule {
    Fixed(f64),
    /// `rate · N`, optionally rounded half away from zero.
    Linear {
        rate: f64,
        rounding: Rounding,
    },
}

impl BudgetRule {
    pub fn evaluate(&self, horizon: usize) -> f64 {
        match *self {
            BudgetRule::Fixed(c) => c,
            BudgetRule::Linear { rate, rounding } => {
                let c = rate * horizon as f64;
                match rounding {
                    Rounding::None => c,
                    // f64::round rounds halves away from zero
                    Rounding::HalfAwayFromZero => c.round(),
                }
            }
        }
    }
}

impl fmt::Display for BudgetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetRule::Fixed(c) => write!(f, "{c}"),
            BudgetRule::Linear {
                rate,
                rounding: Rounding::None,
            } => write!(f, "linear:{rate}"),
            BudgetRule::Linear { rate, .. } => write!(f, "linear:{rate}:round"),
        }
    }
}

/// Parses `VALUE`, `linear:RATE` or `linear:RATE:round`.
impl FromStr for BudgetRule {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HarnessError::config(format!("invalid budget '{s}', expected VALUE or linear:RATE[:round]"));
        let number = |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0);
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => number(v).map(BudgetRule::Fixed).ok_or_else(bad),
            ["linear", rate] => number(rate)
                .map(|rate| BudgetRule::Linear {
                    rate,
                    rounding: Rounding::None,
                })
                .ok_or_else(bad),
            ["linear", rate, "round"] => number(rate)
                .map(|rate| BudgetRule::Linear {
                    rate,
                    rounding: Rounding::HalfAwayFromZero,
                })
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: LinearGaussianSystem,
    pub sensors: SensorSet,
    pub sensor_names: Vec<String>,
    pub objective: ObjectiveKind,
    pub horizon: usize,
    pub budget: BudgetRule,
    pub seed: u64,
    /// State components treated as position when computing tracking errors.
    pub position_indices: Vec<usize>,
    /// SHA-256 of the canonical JSON form of the scenario document.
    pub fingerprint: String,
}

impl ScenarioConfig {
    pub fn budget_value(&self) -> f64 {
        self.budget.evaluate(self.horizon)
    }

    pub fn feasible_set(&self) -> Result<FeasibleSet> {
        self.feasible_set_for(self.horizon)
    }

    pub fn feasible_set_for(&self, horizon: usize) -> Result<FeasibleSet> {
        if horizon == 0 {
            return Err(HarnessError::config("horizon must be at least 1"));
        }
        if !self.system.covers(horizon) || !self.sensors.covers(horizon) {
            return Err(HarnessError::config(format!(
                "per-step model inputs do not cover a horizon of {horizon}"
            )));
        }
        let costs = self.sensors.cost_matrix(1, horizon);
        Ok(FeasibleSet::new(costs, self.budget.evaluate(horizon))?)
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| HarnessError::at("/", format!("invalid JSON: {e}")))?;
    let canonical = serde_json::to_vec(&value).expect("JSON values serialize");
    let fingerprint = hex::encode(Sha256::digest(&canonical));
    let raw: RawScenario = serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = pointer_of(e.path());
        HarnessError::at(pointer, e.into_inner().to_string())
    })?;
    build(raw, fingerprint)
}

fn matrix(rows: &[Vec<f64>], pointer: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(HarnessError::at(pointer, "matrix must be non-empty"));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != ncols) {
        return Err(HarnessError::at(
            format!("{pointer}/{r}"),
            format!("row length differs from {ncols}"),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HarnessError::at(pointer, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn shaped(m: DMatrix<f64>, rows: usize, cols: usize, pointer: &str) -> Result<DMatrix<f64>> {
    if m.shape() != (rows, cols) {
        return Err(HarnessError::at(
            pointer,
            format!("expected a {rows}×{cols} matrix, found {}×{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m)
}

fn matrices(raw: &RawMatrices, rows: Option<usize>, cols: usize, pointer: &str) -> Result<StepSeq<DMatrix<f64>>> {
    let check = |m: DMatrix<f64>, p: &str| {
        let r = rows.unwrap_or(m.nrows());
        shaped(m, r, cols, p)
    };
    match raw {
        RawMatrices::Single(m) => Ok(StepSeq::constant(check(matrix(m, pointer)?, pointer)?)),
        RawMatrices::PerStep(list) => {
            let items = list
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let p = format!("{pointer}/{k}");
                    check(matrix(m, &p)?, &p)
                })
                .collect::<Result<Vec<_>>>()?;
            StepSeq::per_step(items).map_err(|e| HarnessError::at(pointer, e.to_string()))
        }
    }
}

fn core_at(pointer: &str) -> impl Fn(sensor_sched::Error) -> HarnessError + '_ {
    move |e| match e {
        sensor_sched::Error::Config(msg) => HarnessError::at(pointer, msg),
        other => HarnessError::Core(other),
    }
}

fn build(raw: RawScenario, fingerprint: String) -> Result<ScenarioConfig> {
    if raw.schema != SCHEMA_VERSION {
        return Err(HarnessError::at(
            "/schema",
            format!("unsupported schema {}, expected {SCHEMA_VERSION}", raw.schema),
        ));
    }
    let n = raw.state_dim;
    if n == 0 {
        return Err(HarnessError::at("/state_dim", "state dimension must be positive"));
    }
    let a = matrices(&raw.dynamics.a, Some(n), n, "/dynamics/A")?;
    let qw = matrices(&raw.dynamics.qw, Some(n), n, "/dynamics/Qw")?;
    if raw.initial.mean.len() != n {
        return Err(HarnessError::at(
            "/initial/mean",
            format!("expected {n} entries, found {}", raw.initial.mean.len()),
        ));
    }
    let mean = DVector::from_vec(raw.initial.mean);
    let c0 = shaped(matrix(&raw.initial.c0, "/initial/C0")?, n, n, "/initial/C0")?;
    // validate the pieces separately so errors point at the offending field
    LinearGaussianSystem::new(
        StepSeq::constant(DMatrix::identity(n, n)),
        qw.clone(),
        mean.clone(),
        DMatrix::identity(n, n),
    )
    .map_err(core_at("/dynamics/Qw"))?;
    LinearGaussianSystem::time_invariant(DMatrix::identity(n, n), DMatrix::zeros(n, n), mean.clone(), c0.clone())
        .map_err(core_at("/initial/C0"))?;
    let system = LinearGaussianSystem::new(a, qw, mean, c0).map_err(core_at("/dynamics"))?;

    if raw.sensors.is_empty() {
        return Err(HarnessError::at("/sensors", "at least one sensor is required"));
    }
    let mut sensors = Vec::with_capacity(raw.sensors.len());
    let mut names = Vec::with_capacity(raw.sensors.len());
    for (i, s) in raw.sensors.into_iter().enumerate() {
        let p = format!("/sensors/{i}");
        let cost = match s.cost {
            RawCost::Constant(c) => StepSeq::constant(c),
            RawCost::PerStep(list) => StepSeq::per_step(list).map_err(core_at(&format!("{p}/cost")))?,
        };
        let sensor = match (s.h, s.r) {
            (None, RawNoise::Null(_)) => Sensor::null(n, cost).map_err(core_at(&format!("{p}/cost")))?,
            (Some(_), RawNoise::Null(_)) => {
                return Err(HarnessError::at(
                    format!("{p}/H"),
                    "a null sensor has no measurement matrix",
                ));
            }
            (None, RawNoise::Matrices(_)) => {
                return Err(HarnessError::at(format!("{p}/H"), "missing measurement matrix"));
            }
            (Some(h), RawNoise::Matrices(r)) => {
                let h = matrices(&h, None, n, &format!("{p}/H"))?;
                let m = h.at(0).nrows();
                if h.iter().any(|hk| hk.nrows() != m) {
                    return Err(HarnessError::at(
                        format!("{p}/H"),
                        "measurement dimension varies over steps",
                    ));
                }
                let r = matrices(&r, Some(m), m, &format!("{p}/R"))?;
                Sensor::linear(h, r, cost).map_err(core_at(&p))?
            }
        };
        names.push(s.name.unwrap_or_else(|| format!("sensor{}", i + 1)));
        sensors.push(sensor);
    }
    let sensors = SensorSet::new(n, sensors).map_err(core_at("/sensors"))?;

    let objective = raw
        .objective
        .parse::<ObjectiveKind>()
        .map_err(|e| HarnessError::at("/objective", e.to_string()))?;
    if raw.horizon == 0 {
        return Err(HarnessError::at("/horizon", "horizon must be at least 1"));
    }
    let budget = match raw.budget {
        RawBudget::Value(c) if c.is_finite() && c >= 0.0 => BudgetRule::Fixed(c),
        RawBudget::Linear(l) if l.rate.is_finite() && l.rate >= 0.0 => BudgetRule::Linear {
            rate: l.rate,
            rounding: l.rounding,
        },
        _ => return Err(HarnessError::at("/budget", "budget must be finite and nonnegative")),
    };
    let position_indices = match raw.position_indices {
        Some(idx) => {
            if let Some(bad) = idx.iter().position(|&i| i >= n) {
                return Err(HarnessError::at(
                    format!("/position_indices/{bad}"),
                    format!("index out of range for state dimension {n}"),
                ));
            }
            idx
        }
        None => (0..n).collect(),
    };
    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        system,
        sensors,
        sensor_names: names,
        objective,
        horizon: raw.horizon,
        budget,
        seed: raw.seed,
        position_indices,
        fingerprint,
    })
}
