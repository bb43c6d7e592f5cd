//! Multi-step sensor scheduling for discrete-time linear Gaussian systems.
//!
//! A schedule picks exactly one sensor (possibly a zero-information "null"
//! sensor) per time step of a finite horizon so that the cumulative
//! uncertainty of the Kalman filter covariance is minimal while the summed
//! sensor costs stay within a budget.
//!
//! The crate provides:
//! - [`model`]: system and sensor models, the scheduled covariance recursion
//!   in information form, a Kalman filter and a trajectory simulator.
//! - [`objective`]: the per-step uncertainty measures, the cumulative
//!   objective and its exact reverse-mode gradient.
//! - [`relax`]: the convex relaxation over row-stochastic schedules, solved
//!   by projected gradient descent with a certified lower bound.
//! - [`convert`]: rounding of a relaxed schedule to a feasible binary one.
//! - [`search`]: branch-and-bound with convex bounds, exhaustive
//!   enumeration and greedy baselines.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`.

pub mod convert;
pub mod error;
pub mod instances;
pub mod model;
pub mod objective;
pub mod relax;
pub mod scalar;
pub mod search;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use convert::{convert_sampling, convert_swapping, min_cost_schedule, ConversionMethod};
pub use model::{propagate_covariance, Problem, Schedule, Selection};
pub use objective::{eval_g, eval_j, grad_j, ObjectiveKind, ObjectiveSpec};
pub use relax::{project_feasible, project_row_simplex, solve_relaxed};
pub use search::{bb_search, convex, exhaustive, greedy, min_possible_cost, run_method, BbVariant, Method};

pub type LinearGaussianSystem = model::LinearGaussianSystem<f64>;
pub type Sensor = model::Sensor<f64>;
pub type SensorSet = model::SensorSet<f64>;
pub type RelaxedSchedule = model::RelaxedSchedule<f64>;
pub type CovarianceTrajectory = model::CovarianceTrajectory<f64>;
pub type ObjectiveValue = objective::ObjectiveValue<f64>;
pub type FeasibleSet = relax::FeasibleSet<f64>;
pub type RelaxOptions = relax::RelaxOptions<f64>;
pub type RelaxedSolution = relax::RelaxedSolution<f64>;
pub type ConversionResult = convert::ConversionResult<f64>;
pub type SearchResult = search::SearchResult<f64>;
pub type SearchOptions = search::SearchOptions<f64>;
