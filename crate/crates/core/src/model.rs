//! System and sensor models, the scheduled covariance recursion and a
//! linear Kalman filter.
//!
//! Time indexing follows the usual convention: `A_k` and `Qw_k` map the
//! state at step `k` to step `k + 1`, measurements happen at steps
//! `k = 1..=N`, and the initial covariance belongs to step 0. Matrices that
//! do not vary over time are stored once in a [`StepSeq`] and broadcast.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e14;

/// A per-step sequence. A single entry is broadcast to every step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSeq<M> {
    items: Vec<M>,
}

impl<M> StepSeq<M> {
    pub fn constant(item: M) -> Self {
        Self { items: vec![item] }
    }

    pub fn per_step(items: Vec<M>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("per-step sequence must not be empty".into()));
        }
        Ok(Self { items })
    }

    /// Entry at 0-based index `idx`; broadcast sequences ignore the index.
    ///
    /// Panics if a per-step sequence is shorter than `idx + 1`; callers check
    /// [`StepSeq::covers`] first.
    pub fn at(&self, idx: usize) -> &M {
        if self.items.len() == 1 {
            &self.items[0]
        } else {
            &self.items[idx]
        }
    }

    pub fn covers(&self, len: usize) -> bool {
        self.items.len() == 1 || self.items.len() >= len
    }

    pub fn is_constant(&self) -> bool {
        self.items.len() == 1
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &M> {
        self.items.iter()
    }
}

pub(crate) fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

pub(crate) fn is_symmetric<T: Scalar>(m: &DMatrix<T>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(T::one());
    let tol = lit::<T>(tol) * scale;
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub(crate) fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b))
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor. Fails if the factorization breaks down or the factor's diagonal
/// indicates a condition number above 1e14.
pub(crate) fn spd_inverse<T: Scalar>(m: &DMatrix<T>, step: usize, what: &str) -> Result<DMatrix<T>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::numerical(step, format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (T::max_value().unwrap(), T::zero());
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo <= T::zero() || (hi / lo) * (hi / lo) > lit(MAX_CONDITION) {
        return Err(Error::numerical(step, format!("{what} is numerically singular")));
    }
    Ok(symmetrize(&chol.inverse()))
}

fn check_square<T: Scalar>(m: &DMatrix<T>, dim: usize, what: &str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::Config(format!(
            "{what} must be {dim}x{dim}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_psd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    if min_eigenvalue(m) < lit(-PSD_TOL) {
        return Err(Error::Config(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

fn check_pd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    if symmetrize(m).cholesky().is_none() {
        return Err(Error::Config(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Linear dynamics `x_{k+1} = A_k x_k + w_k` with Gaussian process noise and
/// a Gaussian initial state.
#[derive(Debug, Clone)]
pub struct LinearGaussianSystem<T: Scalar> {
    state_dim: usize,
    dynamics: StepSeq<DMatrix<T>>,
    process_noise: StepSeq<DMatrix<T>>,
    initial_mean: DVector<T>,
    initial_cov: DMatrix<T>,
}

impl<T: Scalar> LinearGaussianSystem<T> {
    pub fn new(
        dynamics: StepSeq<DMatrix<T>>,
        process_noise: StepSeq<DMatrix<T>>,
        initial_mean: DVector<T>,
        initial_cov: DMatrix<T>,
    ) -> Result<Self> {
        let state_dim = initial_mean.len();
        if state_dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        for (k, a) in dynamics.iter().enumerate() {
            check_square(a, state_dim, &format!("A[{k}]"))?;
        }
        for (k, q) in process_noise.iter().enumerate() {
            check_square(q, state_dim, &format!("Qw[{k}]"))?;
            check_psd(q, &format!("Qw[{k}]"))?;
        }
        check_square(&initial_cov, state_dim, "C0")?;
        check_pd(&initial_cov, "C0")?;
        Ok(Self {
            state_dim,
            dynamics,
            process_noise,
            initial_mean,
            initial_cov: symmetrize(&initial_cov),
        })
    }

    pub fn time_invariant(
        a: DMatrix<T>,
        qw: DMatrix<T>,
        initial_mean: DVector<T>,
        initial_cov: DMatrix<T>,
    ) -> Result<Self> {
        Self::new(StepSeq::constant(a), StepSeq::constant(qw), initial_mean, initial_cov)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `A_k`, mapping step `k` to `k + 1`.
    pub fn dynamics(&self, k: usize) -> &DMatrix<T> {
        self.dynamics.at(k)
    }

    /// `Qw_k`, the covariance of `w_k`.
    pub fn process_noise(&self, k: usize) -> &DMatrix<T> {
        self.process_noise.at(k)
    }

    pub fn initial_mean(&self) -> &DVector<T> {
        &self.initial_mean
    }

    pub fn initial_cov(&self) -> &DMatrix<T> {
        &self.initial_cov
    }

    /// True if every per-step input is defined for steps `1..=n`.
    pub fn covers(&self, n: usize) -> bool {
        self.dynamics.covers(n) && self.process_noise.covers(n)
    }
}

#[derive(Debug, Clone)]
struct MeasurementModel<T: Scalar> {
    h: StepSeq<DMatrix<T>>,
    r: StepSeq<DMatrix<T>>,
}

/// One sensor: measurement matrix `H_k`, noise covariance `R_k`, cost `c_k`
/// and the cached information matrix `M_k = H_kᵀ R_k⁻¹ H_k`.
///
/// A null sensor performs no measurement; its information matrix is zero.
#[derive(Debug, Clone)]
pub struct Sensor<T: Scalar> {
    model: Option<MeasurementModel<T>>,
    cost: StepSeq<T>,
    info: StepSeq<DMatrix<T>>,
}

impl<T: Scalar> Sensor<T> {
    pub fn linear(h: StepSeq<DMatrix<T>>, r: StepSeq<DMatrix<T>>, cost: StepSeq<T>) -> Result<Self> {
        check_costs(&cost)?;
        let len = match (h.is_constant(), r.is_constant()) {
            (true, true) => 1,
            (false, true) => h.len(),
            (true, false) => r.len(),
            (false, false) if h.len() == r.len() => h.len(),
            _ => {
                return Err(Error::Config(format!(
                    "H and R have different step counts ({} vs {})",
                    h.len(),
                    r.len()
                )))
            }
        };
        let mut info = Vec::with_capacity(len);
        for k in 0..len {
            let (hk, rk) = (h.at(k), r.at(k));
            let m = hk.nrows();
            check_square(rk, m, &format!("R[{k}]"))?;
            if !is_symmetric(rk, SYMMETRY_TOL) {
                return Err(Error::Config(format!("R[{k}] is not symmetric")));
            }
            let chol = symmetrize(rk)
                .cholesky()
                .ok_or_else(|| Error::Config(format!("R[{k}] is not positive definite")))?;
            let whitened = chol
                .l()
                .solve_lower_triangular(hk)
                .ok_or_else(|| Error::Config(format!("R[{k}] has a singular Cholesky factor")))?;
            info.push(symmetrize(&(whitened.transpose() * &whitened)));
        }
        Ok(Self {
            model: Some(MeasurementModel { h, r }),
            cost,
            info: StepSeq::per_step(info)?,
        })
    }

    pub fn time_invariant(h: DMatrix<T>, r: DMatrix<T>, cost: T) -> Result<Self> {
        Self::linear(StepSeq::constant(h), StepSeq::constant(r), StepSeq::constant(cost))
    }

    /// The "no measurement" option.
    pub fn null(state_dim: usize, cost: StepSeq<T>) -> Result<Self> {
        check_costs(&cost)?;
        Ok(Self {
            model: None,
            cost,
            info: StepSeq::constant(DMatrix::zeros(state_dim, state_dim)),
        })
    }

    pub fn is_null(&self) -> bool {
        self.model.is_none()
    }

    /// Cost `c_{k,i}` at 1-based step `k`.
    pub fn cost(&self, k: usize) -> T {
        *self.cost.at(k - 1)
    }

    /// Information matrix `M_k` at 1-based step `k`.
    pub fn info(&self, k: usize) -> &DMatrix<T> {
        self.info.at(k - 1)
    }

    pub fn measurement_matrix(&self, k: usize) -> Option<&DMatrix<T>> {
        self.model.as_ref().map(|m| m.h.at(k - 1))
    }

    pub fn noise_cov(&self, k: usize) -> Option<&DMatrix<T>> {
        self.model.as_ref().map(|m| m.r.at(k - 1))
    }

    pub fn measurement_dim(&self) -> usize {
        self.model.as_ref().map_or(0, |m| m.h.at(0).nrows())
    }

    fn covers(&self, n: usize) -> bool {
        self.cost.covers(n) && self.info.covers(n) && self.model.as_ref().is_none_or(|m| m.h.covers(n) && m.r.covers(n))
    }
}

fn check_costs<T: Scalar>(cost: &StepSeq<T>) -> Result<()> {
    if cost.iter().any(|c| *c < T::zero() || !c.is_finite()) {
        return Err(Error::Config("sensor costs must be finite and nonnegative".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SensorSet<T: Scalar> {
    state_dim: usize,
    sensors: Vec<Sensor<T>>,
    null_sensor: Option<usize>,
}

impl<T: Scalar> SensorSet<T> {
    pub fn new(state_dim: usize, sensors: Vec<Sensor<T>>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::Config("at least one sensor is required".into()));
        }
        for (i, s) in sensors.iter().enumerate() {
            for m in s.info.iter() {
                check_square(m, state_dim, &format!("information matrix of sensor {i}"))?;
            }
            if let Some(model) = &s.model {
                for h in model.h.iter() {
                    if h.ncols() != state_dim {
                        return Err(Error::Config(format!(
                            "H of sensor {i} has {} columns, expected {state_dim}",
                            h.ncols()
                        )));
                    }
                }
            }
        }
        let null_sensor = sensors.iter().position(Sensor::is_null);
        Ok(Self {
            state_dim,
            sensors,
            null_sensor,
        })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn sensor(&self, i: usize) -> &Sensor<T> {
        &self.sensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sensor<T>> {
        self.sensors.iter()
    }

    pub fn null_sensor(&self) -> Option<usize> {
        self.null_sensor
    }

    /// Cost matrix for 1-based steps `first..first + n`.
    pub fn cost_matrix(&self, first: usize, n: usize) -> DMatrix<T> {
        DMatrix::from_fn(n, self.len(), |r, i| self.sensors[i].cost(first + r))
    }

    pub fn covers(&self, n: usize) -> bool {
        self.sensors.iter().all(|s| s.covers(n))
    }
}

/// Row-indexed sensor weights: binary schedules, relaxed schedules, or any
/// matrix with entries in `[0, 1]`.
pub trait Selection<T: Scalar> {
    fn steps(&self) -> usize;
    fn width(&self) -> usize;
    fn weight(&self, row: usize, sensor: usize) -> T;
}

/// Binary schedule: one 0-based sensor index per step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    picks: Vec<usize>,
    num_sensors: usize,
}

impl Schedule {
    pub fn new(picks: Vec<usize>, num_sensors: usize) -> Result<Self> {
        if let Some(&bad) = picks.iter().find(|&&p| p >= num_sensors) {
            return Err(Error::Config(format!(
                "sensor index {bad} out of range for {num_sensors} sensors"
            )));
        }
        Ok(Self { picks, num_sensors })
    }

    /// Builds a schedule from a one-hot matrix.
    pub fn from_matrix<T: Scalar>(u: &DMatrix<T>) -> Result<Self> {
        let mut picks = Vec::with_capacity(u.nrows());
        for r in 0..u.nrows() {
            let row = u.row(r);
            if row.iter().any(|&v| v != T::zero() && v != T::one()) || row.sum() != T::one() {
                return Err(Error::Config(format!("row {r} is not one-hot")));
            }
            picks.push(row.iter().position(|&v| v == T::one()).unwrap());
        }
        Self::new(picks, u.ncols())
    }

    pub fn to_matrix<T: Scalar>(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.picks.len(), self.num_sensors, |r, i| {
            if self.picks[r] == i {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn picks(&self) -> &[usize] {
        &self.picks
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    /// Total cost under a row-per-step cost matrix.
    pub fn cost<T: Scalar>(&self, costs: &DMatrix<T>) -> T {
        self.picks
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (r, &i)| acc + costs[(r, i)])
    }
}

impl<T: Scalar> Selection<T> for Schedule {
    fn steps(&self) -> usize {
        self.picks.len()
    }
    fn width(&self) -> usize {
        self.num_sensors
    }
    fn weight(&self, row: usize, sensor: usize) -> T {
        if self.picks[row] == sensor {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// Relaxed schedule: every row lies on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSchedule<T: Scalar> {
    u: DMatrix<T>,
}

impl<T: Scalar> RelaxedSchedule<T> {
    /// Validates row sums (within 1e-9) and entry range (within 1e-12), then
    /// clamps entries into `[0, 1]`.
    pub fn new(mut u: DMatrix<T>) -> Result<Self> {
        let (lo, hi) = (lit::<T>(-1e-12), lit::<T>(1.0 + 1e-12));
        for r in 0..u.nrows() {
            let sum = u.row(r).sum();
            if (sum - T::one()).abs() > lit(1e-9) {
                return Err(Error::Config(format!("row {r} sums to {sum}, expected 1")));
            }
            if u.row(r).iter().any(|&v| !(v >= lo && v <= hi)) {
                return Err(Error::Config(format!("row {r} has entries outside [0, 1]")));
            }
        }
        u.apply(|v| *v = v.clamp(T::zero(), T::one()));
        Ok(Self { u })
    }

    pub fn uniform(steps: usize, width: usize) -> Self {
        Self {
            u: DMatrix::from_element(steps, width, T::one() / lit(width as f64)),
        }
    }

    pub fn from_schedule(s: &Schedule) -> Self {
        Self { u: s.to_matrix() }
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.u
    }
}

impl<T: Scalar> Selection<T> for RelaxedSchedule<T> {
    fn steps(&self) -> usize {
        self.u.nrows()
    }
    fn width(&self) -> usize {
        self.u.ncols()
    }
    fn weight(&self, row: usize, sensor: usize) -> T {
        self.u[(row, sensor)]
    }
}

impl<T: Scalar> Selection<T> for DMatrix<T> {
    fn steps(&self) -> usize {
        self.nrows()
    }
    fn width(&self) -> usize {
        self.ncols()
    }
    fn weight(&self, row: usize, sensor: usize) -> T {
        self[(row, sensor)]
    }
}

/// Result of one prediction plus information-form update.
#[derive(Debug, Clone)]
pub struct StepOutput<T: Scalar> {
    /// `C_k^p = A_{k-1} C_{k-1} A_{k-1}ᵀ + Qw_{k-1}`
    pub predicted: DMatrix<T>,
    /// `(C_k^p)⁻¹`
    pub predicted_info: DMatrix<T>,
    /// `(C_k^p)⁻¹ + Σ_i u_{k,i} M_k^i`
    pub posterior_info: DMatrix<T>,
    /// `C_k`
    pub posterior: DMatrix<T>,
}

/// Covariances `C_0..C_N` and predictions `C_1^p..C_N^p`.
#[derive(Debug, Clone)]
pub struct CovarianceTrajectory<T: Scalar> {
    pub cov: Vec<DMatrix<T>>,
    pub predicted: Vec<DMatrix<T>>,
}

/// A scheduling problem over a window of the horizon: the recursion starts
/// from `initial_cov` at absolute step `offset`, and row `j` of a selection
/// addresses absolute step `offset + j + 1`.
///
/// [`Problem::new`] covers the full horizon from `C_0`; [`Problem::tail`]
/// builds the sub-problem that remains once a prefix is fixed.
#[derive(Debug, Clone)]
pub struct Problem<'a, T: Scalar> {
    sys: &'a LinearGaussianSystem<T>,
    sensors: &'a SensorSet<T>,
    offset: usize,
    initial_cov: DMatrix<T>,
}

impl<'a, T: Scalar> Problem<'a, T> {
    pub fn new(sys: &'a LinearGaussianSystem<T>, sensors: &'a SensorSet<T>) -> Result<Self> {
        if sys.state_dim() != sensors.state_dim() {
            return Err(Error::Config(format!(
                "system has state dimension {}, sensors expect {}",
                sys.state_dim(),
                sensors.state_dim()
            )));
        }
        Ok(Self {
            sys,
            sensors,
            offset: 0,
            initial_cov: sys.initial_cov().clone(),
        })
    }

    /// Sub-problem after `steps_done` further steps with covariance `cov`.
    pub fn tail(&self, steps_done: usize, cov: DMatrix<T>) -> Self {
        Self {
            sys: self.sys,
            sensors: self.sensors,
            offset: self.offset + steps_done,
            initial_cov: cov,
        }
    }

    pub fn system(&self) -> &'a LinearGaussianSystem<T> {
        self.sys
    }

    pub fn sensors(&self) -> &'a SensorSet<T> {
        self.sensors
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn initial_cov(&self) -> &DMatrix<T> {
        &self.initial_cov
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Absolute 1-based step addressed by `row`.
    pub fn step_of(&self, row: usize) -> usize {
        self.offset + row + 1
    }

    /// Cost matrix for the next `n` steps.
    pub fn cost_matrix(&self, n: usize) -> DMatrix<T> {
        self.sensors.cost_matrix(self.offset + 1, n)
    }

    pub fn check_horizon(&self, n: usize) -> Result<()> {
        let last = self.offset + n;
        if !self.sys.covers(last) || !self.sensors.covers(last) {
            return Err(Error::Config(format!(
                "model inputs do not cover the horizon up to step {last}"
            )));
        }
        Ok(())
    }

    fn check_selection(&self, u: &impl Selection<T>) -> Result<()> {
        if u.width() != self.sensors.len() {
            return Err(Error::Config(format!(
                "selection has {} columns, expected {} sensors",
                u.width(),
                self.sensors.len()
            )));
        }
        self.check_horizon(u.steps())
    }

    /// Advances the recursion by one step from `prev` using sensor weights
    /// `weight(i)` for row `row`.
    pub fn step(&self, row: usize, prev: &DMatrix<T>, weight: impl Fn(usize) -> T) -> Result<StepOutput<T>> {
        let k = self.step_of(row);
        let a = self.sys.dynamics(k - 1);
        let predicted = symmetrize(&(a * prev * a.transpose() + self.sys.process_noise(k - 1)));
        let predicted_info = spd_inverse(&predicted, k, "predicted covariance")?;
        let mut posterior_info = predicted_info.clone();
        for (i, sensor) in self.sensors.iter().enumerate() {
            let w = weight(i);
            if w != T::zero() {
                posterior_info += sensor.info(k) * w;
            }
        }
        let posterior = spd_inverse(&posterior_info, k, "posterior information")?;
        Ok(StepOutput {
            predicted,
            predicted_info,
            posterior_info,
            posterior,
        })
    }

    /// Step with a single selected sensor.
    pub fn step_with(&self, row: usize, prev: &DMatrix<T>, sensor: usize) -> Result<StepOutput<T>> {
        self.step(row, prev, |i| if i == sensor { T::one() } else { T::zero() })
    }

    /// Runs the recursion over every row of `u`.
    pub fn forward(&self, u: &impl Selection<T>) -> Result<Vec<StepOutput<T>>> {
        self.check_selection(u)?;
        let mut out: Vec<StepOutput<T>> = Vec::with_capacity(u.steps());
        for row in 0..u.steps() {
            let prev = out.last().map_or(&self.initial_cov, |s| &s.posterior);
            let next = self.step(row, prev, |i| u.weight(row, i))?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn propagate(&self, u: &impl Selection<T>) -> Result<CovarianceTrajectory<T>> {
        let steps = self.forward(u)?;
        let mut cov = Vec::with_capacity(steps.len() + 1);
        cov.push(self.initial_cov.clone());
        let mut predicted = Vec::with_capacity(steps.len());
        for s in steps {
            cov.push(s.posterior);
            predicted.push(s.predicted);
        }
        Ok(CovarianceTrajectory { cov, predicted })
    }
}

/// Scheduled covariance recursion in information form,
/// `C_k = ((A C_{k-1} Aᵀ + Qw)⁻¹ + Σ_i u_{k,i} M_k^i)⁻¹`, from `C_0` over
/// `horizon` steps. Fractional and binary selections are handled alike.
pub fn propagate_covariance<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    u: &impl Selection<T>,
    horizon: usize,
) -> Result<CovarianceTrajectory<T>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if u.steps() != horizon {
        return Err(Error::Config(format!(
            "selection has {} rows, horizon is {horizon}",
            u.steps()
        )));
    }
    Problem::new(sys, sensors)?.propagate(u)
}

/// Kalman prediction from step `k - 1` to step `k`.
pub fn kalman_predict<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    k: usize,
    mean: &DVector<T>,
    cov: &DMatrix<T>,
) -> (DVector<T>, DMatrix<T>) {
    let a = sys.dynamics(k - 1);
    (
        a * mean,
        symmetrize(&(a * cov * a.transpose() + sys.process_noise(k - 1))),
    )
}

/// Measurement update with sensor `sensor` at 1-based step `k`.
///
/// The null sensor carries no measurement; the prior is returned unchanged.
pub fn kalman_update<T: Scalar>(
    sensors: &SensorSet<T>,
    sensor: usize,
    k: usize,
    prior_mean: &DVector<T>,
    prior_cov: &DMatrix<T>,
    z: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let s = sensors.sensor(sensor);
    let (Some(h), Some(r)) = (s.measurement_matrix(k), s.noise_cov(k)) else {
        return Ok((prior_mean.clone(), prior_cov.clone()));
    };
    if z.len() != h.nrows() || prior_mean.len() != h.ncols() {
        return Err(Error::Config(format!(
            "measurement of sensor {sensor} has dimension {}, expected {}",
            z.len(),
            h.nrows()
        )));
    }
    let innovation_cov = symmetrize(&(h * prior_cov * h.transpose() + r));
    let chol = innovation_cov
        .cholesky()
        .ok_or_else(|| Error::numerical(k, "innovation covariance is singular"))?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
    let gain = chol.solve(&(h * prior_cov)).transpose();
    let mean = prior_mean + &gain * (z - h * prior_mean);
    let n = prior_cov.nrows();
    let joseph = DMatrix::identity(n, n) - &gain * h;
    let cov = &joseph * prior_cov * joseph.transpose() + &gain * r * gain.transpose();
    Ok((mean, symmetrize(&cov)))
}

/// Which noise sources are injected when simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    pub seed: u64,
    pub process_noise: bool,
    pub measurement_noise: bool,
}

impl SimulationOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            process_noise: true,
            measurement_noise: true,
        }
    }
}

/// True states `x_0..x_N` and, for every step `1..=N`, the measurement every
/// sensor would have produced (`None` for the null sensor).
#[derive(Debug, Clone)]
pub struct GroundTruth<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub measurements: Vec<Vec<Option<DVector<T>>>>,
}

/// True states and the measurements of the scheduled sensors only.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub measurements: Vec<Option<DVector<T>>>,
}

/// `F` with `F Fᵀ = cov` for symmetric PSD `cov` (eigen square root, so
/// singular covariances are fine).
fn gaussian_factor<T: Scalar>(cov: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetrize(cov));
    let sqrt = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

fn standard_normal<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> DVector<T> {
    DVector::from_fn(dim, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        lit(x)
    })
}

/// Samples a ground-truth run of `n` steps. Every sensor's noise is drawn at
/// every step in sensor order, so two runs with the same seed share all
/// random numbers regardless of which sensors a schedule later reads.
pub fn simulate_ground_truth<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    n: usize,
    opts: SimulationOptions,
) -> Result<GroundTruth<T>> {
    if sys.state_dim() != sensors.state_dim() {
        return Err(Error::Config("system and sensor dimensions differ".into()));
    }
    if !sys.covers(n) || !sensors.covers(n) {
        return Err(Error::Config(format!("model inputs do not cover {n} steps")));
    }
    let dim = sys.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x0 = sys.initial_mean() + gaussian_factor(sys.initial_cov()) * standard_normal(&mut rng, dim);
    let mut states = vec![x0];
    let mut measurements = Vec::with_capacity(n);
    for k in 1..=n {
        let w = gaussian_factor(sys.process_noise(k - 1)) * standard_normal(&mut rng, dim);
        let mut x = sys.dynamics(k - 1) * &states[k - 1];
        if opts.process_noise {
            x += w;
        }
        let mut row = Vec::with_capacity(sensors.len());
        for s in sensors.iter() {
            let z = match (s.measurement_matrix(k), s.noise_cov(k)) {
                (Some(h), Some(r)) => {
                    let v = gaussian_factor(r) * standard_normal(&mut rng, h.nrows());
                    let mut z = h * &x;
                    if opts.measurement_noise {
                        z += v;
                    }
                    Some(z)
                }
                _ => None,
            };
            row.push(z);
        }
        states.push(x);
        measurements.push(row);
    }
    Ok(GroundTruth { states, measurements })
}

impl<T: Scalar> GroundTruth<T> {
    /// Restricts the measurements to those a schedule reads.
    pub fn observe(&self, schedule: &Schedule) -> Trajectory<T> {
        let measurements = schedule
            .picks()
            .iter()
            .zip(&self.measurements)
            .map(|(&i, row)| row[i].clone())
            .collect();
        Trajectory {
            states: self.states.clone(),
            measurements,
        }
    }
}

/// Simulates true states and scheduled measurements; deterministic in `seed`.
pub fn simulate_trajectory<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    schedule: &Schedule,
    seed: u64,
) -> Result<Trajectory<T>> {
    if schedule.num_sensors() != sensors.len() {
        return Err(Error::Config("schedule width differs from sensor count".into()));
    }
    let truth = simulate_ground_truth(sys, sensors, schedule.len(), SimulationOptions::seeded(seed))?;
    Ok(truth.observe(schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_system(q: f64) -> (LinearGaussianSystem<f64>, SensorSet<f64>) {
        let sys = LinearGaussianSystem::time_invariant(
            dmatrix![1.0],
            dmatrix![q],
            DVector::from_element(1, 0.0),
            dmatrix![1.0],
        )
        .unwrap();
        let sensors = SensorSet::new(
            1,
            vec![
                Sensor::time_invariant(dmatrix![1.0], dmatrix![1.0], 1.0).unwrap(),
                Sensor::null(1, StepSeq::constant(0.0)).unwrap(),
            ],
        )
        .unwrap();
        (sys, sensors)
    }

    #[test]
    fn scalar_update_halves_variance() {
        let (sys, sensors) = scalar_system(0.0);
        let s = Schedule::new(vec![0], 2).unwrap();
        let traj = propagate_covariance(&sys, &sensors, &s, 1).unwrap();
        assert_relative_eq!(traj.cov[1][(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(traj.predicted[0][(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_update_in_f32() {
        let sys = LinearGaussianSystem::<f32>::time_invariant(
            dmatrix![1.0f32],
            dmatrix![0.0f32],
            DVector::from_element(1, 0.0f32),
            dmatrix![1.0f32],
        )
        .unwrap();
        let sensors = SensorSet::new(
            1,
            vec![Sensor::time_invariant(dmatrix![1.0f32], dmatrix![1.0f32], 1.0).unwrap()],
        )
        .unwrap();
        let traj = propagate_covariance(&sys, &sensors, &Schedule::new(vec![0], 1).unwrap(), 1).unwrap();
        assert!((traj.cov[1][(0, 0)] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn null_sensor_with_identity_dynamics_keeps_prior() {
        let (sys, sensors) = instances::tracking2d();
        let sys = LinearGaussianSystem::time_invariant(
            DMatrix::identity(4, 4),
            DMatrix::zeros(4, 4),
            sys.initial_mean().clone(),
            sys.initial_cov().clone(),
        )
        .unwrap();
        let null = sensors.null_sensor().unwrap();
        let s = Schedule::new(vec![null; 5], sensors.len()).unwrap();
        let traj = propagate_covariance(&sys, &sensors, &s, 5).unwrap();
        for c in &traj.cov {
            assert_relative_eq!(c, sys.initial_cov(), epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (sys, sensors) = scalar_system(0.0);
        let s = Schedule::new(vec![0, 1], 2).unwrap();
        assert!(matches!(
            propagate_covariance(&sys, &sensors, &s, 3),
            Err(Error::Config(_))
        ));
        let wide = DMatrix::from_element(1, 3, 1.0 / 3.0);
        assert!(matches!(
            propagate_covariance(&sys, &sensors, &wide, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            propagate_covariance(&sys, &sensors, &s, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn singular_prediction_names_the_step() {
        let sys = LinearGaussianSystem::time_invariant(
            dmatrix![0.0, 0.0; 0.0, 1.0],
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sensors = SensorSet::new(2, vec![Sensor::null(2, StepSeq::constant(0.0)).unwrap()]).unwrap();
        let err = propagate_covariance(&sys, &sensors, &Schedule::new(vec![0, 0], 1).unwrap(), 2).unwrap_err();
        assert!(matches!(err, Error::Numerical { step: Some(1), .. }), "{err}");
    }

    #[test]
    fn singular_dynamics_are_fine_with_informative_sensor() {
        // A is singular but the full-rank sensor keeps the posterior PD only if
        // the prediction is invertible; Qw restores that.
        let sys = LinearGaussianSystem::time_invariant(
            dmatrix![0.0, 0.0; 0.0, 1.0],
            DMatrix::identity(2, 2) * 0.1,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sensors = SensorSet::new(
            2,
            vec![Sensor::time_invariant(dmatrix![1.0, 0.0], dmatrix![0.5], 1.0).unwrap()],
        )
        .unwrap();
        let traj = propagate_covariance(&sys, &sensors, &Schedule::new(vec![0; 3], 1).unwrap(), 3).unwrap();
        assert!(traj.cov.iter().all(|c| c.clone().cholesky().is_some()));
    }

    #[test]
    fn invalid_noise_is_rejected() {
        let bad_q = dmatrix![1.0, 0.0; 0.0, -1.0];
        let r = LinearGaussianSystem::time_invariant(
            DMatrix::identity(2, 2),
            bad_q,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(r, Err(Error::Config(_))));
        let asym = dmatrix![1.0, 0.1; 0.0, 1.0];
        let r = LinearGaussianSystem::time_invariant(
            DMatrix::identity(2, 2),
            asym,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(r, Err(Error::Config(_))));
        let r = LinearGaussianSystem::time_invariant(
            DMatrix::<f64>::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn information_matrix_matches_definition() {
        let h = dmatrix![1.0, 2.0, 0.0; 0.0, 1.0, -1.0];
        let r = dmatrix![2.0, 0.5; 0.5, 1.0];
        let s = Sensor::time_invariant(h.clone(), r.clone(), 1.0).unwrap();
        let expected = h.transpose() * r.try_inverse().unwrap() * &h;
        assert_relative_eq!(s.info(1), &expected, epsilon = 1e-12);
        assert_relative_eq!(s.info(7), &expected, epsilon = 1e-12);
        assert!(min_eigenvalue(s.info(1)) > -1e-12);
    }

    #[test]
    fn time_variant_inputs_index_by_step() {
        let sys = LinearGaussianSystem::new(
            StepSeq::per_step(vec![dmatrix![1.0], dmatrix![2.0]]).unwrap(),
            StepSeq::constant(dmatrix![0.0]),
            DVector::zeros(1),
            dmatrix![1.0],
        )
        .unwrap();
        let sensors = SensorSet::new(1, vec![Sensor::null(1, StepSeq::constant(0.0)).unwrap()]).unwrap();
        let traj = propagate_covariance(&sys, &sensors, &Schedule::new(vec![0, 0], 1).unwrap(), 2).unwrap();
        // C1 = A0² C0 = 1, C2 = A1² C1 = 4
        assert_relative_eq!(traj.cov[1][(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(traj.cov[2][(0, 0)], 4.0, epsilon = 1e-14);
        assert!(matches!(
            propagate_covariance(&sys, &sensors, &Schedule::new(vec![0; 3], 1).unwrap(), 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kalman_update_scalar() {
        let (_, sensors) = scalar_system(0.0);
        let (m, p) = kalman_update(
            &sensors,
            0,
            1,
            &DVector::from_element(1, 0.0),
            &dmatrix![1.0],
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(m[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kalman_update_null_sensor_is_noop() {
        let (_, sensors) = scalar_system(0.0);
        let prior = (DVector::from_element(1, 3.0), dmatrix![2.0]);
        let post = kalman_update(&sensors, 1, 1, &prior.0, &prior.1, &DVector::zeros(0)).unwrap();
        assert_eq!(post, prior);
    }

    #[test]
    fn filter_covariance_equals_recursion_on_tracking_scenario() {
        let (sys, sensors) = instances::tracking2d();
        let picks = vec![0, 4, 6, 2, 3, 6, 5, 1];
        let schedule = Schedule::new(picks.clone(), sensors.len()).unwrap();
        let traj = propagate_covariance(&sys, &sensors, &schedule, picks.len()).unwrap();
        let run = simulate_trajectory(&sys, &sensors, &schedule, 17).unwrap();
        let (mut mean, mut cov) = (sys.initial_mean().clone(), sys.initial_cov().clone());
        for k in 1..=picks.len() {
            (mean, cov) = kalman_predict(&sys, k, &mean, &cov);
            if let Some(z) = &run.measurements[k - 1] {
                (mean, cov) = kalman_update(&sensors, picks[k - 1], k, &mean, &cov, z).unwrap();
            }
            assert_relative_eq!(cov, traj.cov[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn noise_free_simulation_is_constant_under_identity() {
        let sys = LinearGaussianSystem {
            state_dim: 2,
            dynamics: StepSeq::constant(DMatrix::identity(2, 2)),
            process_noise: StepSeq::constant(DMatrix::zeros(2, 2)),
            initial_mean: DVector::from_vec(vec![1.5, -2.0]),
            initial_cov: DMatrix::zeros(2, 2),
        };
        let sensors = SensorSet::new(
            2,
            vec![Sensor::time_invariant(dmatrix![1.0, 0.0], dmatrix![1.0], 1.0).unwrap()],
        )
        .unwrap();
        let run = simulate_trajectory(&sys, &sensors, &Schedule::new(vec![0; 6], 1).unwrap(), 3).unwrap();
        for x in &run.states {
            assert_eq!(x, sys.initial_mean());
        }
    }

    #[test]
    fn simulation_is_deterministic_in_seed() {
        let (sys, sensors) = instances::tracking2d();
        let s = Schedule::new(vec![0, 1, 2, 3, 4, 5, 6], 7).unwrap();
        let a = simulate_trajectory(&sys, &sensors, &s, 99).unwrap();
        let b = simulate_trajectory(&sys, &sensors, &s, 99).unwrap();
        let c = simulate_trajectory(&sys, &sensors, &s, 100).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.measurements, b.measurements);
        assert_ne!(a.states, c.states);
        assert!(a.measurements[6].is_none());
    }

    #[test]
    fn sampled_process_noise_matches_covariance() {
        let q = dmatrix![2.0, 0.6, 0.0; 0.6, 1.0, -0.3; 0.0, -0.3, 0.5];
        let factor = gaussian_factor(&q);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let w = &factor * standard_normal::<f64>(&mut rng, 3);
            acc += &w * w.transpose();
        }
        let empirical = acc / n as f64;
        assert!((empirical - &q).norm() <= 0.05 * q.norm());
    }
}
