//! Convex relaxation: minimize `J(u)` over row-stochastic `u` subject to the
//! budget `Σ_k c_kᵀ u_k ≤ C`.
//!
//! The solver is projected gradient descent with Armijo backtracking and
//! Barzilai-Borwein trial steps. Projection onto the feasible polytope uses
//! Dykstra's alternating projections between the product of row simplices
//! and the budget halfspace. Besides the relaxed optimum, every solve
//! reports a certified lower bound from the linearization at the iterates,
//! which stays valid even if the solver stops early.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Problem, RelaxedSchedule, Schedule};
use crate::objective::{ObjectiveKind, ObjectiveSpec};
use crate::scalar::{lit, to_f64, Scalar};

const ROW_TOL: f64 = 1e-9;
const ENTRY_TOL: f64 = 1e-12;
const DYKSTRA_CHANGE_TOL: f64 = 1e-10;
const DYKSTRA_MAX_SWEEPS: usize = 10_000;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;
const STALL_WINDOW: usize = 10;

/// Per-step sensor costs and the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet<T: Scalar> {
    costs: DMatrix<T>,
    budget: T,
}

impl<T: Scalar> FeasibleSet<T> {
    /// Fails with [`Error::Infeasible`] unless the cheapest schedule fits
    /// the budget.
    pub fn new(costs: DMatrix<T>, budget: T) -> Result<Self> {
        if costs.iter().any(|c| !c.is_finite() || *c < T::zero()) {
            return Err(Error::Config("costs must be finite and nonnegative".into()));
        }
        if !budget.is_finite() {
            return Err(Error::Config("budget must be finite".into()));
        }
        if costs.ncols() == 0 {
            return Err(Error::Config("at least one sensor is required".into()));
        }
        let fs = Self { costs, budget };
        let cheapest = fs.min_total_cost();
        if cheapest > budget {
            return Err(Error::Infeasible(format!(
                "cheapest schedule costs {cheapest}, budget is {budget}"
            )));
        }
        Ok(fs)
    }

    pub fn steps(&self) -> usize {
        self.costs.nrows()
    }

    pub fn width(&self) -> usize {
        self.costs.ncols()
    }

    pub fn costs(&self) -> &DMatrix<T> {
        &self.costs
    }

    pub fn budget(&self) -> T {
        self.budget
    }

    pub fn row_min(&self, row: usize) -> T {
        self.costs.row(row).min()
    }

    /// `Σ_k min_j c_{k,j}`
    pub fn min_total_cost(&self) -> T {
        (0..self.steps()).fold(T::zero(), |acc, r| acc + self.row_min(r))
    }

    /// `Σ c ∘ u`
    pub fn usage(&self, u: &DMatrix<T>) -> T {
        self.costs.component_mul(u).sum()
    }

    pub fn schedule_cost(&self, s: &Schedule) -> T {
        s.cost(&self.costs)
    }

    pub fn admits(&self, s: &Schedule) -> bool {
        s.len() == self.steps() && s.num_sensors() == self.width() && self.schedule_cost(s) <= self.budget
    }

    /// Remaining problem after the first `rows_done` steps spent `spent`.
    ///
    /// The remaining budget is clamped up to the cheapest completion so that
    /// round-off in `budget - spent` cannot make a feasible prefix look
    /// infeasible; callers check feasibility of the prefix beforehand.
    pub fn tail(&self, rows_done: usize, spent: T) -> Result<Self> {
        let rows = self.steps() - rows_done;
        let costs = self.costs.rows(rows_done, rows).into_owned();
        let cheapest = (0..rows).fold(T::zero(), |acc, r| acc + costs.row(r).min());
        Self::new(costs, (self.budget - spent).max(cheapest))
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_row_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - T::one()) / lit((j + 1) as f64);
        if s - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

fn project_rows<T: Scalar>(u: &DMatrix<T>) -> DMatrix<T> {
    let mut out = u.clone();
    for r in 0..u.nrows() {
        let row: Vec<T> = u.row(r).iter().copied().collect();
        for (c, v) in project_row_simplex(&row).into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    out
}

fn project_budget<T: Scalar>(u: &DMatrix<T>, fs: &FeasibleSet<T>, cost_norm2: T) -> DMatrix<T> {
    let excess = fs.usage(u) - fs.budget;
    if excess <= T::zero() || cost_norm2 == T::zero() {
        return u.clone();
    }
    u - &fs.costs * (excess / cost_norm2)
}

fn row_residual<T: Scalar>(u: &DMatrix<T>) -> T {
    (0..u.nrows()).fold(T::zero(), |acc, r| acc.max((u.row(r).sum() - T::one()).abs()))
}

fn is_feasible<T: Scalar>(u: &DMatrix<T>, fs: &FeasibleSet<T>) -> bool {
    row_residual(u) <= lit(ROW_TOL)
        && u.min() >= lit(-ENTRY_TOL)
        && u.max() <= lit(1.0 + ENTRY_TOL)
        && fs.usage(u) - fs.budget <= lit::<T>(ROW_TOL) * fs.budget.abs().max(T::one())
}

/// Euclidean projection of `u` onto `{rows on the simplex} ∩ {Σ c∘u ≤ C}`
/// by Dykstra's algorithm.
pub fn project_feasible<T: Scalar>(u: &DMatrix<T>, fs: &FeasibleSet<T>) -> Result<RelaxedSchedule<T>> {
    if u.shape() != fs.costs.shape() {
        return Err(Error::Config(format!(
            "schedule is {:?}, cost matrix is {:?}",
            u.shape(),
            fs.costs.shape()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("schedule has non-finite entries".into()));
    }
    let cost_norm2 = fs.costs.norm_squared();
    let mut x = u.clone();
    let mut p = DMatrix::zeros(u.nrows(), u.ncols());
    let mut q = DMatrix::zeros(u.nrows(), u.ncols());
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let xp = &x + &p;
        let y = project_rows(&xp);
        p = xp - &y;
        let yq = &y + &q;
        let next = project_budget(&yq, fs, cost_norm2);
        q = yq - &next;
        let change = (&next - &x).norm();
        x = next;
        if change < lit(DYKSTRA_CHANGE_TOL) && is_feasible(&x, fs) {
            return RelaxedSchedule::new(x);
        }
    }
    Err(Error::NoConvergence {
        sweeps: DYKSTRA_MAX_SWEEPS,
        row_residual: to_f64(row_residual(&x)),
        budget_residual: to_f64((fs.usage(&x) - fs.budget).max(T::zero())),
    })
}

/// `min ⟨g, y⟩` over the feasible set, through the Lagrangian dual of the
/// budget constraint. Every dual point yields a lower bound; the returned
/// value is the best one found, so it never exceeds the true minimum.
pub fn linear_minimum<T: Scalar>(g: &DMatrix<T>, fs: &FeasibleSet<T>) -> T {
    // For multiplier mu: pick per row argmin of g + mu c (cheaper on ties).
    let eval = |mu: T| -> (T, T) {
        let mut value = -mu * fs.budget;
        let mut slope = -fs.budget;
        for r in 0..g.nrows() {
            let mut best = (g[(r, 0)] + mu * fs.costs[(r, 0)], fs.costs[(r, 0)]);
            for c in 1..g.ncols() {
                let cand = (g[(r, c)] + mu * fs.costs[(r, c)], fs.costs[(r, c)]);
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            value += best.0;
            slope += best.1;
        }
        (value, slope)
    };
    let (v0, s0) = eval(T::zero());
    if s0 <= T::zero() {
        return v0;
    }
    let mut best = v0;
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..200 {
        let (v, s) = eval(hi);
        best = best.max(v);
        if s <= T::zero() {
            break;
        }
        lo = hi;
        hi *= lit(2.0);
    }
    for _ in 0..100 {
        let mid = (lo + hi) * lit(0.5);
        let (v, s) = eval(mid);
        best = best.max(v);
        if s > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxOptions<T: Scalar> {
    pub max_iter: usize,
    /// Relative decrease threshold for the stall test and relative gap
    /// threshold for the optimality test.
    pub tol: T,
    /// Starting point; projected onto the feasible set. Uniform rows if
    /// absent.
    pub initial: Option<DMatrix<T>>,
}

impl<T: Scalar> Default for RelaxOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: lit(1e-8),
            initial: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution<T: Scalar> {
    pub u_star: RelaxedSchedule<T>,
    /// `J(u_star)`.
    pub j_lower: T,
    /// `max` over iterates of `J(x) + min_y ⟨∇J(x), y - x⟩`; a lower bound on
    /// the relaxed (and hence the binary) optimum regardless of convergence.
    pub certified_lower: T,
    pub iterations: usize,
    pub converged: bool,
    /// Linearization gap `J(u_star) - certified bound at u_star`.
    pub kkt_residual: T,
    /// Objective after every accepted step, starting with the initial point.
    pub history: Vec<T>,
}

/// Solves the relaxed scheduling problem on `problem` over the steps of
/// `fs`.
///
/// Stops when the linearization gap falls below `tol·(1 + |J|)`, when the
/// relative decrease stays below `tol` for 10 consecutive iterations, when
/// the projected step vanishes, or after `max_iter` iterations. A line
/// search that fails after 20 halvings ends the solve with
/// `converged = false` and the last accepted iterate.
pub fn solve_relaxed<T: Scalar>(
    problem: &Problem<'_, T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
    opts: &RelaxOptions<T>,
) -> Result<RelaxedSolution<T>> {
    spec.require_convex()?;
    let n = fs.steps();
    if n == 0 {
        return Err(Error::Config("relaxation needs at least one step".into()));
    }
    if fs.width() != problem.num_sensors() {
        return Err(Error::Config("cost matrix width differs from sensor count".into()));
    }
    problem.check_horizon(n)?;

    let start = match &opts.initial {
        Some(init) => init.clone(),
        None => RelaxedSchedule::uniform(n, fs.width()).into_matrix(),
    };
    let mut x = project_feasible(&start, fs)?.into_matrix();
    let mut current = problem.gradient(&x, spec)?;
    let mut j = current.value.total;
    let mut history = vec![j];

    let gap_at = |x: &DMatrix<T>, g: &DMatrix<T>| -> T { (g.dot(x) - linear_minimum(g, fs)).max(T::zero()) };
    let mut gap = gap_at(&x, &current.grad);
    let mut certified = j - gap;

    let tiny = lit::<T>(1e-30);
    let mut step = T::one() / current.grad.amax().max(tiny);
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        if gap <= opts.tol * (T::one() + j.abs()) {
            converged = true;
            break;
        }
        iterations = it;
        let mut trial = step;
        if spec.kind == ObjectiveKind::MaxEigenvalue {
            trial /= lit(it.div_ceil(100) as f64);
        }
        let g = &current.grad;
        let mut accepted = None;
        let mut stationary = false;
        for _ in 0..=MAX_HALVINGS {
            let y = project_feasible(&(&x - g * trial), fs)?.into_matrix();
            let d = &y - &x;
            if d.norm() <= lit::<T>(1e-15) * (T::one() + x.norm()) {
                stationary = true;
                break;
            }
            let predicted = g.dot(&d);
            let jy = problem.objective(&y, spec)?.total;
            if jy <= j + lit::<T>(ARMIJO) * predicted {
                accepted = Some(y);
                break;
            }
            trial *= lit(0.5);
        }
        if stationary {
            converged = true;
            break;
        }
        let Some(y) = accepted else {
            break;
        };
        let next = problem.gradient(&y, spec)?;
        let s = &y - &x;
        let sy = s.dot(&(&next.grad - &current.grad));
        step = if sy > T::zero() {
            s.norm_squared() / sy
        } else {
            trial * lit(2.0)
        };
        step = step.clamp(lit(1e-12), lit(1e12));

        let j_next = next.value.total;
        let rel = (j - j_next) / j.abs().max(tiny);
        x = y;
        current = next;
        j = j_next;
        history.push(j);
        gap = gap_at(&x, &current.grad);
        certified = certified.max(j - gap);

        if rel < opts.tol {
            stalled += 1;
            if stalled >= STALL_WINDOW {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(RelaxedSolution {
        u_star: RelaxedSchedule::new(x)?,
        j_lower: j,
        certified_lower: certified.min(j),
        iterations,
        converged,
        kkt_residual: gap,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::{LinearGaussianSystem, Sensor, SensorSet, StepSeq};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn simplex_projection_examples() {
        close(&project_row_simplex(&[0.2, 0.8]), &[0.2, 0.8]);
        close(&project_row_simplex(&[2.0, 0.0]), &[1.0, 0.0]);
        close(&project_row_simplex(&[0.5, 0.5, 0.5]), &[1.0 / 3.0; 3]);
        close(&project_row_simplex(&[-1.0, -1.0]), &[0.5, 0.5]);
    }

    #[test]
    fn infeasible_budget_is_rejected() {
        let costs = dmatrix![1.0, 2.0; 1.0, 3.0];
        assert!(matches!(
            FeasibleSet::new(costs.clone(), 1.5),
            Err(Error::Infeasible(_))
        ));
        let fs = FeasibleSet::new(costs, 2.0).unwrap();
        assert_eq!(fs.min_total_cost(), 2.0);
        assert!(matches!(FeasibleSet::new(dmatrix![-1.0], 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn feasible_point_is_a_fixed_point() {
        let fs = FeasibleSet::new(dmatrix![1.0, 2.0, 0.0; 3.0, 1.0, 0.0], 2.0).unwrap();
        let u = dmatrix![0.5, 0.25, 0.25; 0.0, 0.5, 0.5];
        let p = project_feasible(&u, &fs).unwrap();
        assert_relative_eq!(p.as_matrix(), &u, epsilon = 1e-12);
    }

    #[test]
    fn inactive_budget_reduces_to_row_projection() {
        let costs = dmatrix![1.0, 2.0, 3.0; 2.0, 2.0, 1.0];
        let max_total = 3.0 + 2.0;
        let fs = FeasibleSet::new(costs, max_total).unwrap();
        let u = dmatrix![0.9, 0.4, -0.2; 2.0, 0.0, 0.3];
        let p = project_feasible(&u, &fs).unwrap();
        let expected = project_rows(&u);
        assert_relative_eq!(p.as_matrix(), &expected, epsilon = 1e-12);
    }

    #[test]
    fn binding_budget_moves_mass_to_cheap_sensors() {
        let fs = FeasibleSet::new(dmatrix![0.0, 1.0, 3.0; 0.0, 1.0, 3.0], 1.0).unwrap();
        let u = DMatrix::from_element(2, 3, 1.0 / 3.0);
        let p = project_feasible(&u, &fs).unwrap();
        let m = p.as_matrix();
        assert!(fs.usage(m) <= 1.0 + 1e-9);
        for r in 0..2 {
            assert_relative_eq!(m.row(r).sum(), 1.0, epsilon = 1e-9);
            assert!(m[(r, 0)] > 1.0 / 3.0);
            assert!(m[(r, 2)] < 1.0 / 3.0);
        }
    }

    #[test]
    fn projection_rejects_shape_mismatch() {
        let fs = FeasibleSet::new(dmatrix![0.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            project_feasible(&DMatrix::zeros(2, 2), &fs),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn linear_minimum_matches_vertex_enumeration() {
        let g = dmatrix![-3.0, -1.0, 0.0; -2.0, -2.5, 0.0];
        let costs = dmatrix![3.0, 1.0, 0.0; 2.0, 3.0, 0.0];
        let fs = FeasibleSet::new(costs, 3.0).unwrap();
        // Every budget-limited option returns one unit of value per unit of
        // cost, so the LP optimum spends the whole budget: -3.
        let lb = linear_minimum(&g, &fs);
        assert_relative_eq!(lb, -3.0, epsilon = 1e-9);
    }

    fn two_sensor_problem(noise_b: f64) -> (LinearGaussianSystem<f64>, SensorSet<f64>) {
        let sys = LinearGaussianSystem::time_invariant(
            dmatrix![1.0, 1.0; 0.0, 1.0],
            DMatrix::identity(2, 2) * 0.1,
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 4.0,
        )
        .unwrap();
        let h = dmatrix![1.0, 0.0; 0.0, 1.0];
        let sensors = SensorSet::new(
            2,
            vec![
                Sensor::time_invariant(h.clone(), DMatrix::identity(2, 2) * 0.5, 1.0).unwrap(),
                Sensor::time_invariant(h, DMatrix::identity(2, 2) * noise_b, 1.0).unwrap(),
            ],
        )
        .unwrap();
        (sys, sensors)
    }

    #[test]
    fn identical_sensors_relax_to_binary_value() {
        let (sys, sensors) = two_sensor_problem(0.5);
        let p = Problem::new(&sys, &sensors).unwrap();
        let fs = FeasibleSet::new(sensors.cost_matrix(1, 3), 10.0).unwrap();
        let spec = ObjectiveSpec::new(ObjectiveKind::RootDeterminant);
        let sol = solve_relaxed(&p, &fs, spec, &RelaxOptions::default()).unwrap();
        let binary = p.objective(&Schedule::new(vec![0, 0, 0], 2).unwrap(), spec).unwrap();
        assert_relative_eq!(sol.j_lower, binary.total, max_relative = 1e-12);
        assert!(sol.converged);
    }

    #[test]
    fn dominant_sensor_takes_all_mass() {
        let (sys, sensors) = two_sensor_problem(2.0);
        let p = Problem::new(&sys, &sensors).unwrap();
        let fs = FeasibleSet::new(sensors.cost_matrix(1, 4), 10.0).unwrap();
        for kind in [ObjectiveKind::Trace, ObjectiveKind::RootDeterminant] {
            let sol = solve_relaxed(&p, &fs, ObjectiveSpec::new(kind), &RelaxOptions::default()).unwrap();
            for r in 0..4 {
                assert_relative_eq!(sol.u_star.as_matrix()[(r, 0)], 1.0, epsilon = 1e-6);
            }
            assert!(sol.certified_lower <= sol.j_lower);
        }
    }

    #[test]
    fn descent_is_monotone_and_deterministic() {
        let (sys, sensors, fs) = instances::random_instance(21, 4, 3, 4);
        let p = Problem::new(&sys, &sensors).unwrap();
        for kind in ObjectiveKind::ALL {
            let spec = ObjectiveSpec::new(kind);
            let a = solve_relaxed(&p, &fs, spec, &RelaxOptions::default()).unwrap();
            let b = solve_relaxed(&p, &fs, spec, &RelaxOptions::default()).unwrap();
            assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(a.iterations, b.iterations);
            assert_eq!(a.u_star, b.u_star);
            assert!(fs.usage(a.u_star.as_matrix()) <= fs.budget() + 1e-9);
            assert!(row_residual(a.u_star.as_matrix()) <= 1e-9);
        }
    }

    #[test]
    fn relaxation_rejects_star_weighting_and_empty_horizon() {
        let (sys, sensors) = two_sensor_problem(1.0);
        let p = Problem::new(&sys, &sensors).unwrap();
        let fs = FeasibleSet::new(sensors.cost_matrix(1, 2), 10.0).unwrap();
        let star = ObjectiveSpec::greedy_star(ObjectiveKind::Trace);
        assert!(matches!(
            solve_relaxed(&p, &fs, star, &RelaxOptions::default()),
            Err(Error::Config(_))
        ));
        let empty = FeasibleSet::new(DMatrix::zeros(0, 2), 0.0).unwrap();
        assert!(solve_relaxed(
            &p,
            &empty,
            ObjectiveSpec::new(ObjectiveKind::Trace),
            &RelaxOptions::default()
        )
        .is_err());
    }

    #[test]
    fn tail_budget_and_costs() {
        let fs = FeasibleSet::new(dmatrix![1.0, 0.0; 2.0, 1.0; 3.0, 0.0], 4.0).unwrap();
        let t = fs.tail(1, 1.0).unwrap();
        assert_eq!(t.steps(), 2);
        assert_eq!(t.budget(), 3.0);
        assert_eq!(t.costs(), &dmatrix![2.0, 1.0; 3.0, 0.0]);
        let _ = StepSeq::constant(0.0);
    }
}
