//! Per-step uncertainty measures `g_k`, the cumulative objective
//! `J = Σ_{k=1}^N g_k(C_k)` and its gradient with respect to the schedule.
//!
//! The gradient is reverse mode through the covariance recursion. With
//! `Y_k = C_k⁻¹ = (C_k^p)⁻¹ + Σ_i u_{k,i} M_k^i` and the adjoint
//! `S_k = ∂J/∂C_k`:
//!
//! ```text
//! W_k          = C_k S_k C_k
//! ∂J/∂u_{k,i}  = -tr(W_k M_k^i)
//! S_{k-1}     += ∂g_{k-1}/∂C_{k-1} + A_{k-1}ᵀ (C_k^p)⁻¹ W_k (C_k^p)⁻¹ A_{k-1}
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{LinearGaussianSystem, Problem, Selection, SensorSet, StepOutput};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Trace,
    RootDeterminant,
    MaxEigenvalue,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [
        ObjectiveKind::Trace,
        ObjectiveKind::RootDeterminant,
        ObjectiveKind::MaxEigenvalue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Trace => "trace",
            ObjectiveKind::RootDeterminant => "root-det",
            ObjectiveKind::MaxEigenvalue => "max-eig",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(ObjectiveKind::Trace),
            "root-det" | "rootdet" | "root-determinant" => Ok(ObjectiveKind::RootDeterminant),
            "max-eig" | "maxeig" | "max-eigenvalue" => Ok(ObjectiveKind::MaxEigenvalue),
            other => Err(Error::Config(format!(
                "unknown objective '{other}' (expected trace, root-det or max-eig)"
            ))),
        }
    }
}

/// Objective choice. `greedy_star_weighting` multiplies `g_k` by
/// `1 + c_kᵀ u_k`; only the GREEDY* baseline uses it, since it breaks
/// convexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub greedy_star_weighting: bool,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            greedy_star_weighting: false,
        }
    }

    pub fn greedy_star(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            greedy_star_weighting: true,
        }
    }

    pub(crate) fn require_convex(&self) -> Result<()> {
        if self.greedy_star_weighting {
            return Err(Error::Config(
                "cost-weighted objective is not convex and cannot be relaxed".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue<T: Scalar> {
    pub total: T,
    pub per_step: Vec<T>,
}

impl<T: Scalar> ObjectiveValue<T> {
    fn from_steps(per_step: Vec<T>) -> Self {
        let total = per_step.iter().fold(T::zero(), |a, &b| a + b);
        Self { total, per_step }
    }
}

/// Objective value together with its (sub)gradient.
#[derive(Debug, Clone)]
pub struct Gradient<T: Scalar> {
    pub value: ObjectiveValue<T>,
    /// `∂J/∂u`, one row per step.
    pub grad: DMatrix<T>,
    /// True for the max-eigenvalue objective, whose derivative is a
    /// subgradient at repeated top eigenvalues.
    pub subgradient: bool,
}

fn measure<T: Scalar>(c: &DMatrix<T>, kind: ObjectiveKind, step: Option<usize>) -> Result<T> {
    let not_pd = || Error::Numerical {
        step,
        msg: "covariance is not positive definite".into(),
    };
    match kind {
        ObjectiveKind::Trace => {
            if c.clone().cholesky().is_none() {
                return Err(not_pd());
            }
            Ok(c.trace())
        }
        ObjectiveKind::RootDeterminant => {
            // sqrt(det C) = exp(½ logdet C) = Π L_ii
            let chol = c.clone().cholesky().ok_or_else(not_pd)?;
            let l = chol.l_dirty();
            let log_root: T = (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln());
            Ok(log_root.exp())
        }
        ObjectiveKind::MaxEigenvalue => {
            let eig = SymmetricEigen::new(c.clone());
            if eig.eigenvalues.iter().any(|&l| l <= T::zero()) {
                return Err(not_pd());
            }
            Ok(eig.eigenvalues.max())
        }
    }
}

/// `∂g/∂C` at the step output `s` for unweighted `g`.
fn measure_derivative<T: Scalar>(s: &StepOutput<T>, kind: ObjectiveKind, g: T) -> DMatrix<T> {
    let n = s.posterior.nrows();
    match kind {
        ObjectiveKind::Trace => DMatrix::identity(n, n),
        ObjectiveKind::RootDeterminant => &s.posterior_info * (g * lit(0.5)),
        ObjectiveKind::MaxEigenvalue => {
            let eig = SymmetricEigen::new(s.posterior.clone());
            let top = eig.eigenvalues.imax();
            let v = eig.eigenvectors.column(top);
            v * v.transpose()
        }
    }
}

/// Uncertainty of one covariance: `tr C`, `sqrt(det C)` or `λ_max(C)`. With
/// cost weighting enabled, `step_cost = c_kᵀu_k` scales the result by
/// `1 + step_cost`.
pub fn eval_g<T: Scalar>(c: &DMatrix<T>, spec: ObjectiveSpec, step_cost: Option<T>) -> Result<T> {
    if !c.is_square() {
        return Err(Error::Config("covariance must be square".into()));
    }
    let g = measure(c, spec.kind, None)?;
    Ok(match (spec.greedy_star_weighting, step_cost) {
        (true, Some(cost)) => g * (T::one() + cost),
        _ => g,
    })
}

impl<T: Scalar> Problem<'_, T> {
    fn step_cost(&self, row: usize, weight: impl Fn(usize) -> T) -> T {
        let k = self.step_of(row);
        self.sensors()
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, s)| acc + s.cost(k) * weight(i))
    }

    /// `g_k` for the step at `row`, already propagated to `out`.
    pub fn step_value(
        &self,
        row: usize,
        out: &StepOutput<T>,
        spec: ObjectiveSpec,
        weight: impl Fn(usize) -> T,
    ) -> Result<T> {
        let g = measure(&out.posterior, spec.kind, Some(self.step_of(row)))?;
        Ok(if spec.greedy_star_weighting {
            g * (T::one() + self.step_cost(row, weight))
        } else {
            g
        })
    }

    pub fn objective(&self, u: &impl Selection<T>, spec: ObjectiveSpec) -> Result<ObjectiveValue<T>> {
        let forward = self.forward(u)?;
        let per_step = forward
            .iter()
            .enumerate()
            .map(|(row, s)| self.step_value(row, s, spec, |i| u.weight(row, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectiveValue::from_steps(per_step))
    }

    /// Objective and exact reverse-mode gradient.
    pub fn gradient(&self, u: &impl Selection<T>, spec: ObjectiveSpec) -> Result<Gradient<T>> {
        spec.require_convex()?;
        let forward = self.forward(u)?;
        let n = forward.len();
        let per_step = forward
            .iter()
            .enumerate()
            .map(|(row, s)| measure(&s.posterior, spec.kind, Some(self.step_of(row))))
            .collect::<Result<Vec<_>>>()?;

        let width = self.num_sensors();
        let mut grad = DMatrix::zeros(n, width);
        let dim = self.initial_cov().nrows();
        let mut adjoint = DMatrix::<T>::zeros(dim, dim);
        for row in (0..n).rev() {
            let out = &forward[row];
            let k = self.step_of(row);
            adjoint += measure_derivative(out, spec.kind, per_step[row]);
            let w = &out.posterior * &adjoint * &out.posterior;
            for (i, sensor) in self.sensors().iter().enumerate() {
                // tr(W M) for symmetric W, M
                grad[(row, i)] = -w.component_mul(sensor.info(k)).sum();
            }
            if row > 0 {
                let a = self.system().dynamics(k - 1);
                let back = &out.predicted_info * &w * &out.predicted_info;
                adjoint = a.transpose() * back * a;
            }
        }
        Ok(Gradient {
            value: ObjectiveValue::from_steps(per_step),
            grad,
            subgradient: spec.kind == ObjectiveKind::MaxEigenvalue,
        })
    }
}

/// Cumulative objective over the full horizon (`C_0` excluded).
pub fn eval_j<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    u: &impl Selection<T>,
    spec: ObjectiveSpec,
) -> Result<ObjectiveValue<T>> {
    Problem::new(sys, sensors)?.objective(u, spec)
}

/// Gradient of [`eval_j`] with respect to `u`.
pub fn grad_j<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    u: &impl Selection<T>,
    spec: ObjectiveSpec,
) -> Result<Gradient<T>> {
    Problem::new(sys, sensors)?.gradient(u, spec)
}
