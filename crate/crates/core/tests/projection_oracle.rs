//! Dykstra projection against a small KKT-based quadratic-program oracle.

use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensor_sched::{project_feasible, FeasibleSet};

/// Simplex projection by bisection on the threshold `τ` in `max(v - τ, 0)`.
fn simplex_by_bisection(v: &[f64]) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).max(0.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Stationarity gives `x(μ) = Π_rows(v - μc)`; the multiplier is zero if
/// the budget is slack there, otherwise found by bisection on `cᵀx(μ) = C`.
fn qp_oracle(v: &DMatrix<f64>, costs: &DMatrix<f64>, budget: f64) -> DMatrix<f64> {
    let at = |mu: f64| {
        let mut x = DMatrix::zeros(v.nrows(), v.ncols());
        for r in 0..v.nrows() {
            let row: Vec<f64> = (0..v.ncols()).map(|c| v[(r, c)] - mu * costs[(r, c)]).collect();
            for (c, val) in simplex_by_bisection(&row).into_iter().enumerate() {
                x[(r, c)] = val;
            }
        }
        x
    };
    let usage = |x: &DMatrix<f64>| x.component_mul(costs).sum();
    let x0 = at(0.0);
    if usage(&x0) <= budget {
        return x0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while usage(&at(hi)) > budget {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if usage(&at(mid)) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

#[test]
fn binding_budget_matches_qp_oracle() {
    let costs = dmatrix![0.0, 1.0, 3.0; 0.0, 2.0, 1.0];
    let fs = FeasibleSet::new(costs.clone(), 1.0).unwrap();
    let u = DMatrix::from_element(2, 3, 1.0 / 3.0);
    let got = project_feasible(&u, &fs).unwrap().into_matrix();
    let expected = qp_oracle(&u, &costs, 1.0);
    assert!((&got - &expected).amax() < 1e-8, "got {got}, expected {expected}");
    // mass moved to the free sensor
    assert!(got[(0, 0)] > 1.0 / 3.0 && got[(1, 0)] > 1.0 / 3.0);
}

#[test]
fn random_inputs_match_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let costs = DMatrix::from_fn(2, 3, |_, _| rng.random_range(0..4) as f64);
        let lo: f64 = costs.row_iter().map(|r| r.min()).sum();
        let hi: f64 = costs.row_iter().map(|r| r.max()).sum();
        let budget = lo + rng.random_range(0.0..=1.0) * (hi - lo);
        let fs = FeasibleSet::new(costs.clone(), budget).unwrap();
        let v = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..2.0));
        let got = project_feasible(&v, &fs).unwrap().into_matrix();
        let expected = qp_oracle(&v, &costs, budget);
        assert!((&got - &expected).amax() < 1e-7, "costs {costs} budget {budget} v {v}");
    }
}

#[test]
fn projection_is_no_farther_than_feasible_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let costs = dmatrix![1.0, 2.0, 0.0; 3.0, 1.0, 2.0];
    let fs = FeasibleSet::new(costs, 2.0).unwrap();
    let v = dmatrix![0.9, 0.6, -0.2; 0.1, 0.3, 0.4];
    let p = project_feasible(&v, &fs).unwrap().into_matrix();
    let d = (&v - &p).norm();
    let mut checked = 0;
    while checked < 2000 {
        let mut y = DMatrix::zeros(2, 3);
        for r in 0..2 {
            let w: Vec<f64> = (0..3).map(|_| -rng.random::<f64>().ln()).collect();
            let s: f64 = w.iter().sum();
            for c in 0..3 {
                y[(r, c)] = w[c] / s;
            }
        }
        if fs.usage(&y) > fs.budget() {
            continue;
        }
        checked += 1;
        assert!(d <= (&v - &y).norm() + 1e-9);
    }
}
