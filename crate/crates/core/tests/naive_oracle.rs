//! Cross-checks the covariance recursion and the objective against a
//! deliberately naive Kalman-gain implementation on fixed-size matrices.

use nalgebra::{Matrix4, RowVector4};
use sensor_sched::instances::tracking2d;
use sensor_sched::{
    bb_search, eval_j, exhaustive, greedy, propagate_covariance, BbVariant, FeasibleSet, ObjectiveKind, ObjectiveSpec,
    Schedule, SearchOptions,
};

struct NaiveSensor {
    h: RowVector4<f64>,
    r: f64,
    cost: f64,
}

fn naive_scenario() -> (Matrix4<f64>, Matrix4<f64>, Vec<Option<NaiveSensor>>) {
    #[rustfmt::skip]
    let a = Matrix4::new(
        1.0, 1.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 1.0,
        0.0, 0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let q = Matrix4::new(
        1.0 / 3.0, 0.5, 0.0, 0.0,
        0.5, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0 / 3.0, 0.5,
        0.0, 0.0, 0.5, 1.0,
    ) * 0.2;
    let unit = |j: usize| {
        let mut h = RowVector4::zeros();
        h[j] = 1.0;
        h
    };
    let sensors = vec![
        Some(NaiveSensor {
            h: unit(0),
            r: 0.2,
            cost: 1.0,
        }),
        Some(NaiveSensor {
            h: unit(2),
            r: 0.1,
            cost: 2.0,
        }),
        Some(NaiveSensor {
            h: unit(0),
            r: 0.1,
            cost: 3.0,
        }),
        Some(NaiveSensor {
            h: unit(3),
            r: 0.1,
            cost: 2.0,
        }),
        Some(NaiveSensor {
            h: unit(2),
            r: 0.05,
            cost: 3.0,
        }),
        Some(NaiveSensor {
            h: unit(1),
            r: 0.05,
            cost: 2.0,
        }),
        None,
    ];
    (a, q, sensors)
}

/// Covariance form of the filter: `P⁻ = A P Aᵀ + Q`, `K = P⁻hᵀ/(hP⁻hᵀ + r)`,
/// `P = (I - K h) P⁻`.
fn naive_trajectory(picks: &[usize]) -> Vec<Matrix4<f64>> {
    let (a, q, sensors) = naive_scenario();
    let mut p = Matrix4::identity() * 10.0;
    let mut out = Vec::new();
    for &i in picks {
        let prior = a * p * a.transpose() + q;
        p = match &sensors[i] {
            Some(s) => {
                let innovation = (s.h * prior * s.h.transpose())[0] + s.r;
                let gain = prior * s.h.transpose() / innovation;
                (Matrix4::identity() - gain * s.h) * prior
            }
            None => prior,
        };
        out.push(p);
    }
    out
}

fn naive_root_det(picks: &[usize]) -> f64 {
    naive_trajectory(picks).iter().map(|p| p.determinant().sqrt()).sum()
}

fn naive_cost(picks: &[usize]) -> f64 {
    let (_, _, sensors) = naive_scenario();
    picks.iter().map(|&i| sensors[i].as_ref().map_or(0.0, |s| s.cost)).sum()
}

fn root_det() -> ObjectiveSpec {
    ObjectiveSpec::new(ObjectiveKind::RootDeterminant)
}

#[test]
fn fixed_schedule_matches_naive_filter() {
    let (sys, sensors) = tracking2d();
    // sensors 5, 6, 7 in one-based numbering
    let picks = vec![4, 5, 6];
    let schedule = Schedule::new(picks.clone(), 7).unwrap();
    let traj = propagate_covariance(&sys, &sensors, &schedule, 3).unwrap();
    let oracle = naive_trajectory(&picks);
    for (k, expected) in oracle.iter().enumerate() {
        let got = &traj.cov[k + 1];
        for r in 0..4 {
            for c in 0..4 {
                let tol = 1e-10 * (1.0 + expected[(r, c)].abs());
                assert!(
                    (got[(r, c)] - expected[(r, c)]).abs() <= tol,
                    "step {} entry ({r},{c})",
                    k + 1
                );
            }
        }
    }
    let j = eval_j(&sys, &sensors, &schedule, root_det()).unwrap();
    let expected = naive_root_det(&picks);
    assert!((j.total - expected).abs() <= 1e-10 * expected);
}

#[test]
fn optimum_matches_naive_enumeration() {
    let (sys, sensors) = tracking2d();
    let n = 3;
    // round(1.5 * 3) with halves rounded away from zero
    let budget = 5.0;
    let mut best = (f64::INFINITY, vec![]);
    for a in 0..7 {
        for b in 0..7 {
            for c in 0..7 {
                let picks = [a, b, c];
                if naive_cost(&picks) > budget {
                    continue;
                }
                let j = naive_root_det(&picks);
                if j < best.0 {
                    best = (j, picks.to_vec());
                }
            }
        }
    }

    let fs = FeasibleSet::new(sensors.cost_matrix(1, n), budget).unwrap();
    let ex = exhaustive(&sys, &sensors, &fs, root_det()).unwrap();
    assert!((ex.j_opt - best.0).abs() <= 1e-9 * best.0);
    assert_eq!(ex.schedule.picks(), best.1.as_slice());
    for v in [BbVariant::Bbc, BbVariant::Bbl, BbVariant::Bbz] {
        let r = bb_search(&sys, &sensors, &fs, root_det(), v, &SearchOptions::default()).unwrap();
        assert!((r.j_opt - best.0).abs() <= 1e-9 * best.0, "{v:?}");
    }
    let g = greedy(&sys, &sensors, &fs, root_det(), false).unwrap();
    assert!(g.j_opt >= best.0 - 1e-9);
}
