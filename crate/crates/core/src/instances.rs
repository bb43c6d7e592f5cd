//! Ready-made problem instances: the planar constant-velocity tracking
//! scenario and seeded random instances for tests and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{LinearGaussianSystem, Sensor, SensorSet, StepSeq};
use crate::relax::FeasibleSet;

/// Target tracking with state `[x, ẋ, y, ẏ]`, sampling interval 1 and
/// diffusion strength 0.2, observed by six position/velocity sensors plus a
/// free "no measurement" option (index 6).
pub fn tracking2d() -> (LinearGaussianSystem<f64>, SensorSet<f64>) {
    let t = 1.0;
    let q = 0.2;
    let block_a = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
    let block_q = DMatrix::from_row_slice(2, 2, &[t * t * t / 3.0, t * t / 2.0, t * t / 2.0, t]) * q;
    let i2 = DMatrix::<f64>::identity(2, 2);
    let sys = LinearGaussianSystem::time_invariant(
        i2.kronecker(&block_a),
        i2.kronecker(&block_q),
        DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]),
        DMatrix::identity(4, 4) * 10.0,
    )
    .expect("valid tracking system");

    let row = |j: usize| DMatrix::from_fn(1, 4, |_, c| if c == j { 1.0 } else { 0.0 });
    let specs = [
        (0, 0.2, 1.0),
        (2, 0.1, 2.0),
        (0, 0.1, 3.0),
        (3, 0.1, 2.0),
        (2, 0.05, 3.0),
        (1, 0.05, 2.0),
    ];
    let mut sensors: Vec<_> = specs
        .iter()
        .map(|&(j, r, c)| Sensor::time_invariant(row(j), DMatrix::from_element(1, 1, r), c).expect("valid sensor"))
        .collect();
    sensors.push(Sensor::null(4, StepSeq::constant(0.0)).expect("valid null sensor"));
    (sys, SensorSet::new(4, sensors).expect("valid sensor set"))
}

/// A seeded random instance: stable-ish random dynamics, PD process noise,
/// sensors with random rank-deficient measurement matrices, integer costs
/// in `0..=3` and a budget drawn between the cheapest and the most
/// expensive schedule.
pub fn random_instance(
    seed: u64,
    state_dim: usize,
    num_sensors: usize,
    horizon: usize,
) -> (LinearGaussianSystem<f64>, SensorSet<f64>, FeasibleSet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = state_dim;
    let a = DMatrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        base + rng.random_range(-0.4..0.4)
    });
    let qw = random_spd(&mut rng, n, 0.05);
    let c0 = random_spd(&mut rng, n, 0.5) * 2.0;
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let sys = LinearGaussianSystem::time_invariant(a, qw, mean, c0).expect("random system is valid");

    let sensors = (0..num_sensors)
        .map(|_| {
            let m = rng.random_range(1..=n.min(2));
            let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let r = random_spd(&mut rng, m, 0.1);
            let cost = rng.random_range(0..=3) as f64;
            Sensor::time_invariant(h, r, cost).expect("random sensor is valid")
        })
        .collect();
    let sensors = SensorSet::new(n, sensors).expect("random sensor set is valid");

    let costs = sensors.cost_matrix(1, horizon);
    let lo: f64 = costs.row_iter().map(|r| r.min()).sum();
    let hi: f64 = costs.row_iter().map(|r| r.max()).sum();
    let budget = (lo + rng.random_range(0.0..=1.0) * (hi - lo)).round().max(lo);
    let fs = FeasibleSet::new(costs, budget).expect("budget covers the cheapest schedule");
    (sys, sensors, fs)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * floor
}
