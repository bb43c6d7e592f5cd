//! Optimal and baseline schedulers.
//!
//! [`bb_search`] is a depth-first branch-and-bound over the decision tree of
//! sensor choices. For a node with fixed prefix `u_{1:k}` every child `i`
//! (sensor `i` at step `k+1`) gets
//!
//! - `cost_i`, the cheapest total cost of any completion ([`min_possible_cost`]),
//! - `J_i = J(u_{1:k+1})`, the exact prefix value,
//! - `J_i^l = J_i + lower bound of the tail over steps `k+2..N`,
//! - `J_i^u = J_i + value of a converted binary tail` (BBC only).
//!
//! A child is admitted if `cost_i ≤ C` and `J_i ≤ J_min`; admitted children
//! are visited in ascending order of `J_i^l` and expanded if
//! `J_i^l ≤ J_min` and, for BBC, `J_i^l ≤ J_j^u` for every admitted sibling
//! `j`. BBL drops the upper bounds, BBZ also replaces the tail lower bound
//! by zero.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::convert::{convert_swapping, SwappingOptions};
use crate::error::{Error, Result};
use crate::model::{LinearGaussianSystem, Problem, Schedule, SensorSet};
use crate::objective::ObjectiveSpec;
use crate::relax::{solve_relaxed, FeasibleSet, RelaxOptions};
use crate::scalar::{lit, Scalar};

const PRUNE_SLACK: f64 = 1e-9;
const EXHAUSTIVE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BbVariant {
    /// Convex lower bounds and converted upper bounds.
    Bbc,
    /// Convex lower bounds only.
    Bbl,
    /// Zero tail bound.
    Bbz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Convex,
    Bbc,
    Bbl,
    Bbz,
    Greedy,
    GreedyStar,
    Exhaustive,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Convex,
        Method::Bbc,
        Method::Bbl,
        Method::Bbz,
        Method::Greedy,
        Method::GreedyStar,
        Method::Exhaustive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Convex => "convex",
            Method::Bbc => "bbc",
            Method::Bbl => "bbl",
            Method::Bbz => "bbz",
            Method::Greedy => "greedy",
            Method::GreedyStar => "greedy-star",
            Method::Exhaustive => "exhaustive",
        }
    }
}

impl From<BbVariant> for Method {
    fn from(v: BbVariant) -> Self {
        match v {
            BbVariant::Bbc => Method::Bbc,
            BbVariant::Bbl => Method::Bbl,
            BbVariant::Bbz => Method::Bbz,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "greedy*" && *m == Method::GreedyStar))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    /// Root plus every tree node whose prefix value `J_i` was evaluated.
    pub nodes_visited: usize,
    /// Internal nodes whose children were generated.
    pub nodes_expanded: usize,
    pub pruned_by_cost: usize,
    pub pruned_by_incumbent: usize,
    pub pruned_by_lower_bound: usize,
    pub pruned_by_neighbor_upper: usize,
    pub relaxations_solved: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    Cost,
    Incumbent,
    LowerBound,
    NeighborUpper,
}

/// A pruned subtree, identified by its prefix (the pruned sensor last).
#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent<T: Scalar> {
    pub prefix: Vec<usize>,
    pub reason: PruneReason,
    /// Value that justified the prune: the minimum possible cost for
    /// [`PruneReason::Cost`], `J_i` or `J_i^l` otherwise.
    pub bound: T,
    /// Incumbent (or smallest sibling upper bound) it was compared to.
    pub threshold: T,
}

#[derive(Debug, Clone)]
pub struct SearchResult<T: Scalar> {
    pub schedule: Schedule,
    /// `J(schedule)`
    pub j_opt: T,
    pub stats: SearchStats,
    pub method: Method,
    /// Relaxed optimum, for methods that solve the full relaxation.
    pub lower_bound: Option<T>,
    /// `J_min` after each incumbent update.
    pub incumbent_trace: Vec<T>,
    /// Populated when [`SearchOptions::record_prunes`] is set.
    pub prune_log: Vec<PruneEvent<T>>,
}

#[derive(Debug, Clone)]
pub struct SearchOptions<T: Scalar> {
    pub relax: RelaxOptions<T>,
    /// Swap trials for the BBC upper bounds; `S·n` for a tail of `n` steps
    /// if unset.
    pub swap_trials: Option<usize>,
    /// Warm-start each tail relaxation from the parent's relaxed tail.
    pub warm_start: bool,
    pub record_prunes: bool,
}

impl<T: Scalar> Default for SearchOptions<T> {
    fn default() -> Self {
        Self {
            relax: RelaxOptions::default(),
            swap_trials: None,
            warm_start: true,
            record_prunes: false,
        }
    }
}

fn check_problem<T: Scalar>(problem: &Problem<'_, T>, fs: &FeasibleSet<T>) -> Result<()> {
    if fs.steps() == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if fs.width() != problem.num_sensors() {
        return Err(Error::Config(format!(
            "cost matrix has {} columns, expected {} sensors",
            fs.width(),
            problem.num_sensors()
        )));
    }
    problem.check_horizon(fs.steps())
}

/// `Σ_{n≤k} c_nᵀu_n + c_{k+1,i} + Σ_{n≥k+2} min_j c_{n,j}` for a prefix of
/// length `k`.
pub fn min_possible_cost<T: Scalar>(prefix: &[usize], candidate: usize, fs: &FeasibleSet<T>) -> T {
    let k = prefix.len();
    let costs = fs.costs();
    let spent = prefix
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (r, &i)| acc + costs[(r, i)]);
    let tail = ((k + 1)..fs.steps()).fold(T::zero(), |acc, r| acc + fs.row_min(r));
    spent + costs[(k, candidate)] + tail
}

struct Child<T: Scalar> {
    sensor: usize,
    cov: DMatrix<T>,
    value: T,
    spent: T,
    lower: T,
    upper: T,
    relaxed_tail: Option<DMatrix<T>>,
}

struct Frame<T: Scalar> {
    prefix: Vec<usize>,
    children: Vec<Child<T>>,
    next: usize,
    min_upper: T,
}

struct BranchAndBound<'p, 'a, T: Scalar> {
    problem: &'p Problem<'a, T>,
    fs: &'p FeasibleSet<T>,
    spec: ObjectiveSpec,
    variant: BbVariant,
    opts: &'p SearchOptions<T>,
    stats: SearchStats,
    j_min: T,
    incumbent: Option<Vec<usize>>,
    incumbent_trace: Vec<T>,
    prune_log: Vec<PruneEvent<T>>,
}

impl<T: Scalar> BranchAndBound<'_, '_, T> {
    fn slack() -> T {
        lit(PRUNE_SLACK)
    }

    fn prune(&mut self, prefix: &[usize], sensor: usize, reason: PruneReason, bound: T, threshold: T) {
        match reason {
            PruneReason::Cost => self.stats.pruned_by_cost += 1,
            PruneReason::Incumbent => self.stats.pruned_by_incumbent += 1,
            PruneReason::LowerBound => self.stats.pruned_by_lower_bound += 1,
            PruneReason::NeighborUpper => self.stats.pruned_by_neighbor_upper += 1,
        }
        if self.opts.record_prunes {
            let mut p = prefix.to_vec();
            p.push(sensor);
            self.prune_log.push(PruneEvent {
                prefix: p,
                reason,
                bound,
                threshold,
            });
        }
    }

    /// Bounds of the tail after a child at row `row` with covariance `cov`.
    fn tail_bounds(
        &mut self,
        row: usize,
        cov: &DMatrix<T>,
        spent: T,
        warm: Option<&DMatrix<T>>,
    ) -> Result<(T, T, Option<DMatrix<T>>)> {
        let n = self.fs.steps();
        if row + 1 == n || self.variant == BbVariant::Bbz {
            let upper = if row + 1 == n {
                T::zero()
            } else {
                T::max_value().unwrap()
            };
            return Ok((T::zero(), upper, None));
        }
        let tail_problem = self.problem.tail(row + 1, cov.clone());
        let tail_fs = self.fs.tail(row + 1, spent)?;
        let mut relax_opts = self.opts.relax.clone();
        relax_opts.initial = if self.opts.warm_start { warm.cloned() } else { None };
        self.stats.relaxations_solved += 1;
        let sol = match solve_relaxed(&tail_problem, &tail_fs, self.spec, &relax_opts) {
            Ok(sol) => sol,
            // projection trouble only weakens the bound to the trivial one
            Err(Error::NoConvergence { .. }) => {
                return Ok((T::zero(), T::max_value().unwrap(), None));
            }
            Err(e) => return Err(e),
        };
        let lower = sol.certified_lower.max(T::zero());
        let upper = if self.variant == BbVariant::Bbc {
            let trials = self.opts.swap_trials.unwrap_or(tail_fs.width() * tail_fs.steps());
            let conv = convert_swapping(
                &sol.u_star,
                &tail_fs,
                &tail_problem,
                self.spec,
                SwappingOptions {
                    max_trials: Some(trials),
                },
            )?;
            conv.j_upper
        } else {
            T::max_value().unwrap()
        };
        Ok((lower, upper, Some(sol.u_star.into_matrix())))
    }

    /// Generates, bounds and sorts the admitted children of a node.
    fn expand(
        &mut self,
        prefix: Vec<usize>,
        cov: &DMatrix<T>,
        value: T,
        spent: T,
        warm: Option<&DMatrix<T>>,
    ) -> Result<Frame<T>> {
        let row = prefix.len();
        let n = self.fs.steps();
        let budget = self.fs.budget();
        let child_warm = warm
            .filter(|w| w.nrows() > 1)
            .map(|w| w.rows(1, w.nrows() - 1).into_owned());
        let mut children = Vec::new();
        for sensor in 0..self.problem.num_sensors() {
            let cost = min_possible_cost(&prefix, sensor, self.fs);
            if cost > budget {
                self.prune(&prefix, sensor, PruneReason::Cost, cost, budget);
                continue;
            }
            self.stats.nodes_visited += 1;
            let out = self.problem.step_with(row, cov, sensor)?;
            let g =
                self.problem
                    .step_value(row, &out, self.spec, |i| if i == sensor { T::one() } else { T::zero() })?;
            let child_value = value + g;
            if child_value > self.j_min + Self::slack() {
                self.prune(&prefix, sensor, PruneReason::Incumbent, child_value, self.j_min);
                continue;
            }
            let child_spent = spent + self.fs.costs()[(row, sensor)];
            let (tail_lower, tail_upper, relaxed_tail) =
                self.tail_bounds(row, &out.posterior, child_spent, child_warm.as_ref())?;
            let upper = if tail_upper == T::max_value().unwrap() {
                tail_upper
            } else {
                child_value + tail_upper
            };
            children.push(Child {
                sensor,
                cov: out.posterior,
                value: child_value,
                spent: child_spent,
                lower: child_value + tail_lower,
                upper,
                relaxed_tail,
            });
        }
        debug_assert!(row < n);
        children.sort_by(|a, b| a.lower.partial_cmp(&b.lower).unwrap_or(std::cmp::Ordering::Equal));
        let min_upper = children.iter().fold(T::max_value().unwrap(), |acc, c| acc.min(c.upper));
        self.stats.nodes_expanded += 1;
        Ok(Frame {
            prefix,
            children,
            next: 0,
            min_upper,
        })
    }

    fn run(&mut self) -> Result<()> {
        let n = self.fs.steps();
        self.stats.nodes_visited = 1;
        let root_cov = self.problem.initial_cov().clone();
        let root = self.expand(Vec::new(), &root_cov, T::zero(), T::zero(), None)?;
        let mut stack = vec![root];
        while let Some(frame) = stack.last_mut() {
            if frame.next >= frame.children.len() {
                stack.pop();
                continue;
            }
            let idx = frame.next;
            frame.next += 1;
            let (sensor, lower, min_upper) = {
                let c = &frame.children[idx];
                (c.sensor, c.lower, frame.min_upper)
            };
            let prefix = frame.prefix.clone();
            if lower > self.j_min + Self::slack() {
                self.prune(&prefix, sensor, PruneReason::LowerBound, lower, self.j_min);
                continue;
            }
            if self.variant == BbVariant::Bbc && lower > min_upper + Self::slack() {
                self.prune(&prefix, sensor, PruneReason::NeighborUpper, lower, min_upper);
                continue;
            }
            let child = &mut stack.last_mut().unwrap().children[idx];
            let mut child_prefix = prefix;
            child_prefix.push(sensor);
            if child_prefix.len() == n {
                if self.incumbent.is_none() || child.value < self.j_min {
                    self.j_min = child.value;
                    self.incumbent = Some(child_prefix);
                    self.incumbent_trace.push(child.value);
                }
                continue;
            }
            let cov = std::mem::replace(&mut child.cov, DMatrix::zeros(0, 0));
            let warm = child.relaxed_tail.take();
            let (value, spent) = (child.value, child.spent);
            let next = self.expand(child_prefix, &cov, value, spent, warm.as_ref())?;
            stack.push(next);
        }
        Ok(())
    }
}

fn finish<T: Scalar>(
    problem: &Problem<'_, T>,
    spec: ObjectiveSpec,
    picks: Vec<usize>,
    method: Method,
    mut stats: SearchStats,
    started: Instant,
) -> Result<SearchResult<T>> {
    let schedule = Schedule::new(picks, problem.num_sensors())?;
    let j_opt = problem.objective(&schedule, spec)?.total;
    stats.wall_time = started.elapsed();
    Ok(SearchResult {
        schedule,
        j_opt,
        stats,
        method,
        lower_bound: None,
        incumbent_trace: Vec::new(),
        prune_log: Vec::new(),
    })
}

/// Branch-and-bound on a full-horizon problem. Returns an optimal schedule.
pub fn bb_search_problem<T: Scalar>(
    problem: &Problem<'_, T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
    variant: BbVariant,
    opts: &SearchOptions<T>,
) -> Result<SearchResult<T>> {
    spec.require_convex()?;
    check_problem(problem, fs)?;
    let started = Instant::now();
    let mut bb = BranchAndBound {
        problem,
        fs,
        spec,
        variant,
        opts,
        stats: SearchStats::default(),
        j_min: T::max_value().unwrap(),
        incumbent: None,
        incumbent_trace: Vec::new(),
        prune_log: Vec::new(),
    };
    bb.run()?;
    let picks = bb
        .incumbent
        .take()
        .ok_or_else(|| Error::Infeasible("no feasible schedule found".into()))?;
    let mut result = finish(problem, spec, picks, variant.into(), bb.stats, started)?;
    result.incumbent_trace = bb.incumbent_trace;
    result.prune_log = bb.prune_log;
    Ok(result)
}

pub fn bb_search<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
    variant: BbVariant,
    opts: &SearchOptions<T>,
) -> Result<SearchResult<T>> {
    bb_search_problem(&Problem::new(sys, sensors)?, fs, spec, variant, opts)
}

/// Enumerates every budget-feasible schedule; lexicographically first
/// minimizer on ties. Refuses problems with more than 10^7 schedules.
pub fn exhaustive<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
) -> Result<SearchResult<T>> {
    let problem = Problem::new(sys, sensors)?;
    check_problem(&problem, fs)?;
    let (n, width) = (fs.steps(), fs.width());
    let leaves = (width as f64).powi(n as i32);
    if leaves > EXHAUSTIVE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "{width}^{n} = {leaves:e} schedules exceed the enumeration limit of {EXHAUSTIVE_LIMIT:e}"
        )));
    }
    let started = Instant::now();
    let costs = fs.costs();
    // cheapest completion after each row
    let mut tail_min = vec![T::zero(); n + 1];
    for r in (0..n).rev() {
        tail_min[r] = tail_min[r + 1] + fs.row_min(r);
    }

    let mut stats = SearchStats::default();
    let mut covs = vec![problem.initial_cov().clone(); n + 1];
    let mut values = vec![T::zero(); n + 1];
    let mut spent = vec![T::zero(); n + 1];
    let mut picks = vec![0usize; n];
    let mut best: Option<(Vec<usize>, T)> = None;
    // next sensor to try at each depth
    let mut stack = vec![0usize];
    while let Some(&next) = stack.last() {
        let depth = stack.len() - 1;
        if next >= width {
            stack.pop();
            continue;
        }
        *stack.last_mut().unwrap() += 1;
        let cost = spent[depth] + costs[(depth, next)];
        if cost + tail_min[depth + 1] > fs.budget() {
            stats.pruned_by_cost += 1;
            continue;
        }
        stats.nodes_visited += 1;
        let out = problem.step_with(depth, &covs[depth], next)?;
        let g = problem.step_value(depth, &out, spec, |i| if i == next { T::one() } else { T::zero() })?;
        covs[depth + 1] = out.posterior;
        values[depth + 1] = values[depth] + g;
        spent[depth + 1] = cost;
        picks[depth] = next;
        if depth + 1 == n {
            if best.as_ref().is_none_or(|(_, b)| values[n] < *b) {
                best = Some((picks.clone(), values[n]));
            }
        } else {
            stats.nodes_expanded += 1;
            stack.push(0);
        }
    }
    let (picks, _) = best.ok_or_else(|| Error::Infeasible("no schedule satisfies the budget".into()))?;
    finish(&problem, spec, picks, Method::Exhaustive, stats, started)
}

/// Myopic scheduling: at each step the sensor with the smallest `g_k` among
/// those that still allow a budget-feasible completion. With `star`, `g_k`
/// is weighted by `1 + c_{k,i}`. Ties go to the cheaper, then the lower
/// index sensor. The reported `j_opt` is the unweighted objective.
pub fn greedy<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
    star: bool,
) -> Result<SearchResult<T>> {
    let problem = Problem::new(sys, sensors)?;
    check_problem(&problem, fs)?;
    let started = Instant::now();
    let plain = ObjectiveSpec::new(spec.kind);
    let step_spec = ObjectiveSpec {
        kind: spec.kind,
        greedy_star_weighting: star,
    };
    let mut stats = SearchStats::default();
    let mut picks = Vec::with_capacity(fs.steps());
    let mut cov = problem.initial_cov().clone();
    for row in 0..fs.steps() {
        let mut best: Option<(usize, T, T, DMatrix<T>)> = None;
        for sensor in 0..fs.width() {
            if min_possible_cost(&picks, sensor, fs) > fs.budget() {
                stats.pruned_by_cost += 1;
                continue;
            }
            stats.nodes_visited += 1;
            let out = problem.step_with(row, &cov, sensor)?;
            let g = problem.step_value(row, &out, step_spec, |i| if i == sensor { T::one() } else { T::zero() })?;
            let c = fs.costs()[(row, sensor)];
            let better = match &best {
                None => true,
                Some((_, bg, bc, _)) => g < *bg || (g == *bg && c < *bc),
            };
            if better {
                best = Some((sensor, g, c, out.posterior));
            }
        }
        let (sensor, _, _, next) =
            best.ok_or_else(|| Error::Infeasible(format!("no affordable sensor at step {}", row + 1)))?;
        picks.push(sensor);
        cov = next;
        stats.nodes_expanded += 1;
    }
    let method = if star { Method::GreedyStar } else { Method::Greedy };
    finish(&problem, plain, picks, method, stats, started)
}

/// Solves the full relaxation once and converts it by swapping with
/// `S·N` trials.
pub fn convex<T: Scalar>(
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
    opts: &SearchOptions<T>,
) -> Result<SearchResult<T>> {
    let problem = Problem::new(sys, sensors)?;
    check_problem(&problem, fs)?;
    let started = Instant::now();
    let sol = solve_relaxed(&problem, fs, spec, &opts.relax)?;
    let conv = convert_swapping(
        &sol.u_star,
        fs,
        &problem,
        spec,
        SwappingOptions {
            max_trials: opts.swap_trials,
        },
    )?;
    let stats = SearchStats {
        nodes_visited: 1,
        relaxations_solved: 1,
        ..Default::default()
    };
    let mut result = finish(
        &problem,
        spec,
        conv.schedule.picks().to_vec(),
        Method::Convex,
        stats,
        started,
    )?;
    result.lower_bound = Some(sol.j_lower);
    Ok(result)
}

/// Runs any method by name with shared options.
pub fn run_method<T: Scalar>(
    method: Method,
    sys: &LinearGaussianSystem<T>,
    sensors: &SensorSet<T>,
    fs: &FeasibleSet<T>,
    spec: ObjectiveSpec,
    opts: &SearchOptions<T>,
) -> Result<SearchResult<T>> {
    match method {
        Method::Convex => convex(sys, sensors, fs, spec, opts),
        Method::Bbc => bb_search(sys, sensors, fs, spec, BbVariant::Bbc, opts),
        Method::Bbl => bb_search(sys, sensors, fs, spec, BbVariant::Bbl, opts),
        Method::Bbz => bb_search(sys, sensors, fs, spec, BbVariant::Bbz, opts),
        Method::Greedy => greedy(sys, sensors, fs, spec, false),
        Method::GreedyStar => greedy(sys, sensors, fs, spec, true),
        Method::Exhaustive => exhaustive(sys, sensors, fs, spec),
    }
}
