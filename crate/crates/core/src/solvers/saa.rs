//! Sample average approximation.
//!
//! `G(S) = (1/N) Σ_j cost(S, p^j)` is convex and piecewise linear in the
//! allowances. [`solve_saa`] minimises it over `S ≥ 0` with a projected
//! subgradient method; [`solve_saa_lp`] solves the equivalent two-stage LP
//! exactly and serves as a cross-check on small instances.

use serde::{Deserialize, Serialize};

use super::scenarios::ScenarioSet;
use crate::cost::{accumulate_subgradient, total_cost, CostParams, Schedule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};

/// Largest `N·n` accepted by [`solve_saa_lp`].
pub const SAA_LP_MAX_SIZE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `s_k = s0/√k` along the normalised subgradient; `s0` defaults to a
    /// tenth of the mean duration.
    Diminishing { s0: Option<f64> },
    /// Polyak steps towards a target level `best − δ`; `δ` is halved
    /// whenever the iterates travel `path_bound` (default: `n ×` mean
    /// duration) or `stall_iters` steps without reaching half of it.
    PolyakLevel { path_bound: Option<f64>, stall_iters: usize },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::PolyakLevel { path_bound: None, stall_iters: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaaConfig {
    pub max_iters: usize,
    pub step: StepRule,
    /// Relative optimality target; the level method stops once its gap
    /// estimate drops below `tolerance · max(1, |G|)`.
    pub tolerance: f64,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for SaaConfig {
    fn default() -> Self {
        SaaConfig { max_iters: 5000, step: StepRule::default(), tolerance: 1e-8, exec: Exec::default() }
    }
}

impl SaaConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tolerance > 0.0) {
            return Err(Error::invalid("SAA needs max_iters >= 1 and tolerance > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaaResult {
    pub schedule: Schedule,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the stopping test fired; the
    /// schedule is then the best iterate found.
    pub converged: bool,
}

/// `G(S)` for allowances `s` (length `n`, last entry ignored).
pub fn saa_objective(scenarios: &ScenarioSet, s: &[f64], costs: &CostParams, exec: Exec) -> f64 {
    let rows = scenarios.rows();
    exec.sum(&rows, |p| total_cost(s, p, costs)) / scenarios.len() as f64
}

/// `G(S)` and a subgradient, reduced in fixed chunk order.
fn value_and_subgradient(scenarios: &ScenarioSet, s: &[f64], costs: &CostParams, exec: Exec) -> (f64, Vec<f64>) {
    let rows = scenarios.rows();
    let n = s.len();
    let parts = exec.map_chunks(&rows, |chunk| {
        let mut g = vec![0.0; n];
        let mut v = 0.0;
        for p in chunk {
            v += total_cost(s, p, costs);
            accumulate_subgradient(s, p, costs, 1.0, &mut g);
        }
        (v, g)
    });
    let inv = 1.0 / scenarios.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    (value * inv, grad)
}

fn last_job_allowance(scenarios: &ScenarioSet) -> f64 {
    let n = scenarios.jobs();
    scenarios.iter().map(|p| p[n - 1]).sum::<f64>() / scenarios.len() as f64
}

pub fn solve_saa(scenarios: &ScenarioSet, costs: &CostParams, cfg: &SaaConfig) -> Result<SaaResult> {
    cfg.validate()?;
    let n = scenarios.jobs();
    let exec = cfg.exec;
    let mean_duration = scenarios.all_durations().iter().sum::<f64>() / (scenarios.len() * n) as f64;
    let scale = mean_duration.max(1e-12);

    // Only the first n-1 allowances are optimised; the last is pinned.
    let mut x = vec![0.0; n];
    x[n - 1] = last_job_allowance(scenarios);
    let (mut f, mut g) = value_and_subgradient(scenarios, &x, costs, exec);
    let mut best_x = x.clone();
    let mut best_f = f;
    let mut iterations = 0;
    let mut pool = CutPool::new(n - 1);
    pool.push(&x, f, &g);

    match cfg.step {
        StepRule::Diminishing { s0 } => {
            let s0 = s0.unwrap_or(mean_duration / 10.0);
            for k in 1..=cfg.max_iters {
                iterations = k;
                let dir = reduced_direction(&x, &g);
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                let step = s0 / (k as f64).sqrt() / norm;
                for i in 0..n - 1 {
                    x[i] = (x[i] - step * dir[i]).max(0.0);
                }
                (f, g) = value_and_subgradient(scenarios, &x, costs, exec);
                if f < best_f {
                    best_f = f;
                    best_x.clone_from(&x);
                    pool.push(&x, f, &g);
                }
            }
        }
        StepRule::PolyakLevel { path_bound, stall_iters } => {
            let bound = path_bound.unwrap_or(n as f64 * scale);
            // G >= 0, so the first gap estimate is half the starting value.
            let mut delta = (0.5 * f).max(cfg.tolerance * scale);
            let mut reference = best_f;
            let mut path = 0.0;
            let mut stall = 0usize;
            for k in 1..=cfg.max_iters {
                iterations = k;
                if best_f <= reference - 0.5 * delta {
                    reference = best_f;
                    path = 0.0;
                    stall = 0;
                } else if path > bound || stall > stall_iters {
                    delta *= 0.5;
                    reference = best_f;
                    path = 0.0;
                    stall = 0;
                    x.clone_from(&best_x);
                    (f, g) = value_and_subgradient(scenarios, &x, costs, exec);
                }
                if delta <= cfg.tolerance * best_f.abs().max(1.0) {
                    break;
                }
                let dir = reduced_direction(&x, &g);
                let norm2 = dir.iter().map(|d| d * d).sum::<f64>();
                if norm2 == 0.0 {
                    break;
                }
                let step = (f - (best_f - delta)) / norm2;
                let mut moved = 0.0;
                for i in 0..n - 1 {
                    let next = (x[i] - step * dir[i]).max(0.0);
                    moved += (next - x[i]).powi(2);
                    x[i] = next;
                }
                path += moved.sqrt();
                stall += 1;
                (f, g) = value_and_subgradient(scenarios, &x, costs, exec);
                if f < best_f {
                    best_f = f;
                    best_x.clone_from(&x);
                    pool.push(&x, f, &g);
                }
            }
        }
    }

    // Certify with cutting planes on the same oracle: the master LP over
    // the pooled subgradient cuts bounds G from below.
    let upper = scenarios.iter().map(|p| p[..n - 1].iter().sum::<f64>()).fold(0.0, f64::max);
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let (candidate, lower) = pool.minimise(upper)?;
        if best_f - lower <= cfg.tolerance * best_f.abs().max(1.0) {
            // the model's minimiser is often the exact vertex
            x[..n - 1].copy_from_slice(&candidate);
            let at_candidate = saa_objective(scenarios, &x, costs, exec);
            if at_candidate < best_f {
                best_f = at_candidate;
                best_x.clone_from(&x);
            }
            converged = true;
            break;
        }
        iterations += 1;
        x[..n - 1].copy_from_slice(&candidate);
        (f, g) = value_and_subgradient(scenarios, &x, costs, exec);
        if f < best_f {
            best_f = f;
            best_x.clone_from(&x);
        }
        pool.push(&x, f, &g);
        pool.prune(&candidate);
    }

    shrink_ties(scenarios, costs, exec, &mut best_x, best_f);
    let objective = saa_objective(scenarios, &best_x, costs, exec);
    Ok(SaaResult { schedule: Schedule::new(best_x)?, objective, iterations, converged })
}

/// Linearisations `G(y) ≥ f + g·(y − x)` over the free allowances.
struct CutPool {
    dim: usize,
    cuts: Vec<(Vec<f64>, f64)>,
}

impl CutPool {
    /// Cuts kept after pruning; the most slack ones go first.
    fn capacity(&self) -> usize {
        40 + 8 * self.dim
    }

    fn new(dim: usize) -> Self {
        CutPool { dim, cuts: Vec::new() }
    }

    /// Stores the cut as `(g, g·x − f)`.
    fn push(&mut self, x: &[f64], f: f64, g: &[f64]) {
        let g = g[..self.dim].to_vec();
        let offset = g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - f;
        self.cuts.push((g, offset));
    }

    fn model(&self, y: &[f64], cut: &(Vec<f64>, f64)) -> f64 {
        cut.0.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - cut.1
    }

    /// Minimiser of the cutting-plane model over `[0, upper]^dim` and the
    /// model value there.
    fn minimise(&self, upper: f64) -> Result<(Vec<f64>, f64)> {
        let t = self.dim;
        let mut objective = vec![0.0; t + 1];
        objective[t] = 1.0;
        let mut lp = LinearProgram::new(objective);
        for i in 0..t {
            lp.set_bounds(i, 0.0, upper);
        }
        lp.set_bounds(t, f64::NEG_INFINITY, f64::INFINITY);
        for (g, offset) in &self.cuts {
            let mut row = g.clone();
            row.push(-1.0);
            lp.add(row, Relation::Le, *offset);
        }
        let sol = solve_lp(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::NumericalBreakdown(format!("SAA cutting-plane master reported {:?}", sol.status)));
        }
        let y: Vec<f64> = sol.x[..t].iter().map(|v| v.clamp(0.0, upper)).collect();
        let lower = self.cuts.iter().map(|c| self.model(&y, c)).fold(f64::NEG_INFINITY, f64::max);
        Ok((y, lower))
    }

    fn prune(&mut self, at: &[f64]) {
        let cap = self.capacity();
        if self.cuts.len() <= cap {
            return;
        }
        let values: Vec<f64> = self.cuts.iter().map(|c| self.model(at, c)).collect();
        let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (0..self.cuts.len()).collect();
        order.sort_by(|&a, &b| (top - values[a]).total_cmp(&(top - values[b])).then(b.cmp(&a)));
        order.truncate(cap);
        order.sort_unstable();
        self.cuts = order.into_iter().map(|k| std::mem::take(&mut self.cuts[k])).collect();
    }
}

/// Subgradient restricted to the free allowances, with components that
/// would push an allowance below zero removed.
fn reduced_direction(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| if i == n - 1 || (x[i] <= 0.0 && g[i] > 0.0) { 0.0 } else { g[i] })
        .collect()
}

/// Moves each allowance, in job order, to the smallest value that keeps the
/// objective at `best` (bisection; `G` is convex along each coordinate).
fn shrink_ties(scenarios: &ScenarioSet, costs: &CostParams, exec: Exec, x: &mut [f64], best: f64) {
    let n = x.len();
    // slack at round-off level only
    let target = best + 16.0 * f64::EPSILON * best.abs().max(1.0);
    for i in 0..n - 1 {
        if x[i] <= 0.0 {
            continue;
        }
        let mut trial = x.to_vec();
        trial[i] = 0.0;
        if saa_objective(scenarios, &trial, costs, exec) <= target {
            x[i] = 0.0;
            continue;
        }
        let (mut lo, mut hi) = (0.0, x[i]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            trial[i] = mid;
            if saa_objective(scenarios, &trial, costs, exec) <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        x[i] = hi;
    }
}

/// Exact LP: allowances `S`, and per scenario `j` and job `i ≥ 2` waiting
/// and idling variables linked by `W_i − I_i = W_{i−1} + p_{i−1} − S_{i−1}`.
///
/// The recursion is encoded with equalities: with inequality rows and
/// `cI > cW` the LP could inflate a wait to shave a later idle.
pub fn solve_saa_lp(scenarios: &ScenarioSet, costs: &CostParams) -> Result<SaaResult> {
    let n = scenarios.jobs();
    let big_n = scenarios.len();
    if big_n * n > SAA_LP_MAX_SIZE {
        return Err(Error::TooLarge(format!("N·n = {} exceeds {SAA_LP_MAX_SIZE}", big_n * n)));
    }
    let m = n - 1;
    let nvars = m + 2 * m * big_n;
    let w_var = |j: usize, i: usize| m + 2 * (j * m + (i - 1));
    let i_var = |j: usize, i: usize| w_var(j, i) + 1;
    let mut objective = vec![0.0; nvars];
    for j in 0..big_n {
        for i in 1..n {
            objective[w_var(j, i)] = costs.wait_cost / big_n as f64;
            objective[i_var(j, i)] = costs.idle_cost / big_n as f64;
        }
    }
    let mut lp = LinearProgram::new(objective);
    for (j, p) in scenarios.iter().enumerate() {
        for i in 1..n {
            let mut terms = vec![(w_var(j, i), 1.0), (i_var(j, i), -1.0), (i - 1, 1.0)];
            if i >= 2 {
                terms.push((w_var(j, i - 1), -1.0));
            }
            lp.add_sparse(&terms, Relation::Eq, p[i - 1]);
        }
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        other => return Err(Error::NumericalBreakdown(format!("SAA LP reported {other:?}"))),
    }
    let mut s: Vec<f64> = sol.x[..m].iter().map(|v| v.max(0.0)).collect();
    s.push(last_job_allowance(scenarios));
    Ok(SaaResult { schedule: Schedule::new(s)?, objective: sol.objective, iterations: sol.iterations, converged: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::scenarios::ScenarioSource;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn set(rows: Vec<Vec<f64>>) -> ScenarioSet {
        ScenarioSet::new(rows, ScenarioSource::Historical).unwrap()
    }

    #[test]
    fn single_scenario_is_fit_exactly() {
        let sc = set(vec![vec![2.0, 0.5, 3.0, 1.5]]);
        let c = CostParams::new(1.0, 2.0).unwrap();
        let cfg = SaaConfig { tolerance: 1e-12, ..SaaConfig::default() };
        let r = solve_saa(&sc, &c, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.objective.abs() < 1e-9, "objective {}", r.objective);
        for (a, b) in r.schedule.as_slice().iter().zip([2.0, 0.5, 3.0, 1.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        let lp = solve_saa_lp(&sc, &c).unwrap();
        assert_abs_diff_eq!(lp.objective, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn two_point_flat_optimum_breaks_ties_low() {
        let sc = set(vec![vec![1.0, 0.0], vec![3.0, 0.0]]);
        let c = CostParams::new(1.0, 1.0).unwrap();
        // oracle: 1-D grid over S1
        let grid_min = (0..=4000)
            .map(|k| k as f64 * 1e-3)
            .map(|s| 0.5 * ((1.0f64 - s).abs() + (3.0f64 - s).abs()))
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(grid_min, 1.0, epsilon = 1e-12);
        let r = solve_saa(&sc, &c, &SaaConfig::default()).unwrap();
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.schedule.as_slice()[0], 1.0, epsilon = 1e-6);
        let lp = solve_saa_lp(&sc, &c).unwrap();
        assert_abs_diff_eq!(lp.objective, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn two_job_allowance_is_empirical_quantile() {
        let mut rng = crate::rng::seeded(4);
        let k = 400;
        let rows: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random_range(0.0..10.0), 1.0]).collect();
        let c = CostParams::new(3.0, 1.0).unwrap();
        let r = solve_saa(&set(rows.clone()), &c, &SaaConfig::default()).unwrap();
        let mut firsts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        firsts.sort_by(f64::total_cmp);
        // any point between the order statistics around q·K minimises the empirical loss
        let q = 0.75;
        let lo = firsts[(q * k as f64) as usize - 1];
        let hi = firsts[(q * k as f64) as usize];
        let s1 = r.schedule.as_slice()[0];
        assert!(s1 >= lo - 1e-6 && s1 <= hi + 1e-6, "{s1} not in [{lo}, {hi}]");
    }

    #[test]
    fn diminishing_step_rule_still_lands_near_the_optimum() {
        let mut rng = crate::rng::seeded(5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.random_range(1.0..5.0)).collect()).collect();
        let sc = set(rows);
        let c = CostParams::new(2.0, 1.0).unwrap();
        let cfg = SaaConfig { step: StepRule::Diminishing { s0: None }, ..SaaConfig::default() };
        let r = solve_saa(&sc, &c, &cfg).unwrap();
        let exact = solve_saa_lp(&sc, &c).unwrap();
        assert!(r.objective >= exact.objective - 1e-9);
        assert!((r.objective - exact.objective) / exact.objective < 1e-2);
    }

    #[test]
    fn subgradient_matches_lp_on_random_instances() {
        let mut rng = crate::rng::seeded(6);
        for _ in 0..10 {
            let n = rng.random_range(2..=5);
            let big_n = rng.random_range(1..=30);
            let rows: Vec<Vec<f64>> = (0..big_n).map(|_| (0..n).map(|_| rng.random_range(0.0..6.0)).collect()).collect();
            let sc = set(rows);
            let c = CostParams::new(rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)).unwrap();
            let a = solve_saa(&sc, &c, &SaaConfig::default()).unwrap();
            let b = solve_saa_lp(&sc, &c).unwrap();
            let rel = (a.objective - b.objective).abs() / b.objective.abs().max(1e-12);
            assert!(rel < 1e-4 || (a.objective - b.objective).abs() < 1e-9, "saa {} lp {}", a.objective, b.objective);
        }
    }

    #[test]
    fn lp_size_guard() {
        let rows = vec![vec![1.0; 5]; 401];
        let c = CostParams::new(1.0, 1.0).unwrap();
        assert!(matches!(solve_saa_lp(&set(rows), &c), Err(Error::TooLarge(_))));
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = crate::rng::seeded(8);
        let rows: Vec<Vec<f64>> = (0..1000).map(|_| (0..5).map(|_| rng.random_range(0.0..6.0)).collect()).collect();
        let sc = set(rows);
        let c = CostParams::new(1.0, 2.0).unwrap();
        let seq = solve_saa(&sc, &c, &SaaConfig { exec: Exec::Sequential, max_iters: 300, ..Default::default() }).unwrap();
        let par = solve_saa(&sc, &c, &SaaConfig { exec: Exec::Parallel, max_iters: 300, ..Default::default() }).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn rejects_bad_config() {
        let sc = set(vec![vec![1.0, 1.0]]);
        let c = CostParams::new(1.0, 1.0).unwrap();
        assert!(solve_saa(&sc, &c, &SaaConfig { max_iters: 0, ..Default::default() }).is_err());
        assert!(solve_saa(&sc, &c, &SaaConfig { tolerance: 0.0, ..Default::default() }).is_err());
    }
}
