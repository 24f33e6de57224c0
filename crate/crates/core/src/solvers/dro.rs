//! Moment-based distributionally robust scheduling by an exchange method.
//!
//! For distributions on the grid `∏ L_i` with prescribed marginal moments,
//! LP duality turns the inner worst-case expectation into
//!
//! ```text
//! min  α₀ + Σ_{i,q} α_iq·M_iq
//! s.t. α₀ + Σ_{i,q} α_iq·p_i^q ≥ cost(S, p)   for every grid point p
//! ```
//!
//! jointly with the allowances `S ≥ 0`. The master keeps only the points
//! generated so far, each encoded exactly through its own waiting/idling
//! recursion rows; separation scans the full grid for the point with the
//! largest surplus `cost(S*, p) − α₀* − Σ α*_iq p_i^q`.

use serde::{Deserialize, Serialize};

use crate::cost::{total_cost, CostParams, Schedule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};

/// Largest joint grid that separation will enumerate.
pub const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    grids: Vec<Vec<f64>>,
    orders: Vec<u32>,
    /// `targets[i][k]` is the moment of order `orders[k]` for job `i`.
    targets: Vec<Vec<f64>>,
    /// A moment-matching distribution on each grid (weights per grid point).
    #[serde(skip)]
    witnesses: Vec<Vec<f64>>,
}

impl AmbiguitySet {
    /// Validates the grids and checks, job by job, that some distribution on
    /// `L_i` matches the targets within `1e-9` (relative to the moment size).
    pub fn new(grids: Vec<Vec<f64>>, orders: Vec<u32>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if grids.len() < 2 {
            return Err(Error::invalid("need grids for at least 2 jobs"));
        }
        if orders.is_empty() || orders.contains(&0) {
            return Err(Error::invalid("moment orders must be positive integers"));
        }
        if targets.len() != grids.len() {
            return Err(Error::LengthMismatch { expected: grids.len(), actual: targets.len() });
        }
        for (i, (grid, t)) in grids.iter().zip(&targets).enumerate() {
            if grid.is_empty() {
                return Err(Error::invalid(format!("grid of job {i} is empty")));
            }
            if grid.iter().any(|x| !x.is_finite() || *x < 0.0) || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("grid of job {i} must be strictly ascending and non-negative")));
            }
            if t.len() != orders.len() {
                return Err(Error::LengthMismatch { expected: orders.len(), actual: t.len() });
            }
        }
        let witnesses = grids
            .iter()
            .zip(&targets)
            .enumerate()
            .map(|(i, (grid, t))| moment_witness(grid, &orders, t).map_err(|e| match e {
                Error::Unrealizable(msg) => Error::Unrealizable(format!("job {i}: {msg}")),
                other => other,
            }))
            .collect::<Result<Vec<_>>>()?;
        Ok(AmbiguitySet { grids, orders, targets, witnesses })
    }

    pub fn jobs(&self) -> usize {
        self.grids.len()
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn grid_size(&self) -> usize {
        self.grids.iter().fold(1usize, |acc, g| acc.saturating_mul(g.len()))
    }

    /// The first-moment target of job `i`, or the witness mean.
    fn mean_of(&self, i: usize) -> f64 {
        match self.orders.iter().position(|&q| q == 1) {
            Some(k) => self.targets[i][k],
            None => self.grids[i].iter().zip(&self.witnesses[i]).map(|(l, w)| l * w).sum(),
        }
    }
}

/// Finds weights on `grid` matching the moment targets by minimising the
/// total absolute moment error with the simplex solver.
fn moment_witness(grid: &[f64], orders: &[u32], targets: &[f64]) -> Result<Vec<f64>> {
    let g = grid.len();
    let k = orders.len();
    // variables: weights (g), then (e+, e-) per moment
    let mut objective = vec![0.0; g + 2 * k];
    objective[g..].iter_mut().for_each(|c| *c = 1.0);
    let mut lp = LinearProgram::new(objective);
    lp.add_sparse(&(0..g).map(|l| (l, 1.0)).collect::<Vec<_>>(), Relation::Eq, 1.0);
    for (m, (&q, &target)) in orders.iter().zip(targets).enumerate() {
        let scale = target.abs().max(1.0);
        let mut terms: Vec<(usize, f64)> = grid.iter().enumerate().map(|(l, x)| (l, x.powi(q as i32) / scale)).collect();
        terms.push((g + 2 * m, 1.0));
        terms.push((g + 2 * m + 1, -1.0));
        lp.add_sparse(&terms, Relation::Eq, target / scale);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal || sol.objective > 1e-9 {
        return Err(Error::Unrealizable(format!(
            "no distribution on the grid matches the moments (relative error {})",
            sol.objective
        )));
    }
    Ok(sol.x[..g].iter().map(|w| w.max(0.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroConfig {
    /// Relative surplus tolerance, in (0, 1).
    pub epsilon: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for DroConfig {
    fn default() -> Self {
        DroConfig { epsilon: 1e-4, max_iters: 500, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub point: Vec<f64>,
    /// Cost of the point under the master schedule that generated it.
    pub cost: f64,
    /// Surplus at generation time (0 for initial points).
    pub surplus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroResult {
    pub schedule: Schedule,
    pub worst_case_value: f64,
    pub cuts: Vec<Cut>,
    pub iterations: usize,
    pub master_values: Vec<f64>,
    pub final_surplus: f64,
}

pub fn solve_dro(amb: &AmbiguitySet, costs: &CostParams, cfg: &DroConfig) -> Result<DroResult> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {}", cfg.epsilon)));
    }
    let grid_size = amb.grid_size();
    if grid_size > MAX_GRID_POINTS {
        return Err(Error::TooLarge(format!("joint grid has {grid_size} points (max {MAX_GRID_POINTS})")));
    }
    let n = amb.jobs();
    let mut cuts: Vec<Cut> = comonotone_points(amb)
        .into_iter()
        .map(|point| Cut { point, cost: f64::NAN, surplus: 0.0 })
        .collect();
    let mut master_values = Vec::new();
    let mut iterations = 0;
    // indices into `cuts` of the points currently in the master
    let mut active: Vec<usize> = (0..cuts.len()).collect();
    let mut last_pruned_at = f64::NEG_INFINITY;
    loop {
        iterations += 1;
        let points: Vec<&[f64]> = active.iter().map(|&c| cuts[c].point.as_slice()).collect();
        let master = solve_master(amb, costs, &points)?;
        master_values.push(master.value);
        for cut in cuts.iter_mut().filter(|c| c.cost.is_nan()) {
            cut.cost = total_cost(&master.allowances, &cut.point, costs);
        }
        let (point, surplus) = separate(amb, costs, &master, cfg.exec);
        let threshold = cfg.epsilon * master.value.abs().max(1.0);
        if surplus <= threshold {
            let mut s = master.allowances;
            s[n - 1] = amb.mean_of(n - 1);
            return Ok(DroResult {
                schedule: Schedule::new(s)?,
                worst_case_value: master.value,
                cuts,
                iterations,
                master_values,
                final_surplus: surplus,
            });
        }
        if iterations >= cfg.max_iters {
            return Err(Error::NotConverged { iterations, best_objective: master.value });
        }
        // A point whose row is slack at the current optimum can leave the
        // master without changing its value, since the LP is convex. Doing
        // so only after a strict increase keeps degenerate masters from
        // cycling.
        let tol = 1e-9 * master.value.abs().max(1.0);
        if master.value > last_pruned_at + tol {
            active.retain(|&c| master.slack(amb, costs, &cuts[c].point) <= tol);
            last_pruned_at = master.value;
        }
        let cost = total_cost(&master.allowances, &point, costs);
        cuts.push(Cut { point, cost, surplus });
        active.push(cuts.len() - 1);
    }
}

struct Master {
    allowances: Vec<f64>,
    alpha0: f64,
    /// `alpha[i][k]` pairs with `orders[k]`.
    alpha: Vec<Vec<f64>>,
    value: f64,
}

impl Master {
    /// `α₀ + Σ α_iq p_i^q − cost(S, p)` with the exact recursion cost.
    fn slack(&self, amb: &AmbiguitySet, costs: &CostParams, point: &[f64]) -> f64 {
        let mut v = self.alpha0 - total_cost(&self.allowances, point, costs);
        for (i, &p) in point.iter().enumerate() {
            for (&q, a) in amb.orders.iter().zip(&self.alpha[i]) {
                v += a * p.powi(q as i32);
            }
        }
        v
    }
}

/// Joint points of the comonotone coupling of the per-job witness
/// distributions. They support a distribution matching every moment, which
/// keeps the first master bounded.
fn comonotone_points(amb: &AmbiguitySet) -> Vec<Vec<f64>> {
    let n = amb.jobs();
    let cdfs: Vec<Vec<(f64, f64)>> = amb
        .grids
        .iter()
        .zip(&amb.witnesses)
        .map(|(grid, w)| {
            let mut acc = 0.0;
            grid.iter().zip(w).filter(|(_, &w)| w > 1e-12).map(|(&x, &w)| {
                acc += w;
                (x, acc)
            }).collect()
        })
        .collect();
    let mut breakpoints: Vec<f64> = cdfs.iter().flat_map(|c| c.iter().map(|&(_, f)| f)).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut prev = 0.0;
    for &u in &breakpoints {
        let mid = 0.5 * (prev + u.min(1.0));
        prev = u;
        let point: Vec<f64> = (0..n)
            .map(|i| {
                let c = &cdfs[i];
                c.iter().find(|&&(_, f)| f >= mid).unwrap_or_else(|| c.last().expect("non-empty witness")).0
            })
            .collect();
        if points.last() != Some(&point) {
            points.push(point);
        }
    }
    points
}

fn solve_master(amb: &AmbiguitySet, costs: &CostParams, cuts: &[&[f64]]) -> Result<Master> {
    let n = amb.jobs();
    let m = n - 1;
    let k = amb.orders.len();
    // layout: S (m) | alpha0 | alpha (n·k) | per cut: (W_i, I_i) for i = 1..n-1
    let alpha0 = m;
    let alpha = |i: usize, q: usize| m + 1 + i * k + q;
    let base = m + 1 + n * k;
    let w_var = |c: usize, i: usize| base + 2 * (c * m + (i - 1));
    let nvars = base + 2 * m * cuts.len();

    // α_iq is carried as α_iq·scale[i][q] so moment columns have unit size
    let scale: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let top = amb.grids[i].iter().fold(0.0f64, |a, &l| a.max(l.abs()));
            amb.orders.iter().map(|&q| top.powi(q as i32).max(1.0)).collect()
        })
        .collect();
    let mut objective = vec![0.0; nvars];
    objective[alpha0] = 1.0;
    for i in 0..n {
        for q in 0..k {
            objective[alpha(i, q)] = amb.targets[i][q] / scale[i][q];
        }
    }
    let mut lp = LinearProgram::new(objective);
    for j in alpha0..base {
        lp.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }
    for (c, cut) in cuts.iter().enumerate() {
        // α₀ + Σ α_iq p_i^q − cW ΣW − cI ΣI ≥ 0
        let mut terms = vec![(alpha0, 1.0)];
        for i in 0..n {
            for (q, &order) in amb.orders.iter().enumerate() {
                terms.push((alpha(i, q), cut[i].powi(order as i32) / scale[i][q]));
            }
        }
        for i in 1..n {
            terms.push((w_var(c, i), -costs.wait_cost));
            terms.push((w_var(c, i) + 1, -costs.idle_cost));
        }
        lp.add_sparse(&terms, Relation::Ge, 0.0);
        // W_i − I_i − W_{i−1} + S_{i−1} = p_{i−1}
        for i in 1..n {
            let mut terms = vec![(w_var(c, i), 1.0), (w_var(c, i) + 1, -1.0), (i - 1, 1.0)];
            if i >= 2 {
                terms.push((w_var(c, i - 1), -1.0));
            }
            lp.add_sparse(&terms, Relation::Eq, cut[i - 1]);
        }
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => {
            return Err(Error::NumericalBreakdown("DRO master is unbounded; moment targets not supported by the cuts".into()))
        }
        LpStatus::Infeasible => return Err(Error::NumericalBreakdown("DRO master is infeasible".into())),
    }
    let mut allowances: Vec<f64> = sol.x[..m].iter().map(|v| v.max(0.0)).collect();
    allowances.push(0.0);
    Ok(Master {
        allowances,
        alpha0: sol.x[alpha0],
        alpha: (0..n).map(|i| (0..k).map(|q| sol.x[alpha(i, q)] / scale[i][q]).collect()).collect(),
        value: sol.objective,
    })
}

/// Exhaustive scan of the joint grid. The last job's duration does not
/// affect cost, so its coordinate is chosen independently. Ties go to the
/// lowest mixed-radix index.
fn separate(amb: &AmbiguitySet, costs: &CostParams, master: &Master, exec: Exec) -> (Vec<f64>, f64) {
    let n = amb.jobs();
    // moment penalty Σ_q α_iq l^q for every grid point of every job
    let penalty: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            amb.grids[i]
                .iter()
                .map(|&l| amb.orders.iter().zip(&master.alpha[i]).map(|(&q, a)| a * l.powi(q as i32)).sum())
                .collect()
        })
        .collect();
    let (last_idx, last_pen) = penalty[n - 1]
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (l, &v)| if v < acc.1 { (l, v) } else { acc });

    let radices: Vec<usize> = amb.grids[..n - 1].iter().map(Vec::len).collect();
    let total: usize = radices.iter().product();
    let chunk = 4096usize;
    let chunks = total.div_ceil(chunk);
    let best_per_chunk = exec.map_range(chunks, |c| {
        let start = c * chunk;
        let end = (start + chunk).min(total);
        let mut digits = vec![0usize; n - 1];
        let mut rem = start;
        for i in (0..n - 1).rev() {
            digits[i] = rem % radices[i];
            rem /= radices[i];
        }
        let mut p = vec![0.0; n];
        p[n - 1] = amb.grids[n - 1][last_idx];
        let mut best = (f64::NEG_INFINITY, start);
        for idx in start..end {
            let mut pen = last_pen + master.alpha0;
            for i in 0..n - 1 {
                p[i] = amb.grids[i][digits[i]];
                pen += penalty[i][digits[i]];
            }
            let v = total_cost(&master.allowances, &p, costs) - pen;
            if v > best.0 {
                best = (v, idx);
            }
            // increment mixed-radix counter
            for i in (0..n - 1).rev() {
                digits[i] += 1;
                if digits[i] < radices[i] {
                    break;
                }
                digits[i] = 0;
            }
        }
        best
    });
    let (surplus, idx) = best_per_chunk
        .into_iter()
        .fold((f64::NEG_INFINITY, 0), |acc, b| if b.0 > acc.0 { b } else { acc });
    let mut point = vec![0.0; n];
    let mut rem = idx;
    for i in (0..n - 1).rev() {
        point[i] = amb.grids[i][rem % radices[i]];
        rem /= radices[i];
    }
    point[n - 1] = amb.grids[n - 1][last_idx];
    (point, surplus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn costs(w: f64, i: f64) -> CostParams {
        CostParams::new(w, i).unwrap()
    }

    #[test]
    fn singleton_grids_reproduce_the_deterministic_schedule() {
        let mu = [1.5, 2.0, 0.5];
        let amb = AmbiguitySet::new(mu.iter().map(|&m| vec![m]).collect(), vec![1], mu.iter().map(|&m| vec![m]).collect())
            .unwrap();
        let r = solve_dro(&amb, &costs(1.0, 3.0), &DroConfig::default()).unwrap();
        assert_abs_diff_eq!(r.worst_case_value, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.schedule.as_slice()[0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.schedule.as_slice()[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn two_point_support_forces_half_half() {
        let amb = AmbiguitySet::new(vec![vec![0.0, 2.0], vec![1.0]], vec![1], vec![vec![1.0], vec![1.0]]).unwrap();
        let r = solve_dro(&amb, &costs(1.0, 1.0), &DroConfig::default()).unwrap();
        assert_abs_diff_eq!(r.worst_case_value, 1.0, epsilon = 1e-9);
    }

    /// Brute-force oracle: grid over S1, inner max over distributions on a
    /// single job's support with matched mean, solved as a small LP.
    fn brute_force_two_job(support: &[f64], mean: f64, c: &CostParams) -> f64 {
        let hi = *support.last().unwrap();
        let steps = (hi / 1e-3).round() as usize;
        (0..=steps)
            .map(|k| {
                let s1 = k as f64 * 1e-3;
                let obj: Vec<f64> = support.iter().map(|&p| -total_cost(&[s1, 0.0], &[p, 0.0], c)).collect();
                let mut lp = LinearProgram::new(obj);
                lp.add(vec![1.0; support.len()], Relation::Eq, 1.0);
                lp.add(support.to_vec(), Relation::Eq, mean);
                -solve_lp(&lp).unwrap().objective
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn three_point_support_matches_brute_force() {
        for (support, mean, c) in [
            (vec![0.0, 1.0, 2.0], 1.0, costs(1.0, 1.0)),
            (vec![0.0, 1.0, 3.0], 1.2, costs(2.0, 1.0)),
            (vec![0.5, 1.0, 4.0], 1.5, costs(1.0, 3.0)),
        ] {
            let oracle = brute_force_two_job(&support, mean, &c);
            let amb = AmbiguitySet::new(vec![support.clone(), vec![1.0]], vec![1], vec![vec![mean], vec![1.0]]).unwrap();
            let r = solve_dro(&amb, &c, &DroConfig::default()).unwrap();
            assert!((r.worst_case_value - oracle).abs() < 1e-3, "{support:?}: dro {} oracle {oracle}", r.worst_case_value);
        }
    }

    #[test]
    fn master_values_never_decrease_and_cuts_were_violated() {
        let grid: Vec<f64> = (0..7).map(|k| k as f64).collect();
        let amb = AmbiguitySet::new(vec![grid.clone(); 4], vec![1, 2], vec![vec![3.0, 11.0]; 4]).unwrap();
        let cfg = DroConfig::default();
        let r = solve_dro(&amb, &costs(2.0, 1.0), &cfg).unwrap();
        for w in r.master_values.windows(2) {
            assert!(w[1] >= w[0] - 1e-7 * w[0].abs().max(1.0), "{w:?}");
        }
        for (cut, value) in r.cuts.iter().filter(|c| c.surplus > 0.0).zip(&r.master_values) {
            assert!(cut.surplus > cfg.epsilon * value.abs().max(1.0));
        }
        assert!(r.final_surplus <= cfg.epsilon * r.worst_case_value.abs().max(1.0));
    }

    #[test]
    fn sequential_and_parallel_separation_agree() {
        let grid: Vec<f64> = (0..9).map(|k| 0.5 * k as f64).collect();
        let amb = AmbiguitySet::new(vec![grid; 5], vec![1, 2], vec![vec![2.0, 5.0]; 5]).unwrap();
        let c = costs(1.0, 1.0);
        let seq = solve_dro(&amb, &c, &DroConfig { exec: Exec::Sequential, ..Default::default() }).unwrap();
        let par = solve_dro(&amb, &c, &DroConfig { exec: Exec::Parallel, ..Default::default() }).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn unrealizable_moments_are_rejected() {
        // mean outside the grid's hull
        let err = AmbiguitySet::new(vec![vec![0.0, 1.0], vec![1.0]], vec![1], vec![vec![2.0], vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::Unrealizable(_)));
        // variance larger than the grid allows
        let err = AmbiguitySet::new(vec![vec![0.0, 1.0, 2.0], vec![1.0]], vec![1, 2], vec![vec![1.0, 3.0], vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::Unrealizable(_)));
        assert!(AmbiguitySet::new(vec![vec![1.0, 0.0], vec![1.0]], vec![1], vec![vec![0.5], vec![1.0]]).is_err());
        assert!(AmbiguitySet::new(vec![vec![], vec![1.0]], vec![1], vec![vec![0.5], vec![1.0]]).is_err());
    }

    #[test]
    fn bad_epsilon_and_grid_guard() {
        let amb = AmbiguitySet::new(vec![vec![1.0], vec![1.0]], vec![1], vec![vec![1.0], vec![1.0]]).unwrap();
        assert!(solve_dro(&amb, &costs(1.0, 1.0), &DroConfig { epsilon: 0.0, ..Default::default() }).is_err());
        assert!(solve_dro(&amb, &costs(1.0, 1.0), &DroConfig { epsilon: 1.0, ..Default::default() }).is_err());
        let grid: Vec<f64> = (0..32).map(|k| k as f64).collect();
        let amb = AmbiguitySet::new(vec![grid; 4], vec![1], vec![vec![10.0]; 4]).unwrap();
        assert!(matches!(solve_dro(&amb, &costs(1.0, 1.0), &DroConfig::default()), Err(Error::TooLarge(_))));
    }
}
