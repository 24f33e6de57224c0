//! Dense two-phase tableau simplex.
//!
//! Variables with general bounds are mapped to non-negative ones (shift,
//! reflection or free split; finite upper bounds become rows). Rows are
//! normalised to a non-negative right-hand side, slacks and artificials
//! complete the initial basis, and phase one minimises the artificial sum.
//!
//! Pricing uses the most negative reduced cost; after a run of degenerate
//! pivots it switches to Bland's rule until the objective moves again, which
//! rules out cycling while keeping pivot counts practical. The ratio test
//! is Harris's two-pass variant, which avoids tiny pivots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const REDUCED_COST_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-10;
const RELATIVE_PIVOT_TOL: f64 = 1e-7;
/// Slack allowed in the ratio test in exchange for a larger pivot.
const HARRIS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Minimised.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Per-variable `(lo, hi)`; infinities allowed.
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// An LP with `n` variables bounded below by zero and no constraints.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram { objective, constraints: Vec::new(), bounds: vec![(0.0, f64::INFINITY); n] }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coefficients: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coefficients, relation, rhs });
    }

    /// Adds a constraint given as sparse `(index, coefficient)` pairs.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut row = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            row[j] += a;
        }
        self.add(row, relation, rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.bounds[var] = (lo, hi);
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: self.bounds.len() });
        }
        for c in &self.constraints {
            if c.coefficients.len() != n {
                return Err(Error::LengthMismatch { expected: n, actual: c.coefficients.len() });
            }
            if !c.rhs.is_finite() || c.coefficients.iter().any(|a| !a.is_finite()) {
                return Err(Error::invalid("constraint data must be finite"));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("objective must be finite"));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("bad bounds [{lo}, {hi}] on variable {j}")));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let lhs: f64 = c.coefficients.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (&v, &(lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Row duals `y` (one per constraint, in input order) such that the
    /// reduced costs `c - Aᵀy` certify optimality. Empty unless optimal.
    pub duals: Vec<f64>,
}

/// How an original variable maps onto tableau columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset - col
    Reflect { col: usize, offset: f64 },
    /// x = pos - neg
    Free { pos: usize, neg: usize },
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows` constraint rows of width `cols + 1` (last entry is the rhs).
    a: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    /// The starting tableau, whose basis is the identity; kept for
    /// reinversion.
    orig: Vec<f64>,
}

/// A reduced-cost row together with the costs it was priced from.
struct Pricing<'a> {
    row: &'a mut [f64],
    cost: &'a [f64],
}

/// Pivots between refactorisations from the original data.
const REINVERT_EVERY: usize = 64;

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.a[r * (self.cols + 1) + self.cols]
    }

    fn row(&self, r: usize) -> &[f64] {
        let w = self.cols + 1;
        &self.a[r * w..(r + 1) * w]
    }

    /// Pivots on `(pr, pc)`, updating the rows and the reduced-cost row `obj`
    /// (width `cols + 1`, last entry is minus the objective value).
    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [f64], extra: Option<&mut [f64]>) {
        let w = self.cols + 1;
        let inv = 1.0 / self.at(pr, pc);
        {
            let row = &mut self.a[pr * w..(pr + 1) * w];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[pc] = 1.0;
        }
        let (before, rest) = self.a.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        let nz: Vec<usize> = (0..w).filter(|&j| prow[j] != 0.0).collect();
        let eliminate = |target: &mut [f64]| {
            let f = target[pc];
            if f != 0.0 {
                for &j in &nz {
                    target[j] -= f * prow[j];
                }
                target[pc] = 0.0;
            }
        };
        for target in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            eliminate(target);
        }
        eliminate(obj);
        if let Some(e) = extra {
            eliminate(e);
        }
        self.basis[pr] = pc;
        self.iterations += 1;
    }

    /// Rebuilds the tableau as `B⁻¹·orig` for the current basis, using
    /// Gaussian elimination with partial pivoting. Leaves the tableau alone
    /// and returns false if the basis matrix looks singular.
    fn reinvert(&mut self) -> bool {
        let m = self.rows;
        let w = self.cols + 1;
        let mut b = vec![0.0; m * m];
        for r in 0..m {
            for (k, &col) in self.basis.iter().enumerate() {
                b[r * m + k] = self.orig[r * w + col];
            }
        }
        let mut rhs = self.orig.clone();
        let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for k in 0..m {
            let p = (k..m).max_by(|&x, &y| b[x * m + k].abs().total_cmp(&b[y * m + k].abs())).unwrap();
            if b[p * m + k].abs() < 1e-11 * scale {
                return false;
            }
            if p != k {
                for j in 0..m {
                    b.swap(k * m + j, p * m + j);
                }
                for j in 0..w {
                    rhs.swap(k * w + j, p * w + j);
                }
            }
            let inv = 1.0 / b[k * m + k];
            for r in k + 1..m {
                let f = b[r * m + k] * inv;
                if f == 0.0 {
                    continue;
                }
                for j in k..m {
                    b[r * m + j] -= f * b[k * m + j];
                }
                let (top, bottom) = rhs.split_at_mut(r * w);
                let src = &top[k * w..(k + 1) * w];
                for (d, s) in bottom[..w].iter_mut().zip(src) {
                    *d -= f * s;
                }
            }
        }
        // back substitution; row k of the result belongs to basis slot k
        for k in (0..m).rev() {
            let inv = 1.0 / b[k * m + k];
            for j in 0..w {
                rhs[k * w + j] *= inv;
            }
            for r in 0..k {
                let f = b[r * m + k];
                if f == 0.0 {
                    continue;
                }
                let (top, bottom) = rhs.split_at_mut(k * w);
                let src = &bottom[..w];
                for (d, s) in top[r * w..(r + 1) * w].iter_mut().zip(src) {
                    *d -= f * s;
                }
                b[r * m + k] = 0.0;
            }
        }
        for (k, &col) in self.basis.iter().enumerate() {
            for r in 0..m {
                rhs[r * w + col] = if r == k { 1.0 } else { 0.0 };
            }
        }
        self.a = rhs;
        true
    }

    /// Recomputes `row = cost - c_B·tableau`.
    fn reprice(&self, p: &mut Pricing) {
        let w = self.cols + 1;
        p.row.copy_from_slice(p.cost);
        for r in 0..self.rows {
            let f = p.cost[self.basis[r]];
            if f != 0.0 {
                for (d, s) in p.row.iter_mut().zip(self.row(r)) {
                    *d -= f * s;
                }
            }
        }
        for &b in &self.basis {
            p.row[b] = 0.0;
        }
        debug_assert_eq!(p.row.len(), w);
    }

    fn refresh(&mut self, obj: &mut Pricing, extra: &mut Option<Pricing>) {
        if self.reinvert() {
            self.reprice(obj);
            if let Some(e) = extra.as_mut() {
                self.reprice(e);
            }
        }
    }

    /// Runs primal simplex on `obj` over columns `0..allowed`. Returns
    /// false if unbounded.
    fn optimize(&mut self, obj: &mut Pricing, allowed: usize, mut extra: Option<Pricing>) -> Result<bool> {
        let mut degenerate_run = 0usize;
        let max_iters = 50_000 + 200 * (self.rows + self.cols);
        let mut since_refresh = 0usize;
        loop {
            if self.iterations > max_iters {
                return Err(Error::NumericalBreakdown(format!("simplex exceeded {max_iters} pivots")));
            }
            if since_refresh >= REINVERT_EVERY {
                self.refresh(obj, &mut extra);
                since_refresh = 0;
            }
            let bland = degenerate_run > 50;
            let mut entering = None;
            let mut best = -REDUCED_COST_TOL;
            for j in 0..allowed {
                let d = obj.row[j];
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = entering else {
                // confirm on fresh data before stopping
                if since_refresh > 0 {
                    self.refresh(obj, &mut extra);
                    since_refresh = 0;
                    continue;
                }
                return Ok(true);
            };

            // Harris ratio test: relax the bound by a small tolerance, then
            // take the largest pivot among rows within it (in Bland mode
            // the lowest basis index instead). Entries far below the
            // column's largest count as zero.
            let col_max = (0..self.rows).map(|r| self.at(r, pc)).fold(0.0, f64::max);
            let min_pivot = PIVOT_TOL.max(RELATIVE_PIVOT_TOL * col_max);
            let mut theta = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > min_pivot {
                    theta = theta.min((self.rhs(r).max(0.0) + HARRIS_TOL) / a);
                }
            }
            if theta == f64::INFINITY {
                if since_refresh > 0 {
                    self.refresh(obj, &mut extra);
                    since_refresh = 0;
                    continue;
                }
                return Ok(false);
            }
            let mut leave: Option<usize> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a <= min_pivot || self.rhs(r).max(0.0) / a > theta {
                    continue;
                }
                leave = match leave {
                    None => Some(r),
                    Some(l) if bland && self.basis[r] < self.basis[l] => Some(r),
                    Some(l) if !bland && a > self.at(l, pc) => Some(r),
                    keep => keep,
                };
            }
            let pr = leave.expect("theta is finite, so some row qualifies");
            let ratio = self.rhs(pr).max(0.0) / self.at(pr, pc);
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc, obj.row, extra.as_mut().map(|e| &mut *e.row));
            since_refresh += 1;
        }
    }
}

fn obj1_cost(art_start: usize, cols: usize, w: usize) -> Vec<f64> {
    let mut c = vec![0.0; w];
    c[art_start..cols].iter_mut().for_each(|v| *v = 1.0);
    c
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();

    // Map variables to non-negative columns.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        let m = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((ncols, hi - lo));
            }
            VarMap::Shift { col: ncols, offset: lo }
        } else if hi.is_finite() {
            VarMap::Reflect { col: ncols, offset: hi }
        } else {
            ncols += 1;
            VarMap::Free { pos: ncols - 1, neg: ncols }
        };
        ncols += 1;
        maps.push(m);
    }
    let struct_cols = ncols;

    // Rows in structural columns: (coefficients, relation, rhs, original index).
    struct Row {
        coef: Vec<f64>,
        rel: Relation,
        rhs: f64,
        origin: Option<usize>,
        sign: f64,
    }
    let mut rows: Vec<Row> = Vec::with_capacity(lp.constraints.len() + bound_rows.len());
    for (idx, c) in lp.constraints.iter().enumerate() {
        let mut coef = vec![0.0; struct_cols];
        let mut rhs = c.rhs;
        for (j, &a) in c.coefficients.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, offset } => {
                    coef[col] += a;
                    rhs -= a * offset;
                }
                VarMap::Reflect { col, offset } => {
                    coef[col] -= a;
                    rhs -= a * offset;
                }
                VarMap::Free { pos, neg } => {
                    coef[pos] += a;
                    coef[neg] -= a;
                }
            }
        }
        rows.push(Row { coef, rel: c.relation, rhs, origin: Some(idx), sign: 1.0 });
    }
    for &(col, ub) in &bound_rows {
        let mut coef = vec![0.0; struct_cols];
        coef[col] = 1.0;
        rows.push(Row { coef, rel: Relation::Le, rhs: ub, origin: None, sign: 1.0 });
    }
    for row in rows.iter_mut() {
        if row.rhs < 0.0 {
            row.rhs = -row.rhs;
            row.coef.iter_mut().for_each(|a| *a = -*a);
            row.rel = match row.rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            row.sign = -1.0;
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.rel != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.rel != Relation::Le).count();
    let cols = struct_cols + n_slack + n_art;
    let w = cols + 1;
    let mut t = Tableau { rows: m, cols, a: vec![0.0; m * w], basis: vec![0; m], iterations: 0, orig: Vec::new() };
    let mut slack_col = struct_cols;
    let mut art_col = struct_cols + n_slack;
    // column holding each row's slack/surplus (for dual recovery) and its sign
    let mut row_slack: Vec<Option<(usize, f64)>> = vec![None; m];
    let mut row_art: Vec<Option<usize>> = vec![None; m];
    for (r, row) in rows.iter().enumerate() {
        let base = r * w;
        t.a[base..base + struct_cols].copy_from_slice(&row.coef);
        t.a[base + cols] = row.rhs;
        match row.rel {
            Relation::Le => {
                t.a[base + slack_col] = 1.0;
                t.basis[r] = slack_col;
                row_slack[r] = Some((slack_col, 1.0));
                slack_col += 1;
            }
            Relation::Ge => {
                t.a[base + slack_col] = -1.0;
                row_slack[r] = Some((slack_col, -1.0));
                slack_col += 1;
                t.a[base + art_col] = 1.0;
                t.basis[r] = art_col;
                row_art[r] = Some(art_col);
                art_col += 1;
            }
            Relation::Eq => {
                t.a[base + art_col] = 1.0;
                t.basis[r] = art_col;
                row_art[r] = Some(art_col);
                art_col += 1;
            }
        }
    }

    t.orig = t.a.clone();

    // phase-two costs in column space
    let mut cost = vec![0.0; w];
    let mut constant = 0.0;
    for (j, &c) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shift { col, offset } => {
                cost[col] += c;
                constant += c * offset;
            }
            VarMap::Reflect { col, offset } => {
                cost[col] -= c;
                constant += c * offset;
            }
            VarMap::Free { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    let mut obj2 = cost.clone();

    // Phase one
    let art_start = struct_cols + n_slack;
    if n_art > 0 {
        let mut obj1 = vec![0.0; w];
        obj1[art_start..cols].fill(1.0);
        for r in 0..m {
            if t.basis[r] >= art_start {
                let row = t.row(r).to_vec();
                for j in 0..w {
                    obj1[j] -= row[j];
                }
            }
        }
        // obj2 must be expressed in terms of the current basis too
        for r in 0..m {
            let b = t.basis[r];
            if obj2[b] != 0.0 {
                let f = obj2[b];
                let row = t.row(r).to_vec();
                for j in 0..w {
                    obj2[j] -= f * row[j];
                }
            }
        }
        let cost1 = obj1_cost(art_start, cols, w);
        let phase1 = t.optimize(
            &mut Pricing { row: &mut obj1, cost: &cost1 },
            cols,
            Some(Pricing { row: &mut obj2, cost: &cost }),
        )?;
        if !phase1 {
            return Err(Error::NumericalBreakdown("phase one reported an unbounded ray".into()));
        }
        let infeasibility = -obj1[cols];
        if infeasibility > FEASIBILITY_TOL * (1.0 + rows.iter().map(|r| r.rhs).fold(0.0, f64::max)) {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective: f64::NAN,
                iterations: t.iterations,
                duals: Vec::new(),
            });
        }
        // drive remaining artificials out of the basis where possible
        for r in 0..m {
            if t.basis[r] >= art_start {
                let pc = (0..art_start).find(|&j| t.at(r, j).abs() > 1e-9);
                if let Some(pc) = pc {
                    let mut dummy = vec![0.0; w];
                    t.pivot(r, pc, &mut dummy, Some(&mut obj2));
                }
            }
        }
    } else {
        for r in 0..m {
            let b = t.basis[r];
            if obj2[b] != 0.0 {
                let f = obj2[b];
                let row = t.row(r).to_vec();
                for j in 0..w {
                    obj2[j] -= f * row[j];
                }
            }
        }
    }

    // Phase two over structural + slack columns only.
    let bounded = t.optimize(&mut Pricing { row: &mut obj2, cost: &cost }, art_start, None)?;
    if !bounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations: t.iterations,
            duals: Vec::new(),
        });
    }

    let mut col_val = vec![0.0; cols];
    for r in 0..m {
        col_val[t.basis[r]] = t.rhs(r);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, offset } => offset + col_val[col],
            VarMap::Reflect { col, offset } => offset - col_val[col],
            VarMap::Free { pos, neg } => col_val[pos] - col_val[neg],
        })
        .collect();
    let objective = lp.objective_value(&x);
    if lp.max_violation(&x) > FEASIBILITY_TOL * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
        return Err(Error::NumericalBreakdown(format!(
            "final point violates constraints by {}",
            lp.max_violation(&x)
        )));
    }
    let _ = constant;

    // Duals: reduced cost of a row's slack column s (coefficient σ) is
    // 0 - σ·y_row, so y_row = -obj2[s]/σ; for equality rows use the
    // artificial column, whose phase-two cost is zero: y = -obj2[art].
    let mut duals = vec![0.0; lp.constraints.len()];
    for (r, row) in rows.iter().enumerate() {
        let Some(orig) = row.origin else { continue };
        let y = if let Some((col, sigma)) = row_slack[r] {
            -obj2[col] / sigma
        } else if let Some(col) = row_art[r] {
            -obj2[col]
        } else {
            0.0
        };
        duals[orig] = y * row.sign;
    }

    Ok(LpSolution { status: LpStatus::Optimal, x, objective, iterations: t.iterations, duals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_variable_upper_bound() {
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_covering_constraint() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add(vec![1.0, 1.0], Relation::Ge, 2.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn handles_free_reflected_and_boxed_variables() {
        // min x - y + z, x free with x >= -3 via a row, y <= 2 (no lower), z in [1, 4]
        let mut lp = LinearProgram::new(vec![1.0, -1.0, 1.0]);
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.set_bounds(1, f64::NEG_INFINITY, 2.0);
        lp.set_bounds(2, 1.0, 4.0);
        lp.add(vec![1.0, 0.0, 0.0], Relation::Ge, -3.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], -3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[2], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, -4.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_rows_with_negative_rhs() {
        // min x + 2y s.t. x - y = -1, x + y >= 3
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add(vec![1.0, -1.0], Relation::Eq, -1.0);
        lp.add(vec![1.0, 1.0], Relation::Ge, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_malformed_programs() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::LengthMismatch { .. })));
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 2.0, 1.0);
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn duals_certify_optimality() {
        // min -3x - 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3
        let mut lp = LinearProgram::new(vec![-3.0, -2.0]);
        lp.add(vec![1.0, 1.0], Relation::Le, 4.0);
        lp.add(vec![1.0, 3.0], Relation::Le, 6.0);
        lp.add(vec![1.0, 0.0], Relation::Le, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.objective, -11.0, epsilon = 1e-9);
        let dual_obj: f64 = s.duals.iter().zip(&lp.constraints).map(|(y, c)| y * c.rhs).sum();
        assert_abs_diff_eq!(dual_obj, s.objective, epsilon = 1e-9);
        assert!(s.duals.iter().all(|&y| y <= 1e-12), "<= rows of a min problem have non-positive duals");
    }
}
