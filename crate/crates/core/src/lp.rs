//! LP relaxation of a binary program: `0 <= x <= 1`, integrality dropped.
//!
//! Solved with a bounded-variable primal simplex on a dense explicit basis
//! inverse. Structural variables live in their box without explicit bound rows;
//! each row gets a slack whose bounds encode its sense, and rows whose slack
//! cannot start feasible get an artificial variable that phase 1 drives to zero.
//! Fixed variables are substituted out before the simplex sees the problem.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{BipInstance, Sense};

/// Feasibility tolerance on rows and bounds for an `Optimal` answer.
pub const LP_FEAS_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const LP_OPT_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// The budget expired; values are the current feasible iterate, or all 0.5 if none.
    TimeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub values: Vec<f64>,
    /// Normalized objective including the contribution of fixed variables.
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

impl LpSolution {
    fn infeasible(n: usize, iterations: usize) -> Self {
        LpSolution {
            values: vec![0.0; n],
            objective: f64::INFINITY,
            status: LpStatus::Infeasible,
            iterations,
        }
    }

    fn fallback(n: usize, iterations: usize) -> Self {
        LpSolution {
            values: vec![0.5; n],
            objective: f64::NEG_INFINITY,
            status: LpStatus::TimeLimit,
            iterations,
        }
    }
}

/// Solves the LP relaxation under `fixings` (one entry per variable, `None` = free).
pub fn solve_lp(
    instance: &BipInstance,
    fixings: &[Option<u8>],
    time_limit: Duration,
) -> Result<LpSolution> {
    if time_limit.is_zero() {
        return Err(Error::usage("LP time limit must be positive"));
    }
    solve_lp_until(instance, fixings, Instant::now() + time_limit)
}

pub(crate) fn solve_lp_until(
    instance: &BipInstance,
    fixings: &[Option<u8>],
    deadline: Instant,
) -> Result<LpSolution> {
    let n = instance.n();
    if fixings.len() != n {
        return Err(Error::usage(format!(
            "{} fixings for {} variables",
            fixings.len(),
            n
        )));
    }
    if let Some(j) = fixings.iter().position(|f| matches!(f, Some(v) if *v > 1)) {
        return Err(Error::usage(format!(
            "fixing of variable {j} is not binary"
        )));
    }

    let reduced = match Reduced::build(instance, fixings) {
        Some(r) => r,
        None => return Ok(LpSolution::infeasible(n, 0)),
    };

    let mut simplex = Simplex::new(&reduced);
    let outcome = simplex.solve(deadline);
    let iterations = simplex.iterations;

    let assemble = |free_values: &[f64]| {
        let mut values = vec![0.0; n];
        for (j, f) in fixings.iter().enumerate() {
            if let Some(v) = f {
                values[j] = f64::from(*v);
            }
        }
        for (k, &j) in reduced.free.iter().enumerate() {
            values[j] = free_values[k].clamp(0.0, 1.0);
        }
        let objective = instance
            .objective()
            .iter()
            .zip(&values)
            .map(|(c, x)| c * x)
            .sum::<f64>()
            + instance.objective_offset();
        (values, objective)
    };

    Ok(match outcome {
        SimplexOutcome::Optimal => {
            let (values, objective) = assemble(&simplex.structural_values());
            if max_residual(instance, &values) <= LP_FEAS_TOL {
                LpSolution {
                    values,
                    objective,
                    status: LpStatus::Optimal,
                    iterations,
                }
            } else {
                LpSolution {
                    values,
                    objective,
                    status: LpStatus::TimeLimit,
                    iterations,
                }
            }
        }
        SimplexOutcome::Infeasible => LpSolution::infeasible(n, iterations),
        SimplexOutcome::Stopped { phase2: true } => {
            let (values, objective) = assemble(&simplex.structural_values());
            if max_residual(instance, &values) <= LP_FEAS_TOL {
                LpSolution {
                    values,
                    objective,
                    status: LpStatus::TimeLimit,
                    iterations,
                }
            } else {
                LpSolution::fallback(n, iterations)
            }
        }
        SimplexOutcome::Stopped { phase2: false } => LpSolution::fallback(n, iterations),
    })
}

/// Largest row violation of a fractional point.
pub fn max_residual(instance: &BipInstance, values: &[f64]) -> f64 {
    instance
        .rows()
        .iter()
        .map(|row| {
            let act: f64 = row.entries.iter().map(|&(j, a)| a * values[j]).sum();
            row.sense.violation(act, row.rhs)
        })
        .fold(0.0, f64::max)
}

/// The LP after substituting fixed variables.
struct Reduced {
    /// Original index of each remaining variable.
    free: Vec<usize>,
    cost: Vec<f64>,
    /// Column-major entries over reduced row indices.
    columns: Vec<Vec<(usize, f64)>>,
    senses: Vec<Sense>,
    rhs: Vec<f64>,
}

impl Reduced {
    /// Returns `None` when a row without free variables is violated by the fixings.
    fn build(instance: &BipInstance, fixings: &[Option<u8>]) -> Option<Self> {
        let mut pos = vec![usize::MAX; instance.n()];
        let mut free = Vec::new();
        for (j, f) in fixings.iter().enumerate() {
            if f.is_none() {
                pos[j] = free.len();
                free.push(j);
            }
        }
        let cost = free.iter().map(|&j| instance.objective()[j]).collect();
        let mut columns = vec![Vec::new(); free.len()];
        let mut senses = Vec::new();
        let mut rhs = Vec::new();
        for row in instance.rows() {
            let mut b = row.rhs;
            let mut has_free = false;
            for &(j, a) in &row.entries {
                match fixings[j] {
                    Some(1) => b -= a,
                    Some(_) => {}
                    None => has_free = true,
                }
            }
            if !has_free {
                if row.sense.violation(0.0, b) > crate::model::FEAS_TOL {
                    return None;
                }
                continue;
            }
            let i = rhs.len();
            for &(j, a) in &row.entries {
                if fixings[j].is_none() {
                    columns[pos[j]].push((i, a));
                }
            }
            senses.push(row.sense);
            rhs.push(b);
        }
        Some(Reduced {
            free,
            cost,
            columns,
            senses,
            rhs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SimplexOutcome {
    Optimal,
    Infeasible,
    Stopped { phase2: bool },
}

enum PhaseEnd {
    Optimal,
    Stopped,
}

/// Variable layout: `[0, nf)` structurals, `[nf, nf+m)` slacks, `[nf+m, nf+2m)` artificials.
struct Simplex<'r> {
    lp: &'r Reduced,
    nf: usize,
    m: usize,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    at_upper: Vec<bool>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Row-major `m x m` inverse of the basis matrix.
    binv: Vec<f64>,
    art_sign: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    degenerate_run: usize,
    bland: bool,
}

impl<'r> Simplex<'r> {
    fn new(lp: &'r Reduced) -> Self {
        let nf = lp.cost.len();
        let m = lp.rhs.len();
        let total = nf + 2 * m;
        let mut lb = vec![0.0; total];
        let mut ub = vec![1.0; total];
        let mut x = vec![0.0; total];
        let mut at_upper = vec![false; total];
        let mut is_basic = vec![false; total];
        let mut basis = Vec::with_capacity(m);
        let mut binv = vec![0.0; m * m];
        let mut art_sign = vec![1.0; m];

        for i in 0..m {
            let s = nf + i;
            let a = nf + m + i;
            let b = lp.rhs[i];
            let (slb, sub) = match lp.senses[i] {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lb[s] = slb;
            ub[s] = sub;
            // an artificial only exists while its row starts infeasible
            lb[a] = 0.0;
            ub[a] = 0.0;
            // all structurals start at 0, so the row residual is b
            if b >= slb && b <= sub {
                basis.push(s);
                is_basic[s] = true;
                x[s] = b;
                binv[i * m + i] = 1.0;
            } else {
                art_sign[i] = if b >= 0.0 { 1.0 } else { -1.0 };
                ub[a] = f64::INFINITY;
                basis.push(a);
                is_basic[a] = true;
                x[a] = b.abs();
                x[s] = 0.0;
                at_upper[s] = slb == f64::NEG_INFINITY;
                binv[i * m + i] = art_sign[i];
            }
        }

        Simplex {
            lp,
            nf,
            m,
            lb,
            ub,
            cost: vec![0.0; total],
            x,
            at_upper,
            basis,
            is_basic,
            binv,
            art_sign,
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
            bland: false,
        }
    }

    fn solve(&mut self, deadline: Instant) -> SimplexOutcome {
        let (nf, m) = (self.nf, self.m);
        let needs_phase1 = self.basis.iter().any(|&b| b >= nf + m);
        if needs_phase1 {
            for a in nf + m..nf + 2 * m {
                self.cost[a] = 1.0;
            }
            match self.run_phase(deadline) {
                PhaseEnd::Stopped => return SimplexOutcome::Stopped { phase2: false },
                PhaseEnd::Optimal => {}
            }
            let infeasibility: f64 = (nf + m..nf + 2 * m).map(|a| self.x[a].max(0.0)).sum();
            let scale = 1.0 + self.lp.rhs.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
            if infeasibility > LP_FEAS_TOL * scale {
                return SimplexOutcome::Infeasible;
            }
            for a in nf + m..nf + 2 * m {
                self.cost[a] = 0.0;
                self.ub[a] = 0.0;
                if !self.is_basic[a] {
                    self.x[a] = 0.0;
                    self.at_upper[a] = false;
                }
            }
        }
        self.cost[..nf].copy_from_slice(&self.lp.cost);
        self.degenerate_run = 0;
        self.bland = false;
        match self.run_phase(deadline) {
            PhaseEnd::Optimal => SimplexOutcome::Optimal,
            PhaseEnd::Stopped => SimplexOutcome::Stopped { phase2: true },
        }
    }

    fn structural_values(&self) -> Vec<f64> {
        self.x[..self.nf].to_vec()
    }

    fn iteration_cap(&self) -> usize {
        200 * (self.nf + self.m) + 10_000
    }

    fn run_phase(&mut self, deadline: Instant) -> PhaseEnd {
        let bland_after = 5 * (self.nf + self.m);
        let mut confirmed = 0;
        loop {
            if Instant::now() >= deadline || self.iterations >= self.iteration_cap() {
                return PhaseEnd::Stopped;
            }
            let y = self.duals();
            let Some((q, dir)) = self.price(&y) else {
                // re-check on a fresh factorization before declaring optimality
                if self.since_refactor == 0 || confirmed > 0 {
                    return PhaseEnd::Optimal;
                }
                confirmed += 1;
                if !self.refactor() {
                    return PhaseEnd::Stopped;
                }
                continue;
            };
            confirmed = 0;
            let alpha = self.ftran(q);
            let Some(step) = self.ratio_test(q, dir, &alpha) else {
                // unbounded ray: cannot happen for a boxed objective unless numerics broke
                return PhaseEnd::Stopped;
            };
            self.apply(q, dir, &alpha, step);
            self.iterations += 1;
            if step.length <= DEGENERATE_STEP {
                self.degenerate_run += 1;
                if self.degenerate_run > bland_after {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
            if self.since_refactor >= REFACTOR_EVERY && !self.refactor() {
                return PhaseEnd::Stopped;
            }
        }
    }

    /// `y^T = c_B^T B^{-1}`.
    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &b) in self.basis.iter().enumerate() {
            let c = self.cost[b];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, r) in y.iter_mut().zip(row) {
                    *yk += c * r;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let (nf, m) = (self.nf, self.m);
        let dot = if j < nf {
            self.lp.columns[j].iter().map(|&(i, a)| a * y[i]).sum()
        } else if j < nf + m {
            y[j - nf]
        } else {
            self.art_sign[j - nf - m] * y[j - nf - m]
        };
        self.cost[j] - dot
    }

    /// Entering variable and direction (+1 increase, -1 decrease).
    fn price(&self, y: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.nf + 2 * self.m {
            if self.is_basic[j] || self.lb[j] == self.ub[j] {
                continue;
            }
            let d = self.reduced_cost(j, y);
            let dir = if !self.at_upper[j] && d < -LP_OPT_TOL {
                1.0
            } else if self.at_upper[j] && d > LP_OPT_TOL {
                -1.0
            } else {
                continue;
            };
            if self.bland {
                return Some((j, dir));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// `B^{-1} A_q`.
    fn ftran(&self, q: usize) -> Vec<f64> {
        let (nf, m) = (self.nf, self.m);
        let mut alpha = vec![0.0; m];
        let mut add_col = |k: usize, a: f64| {
            for (i, al) in alpha.iter_mut().enumerate() {
                *al += self.binv[i * m + k] * a;
            }
        };
        if q < nf {
            for &(k, a) in &self.lp.columns[q] {
                add_col(k, a);
            }
        } else if q < nf + m {
            add_col(q - nf, 1.0);
        } else {
            add_col(q - nf - m, self.art_sign[q - nf - m]);
        }
        alpha
    }

    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64]) -> Option<Step> {
        let mut best = Step {
            length: self.ub[q] - self.lb[q],
            leaving: None,
        };
        let mut best_pivot = 0.0;
        for (i, &al) in alpha.iter().enumerate() {
            if al.abs() <= PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let rate = -dir * al;
            let limit = if rate < 0.0 {
                if self.lb[b] == f64::NEG_INFINITY {
                    continue;
                }
                ((self.x[b] - self.lb[b]) / -rate).max(0.0)
            } else {
                if self.ub[b] == f64::INFINITY {
                    continue;
                }
                ((self.ub[b] - self.x[b]) / rate).max(0.0)
            };
            let take = match best.leaving {
                _ if limit < best.length - 1e-12 => true,
                Some(_) if limit <= best.length + 1e-12 => {
                    if self.bland {
                        b < self.basis[best.leaving.unwrap()]
                    } else {
                        al.abs() > best_pivot
                    }
                }
                _ => false,
            };
            if take {
                best = Step {
                    length: limit,
                    leaving: Some(i),
                };
                best_pivot = al.abs();
            }
        }
        best.length.is_finite().then_some(best)
    }

    fn apply(&mut self, q: usize, dir: f64, alpha: &[f64], step: Step) {
        let t = step.length;
        for (i, &al) in alpha.iter().enumerate() {
            let b = self.basis[i];
            self.x[b] -= dir * al * t;
        }
        self.x[q] += dir * t;
        match step.leaving {
            None => {
                self.at_upper[q] = !self.at_upper[q];
                self.x[q] = if self.at_upper[q] {
                    self.ub[q]
                } else {
                    self.lb[q]
                };
            }
            Some(r) => {
                let leaving = self.basis[r];
                let hit_upper = -dir * alpha[r] > 0.0;
                self.x[leaving] = if hit_upper {
                    self.ub[leaving]
                } else {
                    self.lb[leaving]
                };
                self.at_upper[leaving] = hit_upper;
                self.is_basic[leaving] = false;
                self.is_basic[q] = true;
                self.at_upper[q] = false;
                self.basis[r] = q;
                self.pivot(r, alpha);
                self.since_refactor += 1;
            }
        }
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let inv = 1.0 / alpha[r];
        for v in &mut self.binv[r * m..(r + 1) * m] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
        for (i, &al) in alpha.iter().enumerate() {
            if i == r || al == 0.0 {
                continue;
            }
            let row = &mut self.binv[i * m..(i + 1) * m];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= al * p;
            }
        }
    }

    /// Recomputes `B^{-1}` from scratch and the basic values from the nonbasic ones.
    fn refactor(&mut self) -> bool {
        let (nf, m) = (self.nf, self.m);
        self.since_refactor = 0;
        if m == 0 {
            return true;
        }
        // dense B, then Gauss-Jordan with partial pivoting on [B | I]
        let mut bmat = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            if j < nf {
                for &(i, a) in &self.lp.columns[j] {
                    bmat[i * m + k] = a;
                }
            } else if j < nf + m {
                bmat[(j - nf) * m + k] = 1.0;
            } else {
                let i = j - nf - m;
                bmat[i * m + k] = self.art_sign[i];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let (p, pv) = (col..m)
                .map(|i| (i, bmat[i * m + col].abs()))
                .fold((col, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            if pv <= 1e-12 {
                return false;
            }
            if p != col {
                for k in 0..m {
                    bmat.swap(p * m + k, col * m + k);
                    inv.swap(p * m + k, col * m + k);
                }
            }
            let d = 1.0 / bmat[col * m + col];
            for k in 0..m {
                bmat[col * m + k] *= d;
                inv[col * m + k] *= d;
            }
            let brow: Vec<f64> = bmat[col * m..(col + 1) * m].to_vec();
            let irow: Vec<f64> = inv[col * m..(col + 1) * m].to_vec();
            for i in 0..m {
                if i == col {
                    continue;
                }
                let f = bmat[i * m + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    bmat[i * m + k] -= f * brow[k];
                    inv[i * m + k] -= f * irow[k];
                }
            }
        }
        self.binv = inv;

        // x_B = B^{-1} (b - N x_N)
        let mut r = self.lp.rhs.clone();
        for j in 0..nf + 2 * m {
            if self.is_basic[j] || self.x[j] == 0.0 {
                continue;
            }
            let v = self.x[j];
            if j < nf {
                for &(i, a) in &self.lp.columns[j] {
                    r[i] -= a * v;
                }
            } else if j < nf + m {
                r[j - nf] -= v;
            } else {
                let i = j - nf - m;
                r[i] -= self.art_sign[i] * v;
            }
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[b] = row.iter().zip(&r).map(|(a, c)| a * c).sum();
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct Step {
    length: f64,
    leaving: Option<usize>,
}
