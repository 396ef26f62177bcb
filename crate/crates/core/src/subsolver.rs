//! Exact solver for the pool-restricted BIP, plus an LP-diving start heuristic.
//!
//! The search is a depth-first branch-and-bound: every node carries a
//! propagation state, is bounded by the LP relaxation under the state's
//! fixings, and branches on the most fractional variable, exploring the LP
//! rounding first.

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::cmsa::ComponentPool;
use crate::error::{Error, Result};
use crate::lp::{solve_lp_until, LpStatus};
use crate::model::{BipInstance, Solution};
use crate::mps::write_mps;
use crate::propagation::{Propagation, PropagationState};

/// LP values within this distance of 0 or 1 count as integral.
pub const INT_TOL: f64 = 1e-6;
/// A node is pruned when its bound is within this margin of the incumbent.
pub const PRUNE_TOL: f64 = 1e-6;

/// Environment variable naming the directory used for external-solver files.
pub const SCRATCH_DIR_ENV: &str = "CMSA_SCRATCH_DIR";

/// The BIP with every single-component variable of the pool fixed.
#[derive(Debug, Clone)]
pub struct RestrictedProblem<'a> {
    base: &'a BipInstance,
    forced: Vec<(usize, u8)>,
    free_vars: Vec<usize>,
}

impl<'a> RestrictedProblem<'a> {
    /// A restriction from explicit forcings (sorted and checked).
    pub fn with_forced(base: &'a BipInstance, forced: &[(usize, u8)]) -> Result<Self> {
        let mut slot = vec![None; base.n()];
        for &(j, v) in forced {
            if j >= base.n() || v > 1 {
                return Err(Error::usage(format!("invalid forcing x{j} = {v}")));
            }
            if slot[j].replace(v).is_some() {
                return Err(Error::usage(format!("variable {j} forced twice")));
            }
        }
        let mut forced = Vec::new();
        let mut free_vars = Vec::new();
        for (j, s) in slot.into_iter().enumerate() {
            match s {
                Some(v) => forced.push((j, v)),
                None => free_vars.push(j),
            }
        }
        Ok(RestrictedProblem {
            base,
            forced,
            free_vars,
        })
    }

    pub fn base(&self) -> &'a BipInstance {
        self.base
    }

    pub fn forced(&self) -> &[(usize, u8)] {
        &self.forced
    }

    pub fn free_vars(&self) -> &[usize] {
        &self.free_vars
    }

    /// Whether `values` agrees with every forcing.
    pub fn admits(&self, values: &[u8]) -> bool {
        values.len() == self.base.n() && self.forced.iter().all(|&(j, v)| values[j] == v)
    }
}

/// Fixes each variable for which the pool holds exactly one component.
pub fn build_restriction<'a>(
    instance: &'a BipInstance,
    pool: &ComponentPool,
) -> Result<RestrictedProblem<'a>> {
    if pool.n() != instance.n() {
        return Err(Error::usage(format!(
            "pool has {} variables but the instance has {}",
            pool.n(),
            instance.n()
        )));
    }
    let mut forced = Vec::new();
    let mut free_vars = Vec::new();
    for j in 0..pool.n() {
        match (pool.contains(j, 0), pool.contains(j, 1)) {
            (true, true) => free_vars.push(j),
            (true, false) => forced.push((j, 0)),
            (false, true) => forced.push((j, 1)),
            (false, false) => {
                return Err(Error::usage(format!(
                    "variable {} has no component in the pool",
                    instance.var_names()[j]
                )))
            }
        }
    }
    Ok(RestrictedProblem {
        base: instance,
        forced,
        free_vars,
    })
}

/// Result of one branch-and-bound call.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Option<Solution>,
    /// The search finished before the deadline, so `best` is optimal (or none exists).
    pub complete: bool,
    pub nodes: u64,
}

struct Search<'s, 'a> {
    instance: &'a BipInstance,
    deadline: Instant,
    best: Option<Solution>,
    aborted: bool,
    nodes: u64,
    on_improve: &'s mut dyn FnMut(&Solution),
}

impl Search<'_, '_> {
    fn upper_bound(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |s| s.objective)
    }

    fn offer(&mut self, values: Vec<u8>) {
        let sol = self.instance.evaluate_unchecked(values);
        if sol.feasible && sol.is_better_than(self.best.as_ref()) {
            (self.on_improve)(&sol);
            self.best = Some(sol);
        }
    }

    fn node(&mut self, state: &mut PropagationState<'_>) {
        if self.aborted {
            return;
        }
        if Instant::now() >= self.deadline {
            self.aborted = true;
            return;
        }
        self.nodes += 1;

        let fixings = state.fixings();
        if state.free_count() == 0 {
            self.offer(fixings.iter().map(|f| f.unwrap_or(0)).collect());
            return;
        }

        let lp = match solve_lp_until(self.instance, &fixings, self.deadline) {
            Ok(lp) => lp,
            Err(_) => {
                self.aborted = true;
                return;
            }
        };
        let reliable = match lp.status {
            LpStatus::Infeasible => return,
            LpStatus::Optimal => true,
            LpStatus::TimeLimit if Instant::now() >= self.deadline => {
                self.aborted = true;
                return;
            }
            // numerically unreliable optimum: branch without using the bound
            LpStatus::TimeLimit => false,
        };
        if reliable && lp.objective >= self.upper_bound() - PRUNE_TOL {
            return;
        }

        let mut branch: Option<(usize, f64)> = None;
        for (j, f) in fixings.iter().enumerate() {
            if f.is_some() {
                continue;
            }
            let frac = lp.values[j].min(1.0 - lp.values[j]);
            if frac > INT_TOL && branch.is_none_or(|(_, best)| frac > best) {
                branch = Some((j, frac));
            }
        }
        let var = match branch {
            Some((j, _)) => j,
            None => {
                let rounded: Vec<u8> = lp.values.iter().map(|&x| u8::from(x >= 0.5)).collect();
                let sol = self.instance.evaluate_unchecked(rounded.clone());
                if sol.feasible {
                    self.offer(rounded);
                    if reliable {
                        return;
                    }
                }
                // rounding failed numerically: split on the first free variable
                fixings.iter().position(Option::is_none).unwrap()
            }
        };

        let first = u8::from(lp.values[var] >= 0.5);
        for value in [first, 1 - first] {
            state.push_mark();
            let outcome = state.fix_and_propagate(var, value);
            if let Ok(Propagation::Implied(_)) = outcome {
                self.node(state);
            }
            state.backtrack_to_mark().expect("mark pushed above");
            if self.aborted {
                return;
            }
        }
    }
}

/// Branch-and-bound over `rp` until `deadline`, reporting every new incumbent.
pub fn search_restricted(
    rp: &RestrictedProblem<'_>,
    deadline: Instant,
    incumbent: Option<&Solution>,
    on_improve: &mut dyn FnMut(&Solution),
) -> SearchOutcome {
    let instance = rp.base;
    let seed = incumbent
        .filter(|s| s.feasible && rp.admits(&s.values))
        .cloned();
    let mut search = Search {
        instance,
        deadline,
        best: seed,
        aborted: false,
        nodes: 0,
        on_improve,
    };

    let mut state = PropagationState::new(instance);
    if !state.is_consistent() {
        return SearchOutcome {
            best: None,
            complete: true,
            nodes: 0,
        };
    }
    for &(j, v) in &rp.forced {
        match state.value(j) {
            Some(w) if w == v => continue,
            Some(_) => {
                return SearchOutcome {
                    best: search.best,
                    complete: true,
                    nodes: 0,
                }
            }
            None => {}
        }
        match state.fix_and_propagate(j, v) {
            Ok(Propagation::Implied(_)) => {}
            _ => {
                return SearchOutcome {
                    best: search.best,
                    complete: true,
                    nodes: 0,
                }
            }
        }
    }
    search.node(&mut state);
    SearchOutcome {
        best: search.best,
        complete: !search.aborted,
        nodes: search.nodes,
    }
}

/// Best feasible solution of `rp` found within `time_limit`, or `None`.
///
/// A feasible `incumbent` that agrees with the forcings seeds the upper bound,
/// so the result is never worse than it.
pub fn solve_restricted(
    rp: &RestrictedProblem<'_>,
    time_limit: Duration,
    incumbent: Option<&Solution>,
) -> Result<Option<Solution>> {
    if time_limit.is_zero() {
        return Err(Error::usage("sub-solver time limit must be positive"));
    }
    Ok(search_restricted(rp, Instant::now() + time_limit, incumbent, &mut |_| {}).best)
}

/// LP diving: repeatedly fix the free variable closest to integral at its
/// rounded value, flipping on conflict. Never returns an infeasible solution.
pub fn initial_heuristic(instance: &BipInstance, time_limit: Duration) -> Result<Option<Solution>> {
    if time_limit.is_zero() {
        return Err(Error::usage("heuristic time limit must be positive"));
    }
    Ok(dive(instance, Instant::now() + time_limit))
}

pub(crate) fn dive(instance: &BipInstance, deadline: Instant) -> Option<Solution> {
    let mut state = PropagationState::new(instance);
    if !state.is_consistent() {
        return None;
    }
    loop {
        let fixings = state.fixings();
        if state.free_count() == 0 {
            let sol = instance.evaluate_unchecked(fixings.iter().map(|f| f.unwrap_or(0)).collect());
            return sol.feasible.then_some(sol);
        }
        if Instant::now() >= deadline {
            return None;
        }
        let lp = solve_lp_until(instance, &fixings, deadline).ok()?;
        if lp.status != LpStatus::Optimal {
            return None;
        }
        let integral = lp.values.iter().all(|&x| x.min(1.0 - x) <= INT_TOL);
        if integral {
            let sol = instance
                .evaluate_unchecked(lp.values.iter().map(|&x| u8::from(x >= 0.5)).collect());
            if sol.feasible {
                return Some(sol);
            }
        }
        let (var, _) = fixings
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_none())
            .map(|(j, _)| (j, lp.values[j].min(1.0 - lp.values[j])))
            .fold(None, |acc: Option<(usize, f64)>, (j, d)| match acc {
                Some((_, best)) if best <= d => acc,
                _ => Some((j, d)),
            })?;
        let value = u8::from(lp.values[var] >= 0.5);
        let first = state.fix_and_propagate(var, value).ok()?;
        if first.is_conflict() {
            let second = state.fix_and_propagate(var, 1 - value).ok()?;
            if second.is_conflict() {
                return None;
            }
        }
    }
}

/// A user-supplied solver command run on an MPS file of the restricted problem.
///
/// The template may use `{input}`, `{output}` and `{time}` placeholders; it is
/// run through `sh -c`. The solver must write `<var name> <value>` lines to the
/// output path; lines starting with `#` are ignored and missing variables are 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalSolver {
    template: String,
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

fn shell_quote(path: &std::path::Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', "'\\''"))
}

impl ExternalSolver {
    pub fn new(template: impl Into<String>) -> Self {
        ExternalSolver {
            template: template.into(),
        }
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    fn scratch_dir() -> PathBuf {
        std::env::var_os(SCRATCH_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(std::env::temp_dir)
    }

    /// Runs the command; a nonzero exit or an unusable answer yields `None`.
    pub fn solve(
        &self,
        rp: &RestrictedProblem<'_>,
        time_limit: Duration,
    ) -> Result<Option<Solution>> {
        let dir = Self::scratch_dir();
        let tag = format!(
            "cmsa-{}-{}",
            std::process::id(),
            SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed)
        );
        let input = dir.join(format!("{tag}.mps"));
        let output = dir.join(format!("{tag}.sol"));
        write_mps(&rp.base.with_fixings(&rp.forced)?, &input)?;
        let command = self
            .template
            .replace("{input}", &shell_quote(&input))
            .replace("{output}", &shell_quote(&output))
            .replace("{time}", &format!("{:.3}", time_limit.as_secs_f64()));
        let status = Command::new("sh").arg("-c").arg(&command).status();
        let answer = match status {
            Ok(s) if s.success() => std::fs::read_to_string(&output)
                .map_err(|e| Error::ExternalSolver(format!("reading {}: {e}", output.display())))
                .and_then(|text| self.parse_answer(rp, &text)),
            Ok(_) => Ok(None),
            Err(e) => Err(Error::ExternalSolver(format!("cannot run sh: {e}"))),
        };
        let _ = std::fs::remove_file(&input);
        let _ = std::fs::remove_file(&output);
        answer
    }

    fn parse_answer(&self, rp: &RestrictedProblem<'_>, text: &str) -> Result<Option<Solution>> {
        let instance = rp.base;
        let mut values = vec![0u8; instance.n()];
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::ExternalSolver(format!(
                    "line {}: expected `<name> <value>`",
                    k + 1
                )));
            };
            let j = instance.var_index(name).ok_or_else(|| {
                Error::ExternalSolver(format!("line {}: unknown variable {name}", k + 1))
            })?;
            let v: f64 = value
                .parse()
                .map_err(|_| Error::ExternalSolver(format!("line {}: bad value {value}", k + 1)))?;
            if v.abs() > INT_TOL && (v - 1.0).abs() > INT_TOL {
                return Err(Error::ExternalSolver(format!(
                    "line {}: {name} = {v} is not binary",
                    k + 1
                )));
            }
            values[j] = u8::from(v >= 0.5);
        }
        let sol = instance.evaluate_unchecked(values);
        Ok((sol.feasible && rp.admits(&sol.values)).then_some(sol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BipBuilder, Sense};

    fn knapsack() -> BipInstance {
        BipBuilder::new("knap")
            .vars(&[-3.0, -4.0, -5.0])
            .row(&[(0, 2.0), (1, 3.0), (2, 4.0)], Sense::Le, 6.0)
            .build()
            .unwrap()
    }

    fn brute_force(rp: &RestrictedProblem<'_>) -> Option<f64> {
        let n = rp.base().n();
        (0..1u32 << n)
            .map(|mask| (0..n).map(|j| ((mask >> j) & 1) as u8).collect::<Vec<_>>())
            .filter(|v| rp.admits(v))
            .map(|v| rp.base().evaluate(&v).unwrap())
            .filter(|s| s.feasible)
            .map(|s| s.objective)
            .min_by(f64::total_cmp)
    }

    const BUDGET: Duration = Duration::from_secs(10);

    #[test]
    fn restriction_from_pool() {
        let inst = BipBuilder::new("p").vars(&[0.0, 0.0]).build().unwrap();
        let mut pool = ComponentPool::new(2);
        pool.merge(&[0, 0]).unwrap();
        pool.merge(&[0, 1]).unwrap();
        let rp = build_restriction(&inst, &pool).unwrap();
        assert_eq!(rp.forced(), &[(0, 0)]);
        assert_eq!(rp.free_vars(), &[1]);
        assert!(build_restriction(&inst, &ComponentPool::new(2)).is_err());
    }

    #[test]
    fn knapsack_optimum() {
        let inst = knapsack();
        let rp = RestrictedProblem::with_forced(&inst, &[]).unwrap();
        let sol = solve_restricted(&rp, BUDGET, None).unwrap().unwrap();
        assert_eq!(sol.objective, -8.0);
        assert_eq!(sol.values, vec![1, 0, 1]);
        assert_eq!(brute_force(&rp), Some(-8.0));
    }

    #[test]
    fn knapsack_with_x3_forced_to_zero() {
        let inst = knapsack();
        let rp = RestrictedProblem::with_forced(&inst, &[(2, 0)]).unwrap();
        let sol = solve_restricted(&rp, BUDGET, None).unwrap().unwrap();
        assert_eq!(brute_force(&rp), Some(-7.0));
        assert_eq!(sol.objective, -7.0);
        assert_eq!(sol.values, vec![1, 1, 0]);
    }

    #[test]
    fn contradictory_forcing_is_null() {
        let inst = BipBuilder::new("c")
            .vars(&[1.0, 1.0])
            .row(&[(0, 1.0)], Sense::Le, 0.0)
            .build()
            .unwrap();
        let rp = RestrictedProblem::with_forced(&inst, &[(0, 1)]).unwrap();
        assert!(solve_restricted(&rp, BUDGET, None).unwrap().is_none());
    }

    #[test]
    fn fully_forced_is_a_single_evaluation() {
        let inst = knapsack();
        let rp = RestrictedProblem::with_forced(&inst, &[(0, 1), (1, 1), (2, 0)]).unwrap();
        let out = search_restricted(&rp, Instant::now() + BUDGET, None, &mut |_| {});
        assert_eq!(out.best.unwrap().objective, -7.0);
        assert!(out.complete);
    }

    #[test]
    fn incumbent_seeds_the_bound() {
        let inst = knapsack();
        let rp = RestrictedProblem::with_forced(&inst, &[]).unwrap();
        let inc = inst.evaluate(&[1, 0, 1]).unwrap();
        let mut improvements = 0;
        let out = search_restricted(&rp, Instant::now() + BUDGET, Some(&inc), &mut |_| {
            improvements += 1
        });
        assert_eq!(out.best.unwrap(), inc);
        assert_eq!(improvements, 0);
    }

    #[test]
    fn zero_budget_is_usage_error() {
        let inst = knapsack();
        let rp = RestrictedProblem::with_forced(&inst, &[]).unwrap();
        assert!(matches!(
            solve_restricted(&rp, Duration::ZERO, None),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            initial_heuristic(&inst, Duration::ZERO),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn diving_on_integral_lp() {
        let inst = BipBuilder::new("i")
            .vars(&[1.0, 2.0])
            .row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 1.0)
            .build()
            .unwrap();
        let sol = initial_heuristic(&inst, BUDGET).unwrap().unwrap();
        assert_eq!(sol.values, vec![1, 0]);
        assert!(sol.feasible);
    }

    #[test]
    fn diving_on_root_infeasible() {
        let inst = BipBuilder::new("inf")
            .vars(&[1.0])
            .row(&[(0, 1.0)], Sense::Ge, 2.0)
            .build()
            .unwrap();
        assert!(initial_heuristic(&inst, BUDGET).unwrap().is_none());
    }

    #[test]
    fn external_solver_round_trip() {
        let inst = knapsack();
        let rp = RestrictedProblem::with_forced(&inst, &[(1, 0)]).unwrap();
        let ok =
            ExternalSolver::new("test -s {input} && printf '# obj\\nx1 1\\nx3 1\\n' > {output}");
        let sol = ok.solve(&rp, Duration::from_secs(1)).unwrap().unwrap();
        assert_eq!(sol.values, vec![1, 0, 1]);
        let failing = ExternalSolver::new("exit 1");
        assert!(failing
            .solve(&rp, Duration::from_secs(1))
            .unwrap()
            .is_none());
        let violating = ExternalSolver::new("printf 'x2 1\\n' > {output}");
        assert!(violating
            .solve(&rp, Duration::from_secs(1))
            .unwrap()
            .is_none());
        let garbage = ExternalSolver::new("printf 'zz 1\\n' > {output}");
        assert!(garbage.solve(&rp, Duration::from_secs(1)).is_err());
    }
}
