//! The CMSA loop: construct, merge into the component pool, solve the
//! restricted problem, adapt component ages, and tune `d_rate` / `t_sub`.

use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::construction::{construct, ConstructionPlan, SamplingSource, SamplingVector};
use crate::error::{Error, Result};
use crate::lp::{solve_lp_until, LpStatus};
use crate::model::{BipInstance, Solution};
use crate::propagation::PropagationState;
use crate::subsolver::{
    build_restriction, dive, search_restricted, ExternalSolver, RestrictedProblem,
};

/// Components `(x_j, 0)` and `(x_j, 1)` currently admitted, with their ages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPool {
    present: Vec<[bool; 2]>,
    age: Vec<[u32; 2]>,
}

impl ComponentPool {
    pub fn new(n: usize) -> Self {
        ComponentPool {
            present: vec![[false; 2]; n],
            age: vec![[0; 2]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.present.len()
    }

    pub fn contains(&self, var: usize, value: u8) -> bool {
        self.present[var][usize::from(value)]
    }

    pub fn age(&self, var: usize, value: u8) -> Option<u32> {
        self.contains(var, value)
            .then(|| self.age[var][usize::from(value)])
    }

    /// Number of present components.
    pub fn size(&self) -> usize {
        self.present
            .iter()
            .map(|p| usize::from(p[0]) + usize::from(p[1]))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    /// Every variable has at least one component.
    pub fn covers_all(&self) -> bool {
        self.present.iter().all(|p| p[0] || p[1])
    }

    fn check_len(&self, values: &[u8]) -> Result<()> {
        if values.len() != self.n() {
            return Err(Error::usage(format!(
                "solution has {} values but the pool has {} variables",
                values.len(),
                self.n()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::usage("solution values must be 0 or 1"));
        }
        Ok(())
    }

    /// Adds the candidate's components; only newly inserted ones get age 0.
    pub fn merge(&mut self, values: &[u8]) -> Result<()> {
        self.check_len(values)?;
        for (j, &v) in values.iter().enumerate() {
            let v = usize::from(v);
            if !self.present[j][v] {
                self.present[j][v] = true;
                self.age[j][v] = 0;
            }
        }
        Ok(())
    }

    /// Resets the ages of `s_opt`'s components, increments all others, then
    /// drops every component older than `age_max`.
    pub fn adapt(&mut self, s_opt: Option<&[u8]>, age_max: u32) -> Result<()> {
        if let Some(values) = s_opt {
            self.check_len(values)?;
        }
        for j in 0..self.n() {
            for v in 0..2 {
                if !self.present[j][v] {
                    continue;
                }
                let used = s_opt.is_some_and(|s| usize::from(s[j]) == v);
                self.age[j][v] = if used { 0 } else { self.age[j][v] + 1 };
                if self.age[j][v] > age_max {
                    self.present[j][v] = false;
                    self.age[j][v] = 0;
                }
            }
        }
        Ok(())
    }
}

/// `d_rate` bounds of the four standard configurations, indexed 1 to 4.
pub const PRESETS: [(f64, f64); 4] = [(0.03, 0.08), (0.05, 0.15), (0.1, 0.3), (0.3, 0.5)];

pub fn preset_bounds(preset: u8) -> Option<(f64, f64)> {
    PRESETS.get(usize::from(preset).checked_sub(1)?).copied()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmsaParams {
    /// Constructions per iteration.
    pub n_a: usize,
    pub age_max: u32,
    /// Budget of the initial heuristic and of the LP solve, seconds.
    pub t_lp: f64,
    pub d_rate_lb: f64,
    pub d_rate_ub: f64,
    pub t_sub_lb: f64,
    pub t_sub_ub: f64,
    /// Wall-clock budget of the whole run, seconds.
    pub total_budget: f64,
    pub seed: u64,
    pub cp_enabled: bool,
    pub merge_infeasible: bool,
    /// Stop after this many iterations even if budget remains.
    pub max_iterations: Option<u64>,
    /// Replaces the internal sub-solver when set.
    pub external_solver: Option<ExternalSolver>,
}

impl Default for CmsaParams {
    fn default() -> Self {
        let (lb, ub) = PRESETS[0];
        CmsaParams {
            n_a: 5,
            age_max: 1,
            t_lp: 10.0,
            d_rate_lb: lb,
            d_rate_ub: ub,
            t_sub_lb: 30.0,
            t_sub_ub: 100.0,
            total_budget: 1000.0,
            seed: 1,
            cp_enabled: false,
            merge_infeasible: true,
            max_iterations: None,
            external_solver: None,
        }
    }
}

impl CmsaParams {
    /// Defaults with the `d_rate` bounds of `preset` (1 to 4).
    pub fn with_preset(preset: u8) -> Result<Self> {
        let (lb, ub) = preset_bounds(preset)
            .ok_or_else(|| Error::usage(format!("unknown preset {preset}, expected 1 to 4")))?;
        Ok(CmsaParams {
            d_rate_lb: lb,
            d_rate_ub: ub,
            ..CmsaParams::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::usage(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("t_lp", self.t_lp)?;
        positive("t_sub_lb", self.t_sub_lb)?;
        positive("t_sub_ub", self.t_sub_ub)?;
        positive("total_budget", self.total_budget)?;
        if self.t_sub_lb > self.t_sub_ub {
            return Err(Error::usage("t_sub_lb exceeds t_sub_ub"));
        }
        if !(self.d_rate_lb > 0.0 && self.d_rate_lb <= self.d_rate_ub && self.d_rate_ub <= 0.5) {
            return Err(Error::usage(format!(
                "d_rate bounds [{}, {}] must satisfy 0 < lb <= ub <= 0.5",
                self.d_rate_lb, self.d_rate_ub
            )));
        }
        if self.n_a == 0 {
            return Err(Error::usage("n_a must be at least 1"));
        }
        Ok(())
    }
}

/// Steps `d_rate` and `t_sub` through five equal increments between their
/// bounds, back to the lower bounds on improvement or past the upper bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveController {
    d_bounds: (f64, f64),
    t_bounds: (f64, f64),
    steps: u32,
}

const CONTROLLER_STEPS: u32 = 5;

impl AdaptiveController {
    pub fn new(d_bounds: (f64, f64), t_bounds: (f64, f64)) -> Self {
        AdaptiveController {
            d_bounds,
            t_bounds,
            steps: 0,
        }
    }

    pub fn from_params(params: &CmsaParams) -> Self {
        Self::new(
            (params.d_rate_lb, params.d_rate_ub),
            (params.t_sub_lb, params.t_sub_ub),
        )
    }

    fn value((lb, ub): (f64, f64), k: u32) -> f64 {
        lb + f64::from(k) * (ub - lb) / f64::from(CONTROLLER_STEPS)
    }

    pub fn d_rate(&self) -> f64 {
        Self::value(self.d_bounds, self.steps)
    }

    pub fn t_sub(&self) -> f64 {
        Self::value(self.t_bounds, self.steps)
    }

    pub fn step_d(&self) -> f64 {
        (self.d_bounds.1 - self.d_bounds.0) / f64::from(CONTROLLER_STEPS)
    }

    pub fn step_t(&self) -> f64 {
        (self.t_bounds.1 - self.t_bounds.0) / f64::from(CONTROLLER_STEPS)
    }

    pub fn step(&mut self, improved: bool) {
        // one step past the fifth lands strictly above the upper bound
        self.steps = if improved || self.steps == CONTROLLER_STEPS {
            0
        } else {
            self.steps + 1
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    InitialHeuristic,
    SubsolverImprovement,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceEvent::InitialHeuristic => "INITIAL_HEURISTIC",
            TraceEvent::SubsolverImprovement => "SUBSOLVER_IMPROVEMENT",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub elapsed_s: f64,
    /// Normalized (minimization) objective.
    pub objective: f64,
    pub iteration: u64,
    pub event: TraceEvent,
}

/// Incumbent history of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnytimeTrace {
    points: Vec<TracePoint>,
}

impl AnytimeTrace {
    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Records a point, nudging the time forward so it strictly increases.
    pub fn record(&mut self, elapsed_s: f64, objective: f64, iteration: u64, event: TraceEvent) {
        let elapsed_s = match self.points.last() {
            Some(last) if elapsed_s <= last.elapsed_s => last.elapsed_s.next_up(),
            _ => elapsed_s,
        };
        self.points.push(TracePoint {
            elapsed_s,
            objective,
            iteration,
            event,
        });
    }

    /// Everything except the timestamps, for determinism checks.
    pub fn untimed(&self) -> Vec<(u64, u64, TraceEvent)> {
        self.points
            .iter()
            .map(|p| (p.objective.to_bits(), p.iteration, p.event))
            .collect()
    }

    /// CSV with objectives reported in the instance's original sense.
    pub fn to_csv(&self, instance: &BipInstance) -> String {
        let mut out = String::from("elapsed_s,objective,iteration,event\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:.6},{},{},{}",
                p.elapsed_s,
                instance.report_objective(p.objective),
                p.iteration,
                p.event
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// The budget or the iteration cap was reached.
    Finished,
    /// The sub-solver completed on the unrestricted problem.
    ProvenOptimal,
    InfeasibleProven,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Finished => "FINISHED",
            RunStatus::ProvenOptimal => "OPTIMAL",
            RunStatus::InfeasibleProven => "INFEASIBLE_PROVEN",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub iterations: u64,
    pub constructions: u64,
    pub feasible_constructions: u64,
    pub subsolver_calls: u64,
    pub subsolver_nodes: u64,
    /// Largest pool size seen right after a merge.
    pub max_pool_size: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub best: Option<Solution>,
    pub trace: AnytimeTrace,
    pub status: RunStatus,
    pub stats: RunStats,
}

struct Clock {
    start: Instant,
    deadline: Instant,
}

impl Clock {
    fn new(budget: f64) -> Self {
        let start = Instant::now();
        Clock {
            start,
            deadline: start + Duration::from_secs_f64(budget),
        }
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn within(&self, seconds: f64) -> Instant {
        (Instant::now() + Duration::from_secs_f64(seconds)).min(self.deadline)
    }

    fn expired(&self) -> bool {
        Instant::now() >= self.deadline
    }
}

fn infeasible_result(clock: &Clock, stats: RunStats) -> RunResult {
    RunResult {
        best: None,
        trace: AnytimeTrace::default(),
        status: RunStatus::InfeasibleProven,
        stats: RunStats {
            elapsed_s: clock.elapsed(),
            ..stats
        },
    }
}

fn solve_restriction(
    rp: &RestrictedProblem<'_>,
    deadline: Instant,
    incumbent: Option<&Solution>,
    external: Option<&ExternalSolver>,
) -> Result<(Option<Solution>, bool, u64)> {
    match external {
        Some(ext) => {
            let budget = deadline.saturating_duration_since(Instant::now());
            Ok((ext.solve(rp, budget)?, false, 0))
        }
        None => {
            let out = search_restricted(rp, deadline, incumbent, &mut |_| {});
            Ok((out.best, out.complete, out.nodes))
        }
    }
}

/// Runs CMSA on `instance` until the budget (or iteration cap) is exhausted.
pub fn run(instance: &BipInstance, params: &CmsaParams) -> Result<RunResult> {
    params.validate()?;
    let clock = Clock::new(params.total_budget);
    let mut stats = RunStats::default();
    let mut state = PropagationState::new(instance);
    if !state.is_consistent() {
        return Ok(infeasible_result(&clock, stats));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trace = AnytimeTrace::default();

    let mut incumbent = dive(instance, clock.within(params.t_lp));
    if let Some(s) = &incumbent {
        trace.record(
            clock.elapsed(),
            s.objective,
            0,
            TraceEvent::InitialHeuristic,
        );
    }

    let mut lp_values = Vec::new();
    if incumbent.is_none() {
        let fixings = if params.cp_enabled {
            state.fixings()
        } else {
            vec![None; instance.n()]
        };
        let lp = solve_lp_until(instance, &fixings, clock.within(params.t_lp))?;
        if lp.status == LpStatus::Infeasible {
            return Ok(infeasible_result(&clock, stats));
        }
        lp_values = lp.values;
    }

    let mut pool = ComponentPool::new(instance.n());
    let mut ctrl = AdaptiveController::from_params(params);
    let mut status = RunStatus::Finished;

    while !clock.expired()
        && params
            .max_iterations
            .is_none_or(|cap| stats.iterations < cap)
    {
        stats.iterations += 1;
        let iteration = stats.iterations;
        let source = match &incumbent {
            Some(s) => SamplingSource::Incumbent(&s.values),
            None => SamplingSource::Lp(&lp_values),
        };
        let sv = SamplingVector::build(source, ctrl.d_rate())?;

        for _ in 0..params.n_a {
            let plan = if params.cp_enabled {
                ConstructionPlan::random(instance.n(), true, &mut rng)
            } else {
                ConstructionPlan {
                    order: Vec::new(),
                    cp_enabled: false,
                }
            };
            let candidate = construct(&sv, &plan, &mut state, &mut rng)?;
            stats.constructions += 1;
            if candidate.feasible {
                stats.feasible_constructions += 1;
            }
            if candidate.feasible || params.merge_infeasible {
                pool.merge(&candidate.values)?;
            }
        }
        stats.max_pool_size = stats.max_pool_size.max(pool.size());

        let mut s_opt = None;
        let mut proven = false;
        if pool.covers_all() && !clock.expired() {
            let rp = build_restriction(instance, &pool)?;
            let deadline = clock.within(ctrl.t_sub());
            let (best, complete, nodes) = solve_restriction(
                &rp,
                deadline,
                incumbent.as_ref(),
                params.external_solver.as_ref(),
            )?;
            stats.subsolver_calls += 1;
            stats.subsolver_nodes += nodes;
            proven = complete && rp.forced().is_empty();
            s_opt = best;
        }

        let improved = s_opt
            .as_ref()
            .is_some_and(|s| s.is_better_than(incumbent.as_ref()));
        if improved {
            let s = s_opt.clone().unwrap();
            trace.record(
                clock.elapsed(),
                s.objective,
                iteration,
                TraceEvent::SubsolverImprovement,
            );
            incumbent = Some(s);
        }
        pool.adapt(s_opt.as_ref().map(|s| s.values.as_slice()), params.age_max)?;
        ctrl.step(improved);

        if proven {
            status = if incumbent.is_some() {
                RunStatus::ProvenOptimal
            } else {
                RunStatus::InfeasibleProven
            };
            break;
        }
    }

    stats.elapsed_s = clock.elapsed();
    Ok(RunResult {
        best: incumbent,
        trace,
        status,
        stats,
    })
}

/// Baseline: the sub-solver alone on the unrestricted problem.
pub fn run_subsolver_only(instance: &BipInstance, params: &CmsaParams) -> Result<RunResult> {
    params.validate()?;
    let clock = Clock::new(params.total_budget);
    let mut stats = RunStats::default();
    if !PropagationState::new(instance).is_consistent() {
        return Ok(infeasible_result(&clock, stats));
    }
    let rp = RestrictedProblem::with_forced(instance, &[])?;
    let mut trace = AnytimeTrace::default();
    let (best, complete) = match &params.external_solver {
        Some(ext) => {
            let best = ext.solve(&rp, Duration::from_secs_f64(params.total_budget))?;
            if let Some(s) = &best {
                trace.record(
                    clock.elapsed(),
                    s.objective,
                    1,
                    TraceEvent::SubsolverImprovement,
                );
            }
            (best, false)
        }
        None => {
            let out = search_restricted(&rp, clock.deadline, None, &mut |s| {
                trace.record(
                    clock.elapsed(),
                    s.objective,
                    1,
                    TraceEvent::SubsolverImprovement,
                )
            });
            stats.subsolver_nodes = out.nodes;
            (out.best, out.complete)
        }
    };
    stats.iterations = 1;
    stats.subsolver_calls = 1;
    stats.elapsed_s = clock.elapsed();
    let status = match (complete, best.is_some()) {
        (true, true) => RunStatus::ProvenOptimal,
        (true, false) => RunStatus::InfeasibleProven,
        (false, _) => RunStatus::Finished,
    };
    Ok(RunResult {
        best,
        trace,
        status,
        stats,
    })
}
