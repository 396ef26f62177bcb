//! Activity-bound constraint propagation over binary domains.
//!
//! Every row keeps the minimum and maximum activity it can still reach given the
//! current domains. A row whose bounds cannot meet its sense is a conflict; a
//! free variable whose worse value would push a bound past the right-hand side
//! is fixed to the other value. Rows touched by a fixing are revisited in FIFO
//! order until nothing changes.
//!
//! Undo is exact: before a row's bounds change, the previous values are pushed
//! onto an undo log, and backtracking writes them back verbatim.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{BipInstance, Sense};

/// Slack used when comparing activity bounds with right-hand sides.
pub const PROP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Free,
    Fixed0,
    Fixed1,
}

impl Domain {
    pub fn value(self) -> Option<u8> {
        match self {
            Domain::Free => None,
            Domain::Fixed0 => Some(0),
            Domain::Fixed1 => Some(1),
        }
    }

    fn fixed(value: u8) -> Self {
        if value == 0 {
            Domain::Fixed0
        } else {
            Domain::Fixed1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    Root,
    Decision,
    Implication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Consistent,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrailEntry {
    pub var: usize,
    pub value: u8,
    pub reason: Reason,
}

/// Result of a decision followed by propagation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Propagation {
    /// The decision holds; the listed `(variable, value)` pairs were implied by it.
    Implied(Vec<(usize, u8)>),
    /// The decision cannot be completed; the state is unchanged.
    Conflict,
}

impl Propagation {
    pub fn is_conflict(&self) -> bool {
        matches!(self, Propagation::Conflict)
    }
}

#[derive(Debug, Clone, Copy)]
struct Mark {
    trail_len: usize,
    undo_len: usize,
}

#[derive(Debug, Clone, Copy)]
struct BoundsUndo {
    row: usize,
    min: f64,
    max: f64,
}

#[derive(Debug, Clone)]
pub struct PropagationState<'a> {
    instance: &'a BipInstance,
    domains: Vec<Domain>,
    min_activity: Vec<f64>,
    max_activity: Vec<f64>,
    /// Largest |coefficient| per row; rows whose slack exceeds it cannot fix anything.
    max_abs_coef: Vec<f64>,
    trail: Vec<TrailEntry>,
    undo: Vec<BoundsUndo>,
    marks: Vec<Mark>,
    status: Status,
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

/// Bit-exact copy of the observable state, for differential checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    pub domains: Vec<Domain>,
    pub min_activity_bits: Vec<u64>,
    pub max_activity_bits: Vec<u64>,
    pub trail: Vec<TrailEntry>,
    pub status: Status,
    pub depth: usize,
}

/// Activity bounds of every row recomputed from scratch for the given domains.
pub fn activity_bounds(instance: &BipInstance, domains: &[Domain]) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(instance.m());
    let mut hi = Vec::with_capacity(instance.m());
    for row in instance.rows() {
        let (mut a_lo, mut a_hi) = (0.0, 0.0);
        for &(j, a) in &row.entries {
            match domains[j] {
                Domain::Free => {
                    a_lo += a.min(0.0);
                    a_hi += a.max(0.0);
                }
                Domain::Fixed1 => {
                    a_lo += a;
                    a_hi += a;
                }
                Domain::Fixed0 => {}
            }
        }
        lo.push(a_lo);
        hi.push(a_hi);
    }
    (lo, hi)
}

impl<'a> PropagationState<'a> {
    /// Computes activity bounds and applies every fixing forced at the root.
    pub fn new(instance: &'a BipInstance) -> Self {
        let mut state = Self::unpropagated(instance);
        state.queue.extend(0..instance.m());
        state.queued.iter_mut().for_each(|q| *q = true);
        if state.propagate(Reason::Root).is_err() {
            state.status = Status::Infeasible;
        }
        state.undo.clear();
        state
    }

    /// All variables free, bounds computed, but no root propagation performed.
    ///
    /// Rows are only examined once a decision touches them.
    pub fn unpropagated(instance: &'a BipInstance) -> Self {
        let n = instance.n();
        let m = instance.m();
        let domains = vec![Domain::Free; n];
        let (min_activity, max_activity) = activity_bounds(instance, &domains);
        let max_abs_coef = instance
            .rows()
            .iter()
            .map(|r| {
                r.entries
                    .iter()
                    .fold(0.0f64, |acc, &(_, a)| acc.max(a.abs()))
            })
            .collect();
        PropagationState {
            instance,
            domains,
            min_activity,
            max_activity,
            max_abs_coef,
            trail: Vec::new(),
            undo: Vec::new(),
            marks: Vec::new(),
            status: Status::Consistent,
            queue: VecDeque::with_capacity(m),
            queued: vec![false; m],
        }
    }

    pub fn instance(&self) -> &'a BipInstance {
        self.instance
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_consistent(&self) -> bool {
        self.status == Status::Consistent
    }

    pub fn domain(&self, var: usize) -> Domain {
        self.domains[var]
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn value(&self, var: usize) -> Option<u8> {
        self.domains[var].value()
    }

    pub fn is_free(&self, var: usize) -> bool {
        self.domains[var] == Domain::Free
    }

    /// Current partial assignment, `None` for free variables.
    pub fn fixings(&self) -> Vec<Option<u8>> {
        self.domains.iter().map(|d| d.value()).collect()
    }

    pub fn free_count(&self) -> usize {
        self.domains.iter().filter(|&&d| d == Domain::Free).count()
    }

    pub fn trail(&self) -> &[TrailEntry] {
        &self.trail
    }

    pub fn activity_bounds(&self, row: usize) -> (f64, f64) {
        (self.min_activity[row], self.max_activity[row])
    }

    /// Number of open marks.
    pub fn depth(&self) -> usize {
        self.marks.len()
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            domains: self.domains.clone(),
            min_activity_bits: self.min_activity.iter().map(|v| v.to_bits()).collect(),
            max_activity_bits: self.max_activity.iter().map(|v| v.to_bits()).collect(),
            trail: self.trail.clone(),
            status: self.status,
            depth: self.marks.len(),
        }
    }

    pub fn push_mark(&mut self) {
        self.marks.push(Mark {
            trail_len: self.trail.len(),
            undo_len: self.undo.len(),
        });
    }

    /// Undoes everything since the most recent mark and removes that mark.
    pub fn backtrack_to_mark(&mut self) -> Result<()> {
        let mark = self
            .marks
            .pop()
            .ok_or_else(|| Error::usage("backtrack without a mark"))?;
        self.restore(mark);
        Ok(())
    }

    fn restore(&mut self, mark: Mark) {
        while self.undo.len() > mark.undo_len {
            let u = self.undo.pop().expect("undo entry");
            self.min_activity[u.row] = u.min;
            self.max_activity[u.row] = u.max;
        }
        for e in self.trail.drain(mark.trail_len..) {
            self.domains[e.var] = Domain::Free;
        }
    }

    /// Fixes `var` to `value` as a decision and propagates to a fixpoint.
    ///
    /// On conflict the state is restored to exactly what it was before the call.
    pub fn fix_and_propagate(&mut self, var: usize, value: u8) -> Result<Propagation> {
        if self.status != Status::Consistent {
            return Err(Error::usage("propagation state is infeasible"));
        }
        if var >= self.domains.len() {
            return Err(Error::usage(format!("unknown variable {var}")));
        }
        if value > 1 {
            return Err(Error::usage(format!("value {value} is not binary")));
        }
        if self.domains[var] != Domain::Free {
            return Err(Error::usage(format!("variable {var} is already fixed")));
        }

        let mark = Mark {
            trail_len: self.trail.len(),
            undo_len: self.undo.len(),
        };
        self.assign(var, value, Reason::Decision);
        let outcome = match self.propagate(Reason::Implication) {
            Ok(()) => Propagation::Implied(
                self.trail[mark.trail_len + 1..]
                    .iter()
                    .map(|e| (e.var, e.value))
                    .collect(),
            ),
            Err(()) => {
                self.restore(mark);
                Propagation::Conflict
            }
        };
        if self.marks.is_empty() {
            // nothing can backtrack below this point
            self.undo.clear();
        }
        Ok(outcome)
    }

    fn assign(&mut self, var: usize, value: u8, reason: Reason) {
        debug_assert_eq!(self.domains[var], Domain::Free);
        self.domains[var] = Domain::fixed(value);
        self.trail.push(TrailEntry { var, value, reason });
        let v = f64::from(value);
        for &(i, a) in self.instance.column(var) {
            self.undo.push(BoundsUndo {
                row: i,
                min: self.min_activity[i],
                max: self.max_activity[i],
            });
            self.min_activity[i] += a * v - a.min(0.0);
            self.max_activity[i] += a * v - a.max(0.0);
            if !self.queued[i] {
                self.queued[i] = true;
                self.queue.push_back(i);
            }
        }
    }

    fn clear_queue(&mut self) {
        for i in self.queue.drain(..) {
            self.queued[i] = false;
        }
    }

    fn propagate(&mut self, reason: Reason) -> std::result::Result<(), ()> {
        let instance = self.instance;
        while let Some(i) = self.queue.pop_front() {
            self.queued[i] = false;
            let row = instance.row(i);
            let rhs = row.rhs;
            let upper = matches!(row.sense, Sense::Le | Sense::Eq);
            let lower = matches!(row.sense, Sense::Ge | Sense::Eq);

            if (upper && self.min_activity[i] > rhs + PROP_EPS)
                || (lower && self.max_activity[i] < rhs - PROP_EPS)
            {
                self.clear_queue();
                return Err(());
            }

            if upper && self.min_activity[i] + self.max_abs_coef[i] > rhs + PROP_EPS {
                for &(j, a) in &row.entries {
                    if self.domains[j] == Domain::Free
                        && self.min_activity[i] + a.abs() > rhs + PROP_EPS
                    {
                        self.assign(j, u8::from(a < 0.0), reason);
                    }
                }
            }
            if lower && self.max_activity[i] - self.max_abs_coef[i] < rhs - PROP_EPS {
                for &(j, a) in &row.entries {
                    if self.domains[j] == Domain::Free
                        && self.max_activity[i] - a.abs() < rhs - PROP_EPS
                    {
                        self.assign(j, u8::from(a > 0.0), reason);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BipBuilder;

    fn two_vars(entries: &[(usize, f64)], sense: Sense, rhs: f64) -> BipInstance {
        BipBuilder::new("t")
            .vars(&[0.0, 0.0])
            .row(entries, sense, rhs)
            .build()
            .unwrap()
    }

    #[test]
    fn root_fixings() {
        let inst = two_vars(&[(0, 1.0), (1, 1.0)], Sense::Le, 0.0);
        let st = PropagationState::new(&inst);
        assert_eq!(st.domains(), &[Domain::Fixed0, Domain::Fixed0]);
        assert!(st.is_consistent());
        assert!(st.trail().iter().all(|e| e.reason == Reason::Root));

        let inst = two_vars(&[(0, 2.0), (1, 1.0)], Sense::Le, 1.0);
        let st = PropagationState::new(&inst);
        assert_eq!(st.domains(), &[Domain::Fixed0, Domain::Free]);

        let inst = two_vars(&[(0, 1.0), (1, 1.0)], Sense::Eq, 2.0);
        let st = PropagationState::new(&inst);
        assert_eq!(st.domains(), &[Domain::Fixed1, Domain::Fixed1]);
    }

    #[test]
    fn root_infeasibility() {
        let inst = BipBuilder::new("inf")
            .vars(&[0.0, 0.0])
            .row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 1.0)
            .row(&[(0, 1.0), (1, 1.0)], Sense::Le, 0.0)
            .build()
            .unwrap();
        let mut st = PropagationState::new(&inst);
        assert_eq!(st.status(), Status::Infeasible);
        assert!(st.fix_and_propagate(0, 1).is_err());
    }

    #[test]
    fn decisions_imply() {
        let inst = two_vars(&[(0, 1.0), (1, 1.0)], Sense::Le, 1.0);
        let mut st = PropagationState::new(&inst);
        assert_eq!(
            st.fix_and_propagate(0, 1).unwrap(),
            Propagation::Implied(vec![(1, 0)])
        );
        assert_eq!(st.trail()[0].reason, Reason::Decision);
        assert_eq!(st.trail()[1].reason, Reason::Implication);

        let inst = two_vars(&[(0, 1.0), (1, -1.0)], Sense::Le, 0.0);
        let mut st = PropagationState::new(&inst);
        assert_eq!(
            st.fix_and_propagate(0, 1).unwrap(),
            Propagation::Implied(vec![(1, 1)])
        );
    }

    #[test]
    fn implication_chain() {
        let inst = BipBuilder::new("chain")
            .vars(&[0.0, 0.0, 0.0])
            .row(&[(0, 1.0), (1, -1.0)], Sense::Le, 0.0)
            .row(&[(1, 1.0), (2, -1.0)], Sense::Le, 0.0)
            .build()
            .unwrap();
        let mut st = PropagationState::new(&inst);
        let out = st.fix_and_propagate(0, 1).unwrap();
        assert_eq!(out, Propagation::Implied(vec![(1, 1), (2, 1)]));
    }

    #[test]
    fn conflict_leaves_no_residue() {
        let inst = BipBuilder::new("conf")
            .vars(&[0.0, 0.0, 0.0])
            .row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 1.0)
            .row(&[(0, 1.0), (2, 1.0)], Sense::Ge, 1.0)
            .row(&[(1, 1.0), (2, 1.0)], Sense::Le, 0.0)
            .build()
            .unwrap();
        // The third row already fixes x2 = x3 = 0 at the root, so x1 is forced to 1.
        let st = PropagationState::new(&inst);
        assert_eq!(st.value(0), Some(1));

        let mut raw = PropagationState::unpropagated(&inst);
        let before = raw.snapshot();
        assert_eq!(raw.fix_and_propagate(0, 0).unwrap(), Propagation::Conflict);
        assert_eq!(raw.snapshot(), before);

        let inst = BipBuilder::new("conf2")
            .vars(&[0.0, 0.0, 0.0])
            .row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 1.0)
            .row(&[(0, 1.0), (2, 1.0)], Sense::Ge, 1.0)
            .row(&[(1, 1.0), (2, 1.0)], Sense::Le, 1.0)
            .build()
            .unwrap();
        let mut st = PropagationState::new(&inst);
        let before = st.snapshot();
        assert_eq!(st.fix_and_propagate(0, 0).unwrap(), Propagation::Conflict);
        assert_eq!(st.snapshot(), before);
        assert!(st.is_consistent());
    }

    #[test]
    fn fixing_twice_is_a_usage_error() {
        let inst = two_vars(&[(0, 1.0), (1, 1.0)], Sense::Le, 1.0);
        let mut st = PropagationState::new(&inst);
        st.fix_and_propagate(0, 1).unwrap();
        assert!(matches!(st.fix_and_propagate(1, 1), Err(Error::Usage(_))));
        assert!(matches!(st.fix_and_propagate(0, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn nested_marks_unwind_in_order() {
        let inst = BipBuilder::new("m")
            .vars(&[0.0, 0.0, 0.0, 0.0])
            .row(&[(0, 1.0), (1, 1.0)], Sense::Le, 1.0)
            .row(&[(2, 1.0), (3, -1.0)], Sense::Le, 0.0)
            .build()
            .unwrap();
        let mut st = PropagationState::new(&inst);
        let s0 = st.snapshot();
        st.push_mark();
        st.fix_and_propagate(0, 1).unwrap();
        let s1 = st.snapshot();
        st.push_mark();
        st.fix_and_propagate(2, 1).unwrap();
        assert_eq!(st.value(3), Some(1));
        st.backtrack_to_mark().unwrap();
        assert_eq!(st.snapshot(), s1);
        st.backtrack_to_mark().unwrap();
        assert_eq!(st.snapshot(), s0);
        assert!(matches!(st.backtrack_to_mark(), Err(Error::Usage(_))));
    }

    #[test]
    fn bounds_match_recomputation() {
        let inst = BipBuilder::new("b")
            .vars(&[0.0, 0.0, 0.0])
            .row(&[(0, 1.5), (1, -2.0), (2, 0.25)], Sense::Le, 1.0)
            .row(&[(0, -1.0), (2, 3.0)], Sense::Ge, -1.0)
            .build()
            .unwrap();
        let mut st = PropagationState::new(&inst);
        st.push_mark();
        st.fix_and_propagate(2, 1).unwrap();
        let (lo, hi) = activity_bounds(&inst, st.domains());
        for i in 0..inst.m() {
            let (a, b) = st.activity_bounds(i);
            assert!((a - lo[i]).abs() <= 1e-9 && (b - hi[i]).abs() <= 1e-9);
        }
    }
}
