//! In-memory binary integer program and exact evaluation of 0/1 assignments.
//!
//! A [`BipInstance`] is always stored as a minimization problem. Inputs that
//! maximize are negated on construction and remember that fact, so objective
//! values can be reported in the caller's original sense.

use std::fmt;

use crate::error::{Error, Result};

/// Absolute tolerance applied to row activities when checking feasibility.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    /// Amount by which `activity` violates `sense rhs` (0 when satisfied).
    #[inline]
    pub fn violation(self, activity: f64, rhs: f64) -> f64 {
        match self {
            Sense::Le => (activity - rhs).max(0.0),
            Sense::Ge => (rhs - activity).max(0.0),
            Sense::Eq => (activity - rhs).abs(),
        }
    }
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveSense {
    #[default]
    Minimize,
    Maximize,
}

/// A sparse linear constraint `sum(coef * x[col]) sense rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// `(column, coefficient)` pairs, strictly increasing in column.
    pub entries: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn new(entries: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        Row {
            entries,
            sense,
            rhs,
        }
    }

    pub fn activity(&self, values: &[u8]) -> f64 {
        self.entries
            .iter()
            .filter(|&&(j, _)| values[j] != 0)
            .map(|&(_, a)| a)
            .sum()
    }
}

/// Negates a maximization objective so it can be minimized.
///
/// Returns the normalized coefficients and whether they were negated.
pub fn negate_objective_if_max(sense: ObjectiveSense, objective: &[f64]) -> (Vec<f64>, bool) {
    match sense {
        ObjectiveSense::Minimize => (objective.to_vec(), false),
        ObjectiveSense::Maximize => (objective.iter().map(|c| -c).collect(), true),
    }
}

/// A binary integer linear program in minimization form.
#[derive(Debug, Clone, PartialEq)]
pub struct BipInstance {
    name: String,
    objective: Vec<f64>,
    objective_offset: f64,
    rows: Vec<Row>,
    var_names: Vec<String>,
    row_names: Vec<String>,
    negated: bool,
    /// Column-major view of `rows`: for each variable the `(row, coefficient)` pairs.
    columns: Vec<Vec<(usize, f64)>>,
}

impl BipInstance {
    /// Builds and validates an instance whose objective is already in minimization form.
    ///
    /// Zero coefficients are dropped and row entries are sorted by column.
    pub fn new(
        name: impl Into<String>,
        objective: Vec<f64>,
        rows: Vec<Row>,
        var_names: Vec<String>,
        row_names: Vec<String>,
    ) -> Result<Self> {
        Self::with_sense(
            name,
            ObjectiveSense::Minimize,
            objective,
            0.0,
            rows,
            var_names,
            row_names,
        )
    }

    /// Builds an instance from an objective given in `sense`; maximization inputs are negated.
    pub fn with_sense(
        name: impl Into<String>,
        sense: ObjectiveSense,
        objective: Vec<f64>,
        objective_offset: f64,
        mut rows: Vec<Row>,
        var_names: Vec<String>,
        row_names: Vec<String>,
    ) -> Result<Self> {
        let n = objective.len();
        if n == 0 {
            return Err(Error::InvalidInstance("instance has no variables".into()));
        }
        if var_names.len() != n {
            return Err(Error::InvalidInstance(format!(
                "{} variable names for {} variables",
                var_names.len(),
                n
            )));
        }
        if row_names.len() != rows.len() {
            return Err(Error::InvalidInstance(format!(
                "{} row names for {} rows",
                row_names.len(),
                rows.len()
            )));
        }
        if let Some(j) = objective.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "objective coefficient of {} is not finite",
                var_names[j]
            )));
        }
        if !objective_offset.is_finite() {
            return Err(Error::InvalidInstance(
                "objective offset is not finite".into(),
            ));
        }
        check_names("variable", &var_names)?;
        check_names("row", &row_names)?;

        for (i, row) in rows.iter_mut().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidInstance(format!(
                    "right-hand side of row {} is not finite",
                    row_names[i]
                )));
            }
            row.entries.retain(|&(_, a)| a != 0.0);
            row.entries.sort_by_key(|&(j, _)| j);
            for w in row.entries.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidInstance(format!(
                        "row {} references column {} twice",
                        row_names[i], w[0].0
                    )));
                }
            }
            for &(j, a) in &row.entries {
                if j >= n {
                    return Err(Error::InvalidInstance(format!(
                        "row {} references column {} but there are only {} variables",
                        row_names[i], j, n
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::InvalidInstance(format!(
                        "row {} has a non-finite coefficient",
                        row_names[i]
                    )));
                }
            }
        }

        let (objective, negated) = negate_objective_if_max(sense, &objective);
        let objective_offset = if negated {
            -objective_offset
        } else {
            objective_offset
        };

        let mut columns = vec![Vec::new(); n];
        for (i, row) in rows.iter().enumerate() {
            for &(j, a) in &row.entries {
                columns[j].push((i, a));
            }
        }

        Ok(BipInstance {
            name: name.into(),
            objective,
            objective_offset,
            rows,
            var_names,
            row_names,
            negated,
            columns,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.objective.len()
    }

    /// Number of rows.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// Normalized (minimization) objective coefficients.
    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    /// Constant term of the normalized objective.
    pub fn objective_offset(&self) -> f64 {
        self.objective_offset
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Row {
        &self.rows[i]
    }

    /// `(row, coefficient)` pairs of variable `j`.
    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn row_names(&self) -> &[String] {
        &self.row_names
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.entries.len()).sum()
    }

    /// True when the input objective was maximized and has been negated.
    pub fn is_negated(&self) -> bool {
        self.negated
    }

    pub fn original_sense(&self) -> ObjectiveSense {
        if self.negated {
            ObjectiveSense::Maximize
        } else {
            ObjectiveSense::Minimize
        }
    }

    /// Objective coefficients in the sense the instance was given in.
    pub fn original_objective(&self) -> Vec<f64> {
        if self.negated {
            self.objective.iter().map(|c| -c).collect()
        } else {
            self.objective.clone()
        }
    }

    /// Converts a normalized objective value back into the original sense.
    pub fn report_objective(&self, normalized: f64) -> f64 {
        if self.negated {
            -normalized
        } else {
            normalized
        }
    }

    /// Position of a variable by name.
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    /// `c^T x + offset` for a 0/1 vector (no validation).
    pub fn objective_value(&self, values: &[u8]) -> f64 {
        self.objective
            .iter()
            .zip(values)
            .filter(|(_, &v)| v != 0)
            .map(|(c, _)| c)
            .sum::<f64>()
            + self.objective_offset
    }

    /// Evaluates a 0/1 assignment: objective, feasibility and worst violation.
    pub fn evaluate(&self, values: &[u8]) -> Result<Solution> {
        if values.len() != self.n() {
            return Err(Error::usage(format!(
                "assignment has length {} but the instance has {} variables",
                values.len(),
                self.n()
            )));
        }
        if let Some(j) = values.iter().position(|&v| v > 1) {
            return Err(Error::usage(format!(
                "value {} for variable {} is not binary",
                values[j], self.var_names[j]
            )));
        }
        Ok(self.evaluate_unchecked(values.to_vec()))
    }

    pub(crate) fn evaluate_unchecked(&self, values: Vec<u8>) -> Solution {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let v = row.sense.violation(row.activity(&values), row.rhs);
            if v > worst {
                worst = v;
            }
        }
        let feasible = worst <= FEAS_TOL;
        Solution {
            objective: self.objective_value(&values),
            values,
            feasible,
            max_violation: if feasible { 0.0 } else { worst },
        }
    }

    /// The instance plus one equality row `x_j = v` per entry of `forced`.
    ///
    /// Used to hand a restricted problem to an external solver.
    pub fn with_fixings(&self, forced: &[(usize, u8)]) -> Result<BipInstance> {
        let mut rows = self.rows.clone();
        let mut row_names = self.row_names.clone();
        for &(j, v) in forced {
            if j >= self.n() {
                return Err(Error::usage(format!("fixing of unknown column {j}")));
            }
            let mut name = format!("fix_{}", self.var_names[j]);
            while row_names.contains(&name) {
                name.push('_');
            }
            rows.push(Row::new(vec![(j, 1.0)], Sense::Eq, f64::from(v)));
            row_names.push(name);
        }
        BipInstance::with_sense(
            self.name.clone(),
            self.original_sense(),
            self.original_objective(),
            self.report_objective(self.objective_offset),
            rows,
            self.var_names.clone(),
            row_names,
        )
    }
}

fn check_names(kind: &str, names: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(names.len());
    for name in names {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidInstance(format!(
                "{kind} name {name:?} is empty or contains whitespace"
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::InvalidInstance(format!(
                "duplicate {kind} name {name}"
            )));
        }
    }
    Ok(())
}

/// A 0/1 assignment together with its evaluation against an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<u8>,
    /// Normalized (minimization) objective value.
    pub objective: f64,
    pub feasible: bool,
    /// Worst row violation, 0 when feasible.
    pub max_violation: f64,
}

impl Solution {
    /// Strict improvement test used for incumbent replacement.
    pub fn is_better_than(&self, other: Option<&Solution>) -> bool {
        match other {
            None => true,
            Some(o) => self.objective < o.objective,
        }
    }
}

/// Small helper for assembling instances in code and tests.
#[derive(Debug, Default, Clone)]
pub struct BipBuilder {
    name: String,
    sense: ObjectiveSense,
    objective: Vec<f64>,
    var_names: Vec<String>,
    rows: Vec<Row>,
    row_names: Vec<String>,
}

impl BipBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        BipBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn maximize(mut self) -> Self {
        self.sense = ObjectiveSense::Maximize;
        self
    }

    /// Adds variables `x1..xk` with the given objective coefficients.
    pub fn vars(mut self, costs: &[f64]) -> Self {
        for &c in costs {
            let name = format!("x{}", self.objective.len() + 1);
            self.objective.push(c);
            self.var_names.push(name);
        }
        self
    }

    pub fn var(mut self, name: impl Into<String>, cost: f64) -> Self {
        self.objective.push(cost);
        self.var_names.push(name.into());
        self
    }

    /// Adds a row over 0-based column indices, named `r<k>`.
    pub fn row(mut self, entries: &[(usize, f64)], sense: Sense, rhs: f64) -> Self {
        let name = format!("r{}", self.rows.len() + 1);
        self.rows.push(Row::new(entries.to_vec(), sense, rhs));
        self.row_names.push(name);
        self
    }

    pub fn build(self) -> Result<BipInstance> {
        BipInstance::with_sense(
            self.name,
            self.sense,
            self.objective,
            0.0,
            self.rows,
            self.var_names,
            self.row_names,
        )
    }
}
