//! Mixed-integer linear programming: a revised bounded-variable simplex and a
//! best-first branch-and-bound on top of it.
//!
//! Problems are always maximizations. Every variable carries explicit bounds
//! (possibly infinite for continuous variables); integer variables must have
//! finite bounds.

mod branch;
mod lp_format;
mod lu;
mod simplex;

pub use branch::{solve_milp, solve_milp_with, MilpOptions};
pub use lp_format::write_lp;
pub use simplex::solve_lp;

use serde::Serialize;
use thiserror::Error;

/// Constraint and bound feasibility tolerance asserted on every optimal
/// return.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Distance from the nearest integer accepted as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

/// One linear row, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub name: String,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * values[j]).sum()
    }

    /// Amount by which `values` violate this row (zero when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.relation {
            Relation::Le => (a - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - a).max(0.0),
            Relation::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MilpProblem {
    /// Maximized.
    pub objective: Vec<f64>,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, integer: bool, obj: f64) -> usize {
        self.variables.push(Variable { name: name.into(), lower, upper, integer });
        self.objective.push(obj);
        self.variables.len() - 1
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.add_var(name, lower, upper, false, 0.0)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, 0.0, 1.0, true, 0.0)
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs, name: name.into() });
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.variables.len();
        if self.objective.len() != n {
            return Err(MilpError::Malformed(format!(
                "{} objective coefficients for {n} variables",
                self.objective.len()
            )));
        }
        for (j, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::Malformed(format!(
                    "variable {j} ({}) has bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(MilpError::Malformed(format!("variable {j} has an empty domain")));
            }
            if v.integer && !(v.lower.is_finite() && v.upper.is_finite()) {
                return Err(MilpError::Malformed(format!("integer variable {j} ({}) needs finite bounds", v.name)));
            }
            if !self.objective[j].is_finite() {
                return Err(MilpError::Malformed(format!("objective coefficient {j} is not finite")));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(MilpError::Malformed(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &c.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(MilpError::Malformed(format!("row {i} references bad entry ({j}, {a})")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Largest row or bound violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(values)).fold(0.0, f64::max);
        let bounds = self
            .variables
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Largest distance of an integer variable from the nearest integer.
    pub fn max_fractionality(&self, values: &[f64]) -> f64 {
        self.variables
            .iter()
            .zip(values)
            .filter(|(v, _)| v.integer)
            .map(|(_, &x)| (x - x.round()).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with every integrality flag cleared.
    pub fn relaxation(&self) -> Self {
        let mut p = self.clone();
        for v in &mut p.variables {
            v.integer = false;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub node_count: usize,
}

impl MilpSolution {
    pub(crate) fn without_point(status: SolveStatus, n: usize, node_count: usize) -> Self {
        Self { status, values: vec![0.0; n], objective: f64::NAN, node_count }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
