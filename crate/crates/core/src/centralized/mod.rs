//! Centralized joint association and pricing.
//!
//! A planner who sees every user's parameters picks prices `p`, sales `s` and
//! a binary association `x` maximizing the quality-weighted revenue
//! `sum_ij w_j p_j s_ij`. Sales are tied to prices by the follower response
//! `s_ij = (s_max_i - p_j / (2 alpha_i)) x_ij`, each user is served by at
//! most one provider and every provider has a bandwidth capacity.
//!
//! The bilinear terms are relaxed with McCormick envelopes. `p x` is exact
//! because `x` is binary; `p s` is relaxed over the active piece of a
//! partition of `[0, p_max]`, and [`bound_tightening`] refines that partition
//! around the relaxation's prices until the relaxed bound meets a feasible
//! incumbent.

mod builder;
mod sweep;
mod tightening;

pub use builder::{build_milp, build_milp_with, LinearizedMilp, MilpLayout};
pub use sweep::{revenue_vs_capacity_sweep, write_sweep_csv, SweepRow};
pub use tightening::{
    bound_tightening, write_round_log_csv, CentralSolution, RoundRecord, Termination, TighteningConfig,
};

use thiserror::Error;

use crate::distributed::DistributedError;
use crate::milp::{MilpError, SolveStatus};
use crate::model::{MspProfile, Scenario};

/// Partition points closer than this are treated as one.
pub const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CentralizedError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid tightening config: {0}")]
    InvalidConfig(String),
    #[error("no gap closure after {} rounds (gap {gap})", incumbent.rounds)]
    RoundLimit { incumbent: Box<CentralSolution>, gap: f64 },
    #[error("linearized problem is infeasible")]
    Infeasible,
    #[error("milp solver stopped with status {0:?}")]
    Solver(SolveStatus),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Distributed(#[from] DistributedError),
}

/// Quality-proportional provider weights `q_j / sum_k q_k`.
pub fn compute_weights(msps: &[MspProfile]) -> Vec<f64> {
    let total: f64 = msps.iter().map(|m| m.quality).sum();
    msps.iter().map(|m| m.quality / total).collect()
}

/// Weighted revenue `sum_ij w_j p_j s_ij` with `sales[i][j]`.
pub fn true_objective(prices: &[f64], sales: &[Vec<f64>], weights: &[f64]) -> f64 {
    sales.iter().map(|row| row.iter().zip(prices).zip(weights).map(|((s, p), w)| w * p * s).sum::<f64>()).sum()
}

/// Sorted breakpoints per provider, `0 = P_0 < ... < P_N = p_max`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PartitionSet {
    points: Vec<Vec<f64>>,
}

impl PartitionSet {
    /// One piece per provider covering `[0, p_max]`.
    pub fn initial(scenario: &Scenario) -> Self {
        Self { points: scenario.msps.iter().map(|m| vec![0.0, m.p_max]).collect() }
    }

    pub fn new(points: Vec<Vec<f64>>, scenario: &Scenario) -> Result<Self, CentralizedError> {
        let set = Self { points };
        set.validate(scenario)?;
        Ok(set)
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<(), CentralizedError> {
        if self.points.len() != scenario.n_msps() {
            return Err(CentralizedError::InvalidPartition(format!(
                "{} point sets for {} providers",
                self.points.len(),
                scenario.n_msps()
            )));
        }
        for (j, (pts, m)) in self.points.iter().zip(&scenario.msps).enumerate() {
            if pts.len() < 2 || pts[0] != 0.0 || *pts.last().unwrap() != m.p_max {
                return Err(CentralizedError::InvalidPartition(format!(
                    "provider {j}: points must run from 0 to p_max = {}",
                    m.p_max
                )));
            }
            if pts.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(CentralizedError::InvalidPartition(format!("provider {j}: points not increasing")));
            }
        }
        Ok(())
    }

    pub fn points(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn num_partitions(&self, j: usize) -> usize {
        self.points[j].len() - 1
    }

    /// Piece `k` of provider `j` as `(L_k, U_k)`.
    pub fn interval(&self, j: usize, k: usize) -> (f64, f64) {
        (self.points[j][k], self.points[j][k + 1])
    }

    /// Adds a breakpoint unless one already lies within [`MERGE_TOL`].
    /// Returns whether the set changed.
    pub fn insert(&mut self, j: usize, value: f64) -> bool {
        let pts = &mut self.points[j];
        let pos = pts.partition_point(|&v| v < value);
        let near = |k: usize| pts.get(k).is_some_and(|&v| (v - value).abs() <= MERGE_TOL);
        if near(pos) || (pos > 0 && near(pos - 1)) {
            return false;
        }
        pts.insert(pos, value);
        true
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }
}

#[cfg(test)]
mod tests;
