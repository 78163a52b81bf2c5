use std::io::Write;

use serde::Serialize;

use super::{bound_tightening, CentralizedError, Termination, TighteningConfig};
use crate::distributed::{best_response_dynamics, DynamicsConfig, PriceVector};
use crate::model::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub capacity: f64,
    /// Weighted objective of the centralized incumbent.
    pub centralized_objective: f64,
    /// Unweighted centralized revenue.
    pub centralized_total: f64,
    pub centralized_gap: f64,
    pub centralized_rounds: usize,
    pub termination: Termination,
    /// Distributed revenue; the distributed scheme ignores capacity.
    pub distributed_total: f64,
}

/// Solves the centralized problem at each uniform capacity and pairs it with
/// the (capacity independent) distributed equilibrium revenue.
pub fn revenue_vs_capacity_sweep(
    template: &Scenario,
    capacities: &[f64],
    tightening: &TighteningConfig,
    dynamics: &DynamicsConfig,
) -> Result<Vec<SweepRow>, CentralizedError> {
    if capacities.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(CentralizedError::InvalidConfig("capacities must be sorted ascending".into()));
    }
    let init = PriceVector::new(template.msps.iter().map(|m| m.p_max / 2.0).collect(), dynamics.price_floor)?;
    let distributed_total = best_response_dynamics(template, dynamics, &init)?.total_revenue();
    capacities
        .iter()
        .map(|&c| {
            let sol = bound_tightening(&template.with_uniform_capacity(Some(c)), tightening)?;
            Ok(SweepRow {
                capacity: c,
                centralized_objective: sol.objective,
                centralized_total: sol.total_revenue(),
                centralized_gap: sol.gap,
                centralized_rounds: sol.rounds,
                termination: sol.termination,
                distributed_total,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "capacity",
        "centralized_objective",
        "centralized_total",
        "centralized_gap",
        "centralized_rounds",
        "termination",
        "distributed_total",
    ])?;
    for r in rows {
        w.write_record([
            r.capacity.to_string(),
            r.centralized_objective.to_string(),
            r.centralized_total.to_string(),
            r.centralized_gap.to_string(),
            r.centralized_rounds.to_string(),
            format!("{:?}", r.termination),
            r.distributed_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
