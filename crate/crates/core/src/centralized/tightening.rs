use std::io::Write;

use serde::Serialize;

use super::{build_milp_with, CentralizedError, LinearizedMilp, PartitionSet};
use crate::milp::{solve_milp_with, MilpOptions, SolveStatus};
use crate::model::{Scenario, UserProfile};

/// Largest per-entry departure from the follower response accepted when
/// repairing an incumbent.
const RESPONSE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TighteningConfig {
    /// Shrink factor of a refined piece, > 1.
    pub beta: f64,
    /// Pieces whose refinement step would not exceed this are left alone.
    pub epsilon: f64,
    /// Relative gap: stop once `UB - LB <= gap_tol * max(1, |UB|)`.
    pub gap_tol: f64,
    pub max_rounds: usize,
    /// Add tangent cuts of the per-user revenue to every relaxation.
    pub tangent_cuts: bool,
    pub milp: MilpOptions,
}

impl Default for TighteningConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            epsilon: 1e-3,
            gap_tol: 1e-6,
            max_rounds: 100,
            tangent_cuts: true,
            milp: MilpOptions::default(),
        }
    }
}

impl TighteningConfig {
    pub fn validate(&self) -> Result<(), CentralizedError> {
        let bad = |msg: &str| Err(CentralizedError::InvalidConfig(msg.into()));
        if !(self.beta > 1.0) {
            return bad("beta must exceed 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.gap_tol >= 0.0) {
            return bad("gap_tol must be non-negative");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive");
        }
        Ok(())
    }

    /// Absolute gap accepted for upper bound `ub`.
    pub fn gap_threshold(&self, ub: f64) -> f64 {
        self.gap_tol * ub.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// Upper and lower bound met within the gap tolerance.
    GapClosed,
    /// Every active piece was already within epsilon, so another round
    /// would solve the same problem again.
    PartitionsExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    /// Relaxed optimum of this round.
    pub relaxed: f64,
    /// Weighted objective of this round's repaired candidate, if any.
    pub candidate: Option<f64>,
    /// Active piece `(L_a, U_a)` per provider.
    pub intervals: Vec<(f64, f64)>,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralSolution {
    pub prices: Vec<f64>,
    /// `sales[i][j]`.
    pub sales: Vec<Vec<f64>>,
    /// `association[i][j]` is 1 when user `i` is served by provider `j`.
    pub association: Vec<Vec<u8>>,
    /// Active piece index per provider in the round that produced the
    /// incumbent.
    pub partition_activation: Vec<usize>,
    /// Weighted objective of the incumbent.
    pub objective: f64,
    pub objective_lb: f64,
    pub objective_ub: f64,
    pub gap: f64,
    pub rounds: usize,
    pub lb_ub_history: Vec<RoundRecord>,
    pub weights: Vec<f64>,
    pub partitions: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl CentralSolution {
    /// Unweighted revenue per provider, `p_j sum_i s_ij`.
    pub fn msp_revenues(&self) -> Vec<f64> {
        (0..self.prices.len()).map(|j| self.prices[j] * self.sales.iter().map(|r| r[j]).sum::<f64>()).collect()
    }

    /// Unweighted total revenue.
    pub fn total_revenue(&self) -> f64 {
        self.msp_revenues().iter().sum()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

struct Candidate {
    prices: Vec<f64>,
    sales: Vec<Vec<f64>>,
    association: Vec<Vec<u8>>,
    activation: Vec<usize>,
    objective: f64,
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values.enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) }).0
}

/// Rebuilds sales from the follower response at the relaxation's prices and
/// association, then enforces capacity by proportional scale-down. Returns
/// `None` when the result strays from the response or from `s_min`.
fn repair(scenario: &Scenario, lin: &LinearizedMilp, values: &[f64]) -> Option<Candidate> {
    let lay = &lin.layout;
    let (ni, nj) = (scenario.n_users(), scenario.n_msps());
    let prices: Vec<f64> = (0..nj).map(|j| values[lay.p[j]].clamp(0.0, scenario.msps[j].p_max)).collect();
    let mut association = vec![vec![0u8; nj]; ni];
    let mut sales = vec![vec![0.0; nj]; ni];
    for (i, u) in scenario.users.iter().enumerate() {
        let j = argmax((0..nj).map(|j| values[lay.x[i][j]]));
        if values[lay.x[i][j]] < 0.5 {
            continue;
        }
        association[i][j] = 1;
        sales[i][j] = u.s_max - prices[j] / (2.0 * u.alpha);
    }
    for (j, m) in scenario.msps.iter().enumerate() {
        let Some(cap) = m.capacity else { continue };
        let total: f64 = (0..ni).map(|i| sales[i][j]).sum();
        if total > cap {
            let f = cap / total;
            for row in sales.iter_mut() {
                let before = row[j];
                row[j] *= f;
                if before - row[j] > RESPONSE_TOL {
                    return None;
                }
            }
        }
    }
    for (i, u) in scenario.users.iter().enumerate() {
        for j in 0..nj {
            if association[i][j] == 0 {
                continue;
            }
            let s = sales[i][j];
            if s < u.s_min - RESPONSE_TOL || s > u.s_max {
                return None;
            }
            // drift within tolerance is pushed back onto the s_min bound
            sales[i][j] = s.max(u.s_min);
        }
    }
    let activation = lay.y.iter().map(|yj| argmax(yj.iter().map(|&v| values[v]))).collect();
    let objective = super::true_objective(&prices, &sales, &lin.weights);
    Some(Candidate { prices, sales, association, activation, objective })
}

/// Re-prices every provider optimally for the candidate's association.
///
/// With the association fixed the weighted objective separates by provider,
/// and provider `j` earns `p (A - p B)` with `A = sum s_max` and
/// `B = sum 1/(2 alpha)` over its users. The vertex of that parabola is
/// clamped to the feasible price interval.
fn reprice(scenario: &Scenario, weights: &[f64], c: &Candidate) -> Option<Candidate> {
    let mut prices = c.prices.clone();
    for (j, m) in scenario.msps.iter().enumerate() {
        let users: Vec<&UserProfile> =
            scenario.users.iter().zip(&c.association).filter(|(_, a)| a[j] == 1).map(|(u, _)| u).collect();
        if users.is_empty() {
            continue;
        }
        let a: f64 = users.iter().map(|u| u.s_max).sum();
        let b: f64 = users.iter().map(|u| 0.5 / u.alpha).sum();
        // above `hi` some user buys less than `s_min`; below `lo` capacity overflows
        let hi = users.iter().map(|u| 2.0 * u.alpha * (u.s_max - u.s_min)).fold(m.p_max, f64::min);
        let lo = m.capacity.map_or(0.0, |cap| ((a - cap) / b).max(0.0));
        if lo > hi {
            return None;
        }
        prices[j] = (a / (2.0 * b)).clamp(lo, hi);
    }
    let sales: Vec<Vec<f64>> = scenario
        .users
        .iter()
        .zip(&c.association)
        .map(|(u, assoc)| {
            (0..prices.len())
                .map(|j| if assoc[j] == 1 { (u.s_max - prices[j] / (2.0 * u.alpha)).max(u.s_min) } else { 0.0 })
                .collect()
        })
        .collect();
    let objective = super::true_objective(&prices, &sales, weights);
    Some(Candidate { prices, sales, association: c.association.clone(), activation: c.activation.clone(), objective })
}

/// Dynamic bound tightening: solve the relaxation, repair its solution into
/// a feasible incumbent, shrink each provider's active piece around the
/// relaxation's price by `beta`, and repeat until the bounds meet.
pub fn bound_tightening(scenario: &Scenario, config: &TighteningConfig) -> Result<CentralSolution, CentralizedError> {
    config.validate()?;
    let (ni, nj) = (scenario.n_users(), scenario.n_msps());
    let mut partitions = PartitionSet::initial(scenario);
    let weights = super::compute_weights(&scenario.msps);

    // serving nobody is always feasible
    let mut best = Candidate {
        prices: scenario.msps.iter().map(|m| m.p_max).collect(),
        sales: vec![vec![0.0; nj]; ni],
        association: vec![vec![0; nj]; ni],
        activation: vec![0; nj],
        objective: 0.0,
    };
    let mut lb = 0.0_f64;
    let mut ub = f64::INFINITY;
    let mut history = Vec::new();

    for round in 1..=config.max_rounds {
        let lin = build_milp_with(scenario, &partitions, config.tangent_cuts)?;
        let sol = solve_milp_with(&lin.problem, &config.milp)?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(CentralizedError::Infeasible),
            other => return Err(CentralizedError::Solver(other)),
        }
        let relaxed = sol.objective;
        ub = ub.min(relaxed);
        let intervals: Vec<(f64, f64)> = (0..nj)
            .map(|j| {
                let k = argmax(lin.layout.y[j].iter().map(|&v| sol.values[v]));
                partitions.interval(j, k)
            })
            .collect();
        let prices: Vec<f64> = lin.layout.p.iter().map(|&v| sol.values[v]).collect();

        let candidate = repair(scenario, &lin, &sol.values).map(|c| match reprice(scenario, &weights, &c) {
            Some(r) if r.objective > c.objective => r,
            _ => c,
        });
        let candidate_value = candidate.as_ref().map(|c| c.objective);
        if let Some(c) = candidate {
            if c.objective > lb {
                lb = c.objective;
                best = c;
            }
        }
        // the incumbent can never beat a valid relaxation; keep the bounds
        // ordered when both sit within solver tolerance of each other
        let gap = (ub - lb).max(0.0);
        log::info!("round {round}: lb {lb:.9} ub {ub:.9} gap {gap:.3e}");
        history.push(RoundRecord {
            round,
            lb,
            ub,
            gap,
            relaxed,
            candidate: candidate_value,
            intervals: intervals.clone(),
            prices: prices.clone(),
        });

        let finish = |termination, partitions: PartitionSet, best: Candidate, history| CentralSolution {
            prices: best.prices,
            sales: best.sales,
            association: best.association,
            partition_activation: best.activation,
            objective: best.objective,
            objective_lb: lb,
            objective_ub: ub,
            gap,
            rounds: round,
            lb_ub_history: history,
            weights: weights.clone(),
            partitions: partitions.into_points(),
            termination,
        };
        if gap <= config.gap_threshold(ub) {
            return Ok(finish(Termination::GapClosed, partitions, best, history));
        }

        let mut changed = false;
        for (j, &(l, u)) in intervals.iter().enumerate() {
            let z = (u - l) / config.beta;
            if z <= config.epsilon {
                continue;
            }
            let p = prices[j].clamp(l, u);
            changed |= partitions.insert(j, (p - z).max(l));
            changed |= partitions.insert(j, (p + z).min(u));
        }
        if !changed {
            return Ok(finish(Termination::PartitionsExhausted, partitions, best, history));
        }
        if round == config.max_rounds {
            let sol = finish(Termination::PartitionsExhausted, partitions, best, history);
            return Err(CentralizedError::RoundLimit { incumbent: Box::new(sol), gap });
        }
    }
    unreachable!("loop returns on its last round")
}

/// Writes one row per round: `round, lb, ub, gap`, then `L_a_j, U_a_j, p_j`
/// for every provider.
pub fn write_round_log_csv<W: Write>(solution: &CentralSolution, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let nj = solution.prices.len();
    let mut header: Vec<String> = ["round", "lb", "ub", "gap"].iter().map(|s| s.to_string()).collect();
    for j in 0..nj {
        header.extend([format!("L_a_{j}"), format!("U_a_{j}"), format!("p_{j}")]);
    }
    w.write_record(&header)?;
    for r in &solution.lb_ub_history {
        let mut row = vec![r.round.to_string(), r.lb.to_string(), r.ub.to_string(), r.gap.to_string()];
        for j in 0..nj {
            let (l, u) = r.intervals[j];
            row.extend([l.to_string(), u.to_string(), r.prices[j].to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
