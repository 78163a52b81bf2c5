use std::io::Write;

use serde::Serialize;

use super::{
    pairing_probabilities_raw, payoff_raw, realized_revenue_raw, standard_function_raw, user_best_response,
    user_expected_utility, DistributedError, MspAggregates, PriceVector, DEFAULT_PRICE_FLOOR,
};
use crate::model::Scenario;

/// Steps at or below this size are treated as numerically stationary.
const STEP_NOISE_FLOOR: f64 = 1e-10;

/// Grid size for the unilateral-deviation check of [`verify_equilibrium`].
const DEVIATION_GRID: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsConfig {
    /// Half-width of the central difference.
    pub step_dp: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub price_floor: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            step_dp: 1e-4,
            learning_rate: 1e-2,
            max_iters: 100_000,
            convergence_tol: 1e-4,
            price_floor: DEFAULT_PRICE_FLOOR,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<(), DistributedError> {
        let positive = [
            ("step_dp", self.step_dp),
            ("learning_rate", self.learning_rate),
            ("convergence_tol", self.convergence_tol),
            ("price_floor", self.price_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DistributedError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        // p - dp must stay positive at the floor
        if self.step_dp >= self.price_floor {
            return Err(DistributedError::InvalidConfig(format!(
                "step_dp {} must be below price_floor {}",
                self.step_dp, self.price_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub prices: Vec<f64>,
    /// `sales[i][j]`: bandwidth user `i` buys from provider `j`.
    pub sales: Vec<Vec<f64>>,
    /// `probabilities[i][j]`: pairing probability.
    pub probabilities: Vec<Vec<f64>>,
    /// Realized expected revenue per provider.
    pub revenues: Vec<f64>,
    pub utilities: Vec<f64>,
    /// Price iterates, starting with the initial prices.
    pub trace: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub price_floor: f64,
}

impl EquilibriumResult {
    pub fn total_revenue(&self) -> f64 {
        self.revenues.iter().sum()
    }

    fn assemble(
        scenario: &Scenario,
        prices: Vec<f64>,
        trace: Vec<Vec<f64>>,
        converged: bool,
        iterations: usize,
        price_floor: f64,
    ) -> Result<Self, DistributedError> {
        let lambda = pairing_probabilities_raw(&prices, &scenario.msps);
        let pv = PriceVector::new(prices.clone(), 0.0)?;
        let mut sales = Vec::with_capacity(scenario.n_users());
        let mut utilities = Vec::with_capacity(scenario.n_users());
        for u in &scenario.users {
            let row: Vec<f64> = prices.iter().map(|&p| user_best_response(u, p)).collect();
            utilities.push(user_expected_utility(u, &pv, &row, &lambda)?);
            sales.push(row);
        }
        let revenues = (0..scenario.n_msps()).map(|j| realized_revenue_raw(j, &prices, scenario)).collect();
        Ok(Self {
            prices,
            probabilities: vec![lambda; scenario.n_users()],
            sales,
            revenues,
            utilities,
            trace,
            converged,
            iterations,
            price_floor,
        })
    }
}

/// Synchronous gradient-style price updates driven by central differences of
/// each provider's payoff.
///
/// Every provider reads iterate `k-1` and writes iterate `k`:
/// `p_k = clamp(p_{k-1} + mu * p_{k-1} * dR/dp, floor, p_max)`.
/// The loop stops once, for every provider, the geometric tail
/// `|dp_k| / (1 - |dp_k|/|dp_{k-1}|)` is below `convergence_tol`, which
/// also bounds the plain step size.
pub fn best_response_dynamics(
    scenario: &Scenario,
    config: &DynamicsConfig,
    init: &PriceVector,
) -> Result<EquilibriumResult, DistributedError> {
    config.validate()?;
    let n = scenario.n_msps();
    if init.len() != n {
        return Err(DistributedError::DimensionMismatch { expected: n, got: init.len() });
    }
    for (j, (&p, m)) in init.as_slice().iter().zip(&scenario.msps).enumerate() {
        if p < config.price_floor || p > m.p_max {
            return Err(DistributedError::PriceBelowFloor { msp: j, price: p, floor: config.price_floor });
        }
    }

    let aggregates = MspAggregates::for_scenario(scenario);
    let mut prices = init.as_slice().to_vec();
    let mut trace = vec![prices.clone()];
    let mut last_step: Vec<Option<f64>> = vec![None; n];
    let mut probe = prices.clone();

    for iter in 1..=config.max_iters {
        let mut next = vec![0.0; n];
        let mut converged = true;
        for j in 0..n {
            let p = prices[j];
            probe[j] = p + config.step_dp;
            let up = payoff_raw(j, &probe, &scenario.msps, aggregates[j]);
            probe[j] = p - config.step_dp;
            let down = payoff_raw(j, &probe, &scenario.msps, aggregates[j]);
            probe[j] = p;
            let grad = (up - down) / (2.0 * config.step_dp);
            let updated = (p + config.learning_rate * p * grad).clamp(config.price_floor, scenario.msps[j].p_max);
            next[j] = updated;

            let step = (updated - p).abs();
            let tail = if step <= STEP_NOISE_FLOOR {
                0.0
            } else {
                match last_step[j] {
                    Some(prev) if step < prev => step / (1.0 - step / prev),
                    _ => f64::INFINITY,
                }
            };
            converged &= tail < config.convergence_tol;
            last_step[j] = Some(step);
        }
        prices.copy_from_slice(&next);
        probe.copy_from_slice(&next);
        trace.push(next);
        if converged {
            log::debug!("dynamics converged after {iter} iterations");
            return EquilibriumResult::assemble(scenario, prices, trace, true, iter, config.price_floor);
        }
    }
    let result = EquilibriumResult::assemble(scenario, prices, trace, false, config.max_iters, config.price_floor)?;
    Err(DistributedError::NotConverged(Box::new(result)))
}

/// Outcome of the three equilibrium checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub followers_optimal: bool,
    pub fixed_point: bool,
    pub no_profitable_deviation: bool,
    pub max_follower_error: f64,
    pub max_fixed_point_residual: f64,
    pub max_deviation_gain: f64,
}

impl EquilibriumReport {
    pub fn passed(&self) -> bool {
        self.followers_optimal && self.fixed_point && self.no_profitable_deviation
    }
}

/// Checks that (a) sales equal the clamped follower response exactly, (b)
/// every price is a fixed point of the capped best-response map within
/// `tol`, and (c) no provider gains more than `tol` by moving to any point of
/// a 100-point price grid.
pub fn verify_equilibrium(result: &EquilibriumResult, scenario: &Scenario, tol: f64) -> EquilibriumReport {
    let prices = &result.prices;
    let aggregates = MspAggregates::for_scenario(scenario);

    let mut max_follower_error: f64 = 0.0;
    let mut followers_optimal = result.sales.len() == scenario.n_users();
    for (u, row) in scenario.users.iter().zip(&result.sales) {
        for (&p, &s) in prices.iter().zip(row) {
            let expected = user_best_response(u, p);
            max_follower_error = max_follower_error.max((expected - s).abs());
            followers_optimal &= expected == s;
        }
    }

    let mut max_residual: f64 = 0.0;
    for j in 0..scenario.n_msps() {
        let f = standard_function_raw(j, prices, &scenario.msps, aggregates[j])
            .clamp(result.price_floor, scenario.msps[j].p_max);
        max_residual = max_residual.max((prices[j] - f).abs());
    }

    let max_gain = max_deviation_gain(prices, scenario, result.price_floor, DEVIATION_GRID).0;

    EquilibriumReport {
        followers_optimal,
        fixed_point: max_residual < tol,
        no_profitable_deviation: max_gain <= tol,
        max_follower_error,
        max_fixed_point_residual: max_residual,
        max_deviation_gain: max_gain,
    }
}

/// Largest payoff gain any single provider achieves by moving its price to a
/// point of an evenly spaced grid over `[floor, p_max]`. Returns
/// `(gain, msp, price)`; the gain is clamped at zero.
pub(crate) fn max_deviation_gain(prices: &[f64], scenario: &Scenario, floor: f64, grid: usize) -> (f64, usize, f64) {
    let aggregates = MspAggregates::for_scenario(scenario);
    let mut probe = prices.to_vec();
    let mut best = (0.0, 0, prices.first().copied().unwrap_or(0.0));
    for j in 0..scenario.n_msps() {
        let base = payoff_raw(j, prices, &scenario.msps, aggregates[j]);
        let p_max = scenario.msps[j].p_max;
        for k in 0..grid {
            let p = floor + (p_max - floor) * k as f64 / (grid - 1) as f64;
            probe[j] = p;
            let gain = payoff_raw(j, &probe, &scenario.msps, aggregates[j]) - base;
            if gain > best.0 {
                best = (gain, j, p);
            }
        }
        probe[j] = prices[j];
    }
    best
}

/// Writes `iteration,msp_index,price,revenue`, one row per iterate and
/// provider, where revenue is the realized expected revenue at that iterate.
pub fn write_trace_csv<W: Write>(result: &EquilibriumResult, scenario: &Scenario, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "msp_index", "price", "revenue"])?;
    for (k, prices) in result.trace.iter().enumerate() {
        for (j, p) in prices.iter().enumerate() {
            let rev = realized_revenue_raw(j, prices, scenario);
            w.write_record([k.to_string(), j.to_string(), p.to_string(), rev.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributed::standard_response;
    use crate::model::{generate_scenario, MspProfile, ScenarioRanges, UserProfile};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single() -> Scenario {
        Scenario::new(
            vec![UserProfile::new(0.5, 1.0, 10.0)],
            vec![MspProfile { quality: 1.0, p_max: 12.0, capacity: None }],
        )
        .unwrap()
    }

    fn pv(p: &[f64]) -> PriceVector {
        PriceVector::new(p.to_vec(), DEFAULT_PRICE_FLOOR).unwrap()
    }

    /// Jacobi iteration of the capped best-response map, independent of the
    /// gradient dynamics.
    fn fixed_point_by_iteration(s: &Scenario) -> Vec<f64> {
        let mut p = vec![1.0; s.n_msps()];
        for _ in 0..10_000 {
            let next: Vec<f64> =
                (0..s.n_msps()).map(|j| standard_response(j, &pv(&p), s).unwrap().max(DEFAULT_PRICE_FLOOR)).collect();
            p = next;
        }
        p
    }

    #[test]
    fn single_pair_converges_to_analytic_price() {
        let s = single();
        let r = best_response_dynamics(&s, &DynamicsConfig::default(), &pv(&[1.0])).unwrap();
        assert!(r.converged);
        assert!((r.prices[0] - 5.0).abs() < 1e-3, "{}", r.prices[0]);
        assert_relative_eq!(r.revenues[0], 25.0, epsilon = 1e-5);
        assert_eq!(r.trace[0], vec![1.0]);
    }

    #[test]
    fn starting_at_fixed_point_stops_quickly() {
        let s = generate_scenario(10, 3, 21, &ScenarioRanges::default()).unwrap();
        let fp = fixed_point_by_iteration(&s);
        let r = best_response_dynamics(&s, &DynamicsConfig::default(), &pv(&fp)).unwrap();
        assert!(r.iterations <= 2, "took {}", r.iterations);
        for (a, b) in r.prices.iter().zip(&fp) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn converged_result_passes_verification() {
        for seed in 0..5 {
            let s = generate_scenario(10, 3, seed, &ScenarioRanges::default()).unwrap();
            let cfg = DynamicsConfig::default();
            let r = best_response_dynamics(&s, &cfg, &pv(&[1.0; 3])).unwrap();
            let rep = verify_equilibrium(&r, &s, 10.0 * cfg.convergence_tol);
            assert!(rep.passed(), "seed {seed}: {rep:?}");
            for row in &r.probabilities {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!(r.revenues.iter().all(|&v| v >= 0.0));
            let fp = fixed_point_by_iteration(&s);
            for (a, b) in r.prices.iter().zip(&fp) {
                assert!((a - b).abs() < 1e-3, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn perturbations_fail_verification() {
        let s = generate_scenario(10, 3, 2, &ScenarioRanges::default()).unwrap();
        let r = best_response_dynamics(&s, &DynamicsConfig::default(), &pv(&[1.0; 3])).unwrap();
        let mut bad = r.clone();
        bad.prices[0] += 0.5;
        assert!(!verify_equilibrium(&bad, &s, 1e-3).fixed_point);
        let mut bad = r.clone();
        bad.sales[0][0] += 1.0;
        assert!(!verify_equilibrium(&bad, &s, 1e-3).followers_optimal);
    }

    #[test]
    fn random_inits_agree() {
        let s = generate_scenario(10, 3, 4, &ScenarioRanges::default()).unwrap();
        let cfg = DynamicsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = best_response_dynamics(&s, &cfg, &pv(&[1.0; 3])).unwrap().prices;
        for _ in 0..5 {
            let init: Vec<f64> = (0..3).map(|_| rng.gen_range(DEFAULT_PRICE_FLOOR..12.0)).collect();
            let r = best_response_dynamics(&s, &cfg, &pv(&init)).unwrap();
            for (a, b) in r.prices.iter().zip(&base) {
                assert!((a - b).abs() < 10.0 * cfg.convergence_tol);
            }
        }
    }

    #[test]
    fn iteration_budget_reports_trace() {
        let s = single();
        let cfg = DynamicsConfig { max_iters: 3, ..Default::default() };
        match best_response_dynamics(&s, &cfg, &pv(&[1.0])) {
            Err(DistributedError::NotConverged(r)) => {
                assert!(!r.converged);
                assert_eq!(r.trace.len(), 4);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_init() {
        let s = single();
        let cfg = DynamicsConfig { step_dp: 0.0, ..Default::default() };
        assert!(best_response_dynamics(&s, &cfg, &pv(&[1.0])).is_err());
        let over = PriceVector::new(vec![13.0], DEFAULT_PRICE_FLOOR).unwrap();
        assert!(best_response_dynamics(&s, &DynamicsConfig::default(), &over).is_err());
    }

    #[test]
    fn trace_csv_schema() {
        let s = single();
        let r = best_response_dynamics(&s, &DynamicsConfig::default(), &pv(&[2.0])).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&r, &s, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(rdr.headers().unwrap(), vec!["iteration", "msp_index", "price", "revenue"]);
        let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), r.trace.len());
        let last: f64 = rows.last().unwrap()[3].parse().unwrap();
        assert_relative_eq!(last, r.revenues[0], epsilon = 1e-12);
    }
}
