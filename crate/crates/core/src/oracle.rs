//! Brute-force reference computations.
//!
//! Everything here is deliberately naive: exhaustive grids and full
//! enumeration, written without calling into the solvers it checks, so that
//! agreement between the two is meaningful.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::distributed::{user_best_response, PriceVector, DEFAULT_PRICE_FLOOR};
use crate::model::{Scenario, UserProfile};

/// Largest instance [`enumerate_centralized`] accepts.
pub const MAX_ENUM_USERS: usize = 6;
pub const MAX_ENUM_MSPS: usize = 2;

/// Slack allowed on the minimum-purchase and capacity checks.
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance with {users} users and {msps} providers is too large to enumerate")]
    TooLarge { users: usize, msps: usize },
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("deviation grid needs at least 10 points, got {0}")]
    GridTooSmall(usize),
    #[error("expected {expected} prices, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Outcome of comparing a solver against an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub target: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub cases: usize,
    /// Inputs of the case with the largest absolute error.
    pub worst_case: serde_json::Value,
}

impl OracleReport {
    /// Empty report for `target`.
    pub fn new(target: &str) -> Self {
        Self {
            target: target.to_string(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            cases: 0,
            worst_case: serde_json::Value::Null,
        }
    }

    /// Adds one case with absolute error `abs` relative to `scale`; `case`
    /// is only evaluated when it becomes the worst case.
    pub fn record(&mut self, abs: f64, scale: f64, case: impl FnOnce() -> serde_json::Value) {
        self.cases += 1;
        let abs = abs.max(0.0);
        let rel = if scale.abs() > 0.0 { abs / scale.abs() } else { abs };
        self.max_rel_error = self.max_rel_error.max(rel);
        if abs > self.max_abs_error || self.worst_case.is_null() {
            self.max_abs_error = self.max_abs_error.max(abs);
            self.worst_case = case();
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), OracleError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

fn check_resolution(resolution: f64) -> Result<(), OracleError> {
    if resolution > 0.0 && resolution.is_finite() {
        Ok(())
    } else {
        Err(OracleError::InvalidResolution(resolution))
    }
}

/// `{0, h, 2h, ...}` up to `top`, with `top` appended when the step misses it.
fn grid_points(top: f64, h: f64) -> impl Iterator<Item = f64> {
    let n = (top / h + 1e-9).floor() as usize;
    let last = n as f64 * h;
    let tail = (top - last > 1e-12).then_some(top);
    (0..=n).map(move |k| (k as f64 * h).min(top)).chain(tail)
}

/// Purchase maximizing `alpha s (2 s_max - s) - p s` over the grid
/// `{0, h, 2h, ..., s_max}`. The pairing probability scales the utility by a
/// positive constant and does not move the maximizer.
pub fn grid_best_response(user: &UserProfile, price: f64, resolution: f64) -> Result<f64, OracleError> {
    check_resolution(resolution)?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for s in grid_points(user.s_max, resolution) {
        let u = user.alpha * s * (2.0 * user.s_max - s) - price * s;
        if u > best.0 {
            best = (u, s);
        }
    }
    Ok(best.1)
}

/// Compares [`user_best_response`] with [`grid_best_response`] over `draws`
/// random users and prices, `alpha` in (0, 1], `s_max` in [10, 12] and price
/// in [0, 12].
pub fn best_response_sweep(draws: usize, seed: u64, resolution: f64) -> Result<OracleReport, OracleError> {
    check_resolution(resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::new("user_best_response");
    for _ in 0..draws {
        let alpha = 1.0 - rng.gen::<f64>();
        let s_max = rng.gen_range(10.0..=12.0);
        let price = rng.gen_range(0.0..=12.0);
        let user = UserProfile::new(alpha, 0.0, s_max);
        let grid = grid_best_response(&user, price, resolution)?;
        let exact = user_best_response(&user, price);
        report.record(
            (grid - exact).abs(),
            exact,
            || json!({ "alpha": alpha, "s_max": s_max, "price": price, "grid": grid, "closed_form": exact }),
        );
    }
    Ok(report)
}

/// Best weighted revenue `sum_ij (q_j / sum q) p_j s_ij` over every
/// association and every price vector on a grid of step `resolution`, with
/// sales `s_ij = s_max_i - p_j / (2 alpha_i)` for served users.
///
/// Providers interact only through the association, so the best revenue of
/// each (provider, served set) pair is tabulated once over the price grid and
/// associations are then enumerated over the table.
pub fn enumerate_centralized(scenario: &Scenario, resolution: f64) -> Result<f64, OracleError> {
    let (ni, nj) = (scenario.n_users(), scenario.n_msps());
    if ni > MAX_ENUM_USERS || nj > MAX_ENUM_MSPS {
        return Err(OracleError::TooLarge { users: ni, msps: nj });
    }
    check_resolution(resolution)?;
    let total_q: f64 = scenario.msps.iter().map(|m| m.quality).sum();
    let subsets = 1usize << ni;

    let mut table = Vec::with_capacity(nj);
    for m in &scenario.msps {
        let weight = m.quality / total_q;
        let cap = m.capacity.unwrap_or(f64::INFINITY);
        let mut best = vec![f64::NEG_INFINITY; subsets];
        best[0] = 0.0;
        let mut sum = vec![0.0; subsets];
        let mut feasible = vec![true; subsets];
        for p in grid_points(m.p_max, resolution) {
            let sales: Vec<f64> = scenario.users.iter().map(|u| u.s_max - p / (2.0 * u.alpha)).collect();
            for mask in 1..subsets {
                let low = mask.trailing_zeros() as usize;
                let rest = mask & (mask - 1);
                let u = &scenario.users[low];
                sum[mask] = sum[rest] + sales[low];
                feasible[mask] = feasible[rest] && sales[low] >= u.s_min - FEAS_TOL && sales[low] >= -FEAS_TOL;
                if feasible[mask] && sum[mask] <= cap + FEAS_TOL {
                    best[mask] = best[mask].max(weight * p * sum[mask]);
                }
            }
        }
        table.push(best);
    }

    let mut best = 0.0f64;
    let mut masks = vec![0usize; nj];
    let assignments = (nj + 1).pow(ni as u32);
    for code in 0..assignments {
        masks.iter_mut().for_each(|m| *m = 0);
        let mut c = code;
        for i in 0..ni {
            let choice = c % (nj + 1);
            c /= nj + 1;
            if choice > 0 {
                masks[choice - 1] |= 1 << i;
            }
        }
        let value: f64 = masks.iter().zip(&table).map(|(&mask, t)| t[mask]).sum();
        best = best.max(value);
    }
    Ok(best)
}

/// Leader revenue `p_j lambda_j sum_i s_i(p_j)` with the unclamped follower
/// response `s_i(p) = s_max_i - p / (2 alpha_i)`, the form the pricing game
/// is played on.
fn leader_revenue(j: usize, prices: &[f64], scenario: &Scenario) -> f64 {
    let denom: f64 = prices.iter().zip(&scenario.msps).map(|(p, m)| m.quality / p).sum();
    let p = prices[j];
    let lambda = scenario.msps[j].quality / p / denom;
    let sold: f64 = scenario.users.iter().map(|u| u.s_max - p / (2.0 * u.alpha)).sum();
    p * lambda * sold
}

/// For every provider, moves its price alone across `grid` evenly spaced
/// points of `[floor, p_max]` and reports the largest revenue improvement
/// over `prices`.
pub fn deviation_scan(prices: &PriceVector, scenario: &Scenario, grid: usize) -> Result<OracleReport, OracleError> {
    if grid < 10 {
        return Err(OracleError::GridTooSmall(grid));
    }
    let base = prices.as_slice();
    if base.len() != scenario.n_msps() {
        return Err(OracleError::DimensionMismatch { expected: scenario.n_msps(), got: base.len() });
    }
    let mut report = OracleReport::new("deviation_scan");
    let mut probe = base.to_vec();
    for (j, m) in scenario.msps.iter().enumerate() {
        let current = leader_revenue(j, base, scenario);
        let lo = DEFAULT_PRICE_FLOOR.min(m.p_max);
        for k in 0..grid {
            let p = lo + (m.p_max - lo) * k as f64 / (grid - 1) as f64;
            probe[j] = p;
            let gain = leader_revenue(j, &probe, scenario) - current;
            report.record(gain, current, || {
                json!({ "msp": j, "prices": base, "deviation": p, "revenue": current, "deviated_revenue": current + gain })
            });
        }
        probe[j] = base[j];
    }
    Ok(report)
}
