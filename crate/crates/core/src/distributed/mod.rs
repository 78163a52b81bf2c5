//! Distributed Stackelberg pricing: providers lead with prices, users follow
//! with bandwidth purchases.
//!
//! Users pick a provider at random with probability proportional to its
//! quality/price ratio and buy the bandwidth that maximizes
//! `alpha * s * (2 s_max - s) - p * s`. Providers never see the users'
//! private parameters; they adjust prices from observed revenue.
//!
//! Two revenue views are exposed. [`msp_expected_revenue`] is the revenue a
//! provider actually collects, with each purchase clamped at zero.
//! [`leader_payoff`] is the closed form obtained by substituting the
//! unclamped follower response; the leaders' game (best response, dynamics,
//! deviation checks) is played on that closed form, which is the one with a
//! positive, monotone and scalable best-response map and therefore a unique
//! equilibrium.

mod dynamics;

pub use dynamics::{
    best_response_dynamics, verify_equilibrium, write_trace_csv, DynamicsConfig, EquilibriumReport, EquilibriumResult,
};

use thiserror::Error;

use crate::model::{MspProfile, Scenario, UserProfile};

/// Smallest price a provider may post.
pub const DEFAULT_PRICE_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DistributedError {
    #[error("price {price} of provider {msp} is below the floor {floor}")]
    PriceBelowFloor { msp: usize, price: f64, floor: f64 },
    #[error("expected {expected} prices, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bandwidth {s} outside [0, {s_max}]")]
    OutOfRange { s: f64, s_max: f64 },
    #[error("follower {user} is clamped at zero purchase; analytic derivative undefined")]
    ClampedRegime { user: usize },
    #[error("provider index {0} out of range")]
    NoSuchMsp(usize),
    #[error("best-response dynamics did not converge in {} iterations", .0.iterations)]
    NotConverged(Box<EquilibriumResult>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Posted prices, one per provider, all at or above a floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(prices: Vec<f64>, floor: f64) -> Result<Self, DistributedError> {
        for (msp, &price) in prices.iter().enumerate() {
            if !(price.is_finite() && price >= floor && price > 0.0) {
                return Err(DistributedError::PriceBelowFloor { msp, price, floor });
            }
        }
        Ok(Self(prices))
    }

    /// Same price for every provider.
    pub fn uniform(n: usize, price: f64, floor: f64) -> Result<Self, DistributedError> {
        Self::new(vec![price; n], floor)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for PriceVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Per-provider user aggregates `X = q * sum s_max` and `Y = q * sum 1/(2 alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MspAggregates {
    pub x: f64,
    pub y: f64,
}

impl MspAggregates {
    pub fn new(quality: f64, users: &[UserProfile]) -> Self {
        let sum_smax: f64 = users.iter().map(|u| u.s_max).sum();
        let sum_inv: f64 = users.iter().map(|u| 0.5 / u.alpha).sum();
        Self { x: quality * sum_smax, y: quality * sum_inv }
    }

    pub fn for_scenario(scenario: &Scenario) -> Vec<Self> {
        scenario.msps.iter().map(|m| Self::new(m.quality, &scenario.users)).collect()
    }
}

fn check_dims(prices: &PriceVector, n: usize) -> Result<(), DistributedError> {
    if prices.len() != n {
        return Err(DistributedError::DimensionMismatch { expected: n, got: prices.len() });
    }
    Ok(())
}

fn check_msp(j: usize, scenario: &Scenario) -> Result<(), DistributedError> {
    if j >= scenario.n_msps() {
        return Err(DistributedError::NoSuchMsp(j));
    }
    Ok(())
}

/// `sum_k q^k / p^k`
pub(crate) fn ratio_sum(prices: &[f64], msps: &[MspProfile]) -> f64 {
    prices.iter().zip(msps).map(|(p, m)| m.quality / p).sum()
}

/// Probability that a user pairs with each provider. Identical for every user.
pub fn pairing_probabilities(prices: &PriceVector, msps: &[MspProfile]) -> Result<Vec<f64>, DistributedError> {
    check_dims(prices, msps.len())?;
    Ok(pairing_probabilities_raw(prices.as_slice(), msps))
}

pub(crate) fn pairing_probabilities_raw(prices: &[f64], msps: &[MspProfile]) -> Vec<f64> {
    let total = ratio_sum(prices, msps);
    prices.iter().zip(msps).map(|(p, m)| m.quality / p / total).collect()
}

/// `alpha * s * (2 s_max - s)`
pub fn user_satisfaction(user: &UserProfile, s: f64) -> Result<f64, DistributedError> {
    if !(0.0..=user.s_max).contains(&s) {
        return Err(DistributedError::OutOfRange { s, s_max: user.s_max });
    }
    Ok(satisfaction(user, s))
}

fn satisfaction(user: &UserProfile, s: f64) -> f64 {
    user.alpha * s * (2.0 * user.s_max - s)
}

/// Utility-maximizing purchase at `price`, clamped at zero.
pub fn user_best_response(user: &UserProfile, price: f64) -> f64 {
    (user.s_max - price / (2.0 * user.alpha)).max(0.0)
}

/// `sum_j lambda^j (S(s^j) - p^j s^j)`
pub fn user_expected_utility(
    user: &UserProfile,
    prices: &PriceVector,
    sales: &[f64],
    probs: &[f64],
) -> Result<f64, DistributedError> {
    if sales.len() != prices.len() || probs.len() != prices.len() {
        return Err(DistributedError::DimensionMismatch { expected: prices.len(), got: sales.len().min(probs.len()) });
    }
    let mut total = 0.0;
    for ((&p, &s), &lambda) in prices.as_slice().iter().zip(sales).zip(probs) {
        total += lambda * (user_satisfaction(user, s)? - p * s);
    }
    Ok(total)
}

/// First user whose best response at `price` is clamped at zero.
fn first_clamped(users: &[UserProfile], price: f64) -> Option<usize> {
    users.iter().position(|u| price >= 2.0 * u.alpha * u.s_max)
}

/// Revenue provider `j` collects from clamped follower purchases.
pub fn msp_expected_revenue(j: usize, prices: &PriceVector, scenario: &Scenario) -> Result<f64, DistributedError> {
    check_dims(prices, scenario.n_msps())?;
    check_msp(j, scenario)?;
    Ok(realized_revenue_raw(j, prices.as_slice(), scenario))
}

pub(crate) fn realized_revenue_raw(j: usize, prices: &[f64], scenario: &Scenario) -> f64 {
    let p = prices[j];
    let total = ratio_sum(prices, &scenario.msps);
    if first_clamped(&scenario.users, p).is_none() {
        let agg = MspAggregates::new(scenario.msps[j].quality, &scenario.users);
        (agg.x - p * agg.y) / total
    } else {
        let lambda = scenario.msps[j].quality / p / total;
        let sold: f64 = scenario.users.iter().map(|u| user_best_response(u, p)).sum();
        p * lambda * sold
    }
}

/// Closed-form leader payoff `(X^j - p^j Y^j) / sum_k q^k/p^k`.
///
/// Equals [`msp_expected_revenue`] whenever no follower is clamped.
pub fn leader_payoff(j: usize, prices: &PriceVector, scenario: &Scenario) -> Result<f64, DistributedError> {
    check_dims(prices, scenario.n_msps())?;
    check_msp(j, scenario)?;
    let agg = MspAggregates::new(scenario.msps[j].quality, &scenario.users);
    Ok(payoff_raw(j, prices.as_slice(), &scenario.msps, agg))
}

pub(crate) fn payoff_raw(j: usize, prices: &[f64], msps: &[MspProfile], agg: MspAggregates) -> f64 {
    (agg.x - prices[j] * agg.y) / ratio_sum(prices, msps)
}

/// Analytic `dR^j/dp^j = pi^j / (sum_k q^k/p^k)^2`, valid while every
/// follower buys a positive amount.
pub fn revenue_price_derivative(j: usize, prices: &PriceVector, scenario: &Scenario) -> Result<f64, DistributedError> {
    check_dims(prices, scenario.n_msps())?;
    check_msp(j, scenario)?;
    let p = prices.as_slice();
    if let Some(user) = first_clamped(&scenario.users, p[j]) {
        return Err(DistributedError::ClampedRegime { user });
    }
    let agg = MspAggregates::new(scenario.msps[j].quality, &scenario.users);
    Ok(payoff_derivative_raw(j, p, &scenario.msps, agg))
}

pub(crate) fn payoff_derivative_raw(j: usize, p: &[f64], msps: &[MspProfile], agg: MspAggregates) -> f64 {
    let q = msps[j].quality;
    let total = ratio_sum(p, msps);
    let others = total - q / p[j];
    let pi = -agg.y * others + q * agg.x / (p[j] * p[j]) - 2.0 * q * agg.y / p[j];
    pi / (total * total)
}

/// Unclamped best-response map `F^j(p)`.
pub(crate) fn standard_function_raw(j: usize, p: &[f64], msps: &[MspProfile], agg: MspAggregates) -> f64 {
    let q = msps[j].quality;
    let others: f64 = p.iter().zip(msps).enumerate().filter(|&(k, _)| k != j).map(|(_, (pk, m))| m.quality / pk).sum();
    let a = 2.0 * q * agg.y;
    2.0 * q * agg.x / (a + (a * a + 4.0 * q * agg.x * agg.y * others).sqrt())
}

/// Provider `j`'s best response `min(F^j(p), p_max)` to the other prices.
pub fn standard_response(j: usize, prices: &PriceVector, scenario: &Scenario) -> Result<f64, DistributedError> {
    check_dims(prices, scenario.n_msps())?;
    check_msp(j, scenario)?;
    let agg = MspAggregates::new(scenario.msps[j].quality, &scenario.users);
    let f = standard_function_raw(j, prices.as_slice(), &scenario.msps, agg);
    Ok(f.min(scenario.msps[j].p_max))
}

/// `F^j(p)` without the price cap; exposed for property checks.
pub fn standard_function(j: usize, prices: &PriceVector, scenario: &Scenario) -> Result<f64, DistributedError> {
    check_dims(prices, scenario.n_msps())?;
    check_msp(j, scenario)?;
    let agg = MspAggregates::new(scenario.msps[j].quality, &scenario.users);
    Ok(standard_function_raw(j, prices.as_slice(), &scenario.msps, agg))
}
