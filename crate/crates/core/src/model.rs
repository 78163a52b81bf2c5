//! Market instances: users, service providers, the downlink radio model and
//! scenario generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Margin kept away from the ends of every sampling interval.
pub const ENDPOINT_MARGIN: f64 = 1e-6;

/// Capacities of the reference three-provider market, in MHz.
pub const DEFAULT_CAPACITIES: [f64; 3] = [20.0, 30.0, 50.0];

/// Price cap shared by every provider in the reference market.
pub const DEFAULT_P_MAX: f64 = 12.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bitrate base must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("exponent denominator kappa3 + kappa4 * v evaluates to zero")]
    ZeroExponentDenominator,
    #[error("spectral efficiency must be positive, got {0}")]
    NonPositiveSpectralEfficiency(f64),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Downlink radio parameters between one user and one provider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioLink {
    /// Transmit power in watts.
    pub tx_power: f64,
    /// Received power gain at the 1 m reference distance.
    pub ref_gain_h0: f64,
    /// Distance in meters.
    pub distance: f64,
    pub path_loss_exp: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
}

impl RadioLink {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("tx_power", self.tx_power),
            ("ref_gain_h0", self.ref_gain_h0),
            ("distance", self.distance),
            ("path_loss_exp", self.path_loss_exp),
            ("noise_psd", self.noise_psd),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidScenario(format!("radio link {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Received signal-to-noise term of the Shannon rate.
    pub fn snr(&self) -> f64 {
        self.tx_power * self.ref_gain_h0 * self.distance.powf(-self.path_loss_exp) / self.noise_psd
    }

    /// Bits per second per hertz.
    pub fn spectral_efficiency(&self) -> f64 {
        self.snr().ln_1p() / std::f64::consts::LN_2
    }
}

/// Perceived-quality targets and the rate-model coefficients kappa1..kappa4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeTargets {
    pub ssim_target: f64,
    pub vmaf_target: f64,
    /// Head-mounted display rotation speed, degrees per second.
    pub rotation_speed: f64,
    pub kappa: [f64; 4],
}

impl QoeTargets {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.ssim_target < 1.0 && self.ssim_target.is_finite()) {
            return Err(ModelError::InvalidScenario(format!("ssim target must be below 1, got {}", self.ssim_target)));
        }
        if !(0.0..=100.0).contains(&self.vmaf_target) {
            return Err(ModelError::InvalidScenario(format!(
                "vmaf target must lie in [0, 100], got {}",
                self.vmaf_target
            )));
        }
        if self.scale_denominator() == 0.0 || self.exponent_denominator() == 0.0 {
            return Err(ModelError::ZeroExponentDenominator);
        }
        Ok(())
    }

    fn scale_denominator(&self) -> f64 {
        self.kappa[0] + self.kappa[1] * self.rotation_speed
    }

    fn exponent_denominator(&self) -> f64 {
        self.kappa[2] + self.kappa[3] * self.rotation_speed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    /// Latency sensitivity.
    pub alpha: f64,
    /// Smallest bandwidth the user accepts when served, MHz.
    pub s_min: f64,
    /// Satiation bandwidth, MHz.
    pub s_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qoe: Option<QoeTargets>,
    /// One radio link per provider.
    #[serde(default, rename = "link", skip_serializing_if = "Option::is_none")]
    pub link_per_msp: Option<Vec<RadioLink>>,
}

impl UserProfile {
    pub fn new(alpha: f64, s_min: f64, s_max: f64) -> Self {
        Self { alpha, s_min, s_max, qoe: None, link_per_msp: None }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ModelError::InvalidScenario(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.s_min >= 0.0 && self.s_min < self.s_max && self.s_max.is_finite()) {
            return Err(ModelError::InvalidScenario(format!(
                "need 0 <= s_min < s_max, got s_min={} s_max={}",
                self.s_min, self.s_max
            )));
        }
        if let Some(q) = &self.qoe {
            q.validate()?;
        }
        if let Some(links) = &self.link_per_msp {
            for l in links {
                l.validate()?;
            }
        }
        Ok(())
    }

    /// Bandwidth needed on provider `msp`'s link to meet the QoE targets, when
    /// both targets and that link are present.
    pub fn qoe_min_bandwidth(&self, msp: usize) -> Option<Result<f64, ModelError>> {
        let qoe = self.qoe.as_ref()?;
        let link = self.link_per_msp.as_ref()?.get(msp)?;
        Some(min_bandwidth(qoe, link))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MspProfile {
    /// Link quality in (0, 1].
    pub quality: f64,
    pub p_max: f64,
    /// Bandwidth capacity in MHz; `None` is unbounded.
    pub capacity: Option<f64>,
}

impl MspProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.quality > 0.0 && self.quality <= 1.0) {
            return Err(ModelError::InvalidScenario(format!("quality must lie in (0, 1], got {}", self.quality)));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(ModelError::InvalidScenario(format!("p_max must be positive, got {}", self.p_max)));
        }
        if let Some(c) = self.capacity {
            if !(c.is_finite() && c >= 0.0) {
                return Err(ModelError::InvalidScenario(format!("capacity must be finite and non-negative, got {c}")));
            }
        }
        Ok(())
    }
}

/// One scheduling period's market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<UserProfile>,
    pub msps: Vec<MspProfile>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(users: Vec<UserProfile>, msps: Vec<MspProfile>) -> Result<Self, ModelError> {
        let s = Self { users, msps, seed: 0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.users.is_empty() || self.msps.is_empty() {
            return Err(ModelError::InvalidScenario("need at least one user and one provider".into()));
        }
        for u in &self.users {
            u.validate()?;
            if let Some(links) = &u.link_per_msp {
                if links.len() != self.msps.len() {
                    return Err(ModelError::InvalidScenario(format!(
                        "user has {} links for {} providers",
                        links.len(),
                        self.msps.len()
                    )));
                }
            }
        }
        for m in &self.msps {
            m.validate()?;
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_msps(&self) -> usize {
        self.msps.len()
    }

    /// Copy with every provider's capacity replaced by `capacity`.
    pub fn with_uniform_capacity(&self, capacity: Option<f64>) -> Self {
        let mut s = self.clone();
        for m in &mut s.msps {
            m.capacity = capacity;
        }
        s
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Shannon downlink rate in Mbit/s for `s` MHz over `link`.
pub fn downlink_rate(s: f64, link: &RadioLink) -> f64 {
    s * link.spectral_efficiency()
}

/// Minimal bitrate meeting the SSIM target.
pub fn min_bitrate_ssim(q: &QoeTargets) -> Result<f64, ModelError> {
    let exp_den = q.exponent_denominator();
    if exp_den == 0.0 {
        return Err(ModelError::ZeroExponentDenominator);
    }
    let base = (1.0 - q.ssim_target) / q.scale_denominator();
    if !(base > 0.0) {
        return Err(ModelError::NonPositiveBase(base));
    }
    Ok(base.powf(-1.0 / exp_den))
}

/// Minimal bitrate meeting the VMAF target, floored at zero.
pub fn min_bitrate_vmaf(q: &QoeTargets) -> Result<f64, ModelError> {
    let den = q.exponent_denominator();
    if den == 0.0 {
        return Err(ModelError::ZeroExponentDenominator);
    }
    let r = (q.vmaf_target - q.kappa[0] - q.kappa[1] * q.rotation_speed) / den;
    Ok(r.max(0.0))
}

/// Bandwidth whose downlink rate equals the larger of the two bitrate
/// estimates.
pub fn min_bandwidth(q: &QoeTargets, link: &RadioLink) -> Result<f64, ModelError> {
    let se = link.spectral_efficiency();
    if !(se > 0.0) {
        return Err(ModelError::NonPositiveSpectralEfficiency(se));
    }
    let target = min_bitrate_ssim(q)?.max(min_bitrate_vmaf(q)?);
    Ok(target / se)
}

/// Open sampling interval for one scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn check(&self, name: &str) -> Result<(), ModelError> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(ModelError::InvalidRange(format!(
                "{name}: need low < high, got [{}, {}]",
                self.low, self.high
            )));
        }
        if self.high - self.low <= 2.0 * ENDPOINT_MARGIN {
            return Err(ModelError::InvalidRange(format!("{name}: interval too narrow")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        rng.gen_range(self.low + ENDPOINT_MARGIN..self.high - ENDPOINT_MARGIN)
    }
}

/// Sampling distributions and fixed provider parameters for
/// [`generate_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRanges {
    pub alpha: Range,
    pub s_min: Range,
    pub s_max: Range,
    pub quality: Range,
    pub p_max: f64,
    /// Per-provider capacities, reused cyclically when there are more
    /// providers than entries. Empty means unbounded.
    pub capacities: Vec<Option<f64>>,
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            alpha: Range::new(0.0, 1.0),
            s_min: Range::new(1.0, 5.0),
            s_max: Range::new(10.0, 12.0),
            quality: Range::new(0.0, 1.0),
            p_max: DEFAULT_P_MAX,
            capacities: DEFAULT_CAPACITIES.iter().map(|&c| Some(c)).collect(),
        }
    }
}

pub fn generate_scenario(
    n_users: usize,
    n_msps: usize,
    seed: u64,
    ranges: &ScenarioRanges,
) -> Result<Scenario, ModelError> {
    if n_users == 0 || n_msps == 0 {
        return Err(ModelError::InvalidRange(format!(
            "need at least one user and one provider, got {n_users}x{n_msps}"
        )));
    }
    ranges.alpha.check("alpha")?;
    ranges.s_min.check("s_min")?;
    ranges.s_max.check("s_max")?;
    ranges.quality.check("quality")?;
    if ranges.alpha.low < 0.0 || ranges.quality.low < 0.0 || ranges.quality.high > 1.0 {
        return Err(ModelError::InvalidRange("alpha must be non-negative and quality must lie in [0, 1]".into()));
    }
    if ranges.s_min.low < 0.0 || ranges.s_min.high > ranges.s_max.low {
        return Err(ModelError::InvalidRange("s_min range must be non-negative and lie below the s_max range".into()));
    }
    if !(ranges.p_max.is_finite() && ranges.p_max > 0.0) {
        return Err(ModelError::InvalidRange(format!("p_max must be positive, got {}", ranges.p_max)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..n_users)
        .map(|_| {
            let alpha = ranges.alpha.sample(&mut rng);
            let s_min = ranges.s_min.sample(&mut rng);
            let s_max = ranges.s_max.sample(&mut rng);
            UserProfile::new(alpha, s_min, s_max)
        })
        .collect();
    let msps = (0..n_msps)
        .map(|j| MspProfile {
            quality: ranges.quality.sample(&mut rng),
            p_max: ranges.p_max,
            capacity: if ranges.capacities.is_empty() { None } else { ranges.capacities[j % ranges.capacities.len()] },
        })
        .collect();
    let scenario = Scenario { users, msps, seed };
    scenario.validate()?;
    Ok(scenario)
}
