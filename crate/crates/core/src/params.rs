//! Scenario configuration, unit conversion and the protocol constants derived
//! from it.
//!
//! Everything inside the model works in SI linear units. Decibel forms are
//! accepted only at the file boundary ([`RawConfig`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overlap::{overlap_distribution, OverlapDistribution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },
    #[error(
        "repetitions do not fit delay budget (window W = {window}, need W >= nu + 1 = {needed})"
    )]
    RepetitionsDoNotFit { window: u32, needed: u32 },
    #[error("traffic too intense for model (p >= 1, p = {0})")]
    TrafficTooIntense(f64),
}

impl ConfigError {
    fn range(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::OutOfRange {
            field,
            reason: reason.into(),
        }
    }

    /// Name of the offending field, when the error concerns a single one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::OutOfRange { field, .. } => Some(field),
            ConfigError::RepetitionsDoNotFit { .. } => Some("repetitions_nu"),
            ConfigError::TrafficTooIntense(_) => Some("lambda_rate"),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1e3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Power as written in a config file: `{"watts": x}` or `{"dbm": x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerSpec {
    Watts(f64),
    Dbm(f64),
}

impl PowerSpec {
    pub fn watts(self) -> f64 {
        match self {
            PowerSpec::Watts(w) => w,
            PowerSpec::Dbm(d) => dbm_to_watts(d),
        }
    }
}

/// Ratio as written in a config file: `{"linear": x}` or `{"db": x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioSpec {
    Linear(f64),
    Db(f64),
}

impl RatioSpec {
    pub fn linear(self) -> f64 {
        match self {
            RatioSpec::Linear(x) => x,
            RatioSpec::Db(d) => db_to_linear(d),
        }
    }
}

/// Config file contents. Missing keys take the reference scenario defaults
/// (B = 10, M = 3, 0.5 ms slots, 10 ms budget, 23 dBm, A = 36 /m, beta = 3,
/// T = 2.3 dB, gamma = 1.15, R = 200 m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub phi: f64,
    pub lambda_rate: f64,
    pub range_r: f64,
    pub pathloss_a: f64,
    pub pathloss_beta: f64,
    pub tx_power_s: PowerSpec,
    pub noise_sigma: PowerSpec,
    pub slot_tau: f64,
    pub delay_budget: f64,
    pub num_subchannels_b: u32,
    pub packet_width_m: u32,
    pub repetitions_nu: u32,
    pub sinr_threshold_t: RatioSpec,
    pub eesm_gamma: f64,
    pub plr_target: f64,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            phi: 0.05,
            lambda_rate: 10.0,
            range_r: 200.0,
            pathloss_a: 36.0,
            pathloss_beta: 3.0,
            tx_power_s: PowerSpec::Dbm(23.0),
            noise_sigma: PowerSpec::Watts(1e-13),
            slot_tau: 0.5e-3,
            delay_budget: 10e-3,
            num_subchannels_b: 10,
            packet_width_m: 3,
            repetitions_nu: 2,
            sinr_threshold_t: RatioSpec::Db(2.3),
            eesm_gamma: 1.15,
            plr_target: 1e-2,
        }
    }
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Converts to SI linear units without checking invariants.
    pub fn to_linear(&self) -> ScenarioConfig {
        ScenarioConfig {
            phi: self.phi,
            lambda_rate: self.lambda_rate,
            range_r: self.range_r,
            pathloss_a: self.pathloss_a,
            pathloss_beta: self.pathloss_beta,
            tx_power_s: self.tx_power_s.watts(),
            noise_sigma: self.noise_sigma.watts(),
            slot_tau: self.slot_tau,
            delay_budget: self.delay_budget,
            num_subchannels_b: self.num_subchannels_b,
            packet_width_m: self.packet_width_m,
            repetitions_nu: self.repetitions_nu,
            sinr_threshold_t: self.sinr_threshold_t.linear(),
            eesm_gamma: self.eesm_gamma,
            plr_target: self.plr_target,
        }
    }
}

/// Physical and protocol parameters in SI linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// UE density on the line, 1/m.
    pub phi: f64,
    /// Packet generation rate after the previous packet finished, 1/s.
    pub lambda_rate: f64,
    /// Communication range, m.
    pub range_r: f64,
    pub pathloss_a: f64,
    pub pathloss_beta: f64,
    /// Total transmit power, W.
    pub tx_power_s: f64,
    /// Thermal noise per subchannel, W.
    pub noise_sigma: f64,
    /// Slot duration, s.
    pub slot_tau: f64,
    /// Delay budget, s.
    pub delay_budget: f64,
    pub num_subchannels_b: u32,
    pub packet_width_m: u32,
    pub repetitions_nu: u32,
    /// SINR threshold, linear.
    pub sinr_threshold_t: f64,
    pub eesm_gamma: f64,
    pub plr_target: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        RawConfig::default().to_linear()
    }
}

impl ScenarioConfig {
    /// Repetition window length W = floor(D / tau).
    pub fn window(&self) -> u32 {
        // guard against 10e-3 / 0.5e-3 landing just under an integer
        let ratio = self.delay_budget / self.slot_tau;
        (ratio * (1.0 + 1e-12)).floor() as u32
    }

    pub fn with_lambda(&self, lambda_rate: f64) -> Self {
        ScenarioConfig {
            lambda_rate,
            ..self.clone()
        }
    }

    pub fn with_repetitions(&self, repetitions_nu: u32) -> Self {
        ScenarioConfig {
            repetitions_nu,
            ..self.clone()
        }
    }

    pub fn with_subchannels(&self, num_subchannels_b: u32) -> Self {
        ScenarioConfig {
            num_subchannels_b,
            ..self.clone()
        }
    }

    pub fn with_plr_target(&self, plr_target: f64) -> Self {
        ScenarioConfig {
            plr_target,
            ..self.clone()
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::range(
            field,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

/// Checks every invariant except the one on p (which needs lambda).
fn check_static(cfg: &ScenarioConfig) -> Result<u32, ConfigError> {
    positive("phi", cfg.phi)?;
    positive("lambda_rate", cfg.lambda_rate)?;
    positive("range_r", cfg.range_r)?;
    positive("pathloss_a", cfg.pathloss_a)?;
    positive("pathloss_beta", cfg.pathloss_beta)?;
    if cfg.pathloss_beta < 2.0 {
        return Err(ConfigError::range("pathloss_beta", "must be >= 2"));
    }
    positive("tx_power_s", cfg.tx_power_s)?;
    positive("noise_sigma", cfg.noise_sigma)?;
    positive("slot_tau", cfg.slot_tau)?;
    positive("delay_budget", cfg.delay_budget)?;
    positive("sinr_threshold_t", cfg.sinr_threshold_t)?;
    positive("eesm_gamma", cfg.eesm_gamma)?;
    if cfg.num_subchannels_b == 0 {
        return Err(ConfigError::range("num_subchannels_b", "must be >= 1"));
    }
    if cfg.packet_width_m == 0 || cfg.packet_width_m > cfg.num_subchannels_b {
        return Err(ConfigError::range(
            "packet_width_m",
            format!("need 1 <= M <= B = {}", cfg.num_subchannels_b),
        ));
    }
    if !(cfg.plr_target > 0.0 && cfg.plr_target < 1.0) {
        return Err(ConfigError::range("plr_target", "need 0 < PLR target < 1"));
    }
    let window = cfg.window();
    if window < cfg.repetitions_nu + 1 || window == 0 {
        return Err(ConfigError::RepetitionsDoNotFit {
            window,
            needed: cfg.repetitions_nu + 1,
        });
    }
    Ok(window)
}

fn raw_transmit_probability(cfg: &ScenarioConfig, window: u32) -> f64 {
    let nu = f64::from(cfg.repetitions_nu);
    let idle_slots = 1.0 / (cfg.lambda_rate * cfg.slot_tau);
    (1.0 + nu) / (idle_slots + f64::from(window) * nu / (nu + 1.0))
}

/// Per-slot transmit probability of a UE:
/// `p = (1 + nu) / (1 / (lambda tau) + W nu / (nu + 1))`.
pub fn transmit_probability(cfg: &ScenarioConfig) -> Result<f64, ConfigError> {
    let window = check_static(cfg)?;
    let p = raw_transmit_probability(cfg, window);
    if p >= 1.0 {
        return Err(ConfigError::TrafficTooIntense(p));
    }
    Ok(p)
}

/// Constants derived once per validated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub window_w: u32,
    pub tx_prob_p: f64,
    /// Probability that an active UE transmits in a given slot, nu / (W - 1).
    pub rep_prob_pr: f64,
    /// Number of kept terms in the newly-active-UE series.
    pub truncation_k: u32,
}

impl DerivedConstants {
    fn compute(cfg: &ScenarioConfig, window: u32, p: f64) -> Self {
        let rep_prob_pr = if cfg.repetitions_nu == 0 {
            0.0
        } else {
            f64::from(cfg.repetitions_nu) / f64::from(window - 1)
        };
        DerivedConstants {
            window_w: window,
            tx_prob_p: p,
            rep_prob_pr,
            truncation_k: truncation_terms(p, cfg.plr_target),
        }
    }
}

/// `ceil(log_p target)`, at least 1.
pub fn truncation_terms(p: f64, target: f64) -> u32 {
    if p <= 0.0 {
        return 1;
    }
    let k = (target.ln() / p.ln()).ceil();
    if k.is_finite() && k >= 1.0 {
        k as u32
    } else {
        1
    }
}

/// A validated scenario together with its derived constants and overlap
/// distribution. Immutable once built.
#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    derived: DerivedConstants,
    overlap: OverlapDistribution,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        let window = check_static(&config)?;
        let p = raw_transmit_probability(&config, window);
        if p >= 1.0 {
            return Err(ConfigError::TrafficTooIntense(p));
        }
        let derived = DerivedConstants::compute(&config, window, p);
        let overlap = overlap_distribution(config.num_subchannels_b, config.packet_width_m)
            .expect("M <= B checked above");
        Ok(Scenario {
            config,
            derived,
            overlap,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn derived(&self) -> &DerivedConstants {
        &self.derived
    }

    pub fn overlap(&self) -> &OverlapDistribution {
        &self.overlap
    }

    pub fn p(&self) -> f64 {
        self.derived.tx_prob_p
    }

    pub fn with_lambda(&self, lambda_rate: f64) -> Result<Self, ConfigError> {
        Scenario::new(self.config.with_lambda(lambda_rate))
    }
}

/// Converts a file-level config into a validated scenario.
pub fn validate_config(raw: &RawConfig) -> Result<Scenario, ConfigError> {
    Scenario::new(raw.to_linear())
}
