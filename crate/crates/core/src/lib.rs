//! Packet loss rate and capacity of 5G NR V2X Mode 2 sidelink broadcast with
//! blind repetitions, for sporadic traffic on a line of vehicles.
//!
//! The analytical model lives in [`analytic`]; [`sim`] is a seeded slot-level
//! Monte Carlo simulator of the same protocol used to cross-check it.

pub mod analytic;
pub mod link;
pub mod overlap;
pub mod params;
pub mod quadrature;
pub mod sim;

pub use analytic::{capacity, plr, Capacity, PlrCurvePoint};
pub use params::{validate_config, ConfigError, RawConfig, Scenario, ScenarioConfig};
