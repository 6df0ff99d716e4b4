use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::display::DisplayConfig;
use crate::signals::{SignalChannel, BVP_RATE_HZ, RESP_RATE_HZ, SC_RATE_HZ};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalRates {
    pub bvp: f64,
    pub resp: f64,
    pub sc: f64,
}

impl Default for SignalRates {
    fn default() -> Self {
        SignalRates { bvp: BVP_RATE_HZ, resp: RESP_RATE_HZ, sc: SC_RATE_HZ }
    }
}

impl SignalRates {
    pub fn for_channel(&self, ch: SignalChannel) -> f64 {
        match ch {
            SignalChannel::Bvp => self.bvp,
            SignalChannel::Resp => self.resp,
            SignalChannel::Sc => self.sc,
        }
    }
}

/// Skin conductance activity and the teacher's pacing banner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrConfig {
    pub slope_threshold_us_per_s: f64,
    /// Trailing window over which activity is counted.
    pub window_s: f64,
    /// Events per minute above which the advisory reads RELAX.
    pub pacing_threshold_per_min: f64,
    pub advisory_enabled: bool,
}

impl Default for ScrConfig {
    fn default() -> Self {
        ScrConfig {
            slope_threshold_us_per_s: 0.05,
            window_s: 60.0,
            pacing_threshold_per_min: 6.0,
            advisory_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// HTTP and web socket port.
    pub port: u16,
    /// Newline-delimited JSON socket port.
    pub socket_port: u16,
    pub boards: Vec<String>,
    pub max_students: usize,
    pub max_observers: usize,
    pub rates: SignalRates,
    pub display: DisplayConfig,
    pub scr: ScrConfig,
    /// Per-client outbound queue capacity.
    pub outbound_queue: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            port: 7878,
            socket_port: 7879,
            boards: vec!["teacher".into(), "student".into()],
            max_students: 3,
            max_observers: 2,
            rates: SignalRates::default(),
            display: DisplayConfig::default(),
            scr: ScrConfig::default(),
            outbound_queue: 1024,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.display.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.boards.is_empty() {
            return Err(ConfigError::Invalid("at least one board is required".into()));
        }
        let mut ids = self.boards.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.boards.len() {
            return Err(ConfigError::Invalid("board ids must be unique".into()));
        }
        for rate in [self.rates.bvp, self.rates.resp, self.rates.sc] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(ConfigError::Invalid(format!("sampling rate {rate} must be positive")));
            }
        }
        let scr = &self.scr;
        if !(scr.slope_threshold_us_per_s > 0.0 && scr.window_s > 0.0 && scr.pacing_threshold_per_min > 0.0) {
            return Err(ConfigError::Invalid("scr thresholds and window must be positive".into()));
        }
        if self.outbound_queue == 0 {
            return Err(ConfigError::Invalid("outbound_queue must be positive".into()));
        }
        Ok(())
    }
}
