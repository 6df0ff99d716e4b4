//! Physiological channels, frames and sampled traces.
//!
//! Three channels are carried end to end: blood volume pulse, chest
//! expansion and skin conductance. Hardware acquisition is replaced by the
//! seeded generators in [`synth`]; [`analysis`] holds the small amount of
//! processing the lesson needs (pulse rate, phasic activity, windowed
//! normalization).

pub mod analysis;
pub mod io;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{detect_pulse_rate, detect_scr_rate, normalize_window, window_values, MIN_ANALYSIS_S};
pub use synth::{gen_bvp, gen_resp, gen_sc, GenParams, ScrEvent};

/// Default sampling rates in Hz.
pub const BVP_RATE_HZ: f64 = 32.0;
pub const RESP_RATE_HZ: f64 = 8.0;
pub const SC_RATE_HZ: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("empty window")]
    EmptyWindow,
}

impl SignalError {
    pub fn code(&self) -> &'static str {
        match self {
            SignalError::InvalidParameter(_) => "invalid-parameter",
            SignalError::InsufficientData(_) => "insufficient-data",
            SignalError::EmptyWindow => "empty-window",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalChannel {
    #[serde(rename = "BVP")]
    Bvp,
    #[serde(rename = "RESP")]
    Resp,
    #[serde(rename = "SC")]
    Sc,
}

impl SignalChannel {
    pub const ALL: [SignalChannel; 3] = [SignalChannel::Bvp, SignalChannel::Resp, SignalChannel::Sc];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalChannel::Bvp => "BVP",
            SignalChannel::Resp => "RESP",
            SignalChannel::Sc => "SC",
        }
    }

    pub fn index(self) -> usize {
        match self {
            SignalChannel::Bvp => 0,
            SignalChannel::Resp => 1,
            SignalChannel::Sc => 2,
        }
    }
}

impl fmt::Display for SignalChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalChannel {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BVP" => Ok(SignalChannel::Bvp),
            "RESP" | "R" => Ok(SignalChannel::Resp),
            "SC" => Ok(SignalChannel::Sc),
            other => Err(SignalError::InvalidParameter(format!("unknown channel {other:?}"))),
        }
    }
}

/// One timestamped sample of one channel from one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFrame {
    #[serde(default)]
    pub participant: String,
    #[serde(rename = "ch")]
    pub channel: SignalChannel,
    pub seq: u64,
    pub t_ms: i64,
    #[serde(rename = "v")]
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_ms: i64,
    pub value: f64,
}

/// An equally spaced recording of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub channel: SignalChannel,
    pub rate_hz: f64,
    pub samples: Vec<Sample>,
}

impl SignalTrace {
    /// Nominal duration in seconds: sample count over rate.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.value)
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.values().sum::<f64>() / self.samples.len() as f64
    }

    /// Checks the equal-spacing and finiteness invariants.
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(SignalError::InvalidParameter("rate_hz must be positive".into()));
        }
        let step = 1000.0 / self.rate_hz;
        let origin = self.samples.first().map(|s| s.t_ms).unwrap_or(0);
        for (i, s) in self.samples.iter().enumerate() {
            if !s.value.is_finite() {
                return Err(SignalError::InvalidParameter(format!("sample {i} is not finite")));
            }
            let nominal = origin as f64 + i as f64 * step;
            if (s.t_ms as f64 - nominal).abs() > 1.0 {
                return Err(SignalError::InvalidParameter(format!(
                    "sample {i} at {} ms is off the {step} ms grid",
                    s.t_ms
                )));
            }
        }
        Ok(())
    }
}

/// Sample timestamps on the `1000 / rate_hz` grid, rounded to whole ms.
pub(crate) fn sample_times(duration_s: f64, rate_hz: f64) -> impl Iterator<Item = (i64, f64)> {
    let n = (duration_s * rate_hz).round() as usize;
    (0..n).map(move |i| {
        let t_s = i as f64 / rate_hz;
        ((t_s * 1000.0).round() as i64, t_s)
    })
}
