//! Mapping from raw signals to the three ambient display quantities:
//! pulse drives the radius of a red circle, chest expansion the height of
//! a blue cylinder, skin conductance the spawn density of expanding blue
//! circles. The mapping is a windowed normalization followed by a linear
//! transfer; the renderer receives only these numbers.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{normalize_window, window_values, Sample, SignalChannel, SignalFrame};

/// Norm used for a channel with nothing in its window.
pub const NEUTRAL_NORM: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisplayError {
    #[error("normalized input {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid display config: {0}")]
    InvalidConfig(String),
}

impl DisplayError {
    pub fn code(&self) -> &'static str {
        match self {
            DisplayError::OutOfRange(_) => "out-of-range",
            DisplayError::InvalidConfig(_) => "invalid-config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisplayConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub d_max: f64,
    pub window_s: f64,
}

impl Default for DisplayConfig {
    fn default() -> Self {
        DisplayConfig { r_min: 0.2, r_max: 1.0, h_min: 0.1, h_max: 1.0, d_max: 8.0, window_s: 10.0 }
    }
}

impl DisplayConfig {
    pub fn validate(&self) -> Result<(), DisplayError> {
        let finite = [self.r_min, self.r_max, self.h_min, self.h_max, self.d_max, self.window_s]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(DisplayError::InvalidConfig("non-finite value".into()));
        }
        if self.r_min >= self.r_max {
            return Err(DisplayError::InvalidConfig("r_min must be below r_max".into()));
        }
        if self.h_min >= self.h_max {
            return Err(DisplayError::InvalidConfig("h_min must be below h_max".into()));
        }
        if self.d_max <= 0.0 {
            return Err(DisplayError::InvalidConfig("d_max must be positive".into()));
        }
        if self.window_s <= 0.0 {
            return Err(DisplayError::InvalidConfig("window_s must be positive".into()));
        }
        Ok(())
    }

    fn window_ms(&self) -> i64 {
        (self.window_s * 1000.0).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayParams {
    pub participant: String,
    pub t_ms: i64,
    pub heart_radius: f64,
    pub lung_height: f64,
    pub sweat_density: f64,
}

impl DisplayParams {
    /// All-neutral parameters, what the display shows with no data.
    pub fn neutral(participant: &str, t_ms: i64, cfg: &DisplayConfig) -> Self {
        Self::from_norms(participant, t_ms, [NEUTRAL_NORM; 3], cfg)
    }

    fn from_norms(participant: &str, t_ms: i64, norms: [f64; 3], cfg: &DisplayConfig) -> Self {
        // norms are produced in [0, 1] by normalize_window
        DisplayParams {
            participant: participant.to_string(),
            t_ms,
            heart_radius: map_bvp(norms[0], cfg).expect("norm in range"),
            lung_height: map_resp(norms[1], cfg).expect("norm in range"),
            sweat_density: map_sc(norms[2], cfg).expect("norm in range"),
        }
    }

    pub fn within(&self, cfg: &DisplayConfig) -> bool {
        let all_finite = self.heart_radius.is_finite() && self.lung_height.is_finite() && self.sweat_density.is_finite();
        all_finite
            && (cfg.r_min..=cfg.r_max).contains(&self.heart_radius)
            && (cfg.h_min..=cfg.h_max).contains(&self.lung_height)
            && (0.0..=cfg.d_max).contains(&self.sweat_density)
    }
}

fn check_norm(norm: f64) -> Result<f64, DisplayError> {
    if (0.0..=1.0).contains(&norm) {
        Ok(norm)
    } else {
        Err(DisplayError::OutOfRange(norm))
    }
}

/// Heart circle radius.
pub fn map_bvp(norm: f64, cfg: &DisplayConfig) -> Result<f64, DisplayError> {
    Ok(cfg.r_min + check_norm(norm)? * (cfg.r_max - cfg.r_min))
}

/// Lung cylinder height.
pub fn map_resp(norm: f64, cfg: &DisplayConfig) -> Result<f64, DisplayError> {
    Ok(cfg.h_min + check_norm(norm)? * (cfg.h_max - cfg.h_min))
}

/// Expected spawns per second of expanding sweat circles.
pub fn map_sc(norm: f64, cfg: &DisplayConfig) -> Result<f64, DisplayError> {
    Ok(check_norm(norm)? * cfg.d_max)
}

/// Display parameters for one participant at `now_ms` from their recent
/// frames (sorted by time). Frames of other participants are ignored.
pub fn compute_display(participant: &str, frames: &[SignalFrame], cfg: &DisplayConfig, now_ms: i64) -> DisplayParams {
    let mut norms = [NEUTRAL_NORM; 3];
    for ch in SignalChannel::ALL {
        let samples: Vec<Sample> = frames
            .iter()
            .filter(|f| f.channel == ch && f.participant == participant)
            .map(|f| Sample { t_ms: f.t_ms, value: f.value })
            .collect();
        let window: Vec<f64> = window_values(&samples, now_ms, cfg.window_s).collect();
        if let Ok(n) = normalize_window(&window) {
            norms[ch.index()] = n;
        }
    }
    DisplayParams::from_norms(participant, now_ms, norms, cfg)
}

/// Incremental form of [`compute_display`] for streams: keeps only the
/// samples still inside the window.
#[derive(Debug, Clone)]
pub struct DisplayState {
    participant: String,
    cfg: DisplayConfig,
    channels: [VecDeque<Sample>; 3],
}

impl DisplayState {
    pub fn new(participant: impl Into<String>, cfg: DisplayConfig) -> Self {
        DisplayState { participant: participant.into(), cfg, channels: Default::default() }
    }

    pub fn push(&mut self, frame: &SignalFrame) {
        let buf = &mut self.channels[frame.channel.index()];
        buf.push_back(Sample { t_ms: frame.t_ms, value: frame.value });
        let horizon = frame.t_ms - self.cfg.window_ms();
        while buf.front().is_some_and(|s| s.t_ms < horizon) {
            buf.pop_front();
        }
    }

    pub fn params(&self, now_ms: i64) -> DisplayParams {
        let start = now_ms - self.cfg.window_ms();
        let mut norms = [NEUTRAL_NORM; 3];
        for (i, buf) in self.channels.iter().enumerate() {
            let window: Vec<f64> =
                buf.iter().filter(|s| s.t_ms >= start && s.t_ms <= now_ms).map(|s| s.value).collect();
            if let Ok(n) = normalize_window(&window) {
                norms[i] = n;
            }
        }
        DisplayParams::from_norms(&self.participant, now_ms, norms, &self.cfg)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    t_ms: i64,
    participant: &'a str,
    heart_radius: f64,
    lung_height: f64,
    sweat_density: f64,
}

/// `t_ms,participant,heart_radius,lung_height,sweat_density` with a header row.
pub fn write_display_csv<W: Write>(out: W, rows: &[DisplayParams]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for p in rows {
        writer.serialize(CsvRow {
            t_ms: p.t_ms,
            participant: &p.participant,
            heart_radius: p.heart_radius,
            lung_height: p.lung_height,
            sweat_density: p.sweat_density,
        })?;
    }
    if rows.is_empty() {
        writer.write_record(["t_ms", "participant", "heart_radius", "lung_height", "sweat_density"])?;
    }
    writer.flush()?;
    Ok(())
}
