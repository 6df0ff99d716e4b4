//! Seeded synthetic sources standing in for sensor hardware.
//!
//! Every generator is a pure function of its arguments: the same seed always
//! yields the same trace.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_times, Sample, SignalChannel, SignalError, SignalTrace};

/// Fraction of the cardiac period occupied by the systolic half-sine.
const SYSTOLIC_WIDTH: f64 = 0.3;
/// Dicrotic bump: start, width (fractions of the period) and relative amplitude.
const DICROTIC_START: f64 = 0.4;
const DICROTIC_WIDTH: f64 = 0.2;
const DICROTIC_AMPLITUDE: f64 = 0.2;
/// Per-beat amplitude and per-breath period jitter.
const JITTER: f64 = 0.05;

/// SCR kinetics in seconds.
pub const SCR_TAU_RISE_S: f64 = 1.0;
pub const SCR_TAU_DECAY_S: f64 = 4.0;
/// Upper bound on the tonic drift rate as a fraction of tonic level per minute.
pub const SC_DRIFT_PER_MIN: f64 = 0.02;
const SC_DRIFT_WAVE_PERIOD_S: f64 = 90.0;

/// A phasic skin conductance response injected at `t_s` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrEvent {
    pub t_s: f64,
    pub amplitude_us: f64,
}

fn finite_positive(name: &str, v: f64) -> Result<(), SignalError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SignalError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn jitter(rng: &mut ChaCha8Rng) -> f64 {
    1.0 + JITTER * rng.gen_range(-1.0..=1.0)
}

/// Unit-amplitude pulse shape at cardiac phase `phase` in `[0, 1)`.
fn pulse_shape(phase: f64) -> f64 {
    if phase < SYSTOLIC_WIDTH {
        (PI * phase / SYSTOLIC_WIDTH).sin()
    } else if (DICROTIC_START..DICROTIC_START + DICROTIC_WIDTH).contains(&phase) {
        DICROTIC_AMPLITUDE * (PI * (phase - DICROTIC_START) / DICROTIC_WIDTH).sin()
    } else {
        0.0
    }
}

/// Blood volume pulse: one half-sine systolic peak per beat followed by a
/// small dicrotic bump, with seeded per-beat amplitude jitter.
pub fn gen_bvp(hr_bpm: f64, duration_s: f64, rate_hz: f64, seed: u64) -> Result<SignalTrace, SignalError> {
    if !(30.0..=200.0).contains(&hr_bpm) {
        return Err(SignalError::InvalidParameter(format!("hr_bpm {hr_bpm} outside [30, 200]")));
    }
    finite_positive("duration_s", duration_s)?;
    finite_positive("rate_hz", rate_hz)?;
    if rate_hz < 4.0 * hr_bpm / 60.0 {
        return Err(SignalError::InvalidParameter(format!(
            "rate_hz {rate_hz} below 4 samples per beat at {hr_bpm} bpm"
        )));
    }
    let period_s = 60.0 / hr_bpm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beats = (duration_s / period_s).ceil() as usize + 1;
    let amplitudes: Vec<f64> = (0..beats).map(|_| jitter(&mut rng)).collect();

    let samples = sample_times(duration_s, rate_hz)
        .map(|(t_ms, t_s)| {
            let beat = (t_s / period_s).floor();
            let phase = t_s / period_s - beat;
            let a = amplitudes[(beat as usize).min(beats - 1)];
            Sample { t_ms, value: a * pulse_shape(phase) }
        })
        .collect();
    Ok(SignalTrace { channel: SignalChannel::Bvp, rate_hz, samples })
}

/// Respiration as a raised sinusoid in `[0, 1]`, each breath's period
/// jittered by up to ±5%.
pub fn gen_resp(breaths_per_min: f64, duration_s: f64, rate_hz: f64, seed: u64) -> Result<SignalTrace, SignalError> {
    if !(4.0..=60.0).contains(&breaths_per_min) {
        return Err(SignalError::InvalidParameter(format!(
            "breaths_per_min {breaths_per_min} outside [4, 60]"
        )));
    }
    finite_positive("duration_s", duration_s)?;
    if !(rate_hz.is_finite() && rate_hz >= 2.0) {
        return Err(SignalError::InvalidParameter(format!("rate_hz {rate_hz} below 2")));
    }
    let nominal = 60.0 / breaths_per_min;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (start, period) of each breath covering the whole duration
    let mut breaths = Vec::new();
    let mut start = 0.0;
    while start <= duration_s {
        let period = nominal * jitter(&mut rng);
        breaths.push((start, period));
        start += period;
    }

    let mut idx = 0;
    let samples = sample_times(duration_s, rate_hz)
        .map(|(t_ms, t_s)| {
            while idx + 1 < breaths.len() && breaths[idx + 1].0 <= t_s {
                idx += 1;
            }
            let (start, period) = breaths[idx];
            let phase = (t_s - start) / period;
            let value = (0.5 - 0.5 * (2.0 * PI * phase).cos()).clamp(0.0, 1.0);
            Sample { t_ms, value }
        })
        .collect();
    Ok(SignalTrace { channel: SignalChannel::Resp, rate_hz, samples })
}

/// Phasic response of a single SCR `elapsed_s` seconds after onset.
pub fn scr_response(amplitude_us: f64, elapsed_s: f64) -> f64 {
    if elapsed_s < 0.0 {
        return 0.0;
    }
    amplitude_us * (1.0 - (-elapsed_s / SCR_TAU_RISE_S).exp()) * (-elapsed_s / SCR_TAU_DECAY_S).exp()
}

/// Skin conductance: tonic level plus a slow seeded drift plus one
/// rise/decay response per injected event.
pub fn gen_sc(
    tonic_us: f64,
    scr_events: &[ScrEvent],
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<SignalTrace, SignalError> {
    finite_positive("tonic_us", tonic_us)?;
    finite_positive("duration_s", duration_s)?;
    finite_positive("rate_hz", rate_hz)?;
    for ev in scr_events {
        if !(ev.t_s.is_finite() && (0.0..=duration_s).contains(&ev.t_s)) {
            return Err(SignalError::InvalidParameter(format!("event time {} outside [0, {duration_s}]", ev.t_s)));
        }
        finite_positive("amplitude_us", ev.amplitude_us)?;
    }

    // Half of the drift budget goes to a linear trend, half to a slow wave,
    // so |d drift / dt| never exceeds SC_DRIFT_PER_MIN of tonic per minute.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_rate = tonic_us * SC_DRIFT_PER_MIN / 2.0 / 60.0;
    let trend = half_rate * rng.gen_range(-1.0..=1.0);
    let wave_amp = half_rate * SC_DRIFT_WAVE_PERIOD_S / (2.0 * PI) * rng.gen_range(-1.0..=1.0);
    let wave_phase = rng.gen_range(0.0..2.0 * PI);

    let samples = sample_times(duration_s, rate_hz)
        .map(|(t_ms, t_s)| {
            let drift = trend * t_s
                + wave_amp * ((2.0 * PI * t_s / SC_DRIFT_WAVE_PERIOD_S + wave_phase).sin() - wave_phase.sin());
            let phasic: f64 = scr_events.iter().map(|ev| scr_response(ev.amplitude_us, t_s - ev.t_s)).sum();
            Sample { t_ms, value: tonic_us + drift + phasic }
        })
        .collect();
    Ok(SignalTrace { channel: SignalChannel::Sc, rate_hz, samples })
}

/// A generator invocation, as accepted on the command line and over HTTP.
/// Channel-specific parameters fall back to resting values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub channel: SignalChannel,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the channel's standard rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breaths_per_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tonic_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scr_events: Vec<ScrEvent>,
}

impl GenParams {
    pub fn new(channel: SignalChannel, duration_s: f64, seed: u64) -> Self {
        GenParams {
            channel,
            duration_s,
            seed,
            rate_hz: None,
            hr_bpm: None,
            breaths_per_min: None,
            tonic_us: None,
            scr_events: Vec::new(),
        }
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz.unwrap_or(match self.channel {
            SignalChannel::Bvp => super::BVP_RATE_HZ,
            SignalChannel::Resp => super::RESP_RATE_HZ,
            SignalChannel::Sc => super::SC_RATE_HZ,
        })
    }

    pub fn generate(&self) -> Result<SignalTrace, SignalError> {
        let rate = self.rate_hz();
        match self.channel {
            SignalChannel::Bvp => gen_bvp(self.hr_bpm.unwrap_or(60.0), self.duration_s, rate, self.seed),
            SignalChannel::Resp => gen_resp(self.breaths_per_min.unwrap_or(12.0), self.duration_s, rate, self.seed),
            SignalChannel::Sc => gen_sc(self.tonic_us.unwrap_or(5.0), &self.scr_events, self.duration_s, rate, self.seed),
        }
    }
}
