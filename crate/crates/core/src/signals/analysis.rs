//! Minimal signal processing: beat detection, phasic activity rate and
//! sliding-window normalization. Nothing here classifies states; every
//! output is a plain continuous quantity.

use super::{Sample, SignalChannel, SignalError, SignalTrace};

/// Analysis routines refuse traces shorter than this.
pub const MIN_ANALYSIS_S: f64 = 10.0;
/// Minimum spacing between accepted pulse peaks.
pub const PEAK_SEPARATION_MS: i64 = 250;
/// Refractory period between counted SCR onsets.
pub const SCR_REFRACTORY_MS: i64 = 2000;

fn require_channel(trace: &SignalTrace, channel: SignalChannel) -> Result<(), SignalError> {
    if trace.channel != channel {
        return Err(SignalError::InvalidParameter(format!(
            "expected a {channel} trace, got {}",
            trace.channel
        )));
    }
    Ok(())
}

fn require_duration(trace: &SignalTrace) -> Result<(), SignalError> {
    if trace.duration_s() < MIN_ANALYSIS_S {
        return Err(SignalError::InsufficientData(format!(
            "{:.2} s of data, need {MIN_ANALYSIS_S} s",
            trace.duration_s()
        )));
    }
    Ok(())
}

/// Indices of pulse peaks: local maxima above the trace mean, at least
/// [`PEAK_SEPARATION_MS`] apart (the taller of two close candidates wins).
pub fn pulse_peaks(samples: &[Sample]) -> Vec<usize> {
    if samples.len() < 3 {
        return Vec::new();
    }
    let mean = samples.iter().map(|s| s.value).sum::<f64>() / samples.len() as f64;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..samples.len() - 1 {
        let v = samples[i].value;
        if !(v > mean && v > samples[i - 1].value && v >= samples[i + 1].value) {
            continue;
        }
        match peaks.last().copied() {
            Some(last) if samples[i].t_ms - samples[last].t_ms < PEAK_SEPARATION_MS => {
                if v > samples[last].value {
                    *peaks.last_mut().unwrap() = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    peaks
}

/// Heart rate in beats per minute from the spacing of first and last peak.
pub fn detect_pulse_rate(trace: &SignalTrace) -> Result<f64, SignalError> {
    require_channel(trace, SignalChannel::Bvp)?;
    require_duration(trace)?;
    let peaks = pulse_peaks(&trace.samples);
    if peaks.len() < 2 {
        return Err(SignalError::InsufficientData(format!("{} peaks found", peaks.len())));
    }
    let first = trace.samples[peaks[0]].t_ms;
    let last = trace.samples[*peaks.last().unwrap()].t_ms;
    let span_s = (last - first) as f64 / 1000.0;
    Ok(60.0 * (peaks.len() - 1) as f64 / span_s)
}

/// Sample indices where the first difference (in µS/s) rises through
/// `slope_threshold`, honoring the refractory period.
pub fn scr_onsets(samples: &[Sample], slope_threshold: f64) -> Vec<usize> {
    let mut onsets = Vec::new();
    let mut last_onset: Option<i64> = None;
    let mut was_above = false;
    for i in 1..samples.len() {
        let dt_s = (samples[i].t_ms - samples[i - 1].t_ms) as f64 / 1000.0;
        let slope = if dt_s > 0.0 { (samples[i].value - samples[i - 1].value) / dt_s } else { 0.0 };
        let above = slope > slope_threshold;
        if above && !was_above {
            let t = samples[i].t_ms;
            if last_onset.is_none_or(|prev| t - prev >= SCR_REFRACTORY_MS) {
                onsets.push(i);
                last_onset = Some(t);
            }
        }
        was_above = above;
    }
    onsets
}

/// Skin conductance responses per minute.
pub fn detect_scr_rate(trace: &SignalTrace, slope_threshold_us_per_s: f64) -> Result<f64, SignalError> {
    require_channel(trace, SignalChannel::Sc)?;
    if !(slope_threshold_us_per_s.is_finite() && slope_threshold_us_per_s > 0.0) {
        return Err(SignalError::InvalidParameter("slope threshold must be positive".into()));
    }
    require_duration(trace)?;
    let count = scr_onsets(&trace.samples, slope_threshold_us_per_s).len();
    Ok(count as f64 * 60.0 / trace.duration_s())
}

/// Position of the newest value (the last element) within the range of
/// the window, in `[0, 1]`. A window with zero range maps to 0.5.
pub fn normalize_window(window: &[f64]) -> Result<f64, SignalError> {
    let current = *window.last().ok_or(SignalError::EmptyWindow)?;
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return Ok(0.5);
    }
    Ok(((current - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Values of samples in the trailing window `[now - window_s, now]`,
/// oldest first. `samples` must be sorted by time.
pub fn window_values<'a>(samples: &'a [Sample], now_ms: i64, window_s: f64) -> impl Iterator<Item = f64> + 'a {
    let start = now_ms - (window_s * 1000.0).round() as i64;
    let from = samples.partition_point(|s| s.t_ms < start);
    samples[from..].iter().take_while(move |s| s.t_ms <= now_ms).map(|s| s.value)
}
