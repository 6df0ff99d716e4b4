//! JSON Lines encoding of [`SignalTrace`]:
//!
//! ```text
//! {"meta":{"channel":"BVP","rate_hz":32,"seed":7}}
//! {"ch":"BVP","t_ms":0,"v":0}
//! {"ch":"BVP","t_ms":31,"v":0.316}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Sample, SignalChannel, SignalError, SignalTrace};
use crate::canonical;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub channel: SignalChannel,
    pub rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: TraceMeta,
}

#[derive(Serialize, Deserialize)]
struct Line {
    ch: SignalChannel,
    t_ms: i64,
    v: f64,
}

pub fn write_trace<W: Write>(mut out: W, trace: &SignalTrace, seed: Option<u64>) -> Result<(), TraceIoError> {
    let header = Header { meta: TraceMeta { channel: trace.channel, rate_hz: trace.rate_hz, seed } };
    out.write_all(canonical::to_line(&header).expect("header encodes").as_bytes())?;
    for s in &trace.samples {
        let line = Line { ch: trace.channel, t_ms: s.t_ms, v: s.value };
        out.write_all(canonical::to_line(&line).expect("sample encodes").as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn trace_to_string(trace: &SignalTrace, seed: Option<u64>) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace, seed).expect("writing to memory");
    String::from_utf8(buf).expect("canonical output is UTF-8")
}

pub fn read_trace<R: BufRead>(input: R) -> Result<(SignalTrace, TraceMeta), TraceIoError> {
    let mut meta: Option<TraceMeta> = None;
    let mut samples = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| TraceIoError::Malformed { line: lineno, message: e.to_string() };
        match &meta {
            None => meta = Some(serde_json::from_str::<Header>(&line).map_err(malformed)?.meta),
            Some(m) => {
                let l: Line = serde_json::from_str(&line).map_err(malformed)?;
                if l.ch != m.channel {
                    return Err(TraceIoError::Malformed {
                        line: lineno,
                        message: format!("channel {} in a {} trace", l.ch, m.channel),
                    });
                }
                samples.push(Sample { t_ms: l.t_ms, value: l.v });
            }
        }
    }
    let meta = meta.ok_or(TraceIoError::Malformed { line: 0, message: "missing meta header".into() })?;
    let trace = SignalTrace { channel: meta.channel, rate_hz: meta.rate_hz, samples };
    trace.validate()?;
    Ok((trace, meta))
}
