//! Session trace files: JSON Lines, one canonical object per line.
//!
//! * `{"meta":{...}}` first, describing the session and display config;
//! * sequenced envelopes (and ERROR / ADVISORY replies) as bare envelopes;
//! * when recording, frame delivery records
//!   `{"consent_version":3,"frame":{...},"recipients":["p1"]}`;
//! * optionally a closing `{"final":{...}}` with the live session state.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::display::DisplayConfig;
use crate::lesson::LessonScript;
use crate::protocol::{Envelope, SessionSnapshot};
use crate::signals::SignalFrame;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl TraceError {
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::Io(_) => "io",
            TraceError::Malformed { .. } => "malformed-trace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub version: u32,
    pub sid: String,
    pub boards: Vec<String>,
    pub script: LessonScript,
    pub display: DisplayConfig,
    pub record_frames: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: SignalFrame,
    pub recipients: Vec<String>,
    pub consent_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Meta(TraceMeta),
    Envelope(Envelope),
    Frame(FrameRecord),
    Final(SessionSnapshot),
}

#[derive(Serialize)]
struct MetaLine<'a> {
    meta: &'a TraceMeta,
}

#[derive(Serialize)]
struct FinalLine<'a> {
    #[serde(rename = "final")]
    state: &'a SessionSnapshot,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let line = match self {
            TraceRecord::Meta(meta) => crate::canonical::to_line(&MetaLine { meta }),
            TraceRecord::Envelope(env) => crate::canonical::to_line(env),
            TraceRecord::Frame(rec) => crate::canonical::to_line(rec),
            TraceRecord::Final(state) => crate::canonical::to_line(&FinalLine { state }),
        };
        line.expect("trace records serialize")
    }

    pub fn parse(line: &str) -> Result<TraceRecord, String> {
        let mut value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = value.as_object_mut().ok_or("expected a JSON object")?;
        if let Some(meta) = obj.remove("meta") {
            return serde_json::from_value(meta).map(TraceRecord::Meta).map_err(|e| e.to_string());
        }
        if let Some(state) = obj.remove("final") {
            return serde_json::from_value(state).map(TraceRecord::Final).map_err(|e| e.to_string());
        }
        if obj.contains_key("frame") {
            return serde_json::from_value(value).map(TraceRecord::Frame).map_err(|e| e.to_string());
        }
        if obj.contains_key("type") {
            return serde_json::from_value(value).map(TraceRecord::Envelope).map_err(|e| e.to_string());
        }
        Err("unrecognized record".into())
    }
}

/// Streams records to a writer, one canonical line each.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out }
    }

    pub fn write(&mut self, record: &TraceRecord) -> std::io::Result<()> {
        self.out.write_all(record.to_line().as_bytes())
    }

    pub fn write_all<'a, I: IntoIterator<Item = &'a TraceRecord>>(&mut self, records: I) -> std::io::Result<()> {
        for r in records {
            self.write(r)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A parsed trace with the 1-based line number of every record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<(usize, TraceRecord)>,
}

impl Trace {
    pub fn read<R: BufRead>(input: R) -> Result<Trace, TraceError> {
        let mut meta = None;
        let mut records = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record = TraceRecord::parse(&line).map_err(|message| TraceError::Malformed { line: lineno, message })?;
            match (record, &meta) {
                (TraceRecord::Meta(m), None) => meta = Some(m),
                (TraceRecord::Meta(_), Some(_)) => {
                    return Err(TraceError::Malformed { line: lineno, message: "second meta record".into() })
                }
                (_, None) => {
                    return Err(TraceError::Malformed { line: lineno, message: "trace must start with meta".into() })
                }
                (r, Some(_)) => records.push((lineno, r)),
            }
        }
        let meta = meta.ok_or(TraceError::Malformed { line: 0, message: "empty trace".into() })?;
        Ok(Trace { meta, records })
    }

    pub fn from_str(text: &str) -> Result<Trace, TraceError> {
        Trace::read(text.as_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Trace, TraceError> {
        let file = std::fs::File::open(path)?;
        Trace::read(std::io::BufReader::new(file))
    }

    pub fn to_text(&self) -> String {
        let mut out = TraceRecord::Meta(self.meta.clone()).to_line();
        for (_, r) in &self.records {
            out.push_str(&r.to_line());
        }
        out
    }

    pub fn envelopes(&self) -> impl Iterator<Item = (usize, &Envelope)> {
        self.records.iter().filter_map(|(l, r)| match r {
            TraceRecord::Envelope(e) => Some((*l, e)),
            _ => None,
        })
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &FrameRecord)> {
        self.records.iter().filter_map(|(l, r)| match r {
            TraceRecord::Frame(f) => Some((*l, f)),
            _ => None,
        })
    }

    /// Resolve a participant by id, or by display name as announced in
    /// PRESENCE records. Ids win; the first join under a name wins after that.
    pub fn participant_id(&self, id_or_name: &str) -> Option<String> {
        let mut by_name = None;
        for (_, env) in self.envelopes() {
            if env.kind != crate::protocol::MessageType::Presence {
                continue;
            }
            let Ok(p) = env.payload_as::<crate::protocol::PresencePayload>() else { continue };
            if p.participant == id_or_name {
                return Some(p.participant);
            }
            if by_name.is_none() && p.name == id_or_name {
                by_name = Some(p.participant);
            }
        }
        by_name
    }

    pub fn final_state(&self) -> Option<&SessionSnapshot> {
        self.records.iter().rev().find_map(|(_, r)| match r {
            TraceRecord::Final(s) => Some(s),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::MessageType;
    use crate::signals::SignalChannel;
    use serde_json::json;

    fn meta() -> TraceMeta {
        TraceMeta {
            version: TRACE_VERSION,
            sid: "s".into(),
            boards: vec!["teacher".into()],
            script: LessonScript::default(),
            display: DisplayConfig::default(),
            record_frames: true,
            scenario: None,
            seed: Some(1),
        }
    }

    #[test]
    fn records_round_trip_through_text() {
        let mut env = Envelope::new(MessageType::LessonState, "s", "p1", json!({"phase": "TEACH(1)"}));
        env.seq = Some(1);
        let frame = FrameRecord {
            frame: SignalFrame { participant: "p1".into(), channel: SignalChannel::Resp, seq: 0, t_ms: 0, value: 0.5 },
            recipients: vec!["p1".into()],
            consent_version: 0,
        };
        let trace = Trace {
            meta: meta(),
            records: vec![(2, TraceRecord::Envelope(env)), (3, TraceRecord::Frame(frame))],
        };
        let text = trace.to_text();
        assert!(text.lines().nth(2).unwrap().starts_with(r#"{"consent_version":0,"frame":"#));
        assert_eq!(Trace::from_str(&text).unwrap(), trace);
    }

    #[test]
    fn truncated_line_is_malformed() {
        let text = TraceRecord::Meta(meta()).to_line() + "{\"v\":1,\"type\":\"PRES";
        let err = Trace::from_str(&text).unwrap_err();
        assert_eq!(err.code(), "malformed-trace");
        assert!(matches!(err, TraceError::Malformed { line: 2, .. }));
    }

    #[test]
    fn meta_must_come_first() {
        assert!(Trace::from_str("").is_err());
        let env = Envelope::new(MessageType::Ping, "s", "p1", json!({}));
        assert!(Trace::from_str(&env.to_line()).is_err());
    }
}
