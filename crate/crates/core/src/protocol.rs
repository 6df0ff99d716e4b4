//! Wire protocol, version 1.
//!
//! Every message is one JSON object:
//! `{"v":1,"type":"BOARD_OP","sid":"lesson","from":"p2","seq":14,"t_server_ms":5120,"payload":{...}}`.
//! `seq` is present only on sequenced server-to-client messages. Both
//! transports (newline-delimited socket and web socket text frames) carry
//! exactly these objects.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lesson::{LessonPhase, Pacing, QuizResult, Role};
use crate::reciprocity::ConsentState;
use crate::signals::SignalChannel;
use crate::whiteboard::{BoardOpKind, BoardSet, Point};

pub const PROTOCOL_VERSION: u32 = 1;
/// `from` value on messages the server originates.
pub const SERVER_ID: &str = "server";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Join,
    Snapshot,
    Presence,
    SignalFrame,
    ConsentSet,
    ConsentState,
    BoardOp,
    LessonAdvance,
    LessonState,
    QuizJudge,
    Advisory,
    Error,
    Ping,
    Pong,
}

impl MessageType {
    pub const ALL: [MessageType; 14] = [
        MessageType::Join,
        MessageType::Snapshot,
        MessageType::Presence,
        MessageType::SignalFrame,
        MessageType::ConsentSet,
        MessageType::ConsentState,
        MessageType::BoardOp,
        MessageType::LessonAdvance,
        MessageType::LessonState,
        MessageType::QuizJudge,
        MessageType::Advisory,
        MessageType::Error,
        MessageType::Ping,
        MessageType::Pong,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Join => "JOIN",
            MessageType::Snapshot => "SNAPSHOT",
            MessageType::Presence => "PRESENCE",
            MessageType::SignalFrame => "SIGNAL_FRAME",
            MessageType::ConsentSet => "CONSENT_SET",
            MessageType::ConsentState => "CONSENT_STATE",
            MessageType::BoardOp => "BOARD_OP",
            MessageType::LessonAdvance => "LESSON_ADVANCE",
            MessageType::LessonState => "LESSON_STATE",
            MessageType::QuizJudge => "QUIZ_JUDGE",
            MessageType::Advisory => "ADVISORY",
            MessageType::Error => "ERROR",
            MessageType::Ping => "PING",
            MessageType::Pong => "PONG",
        }
    }

    fn parse(s: &str) -> Option<MessageType> {
        MessageType::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default)]
    pub sid: String,
    #[serde(default)]
    pub from: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default)]
    pub t_server_ms: i64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: MessageType, sid: impl Into<String>, from: impl Into<String>, payload: impl Serialize) -> Self {
        Envelope {
            v: PROTOCOL_VERSION,
            kind,
            sid: sid.into(),
            from: from.into(),
            seq: None,
            t_server_ms: 0,
            payload: serde_json::to_value(payload).expect("payload types serialize"),
        }
    }

    pub fn payload_as<T: serde::de::DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| ProtocolError::Schema(format!("{} payload: {e}", self.kind)))
    }

    pub fn to_line(&self) -> String {
        crate::canonical::to_line(self).expect("envelopes serialize")
    }

    pub fn to_text(&self) -> String {
        crate::canonical::to_string(self).expect("envelopes serialize")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::UnsupportedVersion(_) => "unsupported-version",
            ProtocolError::UnknownType(_) => "unknown-type",
            ProtocolError::Schema(_) => "schema",
        }
    }
}

/// Parse one incoming message, distinguishing unknown types and
/// versions from plain malformed input.
pub fn parse_envelope(text: &str) -> Result<Envelope, ProtocolError> {
    let value: Value = serde_json::from_str(text.trim()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| ProtocolError::Malformed("expected a JSON object".into()))?;
    match obj.get("v").and_then(Value::as_u64) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(ProtocolError::UnsupportedVersion(v)),
        None => return Err(ProtocolError::Malformed("missing protocol version".into())),
    }
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::Malformed("missing type".into()))?;
    if MessageType::parse(kind).is_none() {
        return Err(ProtocolError::UnknownType(kind.to_string()));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::Schema(e.to_string()))
}

// Payloads, one per message type.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinPayload {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub name: String,
    pub role: Role,
}

/// Materialized session state: everything a late joiner needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub sid: String,
    pub roster: Vec<Member>,
    pub consent: ConsentState,
    pub boards: BoardSet,
    pub phase: LessonPhase,
    pub script: crate::lesson::LessonScript,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quiz: Option<QuizResult>,
    /// Next participant number to hand out.
    pub next_participant: u64,
    pub seq_head: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    pub participant: String,
    pub role: Role,
    pub state: SessionSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresencePayload {
    pub participant: String,
    pub name: String,
    pub role: Role,
    pub joined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsentSetPayload {
    pub channel: SignalChannel,
    pub share: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentStatePayload {
    pub participant: String,
    pub channel: SignalChannel,
    pub share: bool,
    pub version: u64,
}

/// A board op as submitted by a client; the author comes from the envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoardOpPayload {
    pub kind: BoardOpKind,
    pub board_id: String,
    #[serde(default)]
    pub stroke_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    #[serde(default)]
    pub t_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LessonStatePayload {
    pub phase: LessonPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizJudgePayload {
    pub judgments: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryPayload {
    /// The student whose skin conductance the advice is about.
    pub subject: String,
    pub advisory: Pacing,
    pub scr_rate: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
    /// Participant (or joining name) the error was sent to.
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_type: Option<MessageType>,
}
