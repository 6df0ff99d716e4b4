//! The authoritative session state machine.
//!
//! A [`Session`] is owned by exactly one caller at a time (the server's
//! per-session task, or the simulator) and mutated only through
//! [`Session::join`], [`Session::leave`] and [`Session::handle_message`].
//! Each call returns the envelopes to deliver, addressed by participant.
//!
//! State changes go through the sequencer: the server-issued message is
//! appended to the log first, then folded into the materialized state with
//! [`apply_sequenced`], the same fold a replica or a trace replay uses.

use std::collections::{HashMap, VecDeque};

use serde_json::json;
use thiserror::Error;

use crate::config::{Config, ScrConfig};
use crate::display::DisplayConfig;
use crate::lesson::{advance_phase, pacing_advisory, score_quiz, LessonPhase, LessonScript, Pacing, QuizResult, Role};
use crate::protocol::{
    AdvisoryPayload, BoardOpPayload, ConsentSetPayload, ConsentStatePayload, Envelope, ErrorPayload, JoinPayload,
    LessonStatePayload, Member, MessageType, PresencePayload, ProtocolError, QuizJudgePayload, SessionSnapshot,
    SnapshotPayload, SERVER_ID,
};
use crate::reciprocity::ConsentState;
use crate::signals::{detect_scr_rate, Sample, SignalChannel, SignalFrame, SignalTrace, MIN_ANALYSIS_S};
use crate::trace::{FrameRecord, TraceRecord};
use crate::whiteboard::{BoardError, BoardOp, BoardSet};

/// Minimum spacing, in signal time, between pacing evaluations per student.
const ADVISORY_EVAL_MS: i64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("a teacher is already in session {0}")]
    DuplicateTeacher(String),
    #[error("no free {0:?} slot")]
    SessionFull(Role),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::DuplicateTeacher(_) => "duplicate-teacher",
            SessionError::SessionFull(_) => "session-full",
            SessionError::UnknownSession(_) => "unknown-session",
            SessionError::UnknownParticipant(_) => "unknown-participant",
        }
    }
}

/// A sequenced message that cannot be folded into the state.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoldError {
    #[error("sequence gap: expected {expected}, got {got:?}")]
    Gap { expected: u64, got: Option<u64> },
    #[error("{0} is not a sequenced message type")]
    NotSequenced(MessageType),
    #[error("bad payload: {0}")]
    Payload(#[from] ProtocolError),
    #[error("presence: {0}")]
    Presence(String),
    #[error("consent: {0}")]
    Consent(String),
    #[error("board: {0}")]
    Board(#[from] BoardError),
    #[error("phase skip: {from} -> {to}")]
    PhaseSkip { from: LessonPhase, to: LessonPhase },
    #[error("{0} is not the teacher")]
    NotTeacher(String),
    #[error("quiz: {0}")]
    Quiz(String),
}

/// Everything a session needs from the service configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSettings {
    pub boards: Vec<String>,
    pub max_students: usize,
    pub max_observers: usize,
    pub display: DisplayConfig,
    pub scr: ScrConfig,
    pub sc_rate_hz: f64,
    /// Journal every frame delivery decision.
    pub record_frames: bool,
}

impl From<&Config> for SessionSettings {
    fn from(cfg: &Config) -> Self {
        SessionSettings {
            boards: cfg.boards.clone(),
            max_students: cfg.max_students,
            max_observers: cfg.max_observers,
            display: cfg.display,
            scr: cfg.scr,
            sc_rate_hz: cfg.rates.sc,
            record_frames: false,
        }
    }
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings::from(&Config::default())
    }
}

/// An envelope addressed to one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: String,
    pub env: Envelope,
}

impl SessionSnapshot {
    /// The empty session: no members, fresh boards, lesson at the intro.
    pub fn genesis(sid: &str, boards: &[String], script: LessonScript) -> Self {
        SessionSnapshot {
            sid: sid.to_string(),
            roster: Vec::new(),
            consent: ConsentState::new(),
            boards: BoardSet::new(boards.iter().cloned()),
            phase: LessonPhase::Intro,
            script,
            quiz: None,
            next_participant: 1,
            seq_head: 0,
        }
    }

    pub fn member(&self, id: &str) -> Option<&Member> {
        self.roster.iter().find(|m| m.id == id)
    }

    pub fn teacher(&self) -> Option<&Member> {
        self.roster.iter().find(|m| m.role == Role::Teacher)
    }

    fn require_teacher(&self, id: &str) -> Result<(), FoldError> {
        match self.member(id) {
            Some(m) if m.role == Role::Teacher => Ok(()),
            _ => Err(FoldError::NotTeacher(id.to_string())),
        }
    }
}

/// Fold one sequenced envelope into `state`.
pub fn apply_sequenced(state: &mut SessionSnapshot, env: &Envelope) -> Result<(), FoldError> {
    let expected = state.seq_head + 1;
    let seq = match env.seq {
        Some(s) if s == expected => s,
        got => return Err(FoldError::Gap { expected, got }),
    };
    state.seq_head = seq;

    if env.kind == MessageType::BoardOp {
        let mut op: BoardOp = env.payload_as()?;
        op.author = env.from.clone();
        op.seq = Some(seq);
        return Ok(state.boards.apply_op(&op)?);
    }
    state.boards.advance(seq)?;

    match env.kind {
        MessageType::Presence => {
            let p: PresencePayload = env.payload_as()?;
            if p.joined {
                if state.member(&p.participant).is_some() {
                    return Err(FoldError::Presence(format!("{} joined twice", p.participant)));
                }
                if p.role == Role::Teacher && state.teacher().is_some() {
                    return Err(FoldError::Presence("second teacher".into()));
                }
                if let Some(n) = p.participant.strip_prefix('p').and_then(|n| n.parse::<u64>().ok()) {
                    state.next_participant = state.next_participant.max(n + 1);
                }
                state.consent.add_member(&p.participant);
                state.roster.push(Member { id: p.participant, name: p.name, role: p.role });
            } else {
                let before = state.roster.len();
                state.roster.retain(|m| m.id != p.participant);
                if state.roster.len() == before {
                    return Err(FoldError::Presence(format!("{} left without joining", p.participant)));
                }
                state.consent.remove_member(&p.participant);
            }
        }
        MessageType::ConsentState => {
            let c: ConsentStatePayload = env.payload_as()?;
            if c.participant != env.from {
                return Err(FoldError::Consent(format!("{} set consent for {}", env.from, c.participant)));
            }
            let version =
                state.consent.set_consent(&c.participant, c.channel, c.share).map_err(|e| FoldError::Consent(e.to_string()))?;
            if version != c.version {
                return Err(FoldError::Consent(format!("version {} recorded, {version} replayed", c.version)));
            }
        }
        MessageType::LessonState => {
            state.require_teacher(&env.from)?;
            let l: LessonStatePayload = env.payload_as()?;
            if state.phase.next() != Some(l.phase) {
                return Err(FoldError::PhaseSkip { from: state.phase, to: l.phase });
            }
            state.phase = l.phase;
        }
        MessageType::QuizJudge => {
            state.require_teacher(&env.from)?;
            if !matches!(state.phase, LessonPhase::Quiz | LessonPhase::Done) {
                return Err(FoldError::Quiz(format!("judged during {}", state.phase)));
            }
            let q: QuizResult = env.payload_as()?;
            let rescored = score_quiz(&q.judgments).map_err(|e| FoldError::Quiz(e.to_string()))?;
            if rescored != q {
                return Err(FoldError::Quiz("score does not match judgments".into()));
            }
            state.quiz = Some(q);
        }
        other => return Err(FoldError::NotSequenced(other)),
    }
    Ok(())
}

/// Materialize a session from genesis and its sequenced log.
pub fn replay<'a, I>(mut state: SessionSnapshot, log: I) -> Result<SessionSnapshot, FoldError>
where
    I: IntoIterator<Item = &'a Envelope>,
{
    for env in log {
        apply_sequenced(&mut state, env)?;
    }
    Ok(state)
}

pub enum JoinOutcome {
    Accepted { participant: String, outbound: Vec<Outbound> },
    /// The joiner has no participant id; `error` is addressed by name.
    Rejected { error: Envelope, reason: SessionError },
}

struct RequestError {
    code: &'static str,
    message: String,
}

impl RequestError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        RequestError { code, message: message.into() }
    }
}

impl From<ProtocolError> for RequestError {
    fn from(e: ProtocolError) -> Self {
        RequestError::new(e.code(), e.to_string())
    }
}

pub struct Session {
    settings: SessionSettings,
    genesis: SessionSnapshot,
    state: SessionSnapshot,
    log: Vec<Envelope>,
    journal: Vec<TraceRecord>,
    frame_cursor: HashMap<(String, SignalChannel), (u64, i64)>,
    sc_history: HashMap<String, VecDeque<Sample>>,
    last_eval: HashMap<String, i64>,
    advised: HashMap<(String, String), Pacing>,
}

impl Session {
    pub fn new(sid: impl Into<String>, settings: SessionSettings, script: LessonScript) -> Self {
        let sid = sid.into();
        let genesis = SessionSnapshot::genesis(&sid, &settings.boards, script);
        Session {
            state: genesis.clone(),
            genesis,
            settings,
            log: Vec::new(),
            journal: Vec::new(),
            frame_cursor: HashMap::new(),
            sc_history: HashMap::new(),
            last_eval: HashMap::new(),
            advised: HashMap::new(),
        }
    }

    pub fn sid(&self) -> &str {
        &self.state.sid
    }

    pub fn settings(&self) -> &SessionSettings {
        &self.settings
    }

    pub fn snapshot(&self) -> &SessionSnapshot {
        &self.state
    }

    pub fn genesis(&self) -> &SessionSnapshot {
        &self.genesis
    }

    pub fn log(&self) -> &[Envelope] {
        &self.log
    }

    pub fn is_empty(&self) -> bool {
        self.state.roster.is_empty()
    }

    /// Take the trace records produced since the last call.
    pub fn drain_journal(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.journal)
    }

    fn member_ids(&self) -> Vec<String> {
        self.state.roster.iter().map(|m| m.id.clone()).collect()
    }

    fn envelope(&self, kind: MessageType, from: &str, now_ms: i64, payload: impl serde::Serialize) -> Envelope {
        let mut env = Envelope::new(kind, self.state.sid.clone(), from, payload);
        env.t_server_ms = now_ms;
        env
    }

    /// Assign the next seq, log, fold, and return the sequenced envelope.
    fn sequence(&mut self, kind: MessageType, from: &str, now_ms: i64, payload: impl serde::Serialize) -> Envelope {
        let mut env = self.envelope(kind, from, now_ms, payload);
        env.seq = Some(self.state.seq_head + 1);
        self.log.push(env.clone());
        self.journal.push(TraceRecord::Envelope(env.clone()));
        apply_sequenced(&mut self.state, &env).expect("requests are validated before sequencing");
        env
    }

    fn broadcast(&self, env: &Envelope) -> Vec<Outbound> {
        self.member_ids().into_iter().map(|to| Outbound { to, env: env.clone() }).collect()
    }

    fn error(&mut self, to: &str, request_type: Option<MessageType>, err: RequestError, now_ms: i64) -> Envelope {
        let payload = ErrorPayload { code: err.code.to_string(), message: err.message, to: to.to_string(), request_type };
        let env = self.envelope(MessageType::Error, SERVER_ID, now_ms, payload);
        self.journal.push(TraceRecord::Envelope(env.clone()));
        env
    }

    pub fn join(&mut self, name: &str, role: Role, now_ms: i64) -> JoinOutcome {
        let count = |r: Role| self.state.roster.iter().filter(|m| m.role == r).count();
        let refusal = match role {
            Role::Teacher if count(Role::Teacher) > 0 => Some(SessionError::DuplicateTeacher(self.state.sid.clone())),
            Role::Student if count(Role::Student) >= self.settings.max_students => Some(SessionError::SessionFull(role)),
            Role::Observer if count(Role::Observer) >= self.settings.max_observers => {
                Some(SessionError::SessionFull(role))
            }
            _ => None,
        };
        if let Some(reason) = refusal {
            let error =
                self.error(name, Some(MessageType::Join), RequestError::new(reason.code(), reason.to_string()), now_ms);
            return JoinOutcome::Rejected { error, reason };
        }

        let participant = format!("p{}", self.state.next_participant);
        let presence = PresencePayload { participant: participant.clone(), name: name.to_string(), role, joined: true };
        let env = self.sequence(MessageType::Presence, &participant, now_ms, presence);
        let mut outbound: Vec<Outbound> = self.broadcast(&env).into_iter().filter(|o| o.to != participant).collect();
        let snapshot = SnapshotPayload { participant: participant.clone(), role, state: self.state.clone() };
        let snap = self.envelope(MessageType::Snapshot, SERVER_ID, now_ms, snapshot);
        outbound.insert(0, Outbound { to: participant.clone(), env: snap });
        JoinOutcome::Accepted { participant, outbound }
    }

    pub fn leave(&mut self, participant: &str, now_ms: i64) -> Vec<Outbound> {
        let Some(member) = self.state.member(participant).cloned() else {
            return Vec::new();
        };
        let presence = PresencePayload { participant: member.id.clone(), name: member.name, role: member.role, joined: false };
        let env = self.sequence(MessageType::Presence, participant, now_ms, presence);
        self.sc_history.remove(participant);
        self.last_eval.remove(participant);
        self.advised.retain(|(s, t), _| s != participant && t != participant);
        self.frame_cursor.retain(|(p, _), _| p != participant);
        self.broadcast(&env)
    }

    /// Process one client message from `participant`.
    pub fn handle_message(&mut self, participant: &str, env: &Envelope, now_ms: i64) -> Vec<Outbound> {
        match self.dispatch(participant, env, now_ms) {
            Ok(out) => out,
            Err(err) => {
                let reply = self.error(participant, Some(env.kind), err, now_ms);
                vec![Outbound { to: participant.to_string(), env: reply }]
            }
        }
    }

    fn dispatch(&mut self, participant: &str, env: &Envelope, now_ms: i64) -> Result<Vec<Outbound>, RequestError> {
        let Some(member) = self.state.member(participant).cloned() else {
            return Err(RequestError::new("unknown-participant", format!("{participant} is not in the session")));
        };
        if !env.from.is_empty() && env.from != participant {
            return Err(RequestError::new("schema", format!("from {:?} does not match connection", env.from)));
        }
        match env.kind {
            MessageType::SignalFrame => self.on_frame(participant, member.role, env, now_ms),
            MessageType::ConsentSet => {
                let c: ConsentSetPayload = env.payload_as()?;
                let payload = ConsentStatePayload {
                    participant: participant.to_string(),
                    channel: c.channel,
                    share: c.share,
                    version: self.state.consent.version() + 1,
                };
                let out = self.sequence(MessageType::ConsentState, participant, now_ms, payload);
                Ok(self.broadcast(&out))
            }
            MessageType::BoardOp => {
                if member.role == Role::Observer {
                    return Err(RequestError::new("not-permitted", "observers cannot write to boards"));
                }
                let p: BoardOpPayload = env.payload_as()?;
                let op = BoardOp {
                    kind: p.kind,
                    board_id: p.board_id,
                    stroke_id: p.stroke_id,
                    author: participant.to_string(),
                    point: p.point,
                    t_ms: p.t_ms,
                    seq: None,
                };
                self.state.boards.check(&op).map_err(|e| RequestError::new(e.code(), e.to_string()))?;
                let payload = BoardOpPayload {
                    kind: op.kind,
                    board_id: op.board_id,
                    stroke_id: op.stroke_id,
                    point: op.point,
                    t_ms: op.t_ms,
                };
                let out = self.sequence(MessageType::BoardOp, participant, now_ms, payload);
                Ok(self.broadcast(&out))
            }
            MessageType::LessonAdvance => {
                let next = advance_phase(self.state.phase, member.role).map_err(|e| RequestError::new(e.code(), e.to_string()))?;
                let out = self.sequence(MessageType::LessonState, participant, now_ms, LessonStatePayload { phase: next });
                Ok(self.broadcast(&out))
            }
            MessageType::QuizJudge => {
                if member.role != Role::Teacher {
                    return Err(RequestError::new("not-teacher", "only the teacher judges the quiz"));
                }
                if !matches!(self.state.phase, LessonPhase::Quiz | LessonPhase::Done) {
                    return Err(RequestError::new("wrong-phase", format!("no quiz during {}", self.state.phase)));
                }
                let q: QuizJudgePayload = env.payload_as()?;
                let result = score_quiz(&q.judgments).map_err(|e| RequestError::new(e.code(), e.to_string()))?;
                let out = self.sequence(MessageType::QuizJudge, participant, now_ms, result);
                Ok(self.broadcast(&out))
            }
            MessageType::Ping => {
                let pong = self.envelope(MessageType::Pong, SERVER_ID, now_ms, env.payload.clone());
                Ok(vec![Outbound { to: participant.to_string(), env: pong }])
            }
            MessageType::Join => Err(RequestError::new("already-joined", "connection already joined")),
            other => Err(RequestError::new("not-client-message", format!("{other} is sent by the server only"))),
        }
    }

    fn on_frame(&mut self, participant: &str, role: Role, env: &Envelope, now_ms: i64) -> Result<Vec<Outbound>, RequestError> {
        let mut frame: SignalFrame = env.payload_as()?;
        if frame.participant.is_empty() {
            frame.participant = participant.to_string();
        } else if frame.participant != participant {
            return Err(RequestError::new("schema", "frame participant does not match sender"));
        }
        if !frame.value.is_finite() {
            return Err(RequestError::new("schema", "frame value must be finite"));
        }
        let key = (participant.to_string(), frame.channel);
        if let Some(&(seq, t)) = self.frame_cursor.get(&key) {
            if frame.seq <= seq || frame.t_ms < t {
                return Err(RequestError::new(
                    "frame-out-of-order",
                    format!("{} frame seq {} after {seq}", frame.channel, frame.seq),
                ));
            }
        }
        self.frame_cursor.insert(key, (frame.seq, frame.t_ms));

        let members = self.member_ids();
        let recipients = self.state.consent.filter_frame(&frame, members.iter().map(String::as_str));
        if self.settings.record_frames {
            self.journal.push(TraceRecord::Frame(FrameRecord {
                frame: frame.clone(),
                recipients: recipients.clone(),
                consent_version: self.state.consent.version(),
            }));
        }
        let out = self.envelope(MessageType::SignalFrame, participant, now_ms, &frame);
        let mut outbound: Vec<Outbound> =
            recipients.into_iter().map(|to| Outbound { to, env: out.clone() }).collect();

        if frame.channel == SignalChannel::Sc && role == Role::Student && self.settings.scr.advisory_enabled {
            outbound.extend(self.pacing(participant, &frame, now_ms));
        }
        Ok(outbound)
    }

    /// Re-evaluate a student's pacing advisory and tell each teacher who
    /// may see that student's skin conductance when it changes.
    fn pacing(&mut self, subject: &str, frame: &SignalFrame, now_ms: i64) -> Vec<Outbound> {
        let window_ms = (self.settings.scr.window_s * 1000.0).round() as i64;
        let history = self.sc_history.entry(subject.to_string()).or_default();
        history.push_back(Sample { t_ms: frame.t_ms, value: frame.value });
        while history.front().is_some_and(|s| s.t_ms <= frame.t_ms - window_ms) {
            history.pop_front();
        }
        let span_ms = frame.t_ms - history.front().map(|s| s.t_ms).unwrap_or(frame.t_ms);
        if (span_ms as f64) < MIN_ANALYSIS_S * 1000.0 {
            return Vec::new();
        }
        if self.last_eval.get(subject).is_some_and(|&t| frame.t_ms - t < ADVISORY_EVAL_MS) {
            return Vec::new();
        }
        self.last_eval.insert(subject.to_string(), frame.t_ms);

        let trace = SignalTrace {
            channel: SignalChannel::Sc,
            rate_hz: self.settings.sc_rate_hz,
            samples: history.iter().copied().collect(),
        };
        let scr = &self.settings.scr;
        let Ok(rate) = detect_scr_rate(&trace, scr.slope_threshold_us_per_s) else {
            return Vec::new();
        };
        let Ok(advice) = pacing_advisory(rate, scr.pacing_threshold_per_min) else {
            return Vec::new();
        };

        let teachers: Vec<String> =
            self.state.roster.iter().filter(|m| m.role == Role::Teacher).map(|m| m.id.clone()).collect();
        let mut outbound = Vec::new();
        for teacher in teachers {
            let key = (subject.to_string(), teacher.clone());
            if !self.state.consent.may_deliver(subject, &teacher, SignalChannel::Sc).allowed {
                self.advised.remove(&key);
                continue;
            }
            if self.advised.get(&key) == Some(&advice.advisory) {
                continue;
            }
            self.advised.insert(key, advice.advisory);
            let payload = AdvisoryPayload {
                subject: subject.to_string(),
                advisory: advice.advisory,
                scr_rate: advice.scr_rate,
                threshold: advice.threshold,
            };
            let env = self.envelope(MessageType::Advisory, SERVER_ID, now_ms, payload);
            self.journal.push(TraceRecord::Envelope(env.clone()));
            outbound.push(Outbound { to: teacher, env });
        }
        outbound
    }
}

/// Parse the payload of a JOIN envelope.
pub fn join_request(env: &Envelope) -> Result<JoinPayload, ProtocolError> {
    if env.kind != MessageType::Join {
        return Err(ProtocolError::Schema(format!("expected JOIN, got {}", env.kind)));
    }
    env.payload_as()
}

/// A ready-made client message.
pub fn client_message(kind: MessageType, sid: &str, from: &str, payload: serde_json::Value) -> Envelope {
    Envelope::new(kind, sid, from, payload)
}

pub fn consent_message(sid: &str, from: &str, channel: SignalChannel, share: bool) -> Envelope {
    client_message(MessageType::ConsentSet, sid, from, json!({"channel": channel, "share": share}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::whiteboard::{BoardOpKind, Point};

    fn session() -> Session {
        Session::new("kanji", SessionSettings { record_frames: true, ..SessionSettings::default() }, LessonScript::default())
    }

    fn join(s: &mut Session, name: &str, role: Role) -> String {
        match s.join(name, role, 0) {
            JoinOutcome::Accepted { participant, .. } => participant,
            JoinOutcome::Rejected { reason, .. } => panic!("join refused: {reason}"),
        }
    }

    fn dyad() -> (Session, String, String) {
        let mut s = session();
        let t = join(&mut s, "sensei", Role::Teacher);
        let st = join(&mut s, "amy", Role::Student);
        (s, t, st)
    }

    fn frame(from: &str, ch: SignalChannel, seq: u64, t_ms: i64, v: f64) -> Envelope {
        client_message(MessageType::SignalFrame, "kanji", from, json!({"ch": ch, "seq": seq, "t_ms": t_ms, "v": v}))
    }

    fn board(from: &str, kind: BoardOpKind, stroke: &str, point: Option<(f64, f64)>) -> Envelope {
        let payload = BoardOpPayload {
            kind,
            board_id: "teacher".into(),
            stroke_id: stroke.into(),
            point: point.map(|(x, y)| Point(x, y)),
            t_ms: 0,
        };
        Envelope::new(MessageType::BoardOp, "kanji", from, payload)
    }

    fn error_code(out: &[Outbound]) -> Option<String> {
        out.iter()
            .find(|o| o.env.kind == MessageType::Error)
            .map(|o| o.env.payload_as::<ErrorPayload>().unwrap().code)
    }

    #[test]
    fn genesis_join() {
        let mut s = session();
        let JoinOutcome::Accepted { participant, outbound } = s.join("sensei", Role::Teacher, 0) else {
            panic!("refused");
        };
        assert_eq!(participant, "p1");
        assert_eq!(outbound.len(), 1);
        let snap: SnapshotPayload = outbound[0].env.payload_as().unwrap();
        assert_eq!(snap.state.phase, LessonPhase::Intro);
        assert!(snap.state.boards.boards.iter().all(|b| b.strokes.is_empty()));
        assert_eq!(snap.state.seq_head, 1);
    }

    #[test]
    fn second_teacher_refused() {
        let mut s = session();
        join(&mut s, "sensei", Role::Teacher);
        match s.join("imposter", Role::Teacher, 0) {
            JoinOutcome::Rejected { reason, error } => {
                assert_eq!(reason.code(), "duplicate-teacher");
                assert_eq!(error.payload_as::<ErrorPayload>().unwrap().to, "imposter");
            }
            JoinOutcome::Accepted { .. } => panic!("accepted"),
        }
    }

    #[test]
    fn roster_limit() {
        let mut s = session();
        join(&mut s, "sensei", Role::Teacher);
        for n in ["a", "b", "c"] {
            join(&mut s, n, Role::Student);
        }
        assert!(matches!(
            s.join("d", Role::Student, 0),
            JoinOutcome::Rejected { reason: SessionError::SessionFull(Role::Student), .. }
        ));
    }

    #[test]
    fn late_joiner_snapshot_matches_log_head() {
        let (mut s, t, _) = dyad();
        s.handle_message(&t, &board(&t, BoardOpKind::StrokeBegin, "s1", Some((0.1, 0.2))), 5);
        let JoinOutcome::Accepted { outbound, .. } = s.join("bo", Role::Student, 6) else { panic!() };
        let snap: SnapshotPayload = outbound[0].env.payload_as().unwrap();
        assert_eq!(snap.state.seq_head, s.log().len() as u64);
        assert_eq!(snap.state.boards.stroke_count("teacher"), Some(1));
        // everyone else hears about the new member
        assert_eq!(outbound.iter().filter(|o| o.env.kind == MessageType::Presence).count(), 2);
    }

    #[test]
    fn frame_without_mutual_consent_reaches_only_sender() {
        let (mut s, t, st) = dyad();
        s.handle_message(&t, &consent_message("kanji", &t, SignalChannel::Sc, true), 1);
        let out = s.handle_message(&t, &frame(&t, SignalChannel::Sc, 1, 10, 2.0), 10);
        let to: Vec<&str> = out.iter().map(|o| o.to.as_str()).collect();
        assert_eq!(to, [t.as_str()]);
        s.handle_message(&st, &consent_message("kanji", &st, SignalChannel::Sc, true), 11);
        let out = s.handle_message(&t, &frame(&t, SignalChannel::Sc, 2, 20, 2.0), 20);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn consent_flags_are_broadcast() {
        let (mut s, _, st) = dyad();
        let out = s.handle_message(&st, &consent_message("kanji", &st, SignalChannel::Bvp, true), 1);
        assert_eq!(out.len(), 2);
        let c: ConsentStatePayload = out[0].env.payload_as().unwrap();
        assert_eq!((c.share, c.version), (true, 1));
        assert!(out.iter().all(|o| o.env.seq == Some(3)));
    }

    #[test]
    fn student_board_op_broadcast_with_fresh_seq() {
        let (mut s, t, st) = dyad();
        s.handle_message(&t, &client_message(MessageType::LessonAdvance, "kanji", &t, json!({})), 1);
        let out = s.handle_message(&st, &board(&st, BoardOpKind::StrokeBegin, "s1", Some((0.5, 0.5))), 2);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.env.kind == MessageType::BoardOp && o.env.seq == Some(4)));
    }

    #[test]
    fn orphan_and_invalid_board_ops_rejected_unsequenced() {
        let (mut s, t, _) = dyad();
        let head = s.snapshot().seq_head;
        let out = s.handle_message(&t, &board(&t, BoardOpKind::StrokePoint, "zz", Some((0.5, 0.5))), 1);
        assert_eq!(error_code(&out).as_deref(), Some("orphan-point"));
        let out = s.handle_message(&t, &board(&t, BoardOpKind::StrokeBegin, "s", Some((2.0, 0.5))), 1);
        assert_eq!(error_code(&out).as_deref(), Some("invalid-point"));
        assert_eq!(s.snapshot().seq_head, head);
    }

    #[test]
    fn student_cannot_advance_lesson() {
        let (mut s, _, st) = dyad();
        let out = s.handle_message(&st, &client_message(MessageType::LessonAdvance, "kanji", &st, json!({})), 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].to, st);
        assert_eq!(error_code(&out).as_deref(), Some("not-teacher"));
        assert_eq!(s.snapshot().phase, LessonPhase::Intro);
    }

    #[test]
    fn full_lesson_and_quiz() {
        let (mut s, t, _) = dyad();
        let advance = client_message(MessageType::LessonAdvance, "kanji", &t, json!({}));
        let early = s.handle_message(&t, &client_message(MessageType::QuizJudge, "kanji", &t, json!({"judgments": vec![true; 5]})), 0);
        assert_eq!(error_code(&early).as_deref(), Some("wrong-phase"));
        for _ in 0..6 {
            s.handle_message(&t, &advance, 1);
        }
        assert_eq!(s.snapshot().phase, LessonPhase::Quiz);
        let judge = client_message(MessageType::QuizJudge, "kanji", &t, json!({"judgments": [true, false, true, false, true]}));
        s.handle_message(&t, &judge, 2);
        assert_eq!(s.snapshot().quiz.as_ref().unwrap().correct, 3);
        s.handle_message(&t, &advance, 3);
        let out = s.handle_message(&t, &advance, 4);
        assert_eq!(error_code(&out).as_deref(), Some("already-done"));
        let bad = client_message(MessageType::QuizJudge, "kanji", &t, json!({"judgments": [true]}));
        assert_eq!(error_code(&s.handle_message(&t, &bad, 5)).as_deref(), Some("wrong-arity"));
    }

    #[test]
    fn log_replay_reproduces_state() {
        let (mut s, t, st) = dyad();
        s.handle_message(&t, &consent_message("kanji", &t, SignalChannel::Sc, true), 1);
        s.handle_message(&st, &board(&st, BoardOpKind::StrokeBegin, "a", Some((0.1, 0.1))), 2);
        s.handle_message(&st, &board(&st, BoardOpKind::StrokeEnd, "a", None), 3);
        s.handle_message(&t, &client_message(MessageType::LessonAdvance, "kanji", &t, json!({})), 4);
        s.leave(&st, 5);
        let replayed = replay(s.genesis().clone(), s.log()).unwrap();
        assert_eq!(&replayed, s.snapshot());
        assert_eq!(s.log().iter().map(|e| e.seq.unwrap()).collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
    }

    #[test]
    fn leaving_revokes_and_frees_slot() {
        let (mut s, t, st) = dyad();
        s.handle_message(&st, &consent_message("kanji", &st, SignalChannel::Sc, true), 1);
        let v = s.snapshot().consent.version();
        s.leave(&st, 2);
        assert!(s.snapshot().consent.version() > v);
        assert!(!s.snapshot().consent.is_sharing(&st, SignalChannel::Sc));
        s.leave(&t, 3);
        assert!(s.is_empty());
        assert_eq!(join(&mut s, "sensei", Role::Teacher), "p3");
    }

    #[test]
    fn unknown_and_server_only_messages() {
        let (mut s, t, _) = dyad();
        let out = s.handle_message("p9", &client_message(MessageType::Ping, "kanji", "p9", json!({})), 0);
        assert_eq!(error_code(&out).as_deref(), Some("unknown-participant"));
        let out = s.handle_message(&t, &client_message(MessageType::Snapshot, "kanji", &t, json!({})), 0);
        assert_eq!(error_code(&out).as_deref(), Some("not-client-message"));
        let out = s.handle_message(&t, &client_message(MessageType::Ping, "kanji", &t, json!({"n": 1})), 0);
        assert_eq!(out[0].env.kind, MessageType::Pong);
        assert_eq!(out[0].env.payload, json!({"n": 1}));
        let out = s.handle_message(&t, &client_message(MessageType::Ping, "kanji", "p2", json!({})), 0);
        assert_eq!(error_code(&out).as_deref(), Some("schema"));
    }

    #[test]
    fn stale_frames_rejected() {
        let (mut s, t, _) = dyad();
        s.handle_message(&t, &frame(&t, SignalChannel::Bvp, 5, 100, 0.1), 0);
        let out = s.handle_message(&t, &frame(&t, SignalChannel::Bvp, 5, 120, 0.1), 0);
        assert_eq!(error_code(&out).as_deref(), Some("frame-out-of-order"));
        let out = s.handle_message(&t, &frame(&t, SignalChannel::Bvp, 6, 90, 0.1), 0);
        assert_eq!(error_code(&out).as_deref(), Some("frame-out-of-order"));
    }

    #[test]
    fn frame_records_journal_consent_version() {
        let (mut s, t, _) = dyad();
        s.drain_journal();
        s.handle_message(&t, &consent_message("kanji", &t, SignalChannel::Sc, true), 1);
        s.handle_message(&t, &frame(&t, SignalChannel::Sc, 1, 10, 2.0), 10);
        let journal = s.drain_journal();
        let TraceRecord::Frame(rec) = &journal[1] else { panic!("{journal:?}") };
        assert_eq!(rec.consent_version, 1);
        assert_eq!(rec.recipients, vec![t]);
    }

    #[test]
    fn pacing_advisory_respects_reciprocity() {
        let (mut s, t, st) = dyad();
        let sc = crate::signals::gen_sc(
            2.0,
            &(0..12).map(|i| crate::signals::ScrEvent { t_s: 2.0 + i as f64 * 2.5, amplitude_us: 0.5 }).collect::<Vec<_>>(),
            40.0,
            4.0,
            1,
        )
        .unwrap();
        let mut advisories = 0;
        s.handle_message(&st, &consent_message("kanji", &st, SignalChannel::Sc, true), 0);
        for (i, smp) in sc.samples.iter().enumerate() {
            let out = s.handle_message(&st, &frame(&st, SignalChannel::Sc, i as u64, smp.t_ms, smp.value), smp.t_ms);
            advisories += out.iter().filter(|o| o.env.kind == MessageType::Advisory).count();
        }
        assert_eq!(advisories, 0, "teacher does not share SC, so no advice derived from it");

        s.handle_message(&t, &consent_message("kanji", &t, SignalChannel::Sc, true), 0);
        let base = sc.samples.len() as u64;
        let mut seen = Vec::new();
        for (i, smp) in sc.samples.iter().enumerate() {
            let t_ms = 40_000 + smp.t_ms;
            let out = s.handle_message(&st, &frame(&st, SignalChannel::Sc, base + i as u64, t_ms, smp.value), t_ms);
            for o in out.iter().filter(|o| o.env.kind == MessageType::Advisory) {
                assert_eq!(o.to, t);
                seen.push(o.env.payload_as::<AdvisoryPayload>().unwrap().advisory);
            }
        }
        assert!(seen.contains(&Pacing::Relax), "{seen:?}");
    }
}
