//! Deterministic lesson simulation.
//!
//! The session state machine and one synthetic client per roster entry
//! run on a virtual clock. Events (joins, scripted actions, signal
//! samples) are totally ordered by `(time, class, insertion)`; every
//! outbound envelope is handed to its recipient's replica immediately, so
//! a run is a pure function of the scenario and seed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::check::check_trace;
use super::scenario::{Action, ChannelSource, Scenario, ScenarioError};
use crate::lesson::{LessonPhase, LessonScript, Role};
use crate::mirror::Mirror;
use crate::protocol::{BoardOpPayload, Envelope, ErrorPayload, LessonStatePayload, MessageType, SERVER_ID};
use crate::session::{client_message, consent_message, JoinOutcome, Outbound, Session, SessionSettings, SessionError};
use crate::signals::{gen_bvp, gen_resp, gen_sc, io::read_trace, Sample, ScrEvent, SignalChannel, SignalTrace};
use crate::trace::{Trace, TraceMeta, TraceRecord, TRACE_VERSION};
use crate::whiteboard::BoardOpKind;

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Journal every frame delivery decision in the trace.
    pub record_frames: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub violations: Vec<String>,
    /// Lesson phases in the order they were entered, starting at INTRO.
    pub phases: Vec<LessonPhase>,
    /// `(recipient, code)` of every ERROR reply.
    pub errors: Vec<(String, String)>,
    pub frames_sent: usize,
    pub frames_delivered: usize,
    pub sequenced: u64,
}

impl SimReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// The canonical JSON Lines trace.
    pub trace: String,
    pub report: SimReport,
}

#[derive(Debug, Clone)]
enum EventKind {
    Join,
    Act(Action),
    /// Raw board op expanded from a stroke action.
    Board(BoardOpPayload),
    Sample(SignalChannel, f64),
}

#[derive(Debug, Clone)]
struct Event {
    t_ms: i64,
    class: u8,
    order: usize,
    client: usize,
    kind: EventKind,
}

struct Client {
    name: String,
    role: Role,
    pid: Option<String>,
    left: bool,
    mirror: Mirror,
    frame_seq: [u64; 3],
}

fn to_ms(t_s: f64) -> i64 {
    (t_s * 1000.0).round() as i64
}

fn participant_seed(seed: u64, client: usize, ch: SignalChannel) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(client as u64 * 16 + ch.index() as u64)
}

/// Generated or loaded samples for one channel, with times relative to
/// the participant's join. Scripted SCR events use session time.
fn channel_trace(
    ch: SignalChannel,
    src: &ChannelSource,
    join_s: f64,
    duration_s: f64,
    rate: f64,
    seed: u64,
) -> Result<SignalTrace, ScenarioError> {
    let invalid = |e: crate::signals::SignalError| ScenarioError::Invalid(format!("{ch} source: {e}"));
    if let Some(path) = &src.trace {
        let file = std::fs::File::open(path)?;
        let (trace, _) = read_trace(std::io::BufReader::new(file))
            .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
        if trace.channel != ch {
            return Err(ScenarioError::Invalid(format!("{} holds {} data, not {ch}", path.display(), trace.channel)));
        }
        return Ok(trace);
    }
    let missing = |what: &str| ScenarioError::Invalid(format!("{ch} source needs {what} or a trace"));
    match ch {
        SignalChannel::Bvp => gen_bvp(src.hr_bpm.ok_or_else(|| missing("hr_bpm"))?, duration_s, rate, seed).map_err(invalid),
        SignalChannel::Resp => {
            gen_resp(src.breaths_per_min.ok_or_else(|| missing("breaths_per_min"))?, duration_s, rate, seed).map_err(invalid)
        }
        SignalChannel::Sc => {
            let events: Vec<ScrEvent> = src
                .scr_events
                .iter()
                .map(|e| ScrEvent { t_s: e.t_s - join_s, ..*e })
                .filter(|e| (0.0..=duration_s).contains(&e.t_s))
                .collect();
            gen_sc(src.tonic_us.ok_or_else(|| missing("tonic_us"))?, &events, duration_s, rate, seed).map_err(invalid)
        }
    }
}

fn build_events(scenario: &Scenario, seed: u64) -> Result<Vec<Event>, ScenarioError> {
    let end_ms = to_ms(scenario.duration_s);
    let mut events = Vec::new();
    let push = |events: &mut Vec<Event>, t_ms: i64, class: u8, client: usize, kind: EventKind| {
        if t_ms <= end_ms {
            let order = events.len();
            events.push(Event { t_ms, class, order, client, kind });
        }
    };

    // teachers join first so the session exists when students arrive
    let mut join_order: Vec<usize> = (0..scenario.roster.len()).collect();
    join_order.sort_by_key(|&i| (to_ms(scenario.roster[i].join_s), scenario.roster[i].role != Role::Teacher, i));
    for i in join_order {
        push(&mut events, to_ms(scenario.roster[i].join_s), 0, i, EventKind::Join);
    }

    let client_of = |name: &str| scenario.roster.iter().position(|r| r.name == name).expect("validated");
    let mut stroke_counters = vec![0usize; scenario.roster.len()];
    for a in &scenario.actions {
        let client = client_of(&a.actor);
        let t_ms = to_ms(a.t_s);
        match &a.action {
            Action::Stroke { board, points, interval_ms } => {
                stroke_counters[client] += 1;
                let stroke_id = format!("s{}", stroke_counters[client]);
                let op = |kind, point, t_ms| BoardOpPayload {
                    kind,
                    board_id: board.clone(),
                    stroke_id: stroke_id.clone(),
                    point,
                    t_ms,
                };
                push(&mut events, t_ms, 1, client, EventKind::Board(op(BoardOpKind::StrokeBegin, Some(points[0]), t_ms)));
                let mut t = t_ms;
                for p in &points[1..] {
                    t += interval_ms;
                    push(&mut events, t, 1, client, EventKind::Board(op(BoardOpKind::StrokePoint, Some(*p), t)));
                }
                t += interval_ms;
                push(&mut events, t, 1, client, EventKind::Board(op(BoardOpKind::StrokeEnd, None, t)));
            }
            other => push(&mut events, t_ms, 1, client, EventKind::Act(other.clone())),
        }
    }

    for (i, entry) in scenario.roster.iter().enumerate() {
        let join_ms = to_ms(entry.join_s);
        for ch in SignalChannel::ALL {
            let Some(src) = entry.signals.get(ch) else { continue };
            let rate = scenario.config.rates.for_channel(ch);
            let span = scenario.duration_s - entry.join_s;
            if span <= 0.0 {
                continue;
            }
            let trace = channel_trace(ch, src, entry.join_s, span, rate, participant_seed(seed, i, ch))?;
            for Sample { t_ms, value } in trace.samples {
                push(&mut events, join_ms + t_ms, 2, i, EventKind::Sample(ch, value));
            }
        }
    }

    events.sort_by_key(|e| (e.t_ms, e.class, e.order));
    Ok(events)
}

struct Sim<'a> {
    scenario: &'a Scenario,
    settings: SessionSettings,
    script: LessonScript,
    session: Option<Session>,
    clients: Vec<Client>,
    by_pid: HashMap<String, usize>,
    trace: String,
    report: SimReport,
}

impl Sim<'_> {
    fn record(&mut self, rec: &TraceRecord) {
        self.trace.push_str(&rec.to_line());
    }

    fn flush_journal(&mut self) {
        if let Some(session) = self.session.as_mut() {
            for rec in session.drain_journal() {
                self.trace.push_str(&rec.to_line());
            }
        }
    }

    fn deliver(&mut self, outbound: Vec<Outbound>) {
        for Outbound { to, env } in outbound {
            match env.kind {
                MessageType::SignalFrame => self.report.frames_delivered += 1,
                _ => {}
            }
            if let Some(&idx) = self.by_pid.get(&to) {
                self.clients[idx].mirror.apply(&env);
            }
        }
        self.flush_journal();
    }

    fn reject(&mut self, client: usize, error: Envelope) {
        if let Ok(p) = error.payload_as::<ErrorPayload>() {
            self.report.errors.push((p.to.clone(), p.code));
        }
        self.clients[client].mirror.apply(&error);
    }

    fn join(&mut self, client: usize, t_ms: i64) {
        let (name, role) = (self.clients[client].name.clone(), self.clients[client].role);
        if self.session.is_none() {
            if role != Role::Teacher {
                let reason = SessionError::UnknownSession(self.scenario.sid().to_string());
                let mut error = Envelope::new(
                    MessageType::Error,
                    self.scenario.sid(),
                    SERVER_ID,
                    ErrorPayload {
                        code: reason.code().into(),
                        message: reason.to_string(),
                        to: name,
                        request_type: Some(MessageType::Join),
                    },
                );
                error.t_server_ms = t_ms;
                self.record(&TraceRecord::Envelope(error.clone()));
                return self.reject(client, error);
            }
            self.session = Some(Session::new(self.scenario.sid(), self.settings.clone(), self.script.clone()));
        }
        let session = self.session.as_mut().expect("created above");
        match session.join(&name, role, t_ms) {
            JoinOutcome::Accepted { participant, outbound } => {
                self.by_pid.insert(participant.clone(), client);
                self.clients[client].pid = Some(participant);
                self.deliver(outbound);
            }
            JoinOutcome::Rejected { error, .. } => {
                self.flush_journal();
                self.reject(client, error);
            }
        }
    }

    fn send(&mut self, client: usize, env: Envelope, t_ms: i64) {
        let Some(pid) = self.clients[client].pid.clone() else { return };
        let session = self.session.as_mut().expect("joined clients have a session");
        let out = session.handle_message(&pid, &env, t_ms);
        for o in &out {
            if o.env.kind == MessageType::Error {
                if let Ok(p) = o.env.payload_as::<ErrorPayload>() {
                    self.report.errors.push((p.to, p.code));
                }
            }
        }
        self.deliver(out);
    }

    fn step(&mut self, ev: Event) {
        let client = ev.client;
        if self.clients[client].left {
            return;
        }
        if !matches!(ev.kind, EventKind::Join) && self.clients[client].pid.is_none() {
            return;
        }
        let sid = self.scenario.sid().to_string();
        let pid = self.clients[client].pid.clone().unwrap_or_default();
        match ev.kind {
            EventKind::Join => self.join(client, ev.t_ms),
            EventKind::Sample(ch, value) => {
                let seq = &mut self.clients[client].frame_seq[ch.index()];
                *seq += 1;
                let payload = json!({"ch": ch, "seq": *seq, "t_ms": ev.t_ms, "v": value});
                self.report.frames_sent += 1;
                self.send(client, client_message(MessageType::SignalFrame, &sid, &pid, payload), ev.t_ms);
            }
            EventKind::Board(op) => {
                let env = Envelope::new(MessageType::BoardOp, &sid, &pid, op);
                self.send(client, env, ev.t_ms);
            }
            EventKind::Act(action) => match action {
                Action::Consent { channels, share } => {
                    for ch in channels {
                        self.send(client, consent_message(&sid, &pid, ch, share), ev.t_ms);
                    }
                }
                Action::BoardOp { kind, board, stroke_id, point } => {
                    let op = BoardOpPayload { kind, board_id: board, stroke_id, point, t_ms: ev.t_ms };
                    self.send(client, Envelope::new(MessageType::BoardOp, &sid, &pid, op), ev.t_ms);
                }
                Action::Clear { board } => {
                    let op = BoardOpPayload { kind: BoardOpKind::Clear, board_id: board, stroke_id: String::new(), point: None, t_ms: ev.t_ms };
                    self.send(client, Envelope::new(MessageType::BoardOp, &sid, &pid, op), ev.t_ms);
                }
                Action::Advance => self.send(client, client_message(MessageType::LessonAdvance, &sid, &pid, json!({})), ev.t_ms),
                Action::Quiz { judgments } => {
                    let env = client_message(MessageType::QuizJudge, &sid, &pid, json!({ "judgments": judgments }));
                    self.send(client, env, ev.t_ms);
                }
                Action::Ping => self.send(client, client_message(MessageType::Ping, &sid, &pid, json!({})), ev.t_ms),
                Action::Leave => {
                    let session = self.session.as_mut().expect("joined");
                    let out = session.leave(&pid, ev.t_ms);
                    self.clients[client].left = true;
                    self.by_pid.remove(&pid);
                    self.deliver(out);
                }
                Action::Stroke { .. } => unreachable!("strokes are expanded into board ops"),
            },
        }
    }

    fn finish(mut self) -> SimOutcome {
        let violations = &mut self.report.violations;
        if let Some(session) = &self.session {
            let live = session.snapshot();
            self.report.sequenced = live.seq_head;
            match crate::session::replay(session.genesis().clone(), session.log()) {
                Ok(replayed) if &replayed == live => {}
                Ok(_) => violations.push("log replay differs from live state".into()),
                Err(e) => violations.push(format!("log replay failed: {e}")),
            }
            let live_boards = crate::canonical::to_string(&live.boards).expect("boards serialize");
            for c in self.clients.iter().filter(|c| c.pid.is_some() && !c.left) {
                let tag = format!("{} ({})", c.name, c.pid.as_deref().unwrap_or(""));
                violations.extend(c.mirror.violations.iter().map(|v| format!("{tag}: {v}")));
                match c.mirror.state() {
                    Some(state) => {
                        if crate::canonical::to_string(&state.boards).expect("boards serialize") != live_boards {
                            violations.push(format!("{tag}: boards diverged from the server"));
                        }
                        if state != live {
                            violations.push(format!("{tag}: replica state diverged from the server"));
                        }
                    }
                    None => violations.push(format!("{tag}: never received a snapshot")),
                }
                if !c.mirror.seqs_contiguous() {
                    violations.push(format!("{tag}: sequenced messages arrived with a gap"));
                }
            }
            let final_state = live.clone();
            self.trace.push_str(&TraceRecord::Final(final_state).to_line());
        }

        match Trace::from_str(&self.trace) {
            Ok(trace) => {
                self.report.phases = phases_of(&trace);
                let report = check_trace(&trace);
                for r in report.results.iter().filter(|r| !r.passed) {
                    self.report
                        .violations
                        .push(format!("check {}: {}", r.name, r.counterexample.as_deref().unwrap_or("failed")));
                }
            }
            Err(e) => self.report.violations.push(format!("trace unreadable: {e}")),
        }
        SimOutcome { trace: self.trace, report: self.report }
    }
}

/// Phases entered in a trace, starting at INTRO.
pub fn phases_of(trace: &Trace) -> Vec<LessonPhase> {
    let mut phases = vec![LessonPhase::Intro];
    for (_, env) in trace.envelopes() {
        if env.kind == MessageType::LessonState && env.seq.is_some() {
            if let Ok(p) = env.payload_as::<LessonStatePayload>() {
                phases.push(p.phase);
            }
        }
    }
    phases
}

pub fn run_scenario(scenario: &Scenario, opts: &SimOptions) -> Result<SimOutcome, ScenarioError> {
    scenario.validate()?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let events = build_events(scenario, seed)?;

    let settings = SessionSettings { record_frames: opts.record_frames, ..SessionSettings::from(&scenario.config) };
    let script = scenario.script.clone().unwrap_or_default();
    let meta = TraceMeta {
        version: TRACE_VERSION,
        sid: scenario.sid().to_string(),
        boards: settings.boards.clone(),
        script: script.clone(),
        display: settings.display,
        record_frames: opts.record_frames,
        scenario: Some(scenario.name.clone()),
        seed: Some(seed),
    };
    let clients = scenario
        .roster
        .iter()
        .map(|r| Client {
            name: r.name.clone(),
            role: r.role,
            pid: None,
            left: false,
            mirror: Mirror::new(settings.display),
            frame_seq: [0; 3],
        })
        .collect();

    let mut sim = Sim {
        scenario,
        settings,
        script,
        session: None,
        clients,
        by_pid: HashMap::new(),
        trace: TraceRecord::Meta(meta).to_line(),
        report: SimReport::default(),
    };
    for ev in events {
        sim.step(ev);
    }
    Ok(sim.finish())
}
