//! Session registry and the per-session actor.
//!
//! Each live session is owned by one task; connections talk to it over a
//! channel, so all mutations of a session are serialized without locks.
//! Sessions are created by their teacher's JOIN and end when the last
//! member leaves.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rapport_core::config::Config;
use rapport_core::lesson::{LessonScript, Role};
use rapport_core::protocol::{Envelope, ErrorPayload, MessageType, SessionSnapshot, SERVER_ID};
use rapport_core::session::{JoinOutcome, Outbound, Session, SessionError, SessionSettings};
use rapport_core::trace::{TraceMeta, TraceRecord, TraceWriter, TRACE_VERSION};
use tokio::sync::{mpsc, oneshot};
use tracing::{debug, info, warn};

use crate::outbound::{Outbox, Push};

const COMMAND_QUEUE: usize = 4096;

enum Command {
    Join { name: String, role: Role, outbox: Arc<Outbox>, reply: oneshot::Sender<Option<String>> },
    Message { participant: String, env: Envelope },
    Leave { participant: String },
    Snapshot { reply: oneshot::Sender<SessionSnapshot> },
}

/// A joined connection's handle on its session.
#[derive(Clone)]
pub struct Membership {
    pub sid: String,
    pub participant: String,
    tx: mpsc::Sender<Command>,
}

impl Membership {
    /// Forward a client message; false once the session has ended.
    pub async fn send(&self, env: Envelope) -> bool {
        self.tx.send(Command::Message { participant: self.participant.clone(), env }).await.is_ok()
    }

    pub async fn leave(&self) {
        let _ = self.tx.send(Command::Leave { participant: self.participant.clone() }).await;
    }
}

pub struct Hub {
    config: Config,
    script: LessonScript,
    record_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, mpsc::Sender<Command>>>,
}

fn error_envelope(sid: &str, to: &str, code: &str, message: String, request: Option<MessageType>) -> Envelope {
    Envelope::new(
        MessageType::Error,
        sid,
        SERVER_ID,
        ErrorPayload { code: code.into(), message, to: to.into(), request_type: request },
    )
}

impl Hub {
    pub fn new(config: Config, record_dir: Option<PathBuf>) -> Arc<Hub> {
        Arc::new(Hub { config, script: LessonScript::default(), record_dir, sessions: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Join `sid`, creating it when the joiner is a teacher. On refusal the
    /// ERROR has already been queued on `outbox`.
    pub async fn join(self: &Arc<Self>, sid: &str, name: &str, role: Role, outbox: Arc<Outbox>) -> Option<Membership> {
        let tx = {
            let mut sessions = self.sessions.lock().expect("hub lock");
            match sessions.get(sid) {
                Some(tx) => tx.clone(),
                None if role == Role::Teacher => {
                    let tx = self.spawn_session(sid);
                    sessions.insert(sid.to_string(), tx.clone());
                    tx
                }
                None => {
                    drop(sessions);
                    refuse_unknown(sid, name, &outbox);
                    return None;
                }
            }
        };
        let (reply, rx) = oneshot::channel();
        let cmd = Command::Join { name: name.to_string(), role, outbox: outbox.clone(), reply };
        if tx.send(cmd).await.is_err() {
            // the session ended between lookup and send
            refuse_unknown(sid, name, &outbox);
            return None;
        }
        let participant = rx.await.ok().flatten()?;
        Some(Membership { sid: sid.to_string(), participant, tx })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("hub lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn snapshot(&self, sid: &str) -> Option<SessionSnapshot> {
        let tx = self.sessions.lock().expect("hub lock").get(sid).cloned()?;
        let (reply, rx) = oneshot::channel();
        tx.send(Command::Snapshot { reply }).await.ok()?;
        rx.await.ok()
    }

    fn spawn_session(self: &Arc<Self>, sid: &str) -> mpsc::Sender<Command> {
        let (tx, rx) = mpsc::channel(COMMAND_QUEUE);
        let settings = SessionSettings { record_frames: self.record_dir.is_some(), ..SessionSettings::from(&self.config) };
        let recorder = self.record_dir.as_deref().and_then(|dir| match Recorder::create(dir, sid, &settings, &self.script) {
            Ok(r) => Some(r),
            Err(e) => {
                warn!(sid, error = %e, "cannot record session");
                None
            }
        });
        let actor = Actor {
            hub: Arc::downgrade(self),
            session: Session::new(sid, settings, self.script.clone()),
            started: Instant::now(),
            conns: HashMap::new(),
            recorder,
            tx: tx.clone(),
        };
        info!(sid, "session created");
        tokio::spawn(actor.run(rx));
        tx
    }
}

fn refuse_unknown(sid: &str, name: &str, outbox: &Outbox) {
    let e = SessionError::UnknownSession(sid.to_string());
    outbox.push(error_envelope(sid, name, e.code(), e.to_string(), Some(MessageType::Join)));
}

struct Recorder {
    path: PathBuf,
    writer: TraceWriter<BufWriter<File>>,
}

impl Recorder {
    fn create(dir: &Path, sid: &str, settings: &SessionSettings, script: &LessonScript) -> std::io::Result<Recorder> {
        std::fs::create_dir_all(dir)?;
        let stem: String = sid.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        let mut path = dir.join(format!("{stem}.jsonl"));
        let mut n = 1;
        while path.exists() {
            n += 1;
            path = dir.join(format!("{stem}-{n}.jsonl"));
        }
        let mut writer = TraceWriter::new(BufWriter::new(File::create(&path)?));
        writer.write(&TraceRecord::Meta(TraceMeta {
            version: TRACE_VERSION,
            sid: sid.to_string(),
            boards: settings.boards.clone(),
            script: script.clone(),
            display: settings.display,
            record_frames: settings.record_frames,
            scenario: None,
            seed: None,
        }))?;
        Ok(Recorder { path, writer })
    }
}

struct Actor {
    hub: std::sync::Weak<Hub>,
    session: Session,
    started: Instant,
    conns: HashMap<String, Arc<Outbox>>,
    recorder: Option<Recorder>,
    tx: mpsc::Sender<Command>,
}

impl Actor {
    fn now(&self) -> i64 {
        self.started.elapsed().as_millis() as i64
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            let now = self.now();
            match cmd {
                Command::Join { name, role, outbox, reply } => match self.session.join(&name, role, now) {
                    JoinOutcome::Accepted { participant, outbound } => {
                        debug!(sid = self.session.sid(), %participant, ?role, "joined");
                        self.conns.insert(participant.clone(), outbox);
                        let _ = reply.send(Some(participant));
                        self.route(outbound, now);
                    }
                    JoinOutcome::Rejected { error, .. } => {
                        outbox.push(error);
                        let _ = reply.send(None);
                    }
                },
                Command::Message { participant, env } => {
                    if self.conns.contains_key(&participant) {
                        let out = self.session.handle_message(&participant, &env, now);
                        self.route(out, now);
                    }
                }
                Command::Leave { participant } => self.drop_member(&participant, now),
                Command::Snapshot { reply } => {
                    let _ = reply.send(self.session.snapshot().clone());
                }
            }
            self.record();
            // nothing is sequenced before the first join
            if self.session.is_empty() && self.session.snapshot().seq_head > 0 {
                break;
            }
        }
        self.shutdown(rx).await;
    }

    fn drop_member(&mut self, participant: &str, now: i64) {
        if let Some(outbox) = self.conns.remove(participant) {
            outbox.close();
            let out = self.session.leave(participant, now);
            self.route(out, now);
        }
    }

    /// Queue envelopes on their connections. A member whose queue had to
    /// close is removed, which may produce more envelopes.
    fn route(&mut self, outbound: Vec<Outbound>, now: i64) {
        let mut pending = outbound;
        while !pending.is_empty() {
            let mut overflowed = Vec::new();
            for Outbound { to, env } in pending.drain(..) {
                if let Some(outbox) = self.conns.get(&to) {
                    if outbox.push(env) == Push::Closed {
                        overflowed.push(to);
                    }
                }
            }
            for pid in overflowed {
                warn!(sid = self.session.sid(), participant = %pid, "outbound queue overflowed; disconnecting");
                if let Some(outbox) = self.conns.remove(&pid) {
                    outbox.close();
                    pending.extend(self.session.leave(&pid, now));
                }
            }
        }
    }

    fn record(&mut self) {
        let journal = self.session.drain_journal();
        if let Some(rec) = self.recorder.as_mut() {
            if let Err(e) = rec.writer.write_all(&journal).and_then(|_| rec.writer.flush()) {
                warn!(path = %rec.path.display(), error = %e, "trace write failed; recording stopped");
                self.recorder = None;
            }
        }
    }

    async fn shutdown(mut self, mut rx: mpsc::Receiver<Command>) {
        let sid = self.session.sid().to_string();
        if let Some(hub) = self.hub.upgrade() {
            let mut sessions = hub.sessions.lock().expect("hub lock");
            if sessions.get(&sid).is_some_and(|tx| tx.same_channel(&self.tx)) {
                sessions.remove(&sid);
            }
        }
        rx.close();
        // joins that raced with the last leave
        while let Some(cmd) = rx.recv().await {
            if let Command::Join { name, outbox, reply, .. } = cmd {
                refuse_unknown(&sid, &name, &outbox);
                let _ = reply.send(None);
            }
        }
        if let Some(mut rec) = self.recorder.take() {
            let done = rec
                .writer
                .write(&TraceRecord::Final(self.session.snapshot().clone()))
                .and_then(|_| rec.writer.flush());
            match done {
                Ok(()) => info!(sid, path = %rec.path.display(), "trace written"),
                Err(e) => warn!(sid, error = %e, "final trace record lost"),
            }
        }
        info!(sid, "session ended");
    }
}
