//! Async clients for the lesson service: [`ServiceClient`] for the
//! HTTP/JSON operations and [`Participant`] for joining a live session
//! over the NDJSON socket.

use std::time::Duration;

use rapport_core::display::DisplayParams;
use rapport_core::harness::{CheckReport, SimReport};
use rapport_core::lesson::{LessonPhase, Role};
use rapport_core::mirror::Mirror;
use rapport_core::protocol::{
    parse_envelope, BoardOpPayload, Envelope, MessageType, ProtocolError, SessionSnapshot, SnapshotPayload,
};
use rapport_core::signals::{GenParams, SignalChannel, SignalFrame};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("join refused: {code}: {message}")]
    Refused { code: String, message: String },
    #[error("connection closed by the server")]
    Closed,
    #[error("no message within {0:?}")]
    Timeout(Duration),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub sid: String,
    pub members: usize,
    pub phase: LessonPhase,
    pub seq_head: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScrDetection {
    pub per_min: f64,
    pub onsets_ms: Vec<i64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Simulation {
    pub trace: String,
    pub report: SimReport,
}

/// HTTP/JSON operations.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    http: reqwest::Client,
}

impl ServiceClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceClient { base: base_url.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn ok(resp: reqwest::Response) -> Result<reqwest::Response> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        Err(ClientError::Api {
            status,
            code: body["code"].as_str().unwrap_or("http-error").to_string(),
            message: body["message"].as_str().unwrap_or_default().to_string(),
        })
    }

    async fn text(&self, req: reqwest::RequestBuilder) -> Result<String> {
        Ok(Self::ok(req.send().await?).await?.text().await?)
    }

    async fn json<T: serde::de::DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T> {
        Ok(Self::ok(req.send().await?).await?.json().await?)
    }

    pub async fn health(&self) -> Result<Value> {
        self.json(self.http.get(self.url("/health"))).await
    }

    pub async fn sessions(&self) -> Result<Vec<SessionSummary>> {
        self.json(self.http.get(self.url("/api/sessions"))).await
    }

    pub async fn session(&self, sid: &str) -> Result<SessionSnapshot> {
        self.json(self.http.get(self.url(&format!("/api/sessions/{sid}")))).await
    }

    /// A generated signal trace, in the JSON Lines trace format.
    pub async fn gen(&self, params: &GenParams) -> Result<String> {
        self.text(self.http.post(self.url("/api/gen")).json(params)).await
    }

    pub async fn detect_pulse(&self, trace: &str) -> Result<f64> {
        let v: Value = self.json(self.http.post(self.url("/api/detect/pulse")).body(trace.to_string())).await?;
        Ok(v["bpm"].as_f64().unwrap_or(f64::NAN))
    }

    pub async fn detect_scr(&self, trace: &str, threshold: Option<f64>) -> Result<ScrDetection> {
        let mut req = self.http.post(self.url("/api/detect/scr")).body(trace.to_string());
        if let Some(t) = threshold {
            req = req.query(&[("threshold", t)]);
        }
        self.json(req).await
    }

    pub async fn display(&self, participant: &str, frames: &[SignalFrame], now_ms: i64) -> Result<DisplayParams> {
        let body = json!({"participant": participant, "frames": frames, "now_ms": now_ms});
        self.json(self.http.post(self.url("/api/display")).json(&body)).await
    }

    pub async fn check(&self, trace: &str) -> Result<CheckReport> {
        self.json(self.http.post(self.url("/api/check")).body(trace.to_string())).await
    }

    /// Display CSV for `participant`, as seen by any peer or by `viewer`.
    pub async fn emit_display(&self, trace: &str, participant: &str, viewer: Option<&str>) -> Result<String> {
        let body = json!({"trace": trace, "participant": participant, "viewer": viewer});
        self.text(self.http.post(self.url("/api/emit-display")).json(&body)).await
    }

    /// Run a scenario given as an object or a bundled scenario name.
    pub async fn simulate(&self, scenario: Value, seed: Option<u64>, record_frames: bool) -> Result<Simulation> {
        let body = json!({"scenario": scenario, "seed": seed, "record_frames": record_frames});
        self.json(self.http.post(self.url("/api/simulate")).json(&body)).await
    }
}

/// A live session member on the NDJSON socket. Every received envelope
/// also feeds a local [`Mirror`].
pub struct Participant {
    lines: Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
    sid: String,
    id: String,
    role: Role,
    mirror: Mirror,
    frame_seq: [u64; 3],
}

impl Participant {
    pub async fn join(addr: impl ToSocketAddrs, sid: &str, name: &str, role: Role) -> Result<Participant> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (read, write) = stream.into_split();
        let mut p = Participant {
            lines: BufReader::new(read).lines(),
            write,
            sid: sid.to_string(),
            id: String::new(),
            role,
            mirror: Mirror::new(Default::default()),
            frame_seq: [0; 3],
        };
        p.send(MessageType::Join, json!({"name": name, "role": role})).await?;
        let first = p.recv(Duration::from_secs(10)).await?;
        match first.kind {
            MessageType::Snapshot => {
                let snap: SnapshotPayload = first.payload_as()?;
                p.id = snap.participant;
                Ok(p)
            }
            _ => Err(ClientError::Refused {
                code: first.payload["code"].as_str().unwrap_or_default().to_string(),
                message: first.payload["message"].as_str().unwrap_or_default().to_string(),
            }),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn mirror(&self) -> &Mirror {
        &self.mirror
    }

    pub async fn send(&mut self, kind: MessageType, payload: Value) -> Result<()> {
        let mut line = Envelope::new(kind, self.sid.clone(), self.id.clone(), payload).to_text();
        line.push('\n');
        self.write.write_all(line.as_bytes()).await?;
        Ok(())
    }

    /// Next envelope from the server.
    pub async fn recv(&mut self, wait: Duration) -> Result<Envelope> {
        let line = tokio::time::timeout(wait, self.lines.next_line())
            .await
            .map_err(|_| ClientError::Timeout(wait))??
            .ok_or(ClientError::Closed)?;
        let env = parse_envelope(&line)?;
        self.mirror.apply(&env);
        Ok(env)
    }

    /// Receive until an envelope of `kind` arrives.
    pub async fn recv_kind(&mut self, kind: MessageType, wait: Duration) -> Result<Envelope> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let env = self.recv(left).await?;
            if env.kind == kind {
                return Ok(env);
            }
        }
    }

    /// Apply whatever arrives within `wait`, returning how many envelopes.
    pub async fn drain(&mut self, wait: Duration) -> Result<usize> {
        let mut n = 0;
        loop {
            match self.recv(wait).await {
                Ok(_) => n += 1,
                Err(ClientError::Timeout(_)) => return Ok(n),
                Err(e) => return Err(e),
            }
        }
    }

    pub async fn consent(&mut self, channel: SignalChannel, share: bool) -> Result<()> {
        self.send(MessageType::ConsentSet, json!({"channel": channel, "share": share})).await
    }

    /// Send one sample; frame numbers are kept per channel.
    pub async fn frame(&mut self, channel: SignalChannel, t_ms: i64, value: f64) -> Result<()> {
        let seq = &mut self.frame_seq[channel.index()];
        *seq += 1;
        let payload = json!({"ch": channel, "seq": *seq, "t_ms": t_ms, "v": value});
        self.send(MessageType::SignalFrame, payload).await
    }

    pub async fn board_op(&mut self, op: &BoardOpPayload) -> Result<()> {
        self.send(MessageType::BoardOp, serde_json::to_value(op).expect("board ops serialize")).await
    }

    pub async fn advance(&mut self) -> Result<()> {
        self.send(MessageType::LessonAdvance, json!({})).await
    }

    pub async fn judge(&mut self, judgments: &[bool]) -> Result<()> {
        self.send(MessageType::QuizJudge, json!({"judgments": judgments})).await
    }

    pub async fn ping(&mut self) -> Result<()> {
        self.send(MessageType::Ping, json!({})).await
    }
}
