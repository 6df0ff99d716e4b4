//! A client-side replica built only from received envelopes. Used by the
//! simulated clients and by the live client to materialize boards and
//! ambient display values, and to audit what the server delivered.

use std::collections::BTreeMap;

use crate::display::{DisplayConfig, DisplayParams, DisplayState};
use crate::protocol::{AdvisoryPayload, Envelope, ErrorPayload, MessageType, SessionSnapshot, SnapshotPayload};
use crate::session::apply_sequenced;
use crate::signals::SignalFrame;

#[derive(Debug, Clone)]
pub struct Mirror {
    me: Option<String>,
    state: Option<SessionSnapshot>,
    display_cfg: DisplayConfig,
    displays: BTreeMap<String, DisplayState>,
    snapshot_head: u64,
    /// Sequence numbers of every sequenced envelope received, in order.
    pub seqs: Vec<u64>,
    pub errors: Vec<ErrorPayload>,
    pub advisories: Vec<AdvisoryPayload>,
    /// Anything the server sent that a correct server never would.
    pub violations: Vec<String>,
}

impl Mirror {
    pub fn new(display_cfg: DisplayConfig) -> Self {
        Mirror {
            me: None,
            state: None,
            display_cfg,
            displays: BTreeMap::new(),
            snapshot_head: 0,
            seqs: Vec::new(),
            errors: Vec::new(),
            advisories: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn me(&self) -> Option<&str> {
        self.me.as_deref()
    }

    pub fn state(&self) -> Option<&SessionSnapshot> {
        self.state.as_ref()
    }

    pub fn apply(&mut self, env: &Envelope) {
        match env.kind {
            MessageType::Snapshot => match env.payload_as::<SnapshotPayload>() {
                Ok(snap) => {
                    self.me = Some(snap.participant);
                    self.snapshot_head = snap.state.seq_head;
                    self.seqs.clear();
                    self.state = Some(snap.state);
                }
                Err(e) => self.violations.push(e.to_string()),
            },
            MessageType::SignalFrame => self.on_frame(env),
            MessageType::Error => match env.payload_as::<ErrorPayload>() {
                Ok(e) => self.errors.push(e),
                Err(e) => self.violations.push(e.to_string()),
            },
            MessageType::Advisory => match env.payload_as::<AdvisoryPayload>() {
                Ok(a) => self.advisories.push(a),
                Err(e) => self.violations.push(e.to_string()),
            },
            MessageType::Pong => {}
            _ if env.seq.is_some() => {
                let Some(state) = self.state.as_mut() else {
                    self.violations.push(format!("{} seq {:?} before snapshot", env.kind, env.seq));
                    return;
                };
                self.seqs.push(env.seq.unwrap_or_default());
                if let Err(e) = apply_sequenced(state, env) {
                    self.violations.push(format!("seq {:?}: {e}", env.seq));
                }
            }
            other => self.violations.push(format!("unexpected unsequenced {other}")),
        }
    }

    fn on_frame(&mut self, env: &Envelope) {
        let frame: SignalFrame = match env.payload_as() {
            Ok(f) => f,
            Err(e) => return self.violations.push(e.to_string()),
        };
        let (Some(me), Some(state)) = (self.me.as_deref(), self.state.as_ref()) else {
            return self.violations.push("frame before snapshot".into());
        };
        if frame.participant != me && !state.consent.may_deliver(&frame.participant, me, frame.channel).allowed {
            self.violations.push(format!(
                "received {} frame {} from {} without mutual consent",
                frame.channel, frame.seq, frame.participant
            ));
        }
        let cfg = self.display_cfg;
        self.displays
            .entry(frame.participant.clone())
            .or_insert_with(|| DisplayState::new(frame.participant.clone(), cfg))
            .push(&frame);
    }

    /// Ambient display values for a participant whose frames reached us.
    pub fn display(&self, participant: &str, now_ms: i64) -> Option<DisplayParams> {
        self.displays.get(participant).map(|d| d.params(now_ms))
    }

    /// Seqs received form one contiguous run following the snapshot.
    pub fn seqs_contiguous(&self) -> bool {
        self.seqs.iter().zip(self.snapshot_head + 1..).all(|(a, b)| *a == b)
    }
}
