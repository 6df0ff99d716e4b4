//! Ambient display series reconstructed from a recorded trace.

use thiserror::Error;

use crate::display::{DisplayParams, DisplayState};
use crate::trace::Trace;

/// Whose screen to reconstruct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Viewer {
    /// Anyone other than the participant: frames count if they reached at
    /// least one other member.
    Peers,
    Participant(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EmitError {
    #[error("trace has no frame records; record with frames enabled")]
    NotRecorded,
    #[error("no frames from {0} in the trace")]
    NoFrames(String),
}

/// One row per frame `participant` sent, evaluated at the frame's
/// timestamp. Frames the viewer never received leave the series where it
/// was, so channels it cannot see stay neutral. Participants may be named
/// by id or display name.
pub fn emit_display(trace: &Trace, participant: &str, viewer: &Viewer) -> Result<Vec<DisplayParams>, EmitError> {
    if !trace.meta.record_frames {
        return Err(EmitError::NotRecorded);
    }
    let resolved = trace.participant_id(participant);
    let participant = resolved.as_deref().unwrap_or(participant);
    let viewer = match viewer {
        Viewer::Participant(v) => Viewer::Participant(trace.participant_id(v).unwrap_or_else(|| v.clone())),
        Viewer::Peers => Viewer::Peers,
    };
    let mut seen = false;
    let mut state = DisplayState::new(participant, trace.meta.display);
    let mut rows = Vec::new();
    for (_, fr) in trace.frames() {
        if fr.frame.participant != participant {
            continue;
        }
        seen = true;
        let delivered = match &viewer {
            Viewer::Peers => fr.recipients.iter().any(|r| r != participant),
            Viewer::Participant(id) => fr.recipients.iter().any(|r| r == id),
        };
        if delivered {
            state.push(&fr.frame);
        }
        rows.push(state.params(fr.frame.t_ms));
    }
    if !seen {
        return Err(EmitError::NoFrames(participant.to_string()));
    }
    Ok(rows)
}
