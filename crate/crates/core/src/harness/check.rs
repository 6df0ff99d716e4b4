//! Offline trace verification.
//!
//! Every check walks the trace once and reports the first counterexample
//! with its line number; a clean trace passes all of them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::display::DisplayState;
use crate::lesson::{LessonPhase, Role};
use crate::protocol::{LessonStatePayload, MessageType, SessionSnapshot};
use crate::session::{apply_sequenced, FoldError};
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Records the check looked at.
    pub checked: usize,
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// Process exit status for the report: 0 clean, 1 any violation.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.name == name)
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            match &r.counterexample {
                None => writeln!(out, "PASS {} ({} records)", r.name, r.checked),
                Some(c) => writeln!(out, "FAIL {}: {c}", r.name),
            }
            .expect("writing to a String");
        }
        out
    }
}

struct Check {
    name: &'static str,
    checked: usize,
    first: Option<String>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check { name, checked: 0, first: None }
    }

    fn fail(&mut self, line: usize, msg: impl std::fmt::Display) {
        if self.first.is_none() {
            self.first = Some(format!("line {line}: {msg}"));
        }
    }

    fn done(self) -> CheckResult {
        CheckResult { name: self.name.to_string(), passed: self.first.is_none(), checked: self.checked, counterexample: self.first }
    }
}

pub fn check_trace(trace: &Trace) -> CheckReport {
    let meta = &trace.meta;
    let mut sequencing = Check::new("sequencing");
    let mut replay = Check::new("replay");
    let mut phases = Check::new("lesson-phases");
    let mut reciprocity = Check::new("reciprocity");
    let mut bounds = Check::new("display-bounds");

    let mut state = SessionSnapshot::genesis(&meta.sid, &meta.boards, meta.script.clone());
    let mut last_seq = 0u64;
    let mut phase = LessonPhase::Intro;
    let mut displays: BTreeMap<String, DisplayState> = BTreeMap::new();
    let mut final_seen = None;

    for (line, rec) in &trace.records {
        let line = *line;
        match rec {
            TraceRecord::Meta(_) => replay.fail(line, "second meta record"),
            TraceRecord::Envelope(env) => {
                let Some(seq) = env.seq else { continue };
                sequencing.checked += 1;
                if seq != last_seq + 1 {
                    sequencing.fail(line, format!("seq {seq} follows {last_seq}"));
                }
                last_seq = seq;

                if env.kind == MessageType::LessonState {
                    phases.checked += 1;
                    match env.payload_as::<LessonStatePayload>() {
                        Ok(p) => {
                            if phase.next() != Some(p.phase) {
                                phases.fail(line, format!("{phase} -> {}", p.phase));
                            }
                            if state.member(&env.from).is_none_or(|m| m.role != Role::Teacher) {
                                phases.fail(line, format!("{} advanced the lesson but is not the teacher", env.from));
                            }
                            phase = p.phase;
                        }
                        Err(e) => phases.fail(line, e),
                    }
                }

                replay.checked += 1;
                let mut folded = apply_sequenced(&mut state, env);
                if let Err(FoldError::Gap { .. }) = folded {
                    // resync so one gap does not cascade into every later record
                    state.seq_head = seq - 1;
                    folded = apply_sequenced(&mut state, env);
                }
                if let Err(e) = folded {
                    replay.fail(line, format!("seq {seq}: {e}"));
                }
            }
            TraceRecord::Frame(fr) => {
                reciprocity.checked += 1;
                let sender = fr.frame.participant.as_str();
                let ch = fr.frame.channel;
                if fr.consent_version != state.consent.version() {
                    reciprocity.fail(
                        line,
                        format!("frame stamped with consent version {}, replay is at {}", fr.consent_version, state.consent.version()),
                    );
                }
                if !state.consent.is_member(sender) {
                    reciprocity.fail(line, format!("frame from non-member {sender}"));
                }
                for to in &fr.recipients {
                    if !state.consent.is_member(to) {
                        reciprocity.fail(line, format!("{ch} frame delivered to non-member {to}"));
                    } else if !state.consent.may_deliver(sender, to, ch).allowed {
                        reciprocity.fail(line, format!("{ch} frame from {sender} delivered to {to} without mutual consent"));
                    }
                }

                bounds.checked += 1;
                let disp = displays
                    .entry(sender.to_string())
                    .or_insert_with(|| DisplayState::new(sender.to_string(), meta.display));
                disp.push(&fr.frame);
                let p = disp.params(fr.frame.t_ms);
                if !p.within(&meta.display) {
                    bounds.fail(
                        line,
                        format!("{sender} at {} ms: r={} h={} d={}", p.t_ms, p.heart_radius, p.lung_height, p.sweat_density),
                    );
                }
            }
            TraceRecord::Final(snap) => final_seen = Some((line, snap)),
        }
    }

    if let Some((line, snap)) = final_seen {
        let live = canonical::to_string(snap).expect("snapshot serializes");
        let replayed = canonical::to_string(&state).expect("snapshot serializes");
        if live != replayed {
            replay.fail(line, "final state differs from the replayed log");
        }
    }

    CheckReport { results: vec![sequencing.done(), replay.done(), phases.done(), reciprocity.done(), bounds.done()] }
}
