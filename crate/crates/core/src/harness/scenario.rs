use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::lesson::{LessonScript, Role};
use crate::signals::{ScrEvent, SignalChannel};
use crate::whiteboard::{BoardOpKind, Point};

const BUNDLED: &[(&str, &str)] = &[
    ("lesson_dyad", include_str!("../../scenarios/lesson_dyad.json")),
    ("lesson_group", include_str!("../../scenarios/lesson_group.json")),
    ("revocation", include_str!("../../scenarios/revocation.json")),
    ("student_advance", include_str!("../../scenarios/student_advance.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("no scenario file or bundled scenario named {0:?}")]
    Unknown(String),
}

/// Per-channel signal source: a generator (parameters by channel) or a
/// recorded trace file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breaths_per_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tonic_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scr_events: Vec<ScrEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSources {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bvp: Option<ChannelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp: Option<ChannelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sc: Option<ChannelSource>,
}

impl SignalSources {
    pub fn get(&self, ch: SignalChannel) -> Option<&ChannelSource> {
        match ch {
            SignalChannel::Bvp => self.bvp.as_ref(),
            SignalChannel::Resp => self.resp.as_ref(),
            SignalChannel::Sc => self.sc.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub join_s: f64,
    #[serde(default)]
    pub signals: SignalSources,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Consent {
        channels: Vec<SignalChannel>,
        share: bool,
    },
    /// A whole stroke: BEGIN at the first point, one POINT per further
    /// point every `interval_ms`, then END.
    Stroke {
        board: String,
        points: Vec<Point>,
        #[serde(default = "default_interval")]
        interval_ms: i64,
    },
    /// A single raw board op, for fault scripts.
    BoardOp {
        kind: BoardOpKind,
        board: String,
        #[serde(default)]
        stroke_id: String,
        #[serde(default)]
        point: Option<Point>,
    },
    Clear {
        board: String,
    },
    Advance,
    Quiz {
        judgments: Vec<bool>,
    },
    Leave,
    Ping,
}

fn default_interval() -> i64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub t_s: f64,
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<LessonScript>,
    #[serde(default)]
    pub config: Config,
    pub roster: Vec<RosterEntry>,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
}

impl Scenario {
    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| serde_json::from_str(text).expect("bundled scenarios parse"))
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Load a scenario file, or a bundled scenario by name when no such
    /// file exists.
    pub fn load(path_or_name: &str) -> Result<Scenario, ScenarioError> {
        let path = Path::new(path_or_name);
        if !path.exists() {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(path_or_name);
            return Scenario::bundled(stem).ok_or_else(|| ScenarioError::Unknown(path_or_name.to_string()));
        }
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn sid(&self) -> &str {
        self.sid.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid(format!("duration_s {} must be positive", self.duration_s));
        }
        self.config.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if let Some(script) = &self.script {
            script.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        if self.roster.is_empty() {
            return invalid("empty roster".into());
        }
        for (i, a) in self.roster.iter().enumerate() {
            if self.roster[..i].iter().any(|b| b.name == a.name) {
                return invalid(format!("duplicate roster name {}", a.name));
            }
            if !(a.join_s.is_finite() && a.join_s >= 0.0) {
                return invalid(format!("{}: join_s must be non-negative", a.name));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for a in &self.actions {
            if !(a.t_s.is_finite() && a.t_s >= 0.0) {
                return invalid(format!("action time {} must be non-negative", a.t_s));
            }
            if a.t_s < last {
                return invalid(format!("actions not sorted by time at t={}", a.t_s));
            }
            last = a.t_s;
            if !self.roster.iter().any(|r| r.name == a.actor) {
                return invalid(format!("action by {} who is not in the roster", a.actor));
            }
            match &a.action {
                Action::Stroke { points, interval_ms, .. } if points.is_empty() || *interval_ms <= 0 => {
                    return invalid(format!("{}: a stroke needs points and a positive interval", a.actor));
                }
                Action::Consent { channels, .. } if channels.is_empty() => {
                    return invalid(format!("{}: consent action without channels", a.actor));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Resolve relative trace paths against `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        for entry in &mut self.roster {
            for src in [&mut entry.signals.bvp, &mut entry.signals.resp, &mut entry.signals.sc].into_iter().flatten() {
                if let Some(p) = &mut src.trace {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_validate() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        let dyad = Scenario::bundled("lesson_dyad").unwrap();
        assert_eq!(dyad.roster.iter().filter(|r| r.role == Role::Teacher).count(), 1);
        assert_eq!(dyad.roster.iter().filter(|r| r.role == Role::Student).count(), 1);
        let group = Scenario::bundled("lesson_group").unwrap();
        assert_eq!(group.roster.iter().filter(|r| r.role == Role::Student).count(), 3);
    }

    #[test]
    fn load_falls_back_to_bundled() {
        assert_eq!(Scenario::load("lesson_dyad").unwrap().name, "lesson_dyad");
        assert_eq!(Scenario::load("lesson_dyad.json").unwrap().name, "lesson_dyad");
        assert!(Scenario::load("/nonexistent/nothing.json").is_err());
    }

    #[test]
    fn rejects_unsorted_and_unknown_actor() {
        let base = r#"{"name":"x","duration_s":10,"roster":[{"name":"t","role":"TEACHER"}],"actions":ACTIONS}"#;
        let with = |a: &str| Scenario::from_json(&base.replace("ACTIONS", a));
        assert!(with(r#"[{"t_s":1,"actor":"t","action":"advance"}]"#).is_ok());
        assert!(matches!(
            with(r#"[{"t_s":2,"actor":"t","action":"advance"},{"t_s":1,"actor":"t","action":"advance"}]"#),
            Err(ScenarioError::Invalid(_))
        ));
        assert!(matches!(with(r#"[{"t_s":1,"actor":"ghost","action":"advance"}]"#), Err(ScenarioError::Invalid(_))));
        assert!(matches!(with(r#"[{"t_s":1,"actor":"t","action":"dance"}]"#), Err(ScenarioError::Parse(_))));
    }
}
