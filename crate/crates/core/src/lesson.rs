//! The structured lesson: an introduction, five kanji of increasing
//! difficulty, then a short quiz graded by the teacher. Pacing advice from
//! skin conductance activity is advisory only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UNITS: u8 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LessonError {
    #[error("only the teacher may do that")]
    NotTeacher,
    #[error("lesson already done")]
    AlreadyDone,
    #[error("expected {expected} quiz judgments, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid lesson script: {0}")]
    InvalidScript(String),
    #[error("invalid phase {0:?}")]
    InvalidPhase(String),
}

impl LessonError {
    pub fn code(&self) -> &'static str {
        match self {
            LessonError::NotTeacher => "not-teacher",
            LessonError::AlreadyDone => "already-done",
            LessonError::WrongArity { .. } => "wrong-arity",
            LessonError::InvalidParameter(_) => "invalid-parameter",
            LessonError::InvalidScript(_) => "invalid-script",
            LessonError::InvalidPhase(_) => "invalid-phase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Teacher,
    Student,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KanjiItem {
    pub label: String,
    pub difficulty: u32,
    pub strokes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonScript {
    pub kanji: Vec<KanjiItem>,
    #[serde(default)]
    pub intro_notes: String,
}

impl LessonScript {
    pub fn validate(&self) -> Result<(), LessonError> {
        if self.kanji.len() != UNITS as usize {
            return Err(LessonError::InvalidScript(format!(
                "need exactly {UNITS} kanji, got {}",
                self.kanji.len()
            )));
        }
        if !self.kanji.windows(2).all(|w| w[0].difficulty < w[1].difficulty) {
            return Err(LessonError::InvalidScript("difficulty must strictly increase".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, LessonError> {
        let script: LessonScript =
            serde_json::from_str(text).map_err(|e| LessonError::InvalidScript(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }
}

impl Default for LessonScript {
    /// One, person, mouth, tree, forest.
    fn default() -> Self {
        let item = |label: &str, difficulty, strokes| KanjiItem { label: label.into(), difficulty, strokes };
        LessonScript {
            kanji: vec![item("一", 1, 1), item("人", 2, 2), item("口", 3, 3), item("木", 4, 4), item("森", 5, 12)],
            intro_notes: "Basic strokes (horizontal, vertical, sweeps, dots) and the order in which they are drawn."
                .into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LessonPhase {
    Intro,
    Teach(u8),
    Quiz,
    Done,
}

impl LessonPhase {
    /// Successor in the fixed chain; `None` from `Done`.
    pub fn next(self) -> Option<LessonPhase> {
        match self {
            LessonPhase::Intro => Some(LessonPhase::Teach(1)),
            LessonPhase::Teach(k) if k < UNITS => Some(LessonPhase::Teach(k + 1)),
            LessonPhase::Teach(_) => Some(LessonPhase::Quiz),
            LessonPhase::Quiz => Some(LessonPhase::Done),
            LessonPhase::Done => None,
        }
    }

    /// The whole chain from the introduction to the end.
    pub fn chain() -> Vec<LessonPhase> {
        std::iter::successors(Some(LessonPhase::Intro), |p| p.next()).collect()
    }
}

impl fmt::Display for LessonPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LessonPhase::Intro => f.write_str("INTRO"),
            LessonPhase::Teach(k) => write!(f, "TEACH({k})"),
            LessonPhase::Quiz => f.write_str("QUIZ"),
            LessonPhase::Done => f.write_str("DONE"),
        }
    }
}

impl FromStr for LessonPhase {
    type Err = LessonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "INTRO" => Ok(LessonPhase::Intro),
            "QUIZ" => Ok(LessonPhase::Quiz),
            "DONE" => Ok(LessonPhase::Done),
            _ => s
                .strip_prefix("TEACH(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|k| k.parse::<u8>().ok())
                .filter(|k| (1..=UNITS).contains(k))
                .map(LessonPhase::Teach)
                .ok_or_else(|| LessonError::InvalidPhase(s.to_string())),
        }
    }
}

impl Serialize for LessonPhase {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LessonPhase {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn advance_phase(current: LessonPhase, actor: Role) -> Result<LessonPhase, LessonError> {
    if actor != Role::Teacher {
        return Err(LessonError::NotTeacher);
    }
    current.next().ok_or(LessonError::AlreadyDone)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pacing {
    Ok,
    Relax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacingAdvisory {
    pub advisory: Pacing,
    pub scr_rate: f64,
    pub threshold: f64,
}

/// `Relax` when phasic activity strictly exceeds the threshold.
pub fn pacing_advisory(scr_rate: f64, threshold: f64) -> Result<PacingAdvisory, LessonError> {
    if !(scr_rate.is_finite() && scr_rate >= 0.0) {
        return Err(LessonError::InvalidParameter(format!("scr_rate {scr_rate}")));
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(LessonError::InvalidParameter(format!("threshold {threshold}")));
    }
    let advisory = if scr_rate > threshold { Pacing::Relax } else { Pacing::Ok };
    Ok(PacingAdvisory { advisory, scr_rate, threshold })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizResult {
    pub judgments: Vec<bool>,
    pub correct: u32,
    pub total: u32,
}

impl QuizResult {
    pub fn score(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

pub fn score_quiz(judgments: &[bool]) -> Result<QuizResult, LessonError> {
    if judgments.len() != UNITS as usize {
        return Err(LessonError::WrongArity { expected: UNITS as usize, got: judgments.len() });
    }
    Ok(QuizResult {
        judgments: judgments.to_vec(),
        correct: judgments.iter().filter(|j| **j).count() as u32,
        total: UNITS as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_advances() {
        assert_eq!(advance_phase(LessonPhase::Intro, Role::Teacher).unwrap(), LessonPhase::Teach(1));
        assert_eq!(advance_phase(LessonPhase::Teach(5), Role::Teacher).unwrap(), LessonPhase::Quiz);
        assert_eq!(advance_phase(LessonPhase::Quiz, Role::Teacher).unwrap(), LessonPhase::Done);
        assert_eq!(advance_phase(LessonPhase::Done, Role::Teacher), Err(LessonError::AlreadyDone));
    }

    #[test]
    fn others_cannot_advance() {
        for phase in LessonPhase::chain() {
            assert_eq!(advance_phase(phase, Role::Student), Err(LessonError::NotTeacher));
            assert_eq!(advance_phase(phase, Role::Observer), Err(LessonError::NotTeacher));
        }
    }

    #[test]
    fn exhaustive_walk_never_skips_or_reverses() {
        let chain = LessonPhase::chain();
        assert_eq!(chain.len(), 8);
        // from every state, the only reachable successor is the next in the chain
        for (i, phase) in chain.iter().enumerate() {
            match advance_phase(*phase, Role::Teacher) {
                Ok(next) => assert_eq!(next, chain[i + 1]),
                Err(e) => {
                    assert_eq!(e, LessonError::AlreadyDone);
                    assert_eq!(i, chain.len() - 1);
                }
            }
        }
        let labels: Vec<String> = chain.iter().map(ToString::to_string).collect();
        assert_eq!(labels, ["INTRO", "TEACH(1)", "TEACH(2)", "TEACH(3)", "TEACH(4)", "TEACH(5)", "QUIZ", "DONE"]);
    }

    #[test]
    fn phase_text_round_trip() {
        for phase in LessonPhase::chain() {
            assert_eq!(phase.to_string().parse::<LessonPhase>().unwrap(), phase);
        }
        assert!("TEACH(6)".parse::<LessonPhase>().is_err());
        assert!("TEACH(0)".parse::<LessonPhase>().is_err());
        assert!("WRAPUP".parse::<LessonPhase>().is_err());
    }

    #[test]
    fn pacing_cases() {
        assert_eq!(pacing_advisory(0.0, 6.0).unwrap().advisory, Pacing::Ok);
        assert_eq!(pacing_advisory(10.0, 6.0).unwrap().advisory, Pacing::Relax);
        assert_eq!(pacing_advisory(6.0, 6.0).unwrap().advisory, Pacing::Ok);
        assert!(pacing_advisory(-1.0, 6.0).is_err());
        assert!(pacing_advisory(1.0, 0.0).is_err());
    }

    #[test]
    fn quiz_scores() {
        assert_eq!(score_quiz(&[true; 5]).unwrap().correct, 5);
        assert_eq!(score_quiz(&[false; 5]).unwrap().correct, 0);
        let r = score_quiz(&[true, false, true, false, true]).unwrap();
        assert_eq!((r.correct, r.total), (3, 5));
        assert!((r.score() - 0.6).abs() < 1e-12);
        assert_eq!(score_quiz(&[true; 4]), Err(LessonError::WrongArity { expected: 5, got: 4 }));
    }

    #[test]
    fn script_validation() {
        LessonScript::default().validate().unwrap();
        let json = r#"{"kanji":[{"label":"一","difficulty":1,"strokes":1},{"label":"二","difficulty":2,"strokes":2},
            {"label":"三","difficulty":3,"strokes":3},{"label":"四","difficulty":4,"strokes":5},{"label":"五","difficulty":5,"strokes":4}]}"#;
        let s = LessonScript::from_json(json).unwrap();
        assert_eq!(s.kanji[3].label, "四");
        let mut flat = LessonScript::default();
        flat.kanji[2].difficulty = 2;
        assert!(flat.validate().is_err());
        let mut short = LessonScript::default();
        short.kanji.pop();
        assert!(short.validate().is_err());
    }
}
