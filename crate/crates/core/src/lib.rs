//! Reciprocal physiological-signal sharing for remote kanji lessons.
//!
//! Participants stream BVP, respiration and skin conductance; each channel
//! reaches a peer only when both sides share it. Streams drive small
//! ambient displays, two shared whiteboards carry the lesson, and a
//! teacher-driven phase machine runs INTRO → TEACH(1..5) → QUIZ → DONE.
//!
//! Everything here is synchronous and deterministic. The async service
//! lives in `rapport-server`; [`harness`] runs whole lessons on a virtual
//! clock and audits the resulting traces.

pub mod canonical;
pub mod config;
pub mod display;
pub mod harness;
pub mod lesson;
pub mod mirror;
pub mod protocol;
pub mod reciprocity;
pub mod session;
pub mod signals;
pub mod trace;
pub mod whiteboard;

pub use config::Config;
pub use protocol::{Envelope, MessageType, SessionSnapshot};
pub use session::Session;
