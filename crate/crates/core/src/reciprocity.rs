//! Reciprocal consent: a participant's vital signs reach another
//! participant only while both share that channel. Own signals are always
//! visible to oneself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{SignalChannel, SignalFrame};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsentError {
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
}

impl ConsentError {
    pub fn code(&self) -> &'static str {
        "unknown-participant"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeliveryReason {
    #[serde(rename = "SELF")]
    SelfView,
    Mutual,
    SenderNotSharing,
    ReceiverNotSharing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryDecision {
    pub allowed: bool,
    pub reason: DeliveryReason,
}

impl DeliveryDecision {
    fn new(reason: DeliveryReason) -> Self {
        let allowed = matches!(reason, DeliveryReason::SelfView | DeliveryReason::Mutual);
        DeliveryDecision { allowed, reason }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentFlag {
    pub participant: String,
    pub channel: SignalChannel,
    pub share: bool,
}

/// Per-participant, per-channel sharing flags. Unknown pairs read as not
/// sharing. `version` increases on every mutation, including writes that
/// leave a flag unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsentState {
    members: BTreeSet<String>,
    flags: BTreeMap<(String, SignalChannel), bool>,
    version: u64,
}

impl ConsentState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn add_member(&mut self, participant: &str) {
        self.members.insert(participant.to_string());
    }

    pub fn is_member(&self, participant: &str) -> bool {
        self.members.contains(participant)
    }

    /// Drop a departing member together with all of their flags.
    pub fn remove_member(&mut self, participant: &str) {
        if self.members.remove(participant) {
            self.flags.retain(|(p, _), _| p != participant);
            self.version += 1;
        }
    }

    pub fn set_consent(&mut self, participant: &str, channel: SignalChannel, share: bool) -> Result<u64, ConsentError> {
        if !self.members.contains(participant) {
            return Err(ConsentError::UnknownParticipant(participant.to_string()));
        }
        self.flags.insert((participant.to_string(), channel), share);
        self.version += 1;
        Ok(self.version)
    }

    pub fn is_sharing(&self, participant: &str, channel: SignalChannel) -> bool {
        self.flags.get(&(participant.to_string(), channel)).copied().unwrap_or(false)
    }

    pub fn may_deliver(&self, sender: &str, receiver: &str, channel: SignalChannel) -> DeliveryDecision {
        if sender == receiver {
            return DeliveryDecision::new(DeliveryReason::SelfView);
        }
        if !self.is_sharing(sender, channel) {
            return DeliveryDecision::new(DeliveryReason::SenderNotSharing);
        }
        if !self.is_sharing(receiver, channel) {
            return DeliveryDecision::new(DeliveryReason::ReceiverNotSharing);
        }
        DeliveryDecision::new(DeliveryReason::Mutual)
    }

    /// Recipients, in input order, allowed to receive `frame`.
    pub fn filter_frame<'a, I>(&self, frame: &SignalFrame, recipients: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        recipients
            .into_iter()
            .filter(|r| self.may_deliver(&frame.participant, r, frame.channel).allowed)
            .map(str::to_string)
            .collect()
    }

    /// Flags that are explicitly set, in sorted order.
    pub fn flags(&self) -> Vec<ConsentFlag> {
        self.flags
            .iter()
            .map(|((p, ch), share)| ConsentFlag { participant: p.clone(), channel: *ch, share: *share })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ConsentWire {
    version: u64,
    members: Vec<String>,
    flags: Vec<ConsentFlag>,
}

impl Serialize for ConsentState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ConsentWire { version: self.version, members: self.members.iter().cloned().collect(), flags: self.flags() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConsentState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = ConsentWire::deserialize(deserializer)?;
        Ok(ConsentState {
            members: wire.members.into_iter().collect(),
            flags: wire.flags.into_iter().map(|f| ((f.participant, f.channel), f.share)).collect(),
            version: wire.version,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair() -> ConsentState {
        let mut s = ConsentState::new();
        s.add_member("A");
        s.add_member("B");
        s
    }

    fn frame(from: &str, ch: SignalChannel) -> SignalFrame {
        SignalFrame { participant: from.into(), channel: ch, seq: 1, t_ms: 0, value: 1.0 }
    }

    #[test]
    fn single_write() {
        let mut s = pair();
        assert_eq!(s.set_consent("A", SignalChannel::Sc, true).unwrap(), 1);
        assert!(s.is_sharing("A", SignalChannel::Sc));
        assert!(!s.is_sharing("A", SignalChannel::Bvp));
        assert_eq!(s.version(), 1);
    }

    #[test]
    fn repeated_write_bumps_version() {
        let mut s = pair();
        s.set_consent("A", SignalChannel::Sc, true).unwrap();
        let flags = s.flags();
        s.set_consent("A", SignalChannel::Sc, true).unwrap();
        assert_eq!(s.version(), 2);
        assert_eq!(s.flags(), flags);
    }

    #[test]
    fn unknown_participant() {
        let mut s = pair();
        assert_eq!(
            s.set_consent("X", SignalChannel::Sc, true),
            Err(ConsentError::UnknownParticipant("X".into()))
        );
        assert_eq!(s.version(), 0);
    }

    #[test]
    fn mutual_sharing_delivers() {
        let mut s = pair();
        s.set_consent("A", SignalChannel::Sc, true).unwrap();
        s.set_consent("B", SignalChannel::Sc, true).unwrap();
        assert_eq!(
            s.may_deliver("A", "B", SignalChannel::Sc),
            DeliveryDecision { allowed: true, reason: DeliveryReason::Mutual }
        );
    }

    #[test]
    fn one_sided_sharing_blocks_both_directions() {
        let mut s = pair();
        s.set_consent("A", SignalChannel::Sc, true).unwrap();
        assert_eq!(
            s.may_deliver("A", "B", SignalChannel::Sc),
            DeliveryDecision { allowed: false, reason: DeliveryReason::ReceiverNotSharing }
        );
        assert_eq!(
            s.may_deliver("B", "A", SignalChannel::Sc),
            DeliveryDecision { allowed: false, reason: DeliveryReason::SenderNotSharing }
        );
    }

    #[test]
    fn self_always_allowed() {
        let s = pair();
        for ch in SignalChannel::ALL {
            assert_eq!(
                s.may_deliver("A", "A", ch),
                DeliveryDecision { allowed: true, reason: DeliveryReason::SelfView }
            );
        }
    }

    #[test]
    fn filter_frame_cases() {
        let mut s = pair();
        s.add_member("C");
        for p in ["A", "B", "C"] {
            s.set_consent(p, SignalChannel::Bvp, true).unwrap();
        }
        assert_eq!(s.filter_frame(&frame("A", SignalChannel::Bvp), ["A", "B", "C"]), vec!["A", "B", "C"]);
        assert_eq!(s.filter_frame(&frame("A", SignalChannel::Sc), ["A", "B", "C"]), vec!["A"]);
        assert!(s.filter_frame(&frame("A", SignalChannel::Bvp), []).is_empty());
    }

    #[test]
    fn removing_member_revokes() {
        let mut s = pair();
        s.set_consent("A", SignalChannel::Sc, true).unwrap();
        s.set_consent("B", SignalChannel::Sc, true).unwrap();
        s.remove_member("B");
        assert_eq!(s.version(), 3);
        assert!(!s.may_deliver("A", "B", SignalChannel::Sc).allowed);
        assert!(s.flags().iter().all(|f| f.participant == "A"));
    }

    #[test]
    fn serde_round_trip() {
        let mut s = pair();
        s.set_consent("B", SignalChannel::Resp, true).unwrap();
        let text = crate::canonical::to_string(&s).unwrap();
        assert_eq!(
            text,
            r#"{"flags":[{"channel":"RESP","participant":"B","share":true}],"members":["A","B"],"version":1}"#
        );
        let back: ConsentState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn allowed_is_symmetric(bits in prop::collection::vec(any::<bool>(), 9)) {
            let names = ["A", "B", "C"];
            let mut s = ConsentState::new();
            for n in names { s.add_member(n); }
            for (i, share) in bits.iter().enumerate() {
                s.set_consent(names[i / 3], SignalChannel::ALL[i % 3], *share).unwrap();
            }
            for a in names { for b in names { for ch in SignalChannel::ALL {
                if a != b {
                    prop_assert_eq!(s.may_deliver(a, b, ch).allowed, s.may_deliver(b, a, ch).allowed);
                }
            }}}
        }
    }
}
