//! Per-connection outbound queue with a fixed capacity.
//!
//! Signal frames are disposable: when the queue is full the oldest queued
//! frame of the same participant and channel makes room, then the oldest
//! frame of any stream. Everything else must be delivered in order, so if
//! no frame can be evicted for it the queue closes and the connection is
//! dropped instead.

use std::collections::VecDeque;
use std::sync::Mutex;

use rapport_core::protocol::{Envelope, MessageType};
use tokio::sync::Notify;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Push {
    Queued,
    /// Queued after evicting an older frame.
    Evicted,
    /// The queue was full of non-frames; the incoming frame was discarded.
    Discarded,
    /// The queue is (now) closed and the envelope was not queued.
    Closed,
}

#[derive(Debug)]
struct Queue {
    items: VecDeque<Envelope>,
    closed: bool,
    dropped: u64,
}

#[derive(Debug)]
pub struct Outbox {
    capacity: usize,
    queue: Mutex<Queue>,
    ready: Notify,
    shut: Notify,
}

fn stream_of(env: &Envelope) -> Option<(&str, &str)> {
    (env.kind == MessageType::SignalFrame).then(|| (env.from.as_str(), env.payload["ch"].as_str().unwrap_or_default()))
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "outbound queue needs room for one message");
        Outbox {
            capacity,
            queue: Mutex::new(Queue { items: VecDeque::new(), closed: false, dropped: 0 }),
            ready: Notify::new(),
            shut: Notify::new(),
        }
    }

    pub fn push(&self, env: Envelope) -> Push {
        let mut q = self.queue.lock().expect("outbox lock");
        if q.closed {
            return Push::Closed;
        }
        let mut outcome = Push::Queued;
        if q.items.len() >= self.capacity {
            let victim = stream_of(&env)
                .and_then(|s| q.items.iter().position(|e| stream_of(e) == Some(s)))
                .or_else(|| q.items.iter().position(|e| e.kind == MessageType::SignalFrame));
            match victim {
                Some(i) => {
                    q.items.remove(i);
                    q.dropped += 1;
                    outcome = Push::Evicted;
                }
                None if env.kind == MessageType::SignalFrame => {
                    q.dropped += 1;
                    return Push::Discarded;
                }
                None => {
                    q.items.clear();
                    drop(q);
                    self.close();
                    return Push::Closed;
                }
            }
        }
        q.items.push_back(env);
        drop(q);
        self.ready.notify_one();
        outcome
    }

    /// Next envelope to write, or `None` once the queue is closed.
    pub async fn next(&self) -> Option<Envelope> {
        loop {
            {
                let mut q = self.queue.lock().expect("outbox lock");
                if q.closed {
                    return None;
                }
                if let Some(env) = q.items.pop_front() {
                    return Some(env);
                }
            }
            self.ready.notified().await;
        }
    }

    pub fn close(&self) {
        self.queue.lock().expect("outbox lock").closed = true;
        self.ready.notify_one();
        self.shut.notify_waiters();
    }

    /// Resolves once the queue is closed.
    pub async fn closed(&self) {
        loop {
            let notified = self.shut.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.is_closed() {
                return;
            }
            notified.await;
        }
    }

    pub fn is_closed(&self) -> bool {
        self.queue.lock().expect("outbox lock").closed
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("outbox lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames dropped so far to make room.
    pub fn dropped(&self) -> u64 {
        self.queue.lock().expect("outbox lock").dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn frame(from: &str, ch: &str, seq: u64) -> Envelope {
        Envelope::new(MessageType::SignalFrame, "s", from, json!({"ch": ch, "seq": seq, "t_ms": seq, "v": 0.0}))
    }

    fn sequenced(seq: u64) -> Envelope {
        let mut env = Envelope::new(MessageType::LessonState, "s", "p1", json!({"phase": "TEACH(1)"}));
        env.seq = Some(seq);
        env
    }

    fn drain(o: &Outbox) -> Vec<Envelope> {
        let mut q = o.queue.lock().unwrap();
        q.items.drain(..).collect()
    }

    #[test]
    fn overflow_evicts_oldest_frame_of_the_same_stream() {
        let o = Outbox::new(3);
        o.push(frame("p1", "BVP", 1));
        o.push(frame("p2", "BVP", 1));
        o.push(frame("p1", "BVP", 2));
        assert_eq!(o.push(frame("p1", "BVP", 3)), Push::Evicted);
        let left: Vec<(String, u64)> = drain(&o).iter().map(|e| (e.from.clone(), e.payload["seq"].as_u64().unwrap())).collect();
        assert_eq!(left, [("p2".into(), 1), ("p1".into(), 2), ("p1".into(), 3)]);
        assert_eq!(o.dropped(), 1);
    }

    #[test]
    fn other_streams_give_way_when_the_same_stream_has_nothing_queued() {
        let o = Outbox::new(2);
        o.push(frame("p2", "SC", 1));
        o.push(sequenced(1));
        assert_eq!(o.push(frame("p1", "RESP", 1)), Push::Evicted);
        let kinds: Vec<MessageType> = drain(&o).iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [MessageType::LessonState, MessageType::SignalFrame]);
    }

    #[test]
    fn sequenced_messages_displace_frames_never_each_other() {
        let o = Outbox::new(2);
        o.push(sequenced(1));
        o.push(frame("p1", "BVP", 1));
        assert_eq!(o.push(sequenced(2)), Push::Evicted);
        assert_eq!(o.push(frame("p1", "BVP", 2)), Push::Discarded);
        assert!(!o.is_closed());
        assert_eq!(o.push(sequenced(3)), Push::Closed);
        assert!(o.is_closed());
        assert_eq!(o.push(sequenced(4)), Push::Closed);
    }

    #[tokio::test]
    async fn next_waits_for_a_push() {
        let o = std::sync::Arc::new(Outbox::new(4));
        let reader = {
            let o = o.clone();
            tokio::spawn(async move { o.next().await })
        };
        tokio::task::yield_now().await;
        o.push(sequenced(1));
        assert_eq!(reader.await.unwrap().unwrap().seq, Some(1));
        o.close();
        assert!(o.next().await.is_none());
    }
}
