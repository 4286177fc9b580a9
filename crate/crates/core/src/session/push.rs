//! Dashboard push stream: epoch-numbered deltas with a bounded replay buffer.

use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use crate::alerts::{Alert, ClassSnapshot, StudentCard};
use crate::domain::{FeedbackMode, MessageId, StudentId};

pub const RING_CAPACITY: usize = 1024;

/// Every delta replaces a whole object, so applying one twice is harmless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PushEvent {
    Snapshot { snapshot: ClassSnapshot },
    Card { card: StudentCard },
    AlertRaised { alert: Alert },
    AlertHandled { alert: Alert },
    ModeBanner { mode: FeedbackMode, student_ids: Vec<StudentId> },
    RatingConfirmed { student_id: StudentId, message_id: MessageId, text: String },
}

impl PushEvent {
    pub fn name(&self) -> &'static str {
        match self {
            PushEvent::Snapshot { .. } => "snapshot",
            PushEvent::Card { .. } => "card",
            PushEvent::AlertRaised { .. } => "alert_raised",
            PushEvent::AlertHandled { .. } => "alert_handled",
            PushEvent::ModeBanner { .. } => "mode_banner",
            PushEvent::RatingConfirmed { .. } => "rating_confirmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushMessage {
    pub epoch: u64,
    #[serde(flatten)]
    pub event: PushEvent,
}

/// What a new subscriber receives before live messages.
pub struct Subscription {
    pub backlog: Vec<PushMessage>,
    pub receiver: Receiver<PushMessage>,
}

#[derive(Default)]
pub struct PushHub {
    epoch: u64,
    ring: VecDeque<PushMessage>,
    subscribers: Vec<Sender<PushMessage>>,
}

impl PushHub {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn publish(&mut self, event: PushEvent) -> u64 {
        self.epoch += 1;
        let msg = PushMessage { epoch: self.epoch, event };
        if self.ring.len() == RING_CAPACITY {
            self.ring.pop_front();
        }
        self.ring.push_back(msg.clone());
        self.subscribers.retain(|s| s.send(msg.clone()).is_ok());
        self.epoch
    }

    /// Messages after `last_seen`, when the buffer still covers them.
    pub fn since(&self, last_seen: u64) -> Option<Vec<PushMessage>> {
        if last_seen > self.epoch {
            return None;
        }
        let oldest = self.ring.front().map_or(self.epoch + 1, |m| m.epoch);
        if last_seen + 1 < oldest {
            return None;
        }
        Some(self.ring.iter().filter(|m| m.epoch > last_seen).cloned().collect())
    }

    /// `snapshot` is built lazily, only when the subscriber cannot resume.
    pub fn subscribe(&mut self, resume_from: Option<u64>, snapshot: impl FnOnce() -> ClassSnapshot) -> Subscription {
        let backlog = match resume_from.and_then(|e| self.since(e)) {
            Some(missed) => missed,
            None => vec![PushMessage { epoch: self.epoch, event: PushEvent::Snapshot { snapshot: snapshot() } }],
        };
        let (tx, rx) = channel();
        self.subscribers.push(tx);
        Subscription { backlog, receiver: rx }
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn banner() -> PushEvent {
        PushEvent::ModeBanner { mode: FeedbackMode::Silent, student_ids: vec![] }
    }

    fn empty() -> ClassSnapshot {
        crate::alerts::snapshot(&[], &crate::alerts::AlertBook::default())
    }

    #[test]
    fn resume_replays_missed_messages() {
        let mut hub = PushHub::default();
        for _ in 0..5 {
            hub.publish(banner());
        }
        let sub = hub.subscribe(Some(3), empty);
        assert_eq!(sub.backlog.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![4, 5]);
        hub.publish(banner());
        assert_eq!(sub.receiver.recv().unwrap().epoch, 6);
    }

    #[test]
    fn evicted_or_unknown_epochs_get_a_snapshot() {
        let mut hub = PushHub::default();
        for _ in 0..RING_CAPACITY + 10 {
            hub.publish(banner());
        }
        let sub = hub.subscribe(Some(2), empty);
        assert_eq!(sub.backlog.len(), 1);
        assert_eq!(sub.backlog[0].event.name(), "snapshot");
        assert_eq!(sub.backlog[0].epoch, hub.epoch());
        assert!(hub.since(hub.epoch() + 1).is_none());
        assert_eq!(hub.since(hub.epoch()).unwrap().len(), 0);
        let fresh = hub.subscribe(None, empty);
        assert_eq!(fresh.backlog[0].event.name(), "snapshot");
    }

    #[test]
    fn dropped_subscribers_are_pruned() {
        let mut hub = PushHub::default();
        drop(hub.subscribe(None, empty));
        hub.publish(banner());
        assert_eq!(hub.subscriber_count(), 0);
    }

    #[test]
    fn wire_form_is_flat() {
        let v = serde_json::to_value(PushMessage { epoch: 3, event: banner() }).unwrap();
        assert_eq!(v["type"], "mode_banner");
        assert_eq!(v["epoch"], 3);
        assert_eq!(v["mode"], "silent");
    }
}
