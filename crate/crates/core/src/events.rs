//! Append-only event feed polled by the dashboard with a `since` cursor.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::device::{Effect, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SmsIn,
    SmsOut,
    Locked,
    Unlocked,
    Ringing,
    Wiped,
    GuestEntered,
    GuestExited,
    LocationQueried,
    BackupCreated,
    BackupRestored,
    SettingsChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: SimTime,
    pub kind: EventKind,
    pub detail: Value,
}

/// Event kind and payload for an applied effect. Exactly one per effect.
pub fn effect_event(effect: &Effect) -> (EventKind, Value) {
    match effect {
        Effect::LockDevice => (EventKind::Locked, json!({})),
        Effect::StartRinger { volume } => (EventKind::Ringing, json!({ "volume": volume })),
        Effect::SendSms { to, body } => (EventKind::SmsOut, json!({ "to": to, "body": body })),
        Effect::WipeData => (EventKind::Wiped, json!({})),
        Effect::PositionReport { app_id, lat, lon } => {
            (EventKind::LocationQueried, json!({ "app_id": app_id, "lat": lat, "lon": lon }))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn push(&mut self, timestamp: SimTime, kind: EventKind, detail: Value) -> u64 {
        let seq = self.last_seq() + 1;
        self.records.push(EventRecord { seq, timestamp, kind, detail });
        seq
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    /// Records with `seq > since`, oldest first.
    pub fn since(&self, since: u64) -> &[EventRecord] {
        let start = self.records.partition_point(|r| r.seq <= since);
        &self.records[start..]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_semantics() {
        let mut log = EventLog::default();
        assert!(log.since(0).is_empty());
        log.push(SimTime(1), EventKind::SmsIn, json!({}));
        log.push(SimTime(2), EventKind::Locked, json!({}));
        log.push(SimTime(2), EventKind::Ringing, json!({}));
        assert_eq!(log.since(0).len(), 3);
        assert_eq!(log.since(1)[0].seq, 2);
        assert!(log.since(3).is_empty());
        assert!(log.since(99).is_empty());
        assert!(log.since(0).windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn one_kind_per_effect() {
        assert_eq!(effect_event(&Effect::WipeData).0, EventKind::Wiped);
        assert_eq!(effect_event(&Effect::StartRinger { volume: 100 }).1, json!({"volume": 100}));
    }
}
