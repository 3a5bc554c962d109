//! Simulated handset: app registry, data stores, position source, SMS queues,
//! lock and ringer.
//!
//! The device never performs side effects on its own. Feature modules return
//! [`Effect`] values and the engine applies them here, which keeps every
//! feature testable as a pure state transition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest SMS body accepted (concatenated-SMS ceiling).
pub const MAX_SMS_CHARS: usize = 1600;

/// Simulated time in whole seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn plus_minutes(self, minutes: u64) -> SimTime {
        SimTime(self.0.saturating_add(minutes.saturating_mul(60)))
    }

    /// ISO-8601 UTC rendering, e.g. `2026-01-02T03:04:05Z`.
    pub fn to_iso8601(self) -> String {
        let secs = i64::try_from(self.0).unwrap_or(i64::MAX);
        match DateTime::<Utc>::from_timestamp(secs, 0) {
            Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            None => format!("@{}", self.0),
        }
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Contacts,
    CallHistory,
    SmsHistory,
    Emails,
    Photos,
    BrowserHistory,
}

impl StoreKind {
    pub const ALL: [StoreKind; 6] = [
        StoreKind::Contacts,
        StoreKind::CallHistory,
        StoreKind::SmsHistory,
        StoreKind::Emails,
        StoreKind::Photos,
        StoreKind::BrowserHistory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StoreKind::Contacts => "contacts",
            StoreKind::CallHistory => "call_history",
            StoreKind::SmsHistory => "sms_history",
            StoreKind::Emails => "emails",
            StoreKind::Photos => "photos",
            StoreKind::BrowserHistory => "browser_history",
        }
    }
}

impl fmt::Display for StoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StoreKind {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StoreKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DeviceError::UnknownStore(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    #[serde(rename = "wifi")]
    WiFi,
    CellularData,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 2] = [ResourceKind::WiFi, ResourceKind::CellularData];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_id: String,
    pub display_name: String,
    /// Settings, the dashboard itself and similar apps a guest must never see.
    #[serde(default)]
    pub system_flag: bool,
}

/// One entry of a data store. Keys are kept sorted so serialization is canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Record(pub BTreeMap<String, String>);

impl Record {
    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Record(pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: SimTime,
}

impl GeoFix {
    /// Validates ranges and folds `lon = 180` onto `-180`.
    pub fn new(lat: f64, lon: f64, timestamp: SimTime) -> Result<Self, DeviceError> {
        let (lat, lon) = validate_coordinate(lat, lon)?;
        Ok(GeoFix { lat, lon, timestamp })
    }
}

/// Checks `lat ∈ [-90, 90]`, `lon ∈ [-180, 180]` and normalizes lon into `[-180, 180)`.
pub fn validate_coordinate(lat: f64, lon: f64) -> Result<(f64, f64), DeviceError> {
    if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(DeviceError::LatitudeOutOfRange(lat));
    }
    if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
        return Err(DeviceError::LongitudeOutOfRange(lon));
    }
    let lon = if lon == 180.0 { -180.0 } else { lon };
    Ok((lat, lon))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsMessage {
    pub sender: String,
    pub body: String,
    pub received_at: SimTime,
}

impl SmsMessage {
    pub fn new(sender: impl Into<String>, body: impl Into<String>, received_at: SimTime) -> Result<Self, DeviceError> {
        let body = body.into();
        let chars = body.chars().count();
        if chars > MAX_SMS_CHARS {
            return Err(DeviceError::SmsTooLong(chars));
        }
        Ok(SmsMessage { sender: sender.into(), body, received_at })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockState {
    #[default]
    Unlocked,
    Locked,
    Wiped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingerState {
    pub volume: u8,
    pub ringing: bool,
}

impl Default for RingerState {
    fn default() -> Self {
        RingerState { volume: 50, ringing: false }
    }
}

/// Declarative output of an engine operation, applied to the device by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    LockDevice,
    StartRinger { volume: u8 },
    SendSms { to: String, body: String },
    WipeData,
    PositionReport { app_id: String, lat: Option<f64>, lon: Option<f64> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("device config is malformed at {path} (line {line}, column {column}): {message}")]
    MalformedConfig { path: String, line: usize, column: usize, message: String },
    #[error("duplicate app_id `{0}` in device config")]
    DuplicateApp(String),
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("SMS body has {0} characters, limit is {MAX_SMS_CHARS}")]
    SmsTooLong(usize),
    #[error("unknown store kind `{0}`")]
    UnknownStore(String),
    #[error("track line {line}: {message}")]
    Track { line: usize, message: String },
}

/// Device configuration document (JSON).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    #[serde(default)]
    pub apps: Vec<AppRecord>,
    #[serde(default)]
    pub stores: BTreeMap<StoreKind, Vec<Record>>,
    #[serde(default)]
    pub resources: BTreeMap<ResourceKind, bool>,
    #[serde(default)]
    pub position: Option<GeoFix>,
    #[serde(default)]
    pub clock: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub apps: Vec<AppRecord>,
    pub stores: BTreeMap<StoreKind, Vec<Record>>,
    pub position: Option<GeoFix>,
    pub lock: LockState,
    pub ringer: RingerState,
    pub inbound_sms: Vec<SmsMessage>,
    pub outbound_sms: Vec<SmsMessage>,
    pub resources: BTreeMap<ResourceKind, bool>,
    pub clock: SimTime,
    /// Number of times the position source has been read for app queries.
    pub position_reads: u64,
}

/// Parses a device config document and builds the initial device.
pub fn load_device(json: &str) -> Result<DeviceState, DeviceError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let config: DeviceConfig = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        DeviceError::MalformedConfig {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    DeviceState::from_config(config)
}

impl DeviceState {
    pub fn from_config(config: DeviceConfig) -> Result<Self, DeviceError> {
        let mut seen = BTreeSet::new();
        for app in &config.apps {
            if !seen.insert(app.app_id.as_str()) {
                return Err(DeviceError::DuplicateApp(app.app_id.clone()));
            }
        }
        let position = match config.position {
            Some(fix) => Some(GeoFix::new(fix.lat, fix.lon, fix.timestamp)?),
            None => None,
        };
        let mut stores = config.stores;
        for kind in StoreKind::ALL {
            stores.entry(kind).or_default();
        }
        let mut resources = config.resources;
        for kind in ResourceKind::ALL {
            resources.entry(kind).or_insert(true);
        }
        let clock = position.map_or(config.clock, |p| config.clock.max(p.timestamp));
        Ok(DeviceState {
            apps: config.apps,
            stores,
            position,
            lock: LockState::Unlocked,
            ringer: RingerState::default(),
            inbound_sms: Vec::new(),
            outbound_sms: Vec::new(),
            resources,
            clock,
            position_reads: 0,
        })
    }

    pub fn app(&self, app_id: &str) -> Option<&AppRecord> {
        self.apps.iter().find(|a| a.app_id == app_id)
    }

    pub fn is_system_app(&self, app_id: &str) -> bool {
        self.app(app_id).is_some_and(|a| a.system_flag)
    }

    pub fn store(&self, kind: StoreKind) -> &[Record] {
        self.stores.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn store_mut(&mut self, kind: StoreKind) -> &mut Vec<Record> {
        self.stores.entry(kind).or_default()
    }

    /// Moves the clock forward; earlier times are ignored.
    pub fn advance_clock(&mut self, to: SimTime) {
        self.clock = self.clock.max(to);
    }

    pub fn set_position(&mut self, fix: GeoFix) -> Result<GeoFix, DeviceError> {
        let fix = GeoFix::new(fix.lat, fix.lon, fix.timestamp)?;
        self.position = Some(fix);
        self.advance_clock(fix.timestamp);
        Ok(fix)
    }

    /// Reads the position source on behalf of an app query.
    pub fn read_position(&mut self) -> Option<GeoFix> {
        self.position_reads += 1;
        self.position
    }

    pub fn push_inbound(&mut self, msg: SmsMessage) {
        self.advance_clock(msg.received_at);
        self.inbound_sms.push(msg);
    }

    pub fn apply_effect(&mut self, effect: &Effect) {
        match effect {
            Effect::LockDevice => {
                if self.lock != LockState::Wiped {
                    self.lock = LockState::Locked;
                }
            }
            Effect::StartRinger { volume } => {
                self.ringer = RingerState { volume: *volume, ringing: true };
            }
            Effect::SendSms { to, body } => {
                self.outbound_sms.push(SmsMessage {
                    sender: to.clone(),
                    body: body.clone(),
                    received_at: self.clock,
                });
            }
            Effect::WipeData => {
                for records in self.stores.values_mut() {
                    records.clear();
                }
                self.lock = LockState::Wiped;
                self.ringer.ringing = false;
            }
            Effect::PositionReport { .. } => {}
        }
    }

    /// Clears the lock screen and silences the ringer.
    pub fn unlock(&mut self) {
        if self.lock == LockState::Locked {
            self.lock = LockState::Unlocked;
            self.ringer.ringing = false;
        }
    }
}

/// Parses a GPS replay track: one `timestamp lat lon` triple per line.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_track(text: &str) -> Result<Vec<GeoFix>, DeviceError> {
    let mut fixes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let err = |message: String| DeviceError::Track { line: lineno, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [ts, lat, lon] = fields.as_slice() else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let ts: u64 = ts.parse().map_err(|_| err(format!("bad timestamp `{ts}`")))?;
        let lat: f64 = lat.parse().map_err(|_| err(format!("bad latitude `{lat}`")))?;
        let lon: f64 = lon.parse().map_err(|_| err(format!("bad longitude `{lon}`")))?;
        let fix = GeoFix::new(lat, lon, SimTime(ts)).map_err(|e| err(e.to_string()))?;
        if let Some(prev) = fixes.last().map(|f: &GeoFix| f.timestamp) {
            if fix.timestamp < prev {
                return Err(err("timestamps must be nondecreasing".into()));
            }
        }
        fixes.push(fix);
    }
    Ok(fixes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_APPS: &str = r#"{
        "apps": [
            {"app_id": "camera", "display_name": "Camera"},
            {"app_id": "maps", "display_name": "Maps"},
            {"app_id": "settings", "display_name": "Settings", "system_flag": true}
        ]
    }"#;

    #[test]
    fn loads_three_apps_with_empty_stores() {
        let dev = load_device(THREE_APPS).unwrap();
        assert_eq!(dev.apps.len(), 3);
        assert_eq!(dev.stores.len(), 6);
        assert!(StoreKind::ALL.iter().all(|k| dev.store(*k).is_empty()));
        assert_eq!(dev.lock, LockState::Unlocked);
        assert!(dev.inbound_sms.is_empty() && dev.outbound_sms.is_empty());
    }

    #[test]
    fn settings_flagged_system() {
        let dev = load_device(THREE_APPS).unwrap();
        assert!(dev.is_system_app("settings"));
        assert!(!dev.is_system_app("camera"));
    }

    #[test]
    fn duplicate_app_rejected_by_name() {
        let cfg = r#"{"apps": [
            {"app_id": "maps", "display_name": "Maps"},
            {"app_id": "maps", "display_name": "Other"}
        ]}"#;
        assert_eq!(load_device(cfg).unwrap_err(), DeviceError::DuplicateApp("maps".into()));
    }

    #[test]
    fn malformed_config_reports_location() {
        let cfg = "{\"apps\": [\n {\"app_id\": 7, \"display_name\": \"x\"}]}";
        match load_device(cfg).unwrap_err() {
            DeviceError::MalformedConfig { path, line, .. } => {
                assert_eq!(path, "apps[0].app_id");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_device("{not json"), Err(DeviceError::MalformedConfig { .. })));
    }

    #[test]
    fn set_position_cases() {
        let mut dev = load_device("{}").unwrap();
        let fix = dev.set_position(GeoFix { lat: 52.52, lon: 13.405, timestamp: SimTime(10) }).unwrap();
        assert_eq!((fix.lat, fix.lon), (52.52, 13.405));
        assert_eq!(dev.clock, SimTime(10));

        let wrapped = dev.set_position(GeoFix { lat: 0.0, lon: 180.0, timestamp: SimTime(11) }).unwrap();
        assert_eq!(wrapped.lon, -180.0);

        let err = dev.set_position(GeoFix { lat: 91.0, lon: 0.0, timestamp: SimTime(12) });
        assert_eq!(err.unwrap_err(), DeviceError::LatitudeOutOfRange(91.0));
        assert_eq!(dev.position.unwrap().timestamp, SimTime(11));
    }

    #[test]
    fn clock_never_goes_back() {
        let mut dev = load_device("{}").unwrap();
        dev.advance_clock(SimTime(100));
        dev.set_position(GeoFix { lat: 1.0, lon: 1.0, timestamp: SimTime(50) }).unwrap();
        assert_eq!(dev.clock, SimTime(100));
    }

    #[test]
    fn sms_body_ceiling() {
        assert!(SmsMessage::new("+1", "x".repeat(1600), SimTime(0)).is_ok());
        assert_eq!(
            SmsMessage::new("+1", "x".repeat(1601), SimTime(0)).unwrap_err(),
            DeviceError::SmsTooLong(1601)
        );
    }

    #[test]
    fn wipe_effect_empties_everything() {
        let cfg = r#"{"stores": {"contacts": [{"name": "Ana"}], "photos": [{"file": "a.jpg"}]}}"#;
        let mut dev = load_device(cfg).unwrap();
        dev.apply_effect(&Effect::WipeData);
        assert!(StoreKind::ALL.iter().all(|k| dev.store(*k).is_empty()));
        assert_eq!(dev.lock, LockState::Wiped);
        dev.apply_effect(&Effect::LockDevice);
        assert_eq!(dev.lock, LockState::Wiped);
    }

    #[test]
    fn track_parsing() {
        let fixes = parse_track("# berlin walk\n0 52.52 13.405\n\n60 52.521 13.406\n").unwrap();
        assert_eq!(fixes.len(), 2);
        assert_eq!(fixes[1].timestamp, SimTime(60));
        let err = parse_track("0 52.5 13.4\n10 95 0\n").unwrap_err();
        assert!(matches!(err, DeviceError::Track { line: 2, .. }));
        assert!(parse_track("5 1 1\n4 1 1").is_err());
    }

    #[test]
    fn iso_rendering() {
        assert_eq!(SimTime(0).to_iso8601(), "1970-01-01T00:00:00Z");
        assert_eq!(SimTime(1_700_000_000).to_iso8601(), "2023-11-14T22:13:20Z");
    }
}
