//! The dashboard engine: one owner of the simulated device, the settings
//! document, the guest session and the event feed.
//!
//! All mutations take `&mut self`; callers that share an engine between
//! threads serialize access (the service wraps it in a mutex), which gives the
//! single ordered command stream every feature relies on.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backup::{
    self, list_destinations, open_destination, BackupArchive, BackupDestination, BackupError, BackupManifest,
    BackupReceipt, BlobHub, BlobStore,
};
use crate::device::{
    AppRecord, DeviceError, DeviceState, Effect, GeoFix, LockState, Record, ResourceKind, RingerState, SimTime,
    SmsMessage, StoreKind,
};
use crate::events::{effect_event, EventKind, EventLog, EventRecord};
use crate::geopriv::{self, GeoError, LocationSettings, Place, ReportedLocation};
use crate::guest::{self, GuestError, GuestProfile, GuestSession, VisibleState};
use crate::rpp::{self, InboundOutcome, PassphraseDigest, PassphraseError, Phase, Verb};
use crate::settings::{self, SettingsDocument, SettingsError};
use crate::tour::{Tour, TourError, TourPanel};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Passphrase(#[from] PassphraseError),
    #[error(transparent)]
    Guest(#[from] GuestError),
    #[error(transparent)]
    Backup(#[from] BackupError),
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error(transparent)]
    Tour(#[from] TourError),
    #[error("owner authentication failed")]
    AuthFailed,
    #[error("not allowed while a guest session is active")]
    GuestSessionActive,
    #[error("no position fix available")]
    NoFix,
    #[error("remote protection is not set up")]
    ProtectionNotSetUp,
    #[error("the default backup server cannot be removed")]
    DefaultDestination,
    #[error("{0} not found")]
    NotFound(String),
}

/// Coarse classification used to pick an HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Auth,
    Conflict,
    NotFound,
    Dependency,
}

impl EngineError {
    pub fn class(&self) -> ErrorClass {
        use EngineError as E;
        match self {
            E::AuthFailed | E::Passphrase(PassphraseError::CurrentMismatch) => ErrorClass::Auth,
            E::GuestSessionActive
            | E::ProtectionNotSetUp
            | E::DefaultDestination
            | E::NoFix
            | E::Passphrase(PassphraseError::Wiped)
            | E::Guest(
                GuestError::SessionActive
                | GuestError::NoSession
                | GuestError::DuplicateProfile(_)
                | GuestError::ProfileInUse(_),
            ) => ErrorClass::Conflict,
            E::NotFound(_) | E::Guest(GuestError::UnknownProfile(_)) | E::Tour(TourError::UnknownTopic(_)) => {
                ErrorClass::NotFound
            }
            E::Backup(BackupError::Unreachable(_) | BackupError::Write { .. } | BackupError::Read { .. }) => {
                ErrorClass::Dependency
            }
            _ => ErrorClass::Validation,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use EngineError as E;
        match self {
            E::Device(_) => "invalid_device_input",
            E::Geo(GeoError::GridOutOfRange(_)) => "grid_out_of_range",
            E::Geo(_) => "invalid_coordinate",
            E::Passphrase(PassphraseError::SameAsCurrent) => "passphrase_repeated",
            E::Passphrase(PassphraseError::CurrentMismatch) => "auth_failed",
            E::Passphrase(PassphraseError::Wiped) => "device_wiped",
            E::Passphrase(_) => "invalid_passphrase",
            E::Guest(GuestError::DuplicateProfile(_)) => "duplicate_profile",
            E::Guest(GuestError::UnknownProfile(_)) => "unknown_profile",
            E::Guest(GuestError::SessionActive) => "guest_session_active",
            E::Guest(GuestError::NoSession) => "no_guest_session",
            E::Guest(GuestError::ProfileInUse(_)) => "profile_in_use",
            E::Guest(GuestError::EmptyProfileId) => "invalid_profile",
            E::Backup(BackupError::ChecksumMismatch) => "checksum_mismatch",
            E::Backup(BackupError::UnsupportedVersion(_)) => "unsupported_version",
            E::Backup(BackupError::Unreachable(_)) => "destination_unreachable",
            E::Backup(BackupError::EmptySelection) => "empty_selection",
            E::Backup(_) => "backup_failed",
            E::Settings(SettingsError::ChecksumMismatch) => "checksum_mismatch",
            E::Settings(SettingsError::VersionMismatch { .. }) => "unsupported_version",
            E::Settings(_) => "malformed_settings",
            E::Tour(TourError::UnknownTopic(_)) => "unknown_topic",
            E::Tour(_) => "invalid_tour",
            E::AuthFailed => "auth_failed",
            E::GuestSessionActive => "guest_session_active",
            E::NoFix => "no_fix",
            E::ProtectionNotSetUp => "protection_not_set_up",
            E::DefaultDestination => "default_destination",
            E::NotFound(_) => "not_found",
        }
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmsDelivery {
    pub outcome: InboundOutcome,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RppView {
    pub phase: Phase,
    pub passphrase_set: bool,
    pub enabled_commands: BTreeSet<Verb>,
    pub failed_attempts: u32,
    pub backoff_until: Option<SimTime>,
    pub owner_pin_set: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockResult {
    pub unlocked: bool,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationUpdate {
    pub settings: LocationSettings,
    /// Exception entries naming apps that are not installed.
    pub unknown_apps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSaved {
    pub profile: GuestProfile,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupRequest {
    pub stores: Vec<StoreKind>,
    pub destination: BackupDestination,
    #[serde(default)]
    pub include_settings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RestoreSource {
    /// Archive text as written by `create_backup`.
    Archive { archive: String },
    Stored { destination: BackupDestination, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreReport {
    pub stores: Vec<StoreKind>,
    pub settings_restored: bool,
    pub manifest: BackupManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub lock: LockState,
    pub ringer: RingerState,
    pub position: Option<GeoFix>,
    pub clock: SimTime,
    pub resources: std::collections::BTreeMap<ResourceKind, bool>,
    pub guest_active: bool,
    pub inbound_sms: usize,
    pub outbound_sms: Vec<SmsMessage>,
    pub position_reads: u64,
}

/// Protocol messages carry the passphrase; the event feed shows only the verb.
fn redacted_body(body: &str) -> String {
    match rpp::parse_command(body) {
        rpp::ParseResult::NotRpp => body.to_string(),
        rpp::ParseResult::Command(cmd) => format!("{} {} [redacted]", rpp::KEYWORD, cmd.verb),
        rpp::ParseResult::Malformed(_) => format!("{} [redacted]", rpp::KEYWORD),
    }
}

pub struct Engine {
    device: DeviceState,
    settings: SettingsDocument,
    session: Option<GuestSession>,
    events: EventLog,
    hub: BlobHub,
    gazetteer: Vec<Place>,
    tour: Tour,
    revision: u64,
}

impl Engine {
    pub fn new(device: DeviceState, settings: SettingsDocument) -> Self {
        Engine {
            device,
            settings,
            session: None,
            events: EventLog::default(),
            hub: BlobHub::default(),
            gazetteer: geopriv::bundled_gazetteer(),
            tour: Tour::bundled(),
            revision: 0,
        }
    }

    pub fn with_gazetteer(mut self, places: Vec<Place>) -> Self {
        self.gazetteer = places;
        self
    }

    pub fn device(&self) -> &DeviceState {
        &self.device
    }

    pub fn settings(&self) -> &SettingsDocument {
        &self.settings
    }

    pub fn session(&self) -> Option<&GuestSession> {
        self.session.as_ref()
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn hub(&self) -> &BlobHub {
        &self.hub
    }

    pub fn hub_mut(&mut self) -> &mut BlobHub {
        &mut self.hub
    }

    /// Bumped on every change to the persisted settings document.
    pub fn settings_revision(&self) -> u64 {
        self.revision
    }

    fn settings_changed(&mut self, section: &str) {
        self.revision += 1;
        self.events.push(self.device.clock, EventKind::SettingsChanged, json!({ "section": section }));
    }

    fn apply_effects(&mut self, effects: &[Effect]) {
        for effect in effects {
            self.device.apply_effect(effect);
            let (kind, detail) = effect_event(effect);
            self.events.push(self.device.clock, kind, detail);
        }
    }

    /// Checks the owner's secret: the protection passphrase when armed, else
    /// the owner PIN, else nothing is required.
    pub fn authorize(&self, secret: Option<&str>) -> Result<()> {
        let digest = match (&self.settings.rpp, self.settings.rpp_state.is_armed(), &self.settings.owner_pin) {
            (Some(cfg), true, _) => Some(&cfg.passphrase),
            (_, _, Some(pin)) => Some(pin),
            _ => None,
        };
        match (digest, secret) {
            (None, _) => Ok(()),
            (Some(d), Some(s)) if d.matches(s) => Ok(()),
            _ => Err(EngineError::AuthFailed),
        }
    }

    pub fn advance_clock(&mut self, to: SimTime) {
        self.device.advance_clock(to);
    }

    pub fn status(&self) -> DeviceStatus {
        DeviceStatus {
            lock: self.device.lock,
            ringer: self.device.ringer,
            position: self.device.position,
            clock: self.device.clock,
            resources: self.device.resources.clone(),
            guest_active: self.session.is_some(),
            inbound_sms: self.device.inbound_sms.len(),
            outbound_sms: self.device.outbound_sms.clone(),
            position_reads: self.device.position_reads,
        }
    }

    pub fn set_position(&mut self, fix: GeoFix) -> Result<GeoFix> {
        Ok(self.device.set_position(fix)?)
    }

    // ---- remote protection ----

    /// Messages stamped earlier than the device clock are received "now", so a
    /// stale timestamp cannot slip under the throttle.
    pub fn deliver_sms(&mut self, mut msg: SmsMessage) -> SmsDelivery {
        msg.received_at = msg.received_at.max(self.device.clock);
        self.device.push_inbound(msg.clone());
        self.events.push(
            self.device.clock,
            EventKind::SmsIn,
            json!({ "from": msg.sender, "body": redacted_body(&msg.body) }),
        );
        if rpp::parse_command(&msg.body) == rpp::ParseResult::NotRpp {
            return SmsDelivery { outcome: InboundOutcome::NotRpp, effects: Vec::new() };
        }

        let result = rpp::handle_inbound(
            &self.settings.rpp_state,
            self.settings.rpp.as_ref(),
            &msg,
            self.device.position.as_ref(),
        );
        let state_changed = result.state != self.settings.rpp_state;
        self.settings.rpp_state = result.state;
        self.apply_effects(&result.effects);
        if result.effects.contains(&Effect::WipeData) {
            self.session = None;
            self.settings = SettingsDocument { rpp_state: self.settings.rpp_state.clone(), ..Default::default() };
            self.settings_changed("all");
        } else if state_changed {
            self.revision += 1;
        }
        SmsDelivery { outcome: result.outcome, effects: result.effects }
    }

    pub fn local_unlock(&mut self, entered: &str) -> UnlockResult {
        let locked = self.device.lock == LockState::Locked;
        let (state, unlocked) =
            rpp::local_unlock(&self.settings.rpp_state, self.settings.rpp.as_ref(), entered, locked);
        if state != self.settings.rpp_state {
            self.settings.rpp_state = state;
            self.revision += 1;
        }
        if unlocked {
            self.device.unlock();
            self.events.push(self.device.clock, EventKind::Unlocked, json!({}));
        }
        UnlockResult { unlocked, phase: self.settings.rpp_state.phase }
    }

    pub fn rpp_view(&self) -> RppView {
        let cfg = self.settings.rpp.as_ref();
        RppView {
            phase: self.settings.rpp_state.phase,
            passphrase_set: cfg.is_some(),
            enabled_commands: cfg.map_or_else(rpp::default_enabled_commands, |c| c.enabled_commands.clone()),
            failed_attempts: self.settings.rpp_state.failed_attempts,
            backoff_until: self.settings.rpp_state.backoff_until,
            owner_pin_set: self.settings.owner_pin.is_some(),
        }
    }

    /// First-time setup, voluntary rotation (needs `current`) or the forced
    /// rotation after a recovered device was unlocked.
    pub fn set_passphrase(&mut self, new: &str, current: Option<&str>) -> Result<RppView> {
        let needs_current = self.settings.rpp.is_some() && self.settings.rpp_state.phase == Phase::Armed;
        if needs_current && !current.is_some_and(|c| self.settings.rpp.as_ref().is_some_and(|cfg| cfg.passphrase.matches(c))) {
            return Err(PassphraseError::CurrentMismatch.into());
        }
        let (cfg, state) = rpp::set_passphrase(self.settings.rpp.as_ref(), &self.settings.rpp_state, new)?;
        self.settings.rpp = Some(cfg);
        self.settings.rpp_state = state;
        self.settings_changed("rpp");
        Ok(self.rpp_view())
    }

    pub fn set_enabled_commands(&mut self, auth: Option<&str>, enabled: BTreeSet<Verb>) -> Result<RppView> {
        self.authorize(auth)?;
        let cfg = self.settings.rpp.as_mut().ok_or(EngineError::ProtectionNotSetUp)?;
        cfg.enabled_commands = enabled;
        self.settings_changed("rpp");
        Ok(self.rpp_view())
    }

    pub fn set_owner_pin(&mut self, auth: Option<&str>, pin: &str) -> Result<RppView> {
        self.authorize(auth)?;
        let folded = rpp::fold_passphrase(pin)?;
        self.settings.owner_pin = Some(PassphraseDigest::new(&folded));
        self.settings_changed("owner_pin");
        Ok(self.rpp_view())
    }

    // ---- location ----

    pub fn location_settings(&self) -> &LocationSettings {
        &self.settings.location
    }

    pub fn put_location_settings(&mut self, auth: Option<&str>, settings: LocationSettings) -> Result<LocationUpdate> {
        self.authorize(auth)?;
        self.settings.location = settings;
        self.settings_changed("location");
        Ok(self.location_view())
    }

    pub fn location_view(&self) -> LocationUpdate {
        let unknown_apps = self
            .settings
            .location
            .unknown_exceptions(|id| self.device.app(id).is_some())
            .into_iter()
            .map(String::from)
            .collect();
        LocationUpdate { settings: self.settings.location.clone(), unknown_apps }
    }

    /// What `app_id` gets from the geolocation API right now. The position
    /// source is read exactly once whatever the policy.
    pub fn query_location(&mut self, app_id: &str) -> Result<ReportedLocation> {
        let fix = self.device.read_position().ok_or(EngineError::NoFix)?;
        let policy = self.settings.location.resolve_policy(app_id);
        let reported = geopriv::apply_policy(&fix, &policy);
        let effect = Effect::PositionReport { app_id: app_id.to_string(), lat: reported.lat(), lon: reported.lon() };
        self.apply_effects(&[effect]);
        Ok(reported)
    }

    pub fn search_places(&self, query: &str) -> Vec<Place> {
        geopriv::search_places(&self.gazetteer, query).into_iter().cloned().collect()
    }

    // ---- guest mode ----

    pub fn profiles(&self) -> &[GuestProfile] {
        &self.settings.guest_profiles
    }

    pub fn create_profile(&mut self, auth: Option<&str>, spec: GuestProfile) -> Result<ProfileSaved> {
        self.authorize(auth)?;
        let (profile, warnings) = guest::create_profile(&self.settings.guest_profiles, spec, &self.device.apps)?;
        self.settings.guest_profiles.push(profile.clone());
        self.settings_changed("guest_profiles");
        Ok(ProfileSaved { profile, warnings })
    }

    pub fn update_profile(&mut self, auth: Option<&str>, mut profile: GuestProfile) -> Result<ProfileSaved> {
        self.authorize(auth)?;
        let warnings = guest::strip_system_apps(&mut profile, &self.device.apps);
        let slot = self
            .settings
            .guest_profiles
            .iter_mut()
            .find(|p| p.profile_id == profile.profile_id)
            .ok_or_else(|| GuestError::UnknownProfile(profile.profile_id.clone()))?;
        *slot = profile.clone();
        self.settings_changed("guest_profiles");
        Ok(ProfileSaved { profile, warnings })
    }

    pub fn delete_profile(&mut self, auth: Option<&str>, profile_id: &str) -> Result<Vec<GuestProfile>> {
        self.authorize(auth)?;
        if self.session.as_ref().is_some_and(|s| s.profile.profile_id == profile_id) {
            return Err(GuestError::ProfileInUse(profile_id.to_string()).into());
        }
        let before = self.settings.guest_profiles.len();
        self.settings.guest_profiles.retain(|p| p.profile_id != profile_id);
        if self.settings.guest_profiles.len() == before {
            return Err(GuestError::UnknownProfile(profile_id.to_string()).into());
        }
        self.settings_changed("guest_profiles");
        Ok(self.settings.guest_profiles.clone())
    }

    pub fn enter_guest(&mut self, auth: Option<&str>, profile_id: &str) -> Result<VisibleState> {
        if self.session.is_some() {
            return Err(GuestError::SessionActive.into());
        }
        self.authorize(auth)?;
        let profile = self
            .settings
            .guest_profiles
            .iter()
            .find(|p| p.profile_id == profile_id)
            .cloned()
            .ok_or_else(|| GuestError::UnknownProfile(profile_id.to_string()))?;
        let session = guest::enter_guest(&mut self.device, &profile, None)?;
        self.session = Some(session);
        self.events.push(self.device.clock, EventKind::GuestEntered, json!({ "profile_id": profile_id }));
        Ok(self.effective_view())
    }

    pub fn exit_guest(&mut self, auth: Option<&str>) -> Result<VisibleState> {
        if self.session.is_none() {
            return Err(GuestError::NoSession.into());
        }
        self.authorize(auth)?;
        let session = self.session.take().expect("checked above");
        let profile_id = session.profile.profile_id.clone();
        guest::exit_guest(&mut self.device, session);
        self.events.push(self.device.clock, EventKind::GuestExited, json!({ "profile_id": profile_id }));
        Ok(self.effective_view())
    }

    pub fn effective_view(&self) -> VisibleState {
        guest::effective_view(&self.device, self.session.as_ref())
    }

    pub fn search_apps(&self, query: &str) -> Vec<AppRecord> {
        let view = self.effective_view();
        guest::search_apps(&view, query).into_iter().cloned().collect()
    }

    /// Reads a store as the person holding the phone sees it. While a guest
    /// session is active protected stores only ever hold guest-scope data.
    pub fn query_store(&self, kind: StoreKind) -> Vec<Record> {
        self.device.store(kind).to_vec()
    }

    pub fn add_record(&mut self, kind: StoreKind, record: Record) -> Vec<Record> {
        self.device.store_mut(kind).push(record);
        self.query_store(kind)
    }

    pub fn delete_record(&mut self, kind: StoreKind, index: usize) -> Result<Vec<Record>> {
        let store = self.device.store_mut(kind);
        if index >= store.len() {
            return Err(EngineError::NotFound(format!("{} record #{index}", kind.as_str())));
        }
        store.remove(index);
        Ok(self.query_store(kind))
    }

    // ---- backup ----

    pub fn destinations(&self) -> Vec<BackupDestination> {
        list_destinations(&self.settings.backup_destinations)
    }

    pub fn add_destination(&mut self, auth: Option<&str>, dest: BackupDestination) -> Result<Vec<BackupDestination>> {
        self.authorize(auth)?;
        dest.validate()?;
        if !matches!(dest, BackupDestination::DefaultServer { .. }) && !self.settings.backup_destinations.contains(&dest) {
            self.settings.backup_destinations.push(dest);
            self.settings_changed("backup_destinations");
        }
        Ok(self.destinations())
    }

    /// Removes the destination at `index` of [`Self::destinations`]. Index 0
    /// is the default server and cannot be removed.
    pub fn remove_destination(&mut self, auth: Option<&str>, index: usize) -> Result<Vec<BackupDestination>> {
        self.authorize(auth)?;
        if index == 0 {
            return Err(EngineError::DefaultDestination);
        }
        if index > self.settings.backup_destinations.len() {
            return Err(EngineError::NotFound(format!("destination #{index}")));
        }
        self.settings.backup_destinations.remove(index - 1);
        self.settings_changed("backup_destinations");
        Ok(self.destinations())
    }

    pub fn create_backup(&mut self, request: &BackupRequest) -> Result<BackupReceipt> {
        if self.session.is_some() {
            return Err(EngineError::GuestSessionActive);
        }
        let settings = request.include_settings.then(|| self.settings.shared());
        let mut store = open_destination(&request.destination, &mut self.hub)?;
        let (_, receipt) =
            backup::create_backup(&self.device, &request.stores, settings, &request.destination, &mut store)?;
        self.events.push(
            self.device.clock,
            EventKind::BackupCreated,
            json!({ "name": receipt.name, "checksum": receipt.manifest.checksum }),
        );
        Ok(receipt)
    }

    pub fn list_backups(&mut self, dest: &BackupDestination) -> Result<Vec<String>> {
        let store = open_destination(dest, &mut self.hub)?;
        Ok(store.list()?)
    }

    /// Verifies an archive and replaces the stores it contains. Nothing
    /// changes unless every check passes.
    pub fn restore_backup(&mut self, auth: Option<&str>, source: &RestoreSource) -> Result<RestoreReport> {
        if self.session.is_some() {
            return Err(EngineError::GuestSessionActive);
        }
        self.authorize(auth)?;
        let bytes = match source {
            RestoreSource::Archive { archive } => archive.as_bytes().to_vec(),
            RestoreSource::Stored { destination, name } => open_destination(destination, &mut self.hub)?.get(name)?,
        };
        let archive = BackupArchive::decode(&bytes)?;
        let stores = backup::restore_stores(&mut self.device, &archive);
        let settings_restored = match &archive.payload.settings {
            Some(shared) => {
                self.settings.location = shared.location.clone();
                self.settings.guest_profiles = shared.guest_profiles.clone();
                self.settings_changed("restore");
                true
            }
            None => false,
        };
        self.events.push(
            self.device.clock,
            EventKind::BackupRestored,
            json!({ "stores": stores, "checksum": archive.manifest.checksum }),
        );
        Ok(RestoreReport { stores, settings_restored, manifest: archive.manifest })
    }

    // ---- settings sharing, tour, events ----

    pub fn export_settings(&self) -> String {
        settings::export_settings(&self.settings)
    }

    /// Replaces location policies and guest profiles. Passphrases are never
    /// taken from a blob.
    pub fn import_settings(&mut self, auth: Option<&str>, blob: &[u8]) -> Result<ImportReport> {
        self.authorize(auth)?;
        let outcome = settings::import_settings(blob)?;
        let mut warnings = outcome.warnings;
        let mut profiles = outcome.settings.guest_profiles;
        for p in &mut profiles {
            warnings.extend(guest::strip_system_apps(p, &self.device.apps));
        }
        self.settings.location = outcome.settings.location;
        self.settings.guest_profiles = profiles;
        for id in self.location_view().unknown_apps {
            warnings.push(format!("exception for unknown app `{id}` kept"));
        }
        self.settings_changed("import");
        Ok(ImportReport { warnings })
    }

    pub fn tour(&self, topic: Option<&str>) -> Result<Vec<TourPanel>> {
        Ok(self.tour.get(topic)?)
    }

    pub fn events_since(&self, since: u64) -> Vec<EventRecord> {
        self.events.since(since).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::load_device;
    use crate::geopriv::LocationPolicy;

    fn engine() -> Engine {
        let dev = load_device(
            r#"{
                "apps": [
                    {"app_id": "maps", "display_name": "Maps"},
                    {"app_id": "ads", "display_name": "Ad Game"},
                    {"app_id": "camera", "display_name": "Camera"},
                    {"app_id": "settings", "display_name": "Settings", "system_flag": true}
                ],
                "stores": {"contacts": [{"name": "a"}, {"name": "b"}, {"name": "c"}, {"name": "d"}, {"name": "e"}]},
                "position": {"lat": 52.52, "lon": 13.405, "timestamp": 1700000000}
            }"#,
        )
        .unwrap();
        Engine::new(dev, SettingsDocument::default())
    }

    fn sms(e: &Engine, body: &str) -> SmsMessage {
        SmsMessage::new("+49", body, e.device().clock).unwrap()
    }

    #[test]
    fn ordinary_sms_is_stored_without_effects() {
        let mut e = engine();
        let msg = sms(&e, "hello");
        let d = e.deliver_sms(msg);
        assert!(d.effects.is_empty());
        assert_eq!(e.device().inbound_sms.len(), 1);
        assert_eq!(e.events_since(0).len(), 1);
        assert_eq!(e.events_since(0)[0].kind, EventKind::SmsIn);
    }

    #[test]
    fn ring_sets_ringer_and_events_match_effects() {
        let mut e = engine();
        e.set_passphrase("s3cret", None).unwrap();
        let before = e.events().last_seq();
        let msg = sms(&e, "rpp ring s3cret");
        let d = e.deliver_sms(msg);
        assert_eq!(d.effects.len(), 2);
        assert_eq!(e.device().lock, LockState::Locked);
        assert!(e.device().ringer.ringing);
        assert_eq!(e.device().ringer.volume, 100);
        let kinds: Vec<_> = e.events_since(before).iter().map(|r| r.kind).collect();
        assert_eq!(kinds, [EventKind::SmsIn, EventKind::Locked, EventKind::Ringing]);

        let r = e.local_unlock("s3cret");
        assert!(r.unlocked);
        assert_eq!(r.phase, Phase::AwaitingNewPassphrase);
        assert!(!e.device().ringer.ringing);
        assert!(matches!(e.set_passphrase("s3cret", None), Err(EngineError::Passphrase(PassphraseError::SameAsCurrent))));
        assert_eq!(e.set_passphrase("n3w", None).unwrap().phase, Phase::Armed);
    }

    #[test]
    fn rotation_while_armed_needs_current() {
        let mut e = engine();
        e.set_passphrase("a1", None).unwrap();
        assert!(matches!(e.set_passphrase("b2", None), Err(EngineError::Passphrase(PassphraseError::CurrentMismatch))));
        assert!(matches!(e.set_passphrase("a1", Some("a1")), Err(EngineError::Passphrase(PassphraseError::SameAsCurrent))));
        e.set_passphrase("b2", Some("a1")).unwrap();
    }

    #[test]
    fn wipe_clears_stores_settings_and_session() {
        let mut e = engine();
        e.set_passphrase("s3cret", None).unwrap();
        let mut enabled = rpp::default_enabled_commands();
        enabled.insert(Verb::Wipe);
        e.set_enabled_commands(Some("s3cret"), enabled).unwrap();
        e.create_profile(
            Some("s3cret"),
            GuestProfile {
                profile_id: "g".into(),
                name: "G".into(),
                visible_apps: Default::default(),
                protected_stores: [StoreKind::Contacts].into_iter().collect(),
                resource_overrides: Default::default(),
            },
        )
        .unwrap();
        e.enter_guest(Some("s3cret"), "g").unwrap();
        let msg = sms(&e, "rpp wipe s3cret");
        e.deliver_sms(msg);
        assert!(StoreKind::ALL.iter().all(|k| e.query_store(*k).is_empty()));
        assert!(e.settings().rpp.is_none());
        assert_eq!(e.settings().rpp_state.phase, Phase::Wiped);
        assert!(e.session().is_none());
        assert!(e.settings().guest_profiles.is_empty());
        let msg = sms(&e, "rpp lock s3cret");
        assert!(e.deliver_sms(msg).effects.is_empty());
    }

    #[test]
    fn event_feed_never_shows_passphrases() {
        let mut e = engine();
        e.set_passphrase("s3cret", None).unwrap();
        for body in ["rpp lock s3cret", "rpp lock S3CRET", "rpp locate s3cret!", "hello"] {
            let msg = sms(&e, body);
            e.deliver_sms(msg);
        }
        let feed = serde_json::to_string(&e.events_since(0)).unwrap().to_lowercase();
        assert!(!feed.contains("s3cret"));
        assert!(feed.contains("rpp lock [redacted]"));
        assert!(feed.contains("hello"));
    }

    #[test]
    fn location_query_reads_once_per_call() {
        let mut e = engine();
        let mut s = LocationSettings::default();
        s.exceptions.insert("ads".into(), LocationPolicy::Off);
        s.exceptions.insert("ghost".into(), LocationPolicy::Precise);
        let upd = e.put_location_settings(None, s).unwrap();
        assert_eq!(upd.unknown_apps, ["ghost"]);
        let r = e.query_location("ads").unwrap();
        assert_eq!(r.position, None);
        let r = e.query_location("maps").unwrap();
        assert_eq!(r.lat(), Some(52.52));
        assert_eq!(e.device().position_reads, 2);
    }

    #[test]
    fn settings_changes_need_owner_secret_once_armed() {
        let mut e = engine();
        e.set_passphrase("s3cret", None).unwrap();
        assert!(matches!(e.put_location_settings(None, LocationSettings::default()), Err(EngineError::AuthFailed)));
        assert!(matches!(e.put_location_settings(Some("nope"), LocationSettings::default()), Err(EngineError::AuthFailed)));
        e.put_location_settings(Some("S3CRET"), LocationSettings::default()).unwrap();
    }

    #[test]
    fn owner_pin_guards_when_protection_is_off() {
        let mut e = engine();
        e.set_owner_pin(None, "1234").unwrap();
        assert!(e.authorize(None).is_err());
        assert!(e.authorize(Some("1234")).is_ok());
    }

    #[test]
    fn destinations_default_is_permanent() {
        let mut e = engine();
        assert_eq!(e.destinations().len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let local = BackupDestination::LocalPath { path: dir.path().into() };
        assert_eq!(e.add_destination(None, local).unwrap().len(), 2);
        assert!(matches!(e.remove_destination(None, 0), Err(EngineError::DefaultDestination)));
        assert_eq!(e.remove_destination(None, 1).unwrap(), vec![BackupDestination::default_server()]);
    }

    #[test]
    fn restore_forbidden_in_guest_session() {
        let mut e = engine();
        let receipt = e
            .create_backup(&BackupRequest {
                stores: StoreKind::ALL.to_vec(),
                destination: BackupDestination::default_server(),
                include_settings: false,
            })
            .unwrap();
        e.create_profile(
            None,
            GuestProfile {
                profile_id: "g".into(),
                name: String::new(),
                visible_apps: Default::default(),
                protected_stores: [StoreKind::Contacts].into_iter().collect(),
                resource_overrides: Default::default(),
            },
        )
        .unwrap();
        e.enter_guest(None, "g").unwrap();
        let src = RestoreSource::Stored { destination: BackupDestination::default_server(), name: receipt.name };
        assert!(matches!(e.restore_backup(None, &src), Err(EngineError::GuestSessionActive)));
        assert!(e.query_store(StoreKind::Contacts).is_empty());
        e.exit_guest(None).unwrap();
        assert_eq!(e.query_store(StoreKind::Contacts).len(), 5);
        e.restore_backup(None, &src).unwrap();
    }
}
