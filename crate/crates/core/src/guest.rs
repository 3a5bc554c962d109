//! Secondary-user (guest) mode.
//!
//! A profile decides which apps a guest can see, which data stores are swapped
//! for an empty guest scope, and which resources stay on. On entry the owner's
//! protected stores are moved into a snapshot and the live stores start empty,
//! so every read path sees guest data only. On exit the snapshot is put back
//! and anything the guest wrote to a protected store is dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{AppRecord, DeviceState, Record, ResourceKind, SimTime, StoreKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuestError {
    #[error("guest profile `{0}` already exists")]
    DuplicateProfile(String),
    #[error("guest profile `{0}` not found")]
    UnknownProfile(String),
    #[error("profile id must not be empty")]
    EmptyProfileId,
    #[error("a guest session is already active")]
    SessionActive,
    #[error("no guest session is active")]
    NoSession,
    #[error("profile `{0}` is in use by the active session")]
    ProfileInUse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestProfile {
    pub profile_id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub visible_apps: BTreeSet<String>,
    #[serde(default)]
    pub protected_stores: BTreeSet<StoreKind>,
    #[serde(default)]
    pub resource_overrides: BTreeMap<ResourceKind, bool>,
}

/// Drops system apps from `visible_apps`, returning one warning per removal.
pub fn strip_system_apps(profile: &mut GuestProfile, apps: &[AppRecord]) -> Vec<String> {
    let system: Vec<&str> = apps.iter().filter(|a| a.system_flag).map(|a| a.app_id.as_str()).collect();
    let mut warnings = Vec::new();
    profile.visible_apps.retain(|id| {
        let keep = !system.contains(&id.as_str());
        if !keep {
            warnings.push(format!("system app `{id}` can never be visible to a guest; removed"));
        }
        keep
    });
    warnings
}

/// Validates a new profile against existing ones and the device's app list.
pub fn create_profile(
    existing: &[GuestProfile],
    mut spec: GuestProfile,
    apps: &[AppRecord],
) -> Result<(GuestProfile, Vec<String>), GuestError> {
    if spec.profile_id.trim().is_empty() {
        return Err(GuestError::EmptyProfileId);
    }
    if existing.iter().any(|p| p.profile_id == spec.profile_id) {
        return Err(GuestError::DuplicateProfile(spec.profile_id));
    }
    let warnings = strip_system_apps(&mut spec, apps);
    Ok((spec, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuestSession {
    /// Copy of the profile as it was at entry; later edits apply next time.
    pub profile: GuestProfile,
    pub snapshot: BTreeMap<StoreKind, Vec<Record>>,
    pub resource_snapshot: BTreeMap<ResourceKind, bool>,
    pub entered_at: SimTime,
}

pub fn enter_guest(
    device: &mut DeviceState,
    profile: &GuestProfile,
    active: Option<&GuestSession>,
) -> Result<GuestSession, GuestError> {
    if active.is_some() {
        return Err(GuestError::SessionActive);
    }
    let snapshot = profile
        .protected_stores
        .iter()
        .map(|kind| (*kind, std::mem::take(device.store_mut(*kind))))
        .collect();
    let resource_snapshot = device.resources.clone();
    for (kind, enabled) in &profile.resource_overrides {
        device.resources.insert(*kind, *enabled);
    }
    Ok(GuestSession {
        profile: profile.clone(),
        snapshot,
        resource_snapshot,
        entered_at: device.clock,
    })
}

/// Restores the owner's stores and resources from the session snapshot.
pub fn exit_guest(device: &mut DeviceState, session: GuestSession) {
    for (kind, records) in session.snapshot {
        *device.store_mut(kind) = records;
    }
    device.resources = session.resource_snapshot;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreView {
    pub records: usize,
    pub substituted: bool,
}

/// What the person holding the phone can currently see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleState {
    pub guest_active: bool,
    pub profile_id: Option<String>,
    pub apps: Vec<AppRecord>,
    pub stores: BTreeMap<StoreKind, StoreView>,
    pub resources: BTreeMap<ResourceKind, bool>,
}

pub fn effective_view(device: &DeviceState, session: Option<&GuestSession>) -> VisibleState {
    let apps = match session {
        None => device.apps.clone(),
        Some(s) => device
            .apps
            .iter()
            .filter(|a| !a.system_flag && s.profile.visible_apps.contains(&a.app_id))
            .cloned()
            .collect(),
    };
    let stores = StoreKind::ALL
        .into_iter()
        .map(|kind| {
            let substituted = session.is_some_and(|s| s.profile.protected_stores.contains(&kind));
            (kind, StoreView { records: device.store(kind).len(), substituted })
        })
        .collect();
    VisibleState {
        guest_active: session.is_some(),
        profile_id: session.map(|s| s.profile.profile_id.clone()),
        apps,
        stores,
        resources: device.resources.clone(),
    }
}

/// The launcher's app search over the visible app list.
pub fn search_apps<'a>(view: &'a VisibleState, query: &str) -> Vec<&'a AppRecord> {
    let q = query.to_lowercase();
    view.apps
        .iter()
        .filter(|a| a.display_name.to_lowercase().contains(&q) || a.app_id.to_lowercase().contains(&q))
        .collect()
}
