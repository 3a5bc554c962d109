//! Backup archives and the destinations they are written to.
//!
//! Archive layout, three LF-terminated lines of UTF-8:
//!
//! ```text
//! privdash-backup 1
//! {"checksum":"<sha256 hex of line 3>","checksum_algorithm":"sha256","created_at":...,"format_version":1,...}
//! {"stores":{"contacts":[{...}],...}}
//! ```
//!
//! Line 3 is the canonical payload: compact JSON with every object's keys in
//! sorted order. The checksum covers exactly those bytes (without the LF).
//!
//! Remote destinations are simulated in-process by [`BlobHub`]; an endpoint
//! `sim://<host>` maps to one in-memory bucket. Any other scheme has no
//! transport and is reported unreachable.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::device::{DeviceState, Record, SimTime, StoreKind};
use crate::settings::SharedSettings;

pub const ARCHIVE_MAGIC: &str = "privdash-backup";
pub const FORMAT_VERSION: u32 = 1;
pub const CHECKSUM_ALGORITHM: &str = "sha256";
pub const DEFAULT_SERVER_ENDPOINT: &str = "sim://default";
pub const SIM_SCHEME: &str = "sim://";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackupError {
    #[error("no stores selected for backup")]
    EmptySelection,
    #[error("destination `{0}` is unreachable")]
    Unreachable(String),
    #[error("cannot write to `{dest}`: {message}")]
    Write { dest: String, message: String },
    #[error("cannot read `{name}` from `{dest}`: {message}")]
    Read { dest: String, name: String, message: String },
    #[error("destination field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("invalid blob name `{0}`")]
    BadName(String),
    #[error("archive is malformed: {0}")]
    Malformed(String),
    #[error("archive format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("archive checksum mismatch")]
    ChecksumMismatch,
    #[error("manifest record counts disagree with payload")]
    CountMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackupDestination {
    DefaultServer { endpoint: String },
    Provider { name: String, endpoint: String },
    LocalPath { path: PathBuf },
}

impl BackupDestination {
    pub fn default_server() -> Self {
        BackupDestination::DefaultServer { endpoint: DEFAULT_SERVER_ENDPOINT.into() }
    }

    pub fn validate(&self) -> Result<(), BackupError> {
        match self {
            BackupDestination::DefaultServer { endpoint } if endpoint.trim().is_empty() => {
                Err(BackupError::EmptyField("endpoint"))
            }
            BackupDestination::Provider { name, .. } if name.trim().is_empty() => Err(BackupError::EmptyField("name")),
            BackupDestination::Provider { endpoint, .. } if endpoint.trim().is_empty() => {
                Err(BackupError::EmptyField("endpoint"))
            }
            BackupDestination::LocalPath { path } if path.as_os_str().is_empty() => Err(BackupError::EmptyField("path")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for BackupDestination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackupDestination::DefaultServer { endpoint } => write!(f, "default server ({endpoint})"),
            BackupDestination::Provider { name, endpoint } => write!(f, "{name} ({endpoint})"),
            BackupDestination::LocalPath { path } => write!(f, "{}", path.display()),
        }
    }
}

/// Configured destinations with the non-removable default server first.
pub fn list_destinations(user_added: &[BackupDestination]) -> Vec<BackupDestination> {
    std::iter::once(BackupDestination::default_server())
        .chain(user_added.iter().filter(|d| !matches!(d, BackupDestination::DefaultServer { .. })).cloned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub kind: StoreKind,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupManifest {
    pub format_version: u32,
    pub created_at: SimTime,
    pub stores: Vec<StoreSummary>,
    pub includes_settings: bool,
    pub checksum_algorithm: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupPayload {
    pub stores: BTreeMap<StoreKind, Vec<Record>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<SharedSettings>,
}

impl BackupPayload {
    /// Compact JSON with sorted object keys.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("payload serialize");
        serde_json::to_vec(&value).expect("payload serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackupArchive {
    pub manifest: BackupManifest,
    pub payload: BackupPayload,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl BackupArchive {
    pub fn build(payload: BackupPayload, created_at: SimTime) -> Self {
        let stores = payload.stores.iter().map(|(kind, r)| StoreSummary { kind: *kind, records: r.len() }).collect();
        let manifest = BackupManifest {
            format_version: FORMAT_VERSION,
            created_at,
            stores,
            includes_settings: payload.settings.is_some(),
            checksum_algorithm: CHECKSUM_ALGORITHM.into(),
            checksum: sha256_hex(&payload.canonical_bytes()),
        };
        BackupArchive { manifest, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{ARCHIVE_MAGIC} {}\n", self.manifest.format_version).into_bytes();
        let manifest = serde_json::to_value(&self.manifest).expect("manifest serialize");
        out.extend(serde_json::to_vec(&manifest).expect("manifest serialize"));
        out.push(b'\n');
        out.extend(self.payload.canonical_bytes());
        out.push(b'\n');
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BackupError> {
        let malformed = |m: &str| BackupError::Malformed(m.to_string());
        let body = bytes.strip_suffix(b"\n").ok_or_else(|| malformed("missing final newline"))?;
        // The payload is everything after the second newline, so any damage
        // inside it is reported by the checksum rather than as a framing error.
        let lines: Vec<&[u8]> = body.splitn(3, |b| *b == b'\n').collect();
        let [header, manifest_line, payload_line] = lines.as_slice() else {
            return Err(malformed("expected header, manifest and payload lines"));
        };

        let header = std::str::from_utf8(header).map_err(|_| malformed("header is not UTF-8"))?;
        let version = header
            .strip_prefix(ARCHIVE_MAGIC)
            .and_then(|rest| rest.strip_prefix(' '))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| malformed("bad header line"))?;
        if version != FORMAT_VERSION {
            return Err(BackupError::UnsupportedVersion(version));
        }

        let manifest: BackupManifest =
            serde_json::from_slice(manifest_line).map_err(|e| BackupError::Malformed(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(BackupError::UnsupportedVersion(manifest.format_version));
        }
        if manifest.checksum_algorithm != CHECKSUM_ALGORITHM {
            return Err(BackupError::Malformed(format!("unknown checksum algorithm {}", manifest.checksum_algorithm)));
        }
        if sha256_hex(payload_line) != manifest.checksum {
            return Err(BackupError::ChecksumMismatch);
        }

        let payload: BackupPayload =
            serde_json::from_slice(payload_line).map_err(|e| BackupError::Malformed(format!("payload: {e}")))?;
        let counts: Vec<StoreSummary> =
            payload.stores.iter().map(|(kind, r)| StoreSummary { kind: *kind, records: r.len() }).collect();
        if counts != manifest.stores || manifest.includes_settings != payload.settings.is_some() {
            return Err(BackupError::CountMismatch);
        }
        Ok(BackupArchive { manifest, payload })
    }
}

/// Three-verb storage interface shared by local directories and simulated remotes.
pub trait BlobStore {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), BackupError>;
    fn get(&self, name: &str) -> Result<Vec<u8>, BackupError>;
    fn list(&self) -> Result<Vec<String>, BackupError>;
}

pub fn validate_blob_name(name: &str) -> Result<(), BackupError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(BackupError::BadName(name.to_string()))
    }
}

/// Files in a directory on the owner's machine. Writes go through a temp file
/// and a rename, so readers never see a partial archive.
#[derive(Debug, Clone)]
pub struct LocalDirStore {
    dir: PathBuf,
}

impl LocalDirStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LocalDirStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_err(&self, e: impl fmt::Display) -> BackupError {
        BackupError::Write { dest: self.dir.display().to_string(), message: e.to_string() }
    }
}

impl BlobStore for LocalDirStore {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), BackupError> {
        validate_blob_name(name)?;
        if !self.dir.is_dir() {
            return Err(BackupError::Unreachable(self.dir.display().to_string()));
        }
        let mut tmp = tempfile::Builder::new()
            .prefix(".partial-")
            .tempfile_in(&self.dir)
            .map_err(|e| self.write_err(e))?;
        tmp.write_all(bytes).map_err(|e| self.write_err(e))?;
        tmp.as_file().sync_all().map_err(|e| self.write_err(e))?;
        tmp.persist(self.dir.join(name)).map_err(|e| self.write_err(e.error))?;
        Ok(())
    }

    fn get(&self, name: &str) -> Result<Vec<u8>, BackupError> {
        validate_blob_name(name)?;
        std::fs::read(self.dir.join(name)).map_err(|e| BackupError::Read {
            dest: self.dir.display().to_string(),
            name: name.to_string(),
            message: e.to_string(),
        })
    }

    fn list(&self) -> Result<Vec<String>, BackupError> {
        let entries = std::fs::read_dir(&self.dir).map_err(|_| BackupError::Unreachable(self.dir.display().to_string()))?;
        let mut names: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !n.starts_with(".partial-"))
            .collect();
        names.sort();
        Ok(names)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryBlobStore {
    endpoint: String,
    blobs: BTreeMap<String, Vec<u8>>,
    offline: bool,
}

impl MemoryBlobStore {
    pub fn new(endpoint: impl Into<String>) -> Self {
        MemoryBlobStore { endpoint: endpoint.into(), ..Default::default() }
    }

    pub fn is_online(&self) -> bool {
        !self.offline
    }

    fn check_online(&self) -> Result<(), BackupError> {
        if self.offline {
            Err(BackupError::Unreachable(self.endpoint.clone()))
        } else {
            Ok(())
        }
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), BackupError> {
        validate_blob_name(name)?;
        self.check_online()?;
        self.blobs.insert(name.to_string(), bytes.to_vec());
        Ok(())
    }

    fn get(&self, name: &str) -> Result<Vec<u8>, BackupError> {
        self.check_online()?;
        self.blobs.get(name).cloned().ok_or_else(|| BackupError::Read {
            dest: self.endpoint.clone(),
            name: name.to_string(),
            message: "no such blob".into(),
        })
    }

    fn list(&self) -> Result<Vec<String>, BackupError> {
        self.check_online()?;
        Ok(self.blobs.keys().cloned().collect())
    }
}

/// In-process stand-in for remote storage servers, keyed by `sim://` host.
#[derive(Debug, Clone, Default)]
pub struct BlobHub {
    hosts: BTreeMap<String, MemoryBlobStore>,
}

pub fn sim_host(endpoint: &str) -> Option<&str> {
    endpoint.strip_prefix(SIM_SCHEME).map(|h| h.trim_end_matches('/')).filter(|h| validate_blob_name(h).is_ok())
}

impl BlobHub {
    pub fn host(&self, host: &str) -> Option<&MemoryBlobStore> {
        self.hosts.get(host)
    }

    /// Bucket for a `sim://` host, created on first use.
    pub fn host_mut(&mut self, host: &str) -> &mut MemoryBlobStore {
        self.hosts
            .entry(host.to_string())
            .or_insert_with(|| MemoryBlobStore::new(format!("{SIM_SCHEME}{host}")))
    }

    pub fn endpoint_mut(&mut self, endpoint: &str) -> Result<&mut MemoryBlobStore, BackupError> {
        let host = sim_host(endpoint).ok_or_else(|| BackupError::Unreachable(endpoint.to_string()))?;
        Ok(self.host_mut(host))
    }

    pub fn set_online(&mut self, host: &str, online: bool) {
        self.host_mut(host).offline = !online;
    }
}

pub enum DestinationStore<'a> {
    Local(LocalDirStore),
    Remote(&'a mut MemoryBlobStore),
}

impl BlobStore for DestinationStore<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), BackupError> {
        match self {
            DestinationStore::Local(s) => s.put(name, bytes),
            DestinationStore::Remote(s) => s.put(name, bytes),
        }
    }

    fn get(&self, name: &str) -> Result<Vec<u8>, BackupError> {
        match self {
            DestinationStore::Local(s) => s.get(name),
            DestinationStore::Remote(s) => s.get(name),
        }
    }

    fn list(&self) -> Result<Vec<String>, BackupError> {
        match self {
            DestinationStore::Local(s) => s.list(),
            DestinationStore::Remote(s) => s.list(),
        }
    }
}

pub fn open_destination<'a>(dest: &BackupDestination, hub: &'a mut BlobHub) -> Result<DestinationStore<'a>, BackupError> {
    dest.validate()?;
    match dest {
        BackupDestination::LocalPath { path } => Ok(DestinationStore::Local(LocalDirStore::new(path))),
        BackupDestination::DefaultServer { endpoint } | BackupDestination::Provider { endpoint, .. } => {
            Ok(DestinationStore::Remote(hub.endpoint_mut(endpoint)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupReceipt {
    pub name: String,
    pub destination: BackupDestination,
    pub manifest: BackupManifest,
}

/// Snapshots the selected stores, writes the archive and returns where it went.
pub fn create_backup(
    device: &DeviceState,
    selection: &[StoreKind],
    settings: Option<SharedSettings>,
    dest: &BackupDestination,
    store: &mut dyn BlobStore,
) -> Result<(BackupArchive, BackupReceipt), BackupError> {
    if selection.is_empty() {
        return Err(BackupError::EmptySelection);
    }
    let stores = selection.iter().map(|k| (*k, device.store(*k).to_vec())).collect();
    let archive = BackupArchive::build(BackupPayload { stores, settings }, device.clock);
    let name = format!("backup-{}-{}.pdb", archive.manifest.created_at.0, &archive.manifest.checksum[..12]);
    store.put(&name, &archive.encode())?;
    let receipt = BackupReceipt { name, destination: dest.clone(), manifest: archive.manifest.clone() };
    Ok((archive, receipt))
}

/// Replaces every store present in the archive.
pub fn restore_stores(device: &mut DeviceState, archive: &BackupArchive) -> Vec<StoreKind> {
    archive
        .payload
        .stores
        .iter()
        .map(|(kind, records)| {
            *device.store_mut(*kind) = records.clone();
            *kind
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::load_device;

    fn device() -> DeviceState {
        load_device(
            r#"{"stores": {
                "contacts": [{"name": "Ana", "phone": "+351"}, {"name": "Bo"}],
                "photos": [{"file": "a.jpg"}]
            }, "clock": 1700000000}"#,
        )
        .unwrap()
    }

    #[test]
    fn all_six_stores_to_local_path() {
        let dir = tempfile::tempdir().unwrap();
        let dest = BackupDestination::LocalPath { path: dir.path().into() };
        let mut store = LocalDirStore::new(dir.path());
        let (archive, receipt) = create_backup(&device(), &StoreKind::ALL, None, &dest, &mut store).unwrap();
        assert_eq!(archive.payload.stores.len(), 6);
        assert_eq!(archive.manifest.stores.len(), 6);
        assert_eq!(store.list().unwrap(), vec![receipt.name.clone()]);
        let bytes = store.get(&receipt.name).unwrap();
        assert_eq!(BackupArchive::decode(&bytes).unwrap(), archive);
    }

    #[test]
    fn empty_store_gives_zero_record_section() {
        let dev = load_device("{}").unwrap();
        let mut mem = MemoryBlobStore::new("sim://x");
        let (archive, _) =
            create_backup(&dev, &[StoreKind::Contacts], None, &BackupDestination::default_server(), &mut mem).unwrap();
        assert_eq!(archive.manifest.stores, vec![StoreSummary { kind: StoreKind::Contacts, records: 0 }]);
        let err = create_backup(&dev, &[], None, &BackupDestination::default_server(), &mut mem).unwrap_err();
        assert_eq!(err, BackupError::EmptySelection);
    }

    #[test]
    fn unreachable_destinations_leave_nothing_behind() {
        let mut hub = BlobHub::default();
        hub.set_online("default", false);
        let dest = BackupDestination::default_server();
        let mut store = open_destination(&dest, &mut hub).unwrap();
        let err = create_backup(&device(), &StoreKind::ALL, None, &dest, &mut store).unwrap_err();
        assert_eq!(err, BackupError::Unreachable("sim://default".into()));
        hub.set_online("default", true);
        assert!(hub.host("default").unwrap().list().unwrap().is_empty());

        let https = BackupDestination::Provider { name: "Box".into(), endpoint: "https://box.example".into() };
        assert!(matches!(open_destination(&https, &mut hub), Err(BackupError::Unreachable(_))));

        let missing = BackupDestination::LocalPath { path: "/nonexistent/privdash/backups".into() };
        let mut store = open_destination(&missing, &mut hub).unwrap();
        assert!(create_backup(&device(), &StoreKind::ALL, None, &missing, &mut store).is_err());
        assert!(!Path::new("/nonexistent/privdash/backups").exists());
    }

    #[test]
    fn payload_line_is_canonical() {
        let (archive, _) = create_backup(
            &device(),
            &[StoreKind::Photos, StoreKind::Contacts],
            None,
            &BackupDestination::default_server(),
            &mut MemoryBlobStore::new("sim://t"),
        )
        .unwrap();
        let encoded = String::from_utf8(archive.encode()).unwrap();
        let lines: Vec<&str> = encoded.lines().collect();
        assert_eq!(lines[0], "privdash-backup 1");
        assert_eq!(
            lines[2],
            r#"{"stores":{"contacts":[{"name":"Ana","phone":"+351"},{"name":"Bo"}],"photos":[{"file":"a.jpg"}]}}"#
        );
    }

    #[test]
    fn decode_rejects_damage() {
        let archive = BackupArchive::build(
            BackupPayload { stores: device().stores.clone(), settings: None },
            SimTime(5),
        );
        let good = archive.encode();
        let text = String::from_utf8(good.clone()).unwrap();

        let flipped = text.replacen("Ana", "Anb", 1);
        assert_eq!(BackupArchive::decode(flipped.as_bytes()), Err(BackupError::ChecksumMismatch));
        let v2 = text.replacen("privdash-backup 1", "privdash-backup 2", 1);
        assert_eq!(BackupArchive::decode(v2.as_bytes()), Err(BackupError::UnsupportedVersion(2)));
        assert!(matches!(BackupArchive::decode(b"junk"), Err(BackupError::Malformed(_))));
        assert!(matches!(BackupArchive::decode(&good[..good.len() - 1]), Err(BackupError::Malformed(_))));
    }

    #[test]
    fn destination_list_keeps_default_first() {
        assert_eq!(list_destinations(&[]), vec![BackupDestination::default_server()]);
        let local = BackupDestination::LocalPath { path: "/tmp/b".into() };
        assert_eq!(list_destinations(std::slice::from_ref(&local)), vec![BackupDestination::default_server(), local]);
        assert!(BackupDestination::Provider { name: "".into(), endpoint: "sim://x".into() }.validate().is_err());
    }

    #[test]
    fn blob_names_are_plain() {
        assert!(validate_blob_name("backup-1-abc.pdb").is_ok());
        for bad in ["", "..", "a/b", "../x", "a b"] {
            assert!(validate_blob_name(bad).is_err(), "{bad}");
        }
    }
}
