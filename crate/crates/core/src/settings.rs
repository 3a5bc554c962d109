//! The persisted settings document and the shareable export blob.
//!
//! Export blobs carry location policies and guest profiles only. Secrets
//! (passphrase digests, owner PIN) are never written to a blob and are
//! stripped with a warning if a blob arrives with them.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backup::BackupDestination;
use crate::geopriv::LocationSettings;
use crate::guest::GuestProfile;
use crate::rpp::{PassphraseDigest, RppConfig, RppState};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXPORT_FORMAT: &str = "privdash-settings";
pub const EXPORT_VERSION: u32 = 1;

const SECRET_KEYS: [&str; 5] = ["rpp", "passphrase", "previous_passphrase", "owner_pin", "pin"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SettingsError {
    #[error("settings document is malformed at line {line}, column {column} (byte {offset}): {message}")]
    Corrupt { line: usize, column: usize, offset: usize, message: String },
    #[error("unsupported settings schema version {0}")]
    UnsupportedSchema(u32),
    #[error("export blob is malformed: {0}")]
    MalformedBlob(String),
    #[error("export blob version {found} is not supported (expected {EXPORT_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("export blob checksum does not match its contents")]
    ChecksumMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub location: LocationSettings,
    #[serde(default)]
    pub rpp: Option<RppConfig>,
    #[serde(default)]
    pub rpp_state: RppState,
    #[serde(default)]
    pub owner_pin: Option<PassphraseDigest>,
    #[serde(default)]
    pub guest_profiles: Vec<GuestProfile>,
    /// User-added destinations; the default server is implicit and always first.
    #[serde(default)]
    pub backup_destinations: Vec<BackupDestination>,
}

impl Default for SettingsDocument {
    fn default() -> Self {
        SettingsDocument {
            schema_version: SCHEMA_VERSION,
            location: LocationSettings::default(),
            rpp: None,
            rpp_state: RppState::default(),
            owner_pin: None,
            guest_profiles: Vec::new(),
            backup_destinations: Vec::new(),
        }
    }
}

impl SettingsDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("settings serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, SettingsError> {
        let doc: SettingsDocument = serde_json::from_str(text).map_err(|e| corrupt(text, &e))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(SettingsError::UnsupportedSchema(doc.schema_version));
        }
        Ok(doc)
    }

    pub fn shared(&self) -> SharedSettings {
        SharedSettings { location: self.location.clone(), guest_profiles: self.guest_profiles.clone() }
    }
}

fn corrupt(text: &str, e: &serde_json::Error) -> SettingsError {
    SettingsError::Corrupt {
        line: e.line(),
        column: e.column(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Byte offset of a 1-based (line, column) position as reported by serde_json.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// The part of the settings that can be shared with other people.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedSettings {
    pub location: LocationSettings,
    #[serde(default)]
    pub guest_profiles: Vec<GuestProfile>,
}

#[derive(Serialize)]
struct ExportBlob<'a> {
    format: &'static str,
    version: u32,
    settings: &'a Value,
    checksum: String,
}

fn canonical_checksum(v: &Value) -> String {
    // serde_json's Map is ordered by key, so this byte string is canonical.
    let bytes = serde_json::to_vec(v).expect("value serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn export_settings(doc: &SettingsDocument) -> String {
    let settings = serde_json::to_value(doc.shared()).expect("settings serialize");
    let blob = ExportBlob {
        format: EXPORT_FORMAT,
        version: EXPORT_VERSION,
        checksum: canonical_checksum(&settings),
        settings: &settings,
    };
    serde_json::to_string_pretty(&blob).expect("blob serialize")
}

/// Builds a blob around arbitrary settings JSON. Used by tooling and tests that
/// need to craft blobs the exporter would never produce.
pub fn seal_blob(settings: Value) -> String {
    let blob = ExportBlob {
        format: EXPORT_FORMAT,
        version: EXPORT_VERSION,
        checksum: canonical_checksum(&settings),
        settings: &settings,
    };
    serde_json::to_string_pretty(&blob).expect("blob serialize")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOutcome {
    pub settings: SharedSettings,
    pub warnings: Vec<String>,
}

fn strip_secrets(obj: &mut serde_json::Map<String, Value>, scope: &str, warnings: &mut Vec<String>) {
    for key in SECRET_KEYS {
        if obj.remove(key).is_some() {
            warnings.push(format!("ignored secret field `{scope}{key}`; passphrases are never imported"));
        }
    }
}

pub fn import_settings(blob: &[u8]) -> Result<ImportOutcome, SettingsError> {
    let malformed = |m: String| SettingsError::MalformedBlob(m);
    let mut root: Value = serde_json::from_slice(blob).map_err(|e| malformed(e.to_string()))?;
    let obj = root.as_object_mut().ok_or_else(|| malformed("expected a JSON object".into()))?;
    match obj.get("format").and_then(Value::as_str) {
        Some(EXPORT_FORMAT) => {}
        other => return Err(malformed(format!("unexpected format {other:?}"))),
    }
    let version = obj.get("version").and_then(Value::as_u64).ok_or_else(|| malformed("missing version".into()))?;
    if version != u64::from(EXPORT_VERSION) {
        return Err(SettingsError::VersionMismatch { found: version });
    }
    let checksum = obj
        .get("checksum")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing checksum".into()))?
        .to_string();
    let mut settings = obj.remove("settings").ok_or_else(|| malformed("missing settings".into()))?;
    if canonical_checksum(&settings) != checksum {
        return Err(SettingsError::ChecksumMismatch);
    }

    let mut warnings = Vec::new();
    strip_secrets(obj, "", &mut warnings);
    let inner = settings.as_object_mut().ok_or_else(|| malformed("settings must be an object".into()))?;
    strip_secrets(inner, "settings.", &mut warnings);

    let shared: SharedSettings = serde_path_to_error::deserialize(settings)
        .map_err(|e| malformed(format!("settings.{}: {}", e.path(), e.inner())))?;
    Ok(ImportOutcome { settings: shared, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geopriv::LocationPolicy;
    use crate::rpp::{set_passphrase, RppState};

    fn doc() -> SettingsDocument {
        let mut d = SettingsDocument::default();
        d.location.global_default = LocationPolicy::blur(25.0).unwrap();
        d.location.exceptions.insert("ads".into(), LocationPolicy::Off);
        d.location.exceptions.insert("taxi".into(), LocationPolicy::fixed(52.52, 13.405).unwrap());
        let (cfg, st) = set_passphrase(None, &RppState::default(), "s3cret").unwrap();
        d.rpp = Some(cfg);
        d.rpp_state = st;
        d
    }

    #[test]
    fn export_import_round_trip_without_secrets() {
        let d = doc();
        let blob = export_settings(&d);
        assert!(!blob.contains("s3cret"));
        assert!(!blob.contains("digest"));
        assert!(!blob.contains("salt"));
        let out = import_settings(blob.as_bytes()).unwrap();
        assert_eq!(out.settings.location, d.location);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn passphrase_field_ignored_with_warning() {
        let mut v = serde_json::to_value(doc().shared()).unwrap();
        v.as_object_mut().unwrap().insert("passphrase".into(), "hunter2".into());
        let out = import_settings(seal_blob(v).as_bytes()).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("passphrase"));
        assert_eq!(out.settings.location, doc().location);
    }

    #[test]
    fn garbage_and_tampering_rejected() {
        assert!(matches!(import_settings(b"\x00\xffnot json"), Err(SettingsError::MalformedBlob(_))));
        assert!(matches!(import_settings(b"[1,2]"), Err(SettingsError::MalformedBlob(_))));
        let blob = export_settings(&doc()).replace("\"off\"", "\"precise\"");
        assert_eq!(import_settings(blob.as_bytes()), Err(SettingsError::ChecksumMismatch));
        let blob = export_settings(&doc()).replace("\"version\": 1", "\"version\": 9");
        assert_eq!(import_settings(blob.as_bytes()), Err(SettingsError::VersionMismatch { found: 9 }));
    }

    #[test]
    fn document_round_trip_and_corruption() {
        let d = doc();
        assert_eq!(SettingsDocument::from_json(&d.to_json()).unwrap(), d);
        let text = "{\n  \"schema_version\": 1,\n  \"location\": oops\n}";
        match SettingsDocument::from_json(text).unwrap_err() {
            SettingsError::Corrupt { line, offset, .. } => {
                assert_eq!(line, 3);
                assert_eq!(&text[offset..offset + 1], "o");
            }
            other => panic!("{other:?}"),
        }
        let v2 = "{\"schema_version\": 2}";
        assert_eq!(SettingsDocument::from_json(v2), Err(SettingsError::UnsupportedSchema(2)));
    }
}
