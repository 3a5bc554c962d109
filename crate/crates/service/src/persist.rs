//! Settings file and device config loading.

use std::io::Write;
use std::path::{Path, PathBuf};

use privdash_core::device::{load_device, DeviceError, DeviceState};
use privdash_core::settings::{SettingsDocument, SettingsError};
use thiserror::Error;

static DEMO_DEVICE: &str = include_str!("../data/demo-device.json");

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("settings file {path} is corrupt at line {line}, column {column} (byte offset {offset}): {message}")]
    Corrupt { path: PathBuf, line: usize, column: usize, offset: usize, message: String },
    #[error("settings file {path}: {source}")]
    Settings { path: PathBuf, source: SettingsError },
    #[error("device config {path}: {source}")]
    Device { path: String, source: DeviceError },
}

/// Reads the settings document; `Ok(None)` when the file does not exist yet.
pub fn load_settings(path: &Path) -> Result<Option<SettingsDocument>, PersistError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(PersistError::Io { path: path.into(), source }),
    };
    SettingsDocument::from_json(&text).map(Some).map_err(|e| match e {
        SettingsError::Corrupt { line, column, offset, message } => {
            PersistError::Corrupt { path: path.into(), line, column, offset, message }
        }
        source => PersistError::Settings { path: path.into(), source },
    })
}

/// Writes via a temp file in the same directory and renames it over the target.
pub fn save_settings(path: &Path, doc: &SettingsDocument) -> Result<(), PersistError> {
    let io = |source| PersistError::Io { path: path.into(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new().prefix(".privdash-").tempfile_in(dir).map_err(io)?;
    tmp.write_all(doc.to_json().as_bytes()).map_err(io)?;
    tmp.write_all(b"\n").map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_device_config(path: Option<&Path>) -> Result<DeviceState, PersistError> {
    match path {
        None => load_device(DEMO_DEVICE).map_err(|source| PersistError::Device { path: "<bundled demo>".into(), source }),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| PersistError::Io { path: p.into(), source })?;
            load_device(&text).map_err(|source| PersistError::Device { path: p.display().to_string(), source })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_means_fresh_start() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_settings(&dir.path().join("nope.json")).unwrap().is_none());
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let doc = SettingsDocument::default();
        save_settings(&path, &doc).unwrap();
        assert_eq!(load_settings(&path).unwrap(), Some(doc));
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn corrupt_file_names_path_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, "{\"schema_version\": 1,\n \"location\": [}").unwrap();
        let err = load_settings(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&path.display().to_string()), "{msg}");
        assert!(msg.contains("byte offset"), "{msg}");
        assert!(matches!(err, PersistError::Corrupt { line: 2, .. }));
    }

    #[test]
    fn demo_device_loads() {
        let dev = load_device_config(None).unwrap();
        assert!(dev.apps.iter().any(|a| a.system_flag));
    }
}
