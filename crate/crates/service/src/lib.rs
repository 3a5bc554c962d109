//! HTTP service and CLI plumbing around [`privdash_core::Engine`].

pub mod api;
pub mod client;
pub mod config;
pub mod persist;

use privdash_core::Engine;
use tokio::net::TcpListener;

use crate::api::AppState;
use crate::config::ServiceConfig;
use crate::persist::PersistError;

/// Loads the device and any saved settings. A corrupt settings file is an
/// error; it is never overwritten with defaults.
pub fn open_engine(config: &ServiceConfig) -> Result<Engine, PersistError> {
    let device = persist::load_device_config(config.device_config.as_deref())?;
    let settings = persist::load_settings(&config.state_path)?.unwrap_or_default();
    Ok(Engine::new(device, settings))
}

pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, api::router(state)).await
}
