//! Blocking HTTP client used by the command-line verbs.

use std::path::PathBuf;

use privdash_core::backup::BackupDestination;
use serde_json::Value;
use thiserror::Error;

use crate::api::AUTH_HEADER;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("server answered {status}: {body}")]
    Status { status: u16, body: String },
}

pub struct Client {
    base: String,
    auth: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str, auth: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client { base: base.trim_end_matches('/').to_string(), auth, agent }
    }

    fn finish(&self, url: &str, res: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<String, ClientError> {
        let transport = |e: ureq::Error| ClientError::Transport { url: url.to_string(), message: e.to_string() };
        let mut res = res.map_err(transport)?;
        let status = res.status().as_u16();
        let body = res.body_mut().read_to_string().map_err(transport)?;
        if status >= 400 {
            return Err(ClientError::Status { status, body });
        }
        Ok(body)
    }

    pub fn get(&self, path: &str) -> Result<String, ClientError> {
        let url = format!("{}{path}", self.base);
        let mut req = self.agent.get(&url);
        if let Some(a) = &self.auth {
            req = req.header(AUTH_HEADER, a);
        }
        self.finish(&url, req.call())
    }

    pub fn send(&self, method: &str, path: &str, body: String) -> Result<String, ClientError> {
        let url = format!("{}{path}", self.base);
        let mut req = match method {
            "PUT" => self.agent.put(&url),
            _ => self.agent.post(&url),
        };
        req = req.header("content-type", "application/json");
        if let Some(a) = &self.auth {
            req = req.header(AUTH_HEADER, a);
        }
        self.finish(&url, req.send(body))
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<String, ClientError> {
        self.send("POST", path, body.to_string())
    }

    pub fn put_json(&self, path: &str, body: &Value) -> Result<String, ClientError> {
        self.send("PUT", path, body.to_string())
    }
}

/// Destination shorthand used on the command line:
/// `default`, `local:<dir>`, `provider:<name>=<endpoint>` or a bare `sim://<host>`.
pub fn parse_destination(spec: &str) -> Result<BackupDestination, String> {
    let dest = if spec == "default" {
        BackupDestination::default_server()
    } else if let Some(path) = spec.strip_prefix("local:") {
        BackupDestination::LocalPath { path: PathBuf::from(path) }
    } else if let Some(rest) = spec.strip_prefix("provider:") {
        let (name, endpoint) = rest.split_once('=').ok_or("expected provider:<name>=<endpoint>")?;
        BackupDestination::Provider { name: name.into(), endpoint: endpoint.into() }
    } else if spec.contains("://") {
        BackupDestination::Provider { name: spec.into(), endpoint: spec.into() }
    } else {
        return Err(format!("unrecognised destination `{spec}`"));
    };
    dest.validate().map_err(|e| e.to_string())?;
    Ok(dest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn destination_shorthand() {
        assert_eq!(parse_destination("default").unwrap(), BackupDestination::default_server());
        assert_eq!(
            parse_destination("local:/tmp/b").unwrap(),
            BackupDestination::LocalPath { path: "/tmp/b".into() }
        );
        assert_eq!(
            parse_destination("provider:box=sim://box").unwrap(),
            BackupDestination::Provider { name: "box".into(), endpoint: "sim://box".into() }
        );
        assert!(parse_destination("local:").is_err());
        assert!(parse_destination("provider:x").is_err());
        assert!(parse_destination("nowhere").is_err());
    }
}
