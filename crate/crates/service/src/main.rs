use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use privdash_core::device::{parse_track, StoreKind};
use privdash_core::tour::Tour;
use privdash_service::api::AppState;
use privdash_service::client::{parse_destination, Client, ClientError};
use privdash_service::config::{FileConfig, ServiceConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "privdash", version, about = "Privacy dashboard engine and simulated phone")]
struct Cli {
    /// Base URL of a running service (client commands only).
    #[arg(long, global = true, env = "PRIVDASH_SERVER", default_value = "http://127.0.0.1:7878")]
    server: String,
    /// Owner passphrase or PIN for guarded operations.
    #[arg(long, global = true, env = "PRIVDASH_AUTH", hide_env_values = true)]
    auth: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Deliver an SMS to the simulated phone.
    SendSms {
        #[arg(long)]
        from: String,
        #[arg(long)]
        body: String,
        /// Receive time in seconds since the epoch (default: device clock).
        #[arg(long)]
        at: Option<u64>,
    },
    /// Move the simulated phone, or replay a `timestamp lat lon` track file.
    SetPosition {
        #[arg(long, allow_hyphen_values = true, required_unless_present = "track")]
        lat: Option<f64>,
        #[arg(long, allow_hyphen_values = true, required_unless_present = "track")]
        lon: Option<f64>,
        #[arg(long)]
        at: Option<u64>,
        #[arg(long, conflicts_with_all = ["lat", "lon", "at"])]
        track: Option<PathBuf>,
    },
    /// Ask for the position as a given app would see it.
    QueryLocation {
        #[arg(long)]
        app: String,
    },
    #[command(subcommand)]
    Guest(GuestCommand),
    #[command(subcommand)]
    Backup(BackupCommand),
    #[command(subcommand)]
    Settings(SettingsCommand),
    #[command(subcommand)]
    Tour(TourCommand),
}

#[derive(Args)]
struct ServeArgs {
    /// TOML file with host, port, device_config and state_path keys.
    #[arg(long, env = "PRIVDASH_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "PRIVDASH_HOST")]
    host: Option<String>,
    #[arg(long, env = "PRIVDASH_PORT")]
    port: Option<u16>,
    /// Device description (JSON). Defaults to the bundled demo phone.
    #[arg(long, env = "PRIVDASH_DEVICE_CONFIG")]
    device_config: Option<PathBuf>,
    /// Settings file.
    #[arg(long = "state", env = "PRIVDASH_STATE")]
    state_path: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GuestCommand {
    Enter {
        #[arg(long)]
        profile: String,
    },
    Exit,
}

#[derive(Subcommand)]
enum BackupCommand {
    Create {
        /// Comma-separated store kinds, or `all`.
        #[arg(long, default_value = "all")]
        stores: String,
        /// `default`, `local:<dir>`, `provider:<name>=<endpoint>` or `sim://<host>`.
        #[arg(long, default_value = "default")]
        dest: String,
        #[arg(long)]
        include_settings: bool,
    },
    Restore {
        /// Archive file to restore from.
        #[arg(long, required_unless_present = "name")]
        file: Option<PathBuf>,
        /// Archive name at `--dest`.
        #[arg(long, conflicts_with = "file")]
        name: Option<String>,
        #[arg(long, default_value = "default")]
        dest: String,
    },
}

#[derive(Subcommand)]
enum SettingsCommand {
    Export {
        /// Write the blob here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Import {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum TourCommand {
    /// Print tour panels; works without a server.
    Show {
        #[arg(long)]
        topic: Option<String>,
    },
}

fn stores_arg(raw: &str) -> Result<Vec<StoreKind>, String> {
    if raw == "all" {
        return Ok(StoreKind::ALL.to_vec());
    }
    raw.split(',').map(|s| s.trim().parse::<StoreKind>().map_err(|e| e.to_string())).collect()
}

fn print_json(text: &str) {
    match serde_json::from_str::<Value>(text) {
        Ok(v) => println!("{}", serde_json::to_string_pretty(&v).unwrap_or_else(|_| text.to_string())),
        Err(_) => println!("{text}"),
    }
}

fn serve(args: ServeArgs) -> Result<(), String> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p).map_err(|e| e.to_string())?,
        None => FileConfig::default(),
    };
    let overrides = FileConfig {
        host: args.host,
        port: args.port,
        device_config: args.device_config,
        state_path: args.state_path,
    };
    let config = ServiceConfig::resolve(file, overrides);
    let engine = privdash_service::open_engine(&config).map_err(|e| e.to_string())?;
    let state = AppState::new(engine, Some(config.state_path.clone()));

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let addr = config.bind_addr();
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| format!("cannot bind {addr}: {e}"))?;
        tracing::info!(%addr, state = %config.state_path.display(), "listening");
        axum::serve(listener, privdash_service::api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}

fn run_client(client: &Client, command: Command) -> Result<String, ClientError> {
    match command {
        Command::Serve(_) | Command::Tour(_) => unreachable!("handled locally"),
        Command::SendSms { from, body, at } => {
            client.post_json("/api/device/sms", &json!({ "from": from, "body": body, "received_at": at }))
        }
        Command::SetPosition { lat, lon, at, track: None } => client.put_json(
            "/api/device/position",
            &json!({ "lat": lat, "lon": lon, "timestamp": at }),
        ),
        Command::SetPosition { track: Some(path), .. } => {
            let text = std::fs::read_to_string(&path).map_err(|e| ClientError::Transport {
                url: path.display().to_string(),
                message: e.to_string(),
            })?;
            let fixes = parse_track(&text).map_err(|e| ClientError::Transport {
                url: path.display().to_string(),
                message: e.to_string(),
            })?;
            let mut last = String::from("null");
            for fix in fixes {
                last = client.put_json("/api/device/position", &serde_json::to_value(fix).expect("fix serializes"))?;
            }
            Ok(last)
        }
        Command::QueryLocation { app } => client.get(&format!("/api/location/query?app={}", encode(&app))),
        Command::Guest(GuestCommand::Enter { profile }) => {
            client.post_json("/api/guest/enter", &json!({ "profile_id": profile }))
        }
        Command::Guest(GuestCommand::Exit) => client.post_json("/api/guest/exit", &json!({})),
        Command::Backup(BackupCommand::Create { stores, dest, include_settings }) => {
            let bad = |message: String| ClientError::Transport { url: "arguments".into(), message };
            let stores = stores_arg(&stores).map_err(bad)?;
            let destination = parse_destination(&dest).map_err(bad)?;
            client.post_json(
                "/api/backup",
                &json!({ "stores": stores, "destination": destination, "include_settings": include_settings }),
            )
        }
        Command::Backup(BackupCommand::Restore { file: Some(file), .. }) => {
            let archive = std::fs::read_to_string(&file).map_err(|e| ClientError::Transport {
                url: file.display().to_string(),
                message: e.to_string(),
            })?;
            client.post_json("/api/restore", &json!({ "archive": archive }))
        }
        Command::Backup(BackupCommand::Restore { file: None, name, dest }) => {
            let destination =
                parse_destination(&dest).map_err(|message| ClientError::Transport { url: "arguments".into(), message })?;
            client.post_json("/api/restore", &json!({ "destination": destination, "name": name }))
        }
        Command::Settings(SettingsCommand::Export { out }) => {
            let blob = client.get("/api/settings/export")?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &blob).map_err(|e| ClientError::Transport {
                        url: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                    Ok(json!({ "written": path }).to_string())
                }
                None => Ok(blob),
            }
        }
        Command::Settings(SettingsCommand::Import { file }) => {
            let blob = std::fs::read_to_string(&file).map_err(|e| ClientError::Transport {
                url: file.display().to_string(),
                message: e.to_string(),
            })?;
            client.send("POST", "/api/settings/import", blob)
        }
    }
}

/// Percent-encodes a query value.
fn encode(raw: &str) -> String {
    raw.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve(args) => match serve(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("privdash: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Tour(TourCommand::Show { topic }) => match Tour::bundled().get(topic.as_deref()) {
            Ok(panels) => {
                for p in panels {
                    println!("[{} #{}] {}\n  {}\n  ({})\n", p.topic, p.order, p.title, p.body, p.illustration_ref);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("privdash: {e}");
                ExitCode::FAILURE
            }
        },
        command => {
            let client = Client::new(&cli.server, cli.auth);
            match run_client(&client, command) {
                Ok(body) => {
                    print_json(&body);
                    ExitCode::SUCCESS
                }
                Err(ClientError::Status { status, body }) => {
                    eprintln!("privdash: server answered {status}");
                    print_json(&body);
                    ExitCode::FAILURE
                }
                Err(e) => {
                    eprintln!("privdash: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
