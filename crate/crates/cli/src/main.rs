//! webxaii - operator tool for the experiment platform.
//!
//! Every command is non-interactive. Exit codes:
//! - 0: success
//! - 1: invalid input (validation errors, rejected users, unknown protocol,
//!   incomplete simulation)
//! - 2: environment failure (unreadable file, port already in use)

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use webxaii_core::config::{has_errors, load_protocol_file, Diagnostic, LoadError, ProtocolSpec};
use webxaii_core::connection::{ConnectionError, PasswordCost, UserImport};
use webxaii_core::events::{export_rows, ExportFormat};
use webxaii_core::platform::{Platform, PlatformError};
use webxaii_core::session::EngineConfig;
use webxaii_core::simulate::{simulate, PolicyKind, SimulationConfig};
use webxaii_core::time::{Clock, SystemClock};
use webxaii_server::ServerConfig;

#[derive(Parser, Debug)]
#[command(name = "webxaii", version, about = "Run and administer XAI user-study protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a protocol file and print one diagnostic per line
    Validate {
        file: PathBuf,
        /// Also warn about media files missing below this directory
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Load every protocol in a directory and serve the participant and admin API
    Serve {
        #[arg(long, env = "WEBXAII_CONFIG_DIR")]
        config_dir: PathBuf,
        /// 0 binds an ephemeral port
        #[arg(long, env = "WEBXAII_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "WEBXAII_HOST", default_value = "0.0.0.0")]
        host: String,
        #[arg(long, env = "WEBXAII_DATA_DIR", default_value = "./data")]
        data_dir: PathBuf,
        #[arg(long, env = "WEBXAII_ASSET_DIR", default_value = "./assets")]
        asset_dir: PathBuf,
        /// Built participant UI bundle; the embedded client is used when unset
        #[arg(long, env = "WEBXAII_UI_DIR")]
        ui_dir: Option<PathBuf>,
        #[arg(long, env = "WEBXAII_ADMIN_TOKEN", hide_env_values = true)]
        admin_token: Option<String>,
        /// Late answers within this window after the deadline still count
        #[arg(long, default_value_t = EngineConfig::default().grace_ms)]
        grace_ms: i64,
    },
    /// Provision or list participant accounts
    Users {
        #[command(subcommand)]
        action: UsersAction,
        #[command(flatten)]
        dirs: Dirs,
    },
    /// Write the results of one protocol as CSV or JSON
    Export {
        #[arg(long)]
        protocol: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dirs: Dirs,
    },
    /// Drive synthetic participants through a protocol on a virtual clock
    Simulate {
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        policy: Policy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Simulated time each participant spends on a view before answering
        #[arg(long, default_value_t = 1000)]
        answer_delay_ms: u64,
        #[arg(long, default_value_t = EngineConfig::default().grace_ms)]
        grace_ms: i64,
    },
}

#[derive(Subcommand, Debug)]
enum UsersAction {
    /// Import a JSON array of {login, access_code, protocol}; all or nothing
    Add {
        #[arg(long)]
        file: PathBuf,
    },
    /// Print login, protocol and session status, tab-separated
    List,
}

#[derive(clap::Args, Debug)]
struct Dirs {
    #[arg(long, global = true, env = "WEBXAII_CONFIG_DIR", default_value = "./config")]
    config_dir: PathBuf,
    #[arg(long, global = true, env = "WEBXAII_DATA_DIR", default_value = "./data")]
    data_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Policy {
    Random,
    AlwaysCorrect,
    AlwaysFirst,
}

impl From<Policy> for PolicyKind {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Random => PolicyKind::Random,
            Policy::AlwaysCorrect => PolicyKind::AlwaysCorrect,
            Policy::AlwaysFirst => PolicyKind::AlwaysFirst,
        }
    }
}

/// A command failure: message for stderr plus the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn environment(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<PlatformError> for Failure {
    fn from(e: PlatformError) -> Self {
        match e {
            PlatformError::Store(_) | PlatformError::Storage(_) => Failure::environment(e.to_string()),
            PlatformError::Connection(ConnectionError::Storage(_)) => Failure::environment(e.to_string()),
            other => Failure::invalid(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Validate { file, assets } => cmd_validate(&file, assets.as_deref()),
        Command::Serve {
            config_dir,
            port,
            host,
            data_dir,
            asset_dir,
            ui_dir,
            admin_token,
            grace_ms,
        } => {
            let engine = EngineConfig { grace_ms, ..EngineConfig::default() };
            let server = ServerConfig { admin_token, asset_dir, ui_dir };
            cmd_serve(&config_dir, &host, port, &data_dir, server, engine)
        }
        Command::Users { action: UsersAction::Add { file }, dirs } => cmd_users_add(&dirs, &file),
        Command::Users { action: UsersAction::List, dirs } => cmd_users_list(&dirs),
        Command::Export { protocol, format, out, dirs } => cmd_export(&dirs, &protocol, format.into(), &out),
        Command::Simulate {
            protocol,
            n,
            policy,
            seed,
            out,
            answer_delay_ms,
            grace_ms,
        } => {
            let mut config = SimulationConfig::new(n, policy.into(), seed);
            config.answer_delay_ms = answer_delay_ms;
            config.engine.grace_ms = grace_ms;
            cmd_simulate(&protocol, &config, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("webxaii: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn print_diagnostics(prefix: &str, diags: &[Diagnostic]) {
    let mut out = std::io::stdout().lock();
    for d in diags {
        let _ = writeln!(out, "{prefix}{d}");
    }
}

fn cmd_validate(file: &Path, assets: Option<&Path>) -> CmdResult {
    match load_protocol_file(file, assets) {
        Ok(parsed) => {
            print_diagnostics("", &parsed.warnings);
            Ok(())
        }
        Err(LoadError::Io(e)) => Err(Failure::environment(format!("{}: {e}", file.display()))),
        Err(LoadError::Invalid(diags)) => {
            print_diagnostics("", &diags);
            Err(Failure::invalid(String::new()))
        }
    }
}

/// Loads every `*.json` protocol of `dir` in file-name order. Diagnostics are
/// printed prefixed with the file name; any error or duplicate id fails.
fn load_config_dir(dir: &Path, asset_dir: Option<&Path>) -> Result<Vec<ProtocolSpec>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::environment(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut specs: Vec<ProtocolSpec> = Vec::new();
    let mut failed = false;
    for path in paths {
        let prefix = format!("{}: ", path.display());
        match load_protocol_file(&path, asset_dir) {
            Ok(parsed) => {
                print_diagnostics(&prefix, &parsed.warnings);
                if specs.iter().any(|s| s.id == parsed.spec.id) {
                    println!("{prefix}ERROR /id duplicate protocol id {:?}", parsed.spec.id);
                    failed = true;
                } else {
                    specs.push(parsed.spec);
                }
            }
            Err(LoadError::Io(e)) => return Err(Failure::environment(format!("{prefix}{e}"))),
            Err(LoadError::Invalid(diags)) => {
                print_diagnostics(&prefix, &diags);
                failed |= has_errors(&diags);
            }
        }
    }
    if failed {
        return Err(Failure::invalid(format!("{}: invalid protocol configuration", dir.display())));
    }
    Ok(specs)
}

/// Opens the persistent platform for the offline admin commands. A missing
/// config directory is tolerated: protocols uploaded through the API are
/// still known from the data directory.
fn open_platform(dirs: &Dirs, cost: PasswordCost) -> Result<Platform, Failure> {
    let specs = if dirs.config_dir.is_dir() {
        load_config_dir(&dirs.config_dir, None)?
    } else {
        Vec::new()
    };
    Ok(Platform::open(&dirs.data_dir, specs, EngineConfig::default(), cost)?)
}

fn cmd_serve(
    config_dir: &Path,
    host: &str,
    port: u16,
    data_dir: &Path,
    server: ServerConfig,
    engine: EngineConfig,
) -> CmdResult {
    let specs = load_config_dir(config_dir, Some(&server.asset_dir))?;
    if specs.is_empty() {
        return Err(Failure::invalid(format!("{}: no protocol files found", config_dir.display())));
    }
    let platform = Platform::open(data_dir, specs, engine, PasswordCost::Standard)?;
    for id in platform.protocol_ids() {
        tracing::info!(protocol = %id, "protocol loaded");
    }
    if server.admin_token.as_deref().is_none_or(str::is_empty) {
        tracing::warn!("WEBXAII_ADMIN_TOKEN is not set; admin routes are disabled");
    }

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::environment(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::environment(format!("cannot bind {host}:{port}: {e}")))?;
        let addr: SocketAddr = listener.local_addr().map_err(|e| Failure::environment(e.to_string()))?;
        let mut stdout = std::io::stdout().lock();
        let _ = writeln!(stdout, "listening on http://{addr}");
        let _ = stdout.flush();
        drop(stdout);
        let app = webxaii_server::router(Arc::new(platform), server);
        webxaii_server::serve(listener, app, shutdown_signal())
            .await
            .map_err(|e| Failure::environment(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutting down");
}

fn error_kind(e: &ConnectionError) -> &'static str {
    match e {
        ConnectionError::DuplicateLogin(_) => "DuplicateLogin",
        ConnectionError::UnknownProtocol { .. } => "UnknownProtocol",
        ConnectionError::InvalidLogin(_) => "InvalidLogin",
        ConnectionError::EmptyAccessCode(_) => "EmptyAccessCode",
        ConnectionError::BadCredentials => "BadCredentials",
        ConnectionError::InvalidToken => "InvalidToken",
        ConnectionError::ExpiredToken => "ExpiredToken",
        ConnectionError::Storage(_) => "Storage",
    }
}

fn cmd_users_add(dirs: &Dirs, file: &Path) -> CmdResult {
    let bytes = std::fs::read(file).map_err(|e| Failure::environment(format!("{}: {e}", file.display())))?;
    let batch: Vec<UserImport> =
        serde_json::from_slice(&bytes).map_err(|e| Failure::invalid(format!("{}: {e}", file.display())))?;
    let platform = open_platform(dirs, PasswordCost::Standard)?;
    match platform.register_users(&batch, SystemClock.now()) {
        Ok(records) => {
            println!("imported {} user(s)", records.len());
            Ok(())
        }
        Err(PlatformError::Users(errors)) => {
            for e in &errors {
                println!("{}\t{e}", error_kind(e));
            }
            Err(Failure::invalid(format!("{} record(s) rejected; nothing was imported", errors.len())))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_users_list(dirs: &Dirs) -> CmdResult {
    let platform = open_platform(dirs, PasswordCost::Standard)?;
    let mut out = std::io::stdout().lock();
    for u in platform.user_listing() {
        let _ = writeln!(out, "{}\t{}\t{}", u.login, u.protocol_id, u.status.as_str());
    }
    Ok(())
}

fn cmd_export(dirs: &Dirs, protocol: &str, format: ExportFormat, out: &Path) -> CmdResult {
    let platform = open_platform(dirs, PasswordCost::Standard)?;
    let body = platform.export(protocol, format)?;
    let rows = export_rows(platform.store(), protocol).len();
    std::fs::write(out, body).map_err(|e| Failure::environment(format!("{}: {e}", out.display())))?;
    println!("{rows}");
    Ok(())
}

fn cmd_simulate(protocol: &Path, config: &SimulationConfig, out: &Path) -> CmdResult {
    let spec = match load_protocol_file(protocol, None) {
        Ok(parsed) => parsed.spec,
        Err(LoadError::Io(e)) => return Err(Failure::environment(format!("{}: {e}", protocol.display()))),
        Err(LoadError::Invalid(diags)) => {
            print_diagnostics(&format!("{}: ", protocol.display()), &diags);
            return Err(Failure::invalid("invalid protocol"));
        }
    };
    let sim = simulate(&spec, config)?;
    let report = &sim.report;
    std::fs::write(out, report.to_json()).map_err(|e| Failure::environment(format!("{}: {e}", out.display())))?;
    println!("{}/{} participants completed", report.completed, report.n);
    if !report.all_completed() {
        for p in report.participants.iter().filter(|p| !p.completed) {
            eprintln!("{}: {}", p.login, p.error.as_deref().unwrap_or("did not reach completion"));
        }
        return Err(Failure::invalid("not every participant completed"));
    }
    Ok(())
}
