//! Exit codes and output of each subcommand.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use webxaii_core::config::parse_protocol;
use webxaii_core::connection::PasswordCost;
use webxaii_core::platform::Platform;
use webxaii_core::session::EngineConfig;
use webxaii_core::simulate::{
    drive_participant, participant_access_code, participant_login, participant_rng, InProcess, PolicyKind,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/case-study")
}

fn webxaii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webxaii"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("WEBXAII_CONFIG_DIR")
        .env_remove("WEBXAII_DATA_DIR")
        .output()
        .expect("run webxaii")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8(bytes.to_vec()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A config directory holding the four case-study protocols.
fn config_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for c in ["A", "B", "C", "D"] {
        let name = format!("protocol-{c}.json");
        std::fs::copy(fixtures().join(&name), dir.path().join(name)).unwrap();
    }
    dir
}

#[test]
fn validate_reports_errors_and_warnings_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"id":"x","title":"t","completion":{"message":"m"},"elements":[]}"#).unwrap();
    let out = webxaii(&["validate", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(text(&out.stdout), "ERROR /elements must be non-empty\n");

    let out = webxaii(&["validate", p(&dir.path().join("absent.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let empty_assets = tempfile::tempdir().unwrap();
    let out = webxaii(&["validate", p(&fixtures().join("protocol-A.json")), "--assets", p(empty_assets.path())]);
    assert_eq!(out.status.code(), Some(0));
    let lines = text(&out.stdout);
    assert!(!lines.is_empty());
    for line in lines.lines() {
        assert!(line.starts_with("WARNING /elements/"), "{line}");
    }
}

#[test]
fn serve_refuses_invalid_config_and_busy_ports() {
    let data = tempfile::tempdir().unwrap();
    let broken = config_dir();
    std::fs::write(
        broken.path().join("broken.json"),
        r#"{"id":"x","title":"t","completion":{"message":"m"},"elements":[]}"#,
    )
    .unwrap();
    let out = webxaii(&["serve", "--config-dir", p(broken.path()), "--data-dir", p(data.path()), "--port", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("broken.json: ERROR /elements must be non-empty"), "{stdout}");

    let good = config_dir();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = webxaii(&[
        "serve",
        "--config-dir",
        p(good.path()),
        "--data-dir",
        p(data.path()),
        "--host",
        "127.0.0.1",
        "--port",
        &port,
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn serve_binds_an_ephemeral_port_and_serves_all_protocols() {
    let config = config_dir();
    let data = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_webxaii"))
        .args(["serve", "--host", "127.0.0.1", "--port", "0", "--config-dir", p(config.path()), "--data-dir", p(data.path())])
        .env("WEBXAII_ADMIN_TOKEN", "t0ken")
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let base = lines
        .by_ref()
        .map(Result::unwrap)
        .find_map(|l| l.strip_prefix("listening on ").map(String::from))
        .expect("bound address");
    assert!(!base.ends_with(":0"));
    let status: Value = reqwest::blocking::Client::new()
        .get(format!("{base}/api/admin/status"))
        .header("x-admin-token", "t0ken")
        .send()
        .unwrap()
        .json()
        .unwrap();
    let _ = child.kill();
    let _ = child.wait();
    assert_eq!(status["protocols"].as_array().unwrap().len(), 4);
}

#[test]
fn users_import_is_checked_and_listed() {
    let config = config_dir();
    let data = tempfile::tempdir().unwrap();
    let users = fixtures().join("users.json");
    let dirs = ["--config-dir", p(config.path()), "--data-dir", p(data.path())];
    let run = |args: &[&str]| webxaii(&[args, &dirs].concat());

    let out = run(&["users", "add", "--file", p(&users)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout), "imported 40 user(s)\n");

    let out = run(&["users", "add", "--file", p(&users)]);
    assert_eq!(out.status.code(), Some(1));
    let lines: Vec<String> = text(&out.stdout).lines().map(String::from).collect();
    assert_eq!(lines.len(), 40);
    assert!(lines.iter().all(|l| l.starts_with("DuplicateLogin\t")));

    let unknown = data.path().join("unknown.json");
    std::fs::write(&unknown, r#"[{"login":"z1","access_code":"c","protocol":"protocol-Z"}]"#).unwrap();
    let out = run(&["users", "add", "--file", p(&unknown)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).starts_with("UnknownProtocol\t"));

    let out = run(&["users", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let listing = text(&out.stdout);
    let rows: Vec<Vec<&str>> = listing.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows[0], ["u001", "protocol-A", "not_started"]);
    for c in ["A", "B", "C", "D"] {
        let group = rows.iter().filter(|r| r[1] == format!("protocol-{c}")).count();
        assert_eq!(group, 10, "protocol {c}");
    }
}

#[test]
fn export_writes_rows_for_completed_sessions() {
    let config = config_dir();
    let data = tempfile::tempdir().unwrap();
    {
        let spec = parse_protocol(&std::fs::read(fixtures().join("protocol-A.json")).unwrap()).unwrap().spec;
        let platform = Platform::open(data.path(), vec![spec.clone()], EngineConfig::default(), PasswordCost::Fast).unwrap();
        let login = participant_login(0);
        let code = participant_access_code(0);
        let user = webxaii_core::connection::UserImport {
            login: login.clone(),
            access_code: code.clone(),
            protocol: spec.id.clone(),
        };
        platform.register_users(&[user], webxaii_core::time::Timestamp::from_millis(0)).unwrap();
        let mut api = InProcess::new(&platform);
        let mut rng = participant_rng(1, 0);
        drive_participant(&mut api, &spec, &login, &code, PolicyKind::Random, &mut rng, 500).unwrap();
    }
    let dirs = ["--config-dir", p(config.path()), "--data-dir", p(data.path())];
    let export = |protocol: &str, format: &str, out: &Path| {
        webxaii(&[&["export", "--protocol", protocol, "--format", format, "--out", p(out)][..], &dirs].concat())
    };

    let csv_out = data.path().join("a.csv");
    let out = export("protocol-A", "csv", &csv_out);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout), "11\n");
    assert_eq!(std::fs::read_to_string(&csv_out).unwrap().lines().count(), 12);

    let json_out = data.path().join("a.json");
    let out = export("protocol-A", "json", &json_out);
    assert_eq!(text(&out.stdout), "11\n");
    let rows: Value = serde_json::from_slice(&std::fs::read(&json_out).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 11);

    let empty_out = data.path().join("b.csv");
    let out = export("protocol-B", "csv", &empty_out);
    assert_eq!(text(&out.stdout), "0\n");
    let body = std::fs::read_to_string(&empty_out).unwrap();
    assert_eq!(body.lines().count(), 1, "header only: {body}");

    let out = export("protocol-Z", "csv", &data.path().join("z.csv"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_rejects_invalid_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let report = dir.path().join("r.json");
    let out = webxaii(&["simulate", "--protocol", p(&bad), "--n", "2", "--policy", "random", "--seed", "1", "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!report.exists());

    let out = webxaii(&["simulate", "--protocol", p(&bad), "--n", "2", "--policy", "sometimes", "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit with 2");
}
