use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use leads_kit::io::read_jsonl;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_leads-kit"));
    c.env_remove("LEADS_KIT_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn emulate(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["emulate", "--output", path(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn emulate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let a = emulate(&dir, "a.jsonl", &["--seed", "7", "--duration", "3"]);
    let b = emulate(&dir, "b.jsonl", &["--seed", "7", "--duration", "3"]);
    let c = emulate(&dir, "c.jsonl", &["--seed", "8", "--duration", "3"]);
    let (a, b, c) = (
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        std::fs::read(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a, c);
    let trip = read_jsonl(a.as_slice()).unwrap();
    // 60 FPS default, 3 simulated seconds
    assert!((170..=182).contains(&trip.len()), "{}", trip.len());
}

#[test]
fn emulate_to_stdout_honors_target_rate() {
    let o = run(&["emulate", "--duration", "2", "--target-rate", "30"]);
    assert!(o.status.success());
    let trip = read_jsonl(o.stdout.as_slice()).unwrap();
    assert!((56..=62).contains(&trip.len()), "{}", trip.len());
    assert!(stderr(&o).contains("target 30"));
}

#[test]
fn uncapped_reports_fps() {
    let o = run(&["emulate", "--uncapped", "--duration", "0.2"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("FPS"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn replay_writes_one_row_per_intervention() {
    let dir = TempDir::new().unwrap();
    let trip = write(
        &dir,
        "trip.jsonl",
        concat!(
            "{\"t\":0.0,\"front_wheel_speed\":50,\"rear_wheel_speed\":50,\"speed\":50,\"throttle\":0.5,\"brake\":0}\n",
            "{\"t\":0.1,\"front_wheel_speed\":50,\"rear_wheel_speed\":80,\"speed\":50,\"throttle\":0.5,\"brake\":0}\n",
            "{\"t\":0.2,\"front_wheel_speed\":50,\"rear_wheel_speed\":51,\"speed\":50,\"throttle\":0.5,\"brake\":0}\n",
        ),
    );
    let out = dir.path().join("rows.csv");
    let o = run(&["replay", path(&trip), "--output", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rows = csv::Reader::from_path(&out).unwrap();
    let header: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["t", "system", "throttle_scale", "brake_scale", "brake_add", "reason"]
    );
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][1], "none");
    assert_eq!(&rows[1][0], "0.1");
    assert_eq!(&rows[1][1], "dtcs");
    // slip 0.6 against 0.1 cuts the throttle completely
    assert_eq!(&rows[1][2], "0.0");
    assert_eq!(&rows[2][1], "none");
    // ATBS has no steering channel and EBI no obstacle distance
    let err = stderr(&o);
    assert!(err.contains("atbs skipped on 3 frames"), "{err}");
    assert!(err.contains("ebi skipped on 3 frames"), "{err}");
}

#[test]
fn replay_of_emulation_is_stable() {
    let dir = TempDir::new().unwrap();
    let trip = emulate(&dir, "trip.jsonl", &["--duration", "2"]);
    let a = run(&["replay", path(&trip)]);
    let b = run(&["replay", path(&trip)]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let lines = a.stdout.iter().filter(|&&b| b == b'\n').count();
    assert!(lines > 100);
}

#[test]
fn malformed_line_is_a_runtime_error_with_line_number() {
    let dir = TempDir::new().unwrap();
    let trip = write(&dir, "bad.jsonl", "{\"t\":0}\n{\"t\":1}\n{\"t\":2,\"speed\":\n");
    for cmd in ["replay", "analyze"] {
        let o = run(&[cmd, path(&trip)]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    }
    let missing = dir.path().join("nope.jsonl");
    let o = run(&["replay", path(&missing)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{"comm": {"prot": 1}}"#);
    let o = run(&["emulate", "--config", path(&bad), "--duration", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("comm.prot"), "{}", stderr(&o));

    let o = run(&["emulate", "--target-rate", "0", "--duration", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["emulate", "--duration", "abc"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["emulate", "--config", path(&dir.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["fly"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_env_is_the_fallback() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{"pacer": {"target_rate": -1}}"#);
    let o = bin()
        .args(["emulate", "--duration", "1"])
        .env("LEADS_KIT_CONFIG", &bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let good = write(&dir, "good.json", r#"{"pacer": {"target_rate": 20}, "emulation": {"duration": 1}}"#);
    let o = bin()
        .args(["emulate"])
        .env("LEADS_KIT_CONFIG", &good)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let n = read_jsonl(o.stdout.as_slice()).unwrap().len();
    assert!((19..=21).contains(&n), "{n}");

    // an explicit --config wins over the environment
    let o = bin()
        .args(["emulate", "--config", path(&good)])
        .env("LEADS_KIT_CONFIG", &bad)
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn analyze_writes_summary_map_and_laps() {
    let dir = TempDir::new().unwrap();
    let trip = emulate(&dir, "trip.jsonl", &["--duration", "200"]);
    let report = dir.path().join("report");
    let o = run(&["analyze", path(&trip), "--output", path(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    assert!(summary["summary"]["channels"]["speed"]["mean"].as_f64().unwrap() > 40.0);
    let laps = summary["laps"]["laps"].as_array().unwrap();
    // one lap of the default circuit takes about 87 s
    assert_eq!(laps.len(), 2, "{laps:?}");
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("map.geojson")).unwrap()).unwrap();
    assert_eq!(map["geometry"]["type"], "LineString");
    let csv_laps = csv::Reader::from_path(report.join("laps.csv")).unwrap().records().count();
    assert_eq!(csv_laps, laps.len());

    let o = run(&["analyze", path(&trip)]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["laps"], summary["laps"]);
}

#[test]
fn analyze_without_gps_skips_laps() {
    let dir = TempDir::new().unwrap();
    let trip = write(&dir, "trip.jsonl", "{\"t\":0,\"speed\":10}\n{\"t\":1,\"speed\":12}\n");
    let o = run(&["analyze", path(&trip)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(doc["laps"].is_null());
    assert!(stderr(&o).contains("no GPS"));
}

#[test]
fn infer_writes_frames_and_provenance_sidecar() {
    let dir = TempDir::new().unwrap();
    let trip = write(
        &dir,
        "trip.jsonl",
        concat!(
            "{\"t\":0,\"front_wheel_speed\":10,\"rear_wheel_speed\":12}\n",
            "{\"t\":1,\"front_wheel_speed\":20,\"rear_wheel_speed\":18,\"speed\":19}\n",
            "{\"t\":2,\"front_wheel_speed\":30,\"rear_wheel_speed\":30}\n",
        ),
    );
    let out = dir.path().join("out.jsonl");
    let o = run(&[
        "infer",
        path(&trip),
        "--inference",
        "safe_speed,mileage_by_speed",
        "--output",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let inferred = read_jsonl(BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    let speeds: Vec<_> = inferred.frames().iter().map(|f| f.speed).collect();
    assert_eq!(speeds[1], Some(19.0));
    assert!(speeds.iter().all(Option::is_some));
    assert!(inferred.frames().iter().all(|f| f.mileage.is_some()));

    let side = dir.path().join("out.jsonl.provenance.json");
    let prov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(side).unwrap()).unwrap();
    assert_eq!(prov["speed"][0]["inference"], "safe_speed");
    assert_eq!(prov["speed"][0]["frames"], 2);
    assert_eq!(prov["mileage"][0]["frames"], 3);

    let o = run(&["infer", path(&trip)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["infer", path(&trip), "--inference", "teleport"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["infer", path(&trip), "--inference", "safe_speed", "--cache-limit", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pace_bench_prints_checkpoints() {
    let o = run(&["pace-bench", "--rates", "30,60"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("target_rate,t,rate,frames,avg_net_delay"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 8);
    for row in rows.iter().filter(|r| r[1] == "30") {
        let target: f64 = row[0].parse().unwrap();
        let rate: f64 = row[2].parse().unwrap();
        assert!((rate - target).abs() <= 0.02 * target, "{row:?}");
    }
}

fn config_with_port(dir: &TempDir, port: u16, separator: &str) -> PathBuf {
    write(
        dir,
        &format!("comm-{port}.json"),
        &format!(r#"{{"comm": {{"port": {port}, "separator": "{separator}"}}, "pacer": {{"target_rate": 200}}}}"#),
    )
}

fn serve_and_receive(separator: &str) {
    let dir = TempDir::new().unwrap();
    let serve_cfg = config_with_port(&dir, 0, separator);
    let mut server = bin()
        .args(["serve", "--config", path(&serve_cfg), "--frames", "100", "--wait-clients", "1"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(server.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("serve: listening on ").expect(&line).to_string();
    let port: u16 = addr.rsplit(':').next().unwrap().parse().unwrap();
    std::thread::spawn(move || for _ in err.lines() {});

    let client_cfg = config_with_port(&dir, port, separator);
    let out = dir.path().join("received.jsonl");
    let o = run(&["client", "--config", path(&client_cfg), "--output", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(server.wait().unwrap().success());

    let trip = read_jsonl(BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(trip.len(), 100);
    assert!(trip.frames().iter().all(|f| f.speed.is_some()));
}

#[test]
fn serve_and_client_loopback() {
    serve_and_receive(";");
}

#[test]
fn serve_and_client_with_custom_separator() {
    serve_and_receive("|");
}

#[test]
fn client_against_dead_port_fails() {
    let dir = TempDir::new().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = config_with_port(&dir, port, ";");
    let o = run(&["client", "--config", path(&cfg), "--frames", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
    let o = run(&["emulate", "--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for flag in ["--config", "--seed", "--duration", "--target-rate", "--output"] {
        assert!(text.contains(flag), "{flag}");
    }
}
