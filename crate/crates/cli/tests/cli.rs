use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn frisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frisim")).args(args).output().expect("binary runs")
}

fn small(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> =
        ["--set", "ris.elements=4", "--set", "episode.slots=10"].iter().map(|s| s.to_string()).collect();
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_into(dir: &Path, seed: &str) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run".to_string()];
    args.extend(small(&["--seed", seed, "--optimizer", "random", "--budget", "8", "--out", out]));
    frisim(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn missing_config_exits_with_code_two() {
    let out = frisim(&["validate-config", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/scenario.toml"));
    let out = frisim(&["validate-config", "--set", "covert.epsilon=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("covert.epsilon"));
}

#[test]
fn validate_prints_digest() {
    let out = frisim(&["validate-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let digest = text.trim().strip_prefix("ok ").expect("ok <digest>");
    assert_eq!(digest.len(), 64);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_into(a.path(), "7").status.success());
    assert!(run_into(b.path(), "7").status.success());
    for f in ["episode.csv", "history.csv", "resolved_config.toml", "summary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn summary_agrees_with_episode_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_into(dir.path(), "3").status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("episode.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["slot", "R_b", "R_c", "xi_star", "c1_ok", "reward"]);
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|x| x.parse::<f64>().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 10);
    let n = rows.len() as f64;
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let ep = &summary["episode"];
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / n;
    assert!((mean(1) - ep["avg_rate_bob"].as_f64().unwrap()).abs() < 1e-9);
    assert!((mean(2) - ep["avg_rate_carol"].as_f64().unwrap()).abs() < 1e-9);
    assert!((mean(5) - ep["mean_reward"].as_f64().unwrap()).abs() < 1e-9);
    assert!((mean(4) - ep["c1_fraction"].as_f64().unwrap()).abs() < 1e-9);
    assert_eq!(summary["optimization"]["evaluations"], 8);

    let config = std::fs::read_to_string(dir.path().join("resolved_config.toml")).unwrap();
    assert!(config.contains("elements = 4  # published default") || config.contains("elements = 4  # simulator default"));
    assert!(config.lines().filter(|l| l.contains('=')).all(|l| l.contains("  # ")));
}

#[test]
fn single_point_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["sweep".to_string()];
    args.extend(small(&["--param", "covert.epsilon", "--values", "0.1", "--seeds", "1", "--out", out]));
    let status = frisim(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(rdr.records().count(), 1);
    let mut rdr = csv::Reader::from_path(dir.path().join("points.csv")).unwrap();
    assert_eq!(rdr.records().count(), 1);
}

#[test]
fn fit_table_covers_grid() {
    let out = frisim(&["fit-table", "--theta-step", "90", "--iota-step", "45"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}

#[test]
fn stdio_serve_speaks_the_protocol() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_frisim"))
        .args(["serve", "--stdio", "--set", "ris.elements=4", "--set", "episode.slots=10"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"cmd\":\"hello\",\"seq\":1}\n{\"cmd\":\"reset\",\"seq\":2}\n{\"cmd\":\"close\",\"seq\":3}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["version"], "frisim/1");
    assert_eq!(lines[0]["dims"]["action"], 19);
    assert_eq!(lines[2]["closed"], true);
}

#[test]
fn tcp_serve_reports_its_port() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_frisim"))
        .args(["serve", "--tcp", "0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut first = String::new();
    stderr.read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").expect("listening line").to_string();
    let result = (|| {
        let stream = TcpStream::connect(&addr)?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        writer.write_all(b"{\"cmd\":\"hello\",\"seq\":5}\n")?;
        let mut hello = String::new();
        reader.read_line(&mut hello)?;
        writer.write_all(b"{\"cmd\":\"close\",\"seq\":6}\n")?;
        let mut closed = String::new();
        reader.read_line(&mut closed)?;
        std::io::Result::Ok((hello, closed))
    })();
    child.kill().ok();
    child.wait().ok();
    let (hello, closed) = result.unwrap();
    let hello: serde_json::Value = serde_json::from_str(&hello).unwrap();
    assert_eq!(hello["seq"], 5);
    assert_eq!(hello["version"], "frisim/1");
    let closed: serde_json::Value = serde_json::from_str(&closed).unwrap();
    assert_eq!(closed["closed"], true);
}
