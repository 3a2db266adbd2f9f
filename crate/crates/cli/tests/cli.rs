use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;

use level_balance::report::{balanced_fraction_from_rows, parse_batch_csv, BATCH_HEADER, IMBALANCE_HEADER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levelbal"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("levelbal-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: usize) -> PathBuf {
    let ds = dir.join("ds.tsv");
    let out = run(&["gen", "--count", &count.to_string(), "--seed", "9", "--out", s(&ds)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    ds
}

#[test]
fn gen_matches_library_golden() {
    let dir = scratch("golden");
    let ds = dir.join("g.tsv");
    assert!(run(&["gen", "--count", "5", "--seed", "42", "--out", s(&ds)]).status.success());
    let golden = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden/generator_seed42.tsv");
    assert_eq!(std::fs::read_to_string(ds).unwrap(), std::fs::read_to_string(golden).unwrap());
}

#[test]
fn gen_reads_config_file() {
    let dir = scratch("config");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"width": 8, "height": 5, "seed": 3}"#).unwrap();
    let ds = dir.join("ds.tsv");
    assert!(run(&["gen", "--config", s(&cfg), "--count", "3", "--out", s(&ds)]).status.success());
    let text = std::fs::read_to_string(ds).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split('\t').nth(1) == Some("8") && l.split('\t').nth(2) == Some("5")));
}

#[test]
fn measure_writes_csv_and_summary() {
    let dir = scratch("measure");
    let ds = gen(&dir, 30);
    let csv = dir.join("m.csv");
    let fig = dir.join("summary.csv");
    for pair in ["A:B", "A:C"] {
        let out = run(&["measure", "--dataset", s(&ds), "--pair", pair, "--out", s(&csv), "--summary", s(&fig)]);
        assert!(out.status.success());
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some(IMBALANCE_HEADER));
    assert_eq!(text.lines().count(), 31);
    let fig = std::fs::read_to_string(&fig).unwrap();
    let rows: Vec<&str> = fig.lines().collect();
    assert_eq!(rows[0], "setup,initial_imbalance_fraction");
    assert!(rows[1].starts_with("A vs B,") && rows[2].starts_with("A vs C,"));
}

#[test]
fn balance_csv_is_self_consistent() {
    let dir = scratch("balance");
    let ds = gen(&dir, 40);
    let csv = dir.join("b.csv");
    let after = dir.join("after.tsv");
    let out = run(&[
        "balance", "--method", "hillclimb", "--dataset", s(&ds), "--pair", "A:C", "--budget", "30", "--out", s(&csv),
        "--levels-out", s(&after),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some(BATCH_HEADER));
    let rows = parse_batch_csv(&text).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.evals_used <= 30 && r.method == "hillclimb"));
    let frac = balanced_fraction_from_rows(&rows, 0.0).unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(&format!("balanced {frac:.3}")), "{stdout}");

    let panel = run(&["render", "--in", s(&ds), "--after", s(&after), "--pair", "A:C"]);
    assert!(panel.status.success());
    let panel = String::from_utf8(panel.stdout).unwrap();
    assert_eq!(panel.lines().next().unwrap().matches("ABCDEF").count(), 2);
    assert!(panel.contains("alanced, "));
}

#[test]
fn exit_codes() {
    let dir = scratch("codes");
    let ds = gen(&dir, 3);
    let out = dir.join("x.csv");
    let bad_method = run(&["balance", "--method", "anneal", "--dataset", s(&ds), "--out", s(&out)]);
    assert_eq!(bad_method.status.code(), Some(1));
    let bad_pair = run(&["measure", "--dataset", s(&ds), "--pair", "A:Z", "--out", s(&out)]);
    assert_eq!(bad_pair.status.code(), Some(1));
    let missing = run(&["measure", "--dataset", "/nonexistent/ds.tsv", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    let no_peer = run(&["balance", "--method", "external", "--dataset", s(&ds), "--out", s(&out)]);
    assert_eq!(no_peer.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn external_method_without_listener_fails_cleanly() {
    let dir = scratch("nopeer");
    let ds = gen(&dir, 2);
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let out = run(&[
        "balance", "--method", "external", "--dataset", s(&ds), "--out", s(&dir.join("x.csv")), "--peer",
        &format!("127.0.0.1:{port}"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot connect to policy peer"));
}

fn fake_peer(reply: impl Fn(u64) -> String + Send + 'static) -> u16 {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let req: serde_json::Value = serde_json::from_str(&line).unwrap();
            assert_eq!(req["cmd"], "act");
            assert!(req["payload"]["obs"].is_array());
            if writeln!(writer, "{}", reply(req["req_id"].as_u64().unwrap())).is_err() {
                break;
            }
        }
    });
    port
}

#[test]
fn external_method_drives_episodes_through_peer() {
    let dir = scratch("peer");
    let ds = gen(&dir, 4);
    let port = fake_peer(|id| format!(r#"{{"req_id":{id},"ok":true,"data":{{"action":[0,0,5,5]}}}}"#));
    let csv = dir.join("x.csv");
    let out = run(&[
        "balance", "--method", "external", "--dataset", s(&ds), "--out", s(&csv), "--budget", "5", "--peer",
        &format!("127.0.0.1:{port}"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_batch_csv(&std::fs::read_to_string(csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.method == "external" && r.evals_used <= 5));
}

#[test]
fn external_method_rejects_garbled_peer() {
    let dir = scratch("garbled");
    let ds = gen(&dir, 4);
    let port = fake_peer(|_| "hello?".to_string());
    let out = run(&[
        "balance", "--method", "external", "--dataset", s(&ds), "--out", s(&dir.join("x.csv")), "--peer",
        &format!("127.0.0.1:{port}"),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn serve_over_stdio() {
    let mut child = bin()
        .args(["serve", "--variant", "legacy"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"req_id\":1,\"cmd\":\"hello\"}\ngarbage\n{\"req_id\":2,\"cmd\":\"close\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["data"]["action_components"], serde_json::json!([6, 6, 6, 6, 2]));
    assert_eq!(lines[1]["error"]["code"], "E_PARSE");
    assert_eq!(lines[2]["data"]["closed"], "session");
}

#[test]
fn trace_prints_turn_lines() {
    let dir = scratch("trace");
    let ds = gen(&dir, 1);
    let out = run(&["trace", "--in", s(&ds), "--pair", "A:C"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# winner="));
    assert!(text.lines().next().unwrap().starts_with("0\t"));
}
