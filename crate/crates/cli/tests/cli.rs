use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use adlcoach_core::classifier::{train, Target, TrainConfig};
use adlcoach_core::corpus::{load_corpus, read_survey_records};
use adlcoach_core::domains::LabelSet;
use adlcoach_core::evalharness::{ssa_report, write_ratings_csv, Rating, Transcript};
use adlcoach_core::generation::export_finetune;
use adlcoach_core::profiles::{load_store, FunctioningMap};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

fn adlcoach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adlcoach"))
        .args(args)
        .env_remove("ADLCOACH_LLM_URL")
        .env_remove("ADLCOACH_LLM_KEY")
        .output()
        .expect("binary runs")
}

fn config() -> String {
    data().join("adlcoach.json").display().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_deterministic_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = data().join("corpus/train.jsonl");
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("m{i}.json"))).collect();
    for out in &outs {
        let o = adlcoach(&["train", "--target", "domain", "--corpus", path(&corpus), "--out", path(out), "--seed", "7", "--epochs", "50"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(&outs[0]).unwrap();
    assert_eq!(a, std::fs::read(&outs[1]).unwrap());

    let cfg = TrainConfig { seed: 7, epochs: 50, ..TrainConfig::default() };
    let direct = train(&load_corpus(&corpus, &LabelSet::default()).unwrap(), Target::Domain, &cfg).unwrap();
    let lib_path = dir.path().join("lib.json");
    direct.save(&lib_path).unwrap();
    assert_eq!(a, std::fs::read(lib_path).unwrap());
}

#[test]
fn replay_prints_a_ten_turn_transcript() {
    let o = adlcoach(&["--config", &config(), "replay", "--script", "bathing", "--profile", "3b86"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: Transcript = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(t.turns.len(), 10);
    assert_eq!(t.profile_id, "3b86");
    assert_eq!(t.turns[1].text, "Bathing goes okay for me, mostly.");
    assert!(t.turns.iter().skip(1).step_by(2).all(|x| x.source.is_some()));
}

#[test]
fn eval_classifier_reports_mean_and_range() {
    let corpus = data().join("corpus/train.jsonl");
    let o = adlcoach(&["eval-classifier", "--corpus", path(&corpus), "--runs", "3", "--epochs", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Experiment | Accuracy | F1-weighted | F1-micro | F1-macro");
    let row = regex_lite(lines[1]);
    assert_eq!(row, 4, "{}", lines[1]);

    let o = adlcoach(&["eval-classifier", "--corpus", path(&corpus), "--runs", "2", "--epochs", "10", "--format", "json", "--sequential"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["experiment"]["runs"].as_array().unwrap().len(), 2);
    assert!(v["model"].is_null());
}

/// Counts `d.ddd (d.ddd-d.ddd)` cells in a table row.
fn regex_lite(row: &str) -> usize {
    row.split(" | ")
        .skip(1)
        .filter(|cell| {
            let b = cell.as_bytes();
            b.len() == 19 && b[6] == b'(' && b[12] == b'-' && b[18] == b')'
        })
        .count()
}

#[test]
fn ingest_scrubs_survey_dialogues() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("survey.jsonl");
    std::fs::write(
        &input,
        r#"{"domain":"bathing","ability":"2","age":"65-84","gender":"female","turns":[{"speaker":"assessor","text":"Should I call 612-555-0100 about bathing?","intent":"generic"},{"speaker":"participant","text":"yes","intent":null}]}"#,
    )
    .unwrap();
    let out = dir.path().join("corpus.jsonl");
    let o = adlcoach(&["ingest", "--input", path(&input), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let corpus = load_corpus(&out, &LabelSet::default()).unwrap();
    assert_eq!(corpus.len(), 1);
    assert_eq!(corpus.utterances[0].text, "Should I call [PHONE] about bathing?");
}

#[test]
fn export_finetune_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let dialogues = data().join("corpus/grooming_dialogue.jsonl");
    let out = dir.path().join("cli.jsonl");
    let o = adlcoach(&["--config", &config(), "export-finetune", "--dialogues", path(&dialogues), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lib = dir.path().join("lib.jsonl");
    export_finetune(
        &load_store(&data().join("store")).unwrap(),
        &FunctioningMap::load(&data().join("functioning_map.json")).unwrap(),
        &read_survey_records(&dialogues).unwrap(),
        &lib,
    )
    .unwrap();
    let cli_text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(cli_text, std::fs::read_to_string(lib).unwrap());
    assert_eq!(cli_text.lines().count(), 3);
}

#[test]
fn ssa_report_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let ratings: Vec<Rating> = (0..12)
        .map(|i| Rating {
            rater_id: format!("r{i}"),
            conversation_id: if i % 2 == 0 { "a".into() } else { "b".into() },
            sensibleness: 1 + (i % 6) as u8,
            specificity: 6 - (i % 6) as u8,
            favorite: i % 3 == 0,
            realistic: i % 4 == 0,
        })
        .collect();
    let csv = dir.path().join("ratings.csv");
    write_ratings_csv(&ratings, &csv).unwrap();
    let groups = dir.path().join("groups.json");
    std::fs::write(&groups, r#"{"a":"grounded","b":"grounded"}"#).unwrap();
    let o = adlcoach(&["ssa-report", "--ratings", path(&csv), "--group-by", path(&groups)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let map = [("a".to_string(), "grounded".to_string()), ("b".into(), "grounded".into())].into();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), ssa_report(&ratings, &map).unwrap().to_table());
}

#[test]
fn exit_codes_separate_usage_validation_and_io() {
    let o = adlcoach(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(adlcoach(&[]).status.code(), Some(1));
    assert_eq!(adlcoach(&["--help"]).status.code(), Some(0));

    let o = adlcoach(&["--config", &config(), "replay", "--script", "swimming", "--profile", "3b1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = adlcoach(&["--config", &config(), "replay", "--script", "bathing", "--profile", "nobody"]);
    assert_eq!(o.status.code(), Some(1));
    let o = adlcoach(&["--config", &config(), "replay", "--script", "bathing", "--profile", "3b1", "--threshold", "1.5"]);
    assert_eq!(o.status.code(), Some(1));

    let o = adlcoach(&["train", "--target", "intent", "--corpus", "/no/such/corpus.jsonl", "--out", "/tmp/x.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(adlcoach(&["--config", "/no/such/config.json", "replay", "--script", "bathing", "--profile", "3b1"]).status.code(), Some(2));
    assert_eq!(adlcoach(&["ssa-report", "--ratings", "/no/such.csv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "rater_id,conversation_id,sensibleness,specificity,favorite,realistic\nr,c,9,1,true,false\n").unwrap();
    assert_eq!(adlcoach(&["ssa-report", "--ratings", path(&bad)]).status.code(), Some(1));
}

/// Serves canned completions until the test process exits.
fn completion_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = r#"{"choices":[{"text":" Straight from the endpoint. And more."}]}"#;
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    format!("http://{addr}")
}

#[test]
fn llm_endpoint_comes_from_the_environment() {
    let url = completion_server();
    let o = Command::new(env!("CARGO_BIN_EXE_adlcoach"))
        .args(["--config", &config(), "replay", "--script", "dressing", "--profile", "4d29"])
        .env("ADLCOACH_LLM_URL", &url)
        .env("ADLCOACH_LLM_KEY", "test-key")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: Transcript = serde_json::from_slice(&o.stdout).unwrap();
    let llm: Vec<&str> = t
        .turns
        .iter()
        .filter(|x| x.source == Some(adlcoach_core::dialogue::TurnSource::Llm))
        .map(|x| x.text.as_str())
        .collect();
    assert!(!llm.is_empty());
    assert!(llm.iter().all(|x| *x == "Straight from the endpoint."), "{llm:?}");
}

#[test]
fn chat_answers_each_line() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_adlcoach"))
        .args(["--config", &config(), "chat", "--profile", "3b86"])
        .env_remove("ADLCOACH_LLM_URL")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Tell me about how bathing goes for you.\nHello, nice to meet you!\n/quit\nignored\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert_eq!(lines[0], "[kb] Bathing goes okay for me, mostly.");
    assert!(lines[1].starts_with("[scripted] "));
}

fn get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string())
}

#[test]
fn serve_answers_health_checks() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let mut child = Command::new(env!("CARGO_BIN_EXE_adlcoach"))
        .args(["--config", &config(), "serve", "--bind", &addr])
        .env_remove("ADLCOACH_LLM_URL")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut body = None;
    while Instant::now() < deadline && body.is_none() {
        body = get(&addr, "/health");
        if body.is_none() {
            std::thread::sleep(Duration::from_millis(100));
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let v: serde_json::Value = serde_json::from_str(&body.expect("server came up")).unwrap();
    assert_eq!(v, serde_json::json!({"status": "ok", "profiles": 10}));
}
