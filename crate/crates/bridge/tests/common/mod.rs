//! Helpers shared by the protocol tests and the acceptance suite.

#![allow(dead_code)]

use std::path::PathBuf;

use frisim_bridge::{serve, ErrorCode, Response};
use frisim_core::config::ScenarioConfig;
use frisim_core::env::Env;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../bridge/tests/golden")
}

pub fn golden_env() -> Env {
    let text = std::fs::read_to_string(golden_dir().join("scenario.toml")).expect("golden scenario");
    Env::new(ScenarioConfig::from_toml(&text).expect("golden scenario parses")).expect("golden env")
}

/// Replays the recorded requests and returns `(produced, recorded)`
/// response transcripts. With `FRISIM_BLESS=1` the recording is rewritten
/// first.
pub fn replay_golden() -> (String, String) {
    let requests = std::fs::read(golden_dir().join("requests.jsonl")).expect("golden requests");
    let mut out = Vec::new();
    serve(golden_env(), requests.as_slice(), &mut out).expect("in-memory io");
    let produced = String::from_utf8(out).expect("responses are UTF-8");
    let path = golden_dir().join("responses.jsonl");
    if std::env::var("FRISIM_BLESS").is_ok_and(|v| v == "1") {
        std::fs::write(&path, &produced).expect("write golden responses");
    }
    let recorded = std::fs::read_to_string(&path).expect("golden responses; bless with FRISIM_BLESS=1");
    (produced, recorded)
}

const TEMPLATES: [&str; 6] = [
    r#"{"cmd":"hello","seq":1}"#,
    r#"{"cmd":"reset","seq":2,"seed":3}"#,
    r#"{"cmd":"reset","seq":4}"#,
    r#"{"cmd":"step","seq":5,"action":[0,0,0,0,1.5,1.5,0.9,0,0,0,0,0,0,0,0,0,0,0,0]}"#,
    r#"{"cmd":"step","seq":6,"action":[1,2,3]}"#,
    r#"{"cmd":"close","seq":7}"#,
];

const TOKENS: [&str; 16] = [
    "{", "}", "[", "]", ",", ":", "\"", "null", "true", "1e999", "-0", "\"cmd\"", "\"seq\"", "\"step\"", "NaN", "\\u0000",
];

/// One random protocol line: a valid request, a mutated one, a token soup
/// or raw bytes (lossily decoded).
pub fn fuzz_line(rng: &mut ChaCha8Rng) -> String {
    let base = TEMPLATES.choose(rng).unwrap().to_string();
    match rng.random_range(0..6) {
        0 => base,
        1 => {
            let cut = rng.random_range(0..base.len());
            base[..cut].to_string()
        }
        2 => {
            let mut bytes = base.into_bytes();
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random_range(0x20..0x7f);
            }
            String::from_utf8_lossy(&bytes).into_owned()
        }
        3 => {
            let seq = rng.random_range(0..u64::MAX);
            let n = rng.random_range(0..40);
            let action: Vec<String> = (0..n)
                .map(|_| match rng.random_range(0..8) {
                    0 => "null".to_string(),
                    1 => "1e400".to_string(),
                    2 => "\"x\"".to_string(),
                    _ => format!("{}", rng.random_range(-1e3..1e3)),
                })
                .collect();
            format!(r#"{{"cmd":"step","seq":{seq},"action":[{}]}}"#, action.join(","))
        }
        4 => (0..rng.random_range(1..12)).map(|_| *TOKENS.choose(rng).unwrap()).collect(),
        _ => {
            let bytes: Vec<u8> = (0..rng.random_range(1..64)).map(|_| rng.random()).collect();
            String::from_utf8_lossy(&bytes).replace(['\n', '\r'], " ")
        }
    }
}

/// Seq a well-formed JSON object carries, if any.
pub fn line_seq(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("seq")?.as_u64()
}

/// Runs `n` fuzz lines through a fresh session; returns the number of
/// typed error responses. Panics on any contract breach.
pub fn fuzz_session(seed: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines: Vec<String> = Vec::with_capacity(n);
    while lines.len() < n {
        let l = fuzz_line(&mut rng);
        // `close` ends a session, so keep the stream running past it.
        if !l.trim().is_empty() && !l.contains("close") {
            lines.push(l);
        }
    }
    let input = lines.join("\n");
    let mut out = Vec::new();
    let summary = serve(golden_env(), input.as_bytes(), &mut out).expect("in-memory io");
    let text = String::from_utf8(out).expect("responses are UTF-8");
    let responses: Vec<&str> = text.lines().collect();
    assert_eq!(responses.len(), n, "one response per request line");
    assert_eq!(summary.requests as usize, n);
    let mut errors = 0;
    for (req, resp) in lines.iter().zip(&responses) {
        let r: Response = frisim_bridge::decode(resp).unwrap_or_else(|e| panic!("undecodable response {resp}: {e}"));
        match &r {
            Response::Error { seq, error } => {
                errors += 1;
                assert!(matches!(
                    error.code,
                    ErrorCode::Parse | ErrorCode::Dim | ErrorCode::Episode | ErrorCode::Action
                ));
                if let Some(s) = line_seq(req) {
                    assert_eq!(*seq, Some(s), "{req} -> {resp}");
                }
            }
            other => assert_eq!(other.seq(), line_seq(req), "{req} -> {resp}"),
        }
    }
    assert_eq!(errors as u64, summary.errors);
    errors
}
