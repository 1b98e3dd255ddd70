//! Line-delimited JSON bridge to a [`frisim_core::env::Env`].
//!
//! Each request is one JSON object on its own line, tagged by `cmd`:
//!
//! ```text
//! {"seq":1,"cmd":"hello"}
//! {"seq":2,"cmd":"reset","seed":7}
//! {"seq":3,"cmd":"step","action":[...]}
//! {"seq":4,"cmd":"close"}
//! ```
//!
//! Every request gets exactly one response line echoing its `seq`. Failures
//! are reported as `{"seq":n,"error":{"code":..,"msg":..}}` and leave the
//! session and environment untouched. Floats are written with 17
//! significant digits so values survive the round trip bit-exactly;
//! non-finite floats cannot be encoded.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use frisim_core::config::ScenarioConfig;
use frisim_core::env::{Env, EnvError, StepInfo};
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "frisim/1";

/// Client requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Hello {
        seq: u64,
    },
    Reset {
        seq: u64,
        /// Defaults to the scenario seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Step {
        seq: u64,
        action: Vec<f64>,
    },
    Close {
        seq: u64,
    },
}

impl Request {
    pub fn seq(&self) -> u64 {
        match *self {
            Request::Hello { seq } | Request::Reset { seq, .. } | Request::Step { seq, .. } | Request::Close { seq } => seq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCode {
    /// Malformed JSON or an unknown / incomplete request.
    Parse,
    /// Action vector of the wrong length.
    Dim,
    /// Step after the episode finished.
    Episode,
    /// Non-finite action component.
    Action,
    /// Simulation failure.
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub msg: String,
    /// Byte offset of a parse error within the line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub action: usize,
}

/// Counters reported when a session ends.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub requests: u64,
    pub errors: u64,
    pub resets: u64,
    pub steps: u64,
    pub episodes_completed: u64,
    /// Ended by `close` rather than end of input.
    pub closed: bool,
}

/// Server responses. Variants are distinguished by their fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        error: ErrorBody,
    },
    Step {
        seq: u64,
        state: Vec<f64>,
        reward: f64,
        done: bool,
        info: BTreeMap<String, Value>,
    },
    Hello {
        seq: u64,
        version: String,
        config_digest: String,
        dims: Dims,
    },
    Reset {
        seq: u64,
        state: Vec<f64>,
        dims: Dims,
    },
    Closed {
        seq: u64,
        closed: bool,
        summary: SessionSummary,
    },
}

impl Response {
    pub fn seq(&self) -> Option<u64> {
        match *self {
            Response::Error { seq, .. } => seq,
            Response::Step { seq, .. }
            | Response::Hello { seq, .. }
            | Response::Reset { seq, .. }
            | Response::Closed { seq, .. } => Some(seq),
        }
    }

    fn error(seq: Option<u64>, code: ErrorCode, msg: impl Into<String>) -> Self {
        Response::Error { seq, error: ErrorBody { code, msg: msg.into(), offset: None } }
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("cannot encode: {0}")]
    Encode(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
}

/// Writes every float as `{:.16e}` and refuses non-finite values. Messages
/// never contain `null`, and serde_json writes non-finite floats as `null`,
/// so `null` is refused as well.
#[derive(Debug, Clone, Copy, Default)]
struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_null<W: ?Sized + Write>(&mut self, _writer: &mut W) -> io::Result<()> {
        Err(io::Error::new(io::ErrorKind::InvalidData, "null or non-finite float"))
    }

    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("non-finite float {value}")));
        }
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `msg` as one compact JSON line (without the newline).
pub fn encode<T: Serialize>(msg: &T) -> Result<String, CodecError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    msg.serialize(&mut ser).map_err(|e| CodecError::Encode(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Parses one JSON line into `T`.
pub fn decode<T: serde::de::DeserializeOwned>(line: &str) -> Result<T, CodecError> {
    serde_json::from_str(line).map_err(|e| CodecError::Parse { offset: byte_offset(line, &e), msg: e.to_string() })
}

/// Byte offset of a serde_json error position within a single-line input.
fn byte_offset(text: &str, e: &serde_json::Error) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
    (line_start + e.column().saturating_sub(1)).min(text.len())
}

/// Hex SHA-256 of the scenario's canonical JSON encoding.
pub fn config_digest(cfg: &ScenarioConfig) -> String {
    let text = encode(cfg).expect("scenario configs are finite");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Flat `info` object of a step response.
pub fn info_map(info: &StepInfo) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    put("slot", info.slot.into());
    put("rate_bob", info.rate_bob.into());
    put("rate_carol", info.rate_carol.into());
    put("avg_rate_bob", info.avg_rate_bob.into());
    put("avg_rate_carol", info.avg_rate_carol.into());
    put("beta", info.beta.into());
    put("lambda0", info.covert.lambda0.into());
    put("lambda1", info.covert.lambda1.into());
    put("kl01", info.covert.kl01.into());
    put("kl10", info.covert.kl10.into());
    put("xi_star", info.covert.xi_star.into());
    put("c1_ok", info.covert.c1_ok.into());
    put("public_ok", info.public_ok.into());
    put("distance_ab", info.distance_ab.into());
    put("projected", info.flags.any().into());
    m
}

/// One protocol session bound to its own environment.
#[derive(Debug)]
pub struct Session {
    env: Env,
    digest: String,
    summary: SessionSummary,
}

impl Session {
    pub fn new(env: Env) -> Self {
        let digest = config_digest(env.config());
        Self { env, digest, summary: SessionSummary::default() }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn summary(&self) -> SessionSummary {
        self.summary
    }

    fn dims(&self) -> Dims {
        Dims { state: self.env.state_dim(), action: self.env.action_dim() }
    }

    /// Handles one request line. Returns the response and whether the
    /// session should end.
    pub fn handle_line(&mut self, line: &str) -> (Response, bool) {
        self.summary.requests += 1;
        let (response, close) = match parse_request(line) {
            Ok(req) => self.handle(req),
            Err(resp) => (resp, false),
        };
        if matches!(response, Response::Error { .. }) {
            self.summary.errors += 1;
        }
        (response, close)
    }

    pub fn handle(&mut self, req: Request) -> (Response, bool) {
        match req {
            Request::Hello { seq } => (
                Response::Hello {
                    seq,
                    version: PROTOCOL_VERSION.to_string(),
                    config_digest: self.digest.clone(),
                    dims: self.dims(),
                },
                false,
            ),
            Request::Reset { seq, seed } => {
                let seed = seed.unwrap_or(self.env.config().seed);
                let state = self.env.reset(seed).observation();
                self.summary.resets += 1;
                (Response::Reset { seq, state, dims: self.dims() }, false)
            }
            Request::Step { seq, action } => match self.env.step_slice(&action) {
                Ok(tr) => {
                    self.summary.steps += 1;
                    if tr.done {
                        self.summary.episodes_completed += 1;
                    }
                    let resp = Response::Step {
                        seq,
                        state: tr.state.observation(),
                        reward: tr.reward,
                        done: tr.done,
                        info: info_map(&tr.info),
                    };
                    (resp, false)
                }
                Err(e) => {
                    let code = match e {
                        EnvError::ActionDim { .. } => ErrorCode::Dim,
                        EnvError::EpisodeFinished => ErrorCode::Episode,
                        EnvError::NonFiniteAction { .. } => ErrorCode::Action,
                        EnvError::Config(_) | EnvError::Model(_) => ErrorCode::Internal,
                    };
                    (Response::error(Some(seq), code, e.to_string()), false)
                }
            },
            Request::Close { seq } => {
                self.summary.closed = true;
                (Response::Closed { seq, closed: true, summary: self.summary }, true)
            }
        }
    }
}

/// Decodes a request line, or builds the error response for it.
pub fn parse_request(line: &str) -> Result<Request, Response> {
    let value: Value = serde_json::from_str(line).map_err(|e| Response::Error {
        seq: None,
        error: ErrorBody { code: ErrorCode::Parse, msg: e.to_string(), offset: Some(byte_offset(line, &e)) },
    })?;
    let seq = value.get("seq").and_then(Value::as_u64);
    if !value.is_object() {
        return Err(Response::error(seq, ErrorCode::Parse, "request must be a JSON object"));
    }
    if value.get("cmd").and_then(Value::as_str) == Some("step") {
        if let Some(items) = value.get("action").and_then(Value::as_array) {
            if items.iter().any(Value::is_null) {
                return Err(Response::error(seq, ErrorCode::Action, "action contains null (non-finite) entries"));
            }
        }
    }
    Request::deserialize(value).map_err(|e| Response::error(seq, ErrorCode::Parse, e.to_string()))
}

/// Serves one session until `close` or end of input. Blank lines are
/// skipped. Returns the session counters.
pub fn serve<R: BufRead, W: Write>(env: Env, input: R, mut output: W) -> io::Result<SessionSummary> {
    let mut session = Session::new(env);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, close) = session.handle_line(&line);
        let text = encode(&response).unwrap_or_else(|e| {
            encode(&Response::error(response.seq(), ErrorCode::Internal, e.to_string())).expect("error responses encode")
        });
        output.write_all(text.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
        if close {
            break;
        }
    }
    Ok(session.summary())
}
