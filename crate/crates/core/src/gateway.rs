//! Newline-delimited JSON protocol exposing [`BalancingEnv`] to external trainers.
//!
//! Each request is one JSON object per line:
//! `{"req_id": 1, "cmd": "reset", "payload": {...}, "slot": 0}`.
//! Every request gets exactly one response line, in order:
//! `{"req_id": 1, "ok": true, "data": {...}}` or
//! `{"req_id": 1, "ok": false, "error": {"code": "E_STATE", "message": "..."}}`.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::balance::derive_seed;
use crate::env::{decode, ActionSpaceVariant, BalancingEnv, EnvConfig, EnvError, Observation, StepInfo, SwapAction};
use crate::level::{generate_level, GeneratorConfig, Level, LevelDataset, LevelRecord};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot connect to policy peer {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("peer protocol error: {0}")]
    Protocol(String),
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where `reset` takes levels from when the request does not carry one.
#[derive(Debug, Clone)]
pub enum LevelSource {
    Dataset(Arc<LevelDataset>),
    Generator(GeneratorConfig),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub env: EnvConfig,
    pub levels: LevelSource,
    width: usize,
    height: usize,
}

impl GatewayConfig {
    pub fn new(env: EnvConfig, levels: LevelSource) -> Result<Self, GatewayError> {
        env.validate()?;
        let (width, height) = match &levels {
            LevelSource::Dataset(ds) => {
                let first = ds
                    .records
                    .first()
                    .ok_or_else(|| GatewayError::Config("dataset is empty".into()))?;
                let dims = (first.level.width(), first.level.height());
                if ds.iter().any(|r| (r.level.width(), r.level.height()) != dims) {
                    return Err(GatewayError::Config("dataset levels differ in size".into()));
                }
                dims
            }
            LevelSource::Generator(g) => {
                g.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
                (g.width, g.height)
            }
        };
        Ok(Self {
            env,
            levels,
            width,
            height,
        })
    }

    pub fn action_components(&self) -> Vec<usize> {
        self.env.variant.components(self.height, self.width)
    }

    fn describe(&self, full: bool) -> Value {
        let mut v = json!({
            "protocol_version": PROTOCOL_VERSION,
            "variant": self.env.variant.name(),
            "action_components": self.action_components(),
            "obs_shape": [self.height, self.width],
        });
        if full {
            let extra = json!({
                "action_order": match self.env.variant {
                    ActionSpaceVariant::SwapWide => json!(["y1", "x1", "y2", "x2"]),
                    ActionSpaceVariant::SwapWideLegacy => json!(["y1", "x1", "y2", "x2", "apply"]),
                },
                "obs_ids": {"grass": 0, "rock": 1, "water": 2, "food": 3, "spawn1": 4, "spawn2": 5},
                "max_steps": self.env.max_steps,
                "n_sims": self.env.eval.n_sims,
                "epsilon": self.env.eval.epsilon,
                "archetypes": [self.env.arch1.name, self.env.arch2.name],
                "crn_policy": format!("{:?}", self.env.crn_policy),
            });
            v.as_object_mut()
                .expect("object")
                .extend(extra.as_object().expect("object").clone());
        }
        v
    }
}

#[derive(Debug)]
struct Fault {
    code: &'static str,
    message: String,
}

impl Fault {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn arg(message: impl Into<String>) -> Self {
        Self::new("E_ARG", message)
    }
}

impl From<EnvError> for Fault {
    fn from(e: EnvError) -> Self {
        let code = match e {
            EnvError::NotReset | EnvError::Done => "E_STATE",
            _ => "E_ARG",
        };
        Fault::new(code, e.to_string())
    }
}

fn obs_json(obs: &Observation) -> Value {
    json!(obs.rows())
}

fn info_json(info: &StepInfo) -> Value {
    serde_json::to_value(info).expect("info serializes")
}

/// Protocol state for one connection: any number of numbered env slots.
pub struct Session {
    config: Arc<GatewayConfig>,
    slots: BTreeMap<u64, BalancingEnv>,
    closed: bool,
}

impl Session {
    pub fn new(config: Arc<GatewayConfig>) -> Self {
        Self {
            config,
            slots: BTreeMap::new(),
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Answers one request line. Never panics on malformed input.
    pub fn handle_line(&mut self, line: &str) -> String {
        let (req_id, result) = match serde_json::from_str::<Value>(line) {
            Err(e) => (Value::Null, Err(Fault::new("E_PARSE", format!("invalid json: {e}")))),
            Ok(v) => {
                let req_id = v.get("req_id").cloned().unwrap_or(Value::Null);
                (req_id, self.dispatch(&v))
            }
        };
        let response = match result {
            Ok(data) => json!({"req_id": req_id, "ok": true, "data": data}),
            Err(f) => json!({"req_id": req_id, "ok": false, "error": {"code": f.code, "message": f.message}}),
        };
        response.to_string()
    }

    fn dispatch(&mut self, v: &Value) -> Result<Value, Fault> {
        let obj = v
            .as_object()
            .ok_or_else(|| Fault::new("E_PARSE", "request must be a json object"))?;
        match obj.get("req_id") {
            Some(id) if id.is_i64() || id.is_u64() => {}
            _ => return Err(Fault::new("E_PARSE", "req_id must be an integer")),
        }
        let cmd = obj
            .get("cmd")
            .and_then(Value::as_str)
            .ok_or_else(|| Fault::new("E_PARSE", "cmd must be a string"))?;
        let empty = json!({});
        let payload = match obj.get("payload") {
            None | Some(Value::Null) => &empty,
            Some(p) if p.is_object() => p,
            Some(_) => return Err(Fault::new("E_PARSE", "payload must be an object")),
        };
        let slot = match obj.get("slot") {
            None | Some(Value::Null) => 0,
            Some(s) => s.as_u64().ok_or_else(|| Fault::arg("slot must be a non-negative integer"))?,
        };
        match cmd {
            "hello" => Ok(self.config.describe(false)),
            "spec" => Ok(self.config.describe(true)),
            "reset" => self.reset(slot, payload),
            "step" => self.step(slot, payload),
            "close" => {
                if obj.contains_key("slot") {
                    let existed = self.slots.remove(&slot).is_some();
                    Ok(json!({"closed": "slot", "slot": slot, "existed": existed}))
                } else {
                    self.slots.clear();
                    self.closed = true;
                    Ok(json!({"closed": "session"}))
                }
            }
            other => Err(Fault::new("E_CMD", format!("unknown cmd {other:?}"))),
        }
    }

    fn pick_level(&self, payload: &Value, seed: u64) -> Result<Level, Fault> {
        let level = if let Some(rows) = payload.get("obs") {
            let rows: Vec<Vec<u8>> =
                serde_json::from_value(rows.clone()).map_err(|e| Fault::arg(format!("obs must be a grid of ids: {e}")))?;
            decode(&Observation::from_rows(&rows)?)?
        } else if let Some(line) = payload.get("level") {
            let line = line.as_str().ok_or_else(|| Fault::arg("level must be a dataset line"))?;
            LevelRecord::from_line(line).map_err(Fault::arg)?.level
        } else if let Some(id) = payload.get("level_id") {
            let id = id.as_str().ok_or_else(|| Fault::arg("level_id must be a string"))?;
            match &self.config.levels {
                LevelSource::Dataset(ds) => ds
                    .get(id)
                    .ok_or_else(|| Fault::arg(format!("no level {id:?}")))?
                    .level
                    .clone(),
                LevelSource::Generator(_) => return Err(Fault::arg("no dataset loaded")),
            }
        } else {
            match &self.config.levels {
                LevelSource::Dataset(ds) => {
                    use rand::Rng;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    ds.records[rng.gen_range(0..ds.len())].level.clone()
                }
                LevelSource::Generator(g) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(g.seed, seed));
                    generate_level(g, &mut rng).map_err(|e| Fault::arg(e.to_string()))?
                }
            }
        };
        if (level.width(), level.height()) != (self.config.width, self.config.height) {
            return Err(Fault::arg(format!(
                "level is {}x{}, session expects {}x{}",
                level.width(),
                level.height(),
                self.config.width,
                self.config.height
            )));
        }
        Ok(level)
    }

    fn reset(&mut self, slot: u64, payload: &Value) -> Result<Value, Fault> {
        let seed = match payload.get("seed") {
            None | Some(Value::Null) => 0,
            Some(s) => s.as_u64().ok_or_else(|| Fault::arg("seed must be a non-negative integer"))?,
        };
        let level = self.pick_level(payload, seed)?;
        let env = match self.slots.entry(slot) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(BalancingEnv::new(self.config.env.clone())?),
        };
        let (obs, info) = env.reset(level, seed);
        Ok(json!({"obs": obs_json(&obs), "info": info_json(&info)}))
    }

    fn step(&mut self, slot: u64, payload: &Value) -> Result<Value, Fault> {
        let (h, w) = (self.config.height, self.config.width);
        let variant = self.config.env.variant;
        let env = self
            .slots
            .get_mut(&slot)
            .ok_or_else(|| Fault::new("E_STATE", format!("slot {slot} has no episode; reset first")))?;
        let action = if let Some(a) = payload.get("action") {
            let values = a
                .as_array()
                .ok_or_else(|| Fault::arg("action must be an integer array"))?
                .iter()
                .map(|x| x.as_i64().ok_or_else(|| Fault::arg("action components must be integers")))
                .collect::<Result<Vec<i64>, Fault>>()?;
            SwapAction::from_components(&values, variant, h, w)?
        } else if let Some(i) = payload.get("action_index") {
            let i = i.as_u64().ok_or_else(|| Fault::arg("action_index must be a non-negative integer"))?;
            SwapAction::from_flat(usize::try_from(i).unwrap_or(usize::MAX), variant, h, w)?
        } else {
            return Err(Fault::arg("step needs action or action_index"));
        };
        let r = env.step(&action)?;
        Ok(json!({
            "obs": obs_json(&r.obs),
            "reward": r.reward,
            "done": r.done,
            "info": info_json(&r.info),
        }))
    }
}

fn read_line_lossy<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>) -> io::Result<Option<String>> {
    buf.clear();
    if reader.read_until(b'\n', buf)? == 0 {
        return Ok(None);
    }
    while matches!(buf.last(), Some(b'\n' | b'\r')) {
        buf.pop();
    }
    Ok(Some(String::from_utf8_lossy(buf).into_owned()))
}

/// Runs a session over any line transport until EOF or `close`.
pub fn serve<R: BufRead, W: Write>(config: Arc<GatewayConfig>, mut reader: R, mut writer: W) -> io::Result<()> {
    let mut session = Session::new(config);
    let mut buf = Vec::new();
    while let Some(line) = read_line_lossy(&mut reader, &mut buf)? {
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", session.handle_line(&line))?;
        writer.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread and one session per connection.
pub fn serve_tcp(config: Arc<GatewayConfig>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let config = Arc::clone(&config);
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve(config, reader, stream);
        });
    }
    Ok(())
}

/// Client for an external policy that answers `act` requests with swap actions.
///
/// Request: `{"req_id": n, "cmd": "act", "payload": {"obs": [[..]], "info": {..}}}`;
/// response: `{"req_id": n, "ok": true, "data": {"action": [y1, x1, y2, x2]}}`.
pub struct PolicyPeer {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl PolicyPeer {
    pub fn connect(addr: &str) -> Result<Self, GatewayError> {
        let connect_err = |source| GatewayError::Connect {
            addr: addr.to_string(),
            source,
        };
        let addrs: Vec<_> = addr.to_socket_addrs().map_err(connect_err)?.collect();
        let stream = TcpStream::connect(&addrs[..]).map_err(connect_err)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 0,
        })
    }

    pub fn act(
        &mut self,
        obs: &Observation,
        info: &StepInfo,
        variant: ActionSpaceVariant,
    ) -> Result<SwapAction, GatewayError> {
        self.next_id += 1;
        let req = json!({"req_id": self.next_id, "cmd": "act", "payload": {"obs": obs_json(obs), "info": info_json(info)}});
        writeln!(self.writer, "{req}")?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(GatewayError::Protocol("peer closed the connection".into()));
        }
        let resp: Value = serde_json::from_str(&line).map_err(|e| GatewayError::Protocol(format!("bad json: {e}")))?;
        if resp.get("req_id").and_then(Value::as_u64) != Some(self.next_id) {
            return Err(GatewayError::Protocol("req_id mismatch".into()));
        }
        if resp.get("ok") != Some(&Value::Bool(true)) {
            return Err(GatewayError::Protocol(format!("peer error: {}", resp.get("error").unwrap_or(&Value::Null))));
        }
        let values: Vec<i64> = resp
            .pointer("/data/action")
            .and_then(|a| serde_json::from_value(a.clone()).ok())
            .ok_or_else(|| GatewayError::Protocol("response lacks data.action".into()))?;
        Ok(SwapAction::from_components(&values, variant, obs.height, obs.width)?)
    }
}

/// Result of one externally driven episode.
#[derive(Debug, Clone)]
pub struct PeerEpisode {
    pub initial: StepInfo,
    pub last: StepInfo,
    pub final_level: Level,
    pub steps: u32,
}

/// Runs one episode on `level` with actions from the peer.
pub fn run_peer_episode(
    peer: &mut PolicyPeer,
    env: &mut BalancingEnv,
    level: Level,
    seed: u64,
) -> Result<PeerEpisode, GatewayError> {
    let (mut obs, initial) = env.reset(level, seed);
    let mut info = initial.clone();
    let variant = env.config().variant;
    if !info.balanced {
        loop {
            let action = peer.act(&obs, &info, variant)?;
            let r = env.step(&action)?;
            obs = r.obs;
            info = r.info;
            if r.done {
                break;
            }
        }
    }
    Ok(PeerEpisode {
        initial,
        steps: info.steps_used,
        last: info,
        final_level: env.level().expect("episode started").clone(),
    })
}
