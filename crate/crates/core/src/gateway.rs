//! Black-box sequence models as ordered games.
//!
//! A [`ModelGame`] materializes each `(S, σ)` query into a masked, reordered
//! token sequence and routes it through a [`Gateway`], which deduplicates
//! and caches before dispatching batches to a [`ModelEndpoint`].

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, GatewayError, Result};
use crate::games::OrderedGame;
use crate::perm::{Permutation, Subset};
use crate::position::PositionIndex;

/// One feature value: a text token or an embedding-level vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Token {
    Text(String),
    Vector(Vec<f64>),
}

impl Token {
    pub fn text(s: impl Into<String>) -> Self {
        Token::Text(s.into())
    }

    fn hash_into(&self, h: &mut Sha256) {
        match self {
            Token::Text(s) => {
                h.update(b"T");
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Token::Vector(v) => {
                h.update(b"V");
                h.update((v.len() as u64).to_le_bytes());
                for x in v {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::Text(s.to_string())
    }
}

pub fn text_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<Token> {
    tokens.iter().map(|t| Token::text(t.as_ref())).collect()
}

/// How features outside a coalition are ablated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MaskingPolicy {
    /// Every ablated position receives the same sentinel.
    SingleBaseline { baseline_token: Token },
    /// Payoffs are averaged over a list of reference sequences.
    ReferenceSet { references: Vec<Vec<Token>> },
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy::SingleBaseline {
            baseline_token: Token::text(crate::games::DEFAULT_MASK_TOKEN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<i64>>,
    #[serde(default)]
    pub policy: MaskingPolicy,
}

impl SequenceSample {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self {
            tokens,
            groups: None,
            policy: MaskingPolicy::default(),
        }
    }

    pub fn with_groups(mut self, groups: Vec<i64>) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn with_policy(mut self, policy: MaskingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidConfig("sample has no tokens".into()));
        }
        grouped_positions(self)?;
        if let MaskingPolicy::ReferenceSet { references } = &self.policy {
            if references.is_empty() {
                return Err(Error::InvalidConfig("reference set is empty".into()));
            }
            for r in references {
                if r.len() != self.tokens.len() {
                    return Err(Error::LengthMismatch {
                        expected: self.tokens.len(),
                        got: r.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The reference sequences `x'` the policy averages over.
    pub fn references(&self) -> Vec<Vec<Token>> {
        match &self.policy {
            MaskingPolicy::SingleBaseline { baseline_token } => vec![vec![baseline_token.clone(); self.len()]],
            MaskingPolicy::ReferenceSet { references } => references.clone(),
        }
    }
}

/// Position index of a sample: grouped when it carries a group map.
pub fn grouped_positions(sample: &SequenceSample) -> Result<PositionIndex> {
    PositionIndex::for_sample(sample.len(), sample.groups.as_deref())
}

/// Output position `σ⁻¹(i)` holds `x_i` when `i ∈ S` and `x'_i` otherwise.
pub fn materialize(
    tokens: &[Token],
    coalition: &Subset,
    order: &Permutation,
    reference: &[Token],
) -> Result<Vec<Token>> {
    let n = tokens.len();
    if reference.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: reference.len(),
        });
    }
    if order.len() != n || coalition.ambient() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: order.len(),
        });
    }
    Ok(order
        .order()
        .iter()
        .map(|&i| {
            if coalition.contains(i) {
                tokens[i].clone()
            } else {
                reference[i].clone()
            }
        })
        .collect())
}

/// An in-process model scoring token sequences.
pub trait SequenceModel: Send + Sync {
    fn class_count(&self) -> usize;

    fn predict(&self, class_index: usize, sequence: &[Token]) -> Result<f64, GatewayError>;
}

/// Anything that scores batches of sequences for one class.
pub trait ModelEndpoint: Send + Sync {
    fn class_count(&self) -> usize;

    fn batch_limit(&self) -> usize;

    /// One transport round trip. `sequences.len()` never exceeds `batch_limit`.
    fn call(&self, class_index: usize, sequences: &[Vec<Token>]) -> Result<Vec<f64>, GatewayError>;
}

pub struct InProcessEndpoint<M> {
    model: M,
    batch_limit: usize,
}

impl<M: SequenceModel> InProcessEndpoint<M> {
    pub fn new(model: M, batch_limit: usize) -> Self {
        Self {
            model,
            batch_limit: batch_limit.max(1),
        }
    }
}

impl<M: SequenceModel> ModelEndpoint for InProcessEndpoint<M> {
    fn class_count(&self) -> usize {
        self.model.class_count()
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn call(&self, class_index: usize, sequences: &[Vec<Token>]) -> Result<Vec<f64>, GatewayError> {
        if sequences.len() > self.batch_limit {
            return Err(GatewayError::BatchLimit {
                limit: self.batch_limit,
                got: sequences.len(),
            });
        }
        sequences
            .iter()
            .enumerate()
            .map(|(index, s)| {
                self.model.predict(class_index, s).map_err(|e| match e {
                    GatewayError::ClassIndex { .. } => e,
                    other => GatewayError::BatchItem {
                        index,
                        message: other.to_string(),
                    },
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub class_index: usize,
    pub sequences: Vec<Vec<Token>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Validates a response body against the request it answers.
pub fn decode_response(body: &str, id: &str, expected: usize) -> Result<Vec<f64>, GatewayError> {
    let resp: WireResponse =
        serde_json::from_str(body.trim()).map_err(|e| GatewayError::Malformed(format!("{e}: {}", truncate(body))))?;
    if let Some(message) = resp.error {
        return Err(GatewayError::Remote { status: None, message });
    }
    match resp.id.as_deref() {
        Some(got) if got == id => {}
        Some(got) => {
            return Err(GatewayError::Malformed(format!(
                "response id {got:?} does not match request {id:?}"
            )))
        }
        None => return Err(GatewayError::Malformed("response has no id".into())),
    }
    let outputs = resp
        .outputs
        .ok_or_else(|| GatewayError::Malformed("response has neither outputs nor error".into()))?;
    if outputs.len() != expected {
        return Err(GatewayError::Malformed(format!(
            "expected {expected} outputs, got {}",
            outputs.len()
        )));
    }
    Ok(outputs)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((k, _)) => &s[..k],
        None => s,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    InProcess,
    PipeJsonl,
    HttpJson,
}

impl std::str::FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-process" | "in_process" => Ok(Transport::InProcess),
            "pipe" | "pipe-jsonl" | "pipe_jsonl" => Ok(Transport::PipeJsonl),
            "http" | "http-json" | "http_json" => Ok(Transport::HttpJson),
            other => Err(Error::InvalidConfig(format!("unknown transport {other:?}"))),
        }
    }
}

/// Remote endpoint settings shared by the pipe and HTTP transports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub transport: Transport,
    /// Command line for `pipe_jsonl`, base URL for `http_json`.
    pub address: String,
    pub batch_limit: usize,
    pub timeout: Duration,
    pub class_count: usize,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_limit == 0 {
            return Err(Error::InvalidConfig("batch_limit must be at least 1".into()));
        }
        if self.class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be at least 1".into()));
        }
        if self.address.trim().is_empty() {
            return Err(Error::InvalidConfig("endpoint address is empty".into()));
        }
        Ok(())
    }

    pub fn connect(&self) -> Result<Box<dyn ModelEndpoint>> {
        self.validate()?;
        match self.transport {
            Transport::PipeJsonl => Ok(Box::new(PipeEndpoint::spawn(self.clone())?)),
            Transport::HttpJson => Ok(Box::new(HttpEndpoint::new(self.clone()))),
            Transport::InProcess => Err(Error::InvalidConfig(
                "in-process endpoints are built from a model, not an address".into(),
            )),
        }
    }
}

static REQUEST_IDS: AtomicU64 = AtomicU64::new(1);

const REQUEST_ID_PREFIX: &str = "req-";

fn request_number(id: &str) -> Option<u64> {
    id.strip_prefix(REQUEST_ID_PREFIX)?.parse().ok()
}

fn is_earlier_request(id: &str, current: &str) -> bool {
    matches!((request_number(id), request_number(current)), (Some(a), Some(b)) if a < b)
}

fn next_request_id() -> String {
    format!("{REQUEST_ID_PREFIX}{}", REQUEST_IDS.fetch_add(1, Ordering::Relaxed))
}

struct PipeState {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// A child process speaking JSON lines on stdin/stdout.
pub struct PipeEndpoint {
    config: EndpointConfig,
    state: Mutex<PipeState>,
}

impl PipeEndpoint {
    pub fn spawn(config: EndpointConfig) -> Result<Self> {
        let mut parts = config.address.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidConfig("pipe endpoint needs a command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GatewayError::Transport(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            config,
            state: Mutex::new(PipeState {
                child,
                stdin,
                lines: rx,
            }),
        })
    }
}

impl ModelEndpoint for PipeEndpoint {
    fn class_count(&self) -> usize {
        self.config.class_count
    }

    fn batch_limit(&self) -> usize {
        self.config.batch_limit
    }

    fn call(&self, class_index: usize, sequences: &[Vec<Token>]) -> Result<Vec<f64>, GatewayError> {
        let request = WireRequest {
            id: next_request_id(),
            class_index,
            sequences: sequences.to_vec(),
        };
        let mut line = serde_json::to_string(&request).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        line.push('\n');
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| state.stdin.flush())
            .map_err(|e| GatewayError::Transport(format!("write to model process: {e}")))?;
        let deadline = Instant::now() + self.config.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match state.lines.recv_timeout(left) {
                Ok(Ok(body)) => {
                    // Late answers to requests that already timed out are dropped.
                    if let Ok(WireResponse { id: Some(id), .. }) = serde_json::from_str::<WireResponse>(&body) {
                        if is_earlier_request(&id, &request.id) {
                            continue;
                        }
                    }
                    return decode_response(&body, &request.id, sequences.len());
                }
                Ok(Err(e)) => return Err(GatewayError::Transport(format!("read from model process: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(GatewayError::Timeout(self.config.timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(GatewayError::Transport("model process closed its output".into()))
                }
            }
        }
    }
}

impl Drop for PipeEndpoint {
    fn drop(&mut self) {
        if let Ok(state) = self.state.get_mut() {
            let _ = state.child.kill();
            let _ = state.child.wait();
        }
    }
}

/// POSTs requests to `{address}/evaluate`.
pub struct HttpEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
    url: String,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let url = format!("{}/evaluate", config.address.trim_end_matches('/'));
        Self { config, agent, url }
    }
}

impl ModelEndpoint for HttpEndpoint {
    fn class_count(&self) -> usize {
        self.config.class_count
    }

    fn batch_limit(&self) -> usize {
        self.config.batch_limit
    }

    fn call(&self, class_index: usize, sequences: &[Vec<Token>]) -> Result<Vec<f64>, GatewayError> {
        let request = WireRequest {
            id: next_request_id(),
            class_index,
            sequences: sequences.to_vec(),
        };
        let timeout = self.config.timeout;
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout(timeout),
            ureq::Error::Json(e) => GatewayError::Malformed(e.to_string()),
            other => GatewayError::Transport(other.to_string()),
        };
        let mut response = self.agent.post(&self.url).send_json(&request).map_err(map_err)?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(map_err)?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<WireResponse>(&body)
                .ok()
                .and_then(|r| r.error)
                .unwrap_or_else(|| truncate(&body).to_string());
            return Err(GatewayError::Remote {
                status: Some(status),
                message,
            });
        }
        decode_response(&body, &request.id, sequences.len())
    }
}

/// Content-addressed store of model outputs.
pub struct EvalCache {
    map: RwLock<HashMap<[u8; 32], f64>>,
    capacity: usize,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl EvalCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            map: RwLock::new(HashMap::new()),
            capacity,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// SHA-256 over the class index and the exact materialized sequence.
    pub fn key(class_index: usize, sequence: &[Token]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((class_index as u64).to_le_bytes());
        h.update((sequence.len() as u64).to_le_bytes());
        for t in sequence {
            t.hash_into(&mut h);
        }
        h.finalize().into()
    }

    pub fn get(&self, key: &[u8; 32]) -> Option<f64> {
        let found = self.map.read().unwrap_or_else(|p| p.into_inner()).get(key).copied();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Lookup that leaves the hit and miss counters alone.
    fn peek(&self, key: &[u8; 32]) -> Option<f64> {
        self.map.read().unwrap_or_else(|p| p.into_inner()).get(key).copied()
    }

    /// Stops inserting once `capacity` entries are stored.
    pub fn insert(&self, key: [u8; 32], value: f64) {
        let mut map = self.map.write().unwrap_or_else(|p| p.into_inner());
        if map.len() < self.capacity || map.contains_key(&key) {
            map.insert(key, value);
        }
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub cache: bool,
    pub cache_capacity: usize,
    /// Maximum concurrent transport calls.
    pub jobs: usize,
    /// Extra attempts after a transport failure.
    pub retries: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            cache: true,
            cache_capacity: 1 << 20,
            jobs: 4,
            retries: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub round_trips: u64,
    pub sequences_sent: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl GatewayStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

/// Caching front of a model endpoint.
pub struct Gateway {
    endpoint: Box<dyn ModelEndpoint>,
    cache: Option<EvalCache>,
    config: GatewayConfig,
    pool: rayon::ThreadPool,
    round_trips: AtomicU64,
    sequences_sent: AtomicU64,
    inflight: Mutex<HashMap<[u8; 32], Arc<Flight>>>,
}

enum Slot {
    Own(usize),
    Wait(usize),
}

/// A model call some caller has started; others block on it instead of
/// repeating it.
#[derive(Default)]
struct Flight {
    outcome: Mutex<Option<Result<f64, GatewayError>>>,
    ready: Condvar,
}

impl Flight {
    fn resolve(&self, outcome: Result<f64, GatewayError>) {
        *self.outcome.lock().unwrap_or_else(|p| p.into_inner()) = Some(outcome);
        self.ready.notify_all();
    }

    fn wait(&self) -> Result<f64, GatewayError> {
        let mut slot = self.outcome.lock().unwrap_or_else(|p| p.into_inner());
        loop {
            if let Some(outcome) = slot.as_ref() {
                return outcome.clone();
            }
            slot = self.ready.wait(slot).unwrap_or_else(|p| p.into_inner());
        }
    }
}

impl Gateway {
    pub fn new(endpoint: Box<dyn ModelEndpoint>, config: GatewayConfig) -> Result<Self> {
        if endpoint.batch_limit() == 0 {
            return Err(Error::InvalidConfig("batch_limit must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
        Ok(Self {
            cache: config.cache.then(|| EvalCache::new(config.cache_capacity)),
            endpoint,
            config,
            pool,
            round_trips: AtomicU64::new(0),
            sequences_sent: AtomicU64::new(0),
            inflight: Mutex::new(HashMap::new()),
        })
    }

    pub fn in_process<M: SequenceModel + 'static>(model: M, config: GatewayConfig) -> Result<Self> {
        Self::new(Box::new(InProcessEndpoint::new(model, 256)), config)
    }

    pub fn class_count(&self) -> usize {
        self.endpoint.class_count()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            round_trips: self.round_trips.load(Ordering::Relaxed),
            sequences_sent: self.sequences_sent.load(Ordering::Relaxed),
            cache_hits: self.cache.as_ref().map_or(0, EvalCache::hits),
            cache_misses: self.cache.as_ref().map_or(0, EvalCache::misses),
        }
    }

    /// Model outputs for `class_index`, aligned with `sequences`.
    pub fn evaluate(&self, class_index: usize, sequences: &[Vec<Token>]) -> Result<Vec<f64>, GatewayError> {
        let classes = self.endpoint.class_count();
        if class_index >= classes {
            return Err(GatewayError::ClassIndex {
                index: class_index,
                classes,
            });
        }
        let mut out = vec![f64::NAN; sequences.len()];
        // Distinct sequences this call dispatches, each with the inputs it answers.
        let mut pending: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut flights: Vec<Arc<Flight>> = Vec::new();
        let mut keys = Vec::new();
        // Sequences another caller is already evaluating.
        let mut waiting: Vec<(Arc<Flight>, Vec<usize>)> = Vec::new();
        match &self.cache {
            Some(cache) => {
                let mut seen: HashMap<[u8; 32], Slot> = HashMap::new();
                for (k, seq) in sequences.iter().enumerate() {
                    let key = EvalCache::key(class_index, seq);
                    if let Some(slot) = seen.get(&key) {
                        cache.hits.fetch_add(1, Ordering::Relaxed);
                        match *slot {
                            Slot::Own(j) => pending[j].1.push(k),
                            Slot::Wait(j) => waiting[j].1.push(k),
                        }
                        continue;
                    }
                    if let Some(v) = cache.get(&key) {
                        out[k] = v;
                        continue;
                    }
                    let mut inflight = self.inflight.lock().unwrap_or_else(|p| p.into_inner());
                    // The owner fills the cache before it retires its flight.
                    if let Some(v) = cache.peek(&key) {
                        out[k] = v;
                    } else if let Some(flight) = inflight.get(&key) {
                        seen.insert(key, Slot::Wait(waiting.len()));
                        waiting.push((flight.clone(), vec![k]));
                    } else {
                        let flight = Arc::new(Flight::default());
                        inflight.insert(key, flight.clone());
                        seen.insert(key, Slot::Own(pending.len()));
                        pending.push((k, vec![k]));
                        flights.push(flight);
                        keys.push(key);
                    }
                }
            }
            None => pending.extend((0..sequences.len()).map(|k| (k, vec![k]))),
        }

        let dispatched = self.dispatch(class_index, sequences, &pending);
        if let Some(cache) = &self.cache {
            let mut inflight = self.inflight.lock().unwrap_or_else(|p| p.into_inner());
            for (j, key) in keys.iter().enumerate() {
                let outcome = match &dispatched {
                    Ok(values) => {
                        cache.insert(*key, values[j]);
                        Ok(values[j])
                    }
                    Err(e) => Err(e.clone()),
                };
                flights[j].resolve(outcome);
                inflight.remove(key);
            }
        }
        for ((_, targets), v) in pending.iter().zip(dispatched?) {
            for &k in targets {
                out[k] = v;
            }
        }
        for (flight, targets) in waiting {
            let v = flight.wait().map_err(|e| match e {
                GatewayError::BatchItem { message, .. } => GatewayError::BatchItem {
                    index: targets[0],
                    message,
                },
                other => other,
            })?;
            for k in targets {
                out[k] = v;
            }
        }
        Ok(out)
    }

    /// Sends the pending sequences in `batch_limit` chunks; one value per entry.
    fn dispatch(
        &self,
        class_index: usize,
        sequences: &[Vec<Token>],
        pending: &[(usize, Vec<usize>)],
    ) -> Result<Vec<f64>, GatewayError> {
        if pending.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[(usize, Vec<usize>)]> = pending.chunks(self.endpoint.batch_limit()).collect();
        let results: Vec<Result<Vec<f64>, GatewayError>> = self.pool.install(|| {
            chunks
                .par_iter()
                .map(|chunk| {
                    let batch: Vec<Vec<Token>> = chunk.iter().map(|(k, _)| sequences[*k].clone()).collect();
                    self.call_with_retry(class_index, &batch)
                })
                .collect()
        });
        let mut values = Vec::with_capacity(pending.len());
        for (chunk, result) in chunks.iter().zip(results) {
            values.extend(result.map_err(|e| match e {
                GatewayError::BatchItem { index, message } => GatewayError::BatchItem {
                    index: chunk.get(index).map_or(index, |(k, _)| *k),
                    message,
                },
                other => other,
            })?);
        }
        Ok(values)
    }

    fn call_with_retry(&self, class_index: usize, batch: &[Vec<Token>]) -> Result<Vec<f64>, GatewayError> {
        let mut attempt = 0;
        loop {
            self.round_trips.fetch_add(1, Ordering::Relaxed);
            self.sequences_sent.fetch_add(batch.len() as u64, Ordering::Relaxed);
            match self.endpoint.call(class_index, batch) {
                Err(e) if e.is_retriable() && attempt < self.config.retries => attempt += 1,
                other => return other,
            }
        }
    }
}

/// An ordered game backed by a model through a gateway.
pub struct ModelGame {
    gateway: Arc<Gateway>,
    sample: SequenceSample,
    references: Vec<Vec<Token>>,
    class_index: usize,
}

impl ModelGame {
    pub fn new(gateway: Arc<Gateway>, sample: SequenceSample, class_index: usize) -> Result<Self> {
        sample.validate()?;
        let classes = gateway.class_count();
        if class_index >= classes {
            return Err(GatewayError::ClassIndex {
                index: class_index,
                classes,
            }
            .into());
        }
        Ok(Self {
            references: sample.references(),
            gateway,
            sample,
            class_index,
        })
    }

    pub fn sample(&self) -> &SequenceSample {
        &self.sample
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }
}

impl OrderedGame for ModelGame {
    fn players(&self) -> usize {
        self.sample.len()
    }

    fn evaluate(&self, coalition: &Subset, order: &Permutation) -> Result<f64> {
        Ok(self.evaluate_batch(&[(coalition, order)])?[0])
    }

    fn evaluate_batch(&self, queries: &[(&Subset, &Permutation)]) -> Result<Vec<f64>> {
        let r = self.references.len();
        let mut sequences = Vec::with_capacity(queries.len() * r);
        for (s, p) in queries {
            for reference in &self.references {
                sequences.push(materialize(&self.sample.tokens, s, p, reference)?);
            }
        }
        let outputs = self.gateway.evaluate(self.class_index, &sequences)?;
        Ok(outputs.chunks(r).map(|c| c.iter().sum::<f64>() / r as f64).collect())
    }

    fn descriptor(&self) -> String {
        format!(
            "model(n={}, class={}, references={})",
            self.sample.len(),
            self.class_index,
            self.references.len()
        )
    }
}
