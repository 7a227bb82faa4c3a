//! Ego/remote dialogue over a text message interchange format.
//!
//! Instead of streaming camera frames, the ego vehicle asks each remote
//! vehicle's onboard model a question about the remote's own frame and gets
//! a compact structured answer back. This module defines:
//!
//! - the v1 message schema and its canonical encoding ([`encode_message`],
//!   [`decode_message`]),
//! - a link model for analytic transmission times ([`LinkModel`],
//!   [`transmission_time`]),
//! - the single-round dialogue engine ([`run_dialogue`]) and the comparison
//!   against streaming the raw images ([`compare_transport`]).
//!
//! # Message schema v1
//!
//! A message is one UTF-8 JSON object with keys in this order:
//!
//! ```text
//! version, msg_type, sender_id, recipient_id, correlation_id, timestamp, payload
//! ```
//!
//! `payload` depends on `msg_type`:
//!
//! | msg_type   | payload keys (in order)                                   |
//! |------------|-----------------------------------------------------------|
//! | `query`    | `prompt_id`, `prompt`                                     |
//! | `response` | `presence`, then optional `box`, `description`, `failure_kind` |
//! | `error`    | `reason`                                                  |
//!
//! Optional keys are omitted rather than set to `null`. `box` is
//! `[x, y, x2, y2]` in the unit reference frame. There is no whitespace
//! between tokens, so equal messages always encode to equal bytes.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dataset::{ImageSource, SceneSet};
use crate::gateway::{Gateway, GatewayError, QueryKey, QueryParams};
use crate::geometry::NormalizedBBox;
use crate::perception::{parse_response, DetectionOutcome, FailureKind, PromptId};

pub const PROTOCOL_VERSION: &str = "1";

/// Bytes per kilobyte in link calculations.
pub const KIB: f64 = 1024.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum V2vError {
    #[error("unsupported protocol version `{0}`")]
    UnsupportedVersion(String),
    #[error("malformed message: field `{field}`: {reason}")]
    MalformedMessage { field: String, reason: String },
    #[error("invalid link model: {0}")]
    InvalidLink(&'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("remote `{vehicle_id}` frame: {reason}")]
    UnresolvedFrame { vehicle_id: String, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn malformed(field: &str, reason: impl Into<String>) -> V2vError {
    V2vError::MalformedMessage {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Query,
    Response,
    Error,
}

impl MessageType {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageType::Query => "query",
            MessageType::Response => "response",
            MessageType::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Query {
        prompt_id: PromptId,
        prompt: String,
    },
    Response {
        presence: bool,
        bbox: Option<NormalizedBBox>,
        description: Option<String>,
        failure_kind: Option<FailureKind>,
    },
    Error {
        reason: String,
    },
}

impl Payload {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Payload::Query { .. } => MessageType::Query,
            Payload::Response { .. } => MessageType::Response,
            Payload::Error { .. } => MessageType::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct V2VMessage {
    pub version: String,
    pub sender_id: String,
    pub recipient_id: String,
    pub correlation_id: String,
    /// Milliseconds since the Unix epoch (simulated clock in dialogues).
    pub timestamp: u64,
    pub payload: Payload,
}

impl V2VMessage {
    pub fn new(
        sender_id: impl Into<String>,
        recipient_id: impl Into<String>,
        correlation_id: impl Into<String>,
        timestamp: u64,
        payload: Payload,
    ) -> Self {
        Self {
            version: PROTOCOL_VERSION.to_string(),
            sender_id: sender_id.into(),
            recipient_id: recipient_id.into(),
            correlation_id: correlation_id.into(),
            timestamp,
            payload,
        }
    }

    pub fn msg_type(&self) -> MessageType {
        self.payload.msg_type()
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    version: &'a str,
    msg_type: &'a str,
    sender_id: &'a str,
    recipient_id: &'a str,
    correlation_id: &'a str,
    timestamp: u64,
    payload: WirePayload<'a>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WirePayload<'a> {
    Query {
        prompt_id: &'a str,
        prompt: &'a str,
    },
    Response {
        presence: bool,
        #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
        bbox: Option<[f64; 4]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        description: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        failure_kind: Option<&'a str>,
    },
    Error {
        reason: &'a str,
    },
}

/// Canonical byte encoding of a message.
pub fn encode_message(msg: &V2VMessage) -> Vec<u8> {
    let payload = match &msg.payload {
        Payload::Query { prompt_id, prompt } => WirePayload::Query {
            prompt_id: prompt_id.as_str(),
            prompt,
        },
        Payload::Response {
            presence,
            bbox,
            description,
            failure_kind,
        } => WirePayload::Response {
            presence: *presence,
            bbox: bbox.map(|b| b.as_array()),
            description: description.as_deref(),
            failure_kind: failure_kind.map(|k| k.as_str()),
        },
        Payload::Error { reason } => WirePayload::Error { reason },
    };
    let wire = WireMessage {
        version: &msg.version,
        msg_type: msg.msg_type().as_str(),
        sender_id: &msg.sender_id,
        recipient_id: &msg.recipient_id,
        correlation_id: &msg.correlation_id,
        timestamp: msg.timestamp,
        payload,
    };
    serde_json::to_vec(&wire).expect("message serializes")
}

fn take<'a>(obj: &'a Map<String, Value>, key: &str, prefix: &str) -> Result<&'a Value, V2vError> {
    obj.get(key)
        .ok_or_else(|| malformed(&format!("{prefix}{key}"), "missing"))
}

fn take_str(obj: &Map<String, Value>, key: &str, prefix: &str) -> Result<String, V2vError> {
    take(obj, key, prefix)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed(&format!("{prefix}{key}"), "expected a string"))
}

fn check_keys(
    obj: &Map<String, Value>,
    required: &[&str],
    optional: &[&str],
    prefix: &str,
) -> Result<(), V2vError> {
    for key in obj.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(malformed(&format!("{prefix}{key}"), "unknown key"));
        }
    }
    Ok(())
}

pub fn decode_message(bytes: &[u8]) -> Result<V2VMessage, V2vError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| malformed("<message>", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(malformed("<message>", "expected a JSON object"));
    };
    let version = take_str(&obj, "version", "")?;
    if version != PROTOCOL_VERSION {
        return Err(V2vError::UnsupportedVersion(version));
    }
    check_keys(
        &obj,
        &[
            "version",
            "msg_type",
            "sender_id",
            "recipient_id",
            "correlation_id",
            "timestamp",
            "payload",
        ],
        &[],
        "",
    )?;
    let msg_type = take_str(&obj, "msg_type", "")?;
    let sender_id = take_str(&obj, "sender_id", "")?;
    let recipient_id = take_str(&obj, "recipient_id", "")?;
    let correlation_id = take_str(&obj, "correlation_id", "")?;
    let timestamp = take(&obj, "timestamp", "")?
        .as_u64()
        .ok_or_else(|| malformed("timestamp", "expected a non-negative integer"))?;
    let Value::Object(p) = take(&obj, "payload", "")? else {
        return Err(malformed("payload", "expected an object"));
    };
    let pre = "payload.";
    let payload = match msg_type.as_str() {
        "query" => {
            check_keys(p, &["prompt_id", "prompt"], &[], pre)?;
            let prompt_id = take_str(p, "prompt_id", pre)?.parse().map_err(
                |e: crate::perception::PromptError| malformed("payload.prompt_id", e.to_string()),
            )?;
            Payload::Query {
                prompt_id,
                prompt: take_str(p, "prompt", pre)?,
            }
        }
        "response" => {
            check_keys(
                p,
                &["presence"],
                &["box", "description", "failure_kind"],
                pre,
            )?;
            let presence = take(p, "presence", pre)?
                .as_bool()
                .ok_or_else(|| malformed("payload.presence", "expected a boolean"))?;
            let bbox = p.get("box").map(decode_box).transpose()?;
            let description = p
                .contains_key("description")
                .then(|| take_str(p, "description", pre))
                .transpose()?;
            let failure_kind = p
                .contains_key("failure_kind")
                .then(|| {
                    take_str(p, "failure_kind", pre)?
                        .parse()
                        .map_err(|e: String| malformed("payload.failure_kind", e))
                })
                .transpose()?;
            Payload::Response {
                presence,
                bbox,
                description,
                failure_kind,
            }
        }
        "error" => {
            check_keys(p, &["reason"], &[], pre)?;
            Payload::Error {
                reason: take_str(p, "reason", pre)?,
            }
        }
        other => return Err(malformed("msg_type", format!("unknown type `{other}`"))),
    };
    Ok(V2VMessage {
        version,
        sender_id,
        recipient_id,
        correlation_id,
        timestamp,
        payload,
    })
}

fn decode_box(v: &Value) -> Result<NormalizedBBox, V2vError> {
    let nums: Option<Vec<f64>> = v
        .as_array()
        .filter(|a| a.len() == 4)
        .and_then(|a| a.iter().map(Value::as_f64).collect());
    let Some([x, y, x2, y2]) = nums.as_deref().map(|n| [n[0], n[1], n[2], n[3]]) else {
        return Err(malformed("payload.box", "expected four numbers"));
    };
    NormalizedBBox::new(x, y, x2, y2).map_err(|e| malformed("payload.box", e.to_string()))
}

// ---------------------------------------------------------------------------
// Link model

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub rate_bps: f64,
    /// Share of the raw rate lost to protocol overhead, in `[0, 1)`.
    pub overhead: f64,
}

impl LinkModel {
    pub fn new(rate_bps: f64, overhead: f64) -> Result<Self, V2vError> {
        let link = Self { rate_bps, overhead };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<(), V2vError> {
        if !(self.rate_bps > 0.0 && self.rate_bps.is_finite()) {
            return Err(V2vError::InvalidLink("rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.overhead) {
            return Err(V2vError::InvalidLink("overhead must be in [0, 1)"));
        }
        Ok(())
    }

    /// Throughput left after overhead, in bits per second.
    pub fn effective_rate(&self) -> f64 {
        self.rate_bps * (1.0 - self.overhead)
    }
}

/// Seconds to push `payload_bytes` through the link.
pub fn transmission_time(payload_bytes: f64, link: &LinkModel) -> f64 {
    payload_bytes * 8.0 / link.effective_rate()
}

// ---------------------------------------------------------------------------
// Scenario and dialogue

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleAgent {
    pub vehicle_id: String,
    pub role: Role,
    /// Scene the vehicle's camera currently sees; the ego may see nothing useful.
    pub current_frame: Option<String>,
}

impl VehicleAgent {
    pub fn ego(id: impl Into<String>) -> Self {
        Self {
            vehicle_id: id.into(),
            role: Role::Ego,
            current_frame: None,
        }
    }

    pub fn remote(id: impl Into<String>, frame: impl Into<String>) -> Self {
        Self {
            vehicle_id: id.into(),
            role: Role::Remote,
            current_frame: Some(frame.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ego: VehicleAgent,
    pub remotes: Vec<VehicleAgent>,
}

impl Scenario {
    pub fn new(ego: VehicleAgent, remotes: Vec<VehicleAgent>) -> Result<Self, V2vError> {
        if ego.role != Role::Ego {
            return Err(V2vError::InvalidScenario(
                "ego agent must have role ego".into(),
            ));
        }
        let mut ids = HashSet::from([ego.vehicle_id.clone()]);
        for r in &remotes {
            if r.role != Role::Remote {
                return Err(V2vError::InvalidScenario(format!(
                    "`{}` listed as remote has role ego",
                    r.vehicle_id
                )));
            }
            if r.current_frame.is_none() {
                return Err(V2vError::InvalidScenario(format!(
                    "remote `{}` has no current frame",
                    r.vehicle_id
                )));
            }
            if !ids.insert(r.vehicle_id.clone()) {
                return Err(V2vError::InvalidScenario(format!(
                    "duplicate vehicle id `{}`",
                    r.vehicle_id
                )));
            }
        }
        Ok(Self { ego, remotes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioVehicle {
    pub vehicle_id: String,
    pub role: Role,
    #[serde(default)]
    pub scene_id: Option<String>,
}

/// Scenario file: vehicles, link, prompt, and the manifest holding the
/// remotes' frames (relative to the scenario file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub manifest: PathBuf,
    pub vehicles: Vec<ScenarioVehicle>,
    pub link: LinkModel,
    pub prompt_id: PromptId,
    #[serde(default)]
    pub start_ms: u64,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, V2vError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| V2vError::InvalidScenario(e.to_string()))?;
        cfg.link.validate()?;
        Ok(cfg)
    }

    pub fn manifest_path(&self, scenario_file: &Path) -> PathBuf {
        scenario_file
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.manifest)
    }

    pub fn scenario(&self) -> Result<Scenario, V2vError> {
        let mut egos = self.vehicles.iter().filter(|v| v.role == Role::Ego);
        let ego = match (egos.next(), egos.next()) {
            (Some(e), None) => VehicleAgent {
                vehicle_id: e.vehicle_id.clone(),
                role: Role::Ego,
                current_frame: e.scene_id.clone(),
            },
            _ => {
                return Err(V2vError::InvalidScenario(
                    "exactly one vehicle must have role ego".into(),
                ))
            }
        };
        let remotes = self
            .vehicles
            .iter()
            .filter(|v| v.role == Role::Remote)
            .map(|v| VehicleAgent {
                vehicle_id: v.vehicle_id.clone(),
                role: Role::Remote,
                current_frame: v.scene_id.clone(),
            })
            .collect();
        Scenario::new(ego, remotes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub message: V2VMessage,
    pub encoded: Vec<u8>,
}

impl TranscriptEntry {
    pub fn new(message: V2VMessage) -> Self {
        let encoded = encode_message(&message);
        Self { message, encoded }
    }

    pub fn encoded_bytes(&self) -> u64 {
        self.encoded.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTranscript {
    pub entries: Vec<TranscriptEntry>,
    pub dialogue_bytes: u64,
    pub dialogue_time: f64,
    /// Size of each remote's frame, in remote-id order.
    pub image_sizes: Vec<u64>,
    /// Raw image bytes the remotes would have streamed instead.
    pub stream_bytes: u64,
    pub stream_time: f64,
}

impl DialogueTranscript {
    pub fn from_entries(
        entries: Vec<TranscriptEntry>,
        image_sizes: &[u64],
        link: &LinkModel,
    ) -> Self {
        let dialogue_bytes = entries.iter().map(TranscriptEntry::encoded_bytes).sum();
        let stream_bytes = image_sizes.iter().sum();
        Self {
            entries,
            image_sizes: image_sizes.to_vec(),
            dialogue_bytes,
            dialogue_time: transmission_time(dialogue_bytes as f64, link),
            stream_bytes,
            stream_time: transmission_time(stream_bytes as f64, link),
        }
    }

    /// Checks that every response or error answers an earlier query.
    pub fn validate(&self) -> Result<(), V2vError> {
        let mut open = HashSet::new();
        for e in &self.entries {
            let m = &e.message;
            match m.msg_type() {
                MessageType::Query => {
                    open.insert(m.correlation_id.as_str());
                }
                MessageType::Response | MessageType::Error => {
                    if !open.contains(m.correlation_id.as_str()) {
                        return Err(malformed(
                            "correlation_id",
                            format!("`{}` answers no prior query", m.correlation_id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportComparison {
    pub stream_bytes: u64,
    pub stream_time: f64,
    pub dialogue_bytes: u64,
    pub dialogue_time: f64,
    /// `dialogue_bytes / stream_bytes`; `None` when nothing would be streamed.
    pub ratio: Option<f64>,
}

pub fn compare_transport(
    image_sizes: &[u64],
    transcript: &DialogueTranscript,
    link: &LinkModel,
) -> TransportComparison {
    let stream_bytes: u64 = image_sizes.iter().sum();
    TransportComparison {
        stream_bytes,
        stream_time: transmission_time(stream_bytes as f64, link),
        dialogue_bytes: transcript.dialogue_bytes,
        dialogue_time: transmission_time(transcript.dialogue_bytes as f64, link),
        ratio: (stream_bytes > 0).then(|| transcript.dialogue_bytes as f64 / stream_bytes as f64),
    }
}

#[derive(Debug, Clone)]
pub struct DialogueOptions {
    pub params: QueryParams,
    pub start_ms: u64,
    pub parallelism: usize,
}

impl Default for DialogueOptions {
    fn default() -> Self {
        Self {
            params: QueryParams::default(),
            start_ms: 0,
            parallelism: 1,
        }
    }
}

/// What a remote answers, derived from its model's reply.
pub fn response_payload(outcome: &DetectionOutcome, raw_excerpt: &str) -> Payload {
    match *outcome {
        DetectionOutcome::Verdict(v) => Payload::Response {
            presence: v,
            bbox: None,
            description: None,
            failure_kind: None,
        },
        DetectionOutcome::Located(b) => Payload::Response {
            presence: true,
            bbox: Some(b.bbox),
            description: None,
            failure_kind: None,
        },
        DetectionOutcome::Failure(FailureKind::NoPedestrianDetected) => Payload::Response {
            presence: false,
            bbox: None,
            description: None,
            failure_kind: Some(FailureKind::NoPedestrianDetected),
        },
        // The model hinted at a person without a usable box: report presence
        // and forward its words.
        DetectionOutcome::Failure(kind) => Payload::Response {
            presence: true,
            bbox: None,
            description: Some(raw_excerpt.to_string()),
            failure_kind: Some(kind),
        },
    }
}

struct RemoteReply {
    image_bytes: u64,
    result: Result<(Payload, f64), GatewayError>,
}

/// Runs one query/response round with every remote, in vehicle-id order.
///
/// Model calls may run concurrently; the transcript is assembled afterwards
/// on a simulated clock that advances by each message's transmission time
/// (plus the remote's inference latency, zero for scripted backends).
pub fn run_dialogue(
    scenario: &Scenario,
    scenes: &SceneSet,
    prompt_id: PromptId,
    gateway: &Gateway,
    link: &LinkModel,
    images: &dyn ImageSource,
    options: &DialogueOptions,
) -> Result<DialogueTranscript, V2vError> {
    link.validate()?;
    let mut remotes: Vec<&VehicleAgent> = scenario.remotes.iter().collect();
    remotes.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
    let spec = prompt_id.spec();

    let mut frames = Vec::with_capacity(remotes.len());
    for r in &remotes {
        let unresolved = |reason: String| V2vError::UnresolvedFrame {
            vehicle_id: r.vehicle_id.clone(),
            reason,
        };
        let frame = r
            .current_frame
            .as_deref()
            .ok_or_else(|| unresolved("no current frame".into()))?;
        let scene = scenes
            .get(frame)
            .ok_or_else(|| unresolved(format!("scene `{frame}` not in manifest")))?;
        let image = images
            .load(scene)
            .map_err(|e| unresolved(format!("image for `{frame}`: {e}")))?;
        if image.is_empty() {
            return Err(unresolved(format!("image for `{frame}` is empty")));
        }
        frames.push((scene.scene_id.clone(), image));
    }

    let query_one = |(scene_id, image): &(String, Vec<u8>)| -> RemoteReply {
        let key = QueryKey::new(scene_id.clone(), prompt_id, 0);
        let result = gateway
            .send_vision_query(&key, image, spec.text, &options.params)
            .map(|raw| {
                let parsed = parse_response(spec.expected_format, &raw.text);
                (
                    response_payload(&parsed.outcome, &parsed.raw_excerpt),
                    raw.latency,
                )
            });
        RemoteReply {
            image_bytes: image.len() as u64,
            result,
        }
    };
    let replies: Vec<RemoteReply> = if options.parallelism > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .map_err(|e| V2vError::InvalidScenario(format!("thread pool: {e}")))?
            .install(|| frames.par_iter().map(query_one).collect())
    } else {
        frames.iter().map(query_one).collect()
    };

    let ego = &scenario.ego.vehicle_id;
    let mut clock_s = options.start_ms as f64 / 1000.0;
    let mut entries = Vec::with_capacity(remotes.len() * 2);
    let mut image_sizes = Vec::with_capacity(remotes.len());
    for (seq, (remote, reply)) in remotes.iter().zip(replies).enumerate() {
        let cid = format!("{ego}:{}:{}", remote.vehicle_id, seq + 1);
        let query = TranscriptEntry::new(V2VMessage::new(
            ego,
            &remote.vehicle_id,
            &cid,
            (clock_s * 1000.0).floor() as u64,
            Payload::Query {
                prompt_id,
                prompt: spec.text.to_string(),
            },
        ));
        clock_s += transmission_time(query.encoded_bytes() as f64, link);
        let payload = match reply.result {
            Ok((payload, latency)) => {
                clock_s += latency;
                payload
            }
            Err(e) if e.is_query_fault() => Payload::Error {
                reason: e.fault_name().to_string(),
            },
            Err(e) => return Err(e.into()),
        };
        let answer = TranscriptEntry::new(V2VMessage::new(
            &remote.vehicle_id,
            ego,
            &cid,
            (clock_s * 1000.0).floor() as u64,
            payload,
        ));
        clock_s += transmission_time(answer.encoded_bytes() as f64, link);
        entries.push(query);
        entries.push(answer);
        image_sizes.push(reply.image_bytes);
    }
    Ok(DialogueTranscript::from_entries(
        entries,
        &image_sizes,
        link,
    ))
}
