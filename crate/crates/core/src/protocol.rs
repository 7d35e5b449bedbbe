//! Wire protocol between the simulation server and its clients.
//!
//! Every frame is one UTF-8 JSON object:
//!
//! ```json
//! {"type": "seq_play", "seq_no": 7, "payload": {"seq_id": 1}}
//! ```
//!
//! `seq_no` increases strictly per connection and per direction. Server
//! frames answering a client frame carry that frame's number in `re`.
//! Over plain TCP each frame is prefixed by its byte length as a 4-byte
//! big-endian integer.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::arm_model::{JointVector, Pose, RobotModel};
use crate::moa_metrics::{IntendedTonalities, MetricConfig, MoaReport};
use crate::sim_exec::{ControllerGains, SimMode};
use crate::teleop::{BindingMap, FaultKind, InputEvent, TeleopConfig, TeleopMode};
use crate::timeline::Sequence;
use crate::trajlog::TrajectoryLog;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted frame (bytes).
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

/// Messages a client may send.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<String>,
    },
    PilotAcquire {},
    PilotRelease {},
    /// The event's `t` is replaced by the simulation time on arrival.
    Input(InputEvent),
    ModeSet {
        mode: TeleopMode,
    },
    PresetGoto {
        name: String,
    },
    FaultClear {},
    SeqUpload {
        sequence: Sequence,
    },
    SeqPlay {
        seq_id: u64,
        /// Recording rate (Hz), default 100.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    SeqStop {},
    LogFetch {
        log_id: u64,
    },
    Analyze {
        log_id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<MetricConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        impressions: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meaning: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intended: Option<IntendedTonalities>,
    },
    ConfigGet {},
}

/// Immutable copy of the simulation state broadcast to every client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    /// s
    pub t: f64,
    pub q: JointVector,
    pub qd: JointVector,
    pub q_ref: JointVector,
    pub ee_pose: Pose,
    pub mode: SimMode,
    pub fault: Option<FaultKind>,
    pub manipulability: f64,
    pub gripper: f64,
    pub teleop: TeleopIndicators,
    /// Client id of the pilot, if any.
    pub pilot: Option<u64>,
}

/// Controller state worth showing on a pendant display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopIndicators {
    pub mode: TeleopMode,
    pub selected_joint: usize,
    pub joint_speed_scale: f64,
    pub cart_speed_scale: f64,
    pub inertia_enabled: bool,
}

/// Messages the server sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol_version: u32,
        client_id: u64,
        model: RobotModel,
        broadcast_rate: f64,
        dt: f64,
        fast: bool,
    },
    Snapshot(StateSnapshot),
    /// Generic success reply for commands without a richer answer.
    Ack {},
    PilotGranted {
        client_id: u64,
    },
    PilotReleased {
        client_id: u64,
    },
    PilotDenied {
        holder: u64,
    },
    NotPilot {},
    Busy {
        reason: String,
    },
    Error {
        reason: String,
        /// `seq_no` of the offending frame when it could be read.
        #[serde(default)]
        seq_no: Option<u64>,
    },
    SeqUploaded {
        seq_id: u64,
        name: String,
        duration: f64,
    },
    PlayStarted {
        seq_id: u64,
        name: String,
    },
    PlayDone {
        seq_id: u64,
        log_id: u64,
        /// False when stopped early.
        completed: bool,
    },
    PresetReached {
        name: String,
    },
    Log {
        log_id: u64,
        log: TrajectoryLog,
    },
    Report {
        log_id: u64,
        report: MoaReport,
    },
    Config {
        model: RobotModel,
        gains: ControllerGains,
        bindings: BindingMap,
        teleop: TeleopConfig,
        metrics: MetricConfig,
    },
}

/// Message families that know their own `type` names.
pub trait MessageKind: Serialize + DeserializeOwned {
    const TYPES: &'static [&'static str];
}

impl MessageKind for ClientMessage {
    const TYPES: &'static [&'static str] = &[
        "hello",
        "pilot_acquire",
        "pilot_release",
        "input",
        "mode_set",
        "preset_goto",
        "fault_clear",
        "seq_upload",
        "seq_play",
        "seq_stop",
        "log_fetch",
        "analyze",
        "config_get",
    ];
}

impl MessageKind for ServerMessage {
    const TYPES: &'static [&'static str] = &[
        "hello",
        "snapshot",
        "ack",
        "pilot_granted",
        "pilot_released",
        "pilot_denied",
        "not_pilot",
        "busy",
        "error",
        "seq_uploaded",
        "play_started",
        "play_done",
        "preset_reached",
        "log",
        "report",
        "config",
    ];
}

/// A decoded frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope<M> {
    pub seq_no: u64,
    /// `seq_no` of the frame being answered.
    pub re: Option<u64>,
    pub message: M,
}

/// Why a frame could not be decoded; `seq_no` is set when it was readable.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{reason}")]
pub struct DecodeError {
    pub seq_no: Option<u64>,
    pub reason: String,
}

impl<M: MessageKind> Envelope<M> {
    pub fn new(seq_no: u64, message: M) -> Self {
        Envelope {
            seq_no,
            re: None,
            message,
        }
    }

    pub fn reply(seq_no: u64, re: u64, message: M) -> Self {
        Envelope {
            seq_no,
            re: Some(re),
            message,
        }
    }

    pub fn encode(&self) -> String {
        let mut obj = match serde_json::to_value(&self.message).expect("message serializes") {
            Value::Object(m) => m,
            _ => unreachable!("messages serialize to objects"),
        };
        let payload = obj.remove("payload").unwrap_or(Value::Object(Map::new()));
        let ty = obj.remove("type").expect("tagged message");
        let mut out = Map::new();
        out.insert("type".into(), ty);
        out.insert("seq_no".into(), Value::from(self.seq_no));
        if let Some(re) = self.re {
            out.insert("re".into(), Value::from(re));
        }
        out.insert("payload".into(), payload);
        Value::Object(out).to_string()
    }

    pub fn decode(text: &str) -> Result<Self, DecodeError> {
        let value: Value = serde_json::from_str(text).map_err(|e| DecodeError {
            seq_no: None,
            reason: format!("malformed frame: {e}"),
        })?;
        let Value::Object(mut obj) = value else {
            return Err(DecodeError {
                seq_no: None,
                reason: "frame must be a JSON object".into(),
            });
        };
        let seq_no = obj.get("seq_no").and_then(Value::as_u64);
        let fail = |reason: String| DecodeError { seq_no, reason };
        let seq = seq_no.ok_or_else(|| fail("missing or invalid `seq_no`".into()))?;
        let re = match obj.remove("re") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| fail("`re` must be a non-negative integer".into()))?,
            ),
        };
        let ty = match obj.remove("type") {
            Some(Value::String(s)) => s,
            _ => return Err(fail("missing or invalid `type`".into())),
        };
        if !M::TYPES.contains(&ty.as_str()) {
            return Err(fail(format!("unknown message type `{ty}`")));
        }
        let payload = match obj.remove("payload") {
            None | Some(Value::Null) => Value::Object(Map::new()),
            Some(v) => v,
        };
        let mut tagged = Map::new();
        tagged.insert("type".into(), Value::String(ty.clone()));
        tagged.insert("payload".into(), payload);
        let message = serde_json::from_value(Value::Object(tagged))
            .map_err(|e| fail(format!("invalid `{ty}` payload: {e}")))?;
        Ok(Envelope {
            seq_no: seq,
            re,
            message,
        })
    }
}

/// Writes one length-prefixed frame.
pub fn write_frame<W: Write>(w: &mut W, text: &str) -> io::Result<()> {
    let len = u32::try_from(text.len())
        .ok()
        .filter(|n| (*n as usize) <= MAX_FRAME)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(text.as_bytes())?;
    w.flush()
}

/// Reads one length-prefixed frame; `None` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<String>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "frame is not UTF-8"))
}
