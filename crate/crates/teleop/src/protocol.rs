//! JSON text messages exchanged over the `/session` WebSocket.
//!
//! Inbound parsing is deliberately two-stage (generic JSON, then per-type
//! fields) so every failure maps to a specific error code. Unknown fields
//! are ignored.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;
pub const SCHEMA: &str = include_str!("../protocol.schema.json");

pub mod codes {
    pub const BAD_JSON: &str = "bad_json";
    pub const BAD_MESSAGE: &str = "bad_message";
    pub const UNSUPPORTED: &str = "unsupported";
    pub const INVALID: &str = "invalid";
    pub const FORBIDDEN: &str = "forbidden";
    pub const NOT_RECORDING: &str = "not_recording";
    pub const ALREADY_RECORDING: &str = "already_recording";
    pub const TIME_REGRESSION: &str = "time_regression";
    pub const OPERATOR_TAKEN: &str = "operator_taken";
    pub const RECORD_FAILED: &str = "record_failed";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Viewer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZoomCommand {
    Step { dir: i8 },
    Rate { v: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Hello { role: Role, proto: u32 },
    Pose { q: [f64; 4], t_ms: f64 },
    Zoom(ZoomCommand),
    Record { action: RecordAction, name: Option<String> },
}

impl Inbound {
    pub fn is_control(&self) -> bool {
        !matches!(self, Self::Hello { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State {
        pan: f64,
        tilt: f64,
        zoom: f64,
        focal_mm: f64,
        seq: u64,
    },
    Frame {
        seq: u64,
        encoding: String,
        data: String,
    },
    Error {
        code: String,
        msg: String,
    },
    /// Recording lifecycle confirmation.
    Record {
        status: RecordStatus,
        name: String,
        records: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Started,
    Stopped,
}

impl Outbound {
    pub fn error(code: &str, msg: impl Into<String>) -> Self {
        Self::Error {
            code: code.into(),
            msg: msg.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub msg: String,
}

impl ProtocolError {
    fn new(code: &'static str, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }

    pub fn to_outbound(&self) -> Outbound {
        Outbound::error(self.code, self.msg.clone())
    }
}

#[derive(Deserialize)]
struct HelloFields {
    role: Role,
    proto: f64,
}

#[derive(Deserialize)]
struct PoseFields {
    q: [f64; 4],
    t_ms: f64,
}

#[derive(Deserialize)]
struct ZoomMode {
    mode: String,
}

#[derive(Deserialize)]
struct StepFields {
    dir: f64,
}

#[derive(Deserialize)]
struct RateFields {
    v: f64,
}

#[derive(Deserialize)]
struct RecordFields {
    action: RecordAction,
    name: Option<String>,
}

fn fields<T: for<'de> Deserialize<'de>>(v: Value, kind: &str) -> Result<T, ProtocolError> {
    serde_json::from_value(v).map_err(|e| ProtocolError::new(codes::INVALID, format!("{kind}: {e}")))
}

/// Episode names become directory names, so they are kept to a safe set.
pub fn valid_episode_name(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub fn parse_inbound(text: &str) -> Result<Inbound, ProtocolError> {
    let v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::new(codes::BAD_JSON, e.to_string()))?;
    let Some(obj) = v.as_object() else {
        return Err(ProtocolError::new(codes::BAD_MESSAGE, "message must be a JSON object"));
    };
    let Some(kind) = obj.get("type").and_then(Value::as_str) else {
        return Err(ProtocolError::new(codes::BAD_MESSAGE, "missing string field \"type\""));
    };
    match kind {
        "hello" => {
            let f: HelloFields = fields(v.clone(), kind)?;
            if f.proto.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&f.proto) {
                return Err(ProtocolError::new(codes::INVALID, "proto must be a non-negative integer"));
            }
            Ok(Inbound::Hello {
                role: f.role,
                proto: f.proto as u32,
            })
        }
        "pose" => {
            let f: PoseFields = fields(v.clone(), kind)?;
            Ok(Inbound::Pose { q: f.q, t_ms: f.t_ms })
        }
        "zoom" => {
            let m: ZoomMode = fields(v.clone(), kind)?;
            match m.mode.as_str() {
                "step" => {
                    let f: StepFields = fields(v.clone(), "zoom step")?;
                    if f.dir == 1.0 || f.dir == -1.0 {
                        Ok(Inbound::Zoom(ZoomCommand::Step { dir: f.dir as i8 }))
                    } else {
                        Err(ProtocolError::new(codes::INVALID, "step zoom needs dir of 1 or -1"))
                    }
                }
                "rate" => {
                    let f: RateFields = fields(v.clone(), "zoom rate")?;
                    Ok(Inbound::Zoom(ZoomCommand::Rate { v: f.v }))
                }
                other => Err(ProtocolError::new(codes::INVALID, format!("unknown zoom mode {other:?}"))),
            }
        }
        "record" => {
            if let Some(n) = obj.get("name") {
                if !n.as_str().is_some_and(valid_episode_name) {
                    return Err(ProtocolError::new(
                        codes::INVALID,
                        format!("episode name {n} must be 1-64 of [A-Za-z0-9_.-]"),
                    ));
                }
            }
            let f: RecordFields = fields(v.clone(), kind)?;
            Ok(Inbound::Record {
                action: f.action,
                name: f.name,
            })
        }
        other => Err(ProtocolError::new(codes::UNSUPPORTED, format!("unsupported message type {other:?}"))),
    }
}
