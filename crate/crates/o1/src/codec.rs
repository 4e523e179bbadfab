//! Wire format: one UTF-8 JSON object per line.
//!
//! ```text
//! {"version":1,"msg_type":"PRB_ALLOCATION","msg_id":7,"tenant_id":"a",
//!  "timestamp":"2024-01-01T00:00:00Z","payload":{"forecast_start":"…","prbs":[…]}}
//! ```

use std::fmt;
use std::io::{self, BufRead};

use chrono::{DateTime, Utc};
use prbcast_core::ts::{format_timestamp, parse_timestamp};
use serde_json::{json, Map, Value};

pub const PROTOCOL_VERSION: u64 = 1;

/// Entries in an allocation vector.
pub const ALLOCATION_HOURS: usize = 24;

/// Longest frame accepted by [`read_frame`], newline included.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    PrbHistoryReport,
    PrbAllocation,
    Ack,
    Error,
}

impl MsgType {
    pub const ALL: [MsgType; 4] = [
        MsgType::PrbHistoryReport,
        MsgType::PrbAllocation,
        MsgType::Ack,
        MsgType::Error,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            MsgType::PrbHistoryReport => "PRB_HISTORY_REPORT",
            MsgType::PrbAllocation => "PRB_ALLOCATION",
            MsgType::Ack => "ACK",
            MsgType::Error => "ERROR",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.wire_name() == s)
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Demand observed in the hour starting at the message timestamp.
    History { prb_demand: f64 },
    Allocation {
        forecast_start: DateTime<Utc>,
        prbs: Vec<u32>,
    },
    Ack { ack_msg_id: u64 },
    Error { code: String, text: String },
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::History { .. } => MsgType::PrbHistoryReport,
            Payload::Allocation { .. } => MsgType::PrbAllocation,
            Payload::Ack { .. } => MsgType::Ack,
            Payload::Error { .. } => MsgType::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct O1Message {
    pub version: u64,
    pub msg_id: u64,
    pub tenant_id: String,
    pub timestamp: DateTime<Utc>,
    pub payload: Payload,
}

impl O1Message {
    pub fn new(msg_id: u64, tenant_id: impl Into<String>, timestamp: DateTime<Utc>, payload: Payload) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            msg_id,
            tenant_id: tenant_id.into(),
            timestamp,
            payload,
        }
    }

    pub fn msg_type(&self) -> MsgType {
        self.payload.msg_type()
    }

    /// Checks the invariants that [`decode`] enforces.
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.version != PROTOCOL_VERSION {
            return Err(CodecError::invalid("version", format!("unsupported version {}", self.version)));
        }
        match &self.payload {
            Payload::History { prb_demand } => {
                if !prb_demand.is_finite() || *prb_demand < 0.0 {
                    return Err(CodecError::invalid(
                        "payload.prb_demand",
                        format!("{prb_demand} is not a finite non-negative demand"),
                    ));
                }
            }
            Payload::Allocation { prbs, .. } => {
                if prbs.len() != ALLOCATION_HOURS {
                    return Err(CodecError::invalid(
                        "payload.prbs",
                        format!("expected {ALLOCATION_HOURS} entries, got {}", prbs.len()),
                    ));
                }
            }
            Payload::Ack { .. } | Payload::Error { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("frame is not a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    Missing(String),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown msg_type {0:?}")]
    UnknownType(String),
}

impl CodecError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        CodecError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// The offending field, when the error concerns one.
    pub fn field(&self) -> Option<&str> {
        match self {
            CodecError::Missing(f) | CodecError::Invalid { field: f, .. } => Some(f),
            CodecError::UnknownType(_) => Some("msg_type"),
            _ => None,
        }
    }
}

/// Serializes `msg` as one newline-terminated frame.
pub fn encode(msg: &O1Message) -> Result<Vec<u8>, CodecError> {
    msg.validate()?;
    let payload = match &msg.payload {
        Payload::History { prb_demand } => json!({ "prb_demand": prb_demand }),
        Payload::Allocation { forecast_start, prbs } => json!({
            "forecast_start": format_timestamp(*forecast_start),
            "prbs": prbs,
        }),
        Payload::Ack { ack_msg_id } => json!({ "ack_msg_id": ack_msg_id }),
        Payload::Error { code, text } => json!({ "code": code, "text": text }),
    };
    let frame = json!({
        "version": msg.version,
        "msg_type": msg.msg_type().wire_name(),
        "msg_id": msg.msg_id,
        "tenant_id": msg.tenant_id,
        "timestamp": format_timestamp(msg.timestamp),
        "payload": payload,
    });
    // serde_json escapes control characters, so the text has no raw newline
    let mut bytes = serde_json::to_vec(&frame).map_err(|e| CodecError::Json(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parses one frame. A trailing newline is optional; unknown fields are
/// ignored.
pub fn decode(frame: &[u8]) -> Result<O1Message, CodecError> {
    let text = std::str::from_utf8(frame).map_err(|e| CodecError::Json(e.to_string()))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if text.contains('\n') {
        return Err(CodecError::Json("embedded newline".into()));
    }
    let value: Value = serde_json::from_str(text).map_err(|e| CodecError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(CodecError::NotAnObject)?;

    let version = get_u64(obj, "version", "version")?;
    let msg_type = get_str(obj, "msg_type", "msg_type")?;
    let msg_type = MsgType::from_wire(msg_type).ok_or_else(|| CodecError::UnknownType(msg_type.to_string()))?;
    let msg_id = get_u64(obj, "msg_id", "msg_id")?;
    let tenant_id = get_str(obj, "tenant_id", "tenant_id")?.to_string();
    let timestamp = get_time(obj, "timestamp", "timestamp")?;
    let payload = obj
        .get("payload")
        .ok_or_else(|| CodecError::Missing("payload".into()))?
        .as_object()
        .ok_or_else(|| CodecError::invalid("payload", "expected an object"))?;

    let payload = match msg_type {
        MsgType::PrbHistoryReport => {
            let field = "payload.prb_demand";
            let prb_demand = payload
                .get("prb_demand")
                .ok_or_else(|| CodecError::Missing(field.into()))?
                .as_f64()
                .ok_or_else(|| CodecError::invalid(field, "expected a number"))?;
            Payload::History { prb_demand }
        }
        MsgType::PrbAllocation => {
            let forecast_start = get_time(payload, "forecast_start", "payload.forecast_start")?;
            let field = "payload.prbs";
            let items = payload
                .get("prbs")
                .ok_or_else(|| CodecError::Missing(field.into()))?
                .as_array()
                .ok_or_else(|| CodecError::invalid(field, "expected an array"))?;
            let prbs = items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .and_then(|n| u32::try_from(n).ok())
                        .ok_or_else(|| CodecError::invalid(field, format!("{v} is not a non-negative 32-bit integer")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Payload::Allocation { forecast_start, prbs }
        }
        MsgType::Ack => Payload::Ack {
            ack_msg_id: get_u64(payload, "ack_msg_id", "payload.ack_msg_id")?,
        },
        MsgType::Error => Payload::Error {
            code: get_str(payload, "code", "payload.code")?.to_string(),
            text: get_str(payload, "text", "payload.text")?.to_string(),
        },
    };

    let msg = O1Message {
        version,
        msg_id,
        tenant_id,
        timestamp,
        payload,
    };
    msg.validate()?;
    Ok(msg)
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str, field: &str) -> Result<&'a Value, CodecError> {
    obj.get(key).ok_or_else(|| CodecError::Missing(field.to_string()))
}

fn get_u64(obj: &Map<String, Value>, key: &str, field: &str) -> Result<u64, CodecError> {
    get(obj, key, field)?
        .as_u64()
        .ok_or_else(|| CodecError::invalid(field, "expected a non-negative integer"))
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str, field: &str) -> Result<&'a str, CodecError> {
    get(obj, key, field)?
        .as_str()
        .ok_or_else(|| CodecError::invalid(field, "expected a string"))
}

fn get_time(obj: &Map<String, Value>, key: &str, field: &str) -> Result<DateTime<Utc>, CodecError> {
    let s = get_str(obj, key, field)?;
    if !s.ends_with('Z') {
        return Err(CodecError::invalid(field, format!("{s:?} is not a UTC timestamp")));
    }
    parse_timestamp(s).map_err(|e| CodecError::invalid(field, e.to_string()))
}

/// Reads the next newline-terminated frame. Returns `None` at a clean end of
/// stream; a trailing partial frame at end of stream is an error.
pub fn read_frame<R: BufRead>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut frame = Vec::new();
    let n = io::Read::take(&mut *reader, MAX_FRAME_BYTES as u64).read_until(b'\n', &mut frame)?;
    if n == 0 {
        return Ok(None);
    }
    if frame.last() != Some(&b'\n') {
        let msg = if frame.len() >= MAX_FRAME_BYTES {
            "frame exceeds size limit"
        } else {
            "stream ended inside a frame"
        };
        return Err(io::Error::new(io::ErrorKind::InvalidData, msg));
    }
    Ok(Some(frame))
}
