//! Line-delimited JSON wire format between the jack device and the service.
//!
//! Each frame is one UTF-8 JSON object on a single line, terminated by LF.
//! Encoding is byte-exact: `"type"` comes first, the remaining fields follow
//! in declaration order, and there is no whitespace. Decoding accepts fields
//! in any order but is strict about their types.

use std::fmt::Write as _;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::sensor::{EnvironmentKind, Measurement};

/// Frames longer than this are rejected by stream readers.
pub const MAX_FRAME_LEN: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownMessage(String),
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceErrorCode {
    OutOfRange,
    Busy,
    Malformed,
}

impl DeviceErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceErrorCode::OutOfRange => "out_of_range",
            DeviceErrorCode::Busy => "busy",
            DeviceErrorCode::Malformed => "malformed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "out_of_range" => Some(DeviceErrorCode::OutOfRange),
            "busy" => Some(DeviceErrorCode::Busy),
            "malformed" => Some(DeviceErrorCode::Malformed),
            _ => None,
        }
    }
}

impl std::fmt::Display for DeviceErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every frame exchanged between device and service.
///
/// `distance_cm` travels with two decimals and `echo_duration_us` with one;
/// values with more precision are rounded by [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    Hello {
        device_id: String,
        firmware: String,
    },
    MeasureRequest {
        request_id: String,
        boule_id: String,
    },
    MeasurementReport {
        request_id: String,
        boule_id: String,
        distance_cm: f64,
        echo_duration_us: f64,
        environment: String,
    },
    DeviceError {
        request_id: String,
        code: DeviceErrorCode,
        detail: String,
    },
}

impl ProtocolMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ProtocolMessage::Hello { .. } => "hello",
            ProtocolMessage::MeasureRequest { .. } => "measure_request",
            ProtocolMessage::MeasurementReport { .. } => "measurement_report",
            ProtocolMessage::DeviceError { .. } => "device_error",
        }
    }

    /// Request id echoed by replies, `None` for `Hello`.
    pub fn request_id(&self) -> Option<&str> {
        match self {
            ProtocolMessage::Hello { .. } => None,
            ProtocolMessage::MeasureRequest { request_id, .. }
            | ProtocolMessage::MeasurementReport { request_id, .. }
            | ProtocolMessage::DeviceError { request_id, .. } => Some(request_id),
        }
    }

    /// Report for a sensor reading, rounded to wire precision.
    pub fn report(request_id: impl Into<String>, boule_id: impl Into<String>, m: &Measurement<f64>) -> Self {
        ProtocolMessage::MeasurementReport {
            request_id: request_id.into(),
            boule_id: boule_id.into(),
            distance_cm: round_to(m.distance_cm, 2),
            echo_duration_us: round_to(m.echo_duration_us, 1),
            environment: m.environment.as_str().to_string(),
        }
    }

    /// Reading carried by a `MeasurementReport`.
    pub fn to_measurement(&self, sequence_no: u64) -> Option<Measurement<f64>> {
        match self {
            ProtocolMessage::MeasurementReport {
                distance_cm,
                echo_duration_us,
                environment,
                ..
            } => Some(Measurement {
                echo_duration_us: *echo_duration_us,
                distance_cm: *distance_cm,
                environment: environment.parse::<EnvironmentKind>().ok()?,
                sequence_no,
                timestamp: None,
            }),
            _ => None,
        }
    }
}

/// Rounds half away from zero to `places` decimals, matching what the
/// decimal text on the wire parses back to.
pub fn round_to(value: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (value * scale).round() / scale
}

fn push_str(out: &mut String, key: &str, value: &str) {
    out.push_str(",\"");
    out.push_str(key);
    out.push_str("\":");
    out.push_str(&Value::from(value).to_string());
}

fn push_fixed(out: &mut String, key: &str, value: f64, places: usize) {
    let _ = write!(out, ",\"{key}\":{:.*}", places, value);
}

/// Serializes one frame, including the trailing LF.
pub fn encode(msg: &ProtocolMessage) -> Vec<u8> {
    encode_line(msg).into_bytes()
}

pub fn encode_line(msg: &ProtocolMessage) -> String {
    let mut out = String::with_capacity(128);
    out.push_str("{\"type\":\"");
    out.push_str(msg.type_name());
    out.push('"');
    match msg {
        ProtocolMessage::Hello { device_id, firmware } => {
            push_str(&mut out, "device_id", device_id);
            push_str(&mut out, "firmware", firmware);
        }
        ProtocolMessage::MeasureRequest { request_id, boule_id } => {
            push_str(&mut out, "request_id", request_id);
            push_str(&mut out, "boule_id", boule_id);
        }
        ProtocolMessage::MeasurementReport {
            request_id,
            boule_id,
            distance_cm,
            echo_duration_us,
            environment,
        } => {
            push_str(&mut out, "request_id", request_id);
            push_str(&mut out, "boule_id", boule_id);
            push_fixed(&mut out, "distance_cm", *distance_cm, 2);
            push_fixed(&mut out, "echo_duration_us", *echo_duration_us, 1);
            push_str(&mut out, "environment", environment);
        }
        ProtocolMessage::DeviceError {
            request_id,
            code,
            detail,
        } => {
            push_str(&mut out, "request_id", request_id);
            push_str(&mut out, "code", code.as_str());
            push_str(&mut out, "detail", detail);
        }
    }
    out.push_str("}\n");
    out
}

struct Fields {
    map: Map<String, Value>,
}

impl Fields {
    fn string(&mut self, key: &str) -> Result<String> {
        match self.map.remove(key) {
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(CodecError::Malformed(format!("field {key:?} must be a string, got {other}"))),
            None => Err(CodecError::Malformed(format!("missing field {key:?}"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<f64> {
        match self.map.remove(key) {
            Some(Value::Number(n)) => n
                .as_f64()
                .ok_or_else(|| CodecError::Malformed(format!("field {key:?} is not representable"))),
            Some(other) => Err(CodecError::Malformed(format!("field {key:?} must be a number, got {other}"))),
            None => Err(CodecError::Malformed(format!("missing field {key:?}"))),
        }
    }
}

/// Parses one frame. A single trailing LF (or CRLF) is accepted.
pub fn decode(line: &[u8]) -> Result<ProtocolMessage> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.contains(&b'\n') {
        return Err(CodecError::Malformed("interior line feed".into()));
    }
    let value: Value = serde_json::from_slice(line).map_err(|e| CodecError::Malformed(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(CodecError::Malformed("frame is not a JSON object".into()));
    };
    let mut fields = Fields { map };
    let kind = fields.string("type")?;
    let msg = match kind.as_str() {
        "hello" => ProtocolMessage::Hello {
            device_id: fields.string("device_id")?,
            firmware: fields.string("firmware")?,
        },
        "measure_request" => ProtocolMessage::MeasureRequest {
            request_id: fields.string("request_id")?,
            boule_id: fields.string("boule_id")?,
        },
        "measurement_report" => ProtocolMessage::MeasurementReport {
            request_id: fields.string("request_id")?,
            boule_id: fields.string("boule_id")?,
            distance_cm: fields.number("distance_cm")?,
            echo_duration_us: fields.number("echo_duration_us")?,
            environment: fields.string("environment")?,
        },
        "device_error" => {
            let request_id = fields.string("request_id")?;
            let code = fields.string("code")?;
            ProtocolMessage::DeviceError {
                request_id,
                code: DeviceErrorCode::parse(&code)
                    .ok_or_else(|| CodecError::Malformed(format!("unknown device error code {code:?}")))?,
                detail: fields.string("detail")?,
            }
        }
        _ => return Err(CodecError::UnknownMessage(kind)),
    };
    Ok(msg)
}

/// Splits a byte stream on LF and decodes each complete frame. Bytes after
/// the last LF are returned as the unconsumed remainder.
pub fn decode_stream(bytes: &[u8]) -> (Vec<Result<ProtocolMessage>>, &[u8]) {
    let mut frames = Vec::new();
    let mut rest = bytes;
    while let Some(pos) = rest.iter().position(|&b| b == b'\n') {
        frames.push(decode(&rest[..=pos]));
        rest = &rest[pos + 1..];
    }
    (frames, rest)
}
