//! `tool.v1` wire types shared by the remote client, the mock server and
//! out-of-process model servers.

use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::ArgValue;
use crate::image::Raster;
use crate::tools::{decode_png_b64, encode_png_b64, AtomicOutput, AtomicRequest, ToolError, ToolErrorKind};
use crate::world::SceneView;

pub const PROTOCOL_VERSION: &str = "tool.v1";
pub const ATOMIC_PATH: &str = "/v1/atomic";
pub const HEALTH_PATH: &str = "/v1/health";
/// Request header asking a test server to simulate a fault.
pub const INJECT_HEADER: &str = "x-inject";
/// Environment variable overriding the backend endpoint.
pub const BACKEND_ENV: &str = "SPATIALBOX_BACKEND";

fn protocol_version() -> String {
    PROTOCOL_VERSION.to_string()
}

/// The input image: a server-side scene reference, inline PNG, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<SceneView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b64: Option<String>,
}

impl WireImage {
    pub fn decode(&self) -> Option<Result<Arc<Raster>, String>> {
        self.b64.as_deref().map(decode_png_b64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    #[serde(default = "protocol_version")]
    pub protocol: String,
    pub request_id: String,
    pub atomic_name: String,
    pub image: WireImage,
    #[serde(default)]
    pub args: IndexMap<String, ArgValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<AtomicOutput>,
    #[serde(default)]
    pub seed: u64,
    pub deadline_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unsupported protocol `{0}`")]
    Version(String),
    #[error("request_id must be non-empty")]
    EmptyRequestId,
    #[error("deadline_ms must be positive")]
    ZeroDeadline,
    #[error("image needs a reference or inline data")]
    NoImage,
    #[error("status ok without payload")]
    OkWithoutPayload,
    #[error("status error without detail")]
    ErrorWithoutDetail,
    #[error("response echoes request `{found}`, expected `{expected}`")]
    IdMismatch { expected: String, found: String },
}

impl ToolRequest {
    /// Builds the wire request for one atomic call. Scene-backed images travel
    /// by reference; others inline as PNG.
    pub fn from_atomic(request_id: impl Into<String>, request: &AtomicRequest<'_>, deadline_ms: u64) -> Self {
        let image = match &request.image.source {
            Some(source) => WireImage { reference: Some(source.clone()), b64: None },
            None => WireImage { reference: None, b64: Some(encode_png_b64(&request.image.raster)) },
        };
        Self {
            protocol: protocol_version(),
            request_id: request_id.into(),
            atomic_name: request.name.to_string(),
            image,
            args: request.input.args.clone(),
            inputs: request.input.inputs.clone(),
            seed: request.seed,
            deadline_ms,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.protocol != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(self.protocol.clone()));
        }
        if self.request_id.is_empty() {
            return Err(ProtocolError::EmptyRequestId);
        }
        if self.deadline_ms == 0 {
            return Err(ProtocolError::ZeroDeadline);
        }
        if self.image.reference.is_none() && self.image.b64.is_none() {
            return Err(ProtocolError::NoImage);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Empty,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub request_id: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<AtomicOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

impl ToolResponse {
    pub fn ok(request_id: impl Into<String>, payload: AtomicOutput) -> Self {
        Self { request_id: request_id.into(), status: ResponseStatus::Ok, payload: Some(payload), error_detail: None }
    }

    pub fn empty(request_id: impl Into<String>) -> Self {
        Self { request_id: request_id.into(), status: ResponseStatus::Empty, payload: None, error_detail: None }
    }

    pub fn error(request_id: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            status: ResponseStatus::Error,
            payload: None,
            error_detail: Some(detail.into()),
        }
    }

    /// Maps a backend result onto the wire: empty returns and execution
    /// errors become statuses; other kinds are carried as errors with the kind named.
    pub fn from_result(request_id: impl Into<String>, result: Result<AtomicOutput, ToolError>) -> Self {
        match result {
            Ok(payload) => Self::ok(request_id, payload),
            Err(e) if e.kind == ToolErrorKind::EmptyReturn => Self::empty(request_id),
            Err(e) => Self::error(request_id, e.detail),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self.status {
            ResponseStatus::Ok if self.payload.is_none() => Err(ProtocolError::OkWithoutPayload),
            ResponseStatus::Error if self.error_detail.as_deref().is_none_or(str::is_empty) => {
                Err(ProtocolError::ErrorWithoutDetail)
            }
            _ => Ok(()),
        }
    }

    /// Validates the response against its request and converts it to a tool result.
    pub fn into_result(self, expected_id: &str) -> Result<AtomicOutput, TransportError> {
        if self.request_id != expected_id {
            let e = ProtocolError::IdMismatch { expected: expected_id.to_string(), found: self.request_id };
            return Err(TransportError::MalformedResponse(e.to_string()));
        }
        self.validate().map_err(|e| TransportError::MalformedResponse(e.to_string()))?;
        match self.status {
            ResponseStatus::Ok => Ok(self.payload.expect("validated")),
            ResponseStatus::Empty => Err(TransportError::Application(ToolError::new(ToolErrorKind::EmptyReturn, "backend returned no result"))),
            ResponseStatus::Error => Err(TransportError::Application(ToolError::new(
                ToolErrorKind::ExecutionError,
                self.error_detail.unwrap_or_default(),
            ))),
        }
    }
}

/// Faults of the transport itself, plus application-level errors passed through.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    ConnectFailed(String),
    #[error("deadline exceeded: {0}")]
    DeadlineExceeded(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Application(ToolError),
}

impl From<TransportError> for ToolError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::ConnectFailed(d) => ToolError::new(ToolErrorKind::BackendUnavailable, d),
            TransportError::DeadlineExceeded(d) => ToolError::new(ToolErrorKind::Timeout, d),
            TransportError::MalformedResponse(d) => ToolError::new(ToolErrorKind::ExecutionError, d),
            TransportError::Application(e) => e,
        }
    }
}

/// Faults a test server can be asked to simulate through [`INJECT_HEADER`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectMode {
    Empty,
    Error,
    Timeout,
    Unavailable,
}

impl InjectMode {
    pub fn header_value(self) -> &'static str {
        match self {
            InjectMode::Empty => "empty",
            InjectMode::Error => "error",
            InjectMode::Timeout => "timeout",
            InjectMode::Unavailable => "unavailable",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        match value.trim() {
            "empty" => Some(InjectMode::Empty),
            "error" => Some(InjectMode::Error),
            "timeout" => Some(InjectMode::Timeout),
            "unavailable" => Some(InjectMode::Unavailable),
            _ => None,
        }
    }
}

impl From<ToolErrorKind> for InjectMode {
    fn from(kind: ToolErrorKind) -> Self {
        match kind {
            ToolErrorKind::EmptyReturn => InjectMode::Empty,
            ToolErrorKind::ExecutionError => InjectMode::Error,
            ToolErrorKind::Timeout => InjectMode::Timeout,
            ToolErrorKind::BackendUnavailable => InjectMode::Unavailable,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{BBox, Detection};

    #[test]
    fn response_invariants() {
        let bad = ToolResponse { request_id: "r".into(), status: ResponseStatus::Ok, payload: None, error_detail: None };
        assert_eq!(bad.validate(), Err(ProtocolError::OkWithoutPayload));
        assert!(matches!(bad.into_result("r"), Err(TransportError::MalformedResponse(_))));
        let bad = ToolResponse::error("r", "");
        assert_eq!(bad.validate(), Err(ProtocolError::ErrorWithoutDetail));
        let e: ToolError = ToolResponse::empty("r").into_result("r").unwrap_err().into();
        assert_eq!(e.kind, ToolErrorKind::EmptyReturn);
        let e = ToolResponse::empty("r").into_result("s").unwrap_err();
        assert!(matches!(e, TransportError::MalformedResponse(_)));
    }

    #[test]
    fn transport_errors_map_to_distinct_kinds() {
        let kinds: Vec<ToolErrorKind> = [
            TransportError::ConnectFailed(String::new()),
            TransportError::DeadlineExceeded(String::new()),
            TransportError::MalformedResponse(String::new()),
        ]
        .into_iter()
        .map(|e| ToolError::from(e).kind)
        .collect();
        assert_eq!(kinds, [ToolErrorKind::BackendUnavailable, ToolErrorKind::Timeout, ToolErrorKind::ExecutionError]);
    }

    #[test]
    fn request_json_round_trip() {
        let req = ToolRequest {
            protocol: PROTOCOL_VERSION.into(),
            request_id: "ep-1".into(),
            atomic_name: "segment".into(),
            image: WireImage { reference: Some(SceneView::of("scene-1")), b64: None },
            args: [("image".to_string(), ArgValue::Text("image-0".into()))].into_iter().collect(),
            inputs: vec![AtomicOutput::Detections {
                detections: vec![Detection { label: "a cup".into(), bbox: BBox::new(0.1, 2.0, 3.3, 4.0), score: 0.7 }],
            }],
            seed: u64::MAX,
            deadline_ms: 50,
        };
        let text = serde_json::to_string(&req).unwrap();
        let back: ToolRequest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, req);
        back.validate().unwrap();
        let zero = ToolRequest { deadline_ms: 0, ..req };
        assert_eq!(zero.validate(), Err(ProtocolError::ZeroDeadline));
    }

    #[test]
    fn inject_modes_round_trip() {
        for kind in [ToolErrorKind::EmptyReturn, ToolErrorKind::ExecutionError, ToolErrorKind::Timeout, ToolErrorKind::BackendUnavailable] {
            let mode = InjectMode::from(kind);
            assert_eq!(InjectMode::parse(mode.header_value()), Some(mode));
        }
    }
}
