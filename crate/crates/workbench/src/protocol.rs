//! Wire format of the workbench channel.
//!
//! Every frame is a JSON text message. The client opens with `hello`,
//! listing the protocol versions it speaks; the server answers with the
//! version it picked. Afterwards each request
//! `{"id", "verb", "payload"}` receives exactly one response
//! `{"id", "verb", "revision", "payload", "error"}`, and the server pushes
//! `{"event": "scene", "revision", "payload"}` whenever the scene revision
//! changes.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

pub const VERBS: &[&str] = &[
    "hello",
    "get_scene",
    "nudge_virtual",
    "set_virtual",
    "set_config",
    "add_mirror",
    "remove_mirror",
    "record_trial",
    "finalize",
    "evaluate",
    "plan",
    "mark_step",
    "score",
    "save_session",
    "load_session",
    "project_reference",
    "pick",
    "triangulate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default)]
    pub id: u64,
    pub verb: String,
    #[serde(default)]
    pub payload: Value,
}

impl Request {
    pub fn new(id: u64, verb: impl Into<String>, payload: Value) -> Self {
        Self { id, verb: verb.into(), payload }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub verb: String,
    pub revision: u64,
    pub payload: Option<Value>,
    pub error: Option<ApiError>,
}

impl Response {
    pub fn ok(req: &Request, revision: u64, payload: Value) -> Self {
        Self { id: req.id, verb: req.verb.clone(), revision, payload: Some(payload), error: None }
    }

    pub fn err(req: &Request, revision: u64, error: ApiError) -> Self {
        Self { id: req.id, verb: req.verb.clone(), revision, payload: None, error: Some(error) }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event: String,
    pub revision: u64,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub protocols: Vec<u32>,
    #[serde(default)]
    pub client: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub protocol: u32,
    pub server: String,
    pub verbs: Vec<String>,
}

/// Highest version both sides speak.
pub fn negotiate(hello: &Hello) -> Option<u32> {
    hello.protocols.iter().copied().filter(|&v| v == PROTOCOL_VERSION).max()
}

pub fn welcome(version: u32) -> Welcome {
    Welcome {
        protocol: version,
        server: format!("realign-workbench {}", env!("CARGO_PKG_VERSION")),
        verbs: VERBS.iter().map(|v| v.to_string()).collect(),
    }
}
