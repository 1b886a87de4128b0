//! Scoring service for the emulated jack: device emulator, device link,
//! session management with an append-only event log, the HTTP/SSE API, and a
//! match driver.

pub mod device;
pub mod events;
pub mod http;
pub mod link;
pub mod matchplay;
pub mod service;

pub use device::{DeviceConfig, DeviceHandle, Scene};
pub use events::{replay, EventBody, EventKind, GameEvent, ReplayError};
pub use matchplay::{play_match, MatchOptions, MatchTranscript, SceneSource};
pub use service::{ScoringService, ServiceConfig, ServiceError, SessionView};

/// Environment variable naming the HTTP listen address.
pub const ADDR_ENV: &str = "BOULESCOPE_ADDR";
/// Environment variable naming the event log directory.
pub const LOG_DIR_ENV: &str = "BOULESCOPE_LOG_DIR";
