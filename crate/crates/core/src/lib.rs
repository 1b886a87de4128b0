//! Core of the boulescope system: an emulated ultrasonic jack, the petanque
//! scoring engine, the device wire codec, and accuracy statistics.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the service and the wire use.

pub mod game;
pub mod protocol;
pub mod scalar;
pub mod sensor;
pub mod stats;

pub use game::{BouleId, GameConfig, GameError, Phase, TurnMode};
pub use protocol::{CodecError, DeviceErrorCode, ProtocolMessage};
pub use scalar::Scalar;
pub use sensor::{EnvironmentKind, SensorError, SensorSpec};
pub use stats::StatsError;

pub type Measurement = sensor::Measurement<f64>;
pub type EnvironmentConfig = sensor::EnvironmentConfig<f64>;
pub type GameState = game::GameState<f64>;
pub type BouleRecord = game::BouleRecord<f64>;
pub type RoundResult = game::RoundResult<f64>;
pub type AccuracyReport = stats::AccuracyReport<f64>;
pub type AccuracyRow = stats::AccuracyRow<f64>;
pub type BenchConfig = stats::BenchConfig<f64>;

pub type Measurement32 = sensor::Measurement<f32>;
pub type EnvironmentConfig32 = sensor::EnvironmentConfig<f32>;
pub type GameState32 = game::GameState<f32>;
