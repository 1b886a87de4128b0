//! Floating point scalar abstraction shared by the sensor model and the engine.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point types usable for distances and durations: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    ///
    /// Every `f64` is representable (possibly rounded) in the supported types,
    /// so this never fails.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// Lossy view as `f64`, used for error payloads and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Rounds `value` to the nearest multiple of `quantum`, halves away from zero.
///
/// When the quantum is the reciprocal of an integer (0.01, 0.1, ...) the result
/// is computed as `n / k`, which yields the same value as parsing the decimal
/// literal, so quantized readings compare equal to values read back from text.
pub fn quantize<S: Scalar>(value: S, quantum: S) -> S {
    // `Float::round` rounds half away from zero.
    let steps = (value / quantum).round();
    let inv = quantum.recip();
    let inv_int = inv.round();
    if inv_int >= S::one() && (inv - inv_int).abs() <= S::lit(1e-9) * inv_int {
        steps / inv_int
    } else {
        steps * quantum
    }
}

/// Number of whole quanta in `value` after rounding half away from zero.
pub fn to_quanta<S: Scalar>(value: S, quantum: S) -> i64 {
    (value / quantum)
        .round()
        .to_i64()
        .expect("quantized value fits in i64")
}
