//! Emulated HC-SR04 ultrasonic ranger mounted in the jack.
//!
//! The model is time-of-flight physics plus an environment-dependent noise
//! law: a constant bias, a zero-mean Gaussian truncated at two standard
//! deviations, and quantization to the reading resolution. Every function here
//! is pure; randomness is derived from an explicit `(seed, sequence_no)` pair.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{quantize, Scalar};

/// Lowest temperature the speed-of-sound approximation is used for.
pub const MIN_TEMPERATURE_C: f64 = -20.0;
/// Highest temperature the speed-of-sound approximation is used for.
pub const MAX_TEMPERATURE_C: f64 = 50.0;

/// Noise standard deviation fitted to an indoor mean max-abs-deviation of 0.03 cm.
pub const INDOOR_SIGMA_CM: f64 = 0.0256;
/// Noise standard deviation fitted to an outdoor mean max-abs-deviation of
/// 0.05 cm with [`OUTDOOR_BIAS_CM`] applied.
pub const OUTDOOR_SIGMA_CM: f64 = 0.0362;
/// Outdoor readings skew long.
pub const OUTDOOR_BIAS_CM: f64 = 0.02;
/// Reading resolution (two decimals).
pub const DEFAULT_QUANTUM_CM: f64 = 0.01;

/// Truncation point of the noise distribution, in standard deviations.
pub const NOISE_TRUNCATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("distance {distance_cm} cm outside sensor range [2, 400] cm")]
    OutOfRange { distance_cm: f64 },
    #[error("temperature {temperature_c} °C outside modelled range [-20, 50] °C")]
    OutOfModel { temperature_c: f64 },
    #[error("echo duration must be positive, got {echo_duration_us} µs")]
    InvalidEcho { echo_duration_us: f64 },
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
}

pub type Result<T, E = SensorError> = std::result::Result<T, E>;

/// Fixed datasheet characteristics of the ranger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub min_range_cm: f64,
    pub max_range_cm: f64,
    pub accuracy_cm: f64,
    pub frequency_khz: f64,
}

impl SensorSpec {
    pub const HC_SR04: SensorSpec = SensorSpec {
        min_range_cm: 2.0,
        max_range_cm: 400.0,
        accuracy_cm: 0.3,
        frequency_khz: 40.0,
    };

    pub fn contains<S: Scalar>(&self, distance_cm: S) -> bool {
        distance_cm >= S::lit(self.min_range_cm) && distance_cm <= S::lit(self.max_range_cm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Indoor,
    Outdoor,
}

impl EnvironmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvironmentKind::Indoor => "indoor",
            EnvironmentKind::Outdoor => "outdoor",
        }
    }
}

impl std::fmt::Display for EnvironmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvironmentKind {
    type Err = SensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(EnvironmentKind::Indoor),
            "outdoor" => Ok(EnvironmentKind::Outdoor),
            other => Err(SensorError::InvalidEnvironment(format!(
                "unknown environment {other:?}"
            ))),
        }
    }
}

/// Conditions a reading is taken under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EnvironmentConfig<S> {
    pub kind: EnvironmentKind,
    pub temperature_c: S,
    pub noise_sigma_cm: S,
    pub bias_cm: S,
    pub quantum_cm: S,
}

impl<S: Scalar> EnvironmentConfig<S> {
    /// Calibrated indoor defaults: 20 °C, no bias.
    pub fn indoor() -> Self {
        EnvironmentConfig {
            kind: EnvironmentKind::Indoor,
            temperature_c: S::lit(20.0),
            noise_sigma_cm: S::lit(INDOOR_SIGMA_CM),
            bias_cm: S::zero(),
            quantum_cm: S::lit(DEFAULT_QUANTUM_CM),
        }
    }

    /// Calibrated outdoor defaults: 30 °C, readings biased long.
    pub fn outdoor() -> Self {
        EnvironmentConfig {
            kind: EnvironmentKind::Outdoor,
            temperature_c: S::lit(30.0),
            noise_sigma_cm: S::lit(OUTDOOR_SIGMA_CM),
            bias_cm: S::lit(OUTDOOR_BIAS_CM),
            quantum_cm: S::lit(DEFAULT_QUANTUM_CM),
        }
    }

    pub fn for_kind(kind: EnvironmentKind) -> Self {
        match kind {
            EnvironmentKind::Indoor => Self::indoor(),
            EnvironmentKind::Outdoor => Self::outdoor(),
        }
    }

    /// Same environment with noise and bias removed.
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma_cm = S::zero();
        self.bias_cm = S::zero();
        self
    }

    pub fn with_sigma(mut self, sigma_cm: S) -> Self {
        self.noise_sigma_cm = sigma_cm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma_cm.is_nan() || self.noise_sigma_cm < S::zero() {
            return Err(SensorError::InvalidEnvironment(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma_cm
            )));
        }
        if self.quantum_cm <= S::zero() || !self.quantum_cm.is_finite() {
            return Err(SensorError::InvalidEnvironment(format!(
                "quantum must be > 0, got {}",
                self.quantum_cm
            )));
        }
        if !self.bias_cm.is_finite() {
            return Err(SensorError::InvalidEnvironment("bias must be finite".into()));
        }
        check_temperature(self.temperature_c)
    }
}

/// One sensed distance reading.
///
/// `timestamp` is left unset by [`measure`] so that readings stay a pure
/// function of their inputs; the service stamps them on receipt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Measurement<S> {
    pub echo_duration_us: S,
    pub distance_cm: S,
    pub environment: EnvironmentKind,
    pub sequence_no: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

impl<S: Scalar> Measurement<S> {
    pub fn with_timestamp(mut self, at: DateTime<Utc>) -> Self {
        self.timestamp = Some(at);
        self
    }
}

fn check_temperature<S: Scalar>(temperature_c: S) -> Result<()> {
    if temperature_c >= S::lit(MIN_TEMPERATURE_C) && temperature_c <= S::lit(MAX_TEMPERATURE_C) {
        Ok(())
    } else {
        Err(SensorError::OutOfModel {
            temperature_c: temperature_c.as_f64(),
        })
    }
}

fn check_range<S: Scalar>(distance_cm: S) -> Result<()> {
    if SensorSpec::HC_SR04.contains(distance_cm) {
        Ok(())
    } else {
        Err(SensorError::OutOfRange {
            distance_cm: distance_cm.as_f64(),
        })
    }
}

/// Speed of sound in dry air, in cm/µs: `(331.3 + 0.606 T) m/s`.
pub fn speed_of_sound<S: Scalar>(temperature_c: S) -> Result<S> {
    check_temperature(temperature_c)?;
    let m_per_s = S::lit(331.3) + S::lit(0.606) * temperature_c;
    Ok(m_per_s * S::lit(1e-4))
}

/// Round-trip time of flight for a target at `true_distance_cm`.
pub fn echo_duration<S: Scalar>(true_distance_cm: S, temperature_c: S) -> Result<S> {
    check_range(true_distance_cm)?;
    let speed = speed_of_sound(temperature_c)?;
    Ok(S::lit(2.0) * true_distance_cm / speed)
}

/// Distance implied by an echo, the inverse of [`echo_duration`].
pub fn distance_from_echo<S: Scalar>(echo_duration_us: S, temperature_c: S) -> Result<S> {
    if echo_duration_us <= S::zero() || !echo_duration_us.is_finite() {
        return Err(SensorError::InvalidEcho {
            echo_duration_us: echo_duration_us.as_f64(),
        });
    }
    let speed = speed_of_sound(temperature_c)?;
    let distance = echo_duration_us * speed / S::lit(2.0);
    // Round-off from the inversion must not push a boundary distance out.
    let slack = S::lit(1e-9);
    let spec = SensorSpec::HC_SR04;
    if distance < S::lit(spec.min_range_cm) - slack || distance > S::lit(spec.max_range_cm) + slack
    {
        return Err(SensorError::OutOfRange {
            distance_cm: distance.as_f64(),
        });
    }
    Ok(distance)
}

/// Random stream for one reading.
pub fn reading_rng(seed: u64, sequence_no: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sequence_no);
    rng
}

/// Standard normal draw conditioned on `|z| <= NOISE_TRUNCATION` (rejection).
pub fn truncated_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= NOISE_TRUNCATION {
            return z;
        }
    }
}

/// Takes one reading of a target at `true_distance_cm`.
///
/// The result depends only on the arguments. A noisy reading that lands
/// outside the sensor range is reported as [`SensorError::OutOfRange`] rather
/// than clamped; callers may retry with another `sequence_no`.
pub fn measure<S: Scalar>(
    true_distance_cm: S,
    env: &EnvironmentConfig<S>,
    seed: u64,
    sequence_no: u64,
) -> Result<Measurement<S>> {
    env.validate()?;
    check_range(true_distance_cm)?;

    let noise = if env.noise_sigma_cm > S::zero() {
        let mut rng = reading_rng(seed, sequence_no);
        env.noise_sigma_cm * S::lit(truncated_standard_normal(&mut rng))
    } else {
        S::zero()
    };
    let distance_cm = quantize(true_distance_cm + env.bias_cm + noise, env.quantum_cm);
    check_range(distance_cm)?;
    let echo_duration_us = echo_duration(distance_cm, env.temperature_c)?;

    Ok(Measurement {
        echo_duration_us,
        distance_cm,
        environment: env.kind,
        sequence_no,
        timestamp: None,
    })
}
