//! Accuracy statistics: the max-absolute-deviation statistic, Monte Carlo
//! noise calibration, and the indoor/outdoor accuracy bench.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{quantize, to_quanta, Scalar};
use crate::sensor::{self, truncated_standard_normal, EnvironmentConfig, EnvironmentKind, SensorError};

/// Distances, in cm, of the standard accuracy bench.
pub const BENCH_DISTANCES_CM: [f64; 4] = [3.0, 5.0, 10.0, 15.0];
/// Readings per condition per trial.
pub const READINGS_PER_TRIAL: usize = 3;
/// Relative tolerance the calibrated statistic must meet.
pub const CALIBRATION_TOLERANCE: f64 = 0.05;
/// Minimum Monte Carlo trials accepted by [`calibrate_sigma`].
pub const MIN_CALIBRATION_TRIALS: usize = 1000;

const STAT_QUANTUM: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no readings supplied")]
    EmptyInput,
    #[error("calibration failed: {0}")]
    CalibrationFailure(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

/// Largest `|reading - actual|`, rounded to 0.01 cm.
pub fn deviation_stat<S: Scalar>(actual_cm: S, readings: &[S]) -> Result<S> {
    let max = readings
        .iter()
        .map(|&r| (r - actual_cm).abs())
        .fold(None, |acc: Option<S>, d| Some(acc.map_or(d, |a| a.max(d))))
        .ok_or(StatsError::EmptyInput)?;
    Ok(quantize(max, S::lit(STAT_QUANTUM)))
}

/// Arithmetic mean of two-decimal statistics, rounded back to two decimals
/// (half away from zero) using exact integer arithmetic on hundredths.
pub fn mean_of_stats<S: Scalar>(stats: &[S]) -> Result<S> {
    if stats.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let q = S::lit(STAT_QUANTUM);
    let sum: i64 = stats.iter().map(|&s| to_quanta(s, q)).sum();
    let n = stats.len() as i64;
    let rounded = (2 * sum.abs() + n) / (2 * n) * sum.signum();
    Ok(quantize(S::lit(rounded as f64) * q, q))
}

/// Parameters of a noise calibration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSpec<S> {
    pub target_cm: S,
    pub samples_per_trial: usize,
    pub trials: usize,
    pub seed: u64,
    /// Constant reading bias the fitted sigma must be combined with.
    pub bias_cm: S,
    pub quantum_cm: S,
}

impl<S: Scalar> CalibrationSpec<S> {
    pub fn new(target_cm: S, samples_per_trial: usize, trials: usize, seed: u64) -> Self {
        CalibrationSpec {
            target_cm,
            samples_per_trial,
            trials,
            seed,
            bias_cm: S::zero(),
            quantum_cm: S::lit(sensor::DEFAULT_QUANTUM_CM),
        }
    }

    pub fn with_bias(mut self, bias_cm: S) -> Self {
        self.bias_cm = bias_cm;
        self
    }
}

/// Monte Carlo estimator of the expected max-abs-deviation of a group of
/// quantized noisy readings.
///
/// The standard normal draws are fixed at construction (common random
/// numbers), so the estimate is a nondecreasing function of sigma for
/// zero bias, which keeps bisection well behaved.
#[derive(Debug, Clone)]
pub struct DeviationEstimator<S> {
    draws: Vec<S>,
    samples_per_trial: usize,
    bias_cm: S,
    quantum_cm: S,
}

impl<S: Scalar> DeviationEstimator<S> {
    pub fn new(samples_per_trial: usize, trials: usize, seed: u64, bias_cm: S, quantum_cm: S) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..samples_per_trial * trials)
            .map(|_| S::lit(truncated_standard_normal(&mut rng)))
            .collect();
        DeviationEstimator {
            draws,
            samples_per_trial,
            bias_cm,
            quantum_cm,
        }
    }

    /// Mean over trials of `max_k |quantize(actual + bias + sigma z_k) - actual|`,
    /// with the actual distance cycling through the bench grid.
    pub fn estimate(&self, sigma_cm: S) -> S {
        let grid: Vec<S> = BENCH_DISTANCES_CM.iter().map(|&d| S::lit(d)).collect();
        let mut total = 0.0_f64;
        let mut trials = 0usize;
        for (t, group) in self.draws.chunks(self.samples_per_trial).enumerate() {
            let actual = grid[t % grid.len()];
            let worst = group
                .iter()
                .map(|&z| {
                    let reading = quantize(actual + self.bias_cm + sigma_cm * z, self.quantum_cm);
                    (reading - actual).abs()
                })
                .fold(S::zero(), |a, b| a.max(b));
            total += worst.as_f64();
            trials += 1;
        }
        S::lit(total / trials as f64)
    }
}

/// Fits the noise standard deviation so that the expected max-abs-deviation
/// of `samples_per_trial` readings equals `target_cm` (zero bias).
pub fn calibrate_sigma<S: Scalar>(
    target_cm: S,
    samples_per_trial: usize,
    trials: usize,
    seed: u64,
) -> Result<S> {
    calibrate(&CalibrationSpec::new(target_cm, samples_per_trial, trials, seed))
}

/// Bisection over sigma in (0, 1] cm.
pub fn calibrate<S: Scalar>(spec: &CalibrationSpec<S>) -> Result<S> {
    if spec.target_cm.is_nan() || spec.target_cm <= S::zero() {
        return Err(StatsError::CalibrationFailure(format!(
            "target must be positive, got {}",
            spec.target_cm
        )));
    }
    if spec.samples_per_trial < 1 {
        return Err(StatsError::InvalidConfig("samples_per_trial must be >= 1".into()));
    }
    if spec.trials < MIN_CALIBRATION_TRIALS {
        return Err(StatsError::InvalidConfig(format!(
            "at least {MIN_CALIBRATION_TRIALS} trials required, got {}",
            spec.trials
        )));
    }

    let est = DeviationEstimator::new(
        spec.samples_per_trial,
        spec.trials,
        spec.seed,
        spec.bias_cm,
        spec.quantum_cm,
    );
    let target = spec.target_cm;
    let tol = S::lit(CALIBRATION_TOLERANCE) * target;

    let mut lo = S::zero();
    let mut hi = S::one();
    let at_lo = est.estimate(lo);
    let at_hi = est.estimate(hi);
    if at_lo > target + tol {
        return Err(StatsError::CalibrationFailure(format!(
            "bias alone yields {at_lo} cm, above target {target} cm"
        )));
    }
    if at_hi < target - tol {
        return Err(StatsError::CalibrationFailure(format!(
            "sigma = 1 cm yields only {at_hi} cm, below target {target} cm"
        )));
    }

    let mut best: Option<(S, S)> = None;
    for _ in 0..60 {
        let mid = (lo + hi) / S::lit(2.0);
        let value = est.estimate(mid);
        let err = (value - target).abs();
        if mid > S::zero() && best.is_none_or(|(_, e)| err < e) {
            best = Some((mid, err));
        }
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= S::lit(1e-7) {
            break;
        }
    }

    match best {
        Some((sigma, err)) if err <= tol => Ok(sigma),
        _ => Err(StatsError::CalibrationFailure(format!(
            "no sigma in (0, 1] cm reaches {target} cm within {}%", CALIBRATION_TOLERANCE * 100.0
        ))),
    }
}

/// One row of the accuracy bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AccuracyRow<S> {
    pub actual_cm: S,
    pub environment: EnvironmentKind,
    /// Readings of the first trial, kept as a sample.
    pub readings: Vec<S>,
    /// Statistic of the sample readings.
    pub max_abs_dev_cm: S,
    /// Statistic averaged over all trials.
    pub mean_max_abs_dev_cm: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AccuracyReport<S> {
    pub rows: Vec<AccuracyRow<S>>,
    pub mean_max_abs_dev_indoor_cm: S,
    pub mean_max_abs_dev_outdoor_cm: S,
    pub trials: usize,
    pub seed: u64,
    pub indoor: EnvironmentConfig<S>,
    pub outdoor: EnvironmentConfig<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig<S> {
    pub trials: usize,
    pub seed: u64,
    pub indoor: EnvironmentConfig<S>,
    pub outdoor: EnvironmentConfig<S>,
    pub distances_cm: Vec<S>,
}

impl<S: Scalar> BenchConfig<S> {
    /// Default environments with the given noise levels on the standard grid.
    pub fn new(trials: usize, seed: u64, sigma_indoor: S, sigma_outdoor: S) -> Self {
        BenchConfig {
            trials,
            seed,
            indoor: EnvironmentConfig::indoor().with_sigma(sigma_indoor),
            outdoor: EnvironmentConfig::outdoor().with_sigma(sigma_outdoor),
            distances_cm: BENCH_DISTANCES_CM.iter().map(|&d| S::lit(d)).collect(),
        }
    }
}

/// Retries per reading when a noisy draw leaves the sensor range.
const MAX_REDRAWS: u64 = 16;

/// Reproduces the indoor/outdoor accuracy table with the default environments.
pub fn run_table2<S: Scalar>(
    trials: usize,
    seed: u64,
    sigma_indoor: S,
    sigma_outdoor: S,
) -> Result<AccuracyReport<S>> {
    run_bench(&BenchConfig::new(trials, seed, sigma_indoor, sigma_outdoor))
}

pub fn run_bench<S: Scalar>(config: &BenchConfig<S>) -> Result<AccuracyReport<S>> {
    if config.trials < 1 {
        return Err(StatsError::InvalidConfig("trials must be >= 1".into()));
    }
    if config.distances_cm.is_empty() {
        return Err(StatsError::InvalidConfig("no bench distances".into()));
    }
    for env in [&config.indoor, &config.outdoor] {
        if env.noise_sigma_cm.is_nan() || env.noise_sigma_cm < S::zero() {
            return Err(StatsError::InvalidConfig(format!(
                "{} sigma must be >= 0, got {}",
                env.kind, env.noise_sigma_cm
            )));
        }
        env.validate()?;
    }

    let mut rows = Vec::new();
    let mut condition = 0u64;
    for env in [&config.indoor, &config.outdoor] {
        for &actual in &config.distances_cm {
            rows.push(bench_condition(config, env, actual, condition)?);
            condition += 1;
        }
    }

    let env_mean = |kind: EnvironmentKind| {
        let stats: Vec<f64> = rows
            .iter()
            .filter(|r| r.environment == kind)
            .map(|r| r.mean_max_abs_dev_cm.as_f64())
            .collect();
        S::lit(stats.iter().sum::<f64>() / stats.len() as f64)
    };

    Ok(AccuracyReport {
        mean_max_abs_dev_indoor_cm: env_mean(EnvironmentKind::Indoor),
        mean_max_abs_dev_outdoor_cm: env_mean(EnvironmentKind::Outdoor),
        rows,
        trials: config.trials,
        seed: config.seed,
        indoor: config.indoor,
        outdoor: config.outdoor,
    })
}

fn bench_condition<S: Scalar>(
    config: &BenchConfig<S>,
    env: &EnvironmentConfig<S>,
    actual: S,
    condition: u64,
) -> Result<AccuracyRow<S>> {
    let per_condition = (config.trials * READINGS_PER_TRIAL) as u64;
    let mut sample = Vec::new();
    let mut sum = 0.0_f64;
    let mut readings = Vec::with_capacity(READINGS_PER_TRIAL);
    for trial in 0..config.trials {
        readings.clear();
        for k in 0..READINGS_PER_TRIAL {
            let base = condition * per_condition + (trial * READINGS_PER_TRIAL + k) as u64;
            readings.push(read_with_redraw(actual, env, config.seed, base)?);
        }
        let stat = deviation_stat(actual, &readings)?;
        sum += stat.as_f64();
        if trial == 0 {
            sample = readings.clone();
        }
    }
    Ok(AccuracyRow {
        actual_cm: actual,
        environment: env.kind,
        max_abs_dev_cm: deviation_stat(actual, &sample)?,
        readings: sample,
        mean_max_abs_dev_cm: S::lit(sum / config.trials as f64),
    })
}

fn read_with_redraw<S: Scalar>(actual: S, env: &EnvironmentConfig<S>, seed: u64, base: u64) -> Result<S> {
    let mut last = None;
    for attempt in 0..MAX_REDRAWS {
        // Redraws use sequence numbers in a disjoint high range.
        match sensor::measure(actual, env, seed, base | (attempt << 48)) {
            Ok(m) => return Ok(m.distance_cm),
            Err(e @ SensorError::OutOfRange { .. }) => last = Some(e),
            Err(e) => return Err(e.into()),
        }
    }
    Err(last.expect("at least one attempt").into())
}
