//! Emulated jack device.
//!
//! The device greets every connection with a `hello` frame and then answers
//! `measure_request` frames strictly in arrival order. Each request takes one
//! reading of the requested boule's true distance from the scene.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use boulescope_core::protocol::{self, ProtocolMessage, MAX_FRAME_LEN};
use boulescope_core::sensor::{self, SensorError};
use boulescope_core::{DeviceErrorCode, EnvironmentConfig};
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tracing::{debug, warn};

pub const DEFAULT_DEVICE_ID: &str = "jack-01";
pub const FIRMWARE: &str = "emu-1.0";
/// Upper bound on the emulated reply latency.
pub const MAX_LATENCY_MS: u64 = 5000;

/// Ground truth: boule id to true distance from the jack, in cm.
///
/// Cloning yields a handle to the same scene, so tests and the match driver
/// can move boules while the device is running.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    inner: Arc<RwLock<BTreeMap<String, f64>>>,
}

impl Scene {
    pub fn new(distances: BTreeMap<String, f64>) -> Self {
        Scene {
            inner: Arc::new(RwLock::new(distances)),
        }
    }

    pub fn from_pairs<I, K>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        Scene::new(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// Reads a JSON object mapping boule ids to centimetres.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, f64> =
            serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Scene::new(map))
    }

    pub fn get(&self, boule_id: &str) -> Option<f64> {
        self.inner.read().expect("scene lock").get(boule_id).copied()
    }

    pub fn set(&self, boule_id: impl Into<String>, distance_cm: f64) {
        self.inner.write().expect("scene lock").insert(boule_id.into(), distance_cm);
    }

    pub fn replace(&self, distances: BTreeMap<String, f64>) {
        *self.inner.write().expect("scene lock") = distances;
    }

    pub fn snapshot(&self) -> BTreeMap<String, f64> {
        self.inner.read().expect("scene lock").clone()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.read().expect("scene lock").is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub device_id: String,
    pub env: EnvironmentConfig,
    pub seed: u64,
    pub latency: Duration,
}

impl DeviceConfig {
    pub fn new(env: EnvironmentConfig, seed: u64) -> Self {
        DeviceConfig {
            device_id: DEFAULT_DEVICE_ID.to_string(),
            env,
            seed,
            latency: Duration::ZERO,
        }
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency = Duration::from_millis(ms.min(MAX_LATENCY_MS));
        self
    }
}

/// Reply for one request. `sequence_no` selects the noise draw.
pub fn answer(config: &DeviceConfig, scene: &Scene, request_id: &str, boule_id: &str, sequence_no: u64) -> ProtocolMessage {
    let Some(distance) = scene.get(boule_id) else {
        return ProtocolMessage::DeviceError {
            request_id: request_id.to_string(),
            code: DeviceErrorCode::Malformed,
            detail: format!("unknown boule_id {boule_id:?}"),
        };
    };
    match sensor::measure(distance, &config.env, config.seed, sequence_no) {
        Ok(m) => ProtocolMessage::report(request_id, boule_id, &m),
        Err(e @ SensorError::OutOfRange { .. }) => ProtocolMessage::DeviceError {
            request_id: request_id.to_string(),
            code: DeviceErrorCode::OutOfRange,
            detail: e.to_string(),
        },
        Err(e) => ProtocolMessage::DeviceError {
            request_id: request_id.to_string(),
            code: DeviceErrorCode::Malformed,
            detail: e.to_string(),
        },
    }
}

/// Serves one connection until the peer closes it.
///
/// Requests are handled one at a time; requests that arrive while a reply is
/// pending wait in the stream buffer and are answered in order.
pub async fn serve_connection<T>(stream: T, config: &DeviceConfig, scene: &Scene) -> std::io::Result<()>
where
    T: AsyncRead + AsyncWrite + Unpin,
{
    let (read_half, mut write_half) = tokio::io::split(stream);
    let mut reader = BufReader::new(read_half);

    let hello = ProtocolMessage::Hello {
        device_id: config.device_id.clone(),
        firmware: FIRMWARE.to_string(),
    };
    write_half.write_all(&protocol::encode(&hello)).await?;
    write_half.flush().await?;

    let mut sequence_no = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = (&mut reader).take(MAX_FRAME_LEN as u64 + 1).read_until(b'\n', &mut line).await?;
        if n == 0 {
            return Ok(());
        }
        if line.last() != Some(&b'\n') && n > MAX_FRAME_LEN {
            warn!("device: dropping connection after oversized frame");
            return Ok(());
        }
        let reply = match protocol::decode(&line) {
            Ok(ProtocolMessage::MeasureRequest { request_id, boule_id }) => {
                let reply = answer(config, scene, &request_id, &boule_id, sequence_no);
                sequence_no += 1;
                reply
            }
            Ok(other) => ProtocolMessage::DeviceError {
                request_id: other.request_id().unwrap_or_default().to_string(),
                code: DeviceErrorCode::Malformed,
                detail: format!("device does not accept {} frames", other.type_name()),
            },
            Err(e) => ProtocolMessage::DeviceError {
                request_id: String::new(),
                code: DeviceErrorCode::Malformed,
                detail: e.to_string(),
            },
        };
        if !config.latency.is_zero() {
            tokio::time::sleep(config.latency).await;
        }
        debug!(frame = %protocol::encode_line(&reply).trim_end(), "device reply");
        write_half.write_all(&protocol::encode(&reply)).await?;
        write_half.flush().await?;
    }
}

/// Accepts connections until `shutdown` flips to `true`, serving one
/// connection at a time.
pub async fn device_loop(
    listener: TcpListener,
    config: DeviceConfig,
    scene: Scene,
    mut shutdown: watch::Receiver<bool>,
) -> std::io::Result<()> {
    loop {
        let (stream, peer) = tokio::select! {
            accepted = listener.accept() => accepted?,
            _ = shutdown.wait_for(|stop| *stop) => return Ok(()),
        };
        debug!(%peer, "device: connection accepted");
        tokio::select! {
            res = serve_connection(stream, &config, &scene) => {
                if let Err(e) = res {
                    warn!(%peer, error = %e, "device: connection ended with error");
                }
            }
            _ = shutdown.wait_for(|stop| *stop) => return Ok(()),
        }
    }
}

/// A device emulator running on a background task.
#[derive(Debug)]
pub struct DeviceHandle {
    pub addr: SocketAddr,
    pub scene: Scene,
    shutdown: watch::Sender<bool>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl DeviceHandle {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub async fn spawn(addr: &str, config: DeviceConfig, scene: Scene) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (shutdown, rx) = watch::channel(false);
        let task = tokio::spawn(device_loop(listener, config, scene.clone(), rx));
        Ok(DeviceHandle {
            addr,
            scene,
            shutdown,
            task,
        })
    }

    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.shutdown.send(true);
        self.task.await.map_err(std::io::Error::other)?
    }
}
