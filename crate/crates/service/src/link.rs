//! Service-side connection to a jack device.

use std::time::Duration;

use boulescope_core::protocol::{self, ProtocolMessage, MAX_FRAME_LEN};
use boulescope_core::DeviceErrorCode;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tracing::debug;

/// Time allowed for a device to answer one request.
pub const MEASUREMENT_TIMEOUT: Duration = Duration::from_secs(5);
/// Time allowed for connecting and receiving the greeting.
pub const HELLO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("device unavailable at {addr}: {reason}")]
    Unavailable { addr: String, reason: String },
    #[error("device did not answer within {0:?}")]
    Timeout(Duration),
    #[error("device reported {code}: {detail}")]
    Device { code: DeviceErrorCode, detail: String },
    #[error("device protocol violation: {0}")]
    Protocol(String),
    #[error("device connection lost: {0}")]
    Io(#[from] std::io::Error),
}

impl LinkError {
    /// Whether the link must be re-established before the next request.
    pub fn is_fatal(&self) -> bool {
        matches!(self, LinkError::Io(_) | LinkError::Protocol(_) | LinkError::Timeout(_))
    }
}

#[derive(Debug)]
pub struct DeviceLink {
    addr: String,
    device_id: String,
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

impl DeviceLink {
    /// Connects and waits for the device's `hello`.
    pub async fn connect(addr: &str, timeout: Duration) -> Result<Self, LinkError> {
        let unavailable = |reason: String| LinkError::Unavailable {
            addr: addr.to_string(),
            reason,
        };
        let handshake = async {
            let stream = TcpStream::connect(addr).await.map_err(|e| unavailable(e.to_string()))?;
            stream.set_nodelay(true).ok();
            let (r, w) = stream.into_split();
            let mut link = DeviceLink {
                addr: addr.to_string(),
                device_id: String::new(),
                reader: BufReader::new(r),
                writer: w,
            };
            match link.read_frame().await.map_err(|e| unavailable(e.to_string()))? {
                ProtocolMessage::Hello { device_id, .. } => {
                    link.device_id = device_id;
                    Ok(link)
                }
                other => Err(unavailable(format!("expected hello, got {}", other.type_name()))),
            }
        };
        tokio::time::timeout(timeout, handshake)
            .await
            .map_err(|_| unavailable(format!("no hello within {timeout:?}")))?
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    async fn read_frame(&mut self) -> Result<ProtocolMessage, LinkError> {
        let mut line = Vec::new();
        let n = (&mut self.reader)
            .take(MAX_FRAME_LEN as u64 + 1)
            .read_until(b'\n', &mut line)
            .await?;
        if n == 0 {
            return Err(LinkError::Io(std::io::ErrorKind::UnexpectedEof.into()));
        }
        if line.last() != Some(&b'\n') {
            return Err(LinkError::Protocol("unterminated or oversized frame".into()));
        }
        protocol::decode(&line).map_err(|e| LinkError::Protocol(e.to_string()))
    }

    /// Sends one request and waits for the reply carrying its request id.
    /// Late replies to earlier, timed-out requests are discarded.
    pub async fn request(
        &mut self,
        request_id: &str,
        boule_id: &str,
        timeout: Duration,
    ) -> Result<ProtocolMessage, LinkError> {
        let req = ProtocolMessage::MeasureRequest {
            request_id: request_id.to_string(),
            boule_id: boule_id.to_string(),
        };
        self.writer.write_all(&protocol::encode(&req)).await?;
        self.writer.flush().await?;

        let wait = async {
            loop {
                let frame: ProtocolMessage = self.read_frame().await?;
                match frame.request_id() {
                    Some(id) if id == request_id => return Ok::<_, LinkError>(frame),
                    _ => debug!(frame = frame.type_name(), "discarding stale device frame"),
                }
            }
        };
        let reply = tokio::time::timeout(timeout, wait)
            .await
            .map_err(|_| LinkError::Timeout(timeout))??;
        match reply {
            ProtocolMessage::MeasurementReport { .. } => Ok(reply),
            ProtocolMessage::DeviceError { code, detail, .. } => Err(LinkError::Device { code, detail }),
            other => Err(LinkError::Protocol(format!("unexpected {} reply", other.type_name()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceConfig, DeviceHandle, Scene};
    use boulescope_core::EnvironmentConfig;

    #[tokio::test]
    async fn connect_and_measure() {
        let dev = DeviceHandle::spawn(
            "127.0.0.1:0",
            DeviceConfig::new(EnvironmentConfig::indoor().noiseless(), 0),
            Scene::from_pairs([("P1-1", 12.34)]),
        )
        .await
        .unwrap();
        let mut link = DeviceLink::connect(&dev.addr.to_string(), HELLO_TIMEOUT).await.unwrap();
        assert_eq!(link.device_id(), "jack-01");
        let reply = link.request("x-1", "P1-1", MEASUREMENT_TIMEOUT).await.unwrap();
        assert_eq!(reply.to_measurement(0).unwrap().distance_cm, 12.34);
        let err = link.request("x-2", "nope", MEASUREMENT_TIMEOUT).await.unwrap_err();
        assert!(matches!(err, LinkError::Device { code: DeviceErrorCode::Malformed, .. }));
        assert!(!err.is_fatal());
    }

    #[tokio::test]
    async fn timeout_then_stale_reply_skipped() {
        let dev = DeviceHandle::spawn(
            "127.0.0.1:0",
            DeviceConfig::new(EnvironmentConfig::indoor().noiseless(), 0).with_latency_ms(300),
            Scene::from_pairs([("P1-1", 5.0)]),
        )
        .await
        .unwrap();
        let mut link = DeviceLink::connect(&dev.addr.to_string(), HELLO_TIMEOUT).await.unwrap();
        let err = link.request("slow", "P1-1", Duration::from_millis(50)).await.unwrap_err();
        assert!(matches!(err, LinkError::Timeout(_)));
        let ok = link.request("next", "P1-1", Duration::from_secs(2)).await.unwrap();
        assert_eq!(ok.request_id(), Some("next"));
    }

    #[tokio::test]
    async fn unreachable_device() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let err = DeviceLink::connect(&addr, Duration::from_millis(500)).await.unwrap_err();
        assert!(matches!(err, LinkError::Unavailable { .. }));
    }
}
