//! Session manager binding device measurements to the game engine.
//!
//! Mutations of one session run one at a time under that session's lock and
//! are committed only after their events reach the log. Readers get the
//! latest committed snapshot without touching the lock. Sessions share a
//! device connection per address, since one jack serves one connection.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use boulescope_core::protocol::ProtocolMessage;
use boulescope_core::{BouleId, DeviceErrorCode, GameConfig, GameError, GameState, Measurement, Phase, RoundResult};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, watch, Mutex};
use tracing::info;

use crate::events::{EventBody, EventLog, GameEvent};
use crate::link::{DeviceLink, LinkError, HELLO_TIMEOUT, MEASUREMENT_TIMEOUT};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("device unavailable: {0}")]
    DeviceUnavailable(String),
    #[error("measurement failed ({code}): {detail}")]
    MeasurementFailed { code: DeviceErrorCode, detail: String },
    #[error("device did not answer within {0:?}")]
    DeviceTimeout(Duration),
    #[error("event log error: {0}")]
    Log(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Game(e) => match e {
                GameError::InvalidConfig(_) => "invalid_config",
                GameError::OutOfTurn { .. } => "out_of_turn",
                GameError::Phase { .. } => "phase",
                GameError::NoMeasurement(_) => "no_measurement",
                GameError::IncompleteRound(_) => "incomplete_round",
                GameError::UnknownPlayer(_) => "unknown_player",
                GameError::UnknownBoule(_) | GameError::InvalidBouleId(_) => "unknown_boule",
                GameError::NoBoulesLeft(_) => "no_boules_left",
                GameError::ResultMismatch => "result_mismatch",
            },
            ServiceError::DeviceUnavailable(_) => "device_unavailable",
            ServiceError::MeasurementFailed { .. } => "measurement_failed",
            ServiceError::DeviceTimeout(_) => "device_timeout",
            ServiceError::Log(_) => "log_error",
        }
    }

    /// Whether retrying the same call may succeed without other changes.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ServiceError::MeasurementFailed { .. } | ServiceError::DeviceTimeout(_) | ServiceError::DeviceUnavailable(_)
        )
    }
}

impl From<LinkError> for ServiceError {
    fn from(e: LinkError) -> Self {
        match e {
            LinkError::Timeout(d) => ServiceError::DeviceTimeout(d),
            LinkError::Device { code, detail } => ServiceError::MeasurementFailed { code, detail },
            other => ServiceError::DeviceUnavailable(other.to_string()),
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub log_dir: PathBuf,
    pub measurement_timeout: Duration,
    pub hello_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(log_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            log_dir: log_dir.into(),
            measurement_timeout: MEASUREMENT_TIMEOUT,
            hello_timeout: HELLO_TIMEOUT,
        }
    }
}

/// Committed state of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: GameState,
    pub event_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BouleView {
    pub boule_id: BouleId,
    pub player: String,
    pub index: u32,
    pub distance_cm: Option<f64>,
    pub measurements: usize,
}

/// Read model served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub event_seq: u64,
    pub phase: Phase,
    pub round_no: u32,
    pub current_turn: Option<String>,
    pub throws_made: u32,
    pub score_ready: bool,
    pub boules: Vec<BouleView>,
    pub scores: BTreeMap<String, u32>,
    pub game_winner: Option<String>,
    pub state: GameState,
}

impl SessionView {
    pub fn new(session_id: &str, snap: &Snapshot) -> Self {
        let state = &snap.state;
        SessionView {
            session_id: session_id.to_string(),
            event_seq: snap.event_seq,
            phase: state.phase,
            round_no: state.round_no,
            current_turn: state.current_turn().ok().map(str::to_string),
            throws_made: state.throws_made,
            score_ready: state.phase == Phase::RoundComplete,
            boules: state
                .boules
                .iter()
                .map(|b| BouleView {
                    boule_id: b.boule_id.clone(),
                    player: b.boule_id.player.clone(),
                    index: b.boule_id.index,
                    distance_cm: b.distance_cm,
                    measurements: b.measurement_history.len(),
                })
                .collect(),
            scores: state.cumulative_scores.clone(),
            game_winner: state.game_winner.clone(),
            state: state.clone(),
        }
    }
}

type SharedLink = Arc<Mutex<Option<DeviceLink>>>;

struct Writer {
    log: EventLog,
    next_request: u64,
}

pub struct Session {
    id: String,
    device_address: String,
    log_path: PathBuf,
    link: SharedLink,
    writer: Mutex<Writer>,
    snapshot: watch::Sender<Arc<Snapshot>>,
    history: RwLock<Vec<GameEvent>>,
    events: broadcast::Sender<GameEvent>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("device_address", &self.device_address)
            .field("log_path", &self.log_path)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn device_address(&self) -> &str {
        &self.device_address
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    /// Events with `seq > after`, in order.
    pub fn events_since(&self, after: u64) -> Vec<GameEvent> {
        self.history
            .read()
            .expect("history lock")
            .iter()
            .filter(|e| e.seq > after)
            .cloned()
            .collect()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<GameEvent> {
        self.events.subscribe()
    }

    fn commit(&self, writer: &mut Writer, state: GameState, bodies: Vec<EventBody>) -> Result<Vec<GameEvent>> {
        let base = self.snapshot.borrow().event_seq;
        let at = Utc::now();
        let events: Vec<GameEvent> = bodies
            .into_iter()
            .enumerate()
            .map(|(i, body)| GameEvent {
                seq: base + 1 + i as u64,
                at,
                body,
            })
            .collect();
        writer.log.append(&events)?;
        let event_seq = events.last().map_or(base, |e| e.seq);
        self.history.write().expect("history lock").extend(events.iter().cloned());
        self.snapshot.send_replace(Arc::new(Snapshot { state, event_seq }));
        for e in &events {
            // No subscribers is fine.
            let _ = self.events.send(e.clone());
        }
        Ok(events)
    }

    async fn measure(&self, writer: &mut Writer, boule_id: &BouleId, timeout: Duration, hello: Duration) -> Result<Measurement> {
        let request_no = writer.next_request;
        writer.next_request += 1;
        let request_id = format!("{}-{}", self.id, request_no);

        let mut guard = self.link.lock().await;
        if guard.is_none() {
            *guard = Some(DeviceLink::connect(&self.device_address, hello).await?);
        }
        let link = guard.as_mut().expect("link present");
        let reply = match link.request(&request_id, &boule_id.to_string(), timeout).await {
            Ok(reply) => reply,
            Err(e) => {
                if e.is_fatal() {
                    *guard = None;
                }
                return Err(e.into());
            }
        };
        let measurement = reply
            .to_measurement(request_no)
            .ok_or_else(|| ServiceError::DeviceUnavailable(format!("unusable report for {boule_id}")))?;
        if let ProtocolMessage::MeasurementReport { boule_id: got, .. } = &reply {
            if got != &boule_id.to_string() {
                return Err(ServiceError::DeviceUnavailable(format!("report for {got}, requested {boule_id}")));
            }
        }
        Ok(measurement.with_timestamp(Utc::now()))
    }
}

#[derive(Debug, Clone)]
pub struct ScoringService {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    links: std::sync::Mutex<HashMap<String, SharedLink>>,
}

impl ScoringService {
    pub fn new(config: ServiceConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(&config.log_dir)?;
        Ok(ScoringService {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(HashMap::new()),
                links: std::sync::Mutex::new(HashMap::new()),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn session(&self, session_id: &str) -> Result<Arc<Session>> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(session_id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.inner.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn shared_link(&self, addr: &str) -> SharedLink {
        self.inner
            .links
            .lock()
            .expect("links lock")
            .entry(addr.to_string())
            .or_default()
            .clone()
    }

    /// Starts a session after confirming the device answers with `hello`.
    pub async fn create_session(&self, config: GameConfig, device_address: &str) -> Result<Arc<Session>> {
        let state = GameState::new(config.clone())?;
        let link = self.shared_link(device_address);
        {
            let mut guard = link.lock().await;
            if guard.is_none() {
                *guard = Some(DeviceLink::connect(device_address, self.inner.config.hello_timeout).await?);
            }
        }

        let id = uuid::Uuid::new_v4().simple().to_string();
        let log_path = self.inner.config.log_dir.join(format!("{id}.log"));
        let log = EventLog::create(&log_path)?;
        let (snapshot, _) = watch::channel(Arc::new(Snapshot {
            state: state.clone(),
            event_seq: 0,
        }));
        let (events, _) = broadcast::channel(256);
        let session = Arc::new(Session {
            id: id.clone(),
            device_address: device_address.to_string(),
            log_path,
            link,
            writer: Mutex::new(Writer { log, next_request: 0 }),
            snapshot,
            history: RwLock::new(Vec::new()),
            events,
        });
        {
            let mut writer = session.writer.lock().await;
            session.commit(
                &mut writer,
                state,
                vec![EventBody::SessionCreated {
                    session_id: id.clone(),
                    config,
                    device_address: device_address.to_string(),
                }],
            )?;
        }
        info!(session = %id, device = device_address, "session created");
        self.inner
            .sessions
            .write()
            .expect("sessions lock")
            .insert(id, session.clone());
        Ok(session)
    }

    pub fn get_state(&self, session_id: &str) -> Result<SessionView> {
        let session = self.session(session_id)?;
        Ok(SessionView::new(session.id(), &session.snapshot()))
    }

    /// Measures `player`'s next boule and records the throw.
    pub async fn throw(&self, session_id: &str, player: &str) -> Result<(Measurement, GameState)> {
        let session = self.session(session_id)?;
        let mut writer = session.writer.lock().await;
        let state = session.snapshot().state.clone();

        // Engine preconditions are checked before the device is asked.
        let expected = state.current_turn()?.to_string();
        state.config.opponent(player)?;
        if player != expected {
            return Err(GameError::OutOfTurn {
                expected,
                got: player.to_string(),
            }
            .into());
        }
        let boule_id = state
            .next_boule(player)
            .cloned()
            .ok_or_else(|| GameError::NoBoulesLeft(player.to_string()))?;

        let cfg = &self.inner.config;
        let m = session.measure(&mut writer, &boule_id, cfg.measurement_timeout, cfg.hello_timeout).await?;
        let next = state.record_throw(player, m.clone())?;
        session.commit(
            &mut writer,
            next.clone(),
            vec![EventBody::ThrowRecorded {
                player: player.to_string(),
                boule_id,
                measurement: m.clone(),
            }],
        )?;
        Ok((m, next))
    }

    pub async fn remeasure(&self, session_id: &str, boule_id: &BouleId) -> Result<(Measurement, GameState)> {
        let session = self.session(session_id)?;
        let mut writer = session.writer.lock().await;
        let state = session.snapshot().state.clone();
        match state.boule(boule_id) {
            None => return Err(GameError::UnknownBoule(boule_id.clone()).into()),
            Some(b) if !b.is_thrown() => return Err(GameError::NoMeasurement(boule_id.clone()).into()),
            Some(_) => {}
        }

        let cfg = &self.inner.config;
        let m = session.measure(&mut writer, boule_id, cfg.measurement_timeout, cfg.hello_timeout).await?;
        let next = state.remeasure(boule_id, m.clone())?;
        session.commit(
            &mut writer,
            next.clone(),
            vec![EventBody::Remeasured {
                boule_id: boule_id.clone(),
                measurement: m.clone(),
            }],
        )?;
        Ok((m, next))
    }

    /// Scores the completed round and credits it.
    pub async fn score_round(&self, session_id: &str) -> Result<RoundResult> {
        let session = self.session(session_id)?;
        let mut writer = session.writer.lock().await;
        let state = session.snapshot().state.clone();

        let result = match state.round_score() {
            Err(GameError::Phase {
                actual: Phase::Throwing, ..
            }) => {
                let missing = state
                    .boules
                    .iter()
                    .find(|b| !b.is_thrown())
                    .map(|b| b.boule_id.clone())
                    .expect("throwing phase has an unthrown boule");
                return Err(GameError::IncompleteRound(missing).into());
            }
            other => other?,
        };
        let next = state.apply_round(&result)?;
        let mut bodies = vec![
            EventBody::RoundScored {
                round_no: state.round_no,
                result: result.clone(),
            },
            EventBody::RoundApplied {
                round_no: state.round_no,
                result: result.clone(),
                scores: next.cumulative_scores.clone(),
            },
        ];
        if let Some(winner) = &next.game_winner {
            bodies.push(EventBody::GameWon {
                winner: winner.clone(),
                scores: next.cumulative_scores.clone(),
            });
        }
        session.commit(&mut writer, next, bodies)?;
        Ok(result)
    }
}
