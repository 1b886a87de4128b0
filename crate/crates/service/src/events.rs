//! Append-only game log and deterministic replay.
//!
//! One JSON object per line:
//! `{"seq":1,"at":"...","kind":"throw_recorded","payload":{...}}`.
//! Replay folds the events through the game engine; engine transitions are
//! deterministic, so the folded state equals the live state at the same seq.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use boulescope_core::{BouleId, GameConfig, GameState, Measurement, Phase, RoundResult};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated,
    ThrowRecorded,
    Remeasured,
    RoundScored,
    RoundApplied,
    GameWon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionCreated {
        session_id: String,
        config: GameConfig,
        device_address: String,
    },
    ThrowRecorded {
        player: String,
        boule_id: BouleId,
        measurement: Measurement,
    },
    Remeasured {
        boule_id: BouleId,
        measurement: Measurement,
    },
    RoundScored {
        round_no: u32,
        result: RoundResult,
    },
    RoundApplied {
        round_no: u32,
        result: RoundResult,
        scores: BTreeMap<String, u32>,
    },
    GameWon {
        winner: String,
        scores: BTreeMap<String, u32>,
    },
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::SessionCreated { .. } => EventKind::SessionCreated,
            EventBody::ThrowRecorded { .. } => EventKind::ThrowRecorded,
            EventBody::Remeasured { .. } => EventKind::Remeasured,
            EventBody::RoundScored { .. } => EventKind::RoundScored,
            EventBody::RoundApplied { .. } => EventKind::RoundApplied,
            EventBody::GameWon { .. } => EventKind::GameWon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl GameEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("event serializes");
        line.push('\n');
        line
    }
}

/// Append-only writer for one session's log file.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn create(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        Ok(EventLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes a batch of events with a single write so a batch is either
    /// fully appended or not at all (short of a partial disk write).
    pub fn append(&mut self, events: &[GameEvent]) -> io::Result<()> {
        let batch: String = events.iter().map(GameEvent::to_line).collect();
        self.file.write_all(batch.as_bytes())?;
        self.file.flush()
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read log: {0}")]
    Io(#[from] io::Error),
    #[error("log is empty: missing session_created")]
    Empty,
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, seq: Option<u64>, reason: String },
}

/// Result of folding a log.
#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub session_id: String,
    pub device_address: String,
    pub state: GameState,
    pub event_seq: u64,
    pub events: Vec<GameEvent>,
}

pub fn read_events(path: &Path) -> Result<Vec<GameEvent>, ReplayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let event: GameEvent = serde_json::from_str(&line).map_err(|e| ReplayError::BadRecord {
            line: i + 1,
            seq: None,
            reason: format!("unparseable record: {e}"),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn replay(path: &Path) -> Result<Replayed, ReplayError> {
    replay_events(read_events(path)?)
}

/// Folds events through the engine, checking sequence numbers and that every
/// logged outcome matches what the engine computes.
pub fn replay_events(events: Vec<GameEvent>) -> Result<Replayed, ReplayError> {
    let mut iter = events.iter().enumerate();
    let Some((_, first)) = iter.next() else {
        return Err(ReplayError::Empty);
    };
    let bad = |idx: usize, ev: &GameEvent, reason: String| ReplayError::BadRecord {
        line: idx + 1,
        seq: Some(ev.seq),
        reason,
    };

    let EventBody::SessionCreated {
        session_id,
        config,
        device_address,
    } = &first.body
    else {
        return Err(bad(0, first, format!("first record is {:?}, expected session_created", first.kind())));
    };
    if first.seq != 1 {
        return Err(bad(0, first, format!("first seq is {}, expected 1", first.seq)));
    }
    let mut state = GameState::new(config.clone()).map_err(|e| bad(0, first, e.to_string()))?;
    let mut seq = 1;
    let mut scored: Option<RoundResult> = None;

    for (idx, ev) in iter {
        if ev.seq != seq + 1 {
            return Err(bad(idx, ev, format!("sequence gap: expected seq {}, found {}", seq + 1, ev.seq)));
        }
        seq = ev.seq;
        let engine = |e: boulescope_core::GameError| bad(idx, ev, e.to_string());
        match &ev.body {
            EventBody::SessionCreated { .. } => {
                return Err(bad(idx, ev, "duplicate session_created".into()));
            }
            EventBody::ThrowRecorded {
                player,
                boule_id,
                measurement,
            } => {
                if scored.is_some() {
                    return Err(bad(idx, ev, "throw after round_scored".into()));
                }
                if state.next_boule(player) != Some(boule_id) {
                    return Err(bad(idx, ev, format!("boule {boule_id} is not {player}'s next boule")));
                }
                state = state.record_throw(player, measurement.clone()).map_err(engine)?;
            }
            EventBody::Remeasured { boule_id, measurement } => {
                if scored.is_some() {
                    return Err(bad(idx, ev, "remeasure after round_scored".into()));
                }
                state = state.remeasure(boule_id, measurement.clone()).map_err(engine)?;
            }
            EventBody::RoundScored { round_no, result } => {
                let computed = state.round_score().map_err(engine)?;
                if &computed != result || *round_no != state.round_no || scored.is_some() {
                    return Err(bad(idx, ev, "round_scored does not match recorded throws".into()));
                }
                scored = Some(computed);
            }
            EventBody::RoundApplied { round_no, result, scores } => {
                if scored.as_ref() != Some(result) || *round_no != state.round_no {
                    return Err(bad(idx, ev, "round_applied without matching round_scored".into()));
                }
                state = state.apply_round(result).map_err(engine)?;
                scored = None;
                if &state.cumulative_scores != scores {
                    return Err(bad(idx, ev, "logged scores differ from replayed scores".into()));
                }
            }
            EventBody::GameWon { winner, scores } => {
                if state.phase != Phase::GameComplete
                    || state.game_winner.as_ref() != Some(winner)
                    || &state.cumulative_scores != scores
                {
                    return Err(bad(idx, ev, "game_won does not match replayed state".into()));
                }
            }
        }
    }

    Ok(Replayed {
        session_id: session_id.clone(),
        device_address: device_address.clone(),
        state,
        event_seq: seq,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use boulescope_core::EnvironmentKind;

    fn m(d: f64) -> Measurement {
        Measurement {
            echo_duration_us: d * 58.2,
            distance_cm: d,
            environment: EnvironmentKind::Indoor,
            sequence_no: 1,
            timestamp: Some(Utc::now()),
        }
    }

    fn ev(seq: u64, body: EventBody) -> GameEvent {
        GameEvent { seq, at: Utc::now(), body }
    }

    fn created() -> EventBody {
        EventBody::SessionCreated {
            session_id: "s".into(),
            config: GameConfig::default(),
            device_address: "127.0.0.1:1".into(),
        }
    }

    #[test]
    fn line_layout() {
        let line = ev(1, created()).to_line();
        assert!(line.starts_with("{\"seq\":1,\"at\":"));
        assert!(line.contains("\"kind\":\"session_created\",\"payload\":{"));
        assert!(line.ends_with("}\n"));
        let back: GameEvent = serde_json::from_str(line.trim_end()).unwrap();
        assert_eq!(back.kind(), EventKind::SessionCreated);
    }

    #[test]
    fn replay_folds_throws() {
        let events = vec![
            ev(1, created()),
            ev(2, EventBody::ThrowRecorded { player: "P1".into(), boule_id: BouleId::new("P1", 1), measurement: m(3.01) }),
            ev(3, EventBody::Remeasured { boule_id: BouleId::new("P1", 1), measurement: m(4.0) }),
        ];
        let r = replay_events(events.clone()).unwrap();
        assert_eq!(r.event_seq, 3);
        assert_eq!(r.state.boule(&BouleId::new("P1", 1)).unwrap().distance_cm, Some(4.0));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.log");
        let mut log = EventLog::create(&path).unwrap();
        log.append(&events).unwrap();
        assert_eq!(replay(&path).unwrap().state, r.state);
    }

    #[test]
    fn replay_errors() {
        assert!(matches!(replay_events(vec![]), Err(ReplayError::Empty)));

        let gap = vec![
            ev(1, created()),
            ev(3, EventBody::ThrowRecorded { player: "P1".into(), boule_id: BouleId::new("P1", 1), measurement: m(3.0) }),
        ];
        match replay_events(gap) {
            Err(ReplayError::BadRecord { line: 2, seq: Some(3), reason }) => assert!(reason.contains("gap")),
            other => panic!("unexpected {other:?}"),
        }

        let headless = vec![ev(1, EventBody::Remeasured { boule_id: BouleId::new("P1", 1), measurement: m(3.0) })];
        assert!(matches!(replay_events(headless), Err(ReplayError::BadRecord { line: 1, .. })));

        let out_of_turn = vec![
            ev(1, created()),
            ev(2, EventBody::ThrowRecorded { player: "P2".into(), boule_id: BouleId::new("P2", 1), measurement: m(3.0) }),
        ];
        assert!(matches!(replay_events(out_of_turn), Err(ReplayError::BadRecord { line: 2, .. })));
    }

    #[test]
    fn corrupt_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.log");
        let mut text = ev(1, created()).to_line();
        text.push_str("{\"seq\":2,\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(replay(&path), Err(ReplayError::BadRecord { line: 2, .. })));
    }

    #[test]
    fn log_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        EventLog::create(&path).unwrap();
        assert!(EventLog::create(&path).is_err());
    }
}
