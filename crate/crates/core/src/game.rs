//! Petanque round and game state machine.
//!
//! Two players throw their boules alternately. When every boule has been
//! thrown and measured the round is scored: the player holding the closest
//! boule earns one point per boule strictly closer than the opponent's best.
//! Rounds repeat until a player reaches the target score.
//!
//! [`GameState`] is an immutable value: every transition returns a new state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sensor::Measurement;

pub const DEFAULT_BOULES_PER_PLAYER: u32 = 3;
pub const DEFAULT_TARGET_SCORE: u32 = 13;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GameError {
    #[error("invalid game configuration: {0}")]
    InvalidConfig(String),
    #[error("out of turn: {got} played but it is {expected}'s turn")]
    OutOfTurn { expected: String, got: String },
    #[error("operation requires phase {expected}, game is in {actual}")]
    Phase { expected: Phase, actual: Phase },
    #[error("boule {0} has not been measured")]
    NoMeasurement(BouleId),
    #[error("round incomplete: boule {0} has no distance")]
    IncompleteRound(BouleId),
    #[error("unknown player {0:?}")]
    UnknownPlayer(String),
    #[error("unknown boule {0}")]
    UnknownBoule(BouleId),
    #[error("player {0:?} has no boules left to throw")]
    NoBoulesLeft(String),
    #[error("invalid boule id {0:?}")]
    InvalidBouleId(String),
    #[error("round result does not match the recorded distances")]
    ResultMismatch,
}

pub type Result<T, E = GameError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TurnMode {
    /// Players throw one boule each in turn, as long as both have boules.
    #[default]
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Throwing,
    RoundComplete,
    GameComplete,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Throwing => "throwing",
            Phase::RoundComplete => "round_complete",
            Phase::GameComplete => "game_complete",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub boules_per_player: u32,
    pub players: [String; 2],
    pub target_score: u32,
    #[serde(default)]
    pub turn_mode: TurnMode,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            boules_per_player: DEFAULT_BOULES_PER_PLAYER,
            players: ["P1".to_string(), "P2".to_string()],
            target_score: DEFAULT_TARGET_SCORE,
            turn_mode: TurnMode::Alternate,
        }
    }
}

impl GameConfig {
    pub fn with_players(a: impl Into<String>, b: impl Into<String>) -> Self {
        GameConfig {
            players: [a.into(), b.into()],
            ..GameConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boules_per_player < 1 {
            return Err(GameError::InvalidConfig("boules_per_player must be >= 1".into()));
        }
        if self.target_score < 1 {
            return Err(GameError::InvalidConfig("target_score must be >= 1".into()));
        }
        let [a, b] = &self.players;
        if a.is_empty() || b.is_empty() {
            return Err(GameError::InvalidConfig("player labels must be nonempty".into()));
        }
        if a == b {
            return Err(GameError::InvalidConfig(format!("players must be distinct, both are {a:?}")));
        }
        Ok(())
    }

    pub fn throws_per_round(&self) -> u32 {
        2 * self.boules_per_player
    }

    pub fn opponent(&self, player: &str) -> Result<&str> {
        match &self.players {
            [a, b] if a == player => Ok(b),
            [a, b] if b == player => Ok(a),
            _ => Err(GameError::UnknownPlayer(player.to_string())),
        }
    }
}

/// Identifies a boule as `(player, index)`, written `"{player}-{index}"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BouleId {
    pub player: String,
    pub index: u32,
}

impl BouleId {
    pub fn new(player: impl Into<String>, index: u32) -> Self {
        BouleId {
            player: player.into(),
            index,
        }
    }
}

impl fmt::Display for BouleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.player, self.index)
    }
}

impl FromStr for BouleId {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GameError::InvalidBouleId(s.to_string());
        let (player, index) = s.rsplit_once('-').ok_or_else(bad)?;
        if player.is_empty() || index.starts_with('+') {
            return Err(bad());
        }
        Ok(BouleId::new(player, index.parse().map_err(|_| bad())?))
    }
}

impl Serialize for BouleId {
    fn serialize<Ser: serde::Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BouleId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct BouleRecord<S> {
    pub boule_id: BouleId,
    pub distance_cm: Option<S>,
    pub measurement_history: Vec<Measurement<S>>,
}

impl<S: Scalar> BouleRecord<S> {
    fn empty(boule_id: BouleId) -> Self {
        BouleRecord {
            boule_id,
            distance_cm: None,
            measurement_history: Vec::new(),
        }
    }

    fn push(&mut self, m: Measurement<S>) {
        self.distance_cm = Some(m.distance_cm);
        self.measurement_history.push(m);
    }

    pub fn is_thrown(&self) -> bool {
        self.distance_cm.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RoundResult<S> {
    pub winner: Option<String>,
    pub points: u32,
    pub winning_boules: Vec<BouleId>,
    pub loser_best_cm: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct GameState<S> {
    pub config: GameConfig,
    pub round_no: u32,
    /// Ordered by player (configuration order), then boule index.
    pub boules: Vec<BouleRecord<S>>,
    pub next_player: String,
    /// Player who threw first in the current round.
    pub round_first_player: String,
    pub throws_made: u32,
    pub phase: Phase,
    pub cumulative_scores: BTreeMap<String, u32>,
    pub game_winner: Option<String>,
}

impl<S: Scalar> GameState<S> {
    pub fn new(config: GameConfig) -> Result<Self> {
        config.validate()?;
        let first = config.players[0].clone();
        let cumulative_scores = config.players.iter().map(|p| (p.clone(), 0)).collect();
        Ok(GameState {
            boules: fresh_boules(&config),
            next_player: first.clone(),
            round_first_player: first,
            round_no: 1,
            throws_made: 0,
            phase: Phase::Throwing,
            cumulative_scores,
            game_winner: None,
            config,
        })
    }

    fn require_phase(&self, expected: Phase) -> Result<()> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(GameError::Phase {
                expected,
                actual: self.phase,
            })
        }
    }

    pub fn boule(&self, id: &BouleId) -> Option<&BouleRecord<S>> {
        self.boules.iter().find(|b| &b.boule_id == id)
    }

    fn boule_mut(&mut self, id: &BouleId) -> Option<&mut BouleRecord<S>> {
        self.boules.iter_mut().find(|b| &b.boule_id == id)
    }

    /// Lowest-index boule `player` has not thrown yet.
    pub fn next_boule(&self, player: &str) -> Option<&BouleId> {
        self.boules
            .iter()
            .find(|b| b.boule_id.player == player && !b.is_thrown())
            .map(|b| &b.boule_id)
    }

    pub fn current_turn(&self) -> Result<&str> {
        self.require_phase(Phase::Throwing)?;
        Ok(&self.next_player)
    }

    pub fn record_throw(&self, player: &str, m: Measurement<S>) -> Result<Self> {
        self.require_phase(Phase::Throwing)?;
        let other = self.config.opponent(player)?.to_string();
        if player != self.next_player {
            return Err(GameError::OutOfTurn {
                expected: self.next_player.clone(),
                got: player.to_string(),
            });
        }
        let id = self
            .next_boule(player)
            .cloned()
            .ok_or_else(|| GameError::NoBoulesLeft(player.to_string()))?;

        let mut next = self.clone();
        next.boule_mut(&id).expect("boule exists").push(m);
        next.throws_made += 1;
        if next.throws_made == next.config.throws_per_round() {
            next.phase = Phase::RoundComplete;
        } else if next.next_boule(&other).is_some() {
            next.next_player = other;
        }
        Ok(next)
    }

    pub fn remeasure(&self, id: &BouleId, m: Measurement<S>) -> Result<Self> {
        let record = self.boule(id).ok_or_else(|| GameError::UnknownBoule(id.clone()))?;
        if !record.is_thrown() {
            return Err(GameError::NoMeasurement(id.clone()));
        }
        let mut next = self.clone();
        next.boule_mut(id).expect("boule exists").push(m);
        Ok(next)
    }

    pub fn round_score(&self) -> Result<RoundResult<S>> {
        self.require_phase(Phase::RoundComplete)?;
        let [a, b] = &self.config.players;
        let distances = |player: &str| -> Result<Vec<(BouleId, S)>> {
            self.boules
                .iter()
                .filter(|r| r.boule_id.player == player)
                .map(|r| {
                    r.distance_cm
                        .map(|d| (r.boule_id.clone(), d))
                        .ok_or_else(|| GameError::IncompleteRound(r.boule_id.clone()))
                })
                .collect()
        };
        let da = distances(a)?;
        let db = distances(b)?;
        let best = |v: &[(BouleId, S)]| v.iter().map(|&(_, d)| d).fold(S::infinity(), S::min);
        let (best_a, best_b) = (best(&da), best(&db));

        if best_a == best_b {
            return Ok(RoundResult {
                winner: None,
                points: 0,
                winning_boules: Vec::new(),
                loser_best_cm: None,
            });
        }
        let (winner, winner_boules, loser_best) = if best_a < best_b {
            (a, da, best_b)
        } else {
            (b, db, best_a)
        };
        let winning_boules: Vec<BouleId> = winner_boules
            .into_iter()
            .filter(|&(_, d)| d < loser_best)
            .map(|(id, _)| id)
            .collect();
        Ok(RoundResult {
            winner: Some(winner.clone()),
            points: winning_boules.len() as u32,
            winning_boules,
            loser_best_cm: Some(loser_best),
        })
    }

    /// Credits a scored round and either starts the next round or ends the game.
    ///
    /// The round winner throws first in the next round; after a tie the
    /// previous first thrower keeps that position.
    pub fn apply_round(&self, result: &RoundResult<S>) -> Result<Self> {
        self.require_phase(Phase::RoundComplete)?;
        let mut next = self.clone();
        if let Some(winner) = &result.winner {
            let score = next
                .cumulative_scores
                .get_mut(winner)
                .ok_or_else(|| GameError::UnknownPlayer(winner.clone()))?;
            *score += result.points;
            if *score >= next.config.target_score {
                next.phase = Phase::GameComplete;
                next.game_winner = Some(winner.clone());
                return Ok(next);
            }
        }
        let first = result
            .winner
            .clone()
            .unwrap_or_else(|| self.round_first_player.clone());
        next.round_no += 1;
        next.boules = fresh_boules(&next.config);
        next.throws_made = 0;
        next.phase = Phase::Throwing;
        next.next_player = first.clone();
        next.round_first_player = first;
        Ok(next)
    }

    pub fn score(&self, player: &str) -> u32 {
        self.cumulative_scores.get(player).copied().unwrap_or(0)
    }
}

fn fresh_boules<S: Scalar>(config: &GameConfig) -> Vec<BouleRecord<S>> {
    config
        .players
        .iter()
        .flat_map(|p| (1..=config.boules_per_player).map(move |i| BouleRecord::empty(BouleId::new(p.clone(), i))))
        .collect()
}
