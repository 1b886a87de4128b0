//! Drives complete matches through the scoring service and checks the
//! flow invariants on the way.

use std::collections::BTreeMap;

use boulescope_core::{BouleId, GameConfig, Phase, RoundResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::device::Scene;
use crate::service::{ScoringService, ServiceError};

/// Default cap on rounds before a match is declared non-terminating.
pub const DEFAULT_MAX_ROUNDS: u32 = 500;
/// Range random scenes draw true distances from, in cm.
pub const RANDOM_SCENE_RANGE_CM: (f64, f64) = (5.0, 300.0);

#[derive(Debug, Clone)]
pub enum SceneSource {
    /// The same ground truth every round.
    Fixed(BTreeMap<String, f64>),
    /// A fresh random layout every round.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct MatchOptions {
    pub device_address: String,
    /// Stop after this many rounds even if nobody has won.
    pub max_rounds: Option<u32>,
    /// Retries per throw when the device reports a failed reading.
    pub measurement_retries: u32,
}

impl MatchOptions {
    pub fn new(device_address: impl Into<String>) -> Self {
        MatchOptions {
            device_address: device_address.into(),
            max_rounds: None,
            measurement_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThrowRecord {
    pub player: String,
    pub boule_id: BouleId,
    pub distance_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTranscript {
    pub round_no: u32,
    pub throws: Vec<ThrowRecord>,
    pub result: RoundResult,
    pub scores_after: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchTranscript {
    pub session_id: String,
    pub rounds: Vec<RoundTranscript>,
    pub final_scores: BTreeMap<String, u32>,
    pub winner: Option<String>,
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("service error in round {round}: {source}")]
    Service {
        round: u32,
        #[source]
        source: ServiceError,
    },
    #[error("invariant violated in round {round}: {detail}")]
    Invariant { round: u32, detail: String },
    #[error("no winner after {0} rounds")]
    NoTermination(u32),
}

fn random_layout(rng: &mut ChaCha8Rng, config: &GameConfig) -> BTreeMap<String, f64> {
    let (lo, hi) = RANDOM_SCENE_RANGE_CM;
    let (lo, hi) = ((lo * 100.0) as u32, (hi * 100.0) as u32);
    config
        .players
        .iter()
        .flat_map(|p| (1..=config.boules_per_player).map(move |i| BouleId::new(p.clone(), i).to_string()))
        .map(|id| (id, rng.random_range(lo..=hi) as f64 / 100.0))
        .collect()
}

/// One random layout for every boule of `config`.
pub fn random_scene(seed: u64, config: &GameConfig) -> BTreeMap<String, f64> {
    random_layout(&mut ChaCha8Rng::seed_from_u64(seed), config)
}

/// Plays rounds until a player reaches the target score (or `max_rounds`).
///
/// `scene` must be the scene served by the device at `opts.device_address`;
/// it is rewritten before each round.
pub async fn play_match(
    service: &ScoringService,
    scene: &Scene,
    source: &SceneSource,
    config: GameConfig,
    opts: &MatchOptions,
) -> Result<MatchTranscript, MatchError> {
    let session = service
        .create_session(config.clone(), &opts.device_address)
        .await
        .map_err(|source| MatchError::Service { round: 0, source })?;
    let id = session.id().to_string();
    let mut rng = match source {
        SceneSource::Random(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        SceneSource::Fixed(_) => None,
    };
    let throws_per_round = config.throws_per_round() as usize;
    let max_rounds = opts.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS);
    let mut rounds = Vec::new();

    loop {
        let snap = session.snapshot();
        let round = snap.state.round_no;
        let svc = |source| MatchError::Service { round, source };
        let violation = |detail: String| MatchError::Invariant { round, detail };
        let before = snap.state.cumulative_scores.clone();

        scene.replace(match (&mut rng, source) {
            (Some(rng), _) => random_layout(rng, &config),
            (None, SceneSource::Fixed(map)) => map.clone(),
            (None, SceneSource::Random(_)) => unreachable!(),
        });

        let mut throws: Vec<ThrowRecord> = Vec::new();
        while session.snapshot().state.phase == Phase::Throwing {
            let player = session
                .snapshot()
                .state
                .current_turn()
                .map_err(|e| svc(e.into()))?
                .to_string();
            let mut attempt = 0;
            let (m, state) = loop {
                match service.throw(&id, &player).await {
                    Ok(ok) => break ok,
                    Err(e) if e.is_retryable() && attempt < opts.measurement_retries => attempt += 1,
                    Err(e) => return Err(svc(e)),
                }
            };
            let boule_id = state
                .boules
                .iter()
                .filter(|b| b.boule_id.player == player && b.is_thrown())
                .map(|b| b.boule_id.clone())
                .max()
                .expect("throw recorded a boule");
            throws.push(ThrowRecord {
                player,
                boule_id,
                distance_cm: m.distance_cm,
            });
            if throws.len() > throws_per_round {
                return Err(violation(format!("more than {throws_per_round} throws")));
            }
        }

        if throws.len() != throws_per_round {
            return Err(violation(format!("{} throws recorded, expected {throws_per_round}", throws.len())));
        }
        if let Some(w) = throws.windows(2).find(|w| w[0].player == w[1].player) {
            return Err(violation(format!("{} threw twice in a row", w[0].player)));
        }

        let result = service.score_round(&id).await.map_err(svc)?;
        let after = session.snapshot().state.clone();
        for (player, score) in &after.cumulative_scores {
            if *score < before[player] {
                return Err(violation(format!("score of {player} decreased")));
            }
        }
        if result.points > config.boules_per_player || result.winner.is_some() != (result.points > 0) {
            return Err(violation(format!("impossible result {result:?}")));
        }
        rounds.push(RoundTranscript {
            round_no: round,
            throws,
            result,
            scores_after: after.cumulative_scores.clone(),
        });

        if after.phase == Phase::GameComplete {
            let winners: Vec<_> = after
                .cumulative_scores
                .iter()
                .filter(|(_, &s)| s >= config.target_score)
                .collect();
            if winners.len() != 1 || after.game_winner.as_ref() != Some(winners[0].0) {
                return Err(violation(format!("game ended with winners {winners:?}")));
            }
            return Ok(MatchTranscript {
                session_id: id,
                rounds,
                final_scores: after.cumulative_scores,
                winner: after.game_winner,
            });
        }
        if rounds.len() as u32 >= max_rounds {
            if opts.max_rounds.is_some() {
                return Ok(MatchTranscript {
                    session_id: id,
                    rounds,
                    final_scores: after.cumulative_scores,
                    winner: None,
                });
            }
            return Err(MatchError::NoTermination(max_rounds));
        }
    }
}
