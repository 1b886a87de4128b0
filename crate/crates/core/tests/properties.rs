use boulescope_core::game::GameState;
use boulescope_core::protocol::{decode, decode_stream, encode, ProtocolMessage};
use boulescope_core::sensor::{self, distance_from_echo, echo_duration, measure, EnvironmentConfig};
use boulescope_core::stats::deviation_stat;
use boulescope_core::{BouleId, DeviceErrorCode, EnvironmentKind, GameConfig, Phase};
use proptest::prelude::*;

fn reading(d: f64) -> sensor::Measurement<f64> {
    sensor::Measurement {
        echo_duration_us: echo_duration(d.clamp(2.0, 400.0), 20.0).unwrap(),
        distance_cm: d,
        environment: EnvironmentKind::Indoor,
        sequence_no: 0,
        timestamp: None,
    }
}

/// Points by exhaustive pairwise comparison: a boule scores when it is
/// strictly closer than every opposing boule.
fn brute_force_points(a: &[f64], b: &[f64]) -> (Option<usize>, usize) {
    let beats = |mine: &[f64], theirs: &[f64]| mine.iter().filter(|&&x| theirs.iter().all(|&y| x < y)).count();
    match (beats(a, b), beats(b, a)) {
        (0, 0) => (None, 0),
        (n, 0) => (Some(0), n),
        (0, n) => (Some(1), n),
        _ => unreachable!("both sides cannot hold the point"),
    }
}

fn complete_round(a: &[f64], b: &[f64]) -> GameState<f64> {
    let cfg = GameConfig {
        boules_per_player: a.len() as u32,
        ..GameConfig::with_players("A", "B")
    };
    let mut s = GameState::new(cfg).unwrap();
    let (mut ia, mut ib) = (a.iter(), b.iter());
    while s.phase == Phase::Throwing {
        let p = s.current_turn().unwrap().to_string();
        let d = if p == "A" { ia.next() } else { ib.next() };
        s = s.record_throw(&p, reading(*d.unwrap())).unwrap();
    }
    s
}

fn grid_distance() -> impl Strategy<Value = f64> {
    (200u32..=40_000).prop_map(|k| k as f64 / 100.0)
}

fn wire_text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9_-]{0,12}",
        any::<String>(),
        Just("quote \" backslash \\ newline \n tab \t".to_string()),
    ]
}

fn message() -> impl Strategy<Value = ProtocolMessage> {
    prop_oneof![
        (wire_text(), wire_text()).prop_map(|(device_id, firmware)| ProtocolMessage::Hello { device_id, firmware }),
        (wire_text(), wire_text()).prop_map(|(request_id, boule_id)| ProtocolMessage::MeasureRequest { request_id, boule_id }),
        (wire_text(), wire_text(), 0u32..=100_000, 0u32..=1_000_000, prop_oneof![Just("indoor"), Just("outdoor")]).prop_map(
            |(request_id, boule_id, cm, us, env)| ProtocolMessage::MeasurementReport {
                request_id,
                boule_id,
                distance_cm: cm as f64 / 100.0,
                echo_duration_us: us as f64 / 10.0,
                environment: env.to_string(),
            }
        ),
        (
            wire_text(),
            prop_oneof![
                Just(DeviceErrorCode::OutOfRange),
                Just(DeviceErrorCode::Busy),
                Just(DeviceErrorCode::Malformed)
            ],
            wire_text()
        )
            .prop_map(|(request_id, code, detail)| ProtocolMessage::DeviceError { request_id, code, detail }),
    ]
}

proptest! {
    #[test]
    fn physics_inversion(d in 2.0f64..=400.0, t in -20.0f64..=50.0) {
        let back = distance_from_echo(echo_duration(d, t).unwrap(), t).unwrap();
        prop_assert!((back - d).abs() <= 1e-9);
    }

    #[test]
    fn echo_monotone(d in 2.0f64..399.0, step in 0.01f64..1.0, t in -20.0f64..49.0) {
        prop_assert!(echo_duration(d, t).unwrap() < echo_duration(d + step, t).unwrap());
        prop_assert!(echo_duration(d, t).unwrap() > echo_duration(d, t + 0.5).unwrap());
    }

    #[test]
    fn zero_noise_identity(d in grid_distance(), seed: u64, seq: u64) {
        let env = EnvironmentConfig::<f64>::indoor().noiseless();
        prop_assert_eq!(measure(d, &env, seed, seq).unwrap().distance_cm, d);
    }

    #[test]
    fn noise_is_bounded(d in 5.0f64..395.0, seed: u64, seq: u64, outdoor: bool) {
        let env = if outdoor { EnvironmentConfig::<f64>::outdoor() } else { EnvironmentConfig::indoor() };
        let m = measure(d, &env, seed, seq).unwrap();
        let err = (m.distance_cm - d - env.bias_cm).abs();
        prop_assert!(err <= 2.0 * env.noise_sigma_cm + env.quantum_cm + 1e-9);
        let steps = m.distance_cm / env.quantum_cm;
        prop_assert!((steps - steps.round()).abs() <= 1e-9 * steps.abs().max(1.0));
        prop_assert!(m.echo_duration_us > 0.0);
        prop_assert_eq!(measure(d, &env, seed, seq).unwrap(), m);
    }

    #[test]
    fn deviation_stat_invariances(
        actual in 200u32..2000,
        offsets in prop::collection::vec(-20i32..=20, 1..6),
        shift in -100i32..=100,
    ) {
        let a = actual as f64 / 100.0;
        let rs: Vec<f64> = offsets.iter().map(|&o| (actual as i32 + o) as f64 / 100.0).collect();
        let base = deviation_stat(a, &rs).unwrap();
        let expected = offsets.iter().map(|o| o.abs()).max().unwrap() as f64 / 100.0;
        prop_assert_eq!(base, expected);

        let mut rev = rs.clone();
        rev.reverse();
        prop_assert_eq!(deviation_stat(a, &rev).unwrap(), base);

        let c = shift as f64 / 100.0;
        let shifted: Vec<f64> = rs.iter().map(|r| r + c).collect();
        prop_assert_eq!(deviation_stat(a + c, &shifted).unwrap(), base);
    }

    #[test]
    fn codec_round_trip(msg in message()) {
        let bytes = encode(&msg);
        prop_assert_eq!(bytes.last(), Some(&b'\n'));
        prop_assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        prop_assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn framing_reconstructs_sequence(msgs in prop::collection::vec(message(), 0..8)) {
        let stream: Vec<u8> = msgs.iter().flat_map(encode).collect();
        let (frames, rest) = decode_stream(&stream);
        prop_assert!(rest.is_empty());
        let decoded: Vec<_> = frames.into_iter().map(Result::unwrap).collect();
        prop_assert_eq!(decoded, msgs);
    }

    #[test]
    fn round_score_matches_brute_force(
        pool in prop::collection::vec(grid_distance(), 1..4),
        picks in prop::collection::vec(0usize..16, 6),
    ) {
        // Drawing from a small pool forces duplicate distances.
        let pick = |i: usize| pool[picks[i] % pool.len()];
        let a: Vec<f64> = (0..3).map(pick).collect();
        let b: Vec<f64> = (3..6).map(pick).collect();
        let r = complete_round(&a, &b).round_score().unwrap();
        let (winner, points) = brute_force_points(&a, &b);
        prop_assert_eq!(r.points as usize, points);
        prop_assert_eq!(r.winner.as_deref(), winner.map(|w| ["A", "B"][w]));
        prop_assert!(r.points <= 3);
        prop_assert_eq!(r.winner.is_some(), r.points >= 1);
        let loser: &[f64] = if winner == Some(1) { &a } else { &b };
        for id in &r.winning_boules {
            let d = if id.player == "A" { a[id.index as usize - 1] } else { b[id.index as usize - 1] };
            prop_assert!(loser.iter().all(|&l| d < l));
        }
    }

    #[test]
    fn remeasure_changes_one_record(
        ds in prop::collection::vec(grid_distance(), 6),
        throws in 1usize..=6,
        target in 0usize..6,
        new_d in grid_distance(),
    ) {
        let mut s = GameState::<f64>::new(GameConfig::default()).unwrap();
        for d in ds.iter().take(throws) {
            let p = s.current_turn().unwrap().to_string();
            s = s.record_throw(&p, reading(*d)).unwrap();
        }
        let id = s.boules[target].boule_id.clone();
        match s.remeasure(&id, reading(new_d)) {
            Ok(next) => {
                for (before, after) in s.boules.iter().zip(&next.boules) {
                    if before.boule_id == id {
                        prop_assert_eq!(after.distance_cm, Some(new_d));
                        prop_assert_eq!(after.measurement_history.len(), before.measurement_history.len() + 1);
                        prop_assert_eq!(&after.measurement_history[..before.measurement_history.len()], &before.measurement_history[..]);
                    } else {
                        prop_assert_eq!(before, after);
                    }
                }
                let mut restored = next.clone();
                restored.boules = s.boules.clone();
                prop_assert_eq!(restored, s);
            }
            Err(_) => prop_assert!(s.boule(&id).unwrap().distance_cm.is_none()),
        }
    }

    #[test]
    fn games_terminate_monotonically(seed in 0u64..1_000, target in 1u32..=13) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = GameConfig { target_score: target, ..GameConfig::default() };
        let mut s = GameState::<f64>::new(cfg).unwrap();
        let mut rounds = 0;
        while s.phase != Phase::GameComplete {
            let before = s.cumulative_scores.clone();
            let mut order = Vec::new();
            while s.phase == Phase::Throwing {
                let p = s.current_turn().unwrap().to_string();
                order.push(p.clone());
                let d = rng.random_range(200u32..=1500) as f64 / 100.0;
                s = s.record_throw(&p, reading(d)).unwrap();
            }
            prop_assert_eq!(s.throws_made, 6);
            prop_assert!(order.windows(2).all(|w| w[0] != w[1]));
            let r = s.round_score().unwrap();
            s = s.apply_round(&r).unwrap();
            for (p, score) in &s.cumulative_scores {
                prop_assert!(*score >= before[p]);
            }
            rounds += 1;
            prop_assert!(rounds < 10_000);
        }
        let winners: Vec<_> = s.cumulative_scores.values().filter(|&&v| v >= target).collect();
        prop_assert_eq!(winners.len(), 1);
        let tie = boulescope_core::RoundResult { winner: None, points: 0, winning_boules: vec![], loser_best_cm: None };
        prop_assert!(s.apply_round(&tie).is_err());
    }
}

#[test]
fn boule_ids_serialize_as_text() {
    let id = BouleId::new("P1", 2);
    assert_eq!(serde_json::to_string(&id).unwrap(), "\"P1-2\"");
}
