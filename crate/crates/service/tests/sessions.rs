use std::time::Duration;

use boulescope_core::{BouleId, DeviceErrorCode, EnvironmentConfig, GameConfig, GameError, Phase};
use boulescope_service::events::{read_events, replay};
use boulescope_service::{DeviceConfig, DeviceHandle, EventKind, Scene, ScoringService, ServiceConfig, ServiceError};

struct Rig {
    service: ScoringService,
    device: DeviceHandle,
    _dir: tempfile::TempDir,
}

async fn rig(scene: Scene, env: EnvironmentConfig) -> Rig {
    let dir = tempfile::tempdir().unwrap();
    let service = ScoringService::new(ServiceConfig::new(dir.path())).unwrap();
    let device = DeviceHandle::spawn("127.0.0.1:0", DeviceConfig::new(env, 3), scene).await.unwrap();
    Rig {
        service,
        device,
        _dir: dir,
    }
}

fn full_scene(a: [f64; 3], b: [f64; 3]) -> Scene {
    Scene::from_pairs((1..=3).flat_map(|i| [(format!("P1-{i}"), a[i - 1]), (format!("P2-{i}"), b[i - 1])]))
}

fn noiseless() -> EnvironmentConfig {
    EnvironmentConfig::indoor().noiseless()
}

#[tokio::test]
async fn create_session_logs_first_event() {
    let r = rig(full_scene([3.0; 3], [4.0; 3]), noiseless()).await;
    let addr = r.device.addr.to_string();
    let a = r.service.create_session(GameConfig::default(), &addr).await.unwrap();
    let b = r.service.create_session(GameConfig::default(), &addr).await.unwrap();
    assert_ne!(a.id(), b.id());
    assert_eq!(a.snapshot().event_seq, 1);

    let view = r.service.get_state(a.id()).unwrap();
    assert_eq!(view.current_turn.as_deref(), Some("P1"));
    assert!(view.boules.iter().all(|b| b.distance_cm.is_none()));
    assert_eq!(view.boules.len(), 6);

    r.service.throw(a.id(), "P1").await.unwrap();
    assert_eq!(r.service.get_state(b.id()).unwrap().throws_made, 0);
    assert_eq!(r.service.get_state(a.id()).unwrap().throws_made, 1);

    let events = read_events(a.log_path()).unwrap();
    assert_eq!(events[0].kind(), EventKind::SessionCreated);
    assert_eq!(events.len(), 2);
}

#[tokio::test]
async fn unreachable_device_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(dir.path());
    cfg.hello_timeout = Duration::from_millis(300);
    let service = ScoringService::new(cfg).unwrap();
    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let err = service.create_session(GameConfig::default(), &free.to_string()).await.unwrap_err();
    assert!(matches!(err, ServiceError::DeviceUnavailable(_)), "{err:?}");
    assert_eq!(err.code(), "device_unavailable");
    assert!(service.session_ids().is_empty());
}

#[tokio::test]
async fn first_throw_and_turn_errors() {
    let r = rig(Scene::from_pairs([("P1-1", 3.0), ("P2-1", 450.0)]), noiseless()).await;
    let s = r.service.create_session(GameConfig::default(), &r.device.addr.to_string()).await.unwrap();

    let err = r.service.throw(s.id(), "P2").await.unwrap_err();
    assert!(matches!(err, ServiceError::Game(GameError::OutOfTurn { .. })));
    assert_eq!(s.snapshot().event_seq, 1);

    let (m, state) = r.service.throw(s.id(), "P1").await.unwrap();
    assert_eq!(m.distance_cm, 3.00);
    assert!(m.timestamp.is_some());
    assert_eq!(state.boule(&BouleId::new("P1", 1)).unwrap().distance_cm, Some(3.0));
    assert_eq!(state.current_turn().unwrap(), "P2");

    // P2-1 lies beyond the sensor range.
    let err = r.service.throw(s.id(), "P2").await.unwrap_err();
    assert!(matches!(
        err,
        ServiceError::MeasurementFailed {
            code: DeviceErrorCode::OutOfRange,
            ..
        }
    ));
    assert!(err.is_retryable());
    let view = r.service.get_state(s.id()).unwrap();
    assert_eq!(view.throws_made, 1);
    assert_eq!(view.event_seq, 2);

    assert!(matches!(r.service.get_state("nope"), Err(ServiceError::NotFound(_))));
    assert!(matches!(r.service.throw("nope", "P1").await, Err(ServiceError::NotFound(_))));
}

#[tokio::test]
async fn remeasure_after_scene_edit() {
    let r = rig(full_scene([3.0, 5.0, 6.0], [4.0, 7.0, 8.0]), noiseless()).await;
    let s = r.service.create_session(GameConfig::default(), &r.device.addr.to_string()).await.unwrap();
    r.service.throw(s.id(), "P1").await.unwrap();

    let id = BouleId::new("P1", 1);
    r.device.scene.set("P1-1", 25.4);
    let (m, state) = r.service.remeasure(s.id(), &id).await.unwrap();
    assert_eq!(m.distance_cm, 25.4);
    assert_eq!(state.boule(&id).unwrap().measurement_history.len(), 2);
    let seq = s.snapshot().event_seq;
    r.service.remeasure(s.id(), &id).await.unwrap();
    let state = s.snapshot();
    assert_eq!(state.state.boule(&id).unwrap().measurement_history.len(), 3);
    assert_eq!(state.event_seq, seq + 1);
    assert_eq!(state.state.current_turn().unwrap(), "P2");

    let err = r.service.remeasure(s.id(), &BouleId::new("P2", 3)).await.unwrap_err();
    assert!(matches!(err, ServiceError::Game(GameError::NoMeasurement(_))));
}

async fn play_round(r: &Rig, id: &str) {
    for _ in 0..6 {
        let player = r.service.get_state(id).unwrap().current_turn.unwrap();
        r.service.throw(id, &player).await.unwrap();
    }
}

#[tokio::test]
async fn scoring_rounds() {
    let r = rig(full_scene([20.0, 30.0, 50.0], [40.0, 60.0, 70.0]), noiseless()).await;
    let s = r.service.create_session(GameConfig::default(), &r.device.addr.to_string()).await.unwrap();

    r.service.throw(s.id(), "P1").await.unwrap();
    let err = r.service.score_round(s.id()).await.unwrap_err();
    assert!(matches!(err, ServiceError::Game(GameError::IncompleteRound(_))));
    assert_eq!(err.code(), "incomplete_round");

    for _ in 0..5 {
        let player = r.service.get_state(s.id()).unwrap().current_turn.unwrap();
        r.service.throw(s.id(), &player).await.unwrap();
    }
    let seq = s.snapshot().event_seq;
    let result = r.service.score_round(s.id()).await.unwrap();
    assert_eq!(result.winner.as_deref(), Some("P1"));
    assert_eq!(result.points, 2);
    let snap = s.snapshot();
    assert_eq!(snap.event_seq, seq + 2);
    assert_eq!(snap.state.score("P1"), 2);
    assert_eq!(snap.state.round_no, 2);

    let kinds: Vec<_> = s.events_since(seq).iter().map(|e| e.kind()).collect();
    assert_eq!(kinds, [EventKind::RoundScored, EventKind::RoundApplied]);
}

#[tokio::test]
async fn single_closer_boule_and_tie() {
    let r = rig(full_scene([3.0, 9.0, 10.0], [4.0, 5.0, 6.0]), noiseless()).await;
    let s = r.service.create_session(GameConfig::default(), &r.device.addr.to_string()).await.unwrap();
    play_round(&r, s.id()).await;
    let result = r.service.score_round(s.id()).await.unwrap();
    assert_eq!((result.winner.as_deref(), result.points), (Some("P1"), 1));

    r.device.scene.replace(full_scene([7.0; 3], [7.0; 3]).snapshot());
    play_round(&r, s.id()).await;
    let result = r.service.score_round(s.id()).await.unwrap();
    assert_eq!(result.winner, None);
    assert_eq!(result.points, 0);
    let snap = s.snapshot();
    assert_eq!(snap.state.score("P1"), 1);
    assert_eq!(snap.state.round_no, 3);
}

#[tokio::test]
async fn game_won_event_and_replay() {
    let r = rig(full_scene([3.0, 4.0, 5.0], [10.0, 11.0, 12.0]), EnvironmentConfig::outdoor()).await;
    let cfg = GameConfig {
        target_score: 5,
        ..GameConfig::default()
    };
    let s = r.service.create_session(cfg, &r.device.addr.to_string()).await.unwrap();
    play_round(&r, s.id()).await;
    r.service.remeasure(s.id(), &BouleId::new("P2", 2)).await.unwrap();
    r.service.score_round(s.id()).await.unwrap();
    play_round(&r, s.id()).await;
    r.service.score_round(s.id()).await.unwrap();

    let snap = s.snapshot();
    assert_eq!(snap.state.phase, Phase::GameComplete);
    assert_eq!(snap.state.game_winner.as_deref(), Some("P1"));
    let last = s.events_since(0).last().unwrap().clone();
    assert_eq!(last.kind(), EventKind::GameWon);
    assert!(matches!(r.service.throw(s.id(), "P1").await, Err(ServiceError::Game(GameError::Phase { .. }))));

    let replayed = replay(s.log_path()).unwrap();
    assert_eq!(replayed.state, snap.state);
    assert_eq!(replayed.event_seq, snap.event_seq);
    assert_eq!(replayed.session_id, s.id());
}

#[tokio::test]
async fn replay_detects_gap_in_real_log() {
    let r = rig(full_scene([3.0; 3], [4.0; 3]), noiseless()).await;
    let s = r.service.create_session(GameConfig::default(), &r.device.addr.to_string()).await.unwrap();
    r.service.throw(s.id(), "P1").await.unwrap();
    r.service.throw(s.id(), "P2").await.unwrap();

    let text = std::fs::read_to_string(s.log_path()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let gapped = format!("{}\n{}\n", lines[0], lines[2]);
    let path = s.log_path().with_extension("gap");
    std::fs::write(&path, gapped).unwrap();
    match replay(&path) {
        Err(boulescope_service::ReplayError::BadRecord { line: 2, seq: Some(3), .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn concurrent_sessions_and_reads() {
    let r = rig(full_scene([3.0, 4.0, 5.0], [6.0, 7.0, 8.0]), EnvironmentConfig::indoor()).await;
    let addr = r.device.addr.to_string();
    let mut sessions = Vec::new();
    for _ in 0..4 {
        sessions.push(r.service.create_session(GameConfig::default(), &addr).await.unwrap());
    }
    let mut tasks = Vec::new();
    for s in &sessions {
        let svc = r.service.clone();
        let id = s.id().to_string();
        tasks.push(tokio::spawn(async move {
            for _ in 0..6 {
                let player = svc.get_state(&id).unwrap().current_turn.unwrap();
                svc.throw(&id, &player).await.unwrap();
            }
            svc.score_round(&id).await.unwrap()
        }));
    }
    // Duplicate throws for the same player race on one session; exactly one wins.
    let dup = r.service.create_session(GameConfig::default(), &addr).await.unwrap();
    let (x, y) = tokio::join!(r.service.throw(dup.id(), "P1"), r.service.throw(dup.id(), "P1"));
    assert_eq!([x.is_ok(), y.is_ok()].iter().filter(|&&ok| ok).count(), 1);

    for t in tasks {
        let result = t.await.unwrap();
        assert_eq!(result.winner.as_deref(), Some("P1"));
    }
    for s in &sessions {
        let snap = s.snapshot();
        assert_eq!(snap.event_seq, 9);
        assert_eq!(replay(s.log_path()).unwrap().state, snap.state);
        let seqs: Vec<u64> = s.events_since(0).iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (1..=9).collect::<Vec<_>>());
    }
}
