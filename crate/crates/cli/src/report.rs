//! Plain-text rendering of bench reports and match transcripts.

use std::fmt::Write;

use boulescope_core::AccuracyReport;
use boulescope_service::MatchTranscript;

pub fn table2(r: &AccuracyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy bench: {} trials, seed {}", r.trials, r.seed);
    for env in [&r.indoor, &r.outdoor] {
        let _ = writeln!(
            out,
            "  {:<8} sigma {:.4} cm, bias {:+.2} cm, {} C",
            env.kind.as_str(),
            env.noise_sigma_cm,
            env.bias_cm,
            env.temperature_c
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<8} {:>8}  {:<24} {:>10} {:>10}",
        "env", "actual", "sample readings", "sample dev", "mean dev"
    );
    for row in &r.rows {
        let readings: Vec<String> = row.readings.iter().map(|x| format!("{x:.2}")).collect();
        let _ = writeln!(
            out,
            "{:<8} {:>8.2}  {:<24} {:>10.2} {:>10.4}",
            row.environment.as_str(),
            row.actual_cm,
            readings.join(" "),
            row.max_abs_dev_cm,
            row.mean_max_abs_dev_cm
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "mean max-abs-deviation: indoor {:.2} cm ({:.4}), outdoor {:.2} cm ({:.4})",
        r.mean_max_abs_dev_indoor_cm, r.mean_max_abs_dev_indoor_cm, r.mean_max_abs_dev_outdoor_cm, r.mean_max_abs_dev_outdoor_cm
    );
    out
}

pub fn transcript(t: &MatchTranscript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "session {}", t.session_id);
    for round in &t.rounds {
        let throws: Vec<String> = round
            .throws
            .iter()
            .map(|th| format!("{}={:.2}", th.boule_id, th.distance_cm))
            .collect();
        let outcome = match &round.result.winner {
            Some(w) => format!("{w} +{}", round.result.points),
            None => "tie".to_string(),
        };
        let scores: Vec<String> = round.scores_after.iter().map(|(p, s)| format!("{p} {s}")).collect();
        let _ = writeln!(
            out,
            "round {:>3}: {:<10} | {} | {}",
            round.round_no,
            outcome,
            scores.join(", "),
            throws.join(" ")
        );
    }
    match &t.winner {
        Some(w) => {
            let _ = writeln!(out, "winner: {w} ({})", fmt_scores(t));
        }
        None => {
            let _ = writeln!(out, "stopped without a winner ({})", fmt_scores(t));
        }
    }
    out
}

fn fmt_scores(t: &MatchTranscript) -> String {
    t.final_scores
        .iter()
        .map(|(p, s)| format!("{p} {s}"))
        .collect::<Vec<_>>()
        .join(", ")
}
