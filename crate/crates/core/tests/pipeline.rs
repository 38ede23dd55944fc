use std::collections::{BTreeMap, BTreeSet};

use pedwarn::conflict::Severity;
use pedwarn::logs::{parse_jsonl, to_jsonl};
use pedwarn::plot::{analysis_tracks, trajectory_svg};
use pedwarn::scenario::actor_of_detection_id;
use pedwarn::{
    aggregate, evaluate, presets, run_pipeline, Detection, EgoRecord, Error, ObjectClass, RunConfig, Scenario,
    Timestamp, Vec2, WarningRecord,
};

fn run(s: &Scenario, cfg: &RunConfig) -> Vec<WarningRecord> {
    let logs = s.generate().unwrap();
    let out = run_pipeline(cfg, &logs.detections, &logs.ego, logs.route).unwrap();
    out.warnings.iter().map(WarningRecord::from).collect()
}

#[test]
fn noiseless_conflict_warns_early_once_with_correct_direction() {
    let cfg = RunConfig::default();
    let s = presets::get("conflict15").unwrap().noiseless();
    let logs = s.generate().unwrap();
    let out = run_pipeline(&cfg, &logs.detections, &logs.ego, logs.route.clone()).unwrap();
    let recs: Vec<WarningRecord> = out.warnings.iter().map(WarningRecord::from).collect();
    assert!(!recs.is_empty());
    assert_eq!(recs[0].severity, "early");
    let early = recs.iter().filter(|w| w.severity == "early").count();
    assert_eq!(early, 1, "rate limiter admits one early warning per track");

    let report = evaluate(&s.name, &recs, &logs.truth, &logs.route, &cfg.conflict).unwrap();
    assert_eq!(report.missed_conflicts, 0);
    assert_eq!(report.false_warnings, 0);
    let actor = &report.actors[0];
    assert!(actor.direction_checked > 0);
    assert_eq!(actor.direction_correct, actor.direction_checked);
    assert_eq!(out.summary.warnings, recs.len());
    assert_eq!(out.summary.rejected, 0);
}

#[test]
fn severities_escalate_within_the_rate_limit() {
    let cfg = RunConfig::default();
    for seed in 0..20 {
        let recs = run(&presets::get("conflict15").unwrap().with_seed(seed), &cfg);
        let mut last: BTreeMap<u64, (f64, &str)> = BTreeMap::new();
        for w in &recs {
            if let Some(&(t, sev)) = last.get(&w.id) {
                let escalated = sev == Severity::Early.as_str() && w.severity == Severity::Emergency.as_str();
                assert!(escalated || w.t - t >= cfg.conflict.rate_limit, "seed {seed}: {w:?}");
            }
            last.insert(w.id, (w.t, &w.severity));
        }
    }
}

#[test]
fn replay_is_deterministic_across_threads() {
    let cfg = RunConfig::default();
    let s = presets::get("fig8").unwrap().with_seed(11);
    let reference = to_jsonl(&run(&s, &cfg));
    let outputs: Vec<String> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4).map(|_| scope.spawn(|| to_jsonl(&run(&s, &cfg)))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(outputs.iter().all(|o| *o == reference));
}

#[test]
fn id_switches_appear_and_map_back_to_actors() {
    let mut saw_switch = false;
    for seed in 0..20 {
        let logs = presets::get("fig8").unwrap().with_seed(seed).generate().unwrap();
        let ids: BTreeSet<u64> = logs.detections.iter().map(|d| d.track_id).collect();
        assert!(ids.iter().all(|&id| actor_of_detection_id(id) == 1));
        saw_switch |= ids.len() >= 2;
    }
    assert!(saw_switch);
}

/// Pooled sample standard deviation of the longitudinal detection error for one actor.
fn longitudinal_std(s: &Scenario, actor: u64) -> f64 {
    let mut errs = Vec::new();
    for seed in 0..100 {
        let logs = s.clone().with_seed(seed).generate().unwrap();
        let truth: BTreeMap<(u64, u64), Vec2> = logs
            .truth
            .iter()
            .map(|r| ((r.id, r.t.secs().to_bits()), r.pos()))
            .collect();
        for d in &logs.detections {
            if actor_of_detection_id(d.track_id) == actor {
                errs.push(d.x - truth[&(actor, d.t.secs().to_bits())].x);
            }
        }
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn far_crossing_is_noisier_than_near_crossing() {
    let far = longitudinal_std(&presets::get("fig6").unwrap(), 1);
    let near = longitudinal_std(&presets::stationary_crossing(20.0), 1);
    assert!(far > near, "x=40 std {far}, x=20 std {near}");
}

#[test]
fn plots_have_one_polyline_per_detection_id() {
    for name in ["fig5", "fig8"] {
        let s = presets::get(name).unwrap().with_seed(4);
        let logs = s.generate().unwrap();
        let tracks = analysis_tracks(&logs.detections, &logs.ego, s.sensors).unwrap();
        let ids: BTreeSet<u64> = logs.detections.iter().map(|d| d.track_id).collect();
        assert_eq!(tracks.len(), ids.len());
        let svg = trajectory_svg(&tracks, name);
        assert_eq!(svg.matches("<polyline").count(), ids.len());
        let long_enough = tracks.values().filter(|t| t.len() >= 30).count();
        assert_eq!(svg.matches("class=\"marker\"").count(), long_enough);
        if name == "fig5" {
            assert_eq!(long_enough, 3);
        }
    }
}

#[test]
fn empty_detections_give_no_warnings() {
    let cfg = RunConfig::default();
    let logs = presets::get("fig5").unwrap().generate().unwrap();
    let out = run_pipeline(&cfg, &[], &logs.ego, logs.route).unwrap();
    assert!(out.warnings.is_empty());
    assert_eq!(out.summary.frames, 0);
}

#[test]
fn out_of_order_detections_are_rejected() {
    let cfg = RunConfig::default();
    let logs = presets::get("fig6").unwrap().generate().unwrap();
    let mut dets = logs.detections.clone();
    dets.swap(3, 4);
    assert!(run_pipeline(&cfg, &dets, &logs.ego, logs.route).is_err());
}

#[test]
fn non_finite_detection_is_rejected() {
    let cfg = RunConfig::default();
    let logs = presets::get("fig6").unwrap().generate().unwrap();
    let bad = vec![Detection::new(
        Timestamp::from_secs(0.1),
        1,
        ObjectClass::Pedestrian,
        Vec2::new(f64::NAN, 0.0),
    )];
    assert!(run_pipeline(&cfg, &bad, &logs.ego, logs.route).is_err());
}

#[test]
fn logs_round_trip_through_jsonl() {
    let logs = presets::get("fig8").unwrap().with_seed(2).generate().unwrap();
    let dets: Vec<Detection> = parse_jsonl(to_jsonl(&logs.detections).as_bytes()).unwrap();
    let ego: Vec<EgoRecord> = parse_jsonl(to_jsonl(&logs.ego).as_bytes()).unwrap();
    assert_eq!(dets, logs.detections);
    assert_eq!(ego, logs.ego);
    let err = parse_jsonl::<Detection>("\n{\"t\":0}\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::MalformedLog { line: 2, .. }));
}

#[test]
fn batch_aggregate_over_seeds() {
    let cfg = RunConfig::default();
    let reports: Vec<_> = (0..10)
        .map(|seed| {
            let s = presets::get("conflict15").unwrap().with_seed(seed);
            let logs = s.generate().unwrap();
            let recs = run(&s, &cfg);
            evaluate(&s.name, &recs, &logs.truth, &logs.route, &cfg.conflict).unwrap()
        })
        .collect();
    let agg = aggregate(&reports);
    assert_eq!(agg.runs, 10);
    assert_eq!(agg.runs_with_lead, 10);
    assert!(agg.mean_lead_time.unwrap() > 2.5);
}
