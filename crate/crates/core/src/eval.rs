//! Scores a warnings log against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conflict::{classify_lateral, ConflictConfig};
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};
use crate::logs::{TruthRecord, WarningRecord, EGO_TRUTH_ID};
use crate::route::RoutePath;
use crate::scenario::actor_of_detection_id;

/// Ground-truth conflict between the ego and one actor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueConflict {
    /// Time the actor first enters the corridor ahead of the ego.
    pub t_enter: f64,
    /// Vehicle time to the entry point at `t_enter`.
    pub t_veh_at_entry: f64,
    /// Route arc length of the interception point.
    pub s: f64,
    /// Time the ego reaches `s`, if it does within the log.
    pub t_arrive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorReport {
    pub actor: u64,
    pub conflict: Option<TrueConflict>,
    pub first_warning: Option<f64>,
    /// Time from the first warning to the true emergency-threshold crossing.
    pub lead_time: Option<f64>,
    pub warnings: usize,
    pub false_warnings: usize,
    pub direction_correct: usize,
    pub direction_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub seed: Option<u64>,
    pub actors: Vec<ActorReport>,
    pub first_warning: Option<f64>,
    /// Smallest lead time over actors that have one.
    pub lead_time: Option<f64>,
    pub direction_accuracy: Option<f64>,
    pub false_warnings: usize,
    pub missed_conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub runs_with_lead: usize,
    pub mean_lead_time: Option<f64>,
    pub min_lead_time: Option<f64>,
    pub mean_first_warning: Option<f64>,
    pub mean_direction_accuracy: Option<f64>,
    pub mean_false_warnings: f64,
    pub mean_missed_conflicts: f64,
}

/// Truth positions of one id, sorted by time.
#[derive(Debug, Clone, Default)]
struct TruthTrack(Vec<(f64, Vec2)>);

impl TruthTrack {
    fn at(&self, t: f64) -> Option<Vec2> {
        let s = &self.0;
        let first = s.first()?;
        let last = s.last()?;
        if t < first.0 - 1e-9 || t > last.0 + 1e-9 {
            return None;
        }
        let i = s.partition_point(|(ti, _)| *ti <= t);
        if i == 0 {
            return Some(first.1);
        }
        if i == s.len() {
            return Some(last.1);
        }
        let (t0, p0) = s[i - 1];
        let (t1, p1) = s[i];
        let u = (t - t0) / (t1 - t0);
        Some(p0 + (p1 - p0) * u)
    }
}

/// Ego truth with headings and speeds recovered by differencing.
struct EgoTruth {
    track: TruthTrack,
}

impl EgoTruth {
    fn pose(&self, t: f64) -> Option<Pose2> {
        let p = self.track.at(t)?;
        Some(Pose2::new(p, self.heading(t)))
    }

    fn segment(&self, t: f64) -> Option<(Vec2, f64)> {
        let s = &self.track.0;
        if s.len() < 2 {
            return None;
        }
        let i = s.partition_point(|(ti, _)| *ti <= t).clamp(1, s.len() - 1);
        let d = s[i].1 - s[i - 1].1;
        Some((d, s[i].0 - s[i - 1].0))
    }

    fn heading(&self, t: f64) -> f64 {
        // Nearest moving segment, looking back first; a parked ego keeps its last heading.
        let s = &self.track.0;
        if s.len() < 2 {
            return 0.0;
        }
        let i = s.partition_point(|(ti, _)| *ti <= t).clamp(1, s.len() - 1);
        (1..=i)
            .rev()
            .chain(i + 1..s.len())
            .map(|j| s[j].1 - s[j - 1].1)
            .find(|d| d.norm() > 1e-9)
            .map(|d| d.y.atan2(d.x))
            .unwrap_or(0.0)
    }

    fn speed(&self, t: f64) -> f64 {
        self.segment(t)
            .map_or(0.0, |(d, dt)| if dt > 0.0 { d.norm() / dt } else { 0.0 })
    }
}

fn group_truth(truth: &[TruthRecord]) -> BTreeMap<u64, TruthTrack> {
    let mut by_id: BTreeMap<u64, TruthTrack> = BTreeMap::new();
    for r in truth {
        by_id.entry(r.id).or_default().0.push((r.t.secs(), r.pos()));
    }
    for track in by_id.values_mut() {
        track.0.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    by_id
}

pub fn evaluate(
    scenario: &str,
    warnings: &[WarningRecord],
    truth: &[TruthRecord],
    route: &RoutePath,
    cfg: &ConflictConfig,
) -> Result<EvalReport> {
    let mut by_id = group_truth(truth);
    let Some(ego_track) = by_id.remove(&EGO_TRUTH_ID) else {
        if warnings.is_empty() && truth.is_empty() {
            return Ok(EvalReport {
                scenario: scenario.to_owned(),
                seed: None,
                actors: Vec::new(),
                first_warning: None,
                lead_time: None,
                direction_accuracy: None,
                false_warnings: 0,
                missed_conflicts: 0,
            });
        }
        return Err(Error::MismatchedLogs("truth log has no ego track".into()));
    };
    let ego = EgoTruth { track: ego_track };

    let mut per_actor: BTreeMap<u64, Vec<&WarningRecord>> = BTreeMap::new();
    for w in warnings {
        let actor = actor_of_detection_id(w.id);
        if !by_id.contains_key(&actor) {
            return Err(Error::MismatchedLogs(format!(
                "warning for id {} has no truth actor {actor}",
                w.id
            )));
        }
        per_actor.entry(actor).or_default().push(w);
    }

    let ego_s = |t: f64| ego.track.at(t).map(|p| route.project_point(p).s);

    let mut actors = Vec::new();
    for (&actor, track) in &by_id {
        let conflict = true_conflict(track, &ego, route, cfg, &ego_s);
        let ws = per_actor.get(&actor).map(Vec::as_slice).unwrap_or(&[]);
        let first_warning = ws.iter().map(|w| w.t).min_by(f64::total_cmp);
        let lead_time = match (conflict.and_then(|c| c.t_arrive), first_warning) {
            (Some(arrive), Some(first)) => Some(arrive - cfg.emergency_time - first),
            _ => None,
        };

        let mut false_warnings = 0;
        let mut direction_correct = 0;
        let mut direction_checked = 0;
        for w in ws {
            if !enters_corridor(track, w.t, cfg.horizon, route, cfg, &ego_s) {
                false_warnings += 1;
            }
            let (Some(pose), Some(p)) = (ego.pose(w.t), track.at(w.t + cfg.prompt_duration)) else {
                continue;
            };
            let truth_dir = classify_lateral(pose.transform_to_vehicle(p).y, cfg.ahead_half_width);
            direction_checked += 1;
            if truth_dir.as_str() == w.direction {
                direction_correct += 1;
            }
        }

        actors.push(ActorReport {
            actor,
            conflict,
            first_warning,
            lead_time,
            warnings: ws.len(),
            false_warnings,
            direction_correct,
            direction_checked,
        });
    }

    let missed_conflicts = actors
        .iter()
        .filter(|a| a.warnings == 0 && a.conflict.is_some_and(|c| c.t_veh_at_entry < cfg.warn_time))
        .count();
    let checked: usize = actors.iter().map(|a| a.direction_checked).sum();
    let correct: usize = actors.iter().map(|a| a.direction_correct).sum();
    Ok(EvalReport {
        scenario: scenario.to_owned(),
        seed: None,
        first_warning: actors.iter().filter_map(|a| a.first_warning).min_by(f64::total_cmp),
        lead_time: actors.iter().filter_map(|a| a.lead_time).min_by(f64::total_cmp),
        direction_accuracy: (checked > 0).then(|| correct as f64 / checked as f64),
        false_warnings: actors.iter().map(|a| a.false_warnings).sum(),
        missed_conflicts,
        actors,
    })
}

fn in_corridor_ahead(
    p: Vec2,
    t: f64,
    route: &RoutePath,
    cfg: &ConflictConfig,
    ego_s: &impl Fn(f64) -> Option<f64>,
) -> Option<f64> {
    let proj = route.project_point(p);
    let s_ego = ego_s(t)?;
    (proj.distance <= cfg.corridor_half_width && proj.s > s_ego).then_some(proj.s)
}

fn enters_corridor(
    track: &TruthTrack,
    t_from: f64,
    horizon: f64,
    route: &RoutePath,
    cfg: &ConflictConfig,
    ego_s: &impl Fn(f64) -> Option<f64>,
) -> bool {
    track
        .0
        .iter()
        .filter(|(t, _)| *t >= t_from - 1e-9 && *t <= t_from + horizon + 1e-9)
        .any(|&(t, p)| in_corridor_ahead(p, t, route, cfg, ego_s).is_some())
}

/// First true corridor stretch ahead of the ego. The interception point is
/// the mid sample of that stretch, as in the online detector.
fn true_conflict(
    track: &TruthTrack,
    ego: &EgoTruth,
    route: &RoutePath,
    cfg: &ConflictConfig,
    ego_s: &impl Fn(f64) -> Option<f64>,
) -> Option<TrueConflict> {
    let mut stretch: Vec<(f64, f64)> = Vec::new();
    for &(t, p) in &track.0 {
        match in_corridor_ahead(p, t, route, cfg, ego_s) {
            Some(s) => stretch.push((t, s)),
            None if !stretch.is_empty() => break,
            None => {}
        }
    }
    let &(t_enter, s_enter) = stretch.first()?;
    let (_, s_mid) = stretch[(stretch.len() - 1) / 2];

    let speed = ego.speed(t_enter);
    let t_veh_at_entry = if speed >= cfg.speed_floor {
        (s_enter - ego_s(t_enter)?) / speed
    } else {
        f64::INFINITY
    };
    let t_arrive = ego.track.0.windows(2).find_map(|w| {
        let (s0, s1) = (route.project_point(w[0].1).s, route.project_point(w[1].1).s);
        (s0 < s_mid && s1 >= s_mid).then(|| w[0].0 + (w[1].0 - w[0].0) * (s_mid - s0) / (s1 - s0))
    });
    Some(TrueConflict {
        t_enter,
        t_veh_at_entry,
        s: s_mid,
        t_arrive,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(reports: &[EvalReport]) -> AggregateReport {
    let n = reports.len();
    let leads: Vec<f64> = reports.iter().filter_map(|r| r.lead_time).collect();
    AggregateReport {
        runs: n,
        runs_with_lead: leads.len(),
        mean_lead_time: mean(leads.iter().copied()),
        min_lead_time: leads.iter().copied().min_by(f64::total_cmp),
        mean_first_warning: mean(reports.iter().filter_map(|r| r.first_warning)),
        mean_direction_accuracy: mean(reports.iter().filter_map(|r| r.direction_accuracy)),
        mean_false_warnings: mean(reports.iter().map(|r| r.false_warnings as f64)).unwrap_or(0.0),
        mean_missed_conflicts: mean(reports.iter().map(|r| r.missed_conflicts as f64)).unwrap_or(0.0),
    }
}
