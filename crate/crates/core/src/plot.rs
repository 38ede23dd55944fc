//! SVG figures: analysis-frame trajectories and an event timeline.

use std::collections::BTreeMap;

use svg::node::element::{Circle, Group, Line, Polyline, Text};
use svg::Document;

use crate::conflict::Severity;
use crate::ego_state::{EgoFilter, EgoInit, EgoNoise, EgoRecord};
use crate::error::Result;
use crate::geometry::{to_world, Detection, FrameSet, Timestamp, Vec2};
use crate::logs::WarningRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 60.0;
/// Index of the marked sample on each trajectory (the 30th).
pub const MARKER_SAMPLE: usize = 29;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    min: Vec2,
    max: Vec2,
}

impl Bounds {
    fn of(points: impl Iterator<Item = Vec2>, fallback: Bounds) -> Bounds {
        let mut b: Option<Bounds> = None;
        for p in points {
            b = Some(match b {
                None => Bounds { min: p, max: p },
                Some(b) => Bounds {
                    min: Vec2::new(b.min.x.min(p.x), b.min.y.min(p.y)),
                    max: Vec2::new(b.max.x.max(p.x), b.max.y.max(p.y)),
                },
            });
        }
        let mut b = b.unwrap_or(fallback);
        // Avoid a zero-size range.
        if b.max.x - b.min.x < 1e-6 {
            b.min.x -= 1.0;
            b.max.x += 1.0;
        }
        if b.max.y - b.min.y < 1e-6 {
            b.min.y -= 1.0;
            b.max.y += 1.0;
        }
        b
    }

    fn to_px(self, p: Vec2) -> (f64, f64) {
        let u = (p.x - self.min.x) / (self.max.x - self.min.x);
        let v = (p.y - self.min.y) / (self.max.y - self.min.y);
        (
            MARGIN + u * (WIDTH - 2.0 * MARGIN),
            HEIGHT - MARGIN - v * (HEIGHT - 2.0 * MARGIN),
        )
    }
}

fn axes(b: &Bounds, x_label: &str, y_label: &str, title: &str) -> Group {
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (x1, y1) = (WIDTH - MARGIN, MARGIN);
    let line = |a: (f64, f64), c: (f64, f64)| {
        Line::new()
            .set("x1", a.0)
            .set("y1", a.1)
            .set("x2", c.0)
            .set("y2", c.1)
            .set("stroke", "black")
    };
    let label = |x: f64, y: f64, s: String, anchor: &str| {
        Text::new(s)
            .set("x", x)
            .set("y", y)
            .set("font-size", 12)
            .set("font-family", "sans-serif")
            .set("text-anchor", anchor)
    };
    let mut g = Group::new()
        .set("class", "axes")
        .add(line((x0, y0), (x1, y0)))
        .add(line((x0, y0), (x0, y1)));
    const TICKS: usize = 5;
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = b.min.x + f * (b.max.x - b.min.x);
        let yv = b.min.y + f * (b.max.y - b.min.y);
        let px = x0 + f * (x1 - x0);
        let py = y0 + f * (y1 - y0);
        g = g
            .add(line((px, y0), (px, y0 + 5.0)))
            .add(label(px, y0 + 20.0, format!("{xv:.1}"), "middle"))
            .add(line((x0 - 5.0, py), (x0, py)))
            .add(label(x0 - 8.0, py + 4.0, format!("{yv:.1}"), "end"));
    }
    g.add(label((x0 + x1) / 2.0, HEIGHT - 15.0, x_label.to_owned(), "middle"))
        .add(
            label(15.0, (y0 + y1) / 2.0, y_label.to_owned(), "middle")
                .set("transform", format!("rotate(-90 15 {})", (y0 + y1) / 2.0)),
        )
        .add(label(WIDTH / 2.0, 25.0, title.to_owned(), "middle"))
}

fn document() -> Document {
    Document::new()
        .set("viewBox", (0, 0, WIDTH, HEIGHT))
        .set("width", WIDTH)
        .set("height", HEIGHT)
}

/// One polyline per track, with a dot on the 30th sample.
pub fn trajectory_svg(tracks: &BTreeMap<u64, Vec<Vec2>>, title: &str) -> String {
    let fallback = Bounds {
        min: Vec2::new(0.0, -10.0),
        max: Vec2::new(50.0, 10.0),
    };
    let b = Bounds::of(tracks.values().flatten().copied(), fallback);
    let mut doc = document().add(axes(&b, "x (m)", "y (m)", title));
    for (i, (id, pts)) in tracks.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = b.to_px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let mut g = Group::new().set("class", "track").set("data-id", *id).add(
            Polyline::new()
                .set("points", points.join(" "))
                .set("fill", "none")
                .set("stroke", color)
                .set("stroke-width", 1.5),
        );
        if let Some(&p) = pts.get(MARKER_SAMPLE) {
            let (x, y) = b.to_px(p);
            g = g.add(
                Circle::new()
                    .set("class", "marker")
                    .set("cx", x)
                    .set("cy", y)
                    .set("r", 4)
                    .set("fill", color),
            );
        }
        doc = doc.add(g);
    }
    doc.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Detection,
    Early,
    Emergency,
}

impl EventKind {
    fn row(self) -> f64 {
        match self {
            EventKind::Detection => 0.0,
            EventKind::Early => 1.0,
            EventKind::Emergency => 2.0,
        }
    }

    fn color(self) -> &'static str {
        match self {
            EventKind::Detection => "#1f77b4",
            EventKind::Early => "#ff7f0e",
            EventKind::Emergency => "#d62728",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineEvent {
    pub t: f64,
    pub id: u64,
    pub kind: EventKind,
}

pub fn timeline_events(detections: &[Detection], warnings: &[WarningRecord]) -> Vec<TimelineEvent> {
    let mut out: Vec<TimelineEvent> = detections
        .iter()
        .map(|d| TimelineEvent {
            t: d.t.secs(),
            id: d.track_id,
            kind: EventKind::Detection,
        })
        .collect();
    out.extend(warnings.iter().map(|w| TimelineEvent {
        t: w.t,
        id: w.id,
        kind: if w.severity == Severity::Emergency.as_str() {
            EventKind::Emergency
        } else {
            EventKind::Early
        },
    }));
    out
}

/// Events on a time axis, one row per kind.
pub fn timeline_svg(events: &[TimelineEvent], title: &str) -> String {
    let fallback = Bounds {
        min: Vec2::new(0.0, -0.5),
        max: Vec2::new(10.0, 2.5),
    };
    let b = Bounds::of(
        events
            .iter()
            .map(|e| Vec2::new(e.t, -0.5))
            .chain(events.iter().map(|e| Vec2::new(e.t, 2.5))),
        fallback,
    );
    let mut doc = document().add(axes(&b, "t (s)", "detection / early / emergency", title));
    let mut g = Group::new().set("class", "events");
    for e in events {
        let (x, y) = b.to_px(Vec2::new(e.t, e.kind.row()));
        let r = if e.kind == EventKind::Detection { 1.5 } else { 5.0 };
        g = g.add(
            Circle::new()
                .set("cx", x)
                .set("cy", y)
                .set("r", r)
                .set("fill", e.kind.color())
                .set("data-id", e.id),
        );
    }
    doc = doc.add(g);
    doc.to_string()
}

/// Detections placed in the analysis frame using the ego log, grouped by
/// detection id (no merging, so switched ids stay visibly separate).
pub fn analysis_tracks(
    detections: &[Detection],
    ego_log: &[EgoRecord],
    noise: EgoNoise,
) -> Result<BTreeMap<u64, Vec<Vec2>>> {
    let init = match ego_log.first() {
        Some(EgoRecord::Init(init)) => *init,
        _ => EgoInit {
            t: detections.first().map_or(Timestamp::ZERO, |d| d.t),
            ..EgoInit::default()
        },
    };
    let frames = FrameSet::new(init.heading);
    let mut filter = EgoFilter::new(&init, noise);
    let mut idx = usize::from(matches!(ego_log.first(), Some(EgoRecord::Init(_))));
    let mut out: BTreeMap<u64, Vec<Vec2>> = BTreeMap::new();
    for det in detections {
        while idx < ego_log.len() && ego_log[idx].t() <= det.t {
            filter.process(&ego_log[idx])?;
            idx += 1;
        }
        filter.coast_to(det.t);
        let world = to_world(det, &filter.state().stamped_pose())?;
        out.entry(det.track_id).or_default().push(frames.to_analysis(world));
    }
    Ok(out)
}
