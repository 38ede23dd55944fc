//! Most-probable-path handling: route geometry, ego projection, deviation
//! detection and the pluggable providers that produce routes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ego_state::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2, Vec2};

/// Environment variable consulted for the remote provider URL.
pub const ROUTE_URL_ENV: &str = "PEDWARN_ROUTE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    /// Arc-length position along the route, m.
    pub s: f64,
    pub text: String,
}

/// Wire and file representation of a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDocument {
    pub polyline: Vec<[f64; 2]>,
    #[serde(default)]
    pub maneuvers: Vec<Maneuver>,
}

/// Route polyline in the world frame with cumulative arc length per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    vertices: Vec<Vec2>,
    arc: Vec<f64>,
    maneuvers: Vec<Maneuver>,
}

/// Nearest point on a route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub point: Vec2,
    pub distance: f64,
    /// Signed perpendicular offset, positive to the left of travel.
    pub offset: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteFix {
    pub s: f64,
    pub cross_track: f64,
    pub heading_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteStatus {
    OnRoute,
    Deviated,
}

impl RoutePath {
    pub fn new(vertices: Vec<Vec2>, mut maneuvers: Vec<Maneuver>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::InvalidRoute("need at least 2 vertices".into()));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRoute("non-finite vertex".into()));
        }
        let mut arc = Vec::with_capacity(vertices.len());
        arc.push(0.0);
        for (i, w) in vertices.windows(2).enumerate() {
            let len = w[0].distance(w[1]);
            if len <= 0.0 {
                return Err(Error::InvalidRoute(format!("zero-length segment at vertex {i}")));
            }
            arc.push(arc[i] + len);
        }
        maneuvers.sort_by(|a, b| a.s.total_cmp(&b.s));
        Ok(RoutePath {
            vertices,
            arc,
            maneuvers,
        })
    }

    pub fn from_document(doc: &RouteDocument) -> Result<Self> {
        let vertices = doc.polyline.iter().copied().map(Vec2::from).collect();
        RoutePath::new(vertices, doc.maneuvers.clone())
    }

    pub fn to_document(&self) -> RouteDocument {
        RouteDocument {
            polyline: self.vertices.iter().map(|&v| v.into()).collect(),
            maneuvers: self.maneuvers.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        RoutePath::from_document(&serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("route serializes")
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn maneuvers(&self) -> &[Maneuver] {
        &self.maneuvers
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().expect("route has vertices")
    }

    pub fn end(&self) -> Vec2 {
        *self.vertices.last().expect("route has vertices")
    }

    fn segment_heading(&self, i: usize) -> f64 {
        let d = self.vertices[i + 1] - self.vertices[i];
        d.y.atan2(d.x)
    }

    /// Point at arc length `s`, clamped to the route.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.arc.partition_point(|&a| a <= s).clamp(1, self.vertices.len() - 1) - 1;
        let seg_len = self.arc[i + 1] - self.arc[i];
        let u = (s - self.arc[i]) / seg_len;
        self.vertices[i] + (self.vertices[i + 1] - self.vertices[i]) * u
    }

    /// Nearest-point projection. Ties go to the smaller arc length.
    pub fn project_point(&self, p: Vec2) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.vertices.len() - 1 {
            let a = self.vertices[i];
            let ab = self.vertices[i + 1] - a;
            let len = self.arc[i + 1] - self.arc[i];
            let u = ((p - a).dot(ab) / (len * len)).clamp(0.0, 1.0);
            let point = a + ab * u;
            let distance = p.distance(point);
            if best.is_none_or(|b| distance < b.distance) {
                let offset = ab.cross(p - point).signum() * distance;
                best = Some(Projection {
                    s: self.arc[i] + u * len,
                    point,
                    distance,
                    offset,
                    segment: i,
                });
            }
        }
        best.expect("route has at least one segment")
    }

    pub fn project_pose(&self, pose: &Pose2) -> RouteFix {
        let proj = self.project_point(pose.position);
        RouteFix {
            s: proj.s,
            cross_track: proj.offset,
            heading_error: normalize_angle(pose.heading - self.segment_heading(proj.segment)),
        }
    }

    /// First maneuver with arc position in `[from, to]`.
    pub fn maneuver_between(&self, from: f64, to: f64) -> Option<&Maneuver> {
        self.maneuvers.iter().find(|m| m.s >= from && m.s <= to)
    }
}

pub fn project(ego: &VehicleState, route: &RoutePath) -> RouteFix {
    route.project_pose(&ego.pose)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationThresholds {
    pub max_cross_track: f64,
    /// Radians.
    pub max_heading_error: f64,
}

impl Default for DeviationThresholds {
    fn default() -> Self {
        DeviationThresholds {
            max_cross_track: 20.0,
            max_heading_error: PI / 4.0,
        }
    }
}

pub fn check_deviation(fix: &RouteFix, limits: &DeviationThresholds) -> RouteStatus {
    if fix.cross_track.abs() > limits.max_cross_track || fix.heading_error.abs() > limits.max_heading_error {
        RouteStatus::Deviated
    } else {
        RouteStatus::OnRoute
    }
}

/// Time for the vehicle to cover `ds` meters at constant `speed`, or `None`
/// when it is slower than `floor` and therefore not treated as approaching.
pub fn time_to_arc(ds: f64, speed: f64, floor: f64) -> Option<f64> {
    (speed >= floor).then(|| ds / speed)
}

pub trait RouteProvider {
    fn route(&self, start: &Pose2, dest: Vec2) -> Result<RoutePath>;
}

fn check_request(start: &Pose2, dest: Vec2) -> Result<()> {
    if start.position.distance(dest) <= 1e-9 {
        return Err(Error::DegenerateRouteRequest);
    }
    Ok(())
}

/// Straight segment from the start position to the destination.
#[derive(Debug, Clone, Copy, Default)]
pub struct StraightLineProvider;

impl RouteProvider for StraightLineProvider {
    fn route(&self, start: &Pose2, dest: Vec2) -> Result<RoutePath> {
        check_request(start, dest)?;
        RoutePath::new(vec![start.position, dest], Vec::new())
    }
}

/// Serves a fixed route read from a JSON file.
#[derive(Debug, Clone)]
pub struct FileProvider {
    path: PathBuf,
}

impl FileProvider {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileProvider { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RouteProvider for FileProvider {
    fn route(&self, start: &Pose2, dest: Vec2) -> Result<RoutePath> {
        check_request(start, dest)?;
        RoutePath::from_json(&fs::read_to_string(&self.path)?)
    }
}

/// Client for a remote routing service.
///
/// Sends `GET <url>?start=x,y&dest=x,y` and expects a [`RouteDocument`] body.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    url: String,
    timeout: Duration,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>) -> Self {
        HttpProvider {
            url: url.into(),
            timeout: Duration::from_secs(5),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(ROUTE_URL_ENV).ok().map(HttpProvider::new)
    }
}

impl RouteProvider for HttpProvider {
    fn route(&self, start: &Pose2, dest: Vec2) -> Result<RoutePath> {
        check_request(start, dest)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = agent
            .get(&self.url)
            .query("start", format!("{},{}", start.position.x, start.position.y))
            .query("dest", format!("{},{}", dest.x, dest.y))
            .call()
            .and_then(|mut resp| resp.body_mut().read_to_string())
            .map_err(|e| Error::ProviderUnreachable(e.to_string()))?;
        RoutePath::from_json(&body)
    }
}

/// Which provider backs a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Line,
    File,
    Http,
}

/// Owns the active route and swaps in a new one when the ego deviates.
pub struct RouteManager {
    provider: Box<dyn RouteProvider + Send>,
    route: RoutePath,
    dest: Vec2,
    limits: DeviationThresholds,
    reroutes: usize,
}

impl RouteManager {
    pub fn new(
        provider: Box<dyn RouteProvider + Send>,
        start: &Pose2,
        dest: Vec2,
        limits: DeviationThresholds,
    ) -> Result<Self> {
        let route = provider.route(start, dest)?;
        Ok(RouteManager {
            provider,
            route,
            dest,
            limits,
            reroutes: 0,
        })
    }

    pub fn route(&self) -> &RoutePath {
        &self.route
    }

    pub fn reroutes(&self) -> usize {
        self.reroutes
    }

    /// Projects the ego onto the active route, rerouting first if it has deviated.
    pub fn update(&mut self, ego: &VehicleState) -> Result<RouteFix> {
        let fix = project(ego, &self.route);
        if check_deviation(&fix, &self.limits) == RouteStatus::Deviated && ego.pose.position.distance(self.dest) > 1e-9
        {
            self.route = self.provider.route(&ego.pose, self.dest)?;
            self.reroutes += 1;
            return Ok(project(ego, &self.route));
        }
        Ok(fix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn l_shape() -> RoutePath {
        RoutePath::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(50.0, 0.0), Vec2::new(50.0, 30.0)],
            vec![Maneuver {
                s: 50.0,
                text: "turn left".into(),
            }],
        )
        .unwrap()
    }

    fn pose(x: f64, y: f64, heading: f64) -> Pose2 {
        Pose2::new(Vec2::new(x, y), heading)
    }

    #[test]
    fn straight_line_provider() {
        let r = StraightLineProvider
            .route(&pose(0.0, 0.0, 0.0), Vec2::new(100.0, 0.0))
            .unwrap();
        assert_eq!(r.vertices().len(), 2);
        assert_eq!(r.length(), 100.0);
    }

    #[test]
    fn degenerate_request_rejected() {
        let err = StraightLineProvider
            .route(&pose(3.0, 4.0, 0.0), Vec2::new(3.0, 4.0))
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateRouteRequest));
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(RoutePath::new(vec![Vec2::ZERO], vec![]).is_err());
        assert!(RoutePath::new(vec![Vec2::ZERO, Vec2::ZERO, Vec2::new(1.0, 0.0)], vec![]).is_err());
    }

    #[test]
    fn file_provider_arc_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("route.json");
        fs::write(&path, r#"{"polyline":[[0,0],[50,0],[50,30]],"maneuvers":[]}"#).unwrap();
        let r = FileProvider::new(&path)
            .route(&pose(0.0, 0.0, 0.0), Vec2::new(50.0, 30.0))
            .unwrap();
        assert_eq!(r.arc_lengths(), &[0.0, 50.0, 80.0]);
    }

    #[test]
    fn http_provider_matches_file_parse() {
        let body = l_shape().to_json();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let served = body.clone();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 2048];
            let n = stream.read(&mut buf).unwrap();
            let request = String::from_utf8_lossy(&buf[..n]).to_string();
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                served.len(),
                served
            );
            stream.write_all(resp.as_bytes()).unwrap();
            request
        });

        let remote = HttpProvider::new(format!("http://{addr}/route"))
            .route(&pose(0.0, 0.0, 0.0), Vec2::new(50.0, 30.0))
            .unwrap();
        let request = server.join().unwrap();
        assert!(request.starts_with("GET /route?start=0%2C0&dest=50%2C30"), "{request}");
        assert_eq!(remote, RoutePath::from_json(&body).unwrap());
    }

    #[test]
    fn http_provider_unreachable() {
        // Bind then drop to get a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = HttpProvider::new(format!("http://127.0.0.1:{port}/route"))
            .route(&pose(0.0, 0.0, 0.0), Vec2::new(10.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::ProviderUnreachable(_)));
    }

    #[test]
    fn projection_examples() {
        let r = l_shape();
        let on_vertex = r.project_pose(&pose(50.0, 0.0, PI / 2.0));
        assert_eq!(on_vertex.s, 50.0);
        assert_eq!(on_vertex.cross_track, 0.0);

        let left = r.project_pose(&pose(20.0, 3.0, 0.0));
        assert!((left.s - 20.0).abs() < 1e-12);
        assert!((left.cross_track - 3.0).abs() < 1e-12);

        let right = r.project_pose(&pose(20.0, -3.0, 0.0));
        assert!((right.cross_track + 3.0).abs() < 1e-12);
    }

    #[test]
    fn projection_near_corner_matches_dense_sampling() {
        let r = l_shape();
        for p in [
            Vec2::new(47.0, 2.5),
            Vec2::new(53.0, -1.0),
            Vec2::new(49.0, 4.0),
            Vec2::new(55.0, 10.0),
        ] {
            let n = 10_000;
            let brute = (0..=n)
                .map(|k| r.point_at(r.length() * k as f64 / n as f64))
                .map(|q| q.distance(p))
                .fold(f64::INFINITY, f64::min);
            let proj = r.project_point(p);
            assert!(
                (proj.distance - brute).abs() < 1e-3,
                "{p:?}: {} vs {brute}",
                proj.distance
            );
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let r = l_shape();
        for p in [Vec2::new(10.0, 7.0), Vec2::new(60.0, 12.0), Vec2::new(-5.0, 1.0)] {
            let first = r.project_point(p);
            let again = r.project_point(first.point);
            assert!((first.s - again.s).abs() < 1e-12);
        }
    }

    #[test]
    fn s_non_decreasing_along_forward_drive() {
        let r = l_shape();
        let mut prev = -1.0;
        for k in 0..=80 {
            let s = k as f64;
            let p = r.point_at(s) + Vec2::new(0.3, -0.2);
            let fix = r.project_point(p);
            assert!(fix.s >= prev);
            prev = fix.s;
        }
    }

    #[test]
    fn deviation_examples() {
        let limits = DeviationThresholds::default();
        let fix = |c: f64, h_deg: f64| RouteFix {
            s: 0.0,
            cross_track: c,
            heading_error: h_deg.to_radians(),
        };
        assert_eq!(check_deviation(&fix(0.5, 2.0), &limits), RouteStatus::OnRoute);
        assert_eq!(check_deviation(&fix(25.0, 0.0), &limits), RouteStatus::Deviated);

        // Driving the wrong way down the same road.
        let r = l_shape();
        let u_turn = r.project_pose(&pose(20.0, 5.0, PI / 2.0));
        assert!((u_turn.cross_track - 5.0).abs() < 1e-12);
        assert_eq!(check_deviation(&u_turn, &limits), RouteStatus::Deviated);
    }

    #[test]
    fn serialization_is_deterministic() {
        let a = StraightLineProvider
            .route(&pose(1.0, 2.0, 0.0), Vec2::new(300.5, 2.0))
            .unwrap();
        let b = StraightLineProvider
            .route(&pose(1.0, 2.0, 0.0), Vec2::new(300.5, 2.0))
            .unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(RoutePath::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn manager_reroutes_on_deviation() {
        use crate::ego_state::EgoInit;
        let start = pose(0.0, 0.0, 0.0);
        let mut mgr = RouteManager::new(
            Box::new(StraightLineProvider),
            &start,
            Vec2::new(200.0, 0.0),
            DeviationThresholds::default(),
        )
        .unwrap();
        let mut ego = VehicleState::from_init(&EgoInit::default());
        ego.pose = pose(50.0, 30.0, 0.0);
        let fix = mgr.update(&ego).unwrap();
        assert_eq!(mgr.reroutes(), 1);
        assert!(fix.cross_track.abs() < 1e-9);
        assert_eq!(mgr.route().vertices()[0], Vec2::new(50.0, 30.0));
    }

    #[test]
    fn time_to_arc_floor() {
        assert_eq!(time_to_arc(20.0, 4.0, 0.5), Some(5.0));
        assert_eq!(time_to_arc(20.0, 0.3, 0.5), None);
    }
}
