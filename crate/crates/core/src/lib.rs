//! Pedestrian early-warning engine.
//!
//! Tracks camera detections in a ground-fixed frame, fits linear motion per
//! axis, and warns the driver when a predicted path crosses the route corridor
//! shortly before the vehicle gets there.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod conflict;
pub mod ego_state;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod logs;
pub mod pipeline;
pub mod plot;
pub mod prediction;
pub mod route;
pub mod scenario;
pub mod tracking;

pub use config::{RouteConfig, RunConfig};
pub use conflict::{ConflictConfig, Direction, Severity, Warning};
pub use ego_state::{EgoNoise, EgoRecord, VehicleState};
pub use error::{Error, Result};
pub use eval::{aggregate, evaluate, AggregateReport, EvalReport};
pub use geometry::{Detection, FrameSet, ObjectClass, Pose2, StampedPose, Timestamp, Vec2, CAMERA_PERIOD};
pub use logs::{TruthRecord, WarningRecord};
pub use pipeline::{run_pipeline, run_pipeline_with_provider, PipelineOutput, PipelineSummary};
pub use prediction::{PredictionConfig, TrajectoryFit};
pub use route::{ProviderKind, RouteFix, RoutePath};
pub use scenario::{presets, CameraModel, GeneratedLogs, Scenario};
pub use tracking::{TrackStatus, TrackingConfig};
