//! Brick assembly guidance.
//!
//! A plan of brick placements is compiled into layer-ordered steps. Each
//! frame, 2D detections (simulated or supplied by an external detector) are
//! lifted onto the table plane, associated with tracks, and checked against
//! the active step's target; confirmed placements advance the sequence.

pub use nalgebra;

pub mod assign;
pub mod association;
pub mod geometry;
pub mod guidance;
pub mod plan;
pub mod protocol;
pub mod scene;
pub mod script;
pub mod session;
pub mod workspace;

pub use assign::{assign, MatchResult};
pub use association::{match_frame, step_complete, CompletionConfig, Expectation, Track, TrackSet};
pub use geometry::{
    bbox_to_groundbox, pixel_to_plane, plane_homography, project_point, BBox2D, CameraModel, GeometryError,
    GroundBox3D, Homography, Pose,
};
pub use guidance::{start_session, EventKind, GuidanceEvent, GuidanceState, Highlights, StepStatus};
pub use plan::{
    compile_steps, parse_plan, serialize_plan, validate_plan, AssemblyPlan, BrickType, GridSpec, Placement, PlanError,
    Rotation, Step, ValidationReport, Violation,
};
pub use scene::{init_scene, Action, NoiseConfig, PartStatus, SceneState};
pub use session::{simulate, Mode, Session, SessionConfig, SessionError};
pub use workspace::{LayoutConfig, Workspace};
