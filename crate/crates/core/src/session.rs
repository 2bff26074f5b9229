//! The authoritative per-session loop: scene, tracks and guidance advanced
//! one tick at a time. Transport-free; the server and the headless simulator
//! both drive it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{CompletionConfig, TrackSet};
use crate::geometry::{bbox_to_groundbox, BBox2D, CameraModel, GeometryError, GroundBox3D, Pose};
use crate::guidance::{start_session, EventKind, GuidanceError, GuidanceEvent, GuidanceState, Highlights, StepStatus};
use crate::plan::{AssemblyPlan, GridSpec, Placement};
use crate::scene::{init_scene, Action, NoiseConfig, SceneError, ScenePart, SceneState};
use crate::script::Schedule;
use crate::workspace::{LayoutConfig, Workspace};

pub type ClientId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sim,
    External,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Mode::Sim),
            "external" => Ok(Mode::External),
            other => Err(format!("unknown mode `{other}` (expected sim or external)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub plan: AssemblyPlan,
    pub mode: Mode,
    pub tick_hz: u32,
    pub camera: CameraModel,
    pub pose: Pose,
    pub noise: NoiseConfig,
    pub completion: CompletionConfig,
    pub layout: LayoutConfig,
}

/// Default overhead camera: 1280x960, 60 degree horizontal field of view,
/// 0.8 m above the table, seeing both halves of the default layout.
pub fn default_camera() -> (CameraModel, Pose) {
    (
        CameraModel::new(1280, 960, 60f64.to_radians()).expect("valid camera"),
        Pose::top_down(0.1, 0.0, 0.8),
    )
}

impl SessionConfig {
    pub fn new(plan: AssemblyPlan) -> Self {
        let (camera, pose) = default_camera();
        let completion = CompletionConfig::for_grid(&plan.grid);
        Self {
            plan,
            mode: Mode::Sim,
            tick_hz: 15,
            camera,
            pose,
            noise: NoiseConfig::zero(0),
            completion,
            layout: LayoutConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !(1..=120).contains(&self.tick_hz) {
            return Err(SessionError::Config(format!(
                "tick rate {} Hz outside [1, 120]",
                self.tick_hz
            )));
        }
        self.camera.validate()?;
        self.noise.validate()?;
        self.completion.validate().map_err(SessionError::Config)?;
        self.layout.validate().map_err(SceneError::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedAction {
    pub client: Option<ClientId>,
    #[serde(flatten)]
    pub action: Action,
    pub error: Option<String>,
}

/// What happened during one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub tick: u64,
    pub actions: Vec<AppliedAction>,
    /// Whether a detection frame was processed this tick.
    pub observed: bool,
    pub detections: Vec<BBox2D>,
    pub events: Vec<GuidanceEvent>,
    pub current_step: Option<usize>,
    pub completion_streak: u32,
    pub tracks: usize,
    #[serde(skip)]
    pub highlights: Option<Highlights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub index: usize,
    pub type_id: String,
    pub x: i32,
    pub y: i32,
    pub layer: u32,
    pub rot: u32,
}

impl StepView {
    fn new(index: usize, p: &Placement) -> Self {
        Self {
            index,
            type_id: p.type_id.clone(),
            x: p.cell_x,
            y: p.cell_y,
            layer: p.layer,
            rot: p.rotation.degrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub frame: u64,
    pub mode: Mode,
    pub plan: String,
    pub current_step: Option<usize>,
    pub done: bool,
    pub step_statuses: Vec<StepStatus>,
    pub steps: Vec<StepView>,
    pub parts: Vec<ScenePart>,
    pub grid: GridSpec,
    pub layout: LayoutConfig,
}

pub struct Session {
    config: SessionConfig,
    scene: SceneState,
    tracks: TrackSet,
    guidance: GuidanceState,
    pending_actions: VecDeque<(Option<ClientId>, Action)>,
    pending_frame: Option<(u64, Vec<BBox2D>)>,
    last_frame: Option<u64>,
    tick: u64,
    event_log: Vec<GuidanceEvent>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let scene = init_scene(&config.plan, config.layout)?;
        let workspace = Workspace::new(config.plan.grid, config.layout).with_view(config.camera, config.pose);
        let (guidance, events) = start_session(&config.plan, workspace)?;
        Ok(Self {
            config,
            scene,
            tracks: TrackSet::new(),
            guidance,
            pending_actions: VecDeque::new(),
            pending_frame: None,
            last_frame: None,
            tick: 0,
            event_log: events,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.config.plan.name
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn guidance(&self) -> &GuidanceState {
        &self.guidance
    }

    pub fn tracks(&self) -> &TrackSet {
        &self.tracks
    }

    /// Every event emitted so far, starting with the session-start events.
    pub fn event_log(&self) -> &[GuidanceEvent] {
        &self.event_log
    }

    pub fn is_done(&self) -> bool {
        self.guidance.is_done()
    }

    /// Queues an action for the next tick boundary (FIFO).
    pub fn enqueue_action(&mut self, client: Option<ClientId>, action: Action) {
        self.pending_actions.push_back((client, action));
    }

    /// Replaces the pending detection frame. Frames not newer than the last
    /// processed one are dropped; returns whether the frame was kept.
    pub fn submit_detections(&mut self, frame: u64, boxes: Vec<BBox2D>) -> bool {
        if self.last_frame.is_some_and(|last| frame <= last) {
            return false;
        }
        self.pending_frame = Some((frame, boxes));
        true
    }

    pub fn pending_frame(&self) -> Option<u64> {
        self.pending_frame.as_ref().map(|(f, _)| *f)
    }

    fn lift(&self, boxes: &[BBox2D]) -> Vec<GroundBox3D> {
        let plan = &self.config.plan;
        boxes
            .iter()
            .filter_map(|b| {
                let brick = plan.brick(&b.class_id)?;
                let height = brick.height_layers as f64 * plan.grid.layer_height_m();
                bbox_to_groundbox(&self.config.camera, &self.config.pose, b, height).ok()
            })
            .collect()
    }

    pub fn tick(&mut self) -> TickReport {
        let frame = self.tick;
        let mut actions = Vec::new();
        while let Some((client, action)) = self.pending_actions.pop_front() {
            let error = match self.config.mode {
                Mode::Sim => self.scene.apply_action(&action).err().map(|e| e.to_string()),
                Mode::External => Some("actions are not accepted in external mode".to_string()),
            };
            actions.push(AppliedAction { client, action, error });
        }

        let detections = match self.config.mode {
            Mode::Sim => Some(
                self.scene
                    .render_detections(&self.config.camera, &self.config.pose, &self.config.noise),
            ),
            Mode::External => self.pending_frame.take().map(|(f, boxes)| {
                self.last_frame = Some(f);
                boxes
            }),
        };

        let observed = detections.is_some();
        let detections = detections.unwrap_or_default();
        let mut events = Vec::new();
        if observed {
            let lifted = self.lift(&detections);
            let supply = self.config.layout.supply_region();
            self.tracks
                .observe(&lifted, frame, &self.config.completion, Some(&supply));
            events = self
                .guidance
                .on_frame(&self.tracks.tracks, &self.config.completion, frame);
            self.event_log.extend(events.iter().cloned());
        }

        let highlights = self.guidance.highlights(&self.tracks.tracks).ok();
        self.scene.advance_frame();
        self.tick += 1;
        TickReport {
            tick: frame,
            actions,
            observed,
            detections,
            events,
            current_step: self.guidance.current,
            completion_streak: self.guidance.completion_streak,
            tracks: self.tracks.tracks.len(),
            highlights,
        }
    }

    pub fn highlights(&self) -> Option<Highlights> {
        self.guidance.highlights(&self.tracks.tracks).ok()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            frame: self.tick,
            mode: self.config.mode,
            plan: self.config.plan.name.clone(),
            current_step: self.guidance.current,
            done: self.guidance.is_done(),
            step_statuses: self.guidance.step_status.clone(),
            steps: self
                .guidance
                .steps
                .iter()
                .map(|s| StepView::new(s.index, &s.placement))
                .collect(),
            parts: self.scene.parts.clone(),
            grid: self.config.plan.grid,
            layout: self.config.layout,
        }
    }
}

/// Result of a headless run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub events: Vec<GuidanceEvent>,
    /// One JSON object per tick.
    pub transcript: Vec<String>,
    pub completed: bool,
    /// Script actions the scene refused, as `(tick, message)`.
    pub action_errors: Vec<(u64, String)>,
}

impl SimulationOutcome {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Runs a scripted session to the end of its schedule.
pub fn simulate(config: SessionConfig, schedule: &Schedule) -> Result<SimulationOutcome, SessionError> {
    let mut session = Session::new(config)?;
    let mut transcript = Vec::with_capacity(schedule.total_ticks as usize);
    let mut action_errors = Vec::new();
    let mut cursor = 0;
    for tick in 0..schedule.total_ticks {
        while let Some((at, action)) = schedule.actions.get(cursor) {
            if *at != tick {
                break;
            }
            session.enqueue_action(None, action.clone());
            cursor += 1;
        }
        let report = session.tick();
        for a in &report.actions {
            if let Some(e) = &a.error {
                action_errors.push((tick, e.clone()));
            }
        }
        transcript.push(serde_json::to_string(&report).expect("tick report serializes"));
    }
    // Actions scheduled after the last tick never get a boundary to apply at.
    for (tick, _) in &schedule.actions[cursor..] {
        action_errors.push((*tick, "action scheduled after the final tick".to_string()));
    }
    Ok(SimulationOutcome {
        events: session.event_log().to_vec(),
        transcript,
        completed: session.is_done(),
        action_errors,
    })
}
