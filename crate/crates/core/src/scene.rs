//! Simulated workspace and a seeded stand-in for the trained detector.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox2D, CameraModel, GroundBox3D, Pose};
use crate::plan::{compile_steps, AssemblyPlan, BrickType, Footprint, GridSpec, Placement, PlanError, Rotation, Step};
use crate::workspace::{project_top_face, LayoutConfig, LayoutError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartStatus {
    InSupply,
    InHand,
    Placed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePose {
    pub x_m: f64,
    pub y_m: f64,
    pub yaw: Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePart {
    pub instance_id: u32,
    pub type_id: String,
    /// Footprint center on the table.
    pub plane_pose: PlanePose,
    pub status: PartStatus,
    /// Step whose placement this part now fills exactly, if any.
    pub placed_step: Option<usize>,
    /// Cell placement while `status` is `Placed`.
    pub placement: Option<Placement>,
    pub supply_slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Pick {
        id: u32,
    },
    Place {
        id: u32,
        x: i32,
        y: i32,
        layer: u32,
        rot: Rotation,
    },
    Remove {
        id: u32,
    },
}

impl Action {
    pub fn instance_id(&self) -> u32 {
        match *self {
            Action::Pick { id } | Action::Place { id, .. } | Action::Remove { id } => id,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Action::Pick { .. } => "pick",
            Action::Place { .. } => "place",
            Action::Remove { .. } => "remove",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("part {instance_id} is {from:?}; cannot {action}")]
    IllegalTransition {
        instance_id: u32,
        from: PartStatus,
        action: &'static str,
    },
    #[error("no part with instance id {0}")]
    UnknownInstance(u32),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
}

/// Imperfections applied to the noise-free detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub jitter_sigma_px: f64,
    pub miss_prob: f64,
    /// Expected spurious boxes per frame.
    pub false_positive_rate: f64,
    pub class_confusion_prob: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn zero(seed: u64) -> Self {
        Self {
            jitter_sigma_px: 0.0,
            miss_prob: 0.0,
            false_positive_rate: 0.0,
            class_confusion_prob: 0.0,
            seed,
        }
    }

    pub fn default_preset(seed: u64) -> Self {
        Self {
            jitter_sigma_px: 2.0,
            miss_prob: 0.05,
            false_positive_rate: 0.02,
            class_confusion_prob: 0.01,
            seed,
        }
    }

    pub fn heavy(seed: u64) -> Self {
        Self {
            jitter_sigma_px: 4.0,
            miss_prob: 0.15,
            false_positive_rate: 0.5,
            class_confusion_prob: 0.05,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "zero" => Some(Self::zero(seed)),
            "default" => Some(Self::default_preset(seed)),
            "heavy" => Some(Self::heavy(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidNoise(m.to_string()));
        if !(self.jitter_sigma_px.is_finite() && self.jitter_sigma_px >= 0.0) {
            return bad("jitter sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return bad("miss probability must be in [0, 1]");
        }
        if !(self.false_positive_rate.is_finite() && self.false_positive_rate >= 0.0) {
            return bad("false positive rate must be >= 0");
        }
        if !(0.0..1.0).contains(&self.class_confusion_prob) {
            return bad("class confusion probability must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub parts: Vec<ScenePart>,
    pub layout: LayoutConfig,
    pub grid: GridSpec,
    pub catalog: Vec<BrickType>,
    /// Compiled step placements, used to recognize exact target fills.
    pub targets: Vec<Placement>,
    pub frame_counter: u64,
}

fn brick<'a>(catalog: &'a [BrickType], type_id: &str) -> &'a BrickType {
    catalog
        .iter()
        .find(|b| b.type_id == type_id)
        .unwrap_or_else(|| panic!("type `{type_id}` missing from catalog"))
}

/// Lays out one supply part per compiled step, in step order.
pub fn init_scene(plan: &AssemblyPlan, layout: LayoutConfig) -> Result<SceneState, SceneError> {
    layout.validate()?;
    let steps = compile_steps(plan)?;
    if steps.len() > layout.slot_count() {
        return Err(LayoutError::Overflow(format!(
            "{} parts but only {} supply slots",
            steps.len(),
            layout.slot_count()
        ))
        .into());
    }
    let pitch = plan.grid.pitch_m();
    for step in &steps {
        let b = plan.brick_of(&step.placement);
        let longest = b.width_studs.max(b.depth_studs) as f64 * pitch;
        if longest >= layout.supply_spacing_m {
            return Err(LayoutError::Overflow(format!(
                "brick `{}` ({longest} m) does not fit a {} m supply slot",
                b.type_id, layout.supply_spacing_m
            ))
            .into());
        }
    }
    if let Some(build) = layout.build_region(plan) {
        if build.max.0 >= 0.0 || build.intersects(&layout.supply_region()) {
            return Err(LayoutError::Overflow("build area reaches into the supply half".into()).into());
        }
    }

    let parts = steps
        .iter()
        .map(|step| {
            let (x_m, y_m) = layout.supply_slot(step.index);
            ScenePart {
                instance_id: step.index as u32,
                type_id: step.placement.type_id.clone(),
                plane_pose: PlanePose {
                    x_m,
                    y_m,
                    yaw: Rotation::R0,
                },
                status: PartStatus::InSupply,
                placed_step: None,
                placement: None,
                supply_slot: step.index,
            }
        })
        .collect();

    Ok(SceneState {
        parts,
        layout,
        grid: plan.grid,
        catalog: plan.catalog.clone(),
        targets: steps.into_iter().map(|s: Step| s.placement).collect(),
        frame_counter: 0,
    })
}

impl SceneState {
    pub fn part(&self, instance_id: u32) -> Option<&ScenePart> {
        self.parts.iter().find(|p| p.instance_id == instance_id)
    }

    pub fn advance_frame(&mut self) {
        self.frame_counter += 1;
    }

    /// Applies a user action. The state is left untouched on error.
    pub fn apply_action(&mut self, action: &Action) -> Result<(), SceneError> {
        let id = action.instance_id();
        let idx = self
            .parts
            .iter()
            .position(|p| p.instance_id == id)
            .ok_or(SceneError::UnknownInstance(id))?;
        let from = self.parts[idx].status;
        let illegal = || SceneError::IllegalTransition {
            instance_id: id,
            from,
            action: action.name(),
        };

        match *action {
            Action::Pick { .. } => {
                if from != PartStatus::InSupply {
                    return Err(illegal());
                }
                self.parts[idx].status = PartStatus::InHand;
            }
            Action::Place { x, y, layer, rot, .. } => {
                if from != PartStatus::InHand {
                    return Err(illegal());
                }
                let placement = Placement {
                    type_id: self.parts[idx].type_id.clone(),
                    cell_x: x,
                    cell_y: y,
                    layer,
                    rotation: rot,
                };
                let b = brick(&self.catalog, &placement.type_id);
                let fp = placement.footprint(b);
                let (cx, cy) = fp.center();
                let (x_m, y_m) = self.layout.cell_to_world(&self.grid, cx, cy);
                let placed_step = self
                    .targets
                    .iter()
                    .position(|t| t.type_id == placement.type_id && t.layer == layer && t.footprint(b) == fp);
                let part = &mut self.parts[idx];
                part.plane_pose = PlanePose { x_m, y_m, yaw: rot };
                part.status = PartStatus::Placed;
                part.placed_step = placed_step;
                part.placement = Some(placement);
            }
            Action::Remove { .. } => {
                if from != PartStatus::Placed {
                    return Err(illegal());
                }
                let (x_m, y_m) = self.layout.supply_slot(self.parts[idx].supply_slot);
                let part = &mut self.parts[idx];
                part.plane_pose = PlanePose {
                    x_m,
                    y_m,
                    yaw: Rotation::R0,
                };
                part.status = PartStatus::InSupply;
                part.placed_step = None;
                part.placement = None;
            }
        }
        Ok(())
    }

    /// Physical box of a visible part and the height of its top face, or
    /// `None` for a part in hand.
    pub fn part_box(&self, part: &ScenePart) -> Option<(GroundBox3D, f64)> {
        let b = brick(&self.catalog, &part.type_id);
        let height = b.height_layers as f64 * self.grid.layer_height_m();
        let pitch = self.grid.pitch_m();
        match part.status {
            PartStatus::InHand => None,
            PartStatus::InSupply => {
                let fp = Footprint {
                    cell_x: 0,
                    cell_y: 0,
                    size_x: b.width_studs,
                    size_y: b.depth_studs,
                };
                let half = Vector2::new(fp.size_x as f64 * pitch / 2.0, fp.size_y as f64 * pitch / 2.0);
                let c = Vector2::new(part.plane_pose.x_m, part.plane_pose.y_m);
                Some((
                    GroundBox3D::from_bounds(c - half, c + half, height, &part.type_id),
                    height,
                ))
            }
            PartStatus::Placed => {
                let placement = part.placement.as_ref()?;
                let r = self.layout.footprint_region(&self.grid, &placement.footprint(b));
                let bx = GroundBox3D::from_bounds(
                    Vector2::new(r.min.0, r.min.1),
                    Vector2::new(r.max.0, r.max.1),
                    height,
                    &part.type_id,
                );
                let top = placement.layer as f64 * self.grid.layer_height_m() + height;
                Some((bx, top))
            }
        }
    }

    /// Noisy detections for the current frame. Deterministic in
    /// `(scene, camera, pose, noise, frame_counter)`.
    pub fn render_detections(&self, camera: &CameraModel, pose: &Pose, noise: &NoiseConfig) -> Vec<BBox2D> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(self.frame_counter);
        let jitter =
            (noise.jitter_sigma_px > 0.0).then(|| Normal::new(0.0, noise.jitter_sigma_px).expect("finite sigma"));

        let mut boxes = Vec::new();
        for part in &self.parts {
            let Some((footprint, top_z)) = self.part_box(part) else {
                continue;
            };
            let Ok(mut b) = project_top_face(camera, pose, &footprint, top_z, &part.type_id, 1.0) else {
                continue;
            };
            if let Some(n) = &jitter {
                b.x_min += n.sample(&mut rng);
                b.y_min += n.sample(&mut rng);
                b.x_max += n.sample(&mut rng);
                b.y_max += n.sample(&mut rng);
            }
            let missed = rng.random::<f64>() < noise.miss_prob;
            let confused = rng.random::<f64>() < noise.class_confusion_prob && self.catalog.len() > 1;
            if confused {
                let others: Vec<&BrickType> = self.catalog.iter().filter(|t| t.type_id != part.type_id).collect();
                b.class_id = others[rng.random_range(0..others.len())].type_id.clone();
            }
            b.confidence = 1.0 - 0.05 * rng.random::<f64>();
            if missed || b.x_min >= b.x_max || b.y_min >= b.y_max || !b.intersects_image(camera) {
                continue;
            }
            boxes.push(b);
        }

        if noise.false_positive_rate > 0.0 {
            let count = Poisson::new(noise.false_positive_rate)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0);
            let (w, h) = (camera.image_width_px as f64, camera.image_height_px as f64);
            for _ in 0..count {
                let bw = rng.random_range(12.0..120.0f64).min(w);
                let bh = rng.random_range(12.0..120.0f64).min(h);
                let x0 = rng.random_range(0.0..=(w - bw));
                let y0 = rng.random_range(0.0..=(h - bh));
                let cls = &self.catalog[rng.random_range(0..self.catalog.len())].type_id;
                let conf = rng.random_range(0.3..0.9);
                if let Ok(b) = BBox2D::new(x0, y0, x0 + bw, y0 + bh, cls, conf) {
                    boxes.push(b);
                }
            }
        }
        boxes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;

    fn three_step() -> AssemblyPlan {
        parse_plan("PLAN t\nPART 2x4 0 0 0 0\nPART 1x2 2 0 0 0\nPART 1x1 0 0 1 0\n").unwrap()
    }

    #[test]
    fn empty_plan_has_no_parts() {
        let scene = init_scene(&AssemblyPlan::new("e"), LayoutConfig::default()).unwrap();
        assert!(scene.parts.is_empty());
        assert_eq!(scene.frame_counter, 0);
    }

    #[test]
    fn supply_layout_follows_step_order() {
        let layout = LayoutConfig::default();
        let scene = init_scene(&three_step(), layout).unwrap();
        assert_eq!(scene.parts.len(), 3);
        for (k, part) in scene.parts.iter().enumerate() {
            assert_eq!(part.status, PartStatus::InSupply);
            let expect = (layout.supply_origin.0 + k as f64 * 0.05, layout.supply_origin.1);
            assert!((part.plane_pose.x_m - expect.0).abs() < 1e-12);
            assert!((part.plane_pose.y_m - expect.1).abs() < 1e-12);
        }
        assert_eq!(scene.parts[2].type_id, "1x1");
    }

    #[test]
    fn overflow_is_detected() {
        let layout = LayoutConfig {
            supply_columns: 1,
            supply_rows: 2,
            ..LayoutConfig::default()
        };
        assert!(matches!(
            init_scene(&three_step(), layout),
            Err(SceneError::Layout(LayoutError::Overflow(_)))
        ));
        let tight = LayoutConfig {
            supply_spacing_m: 0.03,
            ..LayoutConfig::default()
        };
        assert!(matches!(init_scene(&three_step(), tight), Err(SceneError::Layout(_))));
    }

    #[test]
    fn pick_place_marks_step() {
        let mut scene = init_scene(&three_step(), LayoutConfig::default()).unwrap();
        scene.apply_action(&Action::Pick { id: 0 }).unwrap();
        assert_eq!(scene.part(0).unwrap().status, PartStatus::InHand);
        scene
            .apply_action(&Action::Place {
                id: 0,
                x: 0,
                y: 0,
                layer: 0,
                rot: Rotation::R180,
            })
            .unwrap();
        let p = scene.part(0).unwrap();
        assert_eq!(p.status, PartStatus::Placed);
        assert_eq!(p.placed_step, Some(0));
        assert!((p.plane_pose.x_m - (-0.16 + 0.008)).abs() < 1e-12);
    }

    #[test]
    fn illegal_transitions_leave_state_alone() {
        let mut scene = init_scene(&three_step(), LayoutConfig::default()).unwrap();
        let before = scene.clone();
        let err = scene
            .apply_action(&Action::Place {
                id: 1,
                x: 0,
                y: 0,
                layer: 0,
                rot: Rotation::R0,
            })
            .unwrap_err();
        assert!(matches!(
            err,
            SceneError::IllegalTransition {
                instance_id: 1,
                from: PartStatus::InSupply,
                ..
            }
        ));
        assert!(scene.apply_action(&Action::Remove { id: 1 }).is_err());
        assert_eq!(
            scene.apply_action(&Action::Pick { id: 9 }),
            Err(SceneError::UnknownInstance(9))
        );
        assert_eq!(scene, before);
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseConfig::default_preset(1).validate().is_ok());
        assert!(NoiseConfig {
            miss_prob: 1.0,
            ..NoiseConfig::zero(0)
        }
        .validate()
        .is_ok());
        assert!(NoiseConfig {
            miss_prob: 1.5,
            ..NoiseConfig::zero(0)
        }
        .validate()
        .is_err());
        assert!(NoiseConfig {
            class_confusion_prob: 1.0,
            ..NoiseConfig::zero(0)
        }
        .validate()
        .is_err());
        assert!(NoiseConfig {
            jitter_sigma_px: -1.0,
            ..NoiseConfig::zero(0)
        }
        .validate()
        .is_err());
        assert!(NoiseConfig::preset("bogus", 0).is_none());
    }
}
