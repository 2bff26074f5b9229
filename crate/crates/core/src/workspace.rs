//! Table layout: the supply area on the right, the build area on the left,
//! and the mapping from stud cells to workspace meters.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bbox_to_groundbox, project_point, BBox2D, CameraModel, GeometryError, GroundBox3D, Pose};
use crate::plan::{AssemblyPlan, Footprint, GridSpec, Placement, Step};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("layout overflow: {0}")]
    Overflow(String),
}

/// Where loose parts wait and where the assembly grows.
///
/// Supply slot `k` sits at `supply_origin + (k % columns, k / columns) * spacing`.
/// `build_origin` is the workspace position of the minimum corner of cell `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub supply_origin: (f64, f64),
    pub build_origin: (f64, f64),
    pub supply_spacing_m: f64,
    pub supply_columns: u32,
    pub supply_rows: u32,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            supply_origin: (0.04, -0.20),
            build_origin: (-0.16, -0.03),
            supply_spacing_m: 0.05,
            supply_columns: 8,
            supply_rows: 9,
        }
    }
}

/// Axis-aligned rectangle on the table, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min.0 && x <= self.max.0 && y >= self.min.1 && y <= self.max.1
    }

    pub fn intersects(&self, other: &Region) -> bool {
        self.min.0 < other.max.0 && other.min.0 < self.max.0 && self.min.1 < other.max.1 && other.min.1 < self.max.1
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let s = self.supply_spacing_m;
        if !(s.is_finite() && s > 0.0) {
            return Err(LayoutError::Invalid(format!("supply spacing {s} must be positive")));
        }
        if self.supply_columns == 0 || self.supply_rows == 0 {
            return Err(LayoutError::Invalid("supply grid needs at least one slot".into()));
        }
        if self.supply_region().min.0 <= 0.0 {
            return Err(LayoutError::Invalid(
                "supply area must lie in the right half (x > 0)".into(),
            ));
        }
        if self.build_origin.0 >= 0.0 {
            return Err(LayoutError::Invalid(
                "build origin must lie in the left half (x < 0)".into(),
            ));
        }
        Ok(())
    }

    pub fn slot_count(&self) -> usize {
        (self.supply_columns * self.supply_rows) as usize
    }

    pub fn supply_slot(&self, k: usize) -> (f64, f64) {
        let cols = self.supply_columns as usize;
        let s = self.supply_spacing_m;
        (
            self.supply_origin.0 + (k % cols) as f64 * s,
            self.supply_origin.1 + (k / cols) as f64 * s,
        )
    }

    /// Rectangle covering every slot cell (slot center +/- spacing / 2).
    pub fn supply_region(&self) -> Region {
        let s = self.supply_spacing_m;
        Region {
            min: (self.supply_origin.0 - s / 2.0, self.supply_origin.1 - s / 2.0),
            max: (
                self.supply_origin.0 + (self.supply_columns as f64 - 0.5) * s,
                self.supply_origin.1 + (self.supply_rows as f64 - 0.5) * s,
            ),
        }
    }

    /// Workspace coordinates of a stud-unit position in the build area.
    pub fn cell_to_world(&self, grid: &GridSpec, x_studs: f64, y_studs: f64) -> (f64, f64) {
        (
            self.build_origin.0 + x_studs * grid.pitch_m(),
            self.build_origin.1 + y_studs * grid.pitch_m(),
        )
    }

    pub fn footprint_region(&self, grid: &GridSpec, fp: &Footprint) -> Region {
        Region {
            min: self.cell_to_world(grid, fp.cell_x as f64, fp.cell_y as f64),
            max: self.cell_to_world(
                grid,
                (fp.cell_x + fp.size_x as i32) as f64,
                (fp.cell_y + fp.size_y as i32) as f64,
            ),
        }
    }

    /// Bounding rectangle of every placement of the plan.
    pub fn build_region(&self, plan: &AssemblyPlan) -> Option<Region> {
        plan.placements
            .iter()
            .map(|p| self.footprint_region(&plan.grid, &plan.footprint(p)))
            .reduce(|a, b| Region {
                min: (a.min.0.min(b.min.0), a.min.1.min(b.min.1)),
                max: (a.max.0.max(b.max.0), a.max.1.max(b.max.1)),
            })
    }
}

/// Everything needed to turn steps into boxes in the workspace frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub grid: GridSpec,
    pub layout: LayoutConfig,
    pub view: Option<(CameraModel, Pose)>,
}

impl Workspace {
    pub fn new(grid: GridSpec, layout: LayoutConfig) -> Self {
        Self {
            grid,
            layout,
            view: None,
        }
    }

    pub fn with_view(mut self, camera: CameraModel, pose: Pose) -> Self {
        self.view = Some((camera, pose));
        self
    }

    /// Physical footprint of the placement, extruded to the brick height.
    pub fn placement_box(&self, plan: &AssemblyPlan, placement: &Placement) -> GroundBox3D {
        let brick = plan.brick_of(placement);
        let r = self.layout.footprint_region(&self.grid, &placement.footprint(brick));
        GroundBox3D::from_bounds(
            Vector2::new(r.min.0, r.min.1),
            Vector2::new(r.max.0, r.max.1),
            brick.height_layers as f64 * self.grid.layer_height_m(),
            &placement.type_id,
        )
    }

    pub fn target_box(&self, plan: &AssemblyPlan, step: &Step) -> GroundBox3D {
        self.placement_box(plan, &step.placement)
    }

    /// Where the placement's top face appears once a detection of it is lifted
    /// onto `z = 0`. Differs from [`Self::placement_box`] by parallax for raised
    /// faces. Without a camera this is the physical footprint.
    pub fn apparent_box(&self, plan: &AssemblyPlan, placement: &Placement) -> Result<GroundBox3D, GeometryError> {
        let physical = self.placement_box(plan, placement);
        let Some((camera, pose)) = &self.view else {
            return Ok(physical);
        };
        let top = (placement.layer as f64) * self.grid.layer_height_m() + physical.height;
        let bbox = project_top_face(camera, pose, &physical, top, &placement.type_id, 1.0)?;
        bbox_to_groundbox(camera, pose, &bbox, physical.height)
    }
}

/// Pixel bounding box of the horizontal rectangle `footprint` at height `top_z`.
pub fn project_top_face(
    camera: &CameraModel,
    pose: &Pose,
    footprint: &GroundBox3D,
    top_z: f64,
    class_id: &str,
    confidence: f64,
) -> Result<BBox2D, GeometryError> {
    let (lo, hi) = (footprint.min(), footprint.max());
    let corners = [(lo.x, lo.y), (hi.x, lo.y), (hi.x, hi.y), (lo.x, hi.y)];
    let mut pixels = [Vector2::zeros(); 4];
    for (px, (x, y)) in pixels.iter_mut().zip(corners) {
        *px = project_point(camera, pose, &Vector3::new(x, y, top_z))?;
    }
    BBox2D::enclosing(&pixels, class_id, confidence)
}
