//! Brick catalog, assembly plans and the layer-ordered step compiler.

mod parse;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_plan, parse_plan_unchecked, serialize_plan};

/// One entry of the brick catalog. Footprint is given at rotation 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrickType {
    pub type_id: String,
    pub name: String,
    pub width_studs: u32,
    pub depth_studs: u32,
    pub height_layers: u32,
}

impl BrickType {
    pub fn new(type_id: &str, width_studs: u32, depth_studs: u32, height_layers: u32) -> Self {
        Self {
            type_id: type_id.to_string(),
            name: format!("brick {type_id}"),
            width_studs,
            depth_studs,
            height_layers,
        }
    }
}

/// The eight primitive bricks used when a plan declares no `BRICK` lines.
pub fn default_catalog() -> Vec<BrickType> {
    [
        ("1x1", 1, 1),
        ("1x2", 1, 2),
        ("1x3", 1, 3),
        ("1x4", 1, 4),
        ("2x2", 2, 2),
        ("2x3", 2, 3),
        ("2x4", 2, 4),
        ("2x6", 2, 6),
    ]
    .into_iter()
    .map(|(id, w, d)| BrickType::new(id, w, d, 1))
    .collect()
}

/// Physical scale of the stud grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub pitch_mm: f64,
    pub layer_height_mm: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            pitch_mm: 8.0,
            layer_height_mm: 9.6,
        }
    }
}

impl GridSpec {
    pub fn pitch_m(&self) -> f64 {
        self.pitch_mm / 1000.0
    }

    pub fn layer_height_m(&self) -> f64 {
        self.layer_height_mm / 1000.0
    }
}

/// Quarter-turn rotation about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rotation {
    #[serde(rename = "0")]
    R0,
    #[serde(rename = "90")]
    R90,
    #[serde(rename = "180")]
    R180,
    #[serde(rename = "270")]
    R270,
}

impl Rotation {
    pub fn from_degrees(deg: i64) -> Option<Self> {
        match deg {
            0 => Some(Rotation::R0),
            90 => Some(Rotation::R90),
            180 => Some(Rotation::R180),
            270 => Some(Rotation::R270),
            _ => None,
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    /// True when the rotation swaps the width and depth axes.
    pub fn is_quarter(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub type_id: String,
    pub cell_x: i32,
    pub cell_y: i32,
    pub layer: u32,
    pub rotation: Rotation,
}

/// Footprint of a brick in studs after rotation, anchored at the minimum corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub cell_x: i32,
    pub cell_y: i32,
    pub size_x: u32,
    pub size_y: u32,
}

impl Footprint {
    pub fn cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..self.size_x as i32)
            .flat_map(move |dx| (0..self.size_y as i32).map(move |dy| (self.cell_x + dx, self.cell_y + dy)))
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.cell_x
            && y >= self.cell_y
            && x < self.cell_x + self.size_x as i32
            && y < self.cell_y + self.size_y as i32
    }

    /// Center in stud units.
    pub fn center(&self) -> (f64, f64) {
        (
            self.cell_x as f64 + self.size_x as f64 / 2.0,
            self.cell_y as f64 + self.size_y as f64 / 2.0,
        )
    }
}

impl Placement {
    pub fn footprint(&self, brick: &BrickType) -> Footprint {
        let (size_x, size_y) = if self.rotation.is_quarter() {
            (brick.depth_studs, brick.width_studs)
        } else {
            (brick.width_studs, brick.depth_studs)
        };
        Footprint {
            cell_x: self.cell_x,
            cell_y: self.cell_y,
            size_x,
            size_y,
        }
    }

    /// Every occupied `(x, y, layer)` cell of this placement.
    pub fn occupied_cells(&self, brick: &BrickType) -> Vec<(i32, i32, u32)> {
        let fp = self.footprint(brick);
        let mut out = Vec::with_capacity((fp.size_x * fp.size_y * brick.height_layers) as usize);
        for layer in self.layer..self.layer + brick.height_layers {
            out.extend(fp.cells().map(|(x, y)| (x, y, layer)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyPlan {
    pub name: String,
    pub grid: GridSpec,
    pub catalog: Vec<BrickType>,
    pub placements: Vec<Placement>,
}

impl AssemblyPlan {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            grid: GridSpec::default(),
            catalog: default_catalog(),
            placements: Vec::new(),
        }
    }

    pub fn brick(&self, type_id: &str) -> Option<&BrickType> {
        self.catalog.iter().find(|b| b.type_id == type_id)
    }

    /// Brick for a placement that is known to resolve (parsed plans guarantee it).
    pub fn brick_of(&self, placement: &Placement) -> &BrickType {
        self.brick(&placement.type_id)
            .unwrap_or_else(|| panic!("type `{}` missing from catalog", placement.type_id))
    }

    pub fn footprint(&self, placement: &Placement) -> Footprint {
        placement.footprint(self.brick_of(placement))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Two placements share at least one cell. `a < b`.
    Collision { a: usize, b: usize },
    /// A placement above layer 0 with nothing directly beneath its footprint.
    Unsupported { index: usize },
}

impl Violation {
    fn sort_key(&self) -> (usize, u8, usize) {
        match *self {
            Violation::Collision { a, b } => (a, 0, b),
            Violation::Unsupported { index } => (index, 1, 0),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Collision { a, b } => write!(f, "collision between placements {a} and {b}"),
            Violation::Unsupported { index } => write!(f, "placement {index} is unsupported"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown brick type `{type_id}`")]
    UnknownBrick { type_id: String, line: usize },
    #[error("brick type `{0}` declared more than once")]
    DuplicateBrick(String),
    #[error("placements {0} and {1} collide")]
    Collision(usize, usize),
    #[error("placement {0} has no support beneath it")]
    UnsupportedPlacement(usize),
    #[error("plan has {} violation(s)", .0.violations.len())]
    InvalidPlan(ValidationReport),
}

/// Lists every collision pair and every unsupported placement, ordered by
/// placement index.
pub fn validate_plan(plan: &AssemblyPlan) -> ValidationReport {
    let mut occupancy: HashMap<(i32, i32, u32), Vec<usize>> = HashMap::new();
    let mut cells_of = Vec::with_capacity(plan.placements.len());
    for (idx, placement) in plan.placements.iter().enumerate() {
        let cells = placement.occupied_cells(plan.brick_of(placement));
        for &cell in &cells {
            occupancy.entry(cell).or_default().push(idx);
        }
        cells_of.push(cells);
    }

    let mut collisions = std::collections::BTreeSet::new();
    for owners in occupancy.values() {
        for (i, &a) in owners.iter().enumerate() {
            for &b in &owners[i + 1..] {
                collisions.insert((a.min(b), a.max(b)));
            }
        }
    }

    let mut violations: Vec<Violation> = collisions
        .into_iter()
        .map(|(a, b)| Violation::Collision { a, b })
        .collect();

    for (idx, placement) in plan.placements.iter().enumerate() {
        if placement.layer == 0 {
            continue;
        }
        let below = placement.layer - 1;
        let supported = plan.footprint(placement).cells().any(|(x, y)| {
            occupancy
                .get(&(x, y, below))
                .is_some_and(|o| o.iter().any(|&j| j != idx))
        });
        if !supported {
            violations.push(Violation::Unsupported { index: idx });
        }
    }

    violations.sort_by_key(Violation::sort_key);
    ValidationReport { violations }
}

/// One instruction of the compiled sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    /// Index of the placement in declaration order.
    pub placement_index: usize,
    pub placement: Placement,
    pub layer: u32,
}

/// Orders placements layer by layer, scanline (y, then x) within a layer,
/// declaration order last.
pub fn compile_steps(plan: &AssemblyPlan) -> Result<Vec<Step>, PlanError> {
    let report = validate_plan(plan);
    if !report.is_valid() {
        return Err(PlanError::InvalidPlan(report));
    }
    let mut order: Vec<usize> = (0..plan.placements.len()).collect();
    order.sort_by_key(|&i| {
        let p = &plan.placements[i];
        (p.layer, p.cell_y, p.cell_x, i)
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(index, placement_index)| {
            let placement = plan.placements[placement_index].clone();
            Step {
                index,
                placement_index,
                layer: placement.layer,
                placement,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(type_id: &str, x: i32, y: i32, layer: u32, rot: Rotation) -> Placement {
        Placement {
            type_id: type_id.into(),
            cell_x: x,
            cell_y: y,
            layer,
            rotation: rot,
        }
    }

    #[test]
    fn rotated_footprint_swaps_axes() {
        let b = BrickType::new("2x4", 2, 4, 1);
        let fp = part("2x4", 3, 5, 0, Rotation::R90).footprint(&b);
        assert_eq!((fp.size_x, fp.size_y), (4, 2));
        let swapped = BrickType::new("4x2", 4, 2, 1);
        let cells_a: Vec<_> = fp.cells().collect();
        let cells_b: Vec<_> = part("4x2", 3, 5, 0, Rotation::R0).footprint(&swapped).cells().collect();
        assert_eq!(cells_a, cells_b);
    }

    #[test]
    fn pyramid_is_valid() {
        let mut plan = AssemblyPlan::new("pyramid");
        plan.placements = vec![
            part("2x4", 0, 0, 0, Rotation::R0),
            part("2x4", 2, 0, 0, Rotation::R0),
            part("2x2", 1, 1, 1, Rotation::R0),
        ];
        assert!(validate_plan(&plan).is_valid());
    }

    #[test]
    fn floating_brick_is_unsupported() {
        let mut plan = AssemblyPlan::new("float");
        plan.placements = vec![part("1x1", 0, 0, 1, Rotation::R0)];
        assert_eq!(
            validate_plan(&plan).violations,
            vec![Violation::Unsupported { index: 0 }]
        );
    }

    #[test]
    fn tall_brick_occupies_layers_above() {
        let mut plan = AssemblyPlan::new("tall");
        plan.catalog.push(BrickType::new("col", 1, 1, 3));
        plan.placements = vec![part("col", 0, 0, 0, Rotation::R0), part("1x1", 0, 0, 2, Rotation::R0)];
        assert_eq!(
            validate_plan(&plan).violations,
            vec![Violation::Collision { a: 0, b: 1 }]
        );
        plan.placements[1].layer = 3;
        assert!(validate_plan(&plan).is_valid());
    }

    #[test]
    fn compile_orders_by_layer_first() {
        let mut plan = AssemblyPlan::new("two");
        plan.placements = vec![part("1x1", 0, 0, 1, Rotation::R0), part("1x1", 0, 0, 0, Rotation::R0)];
        let steps = compile_steps(&plan).unwrap();
        assert_eq!(steps[0].placement_index, 1);
        assert_eq!(steps[0].index, 0);
        assert_eq!(steps[1].layer, 1);
    }

    #[test]
    fn compile_rejects_invalid_plan() {
        let mut plan = AssemblyPlan::new("bad");
        plan.placements = vec![part("1x1", 0, 0, 2, Rotation::R0)];
        assert!(matches!(compile_steps(&plan), Err(PlanError::InvalidPlan(_))));
    }

    #[test]
    fn single_placement_compiles_to_step_zero() {
        let mut plan = AssemblyPlan::new("one");
        plan.placements = vec![part("2x4", 4, 4, 0, Rotation::R180)];
        let steps = compile_steps(&plan).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].index, 0);
    }
}
