//! Line-based plan document format.
//!
//! ```text
//! PLAN <name>
//! GRID <pitch_mm> <layer_height_mm>
//! BRICK <type_id> <width> <depth> [<height>]
//! PART <type_id> <x> <y> <layer> <rot>
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use super::{
    default_catalog, validate_plan, AssemblyPlan, BrickType, GridSpec, Placement, PlanError, Rotation, Violation,
};

fn syntax(line: usize, reason: impl Into<String>) -> PlanError {
    PlanError::Syntax {
        line,
        reason: reason.into(),
    }
}

fn field<T: FromStr>(tok: &str, what: &str, line: usize) -> Result<T, PlanError> {
    tok.parse().map_err(|_| syntax(line, format!("invalid {what} `{tok}`")))
}

fn positive_decimal(tok: &str, what: &str, line: usize) -> Result<f64, PlanError> {
    let v: f64 = field(tok, what, line)?;
    if !v.is_finite() || v <= 0.0 {
        return Err(syntax(line, format!("{what} must be positive and finite, got `{tok}`")));
    }
    Ok(v)
}

fn positive_int(tok: &str, what: &str, line: usize) -> Result<u32, PlanError> {
    let v: u32 = field(tok, what, line)?;
    if v == 0 {
        return Err(syntax(line, format!("{what} must be at least 1")));
    }
    Ok(v)
}

/// Parses the document and resolves brick types, without checking
/// collisions or support.
pub fn parse_plan_unchecked(text: &str) -> Result<AssemblyPlan, PlanError> {
    let mut name: Option<String> = None;
    let mut grid: Option<GridSpec> = None;
    let mut bricks: Vec<BrickType> = Vec::new();
    let mut parts: Vec<(Placement, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        let Some((&directive, args)) = toks.split_first() else {
            continue;
        };

        if name.is_none() && directive != "PLAN" {
            return Err(syntax(line, "first directive must be PLAN"));
        }

        match directive {
            "PLAN" => {
                if name.is_some() {
                    return Err(syntax(line, "duplicate PLAN directive"));
                }
                let [n] = args else {
                    return Err(syntax(line, "PLAN takes exactly one name token"));
                };
                name = Some(n.to_string());
            }
            "GRID" => {
                if grid.is_some() {
                    return Err(syntax(line, "duplicate GRID directive"));
                }
                let [pitch, layer] = args else {
                    return Err(syntax(line, "GRID takes <pitch_mm> <layer_height_mm>"));
                };
                grid = Some(GridSpec {
                    pitch_mm: positive_decimal(pitch, "pitch", line)?,
                    layer_height_mm: positive_decimal(layer, "layer height", line)?,
                });
            }
            "BRICK" => {
                let (id, w, d, h) = match args {
                    [id, w, d] => (id, w, d, None),
                    [id, w, d, h] => (id, w, d, Some(h)),
                    _ => return Err(syntax(line, "BRICK takes <type_id> <width> <depth> [<height>]")),
                };
                if bricks.iter().any(|b| b.type_id == *id) {
                    return Err(PlanError::DuplicateBrick(id.to_string()));
                }
                let height = match h {
                    Some(h) => positive_int(h, "height", line)?,
                    None => 1,
                };
                bricks.push(BrickType::new(
                    id,
                    positive_int(w, "width", line)?,
                    positive_int(d, "depth", line)?,
                    height,
                ));
            }
            "PART" => {
                let [id, x, y, layer, rot] = args else {
                    return Err(syntax(line, "PART takes <type_id> <x> <y> <layer> <rot>"));
                };
                let deg: i64 = field(rot, "rotation", line)?;
                let rotation = Rotation::from_degrees(deg)
                    .ok_or_else(|| syntax(line, format!("rotation must be 0, 90, 180 or 270, got {deg}")))?;
                parts.push((
                    Placement {
                        type_id: id.to_string(),
                        cell_x: field(x, "cell x", line)?,
                        cell_y: field(y, "cell y", line)?,
                        layer: field(layer, "layer", line)?,
                        rotation,
                    },
                    line,
                ));
            }
            other => return Err(syntax(line, format!("unknown directive `{other}`"))),
        }
    }

    let Some(name) = name else {
        return Err(syntax(text.lines().count().max(1), "missing PLAN directive"));
    };
    let catalog = if bricks.is_empty() { default_catalog() } else { bricks };
    let known: HashSet<&str> = catalog.iter().map(|b| b.type_id.as_str()).collect();
    if let Some((p, line)) = parts.iter().find(|(p, _)| !known.contains(p.type_id.as_str())) {
        return Err(PlanError::UnknownBrick {
            type_id: p.type_id.clone(),
            line: *line,
        });
    }

    Ok(AssemblyPlan {
        name,
        grid: grid.unwrap_or_default(),
        catalog,
        placements: parts.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Parses and validates a plan document. The first violation found (by
/// placement index) is returned as the error.
pub fn parse_plan(text: &str) -> Result<AssemblyPlan, PlanError> {
    let plan = parse_plan_unchecked(text)?;
    match validate_plan(&plan).violations.first() {
        None => Ok(plan),
        Some(Violation::Collision { a, b }) => Err(PlanError::Collision(*a, *b)),
        Some(Violation::Unsupported { index }) => Err(PlanError::UnsupportedPlacement(*index)),
    }
}

/// Writes the canonical document for `plan`. `BRICK` lines are emitted only
/// when the catalog differs from the default one.
pub fn serialize_plan(plan: &AssemblyPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "PLAN {}", plan.name);
    let _ = writeln!(out, "GRID {} {}", plan.grid.pitch_mm, plan.grid.layer_height_mm);
    if plan.catalog != default_catalog() {
        for b in &plan.catalog {
            let _ = writeln!(
                out,
                "BRICK {} {} {} {}",
                b.type_id, b.width_studs, b.depth_studs, b.height_layers
            );
        }
    }
    for p in &plan.placements {
        let _ = writeln!(
            out,
            "PART {} {} {} {} {}",
            p.type_id, p.cell_x, p.cell_y, p.layer, p.rotation
        );
    }
    out
}
