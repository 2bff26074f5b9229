//! Detection-to-expectation matching, temporal smoothing, and the placement
//! completion rule.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::assign::{assign_with, MatchResult};
use crate::geometry::GroundBox3D;
use crate::plan::{AssemblyPlan, GridSpec, Step};
use crate::workspace::{Region, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub center_tolerance_m: f64,
    /// Minimum intersection area / target area.
    pub overlap_threshold: f64,
    /// Consecutive hits before a placement counts (K).
    pub confirm_frames: u32,
    /// Consecutive misses tolerated before a track or placement lapses (M).
    pub lapse_frames: u32,
    pub smoothing_alpha: f64,
    /// Association gate for tracks on the build area. Placed bricks do not
    /// move, so this only needs to cover detection jitter.
    pub track_gate_m: f64,
    /// Association gate for tracks inside the supply area.
    pub supply_gate_m: f64,
}

impl CompletionConfig {
    pub fn for_grid(grid: &GridSpec) -> Self {
        Self {
            center_tolerance_m: 1.5 * grid.pitch_m(),
            overlap_threshold: 0.5,
            confirm_frames: 5,
            lapse_frames: 10,
            smoothing_alpha: 0.4,
            track_gate_m: 1.0 * grid.pitch_m(),
            supply_gate_m: 3.0 * grid.pitch_m(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.center_tolerance_m.is_finite() && self.center_tolerance_m > 0.0) {
            return Err("center tolerance must be positive".into());
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err("overlap threshold must be in (0, 1]".into());
        }
        if self.confirm_frames == 0 || self.lapse_frames == 0 {
            return Err("confirm and lapse frame counts must be positive".into());
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err("smoothing alpha must be in (0, 1]".into());
        }
        if !(self.supply_gate_m.is_finite() && self.supply_gate_m > 0.0) {
            return Err("supply gate must be positive".into());
        }
        if !(self.track_gate_m.is_finite() && self.track_gate_m > 0.0) {
            return Err("track gate must be positive".into());
        }
        Ok(())
    }
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self::for_grid(&GridSpec::default())
    }
}

/// Something a detection may be matched to: a class at a location, with its
/// own gate radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub class_id: String,
    pub center: Vector2<f64>,
    pub gate: f64,
}

/// Class-constrained matching on plane-center distance. Rows of the result
/// are expectations, columns are detections.
pub fn match_frame(detections: &[GroundBox3D], expectations: &[Expectation]) -> MatchResult {
    // Cross-class pairs are forbidden, so the problem splits into one
    // independent block per class.
    let mut blocks: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, e) in expectations.iter().enumerate() {
        blocks.entry(e.class_id.as_str()).or_default().0.push(i);
    }
    for (j, d) in detections.iter().enumerate() {
        if let Some(block) = blocks.get_mut(d.label.as_str()) {
            block.1.push(j);
        }
    }

    let mut pairs = Vec::new();
    for (rows, cols) in blocks.values() {
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let block = assign_with(rows.len(), cols.len(), f64::INFINITY, |r, c| {
            let e = &expectations[rows[r]];
            let d = (detections[cols[c]].center() - e.center).norm();
            if d <= e.gate {
                d
            } else {
                f64::INFINITY
            }
        });
        pairs.extend(block.pairs.into_iter().map(|(r, c)| (rows[r], cols[c])));
    }
    pairs.sort_unstable();

    let mut row_used = vec![false; expectations.len()];
    let mut col_used = vec![false; detections.len()];
    let mut total_cost = 0.0;
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
        total_cost += (detections[c].center() - expectations[r].center).norm();
    }
    MatchResult {
        pairs,
        unmatched_rows: (0..expectations.len()).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..detections.len()).filter(|&c| !col_used[c]).collect(),
        total_cost,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub class_id: String,
    pub ground_box: GroundBox3D,
    pub hits: u32,
    pub misses: u32,
    pub last_frame: u64,
}

/// Live tracks plus the id counter, so ids are never reused within a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
    next_id: u64,
}

fn ema(obs: f64, old: f64, alpha: f64) -> f64 {
    alpha * obs + (1.0 - alpha) * old
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, track_id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }

    /// Expectations for matching this frame's detections against the current
    /// tracks: tracks inside `supply` get the looser supply gate.
    pub fn expectations(&self, cfg: &CompletionConfig, supply: Option<&Region>) -> Vec<Expectation> {
        self.tracks
            .iter()
            .map(|t| {
                let in_supply = supply.is_some_and(|r| r.contains(t.ground_box.center_x, t.ground_box.center_y));
                Expectation {
                    class_id: t.class_id.clone(),
                    center: t.ground_box.center(),
                    gate: if in_supply { cfg.supply_gate_m } else { cfg.track_gate_m },
                }
            })
            .collect()
    }

    /// Folds one frame of matches into the tracks. `matched` rows index
    /// `self.tracks`, columns index `detections`.
    pub fn update(
        &mut self,
        matched: &MatchResult,
        detections: &[GroundBox3D],
        frame: u64,
        alpha: f64,
        lapse_frames: u32,
    ) {
        assert!(alpha > 0.0 && alpha <= 1.0, "smoothing alpha must be in (0, 1]");
        let mut seen = vec![false; self.tracks.len()];
        for &(row, col) in &matched.pairs {
            let obs = &detections[col];
            let t = &mut self.tracks[row];
            let g = &mut t.ground_box;
            g.center_x = ema(obs.center_x, g.center_x, alpha);
            g.center_y = ema(obs.center_y, g.center_y, alpha);
            g.extent_x = ema(obs.extent_x, g.extent_x, alpha);
            g.extent_y = ema(obs.extent_y, g.extent_y, alpha);
            g.height = obs.height;
            t.hits += 1;
            t.misses = 0;
            t.last_frame = frame;
            seen[row] = true;
        }
        for (t, seen) in self.tracks.iter_mut().zip(seen) {
            if !seen {
                t.misses += 1;
                t.hits = 0;
            }
        }
        self.tracks.retain(|t| t.misses <= lapse_frames);
        for &col in &matched.unmatched_cols {
            let obs = &detections[col];
            self.tracks.push(Track {
                track_id: self.next_id,
                class_id: obs.label.clone(),
                ground_box: obs.clone(),
                hits: 1,
                misses: 0,
                last_frame: frame,
            });
            self.next_id += 1;
        }
    }

    /// Drops tracks that missed this frame while a same-class track within
    /// `radius` was hit. Two tracks on one object would otherwise take turns
    /// on its detection and neither would build a streak.
    pub fn suppress_duplicates(&mut self, radius: f64) {
        let hit: Vec<(String, Vector2<f64>)> = self
            .tracks
            .iter()
            .filter(|t| t.misses == 0)
            .map(|t| (t.class_id.clone(), t.ground_box.center()))
            .collect();
        self.tracks.retain(|t| {
            t.misses == 0
                || !hit
                    .iter()
                    .any(|(cls, c)| *cls == t.class_id && (t.ground_box.center() - c).norm() <= radius)
        });
    }

    /// Matches `detections` against the tracks and updates them.
    pub fn observe(
        &mut self,
        detections: &[GroundBox3D],
        frame: u64,
        cfg: &CompletionConfig,
        supply: Option<&Region>,
    ) -> MatchResult {
        let expectations = self.expectations(cfg, supply);
        let matched = match_frame(detections, &expectations);
        self.update(&matched, detections, frame, cfg.smoothing_alpha, cfg.lapse_frames);
        self.suppress_duplicates(cfg.track_gate_m);
        matched
    }
}

/// Whether `track` sits on `target` closely enough, ignoring how long it has
/// been seen.
pub fn track_fits(track: &Track, target: &GroundBox3D, cfg: &CompletionConfig) -> bool {
    if track.class_id != target.label {
        return false;
    }
    let area = target.area();
    area > 0.0
        && track.ground_box.center_distance(target) <= cfg.center_tolerance_m
        && track.ground_box.intersection_area(target) / area >= cfg.overlap_threshold
}

/// First track, in list order, that confirms placement of `target`.
pub fn confirming_track<'a>(target: &GroundBox3D, tracks: &'a [Track], cfg: &CompletionConfig) -> Option<&'a Track> {
    tracks
        .iter()
        .find(|t| t.hits >= cfg.confirm_frames && track_fits(t, target, cfg))
}

/// True iff some track of the step's type has been seen for at least K
/// consecutive frames on the step's target.
///
/// The target is the footprint as it appears once lifted onto the table plane
/// (see [`Workspace::apparent_box`]).
pub fn step_complete(
    step: &Step,
    plan: &AssemblyPlan,
    workspace: &Workspace,
    tracks: &[Track],
    cfg: &CompletionConfig,
) -> bool {
    match workspace.apparent_box(plan, &step.placement) {
        Ok(target) => confirming_track(&target, tracks, cfg).is_some(),
        Err(_) => false,
    }
}
