//! Step state machine: confirms placements, advances the instruction
//! sequence, and reverts when a supporting placement disappears.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::assign_with;
use crate::association::{track_fits, CompletionConfig, Track};
use crate::geometry::{GeometryError, GroundBox3D};
use crate::plan::{compile_steps, AssemblyPlan, PlanError, Step};
use crate::workspace::Workspace;

/// Added to the active step's assignment cost; see
/// [`GuidanceState::assign_tracks`].
const ACTIVE_PREMIUM_M: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error(transparent)]
    InvalidPlan(#[from] PlanError),
    #[error("target of step {step} cannot be observed: {source}")]
    TargetNotVisible { step: usize, source: GeometryError },
    #[error("session is complete")]
    SessionDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Active,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SessionStarted,
    StepStarted,
    StepCompleted,
    StepRegressed,
    SessionCompleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceEvent {
    pub kind: EventKind,
    pub step_index: Option<usize>,
    pub frame: u64,
}

impl GuidanceEvent {
    fn new(kind: EventKind, step_index: Option<usize>, frame: u64) -> Self {
        Self {
            kind,
            step_index,
            frame,
        }
    }
}

/// A placement box tagged with the step it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBox {
    pub step_index: usize,
    #[serde(rename = "box")]
    pub ground_box: GroundBox3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlights {
    pub step_index: usize,
    /// Where a loose part of the required type currently is.
    #[serde(rename = "source", skip_serializing_if = "Option::is_none", default)]
    pub source_box: Option<GroundBox3D>,
    /// Where it must go.
    #[serde(rename = "target")]
    pub target_box: GroundBox3D,
    pub label: String,
    pub layer: u32,
    /// Current-layer placements up to and including the active step.
    pub layer_geometry: Vec<LayerBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceState {
    pub plan: AssemblyPlan,
    pub steps: Vec<Step>,
    pub workspace: Workspace,
    /// Active step, `None` once every step is done.
    pub current: Option<usize>,
    pub step_status: Vec<StepStatus>,
    /// Hit streak of the track holding the active step, restarted when that
    /// track last stood for a completed step.
    pub completion_streak: u32,
    /// Per step: consecutive frames a completed placement has gone unseen.
    pub regression_streak: Vec<u32>,
    /// Per completed step: the track assigned to it on the last frame.
    claims: Vec<Option<u64>>,
    /// Track currently holding the active step.
    holder: Option<u64>,
    /// Per step: expected lifted footprint, see [`Workspace::apparent_box`].
    targets: Vec<GroundBox3D>,
}

/// Opens a session with step 0 active (or immediately completed for an
/// empty plan).
pub fn start_session(
    plan: &AssemblyPlan,
    workspace: Workspace,
) -> Result<(GuidanceState, Vec<GuidanceEvent>), GuidanceError> {
    let steps = compile_steps(plan)?;
    let targets = steps
        .iter()
        .map(|s| {
            workspace
                .apparent_box(plan, &s.placement)
                .map_err(|source| GuidanceError::TargetNotVisible { step: s.index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = steps.len();
    let mut state = GuidanceState {
        plan: plan.clone(),
        steps,
        workspace,
        current: None,
        step_status: vec![StepStatus::Pending; n],
        completion_streak: 0,
        regression_streak: vec![0; n],
        claims: vec![None; n],
        holder: None,
        targets,
    };
    let mut events = vec![GuidanceEvent::new(EventKind::SessionStarted, None, 0)];
    if n == 0 {
        events.push(GuidanceEvent::new(EventKind::SessionCompleted, None, 0));
    } else {
        state.current = Some(0);
        state.step_status[0] = StepStatus::Active;
        events.push(GuidanceEvent::new(EventKind::StepStarted, Some(0), 0));
    }
    Ok((state, events))
}

impl GuidanceState {
    pub fn is_done(&self) -> bool {
        self.current.is_none()
    }

    pub fn target(&self, step: usize) -> &GroundBox3D {
        &self.targets[step]
    }

    pub fn claimed_track(&self, step: usize) -> Option<u64> {
        self.claims[step]
    }

    /// Whether completed step `below` has a cell directly under the
    /// footprint of step `above`.
    fn supports(&self, above: usize, below: usize) -> bool {
        let a = &self.steps[above].placement;
        if a.layer == 0 {
            return false;
        }
        let b = &self.steps[below].placement;
        let height = self.plan.brick_of(b).height_layers;
        let fp = self.plan.footprint(a);
        (b.layer..b.layer + height).contains(&(a.layer - 1))
            && self.plan.footprint(b).cells().any(|(x, y)| fp.contains(x, y))
    }

    /// Pairs steps `0..=active` with the tracks seen this frame, one track
    /// per step, covering as many steps as possible at the least total
    /// centre distance. Pairs must fit the step's target. The active step
    /// pays a small premium, so a completed step keeps any track it ties on.
    fn assign_tracks(&self, tracks: &[Track], active: usize, cfg: &CompletionConfig) -> Vec<Option<u64>> {
        let mut out = vec![None; active + 1];
        let mut classes: Vec<&str> = self.targets[..=active].iter().map(|t| t.label.as_str()).collect();
        classes.sort_unstable();
        classes.dedup();
        for class in classes {
            let rows: Vec<usize> = (0..=active).filter(|&i| self.targets[i].label == class).collect();
            let cols: Vec<&Track> = tracks.iter().filter(|t| t.misses == 0 && t.class_id == class).collect();
            let matched = assign_with(rows.len(), cols.len(), f64::INFINITY, |r, c| {
                let (step, track) = (rows[r], cols[c]);
                let target = &self.targets[step];
                if !track_fits(track, target, cfg) {
                    return f64::INFINITY;
                }
                let premium = if step == active { ACTIVE_PREMIUM_M } else { 0.0 };
                track.ground_box.center_distance(target) + premium
            });
            for (r, c) in matched.pairs {
                out[rows[r]] = Some(cols[c].track_id);
            }
        }
        out
    }

    /// Consumes one frame of tracks; advances by at most one step.
    ///
    /// The active step completes once a track that fits it has K
    /// consecutive hits, counting only frames in which no completed step
    /// held that track. A completed step that goes without a
    /// track for M frames regresses if the active step rests on it.
    pub fn on_frame(&mut self, tracks: &[Track], cfg: &CompletionConfig, frame: u64) -> Vec<GuidanceEvent> {
        let Some(active) = self.current else {
            return Vec::new();
        };
        let assigned = self.assign_tracks(tracks, active, cfg);
        let holder = assigned[active].and_then(|id| tracks.iter().find(|t| t.track_id == id));
        self.completion_streak = match holder {
            Some(t) if self.holder == Some(t.track_id) => (self.completion_streak + 1).min(t.hits),
            // A track that stood for a completed step last frame starts afresh.
            Some(t) if self.claims[..active].contains(&Some(t.track_id)) => 1,
            Some(t) => t.hits,
            None => 0,
        };
        self.holder = holder.map(|t| t.track_id);
        for (i, &track) in assigned[..active].iter().enumerate() {
            self.claims[i] = track;
            self.regression_streak[i] = if track.is_some() {
                0
            } else {
                self.regression_streak[i] + 1
            };
        }

        let mut events = Vec::new();
        if self.completion_streak >= cfg.confirm_frames {
            self.claims[active] = self.holder;
            self.regression_streak[active] = 0;
            self.step_status[active] = StepStatus::Completed;
            events.push(GuidanceEvent::new(EventKind::StepCompleted, Some(active), frame));
            let next = active + 1;
            if next < self.steps.len() {
                self.current = Some(next);
                self.step_status[next] = StepStatus::Active;
                events.push(GuidanceEvent::new(EventKind::StepStarted, Some(next), frame));
            } else {
                self.current = None;
                events.push(GuidanceEvent::new(EventKind::SessionCompleted, None, frame));
            }
            self.completion_streak = 0;
            self.holder = None;
            return events;
        }

        let regressed =
            (0..active).find(|&i| self.regression_streak[i] >= cfg.lapse_frames && self.supports(active, i));
        if let Some(i) = regressed {
            for j in i..self.steps.len() {
                self.step_status[j] = StepStatus::Pending;
                self.claims[j] = None;
                self.regression_streak[j] = 0;
            }
            self.step_status[i] = StepStatus::Active;
            self.current = Some(i);
            self.completion_streak = 0;
            self.holder = None;
            events.push(GuidanceEvent::new(EventKind::StepRegressed, Some(i), frame));
            events.push(GuidanceEvent::new(EventKind::StepStarted, Some(i), frame));
        }
        events
    }

    /// Boxes to draw for the active step. `supply_tracks` are candidates for
    /// the source box; the best one inside the supply area wins.
    pub fn highlights(&self, tracks: &[Track]) -> Result<Highlights, GuidanceError> {
        let active = self.current.ok_or(GuidanceError::SessionDone)?;
        let step = &self.steps[active];
        let label = step.placement.type_id.clone();
        let supply = self.workspace.layout.supply_region();
        let source_box = tracks
            .iter()
            .filter(|t| {
                t.class_id == label
                    && !self.claims.contains(&Some(t.track_id))
                    && supply.contains(t.ground_box.center_x, t.ground_box.center_y)
            })
            .min_by_key(|t| (t.misses, std::cmp::Reverse(t.hits), t.track_id))
            .map(|t| t.ground_box.clone());
        let layer_geometry = self.steps[..=active]
            .iter()
            .filter(|s| s.layer == step.layer)
            .map(|s| LayerBox {
                step_index: s.index,
                ground_box: self.workspace.target_box(&self.plan, s),
            })
            .collect();
        Ok(Highlights {
            step_index: active,
            source_box,
            target_box: self.workspace.target_box(&self.plan, step),
            label,
            layer: step.layer,
            layer_geometry,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;
    use crate::workspace::LayoutConfig;

    fn ws(plan: &AssemblyPlan) -> Workspace {
        Workspace::new(plan.grid, LayoutConfig::default())
    }

    fn track_on(state: &GuidanceState, step: usize, id: u64, hits: u32) -> Track {
        let target = state.target(step).clone();
        Track {
            track_id: id,
            class_id: target.label.clone(),
            ground_box: target,
            hits,
            misses: 0,
            last_frame: 0,
        }
    }

    /// Feeds the same tracks for up to K frames starting at `frame`; returns
    /// the first non-empty batch of events.
    fn hold(state: &mut GuidanceState, tracks: &[Track], cfg: &CompletionConfig, frame: u64) -> Vec<GuidanceEvent> {
        (frame..frame + u64::from(cfg.confirm_frames))
            .map(|f| state.on_frame(tracks, cfg, f))
            .find(|ev| !ev.is_empty())
            .unwrap_or_default()
    }

    #[test]
    fn empty_plan_completes_immediately() {
        let plan = AssemblyPlan::new("e");
        let (state, events) = start_session(&plan, ws(&plan)).unwrap();
        assert!(state.is_done());
        let kinds: Vec<_> = events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::SessionStarted, EventKind::SessionCompleted]);
        assert_eq!(state.highlights(&[]), Err(GuidanceError::SessionDone));
    }

    #[test]
    fn one_step_plan_starts_step_zero() {
        let plan = parse_plan("PLAN o\nPART 2x4 0 0 0 0\n").unwrap();
        let (state, events) = start_session(&plan, ws(&plan)).unwrap();
        assert_eq!(events[1], GuidanceEvent::new(EventKind::StepStarted, Some(0), 0));
        assert_eq!(state.step_status, vec![StepStatus::Active]);
    }

    #[test]
    fn no_tracks_no_change() {
        let plan = parse_plan("PLAN o\nPART 2x4 0 0 0 0\n").unwrap();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let before = state.clone();
        assert!(state.on_frame(&[], &CompletionConfig::default(), 1).is_empty());
        assert_eq!(state, before);
    }

    #[test]
    fn advances_one_step_per_frame() {
        let plan = parse_plan("PLAN t\nPART 1x1 0 0 0 0\nPART 1x1 3 0 0 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let tracks = vec![track_on(&state, 0, 0, 5), track_on(&state, 1, 1, 5)];
        let ev = state.on_frame(&tracks, &cfg, 7);
        assert_eq!(
            ev,
            vec![
                GuidanceEvent::new(EventKind::StepCompleted, Some(0), 7),
                GuidanceEvent::new(EventKind::StepStarted, Some(1), 7),
            ]
        );
        assert_eq!(state.claimed_track(0), Some(0));
        let ev = state.on_frame(&tracks, &cfg, 8);
        assert_eq!(ev.last().unwrap().kind, EventKind::SessionCompleted);
        assert!(state.is_done());
        assert!(state.on_frame(&tracks, &cfg, 9).is_empty());
    }

    #[test]
    fn a_young_track_needs_its_own_hits() {
        let plan = parse_plan("PLAN t\nPART 1x1 0 0 0 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let mut t = track_on(&state, 0, 0, 1);
        for f in 1..cfg.confirm_frames as u64 {
            assert!(state.on_frame(std::slice::from_ref(&t), &cfg, f).is_empty());
            assert_eq!(state.completion_streak, t.hits);
            t.hits += 1;
        }
        let ev = state.on_frame(std::slice::from_ref(&t), &cfg, 5);
        assert_eq!(ev[0].kind, EventKind::StepCompleted);
    }

    #[test]
    fn a_released_claim_counts_from_one() {
        let plan = parse_plan("PLAN t\nPART 1x1 0 0 0 0\nPART 1x1 3 0 0 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let mut t = track_on(&state, 0, 0, 9);
        state.on_frame(std::slice::from_ref(&t), &cfg, 1);
        assert_eq!(state.current, Some(1));
        // The same track now shows up on step 1's target.
        t.ground_box = state.target(1).clone();
        let ev = hold(&mut state, std::slice::from_ref(&t), &cfg, 2);
        assert_eq!(ev.last().unwrap().kind, EventKind::SessionCompleted);
    }

    #[test]
    fn claimed_track_cannot_complete_a_stacked_twin() {
        let plan = parse_plan("PLAN s\nPART 1x2 0 0 0 0\nPART 1x2 0 0 1 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let lower = track_on(&state, 0, 0, 5);
        hold(&mut state, std::slice::from_ref(&lower), &cfg, 1);
        assert_eq!(state.current, Some(1));
        // Without a camera the twin's target coincides with the lower one.
        for f in 6..30 {
            assert!(state.on_frame(std::slice::from_ref(&lower), &cfg, f).is_empty());
        }
        assert_eq!(state.current, Some(1));
        // Once the twin is there, both are covered.
        let upper = track_on(&state, 1, 1, 5);
        let ev = hold(&mut state, &[lower, upper], &cfg, 30);
        assert_eq!(ev.last().unwrap().kind, EventKind::SessionCompleted);
    }

    #[test]
    fn removing_a_support_regresses() {
        let plan = parse_plan("PLAN r\nPART 1x2 0 0 0 0\nPART 1x1 0 0 1 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let t0 = track_on(&state, 0, 0, 5);
        hold(&mut state, &[t0], &cfg, 1);
        assert_eq!(state.current, Some(1));
        let mut events = Vec::new();
        for f in 0..cfg.lapse_frames as u64 {
            events = state.on_frame(&[], &cfg, 6 + f);
            if f + 1 < cfg.lapse_frames as u64 {
                assert!(events.is_empty());
            }
        }
        assert_eq!(events[0], GuidanceEvent::new(EventKind::StepRegressed, Some(0), 15));
        assert_eq!(events[1].kind, EventKind::StepStarted);
        assert_eq!(state.current, Some(0));
        assert_eq!(state.step_status, vec![StepStatus::Active, StepStatus::Pending]);
    }

    #[test]
    fn unrelated_loss_does_not_regress() {
        let plan = parse_plan("PLAN r\nPART 1x1 0 0 0 0\nPART 1x1 4 0 0 0\nPART 1x1 4 0 1 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let t0 = track_on(&state, 0, 0, 5);
        hold(&mut state, &[t0], &cfg, 1);
        let t1 = track_on(&state, 1, 1, 5);
        hold(&mut state, std::slice::from_ref(&t1), &cfg, 6);
        assert_eq!(state.current, Some(2));
        // step 0 vanishes, but step 2 sits on step 1 only
        for f in 11..40 {
            assert!(state.on_frame(std::slice::from_ref(&t1), &cfg, f).is_empty());
        }
    }

    #[test]
    fn highlights_follow_active_layer() {
        let plan =
            parse_plan("PLAN h\nPART 2x2 0 0 0 0\nPART 2x2 2 0 0 0\nPART 1x1 0 0 1 0\nPART 1x1 1 1 1 0\n").unwrap();
        let cfg = CompletionConfig::default();
        let (mut state, _) = start_session(&plan, ws(&plan)).unwrap();
        let h = state.highlights(&[]).unwrap();
        assert!(h.source_box.is_none());
        assert_eq!(h.layer_geometry.len(), 1);
        for (i, id) in [(0, 0), (1, 1), (2, 2)] {
            let t = track_on(&state, i, id, 5);
            hold(&mut state, &[t], &cfg, 10 * id);
        }
        let h = state.highlights(&[]).unwrap();
        assert_eq!(h.step_index, 3);
        assert_eq!(h.layer, 1);
        assert_eq!(h.label, "1x1");
        let idx: Vec<_> = h.layer_geometry.iter().map(|b| b.step_index).collect();
        assert_eq!(idx, vec![2, 3]);
        assert_eq!(h.target_box, state.workspace.target_box(&plan, &state.steps[3]));
    }

    #[test]
    fn source_box_comes_from_supply() {
        let plan = parse_plan("PLAN h\nPART 2x2 0 0 0 0\n").unwrap();
        let (state, _) = start_session(&plan, ws(&plan)).unwrap();
        let (sx, sy) = LayoutConfig::default().supply_slot(0);
        let mut t = track_on(&state, 0, 3, 2);
        t.ground_box.center_x = sx;
        t.ground_box.center_y = sy;
        let mut wrong = t.clone();
        wrong.track_id = 4;
        wrong.class_id = "1x1".into();
        let h = state.highlights(&[wrong, t.clone()]).unwrap();
        assert_eq!(h.source_box, Some(t.ground_box));
    }
}
