//! Action scripts for headless runs.
//!
//! ```text
//! PICK <id>
//! PLACE <id> <x> <y> <layer> <rot>
//! REMOVE <id>
//! TICK <n>
//! ```
//!
//! Actions take effect at the boundary before the next tick; `TICK n` runs
//! `n` ticks.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::plan::{Rotation, Step};
use crate::scene::Action;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("script line {line}: {reason}")]
pub struct ScriptError {
    pub line: usize,
    pub reason: String,
}

/// Actions keyed by the tick they apply before, plus the total tick count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schedule {
    pub actions: Vec<(u64, Action)>,
    pub total_ticks: u64,
}

impl Schedule {
    /// Actions due before tick `tick`, in script order.
    pub fn due(&self, tick: u64) -> impl Iterator<Item = &Action> {
        self.actions.iter().filter(move |(t, _)| *t == tick).map(|(_, a)| a)
    }
}

fn num<T: FromStr>(tok: &str, line: usize) -> Result<T, ScriptError> {
    tok.parse().map_err(|_| ScriptError {
        line,
        reason: format!("invalid number `{tok}`"),
    })
}

pub fn parse_script(text: &str) -> Result<Schedule, ScriptError> {
    let mut schedule = Schedule::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
        let Some((&cmd, args)) = toks.split_first() else {
            continue;
        };
        let bad_arity = || ScriptError {
            line,
            reason: format!("wrong number of arguments for {cmd}"),
        };
        let action = match cmd {
            "TICK" => {
                let [n] = args else { return Err(bad_arity()) };
                schedule.total_ticks += num::<u64>(n, line)?;
                continue;
            }
            "PICK" => {
                let [id] = args else { return Err(bad_arity()) };
                Action::Pick { id: num(id, line)? }
            }
            "REMOVE" => {
                let [id] = args else { return Err(bad_arity()) };
                Action::Remove { id: num(id, line)? }
            }
            "PLACE" => {
                let [id, x, y, layer, rot] = args else {
                    return Err(bad_arity());
                };
                let deg: i64 = num(rot, line)?;
                let rot = Rotation::from_degrees(deg).ok_or_else(|| ScriptError {
                    line,
                    reason: format!("rotation must be 0, 90, 180 or 270, got {deg}"),
                })?;
                Action::Place {
                    id: num(id, line)?,
                    x: num(x, line)?,
                    y: num(y, line)?,
                    layer: num(layer, line)?,
                    rot,
                }
            }
            other => {
                return Err(ScriptError {
                    line,
                    reason: format!("unknown command `{other}`"),
                })
            }
        };
        schedule.actions.push((schedule.total_ticks, action));
    }
    Ok(schedule)
}

/// Script that picks and places every step in order, holding `hold_ticks`
/// after each placement and `tail_ticks` at the end. Supply instance ids
/// equal step indices.
pub fn perfect_script(plan_name: &str, steps: &[Step], hold_ticks: u64, tail_ticks: u64) -> String {
    let mut out = format!("# noise-free perfect assembly of {plan_name}: one pick/place per step\n");
    for s in steps {
        let p = &s.placement;
        let _ = writeln!(out, "PICK {}", s.index);
        let _ = writeln!(
            out,
            "PLACE {} {} {} {} {}",
            s.index, p.cell_x, p.cell_y, p.layer, p.rotation
        );
        let _ = writeln!(out, "TICK {hold_ticks}");
    }
    let _ = writeln!(out, "TICK {tail_ticks}");
    out
}
