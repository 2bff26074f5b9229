//! Gated rectangular assignment.
//!
//! Pairs whose cost is non-finite or above the gate are forbidden. Among all
//! one-to-one matchings using allowed pairs, [`assign`] returns one with the
//! most pairs and, among those, the least total cost.
//!
//! The solver is the shortest-augmenting-path Hungarian method run over
//! lexicographic costs `(forbidden, cost)`: a forbidden pair costs `(1, 0)` and
//! an allowed pair `(0, c)`. Minimizing that sum over row-complete assignments
//! first minimizes the number of forbidden pairs (maximizing real matches) and
//! then the real cost, without mixing a large penalty constant into the
//! floating-point sums.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LexCost {
    tier: i64,
    value: f64,
}

impl LexCost {
    const ZERO: LexCost = LexCost { tier: 0, value: 0.0 };
    const INF: LexCost = LexCost {
        tier: i64::MAX / 4,
        value: 0.0,
    };
}

impl PartialOrd for LexCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.tier.cmp(&other.tier) {
            Ordering::Equal => self.value.partial_cmp(&other.value),
            o => Some(o),
        }
    }
}

impl Add for LexCost {
    type Output = LexCost;
    fn add(self, o: LexCost) -> LexCost {
        LexCost {
            tier: self.tier + o.tier,
            value: self.value + o.value,
        }
    }
}

impl Sub for LexCost {
    type Output = LexCost;
    fn sub(self, o: LexCost) -> LexCost {
        LexCost {
            tier: self.tier - o.tier,
            value: self.value - o.value,
        }
    }
}

impl AddAssign for LexCost {
    fn add_assign(&mut self, o: LexCost) {
        *self = *self + o;
    }
}

impl SubAssign for LexCost {
    fn sub_assign(&mut self, o: LexCost) {
        *self = *self - o;
    }
}

pub fn is_allowed(cost: f64, gate: f64) -> bool {
    cost.is_finite() && cost <= gate
}

/// Row-complete assignment for `rows <= cols`. Returns the column chosen for
/// each row.
fn hungarian(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> LexCost) -> Vec<usize> {
    debug_assert!(rows <= cols);
    // 1-based with a virtual column 0, following the classic potentials formulation.
    let mut u = vec![LexCost::ZERO; rows + 1];
    let mut v = vec![LexCost::ZERO; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for row in 1..=rows {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![LexCost::INF; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = LexCost::INF;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            col_of_row[owner[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Gated minimum-cost assignment over a dense `rows x cols` matrix given as
/// row slices.
pub fn assign(cost_matrix: &[Vec<f64>], gate: f64) -> MatchResult {
    let rows = cost_matrix.len();
    let cols = cost_matrix.first().map_or(0, Vec::len);
    assert!(
        cost_matrix.iter().all(|r| r.len() == cols),
        "cost matrix rows must have equal length"
    );
    assign_with(rows, cols, gate, |r, c| cost_matrix[r][c])
}

/// Same as [`assign`] with costs supplied by a closure.
pub fn assign_with(rows: usize, cols: usize, gate: f64, cost: impl Fn(usize, usize) -> f64) -> MatchResult {
    let lex = |r: usize, c: usize| {
        let value = cost(r, c);
        if is_allowed(value, gate) {
            LexCost { tier: 0, value }
        } else {
            LexCost { tier: 1, value: 0.0 }
        }
    };

    let mut pairs = Vec::new();
    if rows > 0 && cols > 0 {
        if rows <= cols {
            for (r, c) in hungarian(rows, cols, lex).into_iter().enumerate() {
                pairs.push((r, c));
            }
        } else {
            for (c, r) in hungarian(cols, rows, |a, b| lex(b, a)).into_iter().enumerate() {
                pairs.push((r, c));
            }
        }
    }
    pairs.retain(|&(r, c)| is_allowed(cost(r, c), gate));
    pairs.sort_unstable();

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut total_cost = 0.0;
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
        total_cost += cost(r, c);
    }
    MatchResult {
        pairs,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        total_cost,
    }
}
