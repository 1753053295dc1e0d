//! Linear description of the discrete admissible cone.

use serde::{Deserialize, Serialize};

use crate::model::{stencil_directions, Grid, ModelConfig, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Nonnegative,
    Monotone,
    /// Second difference along `(di, dj)`.
    Convex { di: i64, dj: i64 },
}

/// Homogeneous rows `a_r . u >= 0`, stored row-compressed.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub grid: Grid,
    pub stencil: usize,
    pub kinds: Vec<ConstraintKind>,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) cols: Vec<usize>,
    pub(crate) vals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub nonnegative: usize,
    pub monotone: usize,
    pub convex: usize,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn counts(&self) -> ConstraintCounts {
        let mut c = ConstraintCounts { nonnegative: 0, monotone: 0, convex: 0 };
        for k in &self.kinds {
            match k {
                ConstraintKind::Nonnegative => c.nonnegative += 1,
                ConstraintKind::Monotone => c.monotone += 1,
                ConstraintKind::Convex { .. } => c.convex += 1,
            }
        }
        c
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[s.clone()].iter().copied().zip(self.vals[s].iter().copied())
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|r| self.row(r).map(|(c, v)| v * u[c]).sum()).collect()
    }

    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[p] * u[self.cols[p]];
            }
            *o = s;
        }
    }

    /// `out = A^T y`
    pub(crate) fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, yr) in y.iter().enumerate() {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[p]] += self.vals[p] * yr;
            }
        }
    }

    /// Largest raw violation `max(0, -a_r . u)`.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        self.apply(u).iter().fold(0.0_f64, |m, v| m.max(-v))
    }

    /// Multiplier `s` such that `u + s q` satisfies every row, where `q` is a
    /// fixed strictly convex, strictly increasing, positive quadratic.
    pub(crate) fn repair_multiplier(&self, u: &[f64]) -> f64 {
        let h = self.grid.h;
        let au = self.apply(u);
        let mut s = 0.0_f64;
        for (r, v) in au.iter().enumerate() {
            if *v >= 0.0 {
                continue;
            }
            // Lower bound on a_r . q for each row kind.
            let gain = match self.kinds[r] {
                ConstraintKind::Nonnegative => 1.0,
                ConstraintKind::Monotone => h,
                ConstraintKind::Convex { di, dj } => ((di * di + dj * dj) as f64) * h * h,
            };
            s = s.max(-v / gain);
        }
        s
    }

    /// Nodal values of the repair quadratic `|x - (a-1, a-1)|^2 / 2`.
    pub(crate) fn repair_direction(&self) -> Vec<f64> {
        let g = self.grid;
        let c = g.lo[0] - 1.0;
        (0..g.len())
            .map(|k| {
                let p = g.point(k);
                0.5 * ((p[0] - c).powi(2) + (p[1] - c).powi(2))
            })
            .collect()
    }
}

/// Rows in fixed order: nonnegativity, forward differences, then second
/// differences direction by direction. Widths are nested.
pub fn assemble_constraints(cfg: &ModelConfig, w_stencil: usize) -> ConstraintSet {
    let grid = cfg.grid();
    let w_stencil = w_stencil.clamp(1, 3);
    let n = grid.n;
    let mut kinds = Vec::new();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut push = |kind: ConstraintKind, entries: &[(usize, f64)]| {
        kinds.push(kind);
        for &(c, v) in entries {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    };

    for k in 0..grid.len() {
        push(ConstraintKind::Nonnegative, &[(k, 1.0)]);
    }
    for j in 0..n {
        for i in 0..n {
            if i + 1 < n {
                push(ConstraintKind::Monotone, &[(grid.idx(i, j), -1.0), (grid.idx(i + 1, j), 1.0)]);
            }
            if j + 1 < n {
                push(ConstraintKind::Monotone, &[(grid.idx(i, j), -1.0), (grid.idx(i, j + 1), 1.0)]);
            }
        }
    }
    let ni = n as i64;
    for (di, dj) in stencil_directions(w_stencil) {
        for j in 0..ni {
            for i in 0..ni {
                let (ip, jp, im, jm) = (i + di, j + dj, i - di, j - dj);
                if ip < 0 || jp < 0 || im < 0 || jm < 0 || ip >= ni || jp >= ni || im >= ni || jm >= ni {
                    continue;
                }
                push(
                    ConstraintKind::Convex { di, dj },
                    &[
                        (grid.idx(im as usize, jm as usize), 1.0),
                        (grid.idx(i as usize, j as usize), -2.0),
                        (grid.idx(ip as usize, jp as usize), 1.0),
                    ],
                );
            }
        }
    }
    ConstraintSet { grid, stencil: w_stencil, kinds, row_ptr, cols, vals }
}

/// Check the cone rows on a field; convenience wrapper used by tests and reports.
pub fn satisfies(set: &ConstraintSet, u: &ScalarField, tol: f64) -> bool {
    set.max_violation(&u.values) <= tol
}
