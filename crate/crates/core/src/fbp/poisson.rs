//! `Laplace u = source` on a subset of the grid: Dirichlet data where the
//! subset is cut by an interior interface (Shortley-Weller arms), prescribed
//! outward normal derivative on the edges of the square (ghost nodes).

use faer::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{Grid, ScalarField};
use crate::sparse::Csr;

/// Data of a mixed problem. `level > 0` marks the solution domain.
pub struct MixedProblem<'a> {
    pub grid: Grid,
    pub source: f64,
    pub level: &'a (dyn Fn([f64; 2]) -> f64 + Sync),
    pub dirichlet: &'a (dyn Fn([f64; 2]) -> f64 + Sync),
    /// Outward normal derivative prescribed at a point of the square's boundary.
    pub flux: &'a (dyn Fn([f64; 2], [f64; 2]) -> f64 + Sync),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    /// Solution at domain nodes, NaN elsewhere.
    pub field: ScalarField,
    pub mask: Vec<bool>,
    pub unknowns: usize,
    /// Max-norm residual of the assembled linear system.
    pub residual: f64,
    /// Crossings of the grid lines with the Dirichlet interface: `(point, value)`.
    pub crossings: Vec<([f64; 2], f64)>,
}

/// Arms closer than this fraction of a cell collapse the node onto the interface.
const MIN_ARM: f64 = 1e-6;

fn crossing(level: &dyn Fn([f64; 2]) -> f64, p: [f64; 2], q: [f64; 2]) -> f64 {
    // p inside, q outside; returns the fraction along p -> q
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let x = [p[0] + mid * (q[0] - p[0]), p[1] + mid * (q[1] - p[1])];
        if level(x) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

enum Arm {
    Node(usize, f64),
    Value(f64, f64),
    /// Edge of the square; carries the outward derivative in the arm direction.
    Flux(f64),
}

pub fn solve_poisson_mixed(prob: &MixedProblem) -> Result<PoissonSolution> {
    let g = prob.grid;
    let n = g.n;
    let h = g.h;
    let mask: Vec<bool> = (0..g.len()).map(|k| (prob.level)(g.point(k)) > 0.0).collect();
    let mut index = vec![usize::MAX; g.len()];
    let mut nodes = Vec::new();
    for k in 0..g.len() {
        if mask[k] {
            index[k] = nodes.len();
            nodes.push(k);
        }
    }
    if nodes.is_empty() {
        return Err(Error::InvalidGeometry("the Poisson domain contains no grid node".into()));
    }
    let components = count_components(&g, &mask);
    if components > 1 {
        return Err(Error::NonConnectedDomain { components });
    }

    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(nodes.len() * 5);
    let mut rhs = vec![0.0; nodes.len()];
    let mut crossings = Vec::new();
    for (row, &k) in nodes.iter().enumerate() {
        let (i, j) = g.ij(k);
        let p = g.point(k);
        let mut pinned = None;
        let mut diag = 0.0;
        let mut b = prob.source;
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
        for dir in 0..2 {
            let mut arms = Vec::with_capacity(2);
            for sgn in [-1i64, 1] {
                let (ni, nj) = if dir == 0 { (i as i64 + sgn, j as i64) } else { (i as i64, j as i64 + sgn) };
                if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                    let normal = if dir == 0 { [sgn as f64, 0.0] } else { [0.0, sgn as f64] };
                    arms.push(Arm::Flux((prob.flux)(p, normal)));
                    continue;
                }
                let nk = g.idx(ni as usize, nj as usize);
                if mask[nk] {
                    arms.push(Arm::Node(index[nk], h));
                } else {
                    let q = g.point(nk);
                    let s = crossing(prob.level, p, q);
                    let x = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
                    let v = (prob.dirichlet)(x);
                    crossings.push((x, v));
                    if s < MIN_ARM {
                        pinned = Some(v);
                    }
                    arms.push(Arm::Value(v, s * h));
                }
            }
            // second difference along this axis as  sum c_arm * value - c0 * u0 + const
            match (&arms[0], &arms[1]) {
                (Arm::Flux(_), Arm::Flux(_)) => {
                    return Err(Error::InvalidGeometry(format!("node {:?} has no neighbour along axis {dir}", (i, j))));
                }
                (Arm::Flux(q), other) | (other, Arm::Flux(q)) => {
                    // u'' = 2 (w - u0 + q d) / d^2 from a quadratic with the given edge slope
                    let (d, w) = match other {
                        Arm::Node(c, d) => (*d, Some(*c)),
                        Arm::Value(v, d) => {
                            b -= 2.0 * v / (d * d);
                            (*d, None)
                        }
                        Arm::Flux(_) => unreachable!(),
                    };
                    if let Some(c) = w {
                        entries.push((c, 2.0 / (d * d)));
                    }
                    diag -= 2.0 / (d * d);
                    b -= 2.0 * q / d;
                }
                (l, r) => {
                    let arm = |x: &Arm| match x {
                        Arm::Node(c, d) => (*d, Some(*c), 0.0),
                        Arm::Value(v, d) => (*d, None, *v),
                        Arm::Flux(_) => unreachable!(),
                    };
                    let (dl, cl, vl) = arm(l);
                    let (dr, cr, vr) = arm(r);
                    let s = dl + dr;
                    let (wl, wr) = (2.0 / (dl * s), 2.0 / (dr * s));
                    match cl {
                        Some(c) => entries.push((c, wl)),
                        None => b -= wl * vl,
                    }
                    match cr {
                        Some(c) => entries.push((c, wr)),
                        None => b -= wr * vr,
                    }
                    diag -= wl + wr;
                }
            }
        }
        if let Some(v) = pinned {
            trip.push((row, row, 1.0));
            rhs[row] = v;
            continue;
        }
        // scale rows by h^2 for conditioning
        let s = h * h;
        trip.push((row, row, diag * s));
        for (c, v) in entries {
            trip.push((row, c, v * s));
        }
        rhs[row] = b * s;
    }

    let m = nodes.len();
    let a = Csr::from_triplets(m, m, trip);
    let lu = a
        .to_faer()
        .as_ref()
        .sp_lu()
        .map_err(|e| Error::SolverBreakdown(format!("LU of the Poisson system ({m} unknowns): {e:?}")))?;
    let mut x = vec![0.0; m];
    for _ in 0..4 {
        let ax = a.mul(&x);
        let res: Vec<f64> = (0..m).map(|r| rhs[r] - ax[r]).collect();
        if res.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())) / (h * h) <= 1e-12 {
            break;
        }
        let d = lu.solve(&Col::<f64>::from_fn(m, |r| res[r]));
        for r in 0..m {
            x[r] += d[r];
        }
    }
    let ax = a.mul(&x);
    let residual = (0..m).map(|r| (rhs[r] - ax[r]).abs()).fold(0.0, f64::max) / (h * h);
    if !(residual <= 1e-8) {
        return Err(Error::SolverBreakdown(format!("Poisson residual {residual:.3e} after refinement")));
    }
    let mut values = vec![f64::NAN; g.len()];
    for (row, &k) in nodes.iter().enumerate() {
        values[k] = x[row];
    }
    Ok(PoissonSolution { field: ScalarField { grid: g, values }, mask, unknowns: m, residual, crossings })
}

fn count_components(g: &Grid, mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(k) = queue.pop_front() {
            let (i, j) = g.ij(k);
            let mut push = |ni: usize, nj: usize| {
                let nk = g.idx(ni, nj);
                if mask[nk] && !seen[nk] {
                    seen[nk] = true;
                    queue.push_back(nk);
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < g.n {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < g.n {
                push(i, j + 1);
            }
        }
    }
    count
}

/// Gradient of the discrete solution at a point of its boundary, from a
/// weighted least-squares quadratic with the Laplacian pinned to `source`,
/// through the nodes within three cells and the given boundary value.
pub fn boundary_gradient(sol: &PoissonSolution, source: f64, p: [f64; 2], value: f64) -> Option<[f64; 2]> {
    let g = sol.field.grid;
    let h = g.h;
    for radius in [3.0, 4.5, 6.0] {
        let rad = radius * h;
        let mut rows: Vec<([f64; 5], f64, f64)> = vec![([1.0, 0.0, 0.0, 0.0, 0.0], value, 4.0)];
        let i0 = ((p[0] - g.lo[0] - rad) / h).floor().max(0.0) as usize;
        let i1 = (((p[0] - g.lo[0] + rad) / h).ceil() as usize).min(g.n - 1);
        let j0 = ((p[1] - g.lo[1] - rad) / h).floor().max(0.0) as usize;
        let j1 = (((p[1] - g.lo[1] + rad) / h).ceil() as usize).min(g.n - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let k = g.idx(i, j);
                if !sol.mask[k] {
                    continue;
                }
                let x = g.point(k);
                let d = [(x[0] - p[0]) / h, (x[1] - p[1]) / h];
                let dist = d[0].hypot(d[1]);
                if dist > radius {
                    continue;
                }
                // u = c + h g.d + h^2/2 (A11 d1^2 + 2 A12 d1 d2 + (s - A11) d2^2)
                let y = sol.field.values[k] - 0.5 * h * h * source * d[1] * d[1];
                // weights taper to zero at the cutoff so the fit moves continuously with `p`
                let w = (1.0 - (dist / radius).powi(2)).powi(2);
                rows.push(([1.0, d[0], d[1], 0.5 * (d[0] * d[0] - d[1] * d[1]), d[0] * d[1]], y, w));
            }
        }
        if rows.len() < 9 {
            continue;
        }
        let mat = Mat::<f64>::from_fn(rows.len(), 5, |r, c| rows[r].0[c] * rows[r].2);
        let rhs = Col::<f64>::from_fn(rows.len(), |r| rows[r].1 * rows[r].2);
        let coef = mat.qr().solve_lstsq(&rhs);
        let gr = [coef[1] / h, coef[2] / h];
        if gr[0].is_finite() && gr[1].is_finite() {
            return Some(gr);
        }
    }
    None
}
