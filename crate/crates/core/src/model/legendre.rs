//! Discrete Legendre-Fenchel transform `g*(z) = max_x z.x - g(x)` over grid nodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Grid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendreReport {
    /// Fraction of target nodes whose maximizer sits on the source boundary.
    pub boundary_fraction: f64,
    pub warn_fraction: f64,
    pub truncated: bool,
}

impl LegendreReport {
    fn new(boundary_hits: usize, targets: usize, warn_fraction: f64) -> Self {
        let boundary_fraction = boundary_hits as f64 / targets.max(1) as f64;
        let truncated = boundary_fraction > warn_fraction;
        if truncated {
            log::warn!(
                "legendre transform: {:.1}% of maximizers on the source boundary (limit {:.1}%)",
                100.0 * boundary_fraction,
                100.0 * warn_fraction
            );
        }
        LegendreReport { boundary_fraction, warn_fraction, truncated }
    }
}

/// Exact transform by separating the max: rows of the source first, then columns.
/// Cost is O(n_src^2 n_tgt + n_src n_tgt^2) instead of O(n_src^2 n_tgt^2).
pub fn legendre_transform(g: &ScalarField, target: &Grid, warn_fraction: f64) -> (ScalarField, LegendreReport) {
    let src = g.grid;
    let (ns, nt) = (src.n, target.n);

    // inner[j * nt + p] = max_i z1_p x1_i - g(i, j), with its argmax
    let inner: Vec<(f64, usize)> = (0..ns * nt)
        .into_par_iter()
        .map(|jp| {
            let (j, p) = (jp / nt, jp % nt);
            let z1 = target.x1(p);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for i in 0..ns {
                let gv = g.values[src.idx(i, j)];
                if !gv.is_finite() {
                    continue;
                }
                let val = z1 * src.x1(i) - gv;
                if val > best.0 {
                    best = (val, i);
                }
            }
            best
        })
        .collect();

    let out: Vec<(f64, bool)> = (0..target.len())
        .into_par_iter()
        .map(|k| {
            let (p, q) = target.ij(k);
            let z2 = target.x2(q);
            let mut best = (f64::NEG_INFINITY, usize::MAX, usize::MAX);
            for j in 0..ns {
                let (v, i) = inner[j * nt + p];
                if i == usize::MAX {
                    continue;
                }
                let val = z2 * src.x2(j) + v;
                if val > best.0 {
                    best = (val, i, j);
                }
            }
            let on_bdry = best.1 != usize::MAX && src.on_boundary(src.idx(best.1, best.2));
            (best.0, on_bdry)
        })
        .collect();

    let hits = out.iter().filter(|o| o.1).count();
    let report = LegendreReport::new(hits, target.len(), warn_fraction);
    (ScalarField { grid: *target, values: out.into_iter().map(|o| o.0).collect() }, report)
}

/// Direct O(n^4) maximization; reference implementation.
pub fn legendre_transform_brute(g: &ScalarField, target: &Grid, warn_fraction: f64) -> (ScalarField, LegendreReport) {
    let src = g.grid;
    let out: Vec<(f64, bool)> = (0..target.len())
        .into_par_iter()
        .map(|k| {
            let z = target.point(k);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for s in 0..src.len() {
                if !g.values[s].is_finite() {
                    continue;
                }
                let x = src.point(s);
                let val = z[0] * x[0] + z[1] * x[1] - g.values[s];
                if val > best.0 {
                    best = (val, s);
                }
            }
            (best.0, best.1 != usize::MAX && src.on_boundary(best.1))
        })
        .collect();
    let hits = out.iter().filter(|o| o.1).count();
    let report = LegendreReport::new(hits, target.len(), warn_fraction);
    (ScalarField { grid: *target, values: out.into_iter().map(|o| o.0).collect() }, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_dual_quadratic() {
        let src = Grid::unit_square(0.0, 41);
        let g = ScalarField::from_fn(src, |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        let tgt = Grid::square([0.0, 0.0], 1.0, 41);
        let (gs, _) = legendre_transform(&g, &tgt, 1.0);
        // |z|^2 / 2 at z = (0.5, 0.5)
        let k = tgt.idx(20, 20);
        assert!((gs.values[k] - 0.25).abs() < src.h, "{}", gs.values[k]);
    }

    #[test]
    fn linear_function_corner() {
        let src = Grid::unit_square(0.0, 21);
        let g = ScalarField::from_fn(src, |x1, x2| 0.3 * x1 + 0.3 * x2);
        let tgt = Grid::square([0.0, 0.0], 1.0, 11);
        let (gs, _) = legendre_transform(&g, &tgt, 1.0);
        assert!((gs.values[tgt.idx(10, 0)] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn factorized_matches_brute_force() {
        let src = Grid::unit_square(0.5, 13);
        let g = ScalarField::from_fn(src, |x1, x2| (x1 - 0.7).powi(2) + 0.3 * x1 * x2 + (x2 * 1.7).cosh());
        let tgt = Grid::square([-0.5, 0.2], 2.5, 17);
        let (f, rf) = legendre_transform(&g, &tgt, 0.5);
        let (b, rb) = legendre_transform_brute(&g, &tgt, 0.5);
        for k in 0..tgt.len() {
            assert!((f.values[k] - b.values[k]).abs() < 1e-12);
        }
        assert!((rf.boundary_fraction - rb.boundary_fraction).abs() < 0.05);
    }

    #[test]
    fn infinite_values_are_skipped() {
        let src = Grid::unit_square(0.0, 9);
        let mut g = ScalarField::zeros(src);
        g.values.iter_mut().skip(1).for_each(|v| *v = f64::INFINITY);
        let tgt = Grid::square([0.0, 0.0], 1.0, 5);
        let (f, _) = legendre_transform(&g, &tgt, 1.0);
        assert!(f.values.iter().all(|v| *v == 0.0));
    }
}
