//! Stratification of the type space by the rank of the discrete Hessian, and
//! extraction of the straight bunches inside the rank-one part.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{gradient, io::fmt_f64, Grid, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLabel {
    Excluded,
    BluntBunch,
    TargetedBunch,
    Customized,
}

impl RegionLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionLabel::Excluded => "excluded",
            RegionLabel::BluntBunch => "blunt_bunch",
            RegionLabel::TargetedBunch => "targeted_bunch",
            RegionLabel::Customized => "customized",
        }
    }

    pub fn is_bunch(&self) -> bool {
        matches!(self, RegionLabel::BluntBunch | RegionLabel::TargetedBunch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Eigenvalue magnitude below which a direction counts as flat.
    pub rank: f64,
    /// Angular tolerance (radians) for the anti-diagonal test.
    pub angle: f64,
    /// Allowed gradient spread along a bunch.
    pub bunch: f64,
}

impl Thresholds {
    pub fn for_grid(grid: &Grid) -> Self {
        Thresholds { rank: 10.0 * grid.h, angle: 3f64.to_radians(), bunch: 5.0 * grid.h }
    }
}

/// Symmetric 2x2 eigen-decomposition: `(lam1, lam2, unit eigenvector of lam1)`, `lam1 <= lam2`.
pub fn sym_eigen(hxx: f64, hxy: f64, hyy: f64) -> (f64, f64, [f64; 2]) {
    let mean = 0.5 * (hxx + hyy);
    let rad = (0.25 * (hxx - hyy).powi(2) + hxy * hxy).sqrt();
    let (l1, l2) = (mean - rad, mean + rad);
    // (hxy, l1 - hxx) and (l1 - hyy, hxy) both span the kernel of H - l1; take the larger
    let v1 = [hxy, l1 - hxx];
    let v2 = [l1 - hyy, hxy];
    let (n1, n2) = (v1[0].hypot(v1[1]), v2[0].hypot(v2[1]));
    let v = if n1 == 0.0 && n2 == 0.0 {
        [1.0, 0.0]
    } else if n1 >= n2 {
        [v1[0] / n1, v1[1] / n1]
    } else {
        [v2[0] / n2, v2[1] / n2]
    };
    (l1, l2, v)
}

/// Nodal Hessian from the 9-point stencil; edge nodes reuse the nearest interior stencil.
pub fn hessian(u: &ScalarField) -> Vec<[f64; 3]> {
    let g = u.grid;
    let n = g.n;
    let h2 = g.h * g.h;
    (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = g.ij(k);
            let (i, j) = (i.clamp(1, n - 2), j.clamp(1, n - 2));
            let c = u.at(i, j);
            let hxx = (u.at(i + 1, j) - 2.0 * c + u.at(i - 1, j)) / h2;
            let hyy = (u.at(i, j + 1) - 2.0 * c + u.at(i, j - 1)) / h2;
            let hxy = (u.at(i + 1, j + 1) - u.at(i + 1, j - 1) - u.at(i - 1, j + 1) + u.at(i - 1, j - 1)) / (4.0 * h2);
            [hxx, hxy, hyy]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub grid: Grid,
    pub labels: Vec<RegionLabel>,
    pub lam1: Vec<f64>,
    pub lam2: Vec<f64>,
    /// Unit eigenvector of the smaller eigenvalue.
    pub flat_dir: Vec<[f64; 2]>,
    pub det: Vec<f64>,
    pub thresholds: Thresholds,
}

pub fn classify_regions(u: &ScalarField, th: &Thresholds) -> RegionMask {
    let g = u.grid;
    let hess = hessian(u);
    let anti = std::f64::consts::FRAC_1_SQRT_2;
    let cos_tol = th.angle.cos();
    let rows: Vec<(RegionLabel, f64, f64, [f64; 2], f64)> = hess
        .par_iter()
        .map(|&[hxx, hxy, hyy]| {
            let (l1, l2, v) = sym_eigen(hxx, hxy, hyy);
            let label = if l1.abs() + l2.abs() <= th.rank {
                RegionLabel::Excluded
            } else if l1 >= th.rank {
                RegionLabel::Customized
            } else if (v[0] * anti - v[1] * anti).abs() >= cos_tol {
                RegionLabel::BluntBunch
            } else {
                RegionLabel::TargetedBunch
            };
            (label, l1, l2, v, hxx * hyy - hxy * hxy)
        })
        .collect();
    RegionMask {
        grid: g,
        labels: rows.iter().map(|r| r.0).collect(),
        lam1: rows.iter().map(|r| r.1).collect(),
        lam2: rows.iter().map(|r| r.2).collect(),
        flat_dir: rows.iter().map(|r| r.3).collect(),
        det: rows.iter().map(|r| r.4).collect(),
        thresholds: *th,
    }
}

impl RegionMask {
    /// Trapezoid area carried by each label, in the order
    /// excluded, blunt, targeted, customized.
    pub fn area_fractions(&self) -> [f64; 4] {
        let w = self.grid.trapezoid_weights();
        let total: f64 = w.iter().sum();
        let mut out = [0.0; 4];
        for (l, wk) in self.labels.iter().zip(&w) {
            out[*l as usize] += wk / total;
        }
        out
    }

    /// Labels met along the diagonal from the lower-left corner, with repeats collapsed.
    pub fn diagonal_sequence(&self) -> Vec<RegionLabel> {
        let mut seq: Vec<RegionLabel> = Vec::new();
        for i in 0..self.grid.n {
            let l = self.labels[self.grid.idx(i, i)];
            if seq.last() != Some(&l) {
                seq.push(l);
            }
        }
        seq
    }

    pub fn is_symmetric(&self) -> bool {
        let g = self.grid;
        (0..g.n).all(|j| (0..g.n).all(|i| self.labels[g.idx(i, j)] == self.labels[g.idx(j, i)]))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2", "label", "lam1", "lam2"])?;
        for k in 0..self.grid.len() {
            let p = self.grid.point(k);
            w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), self.labels[k].as_str().into(), fmt_f64(self.lam1[k]), fmt_f64(self.lam2[k])])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BunchSegment {
    pub endpoints: [[f64; 2]; 2],
    /// Direction from the first to the second endpoint, in (-pi/2, pi/2].
    pub theta: f64,
    /// Mean gradient along the segment: the product chosen by the bunch.
    pub product: [f64; 2],
    /// Mean distance of traced points from the chord.
    pub residual: f64,
    pub max_chord_distance: f64,
    pub gradient_spread: f64,
    pub label: RegionLabel,
}

fn bilinear(grid: &Grid, vals: &[f64], p: [f64; 2]) -> f64 {
    let n = grid.n;
    let s = ((p[0] - grid.lo[0]) / grid.h).clamp(0.0, (n - 1) as f64);
    let t = ((p[1] - grid.lo[1]) / grid.h).clamp(0.0, (n - 1) as f64);
    let (i, j) = ((s.floor() as usize).min(n - 2), (t.floor() as usize).min(n - 2));
    let (fs, ft) = (s - i as f64, t - j as f64);
    let v = |a: usize, b: usize| vals[grid.idx(a, b)];
    (1.0 - fs) * (1.0 - ft) * v(i, j) + fs * (1.0 - ft) * v(i + 1, j) + (1.0 - fs) * ft * v(i, j + 1) + fs * ft * v(i + 1, j + 1)
}

fn nearest(grid: &Grid, p: [f64; 2]) -> Option<usize> {
    let s = ((p[0] - grid.lo[0]) / grid.h).round();
    let t = ((p[1] - grid.lo[1]) / grid.h).round();
    let m = (grid.n - 1) as f64;
    if s < 0.0 || t < 0.0 || s > m || t > m {
        return None;
    }
    Some(grid.idx(s as usize, t as usize))
}

fn inside(grid: &Grid, p: [f64; 2]) -> bool {
    let hi = grid.hi();
    let tol = 1e-12;
    p[0] >= grid.lo[0] - tol && p[1] >= grid.lo[1] - tol && p[0] <= hi[0] + tol && p[1] <= hi[1] + tol
}

/// March from `start` along the flat direction until the rank-one region or
/// the gradient level set is left.
fn march(u: &ScalarField, du: &VectorField, mask: &RegionMask, start: [f64; 2], dir0: [f64; 2], y0: [f64; 2]) -> Vec<[f64; 2]> {
    let g = &u.grid;
    let step = 0.5 * g.h;
    let mut pts = Vec::new();
    let mut p = start;
    let mut d = dir0;
    for _ in 0..(8 * g.n) {
        let q = [p[0] + step * d[0], p[1] + step * d[1]];
        if !inside(g, q) {
            break;
        }
        let Some(k) = nearest(g, q) else { break };
        if !mask.labels[k].is_bunch() {
            break;
        }
        let y = [bilinear(g, &du.g1, q), bilinear(g, &du.g2, q)];
        if (y[0] - y0[0]).hypot(y[1] - y0[1]) > mask.thresholds.bunch {
            break;
        }
        let mut nd = mask.flat_dir[k];
        if nd[0] * d[0] + nd[1] * d[1] < 0.0 {
            nd = [-nd[0], -nd[1]];
        }
        d = nd;
        p = q;
        pts.push(p);
    }
    pts
}

/// Trace bunches through the rank-one nodes. Seeds are taken in order of
/// increasing `|det D^2u|` (ties by node index); nodes within one cell of an
/// accepted trace are not reused as seeds.
pub fn extract_bunches(u: &ScalarField, mask: &RegionMask) -> Vec<BunchSegment> {
    let g = u.grid;
    let du = gradient(u);
    let mut seeds: Vec<usize> = (0..g.len()).filter(|&k| mask.labels[k].is_bunch()).collect();
    seeds.sort_by(|&a, &b| mask.det[a].abs().total_cmp(&mask.det[b].abs()).then(a.cmp(&b)));
    let mut used = vec![false; g.len()];
    let mut out = Vec::new();
    for s in seeds {
        if used[s] {
            continue;
        }
        let p0 = g.point(s);
        let y0 = du.at(s);
        let d = mask.flat_dir[s];
        let mut back = march(u, &du, mask, p0, [-d[0], -d[1]], y0);
        let fwd = march(u, &du, mask, p0, d, y0);
        back.reverse();
        let mut pts = back;
        pts.push(p0);
        pts.extend(fwd);
        for p in &pts {
            if let Some(k) = nearest(&g, *p) {
                used[k] = true;
            }
        }
        used[s] = true;
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        if len < 2.0 * g.h {
            continue;
        }
        // orient left to right (then bottom to top)
        let (a, b) = if b[0] < a[0] - 1e-12 || ((b[0] - a[0]).abs() <= 1e-12 && b[1] < a[1]) { (b, a) } else { (a, b) };
        let t = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let mut dsum = 0.0;
        let mut dmax = 0.0_f64;
        let mut ysum = [0.0, 0.0];
        let mut spread = 0.0_f64;
        let ys: Vec<[f64; 2]> = pts.iter().map(|p| [bilinear(&g, &du.g1, *p), bilinear(&g, &du.g2, *p)]).collect();
        for (p, y) in pts.iter().zip(&ys) {
            let dist = ((p[0] - a[0]) * t[1] - (p[1] - a[1]) * t[0]).abs();
            dsum += dist;
            dmax = dmax.max(dist);
            ysum[0] += y[0];
            ysum[1] += y[1];
        }
        for y in &ys {
            for z in &ys {
                spread = spread.max((y[0] - z[0]).hypot(y[1] - z[1]));
            }
        }
        let m = pts.len() as f64;
        out.push(BunchSegment {
            endpoints: [a, b],
            theta: t[1].atan2(t[0]),
            product: [ysum[0] / m, ysum[1] / m],
            residual: dsum / m,
            max_chord_distance: dmax,
            gradient_spread: spread,
            label: mask.labels[s],
        });
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.endpoints[0][1].total_cmp(&b.endpoints[0][1])));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbp::BluntProfile;

    #[test]
    fn eigen_closed_form() {
        let (l1, l2, v) = sym_eigen(2.0, 1.0, 2.0);
        assert!((l1 - 1.0).abs() < 1e-14 && (l2 - 3.0).abs() < 1e-14);
        assert!((v[0] + v[1]).abs() < 1e-14);
        let (l1, l2, v) = sym_eigen(0.0, 0.0, 0.0);
        assert_eq!((l1, l2), (0.0, 0.0));
        assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-14);
        let (l1, _, v) = sym_eigen(3.0, 0.0, 1.0);
        assert!((l1 - 1.0).abs() < 1e-14 && v[0].abs() < 1e-14);
    }

    #[test]
    fn zero_is_excluded_everywhere() {
        let g = Grid::unit_square(0.0, 17);
        let m = classify_regions(&ScalarField::zeros(g), &Thresholds::for_grid(&g));
        assert!(m.labels.iter().all(|l| *l == RegionLabel::Excluded));
    }

    #[test]
    fn half_square_is_customized() {
        let g = Grid::unit_square(0.0, 17);
        let u = ScalarField::from_fn(g, |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        let m = classify_regions(&u, &Thresholds::for_grid(&g));
        assert!(m.labels.iter().all(|l| *l == RegionLabel::Customized));
        assert!(extract_bunches(&u, &m).is_empty());
    }

    #[test]
    fn blunt_strip_is_blunt_bunching() {
        let a = 0.0;
        let p = BluntProfile::new(a);
        let g = Grid::unit_square(a, 33);
        let u = ScalarField::from_fn(g, |x1, x2| p.value((x1 + x2).max(p.t0)).unwrap());
        let th = Thresholds::for_grid(&g);
        let m = classify_regions(&u, &th);
        for k in 0..g.len() {
            let x = g.point(k);
            let t = x[0] + x[1];
            if t > p.t0 + 2.0 * g.h {
                assert_eq!(m.labels[k], RegionLabel::BluntBunch, "node {x:?}");
                let v = m.flat_dir[k];
                assert!((v[0] + v[1]).abs() < 1e-8);
            }
        }
        let segs = extract_bunches(&u, &m);
        assert!(!segs.is_empty());
        for s in &segs {
            assert!((s.theta + std::f64::consts::FRAC_PI_4).abs() <= th.angle, "{}", s.theta);
            assert!(s.max_chord_distance <= 1.5 * g.h);
            assert!(s.gradient_spread <= th.bunch);
        }
    }

    #[test]
    fn mask_csv_header() {
        let g = Grid::unit_square(0.0, 9);
        let m = classify_regions(&ScalarField::zeros(g), &Thresholds::for_grid(&g));
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x1,x2,label,lam1,lam2\n"));
    }
}
