//! Piecewise layout of the type square: exclusion triangle, blunt strip,
//! rotating bunches along the two lower-left edges, and the customization region.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use super::blunt::BluntProfile;
use super::foliation::{BunchFoliation, Leaf};
use crate::error::{Error, Result};
use crate::model::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Piece {
    Excluded,
    Blunt,
    Targeted,
    Custom,
}

impl Piece {
    /// Seam priority: larger wins.
    pub fn priority(&self) -> u8 {
        match self {
            Piece::Excluded => 0,
            Piece::Blunt | Piece::Targeted => 1,
            Piece::Custom => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterfaceShape {
    /// Customization starts at the line `x1 + x2 = t`.
    Straight { t: f64 },
    /// Customization starts at the far ends of the rotating bunches.
    Foliated { foliation: BunchFoliation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundaryGeometry {
    pub a: f64,
    pub blunt: BluntProfile,
    /// Left-edge height where the rotating bunches start; the blunt strip is
    /// `blunt.t0 < x1 + x2 <= a + h_low`.
    pub h_low: f64,
    pub shape: InterfaceShape,
}

/// Where a point of the upper half sits relative to the bunch chart.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChartPoint {
    pub leaf: Leaf,
    pub r: f64,
    /// `r - R(theta)`; positive beyond the end of the leaf.
    pub excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceSample {
    pub point: [f64; 2],
    /// Unit normal pointing into the customization region.
    pub normal: [f64; 2],
    /// Value and gradient of the bunching piece at the point.
    pub value: f64,
    pub gradient: [f64; 2],
    pub theta: f64,
    /// Length of the leaf ending here; zero marks a sample with no interface behind it.
    pub length: f64,
}

impl FreeBoundaryGeometry {
    /// Straight interface at `x1 + x2 = t`, with the blunt profile anchored on the exclusion line.
    pub fn straight(a: f64, blunt: BluntProfile, t: f64) -> Result<Self> {
        if !(t >= blunt.t0 - 1e-14 && t <= 2.0 * a + 2.0) {
            return Err(Error::InvalidGeometry(format!("interface line x1 + x2 = {t} outside [{}, {}]", blunt.t0, 2.0 * a + 2.0)));
        }
        Ok(FreeBoundaryGeometry { a, blunt, h_low: (t - a).min(a + 1.0), shape: InterfaceShape::Straight { t } })
    }

    /// Checks that the leaves start on the left edge with non-decreasing
    /// height, stay inside the square and do not cross the diagonal.
    pub fn foliated(a: f64, foliation: BunchFoliation) -> Result<Self> {
        if !foliation.h_monotone(1e-12) {
            let k = foliation.h.windows(2).position(|w| w[1] < w[0] - 1e-12).unwrap_or(0);
            return Err(Error::InvalidGeometry(format!(
                "leaf heights decrease near theta = {:.4} (h' = {:.3e})",
                foliation.theta[k], foliation.dh[k]
            )));
        }
        let top = a + 1.0 + 1e-12;
        for k in 0..foliation.len() {
            let l = foliation.leaf(k);
            let end = l.point(a, l.r);
            if l.h > top || end[1] > top || end[0] > top {
                return Err(Error::InvalidGeometry(format!("leaf at theta = {:.4} leaves the square at {end:?}", l.theta)));
            }
            if end[1] < end[0] - 1e-9 {
                return Err(Error::InvalidGeometry(format!("leaf at theta = {:.4} crosses the diagonal", l.theta)));
            }
        }
        let h_low = foliation.h_low;
        Ok(FreeBoundaryGeometry { a, blunt: BluntProfile::new(a), h_low, shape: InterfaceShape::Foliated { foliation } })
    }

    pub fn exclusion_offset(&self) -> f64 {
        self.blunt.t0 - self.a
    }

    pub fn strip_end(&self) -> f64 {
        match &self.shape {
            InterfaceShape::Straight { t } => *t,
            InterfaceShape::Foliated { .. } => self.a + self.h_low,
        }
    }

    fn upper(p: [f64; 2]) -> [f64; 2] {
        if p[1] >= p[0] {
            p
        } else {
            [p[1], p[0]]
        }
    }

    /// Invert `p = (a, h(theta)) + r (cos, sin)` for a point of the upper half above the strip.
    pub(crate) fn chart(&self, fol: &BunchFoliation, p: [f64; 2]) -> Option<ChartPoint> {
        let a = self.a;
        let dx = p[0] - self.a;
        let lo = -FRAC_PI_4;
        let hi = fol.theta_bar;
        if dx <= 1e-14 {
            // on the left edge: leaves start here, and a vertical last leaf may run along it
            let last = fol.at(hi);
            if p[1] > last.h {
                if hi >= std::f64::consts::FRAC_PI_2 - 1e-12 {
                    let r = p[1] - last.h;
                    return Some(ChartPoint { leaf: last, r, excess: r - last.r });
                }
                return None;
            }
            let (mut l, mut u) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (l + u);
                if fol.at(mid).h < p[1] {
                    l = mid;
                } else {
                    u = mid;
                }
                if u - l < 1e-15 {
                    break;
                }
            }
            let leaf = fol.at(0.5 * (l + u));
            return Some(ChartPoint { leaf, r: 0.0, excess: -leaf.r });
        }
        let f = |th: f64| fol.at(th).h + dx * th.tan() - p[1];
        if f(lo) > 0.0 {
            return None;
        }
        let top = if hi >= std::f64::consts::FRAC_PI_2 - 1e-12 { hi - 1e-12 } else { hi };
        if f(top) < 0.0 {
            return None;
        }
        let (mut l, mut u) = (lo, top);
        for _ in 0..200 {
            let mid = 0.5 * (l + u);
            if f(mid) < 0.0 {
                l = mid;
            } else {
                u = mid;
            }
            if u - l < 1e-15 {
                break;
            }
        }
        let th = 0.5 * (l + u);
        let leaf = fol.at(th);
        let r = dx / th.cos();
        let q = leaf.point(a, r);
        debug_assert!((q[1] - p[1]).abs() < 1e-6);
        Some(ChartPoint { leaf, r, excess: r - leaf.r })
    }

    pub fn piece(&self, p: [f64; 2]) -> Piece {
        let t = p[0] + p[1];
        if t <= self.blunt.t0 {
            return Piece::Excluded;
        }
        if t <= self.strip_end() {
            return Piece::Blunt;
        }
        match &self.shape {
            InterfaceShape::Straight { .. } => Piece::Custom,
            InterfaceShape::Foliated { foliation } => match self.chart(foliation, Self::upper(p)) {
                Some(c) if c.excess <= 0.0 => Piece::Targeted,
                _ => Piece::Custom,
            },
        }
    }

    /// Signed level: positive inside the customization region.
    pub fn custom_level(&self, p: [f64; 2]) -> f64 {
        let t = p[0] + p[1];
        let strip = t - self.strip_end();
        if strip <= 0.0 {
            return strip;
        }
        match &self.shape {
            InterfaceShape::Straight { .. } => strip,
            InterfaceShape::Foliated { foliation } => match self.chart(foliation, Self::upper(p)) {
                Some(c) => c.excess,
                None => 1.0,
            },
        }
    }

    /// Value of the bunching solution, continued past its region where the
    /// formula still makes sense (leaf-wise affine, or the blunt profile in `t`).
    pub fn bunching_value(&self, p: [f64; 2]) -> f64 {
        let t = p[0] + p[1];
        if t <= self.blunt.t0 {
            return 0.0;
        }
        if t <= self.strip_end() {
            return self.blunt.value(t).unwrap_or(0.0);
        }
        match &self.shape {
            InterfaceShape::Straight { .. } => self.blunt.value(t).unwrap_or(f64::NAN),
            InterfaceShape::Foliated { foliation } => match self.chart(foliation, Self::upper(p)) {
                Some(c) => c.leaf.value(c.r),
                None => f64::NAN,
            },
        }
    }

    pub fn bunching_gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let t = p[0] + p[1];
        if t <= self.blunt.t0 {
            return [0.0, 0.0];
        }
        let blunt = |t: f64| {
            let s = self.blunt.slope(t).unwrap_or(f64::NAN);
            [s, s]
        };
        if t <= self.strip_end() {
            return blunt(t);
        }
        match &self.shape {
            InterfaceShape::Straight { .. } => blunt(t),
            InterfaceShape::Foliated { foliation } => match self.chart(foliation, Self::upper(p)) {
                Some(c) => {
                    let g = c.leaf.gradient();
                    if p[1] >= p[0] {
                        g
                    } else {
                        [g[1], g[0]]
                    }
                }
                None => [f64::NAN, f64::NAN],
            },
        }
    }

    /// Points where the customization region meets the bunches, upper half
    /// only (the lower half is the mirror image).
    pub fn interface_samples(&self, count: usize) -> Vec<InterfaceSample> {
        let count = count.max(2);
        let a = self.a;
        match &self.shape {
            InterfaceShape::Straight { t } => {
                let s_lo = (t - a - 1.0).max(a);
                let s_hi = 0.5 * t;
                let slope = self.blunt.slope(*t).unwrap_or(f64::NAN);
                let value = self.blunt.value(*t).unwrap_or(f64::NAN);
                let n = std::f64::consts::FRAC_1_SQRT_2;
                (0..count)
                    .map(|k| {
                        let s = s_lo + (s_hi - s_lo) * k as f64 / (count - 1) as f64;
                        InterfaceSample { point: [s, t - s], normal: [n, n], value, gradient: [slope, slope], theta: -FRAC_PI_4, length: 1.0 }
                    })
                    .collect()
            }
            InterfaceShape::Foliated { foliation } => {
                let lo = -FRAC_PI_4;
                // leaves of zero length add nothing to the interface
                let hi = match foliation.r.iter().rposition(|r| *r > 0.0) {
                    Some(k) if k + 1 < foliation.len() => foliation.theta[k + 1],
                    Some(_) => foliation.theta_bar,
                    None => lo,
                };
                let end = |th: f64| {
                    let l = foliation.at(th);
                    l.point(a, l.r)
                };
                let mut out = Vec::with_capacity(count);
                for k in 0..count {
                    let th = lo + (hi - lo) * k as f64 / (count - 1) as f64;
                    let leaf = foliation.at(th);
                    let d = 1e-5;
                    let (p0, p1) = (end((th - d).max(lo)), end((th + d).min(hi)));
                    let tan = [p1[0] - p0[0], p1[1] - p0[1]];
                    let len = tan[0].hypot(tan[1]);
                    let normal = if len > 0.0 { [tan[1] / len, -tan[0] / len] } else { leaf.direction() };
                    out.push(InterfaceSample { point: leaf.point(a, leaf.r), normal, value: leaf.value(leaf.r), gradient: leaf.gradient(), theta: th, length: leaf.r });
                }
                out
            }
        }
    }

    /// Exclusion line, end of the blunt strip, and the two branches of the customization boundary.
    pub fn polylines(&self, samples: usize) -> Vec<(String, Vec<[f64; 2]>)> {
        let a = self.a;
        let seg = |t: f64| {
            let lo = (t - a - 1.0).max(a);
            vec![[lo, t - lo], [t - lo, lo]]
        };
        let mut out = vec![("exclusion".to_string(), seg(self.blunt.t0)), ("blunt_end".to_string(), seg(self.strip_end()))];
        let upper: Vec<[f64; 2]> = self.interface_samples(samples).iter().filter(|s| s.length > 0.0).map(|s| s.point).collect();
        let lower: Vec<[f64; 2]> = upper.iter().map(|p| [p[1], p[0]]).collect();
        out.push(("interface_upper".to_string(), upper));
        out.push(("interface_lower".to_string(), lower));
        out
    }

    pub fn write_polylines_csv<W: std::io::Write>(&self, samples: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["curve", "x1", "x2"])?;
        for (name, pts) in self.polylines(samples) {
            for p in pts {
                w.write_record([name.clone(), fmt_f64(p[0]), fmt_f64(p[1])])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Largest distance from the full customization boundary (both branches)
    /// to its total-least-squares line.
    pub fn interface_line_deviation(&self, samples: usize) -> f64 {
        let mut pts: Vec<[f64; 2]> = self.interface_samples(samples).iter().filter(|s| s.length > 0.0).map(|s| s.point).collect();
        let mirrored: Vec<[f64; 2]> = pts.iter().map(|p| [p[1], p[0]]).collect();
        pts.extend(mirrored);
        line_deviation(&pts)
    }
}

/// Max distance from points to their total-least-squares line.
pub fn line_deviation(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // normal of the best-fit line is the eigenvector of the smaller eigenvalue
    let (_, _, v) = crate::region::sym_eigen(sxx, sxy, syy);
    pts.iter().map(|p| ((p[0] - c[0]) * v[0] + (p[1] - c[1]) * v[1]).abs()).fold(0.0, f64::max)
}
