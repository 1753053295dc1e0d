//! Rotating bunches attached to the left edge `x1 = a`.
//!
//! Leaf `theta` starts at `(a, h(theta))`, runs in direction `(cos, sin)` for a
//! length `R(theta)`, and the payoff along it is `b(theta) + r m(theta)`.

use serde::{Deserialize, Serialize};

use super::blunt::BluntProfile;
use crate::error::{Error, Result};

/// Smallest admissible `|m' sin - m cos + a|` during integration.
pub const SINGULARITY_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BunchFoliation {
    pub a: f64,
    pub h_low: f64,
    pub theta_bar: f64,
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub dm: Vec<f64>,
    /// Second derivative of `m` as given by the ODE at each sample.
    pub d2m: Vec<f64>,
    pub h: Vec<f64>,
    pub dh: Vec<f64>,
    pub b: Vec<f64>,
    pub db: Vec<f64>,
    pub r: Vec<f64>,
    pub denom: Vec<f64>,
    /// Sample indices where the length profile may lose smoothness (knots);
    /// always contains 0 and the last index.
    pub breaks: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leaf {
    pub theta: f64,
    pub m: f64,
    pub dm: f64,
    pub h: f64,
    pub b: f64,
    pub r: f64,
}

impl Leaf {
    pub fn direction(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }

    pub fn point(&self, a: f64, r: f64) -> [f64; 2] {
        let e = self.direction();
        [a + r * e[0], self.h + r * e[1]]
    }

    /// Gradient shared by every type on the leaf: `m e + m' e_perp`.
    pub fn gradient(&self) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.m * c - self.dm * s, self.m * s + self.dm * c]
    }

    pub fn value(&self, r: f64) -> f64 {
        self.b + r * self.m
    }
}

// `sign` is the sign of the denominator at the start; crossing zero between
// samples is as singular as landing on it.
fn rhs(a: f64, theta: f64, y: [f64; 4], length: &dyn Fn(f64) -> f64, sign: f64) -> Result<([f64; 4], f64, f64)> {
    let [m, dm, _, _] = y;
    let (s, c) = theta.sin_cos();
    let den = dm * s - m * c + a;
    if !(den * sign >= SINGULARITY_GUARD) {
        return Err(Error::SingularityAbort { theta, denom: den });
    }
    let r = length(theta);
    let d2m = 2.0 * r - m + 1.5 * r * r * c / den;
    let dh = r * r / (2.0 * den);
    let db = (dm * c + m * s) * dh;
    Ok(([dm, d2m, dh, db], den, r))
}

/// Integrate over `theta in [-pi/4, theta_bar]` with classical RK4 on a uniform grid of about `step`.
pub fn integrate_foliation(a: f64, h_low: f64, length: impl Fn(f64) -> f64, theta_bar: f64, step: f64) -> Result<BunchFoliation> {
    integrate_with_breaks(a, h_low, &length, theta_bar, step, &[])
}

/// As [`integrate_foliation`], with the grid refined so that every point of
/// `breakpoints` is a sample.
pub fn integrate_with_breaks(
    a: f64,
    h_low: f64,
    length: &dyn Fn(f64) -> f64,
    theta_bar: f64,
    step: f64,
    breakpoints: &[f64],
) -> Result<BunchFoliation> {
    let start = -std::f64::consts::FRAC_PI_4;
    if !(theta_bar > start && theta_bar <= std::f64::consts::FRAC_PI_2 + 1e-12) {
        return Err(Error::Config(format!("theta_bar = {theta_bar} must lie in (-pi/4, pi/2]")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("foliation step must be positive, got {step}")));
    }
    if !(h_low >= a && h_low <= a + 1.0) {
        return Err(Error::DomainViolation { what: "h_low must lie on the left edge [a, a+1]", value: h_low });
    }
    let blunt = BluntProfile::new(a);
    let t_low = a + h_low;
    if t_low < blunt.t0 - 1e-14 {
        return Err(Error::DomainViolation { what: "a + h_low lies inside the exclusion triangle", value: t_low });
    }
    let t_low = t_low.max(blunt.t0);

    // knot-aligned grid, each segment cut into equal substeps (at least 4)
    let mut cuts: Vec<f64> = breakpoints.iter().cloned().filter(|t| *t > start + 1e-12 && *t < theta_bar - 1e-12).collect();
    cuts.push(theta_bar);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    let mut grid = vec![start];
    let mut breaks = vec![0usize];
    let mut prev = start;
    for c in cuts {
        let pieces = (((c - prev) / step).ceil() as usize).max(4);
        for k in 1..=pieces {
            grid.push(if k == pieces { c } else { prev + (c - prev) * k as f64 / pieces as f64 });
        }
        breaks.push(grid.len() - 1);
        prev = c;
    }

    let n = grid.len();
    let mut fol = BunchFoliation {
        a,
        h_low,
        theta_bar,
        theta: grid.clone(),
        m: Vec::with_capacity(n),
        dm: Vec::with_capacity(n),
        d2m: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        dh: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        db: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        denom: Vec::with_capacity(n),
        breaks,
    };
    let mut y = [0.0, std::f64::consts::SQRT_2 * blunt.slope(t_low)?, h_low, blunt.value(t_low)?];
    let sign = if y[1] * start.sin() + a >= 0.0 { 1.0 } else { -1.0 };
    for k in 0..n {
        let th = grid[k];
        let (f, den, r) = rhs(a, th, y, length, sign)?;
        fol.m.push(y[0]);
        fol.dm.push(y[1]);
        fol.h.push(y[2]);
        fol.b.push(y[3]);
        fol.d2m.push(f[1]);
        fol.dh.push(f[2]);
        fol.db.push(f[3]);
        fol.r.push(r);
        fol.denom.push(den);
        if k + 1 == n {
            break;
        }
        let dt = grid[k + 1] - th;
        let k1 = f;
        let k2 = rhs(a, th + 0.5 * dt, add(y, k1, 0.5 * dt), length, sign)?.0;
        let k3 = rhs(a, th + 0.5 * dt, add(y, k2, 0.5 * dt), length, sign)?.0;
        let k4 = rhs(a, th + dt, add(y, k3, dt), length, sign)?.0;
        for i in 0..4 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepRejected { theta: grid[k + 1] });
        }
    }
    Ok(fol)
}

fn add(y: [f64; 4], k: [f64; 4], s: f64) -> [f64; 4] {
    [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2], y[3] + s * k[3]]
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let dx = x1 - x0;
    let t = (x - x0) / dx;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * dx * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * dx * d1
}

impl BunchFoliation {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn leaf(&self, k: usize) -> Leaf {
        Leaf { theta: self.theta[k], m: self.m[k], dm: self.dm[k], h: self.h[k], b: self.b[k], r: self.r[k] }
    }

    /// Hermite interpolation between samples; clamps `theta` to the integration range.
    pub fn at(&self, theta: f64) -> Leaf {
        let n = self.len();
        let th = theta.clamp(self.theta[0], self.theta[n - 1]);
        let k = match self.theta.binary_search_by(|v| v.total_cmp(&th)) {
            Ok(k) => return self.leaf(k),
            Err(k) => k.clamp(1, n - 1) - 1,
        };
        let (x0, x1) = (self.theta[k], self.theta[k + 1]);
        let w = (th - x0) / (x1 - x0);
        Leaf {
            theta: th,
            m: hermite(x0, x1, self.m[k], self.m[k + 1], self.dm[k], self.dm[k + 1], th),
            dm: hermite(x0, x1, self.dm[k], self.dm[k + 1], self.d2m[k], self.d2m[k + 1], th),
            h: hermite(x0, x1, self.h[k], self.h[k + 1], self.dh[k], self.dh[k + 1], th),
            b: hermite(x0, x1, self.b[k], self.b[k + 1], self.db[k], self.db[k + 1], th),
            r: (1.0 - w) * self.r[k] + w * self.r[k + 1],
        }
    }

    /// Whether `h` never decreases by more than `tol`.
    pub fn h_monotone(&self, tol: f64) -> bool {
        self.h.windows(2).all(|w| w[1] >= w[0] - tol)
    }

    /// Fourth-order derivative of sampled data, never differencing across a break.
    pub fn differentiate(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        for seg in self.breaks.windows(2) {
            let (s, e) = (seg[0], seg[1]);
            let dt = (self.theta[e] - self.theta[s]) / (e - s) as f64;
            let f = |i: usize| y[i];
            for i in s..=e {
                out[i] = if i >= s + 2 && i + 2 <= e {
                    (f(i - 2) - 8.0 * f(i - 1) + 8.0 * f(i + 1) - f(i + 2)) / (12.0 * dt)
                } else if i == s {
                    (-25.0 * f(i) + 48.0 * f(i + 1) - 36.0 * f(i + 2) + 16.0 * f(i + 3) - 3.0 * f(i + 4)) / (12.0 * dt)
                } else if i == s + 1 {
                    (-3.0 * f(i - 1) - 10.0 * f(i) + 18.0 * f(i + 1) - 6.0 * f(i + 2) + f(i + 3)) / (12.0 * dt)
                } else if i == e {
                    (25.0 * f(i) - 48.0 * f(i - 1) + 36.0 * f(i - 2) - 16.0 * f(i - 3) + 3.0 * f(i - 4)) / (12.0 * dt)
                } else {
                    (3.0 * f(i + 1) + 10.0 * f(i) - 18.0 * f(i - 1) + 6.0 * f(i - 2) - f(i - 3)) / (12.0 * dt)
                };
            }
        }
        out
    }

    /// `(m'' + m - 2R)(m' sin - m cos + a) - 3/2 R^2 cos` with `m''` recovered
    /// by differencing the sampled `m'`.
    pub fn slope_residual(&self) -> Vec<f64> {
        let d2m = self.differentiate(&self.dm);
        (0..self.len())
            .map(|k| {
                let (s, c) = self.theta[k].sin_cos();
                let r = self.r[k];
                (d2m[k] + self.m[k] - 2.0 * r) * (self.dm[k] * s - self.m[k] * c + self.a) - 1.5 * r * r * c
            })
            .collect()
    }

    /// Largest `|integral_0^R (R^2/2 - 2 R r + 3/2 r^2) dr|` over the samples.
    pub fn zeta_residual(&self) -> f64 {
        self.r.iter().filter(|r| **r > 0.0).map(|r| zeta_integral(*r).abs()).fold(0.0, f64::max)
    }
}

/// Residuals of the two leaf-wise Euler-Lagrange conditions, with `m''` and
/// `h'` obtained by differencing the sampled `m'` and `h`:
///
/// `alpha = (m + m'' - 3 h' cos) R - 3/2 R^2 + (m cos - m' sin - a) h'`,
/// `beta = 1/2 (m + m'' - 3 h' cos) R^2 - R^3`.
pub fn alpha_beta_residuals(fol: &BunchFoliation, a: f64) -> (Vec<f64>, Vec<f64>) {
    let d2m = fol.differentiate(&fol.dm);
    let dh = fol.differentiate(&fol.h);
    let mut alpha = Vec::with_capacity(fol.len());
    let mut beta = Vec::with_capacity(fol.len());
    for k in 0..fol.len() {
        let (s, c) = fol.theta[k].sin_cos();
        let r = fol.r[k];
        let core = fol.m[k] + d2m[k] - 3.0 * dh[k] * c;
        alpha.push(core * r - 1.5 * r * r + (fol.m[k] * c - fol.dm[k] * s - a) * dh[k]);
        beta.push(0.5 * core * r * r - r * r * r);
    }
    (alpha, beta)
}

/// Composite Simpson rule (64 panels) for `integral_0^R (R^2/2 - 2 R r + 3/2 r^2) dr`, which vanishes exactly.
pub fn zeta_integral(length: f64) -> f64 {
    let panels = 64;
    let dr = length / panels as f64;
    let f = |r: f64| 0.5 * length * length - 2.0 * length * r + 1.5 * r * r;
    let mut s = f(0.0) + f(length);
    for k in 1..panels {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * dr);
    }
    s * dr / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    #[test]
    fn zero_length_closed_form() {
        let fol = integrate_foliation(0.0, 1.0, |_| 0.0, FRAC_PI_2, 1e-3).unwrap();
        let amp = SQRT_2 * 0.25;
        let g1 = BluntProfile::new(0.0).value(1.0).unwrap();
        for k in 0..fol.len() {
            let th = fol.theta[k];
            assert!((fol.m[k] - amp * (th + FRAC_PI_4).sin()).abs() < 1e-10);
            assert!((fol.dm[k] - amp * (th + FRAC_PI_4).cos()).abs() < 1e-10);
            assert_eq!(fol.h[k], 1.0);
            assert!((fol.b[k] - g1).abs() < 1e-15);
        }
        assert!((amp - 0.3535534).abs() < 1e-7);
    }

    #[test]
    fn initial_data_exact() {
        let fol = integrate_foliation(1.0, 1.45, |t| 0.3 * (1.0 - t / 3.0), FRAC_PI_2, 1e-3).unwrap();
        assert_eq!(fol.m[0], 0.0);
        assert_eq!(fol.h[0], 1.45);
        assert_eq!(fol.theta[0], -FRAC_PI_4);
        assert_eq!(*fol.theta.last().unwrap(), FRAC_PI_2);
    }

    #[test]
    fn singular_start_aborts() {
        // at a = 0 the leaf through the exclusion corner has a vanishing denominator
        let x = super::super::blunt::exclusion_boundary(0.0);
        let err = integrate_foliation(0.0, x, |_| 0.2, FRAC_PI_2, 1e-3).unwrap_err();
        assert!(matches!(err, Error::SingularityAbort { .. }), "{err:?}");
    }

    #[test]
    fn denominator_sign_change_aborts() {
        // a tall start with a slowly shrinking length drives the denominator through zero
        let r0 = 0.6 / SQRT_2;
        let err = integrate_foliation(1.0, 1.6, |t| r0 * (1.0 - 0.4 * (t + FRAC_PI_4)), 1.0, 1e-3).unwrap_err();
        assert!(matches!(err, Error::SingularityAbort { .. }), "{err:?}");
    }

    #[test]
    fn residuals_small_for_smooth_length() {
        let a = 1.0;
        let h_low = 1.45;
        let r0 = (h_low - a) / SQRT_2;
        let fol = integrate_foliation(a, h_low, |t| r0 * (1.0 - 0.4 * (t + FRAC_PI_4)), 1.0, 1e-3).unwrap();
        let slope = fol.slope_residual().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(slope < 1e-8, "{slope}");
        let (al, be) = alpha_beta_residuals(&fol, a);
        let worst = al.iter().chain(&be).fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-6, "{worst}");
        assert!(fol.zeta_residual() < 1e-12);
        assert!(fol.h_monotone(0.0));
    }

    #[test]
    fn interpolation_reproduces_samples() {
        let fol = integrate_foliation(1.0, 1.45, |_| 0.3, 1.2, 1e-2).unwrap();
        let k = 17;
        let l = fol.at(fol.theta[k]);
        assert_eq!(l.h, fol.h[k]);
        let mid = 0.5 * (fol.theta[k] + fol.theta[k + 1]);
        let l = fol.at(mid);
        assert!(l.h >= fol.h[k] && l.h <= fol.h[k + 1]);
    }

    #[test]
    fn leaf_gradient_is_rotated_slopes() {
        let l = Leaf { theta: 0.3, m: 0.5, dm: 0.2, h: 1.0, b: 0.0, r: 0.1 };
        let g = l.gradient();
        let e = l.direction();
        assert!((g[0] * e[0] + g[1] * e[1] - 0.5).abs() < 1e-15);
        assert!((-g[0] * e[1] + g[1] * e[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zeta_vanishes() {
        for r in [0.01, 0.3, 1.0, 1.4] {
            assert!(zeta_integral(r).abs() < 1e-12);
        }
    }
}
