//! Shape-preserving cubic interpolation for the ruling length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible ruling length (exclusive bound, the diagonal of the unit square).
pub const MAX_LENGTH: f64 = std::f64::consts::SQRT_2 - 1e-9;

/// Piecewise cubic Hermite interpolant with Fritsch-Carlson slopes on uniform
/// knots. Evaluation is clamped to `[0, MAX_LENGTH]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthProfile {
    pub start: f64,
    pub end: f64,
    pub values: Vec<f64>,
    slopes: Vec<f64>,
}

impl LengthProfile {
    pub fn new(start: f64, end: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("length profile needs at least two knots".into()));
        }
        if !(end > start) {
            return Err(Error::Config(format!("length profile interval [{start}, {end}] is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("length profile knot values must be finite".into()));
        }
        let k = values.len();
        let dx = (end - start) / (k - 1) as f64;
        let secant: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / dx).collect();
        let mut slopes = vec![0.0; k];
        slopes[0] = secant[0];
        slopes[k - 1] = secant[k - 2];
        for i in 1..k - 1 {
            let (d0, d1) = (secant[i - 1], secant[i]);
            slopes[i] = if d0 * d1 <= 0.0 { 0.0 } else { 2.0 / (1.0 / d0 + 1.0 / d1) };
        }
        // keep endpoint slopes from overshooting
        for (e, s) in [(0usize, 0usize), (k - 1, k - 2)] {
            if slopes[e] * secant[s] <= 0.0 {
                slopes[e] = 0.0;
            } else if slopes[e].abs() > 3.0 * secant[s].abs() {
                slopes[e] = 3.0 * secant[s];
            }
        }
        Ok(LengthProfile { start, end, values, slopes })
    }

    pub fn constant(start: f64, end: f64, knots: usize, value: f64) -> Result<Self> {
        Self::new(start, end, vec![value; knots.max(2)])
    }

    pub fn knots(&self) -> Vec<f64> {
        let k = self.values.len();
        (0..k).map(|i| self.start + (self.end - self.start) * i as f64 / (k - 1) as f64).collect()
    }

    fn raw(&self, x: f64) -> (f64, f64) {
        let k = self.values.len();
        let dx = (self.end - self.start) / (k - 1) as f64;
        let s = ((x - self.start) / dx).clamp(0.0, (k - 1) as f64);
        let i = (s.floor() as usize).min(k - 2);
        let t = s - i as f64;
        let (y0, y1, m0, m1) = (self.values[i], self.values[i + 1], self.slopes[i] * dx, self.slopes[i + 1] * dx);
        let (t2, t3) = (t * t, t * t * t);
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let d = ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1) / dx;
        (v, d)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.raw(x).0.clamp(0.0, MAX_LENGTH)
    }

    /// One-sided derivative consistent with the clamping.
    pub fn derivative(&self, x: f64) -> f64 {
        let (v, d) = self.raw(x);
        if v <= 0.0 || v >= MAX_LENGTH {
            0.0
        } else {
            d
        }
    }
}
