//! Exclusion line and the closed-form profile of the blunt bunching strip.

use crate::error::{Error, Result};

/// Position `s` of the exclusion line `x1 + x2 = a + s`, the positive root of
/// `3 (s - a)^2 + 4 a (s - a) - 2 = 0`.
pub fn exclusion_boundary(a: f64) -> f64 {
    (a + (4.0 * a * a + 6.0).sqrt()) / 3.0
}

/// `g(t) = 3/8 t^2 - a/2 t - c1 ln(t - 2a) + c0`, a function of `t = x1 + x2`.
///
/// Every member of this family solves `(2 - 2 g'') (t - 2a) + t - 2 g' = 0`;
/// the anchor `t0` fixes `g(t0) = g'(t0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BluntProfile {
    pub a: f64,
    pub t0: f64,
    pub c1: f64,
    pub c0: f64,
}

impl BluntProfile {
    /// Anchored on the exclusion line, where `c1 = 1/2`.
    pub fn new(a: f64) -> Self {
        Self::anchored(a, a + exclusion_boundary(a)).expect("exclusion line lies above t = 2a")
    }

    pub fn anchored(a: f64, t0: f64) -> Result<Self> {
        if !(t0 > 2.0 * a) {
            return Err(Error::DomainViolation { what: "blunt profile anchor must exceed 2a", value: t0 });
        }
        let c1 = (t0 - 2.0 * a) * (0.75 * t0 - 0.5 * a);
        let c0 = -0.375 * t0 * t0 + 0.5 * a * t0 + c1 * (t0 - 2.0 * a).ln();
        Ok(BluntProfile { a, t0, c1, c0 })
    }

    fn check(&self, t: f64) -> Result<f64> {
        let s = t - 2.0 * self.a;
        if !(s > 0.0) {
            return Err(Error::DomainViolation { what: "blunt profile needs t > 2a", value: t });
        }
        Ok(s)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        let s = self.check(t)?;
        Ok(0.375 * t * t - 0.5 * self.a * t - self.c1 * s.ln() + self.c0)
    }

    pub fn slope(&self, t: f64) -> Result<f64> {
        let s = self.check(t)?;
        Ok(0.75 * t - 0.5 * self.a - self.c1 / s)
    }

    pub fn curvature(&self, t: f64) -> Result<f64> {
        let s = self.check(t)?;
        Ok(0.75 + self.c1 / (s * s))
    }

    /// `(2 - 2 g'') (t - 2a) + t - 2 g'`
    pub fn ode_residual(&self, t: f64) -> Result<f64> {
        Ok((2.0 - 2.0 * self.curvature(t)?) * (t - 2.0 * self.a) + t - 2.0 * self.slope(t)?)
    }
}

/// `(g(t), g'(t))` for the profile anchored on the exclusion line.
pub fn blunt_profile(t: f64, a: f64) -> Result<(f64, f64)> {
    let p = BluntProfile::new(a);
    Ok((p.value(t)?, p.slope(t)?))
}
