//! Production cost on the product cone `[0, inf)^2` and its conjugate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostSpec {
    /// `c(y) = |y|^2 / 2`
    #[default]
    Quadratic,
    /// `c(y) = |y|^4`, used to exercise the non-quadratic code paths.
    Quartic,
}

fn positive_part(z: [f64; 2]) -> [f64; 2] {
    [z[0].max(0.0), z[1].max(0.0)]
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

impl CostSpec {
    /// Cost formula, evaluated without the `+inf` extension outside the cone.
    pub fn cost(&self, y: [f64; 2]) -> f64 {
        let r2 = y[0] * y[0] + y[1] * y[1];
        match self {
            CostSpec::Quadratic => 0.5 * r2,
            CostSpec::Quartic => r2 * r2,
        }
    }

    pub fn grad(&self, y: [f64; 2]) -> [f64; 2] {
        match self {
            CostSpec::Quadratic => y,
            CostSpec::Quartic => {
                let s = 4.0 * (y[0] * y[0] + y[1] * y[1]);
                [s * y[0], s * y[1]]
            }
        }
    }

    /// Conjugate over the cone: `sup_{y >= 0} z.y - c(y)`.
    pub fn conjugate(&self, z: [f64; 2]) -> f64 {
        let zp = positive_part(z);
        match self {
            CostSpec::Quadratic => 0.5 * (zp[0] * zp[0] + zp[1] * zp[1]),
            CostSpec::Quartic => {
                let r = norm(zp);
                0.75 * r * (r / 4.0).cbrt()
            }
        }
    }

    /// Maximizer of the conjugate problem, so that `conjugate_grad(grad(y)) = y` on the cone.
    pub fn conjugate_grad(&self, z: [f64; 2]) -> [f64; 2] {
        let zp = positive_part(z);
        match self {
            CostSpec::Quadratic => zp,
            CostSpec::Quartic => {
                let r = norm(zp);
                if r == 0.0 {
                    return [0.0, 0.0];
                }
                let s = (r / 4.0).cbrt() / r;
                [s * zp[0], s * zp[1]]
            }
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, CostSpec::Quadratic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_origin() {
        for c in [CostSpec::Quadratic, CostSpec::Quartic] {
            assert_eq!(c.cost([0.0, 0.0]), 0.0);
            assert_eq!(c.conjugate([0.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn round_trip_on_cone() {
        for c in [CostSpec::Quadratic, CostSpec::Quartic] {
            for k in 0..50 {
                let y = [0.07 * k as f64, 1.3 - 0.02 * k as f64];
                let back = c.conjugate_grad(c.grad(y));
                assert!((back[0] - y[0]).abs() < 1e-12 && (back[1] - y[1]).abs() < 1e-12, "{c:?} {y:?} {back:?}");
            }
        }
    }

    #[test]
    fn fenchel_equality_on_cone() {
        // c(y) + c*(Dc(y)) = y.Dc(y)
        for c in [CostSpec::Quadratic, CostSpec::Quartic] {
            let y = [0.3, 0.8];
            let z = c.grad(y);
            let lhs = c.cost(y) + c.conjugate(z);
            let rhs = y[0] * z[0] + y[1] * z[1];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugate_clips_negative_coordinates() {
        assert_eq!(CostSpec::Quadratic.conjugate([1.0, -2.0]), 0.5);
    }

    #[test]
    fn quartic_conjugate_dominates_samples() {
        // Fenchel-Young against a brute-force sup on a polar grid
        let c = CostSpec::Quartic;
        let z = [0.9, 0.4];
        let mut best = 0.0_f64;
        for i in 0..=400 {
            for j in 0..=400 {
                let y = [i as f64 / 400.0, j as f64 / 400.0];
                best = best.max(z[0] * y[0] + z[1] * y[1] - c.cost(y));
            }
        }
        assert!(c.conjugate(z) >= best - 1e-12);
        assert!(c.conjugate(z) - best < 1e-4);
    }
}
