//! Dual candidates and optimality certificates.
//!
//! A vector field `G` is dual feasible when `int (x.Du - u - G.Du) f <= 0` for
//! every admissible `u`. That is a semi-infinite condition, so it is checked on
//! a finite family of test payoffs and the resulting certificate is labelled
//! as sampled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{gradient, gradient_norm, integrate, phi_from_gradient, ModelConfig, ScalarField, VectorField};

/// `G = Dc(Du)` node by node.
pub fn dual_candidate(u: &ScalarField, cfg: &ModelConfig) -> VectorField {
    let du = gradient(u);
    let pairs: Vec<[f64; 2]> = (0..du.grid.len()).map(|k| cfg.cost.grad(du.at(k))).collect();
    VectorField { grid: du.grid, g1: pairs.iter().map(|p| p[0]).collect(), g2: pairs.iter().map(|p| p[1]).collect() }
}

/// `<c*(G)>_f`
pub fn dual_value(g: &VectorField, cfg: &ModelConfig) -> f64 {
    let s: Vec<f64> = (0..g.grid.len()).map(|k| cfg.cost.conjugate(g.at(k))).collect();
    integrate(cfg, &s)
}

#[derive(Debug, Clone)]
pub struct TestPayoff {
    pub label: String,
    pub field: ScalarField,
}

/// `int (x.Du - u - G.Du) f dx - eps ||Du||` for one test payoff.
pub fn dual_functional(g: &VectorField, cfg: &ModelConfig, u: &ScalarField, eps: f64) -> f64 {
    let du = gradient(u);
    let grid = u.grid;
    let s: Vec<f64> = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            (x[0] - g.g1[k]) * du.g1[k] + (x[1] - g.g2[k]) * du.g2[k] - u.values[k]
        })
        .collect();
    let base = integrate(cfg, &s);
    if eps == 0.0 {
        base
    } else {
        base - eps * gradient_norm(&du, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCheck {
    pub residual: f64,
    pub worst: String,
    pub family_size: usize,
}

pub fn gamma_check(g: &VectorField, cfg: &ModelConfig, family: &[TestPayoff], eps: f64) -> GammaCheck {
    let vals: Vec<f64> = family.par_iter().map(|t| dual_functional(g, cfg, &t.field, eps)).collect();
    let mut best = (f64::NEG_INFINITY, String::new());
    for (t, v) in family.iter().zip(&vals) {
        if *v > best.0 {
            best = (*v, t.label.clone());
        }
    }
    GammaCheck { residual: best.0, worst: best.1, family_size: family.len() }
}

/// Largest value of the dual functional over the test family.
pub fn gamma_residual(g: &VectorField, cfg: &ModelConfig, family: &[TestPayoff], eps: f64) -> f64 {
    gamma_check(g, cfg, family, eps).residual
}

/// Hinges `max(0, p.(x - x0))` over a lattice of directions and offsets, the
/// two coordinate ramps, the candidate itself and two of its multiples.
pub fn default_test_family(u: &ScalarField, cfg: &ModelConfig) -> Vec<TestPayoff> {
    let grid = cfg.grid();
    let a = cfg.a;
    let mut fam = vec![
        TestPayoff { label: "candidate".into(), field: u.clone() },
        TestPayoff { label: "candidate*0.5".into(), field: u.scaled(0.5) },
        TestPayoff { label: "candidate*2".into(), field: u.scaled(2.0) },
        TestPayoff { label: "ramp1".into(), field: ScalarField::from_fn(grid, move |x1, _| x1 - a) },
        TestPayoff { label: "ramp2".into(), field: ScalarField::from_fn(grid, move |_, x2| x2 - a) },
    ];
    let dirs = 9;
    let offsets = 8;
    for d in 0..dirs {
        let phi = std::f64::consts::FRAC_PI_2 * d as f64 / (dirs - 1) as f64;
        let p = [phi.cos(), phi.sin()];
        let span = p[0] + p[1];
        for o in 0..offsets {
            let q = span * (o as f64 + 0.5) / offsets as f64;
            fam.push(TestPayoff {
                label: format!("hinge(angle={:.1}deg,offset={q:.3})", phi.to_degrees()),
                field: ScalarField::from_fn(grid, move |x1, x2| (p[0] * (x1 - a) + p[1] * (x2 - a) - q).max(0.0)),
            });
        }
    }
    fam
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    #[serde(skip)]
    pub g: Option<VectorField>,
    pub dual_value: f64,
    pub phi: f64,
    pub gap: f64,
    pub gamma_residual: f64,
    pub worst_test: String,
    pub tol_gamma: f64,
    /// Membership was checked against a finite family only.
    pub sampled: bool,
    pub certified: bool,
    pub slackness_r1: f64,
    pub slackness_r2: f64,
    pub test_family_size: usize,
    /// Most negative gradient component of the candidate (cone check).
    pub min_gradient: f64,
}

/// Default membership tolerance: one grid spacing.
pub fn default_tol_gamma(cfg: &ModelConfig) -> f64 {
    cfg.h()
}

pub fn certify(u: &ScalarField, cfg: &ModelConfig) -> DualCertificate {
    certify_with(u, cfg, &default_test_family(u, cfg), default_tol_gamma(cfg))
}

pub fn certify_with(u: &ScalarField, cfg: &ModelConfig, family: &[TestPayoff], tol_gamma: f64) -> DualCertificate {
    let du = gradient(u);
    let g = dual_candidate(u, cfg);
    let grid = u.grid;
    let phi = phi_from_gradient(u, &du, cfg);
    let dual_value = dual_value(&g, cfg);
    let r1_sq: Vec<f64> = (0..grid.len())
        .map(|k| {
            let dc = cfg.cost.grad(du.at(k));
            (g.g1[k] - dc[0]).powi(2) + (g.g2[k] - dc[1]).powi(2)
        })
        .collect();
    let slackness_r1 = integrate(cfg, &r1_sq).sqrt();
    let slackness_r2 = dual_functional(&g, cfg, u, 0.0);
    let check = gamma_check(&g, cfg, family, 0.0);
    let min_gradient = du.g1.iter().chain(&du.g2).cloned().fold(f64::INFINITY, f64::min);
    DualCertificate {
        g: Some(g),
        dual_value,
        phi,
        gap: dual_value - phi,
        gamma_residual: check.residual,
        worst_test: check.worst,
        tol_gamma,
        sampled: true,
        certified: check.residual <= tol_gamma,
        slackness_r1,
        slackness_r2,
        test_family_size: check.family_size,
        min_gradient,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostSpec;

    fn cfg(n: usize) -> ModelConfig {
        ModelConfig::new(0.0, n).unwrap()
    }

    #[test]
    fn candidate_examples() {
        let c = cfg(17);
        let u = ScalarField::from_fn(c.grid(), |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        let g = dual_candidate(&u, &c);
        for k in 0..c.grid().len() {
            let x = c.grid().point(k);
            assert!((g.g1[k] - x[0]).abs() < 1e-12 && (g.g2[k] - x[1]).abs() < 1e-12);
        }
        let z = dual_candidate(&ScalarField::zeros(c.grid()), &c);
        assert!(z.g1.iter().chain(&z.g2).all(|v| *v == 0.0));
        let q = c.clone().with_cost(CostSpec::Quartic);
        let g4 = dual_candidate(&u, &q);
        for k in 0..c.grid().len() {
            let x = c.grid().point(k);
            let s = 4.0 * (x[0] * x[0] + x[1] * x[1]);
            assert!((g4.g1[k] - s * x[0]).abs() < 1e-11 && (g4.g2[k] - s * x[1]).abs() < 1e-11);
        }
    }

    #[test]
    fn dual_value_examples() {
        let c = cfg(65);
        let id = VectorField::from_fn(c.grid(), |x1, x2| [x1, x2]);
        // trapezoid error of int |x|^2/2 is h^2/6
        assert!((dual_value(&id, &c) - 1.0 / 3.0).abs() < c.h() * c.h());
        let zero = VectorField::from_fn(c.grid(), |_, _| [0.0, 0.0]);
        assert_eq!(dual_value(&zero, &c), 0.0);
        let k = VectorField::from_fn(c.grid(), |_, _| [1.0, -2.0]);
        assert!((dual_value(&k, &c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_examples() {
        let c = cfg(33);
        let id = VectorField::from_fn(c.grid(), |x1, x2| [x1, x2]);
        let ramp = TestPayoff { label: "x1".into(), field: ScalarField::from_fn(c.grid(), |x1, _| x1) };
        assert!((gamma_residual(&id, &c, std::slice::from_ref(&ramp), 0.0) + 0.5).abs() < 1e-12);
        let zero = VectorField::from_fn(c.grid(), |_, _| [0.0, 0.0]);
        let sq = TestPayoff { label: "sq".into(), field: ScalarField::from_fn(c.grid(), |x1, x2| 0.5 * (x1 * x1 + x2 * x2)) };
        let r = gamma_residual(&zero, &c, &[sq], 0.0);
        assert!((r - 1.0 / 3.0).abs() < 2.0 * c.h() * c.h());
    }

    #[test]
    fn residual_is_homogeneous() {
        let c = cfg(21);
        let g = VectorField::from_fn(c.grid(), |x1, x2| [0.3 * x1, x2 * x2]);
        let u = ScalarField::from_fn(c.grid(), |x1, x2| (x1 + 2.0 * x2 - 0.5).max(0.0).powi(2));
        let base = dual_functional(&g, &c, &u, 0.0);
        for s in [0.0, 0.5, 2.0] {
            assert!((dual_functional(&g, &c, &u.scaled(s), 0.0) - s * base).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_only_relaxes() {
        let c = cfg(21);
        let g = VectorField::from_fn(c.grid(), |x1, x2| [x1 * 0.8, x2 * 1.1]);
        let u = ScalarField::from_fn(c.grid(), |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        let fam = default_test_family(&u, &c);
        assert!(gamma_residual(&g, &c, &fam, 0.1) <= gamma_residual(&g, &c, &fam, 0.0));
    }

    #[test]
    fn zero_payoff_is_not_certified() {
        let c = cfg(17);
        let cert = certify(&ScalarField::zeros(c.grid()), &c);
        assert_eq!((cert.dual_value, cert.phi, cert.gap), (0.0, 0.0, 0.0));
        assert!(cert.gamma_residual > 0.0 && !cert.certified);
    }

    #[test]
    fn quadratic_cost_gap_is_minus_slackness() {
        let c = cfg(25);
        let u = ScalarField::from_fn(c.grid(), |x1, x2| (x1 + x2).powi(2) / 3.0);
        let cert = certify(&u, &c);
        assert_eq!(cert.slackness_r1, 0.0);
        assert!((cert.gap + cert.slackness_r2).abs() < 1e-14);
    }
}
