//! Grids, fields, the profit functional and conjugation.
//!
//! Node `(i, j)` sits at `(lo + i h, lo + j h)` and is stored at `j * n + i`,
//! so rows run along `x1` and the outer index is `x2`.

mod cost;
pub mod io;
mod legendre;

pub use cost::CostSpec;
pub use legendre::{legendre_transform, legendre_transform_brute, LegendreReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square node lattice with `n` nodes per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: [f64; 2],
    pub h: f64,
    pub n: usize,
}

impl Grid {
    /// Lattice on the type space `[a, a+1]^2`.
    pub fn unit_square(a: f64, n: usize) -> Self {
        Grid { lo: [a, a], h: 1.0 / (n as f64 - 1.0), n }
    }

    /// Lattice on `[lo, lo + side]^2`.
    pub fn square(lo: [f64; 2], side: f64, n: usize) -> Self {
        Grid { lo, h: side / (n as f64 - 1.0), n }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    #[inline]
    pub fn x1(&self, i: usize) -> f64 {
        self.lo[0] + i as f64 * self.h
    }

    #[inline]
    pub fn x2(&self, j: usize) -> f64 {
        self.lo[1] + j as f64 * self.h
    }

    #[inline]
    pub fn point(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [self.x1(i), self.x2(j)]
    }

    pub fn hi(&self) -> [f64; 2] {
        let side = self.h * (self.n as f64 - 1.0);
        [self.lo[0] + side, self.lo[1] + side]
    }

    pub fn on_boundary(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i == 0 || j == 0 || i + 1 == self.n || j + 1 == self.n
    }

    /// Trapezoid weights (area per node), unscaled by density.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.n;
        let edge = |i: usize| if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        (0..self.len())
            .map(|k| {
                let (i, j) = self.ij(k);
                edge(i) * edge(j) * self.h * self.h
            })
            .collect()
    }
}

/// Agent density on the grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum Density {
    #[default]
    Uniform,
    Nodal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: f64,
    pub n_grid: usize,
    #[serde(default)]
    pub density: Density,
    #[serde(default)]
    pub cost: CostSpec,
}

impl ModelConfig {
    pub fn new(a: f64, n_grid: usize) -> Result<Self> {
        let cfg = ModelConfig { a, n_grid, density: Density::Uniform, cost: CostSpec::Quadratic };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cost(mut self, cost: CostSpec) -> Self {
        self.cost = cost;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::Config(format!("a must be finite and >= 0, got {}", self.a)));
        }
        if self.n_grid < 8 {
            return Err(Error::Config(format!("n_grid must be >= 8, got {}", self.n_grid)));
        }
        if let Density::Nodal(f) = &self.density {
            let grid = self.grid();
            if f.len() != grid.len() {
                return Err(Error::Config(format!("density has {} values, grid has {}", f.len(), grid.len())));
            }
            for k in 0..grid.len() {
                if !f[k].is_finite() || f[k] < 0.0 || (!grid.on_boundary(k) && f[k] <= 0.0) {
                    return Err(Error::Config(format!("density must be positive on the interior (node {k})")));
                }
            }
            let mass: f64 = grid.trapezoid_weights().iter().zip(f).map(|(w, f)| w * f).sum();
            if (mass - 1.0).abs() > 1e-10 {
                return Err(Error::Config(format!("density integrates to {mass}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::unit_square(self.a, self.n_grid)
    }

    pub fn h(&self) -> f64 {
        self.grid().h
    }

    /// Quadrature weights including the density.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.grid().trapezoid_weights();
        if let Density::Nodal(f) = &self.density {
            for (wk, fk) in w.iter_mut().zip(f) {
                *wk *= fk;
            }
        }
        w
    }
}

/// Rescale nodal density samples so they integrate to one.
pub fn normalize_density(grid: &Grid, values: Vec<f64>) -> Density {
    let mass: f64 = grid.trapezoid_weights().iter().zip(&values).map(|(w, f)| w * f).sum();
    Density::Nodal(values.into_iter().map(|f| f / mass).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Format(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let p = grid.point(k);
                f(p[0], p[1])
            })
            .collect();
        ScalarField { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Field with the two coordinates swapped.
    pub fn transposed(&self) -> Self {
        let g = self.grid;
        let mut values = vec![0.0; g.len()];
        for j in 0..g.n {
            for i in 0..g.n {
                values[g.idx(i, j)] = self.values[g.idx(j, i)];
            }
        }
        ScalarField { grid: g, values }
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Sup-norm distance to the transposed field.
    pub fn asymmetry(&self) -> f64 {
        self.max_abs_diff(&self.transposed())
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| s * v).collect() }
    }

    pub fn check_admissible(&self, tol: &AdmissibilityTol) -> Admissibility {
        admissibility(self, tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl VectorField {
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> [f64; 2] + Sync) -> Self {
        let pairs: Vec<[f64; 2]> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let p = grid.point(k);
                f(p[0], p[1])
            })
            .collect();
        VectorField { grid, g1: pairs.iter().map(|p| p[0]).collect(), g2: pairs.iter().map(|p| p[1]).collect() }
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.g1[k], self.g2[k]]
    }

    pub fn is_finite(&self) -> bool {
        self.g1.iter().chain(&self.g2).all(|v| v.is_finite())
    }
}

/// Derivative along one grid line: centered inside, second-order one-sided at the ends.
fn line_derivative(v: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if i == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
    } else {
        (v(i + 1) - v(i - 1)) / (2.0 * h)
    }
}

/// Nodal gradient: centered differences inside, one-sided at edges.
pub fn gradient(u: &ScalarField) -> VectorField {
    let g = u.grid;
    let pairs: Vec<(f64, f64)> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = g.ij(k);
            let d1 = line_derivative(|s| u.values[g.idx(s, j)], i, g.n, g.h);
            let d2 = line_derivative(|s| u.values[g.idx(i, s)], j, g.n, g.h);
            (d1, d2)
        })
        .collect();
    VectorField { grid: g, g1: pairs.iter().map(|p| p.0).collect(), g2: pairs.iter().map(|p| p.1).collect() }
}

/// How far a gradient may leave the product cone before `evaluate_phi` refuses it.
pub fn default_cone_tol(cfg: &ModelConfig) -> f64 {
    5.0 * cfg.h()
}

fn check_cone(du: &VectorField, tol: f64) -> Result<()> {
    for k in 0..du.grid.len() {
        let m = du.g1[k].min(du.g2[k]);
        if m < -tol || !m.is_finite() {
            let (i, j) = du.grid.ij(k);
            return Err(Error::ConeViolation { i, j, value: m, tol });
        }
    }
    Ok(())
}

fn check_grid(u: &ScalarField, cfg: &ModelConfig) -> Result<()> {
    if u.grid.n != cfg.n_grid {
        return Err(Error::GridMismatch { expected: cfg.n_grid, got: u.grid.n });
    }
    Ok(())
}

/// Weighted integral of nodal samples.
pub fn integrate(cfg: &ModelConfig, samples: &[f64]) -> f64 {
    cfg.weights().iter().zip(samples).map(|(w, s)| w * s).sum()
}

/// Profit functional `int (x.Du - u - c(Du)) f dx` with the default cone tolerance.
pub fn evaluate_phi(u: &ScalarField, cfg: &ModelConfig) -> Result<f64> {
    evaluate_phi_with_tol(u, cfg, default_cone_tol(cfg))
}

pub fn evaluate_phi_with_tol(u: &ScalarField, cfg: &ModelConfig, cone_tol: f64) -> Result<f64> {
    check_grid(u, cfg)?;
    let du = gradient(u);
    check_cone(&du, cone_tol)?;
    Ok(phi_from_gradient(u, &du, cfg))
}

pub(crate) fn phi_from_gradient(u: &ScalarField, du: &VectorField, cfg: &ModelConfig) -> f64 {
    let g = u.grid;
    let integrand: Vec<f64> = (0..g.len())
        .map(|k| {
            let x = g.point(k);
            let y = du.at(k);
            x[0] * y[0] + x[1] * y[1] - u.values[k] - cfg.cost.cost(y)
        })
        .collect();
    integrate(cfg, &integrand)
}

/// `<|Du|^2>_f^{1/2}`
pub fn gradient_norm(du: &VectorField, cfg: &ModelConfig) -> f64 {
    let sq: Vec<f64> = (0..du.grid.len()).map(|k| du.g1[k] * du.g1[k] + du.g2[k] * du.g2[k]).collect();
    integrate(cfg, &sq).sqrt()
}

/// `Phi[u] - eps * ||Du||`.
pub fn evaluate_phi_regularized(u: &ScalarField, cfg: &ModelConfig, eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::DomainViolation { what: "eps must be >= 0", value: eps });
    }
    check_grid(u, cfg)?;
    let du = gradient(u);
    check_cone(&du, default_cone_tol(cfg))?;
    let phi = phi_from_gradient(u, &du, cfg);
    if eps == 0.0 {
        return Ok(phi);
    }
    Ok(phi - eps * gradient_norm(&du, cfg))
}

/// Tolerances for the admissibility predicate; slopes and curvatures are in
/// derivative units (differences divided by `h` and `|d|^2 h^2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityTol {
    pub nonneg: f64,
    pub mono: f64,
    pub convex: f64,
    pub stencil: usize,
}

impl Default for AdmissibilityTol {
    fn default() -> Self {
        AdmissibilityTol { nonneg: 1e-8, mono: 1e-8, convex: 1e-8, stencil: 2 }
    }
}

impl AdmissibilityTol {
    pub fn uniform(tol: f64, stencil: usize) -> Self {
        AdmissibilityTol { nonneg: tol, mono: tol, convex: tol, stencil }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub min_value: f64,
    pub min_slope: f64,
    pub min_curvature: f64,
    pub admissible: bool,
}

/// Stencil directions up to the given width, in a fixed order; each width extends the previous list.
pub fn stencil_directions(width: usize) -> Vec<(i64, i64)> {
    let mut dirs = vec![(1, 0), (0, 1), (1, 1), (1, -1)];
    if width >= 2 {
        dirs.extend([(1, 2), (2, 1), (1, -2), (2, -1)]);
    }
    if width >= 3 {
        dirs.extend([(1, 3), (3, 1), (1, -3), (3, -1), (2, 3), (3, 2), (2, -3), (3, -2)]);
    }
    dirs
}

fn admissibility(u: &ScalarField, tol: &AdmissibilityTol) -> Admissibility {
    let g = u.grid;
    let n = g.n as i64;
    let min_value = u.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut min_slope = f64::INFINITY;
    for j in 0..g.n {
        for i in 0..g.n {
            if i + 1 < g.n {
                min_slope = min_slope.min((u.at(i + 1, j) - u.at(i, j)) / g.h);
            }
            if j + 1 < g.n {
                min_slope = min_slope.min((u.at(i, j + 1) - u.at(i, j)) / g.h);
            }
        }
    }
    let mut min_curvature = f64::INFINITY;
    for (di, dj) in stencil_directions(tol.stencil) {
        let scale = ((di * di + dj * dj) as f64) * g.h * g.h;
        for j in 0..n {
            for i in 0..n {
                let (ip, jp, im, jm) = (i + di, j + dj, i - di, j - dj);
                if ip < 0 || jp < 0 || im < 0 || jm < 0 || ip >= n || jp >= n || im >= n || jm >= n {
                    continue;
                }
                let d2 = u.at(ip as usize, jp as usize) - 2.0 * u.at(i as usize, j as usize)
                    + u.at(im as usize, jm as usize);
                min_curvature = min_curvature.min(d2 / scale);
            }
        }
    }
    let admissible = u.is_finite()
        && min_value >= -tol.nonneg
        && min_slope >= -tol.mono
        && min_curvature >= -tol.convex;
    Admissibility { min_value, min_slope, min_curvature, admissible }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> ModelConfig {
        ModelConfig::new(0.0, n).unwrap()
    }

    #[test]
    fn gradient_exact_for_affine() {
        let g = Grid::unit_square(0.3, 11);
        let u = ScalarField::from_fn(g, |x1, x2| x1 + 2.0 * x2);
        let du = gradient(&u);
        for k in 0..g.len() {
            assert!((du.g1[k] - 1.0).abs() < 1e-12 && (du.g2[k] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_zero_is_zero() {
        let du = gradient(&ScalarField::zeros(Grid::unit_square(0.0, 9)));
        assert!(du.g1.iter().chain(&du.g2).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_of_half_square_at_center() {
        let g = Grid::unit_square(0.0, 33);
        let u = ScalarField::from_fn(g, |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        let du = gradient(&u);
        let k = g.idx(16, 16);
        assert!((du.g1[k] - 0.5).abs() < 1e-12 && (du.g2[k] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let err = |n: usize| {
            let g = Grid::unit_square(0.0, n);
            let u = ScalarField::from_fn(g, |x1, x2| (x1 * 1.3).sin() * (x2 * 0.7).exp());
            let du = gradient(&u);
            (0..g.len())
                .map(|k| {
                    let p = g.point(k);
                    (du.g1[k] - 1.3 * (p[0] * 1.3).cos() * (p[1] * 0.7).exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(17) / err(33);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn phi_of_half_square_vanishes() {
        let c = cfg(41);
        let u = ScalarField::from_fn(c.grid(), |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        assert!(evaluate_phi(&u, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn phi_of_first_coordinate() {
        let c = cfg(21);
        let u = ScalarField::from_fn(c.grid(), |x1, _| x1);
        assert!((evaluate_phi(&u, &c).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn phi_positive_for_small_power_profile() {
        let c = cfg(65);
        let u = ScalarField::from_fn(c.grid(), |x1, x2| 0.2 / 9.0 * (x1 + x2).powf(1.5));
        assert!(evaluate_phi(&u, &c).unwrap() > 0.0);
    }

    #[test]
    fn regularized_phi_examples() {
        let c = cfg(21);
        let u = ScalarField::from_fn(c.grid(), |x1, _| x1);
        assert!((evaluate_phi_regularized(&u, &c, 1.0).unwrap() + 1.5).abs() < 1e-12);
        let v = ScalarField::from_fn(c.grid(), |x1, x2| (x1 + x2).powi(2));
        assert_eq!(evaluate_phi_regularized(&v, &c, 0.0).unwrap(), evaluate_phi(&v, &c).unwrap());
        let z = ScalarField::zeros(c.grid());
        assert_eq!(evaluate_phi_regularized(&z, &c, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn phi_rejects_decreasing_fields() {
        let c = cfg(21);
        let u = ScalarField::from_fn(c.grid(), |x1, _| 1.0 - x1);
        assert!(matches!(evaluate_phi(&u, &c), Err(Error::ConeViolation { .. })));
    }

    #[test]
    fn density_validation() {
        let mut c = cfg(9);
        c.density = Density::Nodal(vec![2.0; 81]);
        assert!(c.validate().is_err());
        c.density = normalize_density(&c.grid(), vec![2.0; 81]);
        c.validate().unwrap();
        assert!(ModelConfig::new(0.0, 7).is_err());
        assert!(ModelConfig::new(-1.0, 9).is_err());
    }

    #[test]
    fn weights_integrate_to_one() {
        let c = cfg(17);
        let s: f64 = c.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-13);
    }

    #[test]
    fn admissibility_of_samples() {
        let g = Grid::unit_square(0.0, 17);
        let u = ScalarField::from_fn(g, |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        assert!(u.check_admissible(&AdmissibilityTol::default()).admissible);
        let bad = ScalarField::from_fn(g, |x1, x2| -0.5 * (x1 * x1 + x2 * x2) + 5.0);
        assert!(!bad.check_admissible(&AdmissibilityTol::default()).admissible);
    }
}
