//! Analytic route: build a candidate optimizer piece by piece and tune the
//! free boundary until the customization region meets the bunches with a
//! continuous gradient.

mod blunt;
pub mod foliation;
pub mod geometry;
pub mod poisson;
mod rc;
pub mod spline;

pub use blunt::{blunt_profile, exclusion_boundary, BluntProfile};
pub use foliation::{alpha_beta_residuals, integrate_foliation, zeta_integral, BunchFoliation, Leaf};
pub use geometry::{line_deviation, FreeBoundaryGeometry, InterfaceSample, InterfaceShape, Piece};
pub use poisson::{boundary_gradient, solve_poisson_mixed, MixedProblem, PoissonSolution};
pub use rc::{rc_baseline, rc_strip, RcBaseline, RcInterpretation};
pub use spline::LengthProfile;

use faer::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{evaluate_phi_with_tol, AdmissibilityTol, ModelConfig, ScalarField};

/// Laplacian of the payoff on the customization region.
pub const CUSTOM_SOURCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpOptions {
    /// Target for the largest normal-derivative jump on the interface.
    pub tol_match: f64,
    /// Angular step of the leaf integration.
    pub step: f64,
    /// Knots of the ruling-length profile, the first one pinned.
    pub knots: usize,
    pub theta_bar: f64,
    pub max_outer: usize,
    pub fd_step: f64,
    pub interface_samples: usize,
    pub h_low_init: Option<f64>,
    /// Initial knot values (all `knots` of them; the first is overwritten by the pin).
    pub length_init: Option<Vec<f64>>,
    /// Retry with a straight interface when no leaf family can be integrated.
    pub straight_fallback: bool,
}

impl Default for FbpOptions {
    fn default() -> Self {
        FbpOptions {
            tol_match: 1e-3,
            step: 1e-3,
            knots: 12,
            theta_bar: FRAC_PI_2,
            max_outer: 40,
            fd_step: 1e-3,
            interface_samples: 48,
            h_low_init: None,
            length_init: None,
            straight_fallback: true,
        }
    }
}

impl FbpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_match > 0.0) {
            return Err(Error::Config(format!("fbp.tol_match must be positive, got {}", self.tol_match)));
        }
        if !(self.step > 0.0 && self.step <= 0.1) {
            return Err(Error::Config(format!("fbp.step must lie in (0, 0.1], got {}", self.step)));
        }
        if self.knots < 2 {
            return Err(Error::Config(format!("fbp.knots must be at least 2, got {}", self.knots)));
        }
        if !(self.theta_bar > -FRAC_PI_4 && self.theta_bar <= FRAC_PI_2) {
            return Err(Error::Config(format!("fbp.theta_bar must lie in (-pi/4, pi/2], got {}", self.theta_bar)));
        }
        if let Some(v) = &self.length_init {
            if v.len() != self.knots {
                return Err(Error::Config(format!("fbp.length_init has {} values, expected {}", v.len(), self.knots)));
            }
        }
        Ok(())
    }
}

/// Default starting height: `a + h_low` midway between the exclusion line and `2a + sqrt(6)/3`.
pub fn default_h_low(a: f64) -> f64 {
    let lo = a + exclusion_boundary(a);
    let hi = 2.0 * a + 6f64.sqrt() / 3.0;
    (0.5 * (lo + hi) - a).clamp(a, a + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchSample {
    pub point: [f64; 2],
    pub normal: [f64; 2],
    pub theta: f64,
    /// `(Du2 - Du1) . n`, zero when inactive
    pub jump: f64,
    /// False for zero-length leaves and for points within two cells of the
    /// square's edge, where the one-sided gradient fit is unreliable.
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbpStatus {
    Converged,
    OuterNotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceFamily {
    Foliated,
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStep {
    pub iteration: usize,
    pub max_mismatch: f64,
    pub rms_mismatch: f64,
    pub damping: f64,
    pub h_low: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbpReport {
    pub status: FbpStatus,
    pub family: InterfaceFamily,
    /// Why the leaf family was abandoned, when it was.
    pub fallback_reason: Option<String>,
    pub iterations: usize,
    pub h_low: f64,
    pub knots: Vec<f64>,
    pub max_mismatch: f64,
    pub rms_mismatch: f64,
    pub tol_match: f64,
    pub trace: Vec<OuterStep>,
    pub seam_discrepancy: f64,
    pub interface_deviation: f64,
    pub asymmetry: f64,
    pub admissible: bool,
    pub phi: Option<f64>,
    pub slope_residual: Option<f64>,
    pub alpha_residual: Option<f64>,
    pub beta_residual: Option<f64>,
    pub zeta_residual: Option<f64>,
    pub poisson_residual: f64,
    pub poisson_unknowns: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct FreeBoundarySolution {
    pub field: ScalarField,
    pub geometry: FreeBoundaryGeometry,
    pub poisson: PoissonSolution,
    pub pieces: Vec<Piece>,
    pub mismatch: Vec<MismatchSample>,
    pub report: FbpReport,
}

impl FreeBoundarySolution {
    pub fn foliation(&self) -> Option<&BunchFoliation> {
        match &self.geometry.shape {
            InterfaceShape::Foliated { foliation } => Some(foliation),
            InterfaceShape::Straight { .. } => None,
        }
    }
}

/// Poisson solve on the customization region of `geom`, with `(Du - x).n = 0` on the square's edges.
pub fn solve_custom_region(geom: &FreeBoundaryGeometry, cfg: &ModelConfig) -> Result<PoissonSolution> {
    let level = |p: [f64; 2]| geom.custom_level(p);
    let dirichlet = |p: [f64; 2]| geom.bunching_value(p);
    let flux = |p: [f64; 2], n: [f64; 2]| p[0] * n[0] + p[1] * n[1];
    solve_poisson_mixed(&MixedProblem { grid: cfg.grid(), source: CUSTOM_SOURCE, level: &level, dirichlet: &dirichlet, flux: &flux })
}

/// Normal-derivative jump between the Poisson solution and the bunching piece
/// at the interface samples. Inactive samples (zero-length leaves) report 0.
pub fn neumann_mismatch(u2: &PoissonSolution, geom: &FreeBoundaryGeometry, count: usize) -> Result<Vec<MismatchSample>> {
    let grid = u2.field.grid;
    let margin = 2.0 * grid.h;
    let hi = grid.hi();
    geom.interface_samples(count)
        .iter()
        .map(|s| {
            let p = s.point;
            let near_edge = p[0] - grid.lo[0] < margin || p[1] - grid.lo[1] < margin || hi[0] - p[0] < margin || hi[1] - p[1] < margin;
            if s.length <= 0.0 || near_edge {
                return Ok(MismatchSample { point: p, normal: s.normal, theta: s.theta, jump: 0.0, active: false });
            }
            let g2 = boundary_gradient(u2, CUSTOM_SOURCE, p, s.value)
                .ok_or_else(|| Error::InvalidGeometry(format!("too few customization nodes near {p:?}")))?;
            let jump = (g2[0] - s.gradient[0]) * s.normal[0] + (g2[1] - s.gradient[1]) * s.normal[1];
            Ok(MismatchSample { point: p, normal: s.normal, theta: s.theta, jump, active: true })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub seam_discrepancy: f64,
}

/// Glue the pieces into one nodal field. Seams take the value of the higher
/// priority piece; the largest disagreement between neighbouring pieces,
/// each continued to the other's nodes, is reported.
pub fn assemble_candidate(geom: &FreeBoundaryGeometry, u2: &PoissonSolution) -> Result<(ScalarField, Vec<Piece>, Assembly)> {
    let g = u2.field.grid;
    let pieces: Vec<Piece> = (0..g.len()).into_par_iter().map(|k| geom.piece(g.point(k))).collect();
    let mut failures = Vec::new();
    let values: Vec<f64> = (0..g.len())
        .map(|k| {
            let p = g.point(k);
            match pieces[k] {
                Piece::Excluded => 0.0,
                Piece::Blunt | Piece::Targeted => geom.bunching_value(p),
                Piece::Custom => {
                    let v = u2.field.values[k];
                    if !v.is_finite() {
                        failures.push(g.ij(k));
                    }
                    v
                }
            }
        })
        .collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        if failures.is_empty() {
            failures.push(g.ij(k));
        }
    }
    if !failures.is_empty() {
        return Err(Error::ChartInversionFailure { nodes: failures });
    }
    let ext = |piece: Piece, k: usize| -> Option<f64> {
        let p = g.point(k);
        match piece {
            Piece::Excluded => Some(0.0),
            Piece::Blunt => geom.blunt.value(p[0] + p[1]).ok(),
            Piece::Targeted => Some(geom.bunching_value(p)).filter(|v| v.is_finite()),
            Piece::Custom => Some(u2.field.values[k]).filter(|v| v.is_finite()),
        }
    };
    let mut seam: f64 = 0.0;
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (ni, nj) in nbrs {
            if ni >= g.n || nj >= g.n {
                continue;
            }
            let other = pieces[g.idx(ni, nj)];
            if other == pieces[k] || (other == Piece::Custom && pieces[k] != Piece::Custom) {
                continue;
            }
            if let Some(v) = ext(other, k) {
                seam = seam.max((v - values[k]).abs());
            }
        }
    }
    Ok((ScalarField { grid: g, values }, pieces, Assembly { seam_discrepancy: seam }))
}

struct Evaluation {
    geom: FreeBoundaryGeometry,
    poisson: PoissonSolution,
    mismatch: Vec<MismatchSample>,
}

impl Evaluation {
    fn residual(&self) -> Vec<f64> {
        self.mismatch.iter().map(|s| s.jump).collect()
    }
}

fn stats(r: &[f64]) -> (f64, f64) {
    let max = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len().max(1) as f64).sqrt();
    (max, rms)
}

/// Parameter map of one interface family.
struct Family<'a> {
    kind: InterfaceFamily,
    cfg: &'a ModelConfig,
    opts: &'a FbpOptions,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Family<'_> {
    fn geometry(&self, p: &[f64]) -> Result<FreeBoundaryGeometry> {
        let a = self.cfg.a;
        match self.kind {
            InterfaceFamily::Straight => FreeBoundaryGeometry::straight(a, BluntProfile::new(a), a + p[0]),
            InterfaceFamily::Foliated => {
                let h_low = p[0];
                let mut knots = Vec::with_capacity(self.opts.knots);
                knots.push((h_low - a) / SQRT_2);
                knots.extend_from_slice(&p[1..]);
                let prof = LengthProfile::new(-FRAC_PI_4, self.opts.theta_bar, knots)?;
                let breaks = prof.knots();
                let fol = foliation::integrate_with_breaks(a, h_low, &|t| prof.value(t), self.opts.theta_bar, self.opts.step, &breaks)?;
                FreeBoundaryGeometry::foliated(a, fol)
            }
        }
    }

    fn evaluate(&self, p: &[f64]) -> Result<Evaluation> {
        let geom = self.geometry(p)?;
        let poisson = solve_custom_region(&geom, self.cfg)?;
        let mismatch = neumann_mismatch(&poisson, &geom, self.opts.interface_samples)?;
        if mismatch.iter().any(|s| !s.jump.is_finite()) {
            return Err(Error::SolverBreakdown("non-finite interface mismatch".into()));
        }
        Ok(Evaluation { geom, poisson, mismatch })
    }

    fn clamp(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on the stacked jumps.
fn outer_solve(fam: &Family, p0: Vec<f64>, trace: &mut Vec<OuterStep>) -> Result<(Vec<f64>, Evaluation, usize)> {
    let opts = fam.opts;
    let mut p = p0;
    fam.clamp(&mut p);
    let mut cur = fam.evaluate(&p)?;
    let mut r = cur.residual();
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-2;
    let np = p.len();
    let push = |trace: &mut Vec<OuterStep>, it: usize, r: &[f64], lambda: f64, p: &[f64]| {
        let (max, rms) = stats(r);
        log::debug!("outer it={it} max={max:.3e} rms={rms:.3e} lambda={lambda:.1e} h_low={:.6}", p[0]);
        trace.push(OuterStep { iteration: it, max_mismatch: max, rms_mismatch: rms, damping: lambda, h_low: p[0], params: p.to_vec() });
    };
    push(trace, 0, &r, lambda, &p);
    let mut it = 0;
    while it < opts.max_outer {
        if stats(&r).0 <= opts.tol_match {
            break;
        }
        it += 1;
        // forward differences, backward when the forward point is infeasible
        let cols: Vec<Vec<f64>> = (0..np)
            .into_par_iter()
            .map(|c| {
                let d = opts.fd_step * (1.0 + p[c].abs());
                for sgn in [1.0, -1.0] {
                    let mut q = p.clone();
                    q[c] += sgn * d;
                    if q[c] < fam.lower[c] || q[c] > fam.upper[c] {
                        continue;
                    }
                    if let Ok(e) = fam.evaluate(&q) {
                        let rq = e.residual();
                        if rq.len() == r.len() {
                            return rq.iter().zip(&r).map(|(a, b)| (a - b) / (sgn * d)).collect();
                        }
                    }
                }
                vec![0.0; r.len()]
            })
            .collect();
        let m = r.len();
        let jtj = faer::Mat::<f64>::from_fn(np, np, |i, j| (0..m).map(|k| cols[i][k] * cols[j][k]).sum());
        let jtr: Vec<f64> = (0..np).map(|i| (0..m).map(|k| cols[i][k] * r[k]).sum()).collect();
        let mut accepted = false;
        for _ in 0..10 {
            let sys = faer::Mat::<f64>::from_fn(np, np, |i, j| {
                if i == j {
                    jtj[(i, i)] * (1.0 + lambda) + 1e-12
                } else {
                    jtj[(i, j)]
                }
            });
            let rhs = faer::Col::<f64>::from_fn(np, |i| -jtr[i]);
            let step = sys.partial_piv_lu().solve(&rhs);
            let mut q: Vec<f64> = (0..np).map(|i| p[i] + step[i]).collect();
            fam.clamp(&mut q);
            match fam.evaluate(&q) {
                Ok(e) => {
                    let rq = e.residual();
                    let cq: f64 = rq.iter().map(|v| v * v).sum();
                    if rq.len() == r.len() && cq < cost {
                        p = q;
                        cur = e;
                        r = rq;
                        cost = cq;
                        lambda = (lambda / 3.0).max(1e-9);
                        accepted = true;
                        break;
                    }
                }
                Err(e) => log::debug!("outer step rejected: {e}"),
            }
            lambda *= 4.0;
        }
        push(trace, it, &r, lambda, &p);
        if !accepted {
            break;
        }
    }
    Ok((p, cur, it))
}

/// Solve the free-boundary system for `cfg.a` on the grid of `cfg`.
///
/// The leaf family `(h_low, R)` is tried first. If it cannot be evaluated at
/// the starting point (singular leaf equation, decreasing heights, leaves
/// leaving the square) and `straight_fallback` is set, the interface is
/// restricted to the line `x1 + x2 = a + h_low` and only `h_low` is tuned.
/// Either way the best iterate is returned; `status` says whether the
/// mismatch target was met.
pub fn solve_free_boundary(cfg: &ModelConfig, opts: &FbpOptions) -> Result<FreeBoundarySolution> {
    cfg.validate()?;
    opts.validate()?;
    if !cfg.cost.is_quadratic() {
        return Err(Error::Config("the free-boundary system is derived for the quadratic cost".into()));
    }
    let start = Instant::now();
    let a = cfg.a;
    let x_low = exclusion_boundary(a);
    let h0 = opts.h_low_init.unwrap_or_else(|| default_h_low(a));
    if !(h0 >= x_low - 1e-12 && h0 <= a + 1.0) {
        return Err(Error::Config(format!("fbp.h_low_init = {h0} outside [{x_low}, {}]", a + 1.0)));
    }
    let h_bounds = (x_low, a + 1.0);
    let k = opts.knots;
    let mut p0 = vec![h0];
    match &opts.length_init {
        Some(v) => p0.extend_from_slice(&v[1..]),
        None => {
            // lengths shrink linearly to zero at the horizontal leaf
            let r0 = (h0 - a) / SQRT_2;
            let span = opts.theta_bar + FRAC_PI_4;
            p0.extend((1..k).map(|i| r0 * (1.0 - span * i as f64 / (k - 1) as f64 / FRAC_PI_4).max(0.0)));
        }
    }
    let foliated = Family {
        kind: InterfaceFamily::Foliated,
        cfg,
        opts,
        lower: std::iter::once(h_bounds.0).chain(std::iter::repeat(0.0).take(k - 1)).collect(),
        upper: std::iter::once(h_bounds.1).chain(std::iter::repeat(spline::MAX_LENGTH).take(k - 1)).collect(),
    };
    let mut trace = Vec::new();
    let mut fallback_reason = None;
    let (family, p, eval, iterations) = match outer_solve(&foliated, p0, &mut trace) {
        Ok((p, e, it)) => (InterfaceFamily::Foliated, p, e, it),
        Err(err) if opts.straight_fallback => {
            log::warn!("leaf family unusable at the starting point ({err}); falling back to a straight interface");
            fallback_reason = Some(err.to_string());
            let straight = Family { kind: InterfaceFamily::Straight, cfg, opts, lower: vec![h_bounds.0], upper: vec![h_bounds.1] };
            let (p, e, it) = outer_solve(&straight, vec![h0], &mut trace)?;
            (InterfaceFamily::Straight, p, e, it)
        }
        Err(err) => return Err(err),
    };

    let (field, pieces, assembly) = assemble_candidate(&eval.geom, &eval.poisson)?;
    let r = eval.residual();
    let (max_mismatch, rms_mismatch) = stats(&r);
    let adm = field.check_admissible(&AdmissibilityTol::default());
    let phi = evaluate_phi_with_tol(&field, cfg, f64::INFINITY).ok();
    let (mut slope_residual, mut alpha_residual, mut beta_residual, mut zeta_residual) = (None, None, None, None);
    if let InterfaceShape::Foliated { foliation } = &eval.geom.shape {
        let absmax = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        slope_residual = Some(absmax(&foliation.slope_residual()));
        let (al, be) = alpha_beta_residuals(foliation, a);
        alpha_residual = Some(absmax(&al));
        beta_residual = Some(absmax(&be));
        zeta_residual = Some(foliation.zeta_residual());
    }
    let status = if max_mismatch <= opts.tol_match { FbpStatus::Converged } else { FbpStatus::OuterNotConverged };
    let knots = match family {
        InterfaceFamily::Foliated => std::iter::once((p[0] - a) / SQRT_2).chain(p[1..].iter().cloned()).collect(),
        InterfaceFamily::Straight => Vec::new(),
    };
    let report = FbpReport {
        status,
        family,
        fallback_reason,
        iterations,
        h_low: p[0],
        knots,
        max_mismatch,
        rms_mismatch,
        tol_match: opts.tol_match,
        trace,
        seam_discrepancy: assembly.seam_discrepancy,
        interface_deviation: eval.geom.interface_line_deviation(opts.interface_samples),
        asymmetry: field.asymmetry(),
        admissible: adm.admissible,
        phi,
        slope_residual,
        alpha_residual,
        beta_residual,
        zeta_residual,
        poisson_residual: eval.poisson.residual,
        poisson_unknowns: eval.poisson.unknowns,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if status == FbpStatus::OuterNotConverged {
        log::warn!("free-boundary matching stopped at max mismatch {max_mismatch:.3e} (target {:.1e})", opts.tol_match);
    }
    Ok(FreeBoundarySolution { field, geometry: eval.geom, poisson: eval.poisson, pieces, mismatch: eval.mismatch, report })
}
