//! Discrete maximization of the profit functional over the admissible cone.
//!
//! The solver works with the piecewise-linear interpolant of the node values
//! on a triangulation that splits every cell along its main diagonal. For the
//! quadratic cost the objective is then an exact concave quadratic in the node
//! values, `lin.u - u'Qu/2`, and `u'Qu` equals `||Du||^2`.

mod admm;
mod constraints;

pub use admm::SplittingSettings;
pub use constraints::{assemble_constraints, satisfies, ConstraintCounts, ConstraintKind, ConstraintSet};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::exclusion_boundary;
use crate::model::{evaluate_phi_regularized, Density, ModelConfig, ScalarField};
use crate::sparse::{dot, Csr};
use admm::{quadratic_value, SplitState, Splitting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrimalOptions {
    pub stencil: usize,
    pub splitting: SplittingSettings,
    /// Rescale each repaired iterate by the best nonnegative multiple.
    pub ray_scaling: bool,
    /// Feasibility tolerance the returned field must meet.
    pub tol_feas: f64,
    /// Start from zero instead of the default shifted parabola.
    pub zero_start: bool,
    pub seed: u64,
    /// Random pairs used for the post-hoc midpoint convexity check.
    pub convexity_samples: usize,
}

impl Default for PrimalOptions {
    fn default() -> Self {
        PrimalOptions {
            stencil: 2,
            splitting: SplittingSettings::default(),
            ray_scaling: true,
            tol_feas: 1e-8,
            zero_start: false,
            seed: 7,
            convexity_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub eps: f64,
    /// Regularized objective of the stage output (discrete functional).
    pub phi_eps: f64,
    pub majorization_steps: usize,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Profit functional of the returned field under the model's nodal evaluator.
    pub phi: f64,
    /// Value of the solver's own (piecewise-linear) functional.
    pub phi_discrete: f64,
    /// Best feasible value seen at each residual check.
    pub phi_history: Vec<f64>,
    pub max_violation: f64,
    pub stationarity: f64,
    /// Penalty parameter changes as (iteration, rho).
    pub step_history: Vec<(usize, f64)>,
    pub wall_time_s: f64,
    pub constraints: ConstraintCounts,
    pub stencil: usize,
    /// Worst midpoint-convexity defect over random node pairs, in second-derivative units.
    pub pairwise_convexity_defect: f64,
    pub stages: Vec<StageReport>,
}

/// Exact piecewise-linear quadratic model of the profit functional.
pub(crate) struct Discretization {
    pub q: Csr,
    pub lin: Vec<f64>,
}

pub(crate) fn assemble_objective(cfg: &ModelConfig) -> Discretization {
    let g = cfg.grid();
    let h = g.h;
    let n = g.n;
    let area = 0.5 * h * h;
    let dens = |k: usize| match &cfg.density {
        Density::Uniform => 1.0,
        Density::Nodal(f) => f[k],
    };
    let mut lin = vec![0.0; g.len()];
    let mut trip = Vec::with_capacity(18 * g.len());
    let mut add = |ps: [usize; 3], gx: [f64; 3], gy: [f64; 3], c: [f64; 2]| {
        let f = (dens(ps[0]) + dens(ps[1]) + dens(ps[2])) / 3.0;
        let wt = area * f;
        for k in 0..3 {
            lin[ps[k]] += wt * (c[0] * gx[k] + c[1] * gy[k] - 1.0 / 3.0);
            for m in 0..3 {
                trip.push((ps[k], ps[m], wt * (gx[k] * gx[m] + gy[k] * gy[m])));
            }
        }
    };
    let ih = 1.0 / h;
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let (p00, p10, p01, p11) = (g.idx(i, j), g.idx(i + 1, j), g.idx(i, j + 1), g.idx(i + 1, j + 1));
            let (x, y) = (g.x1(i), g.x2(j));
            // lower triangle (p00, p10, p11)
            add([p00, p10, p11], [-ih, ih, 0.0], [0.0, -ih, ih], [x + 2.0 * h / 3.0, y + h / 3.0]);
            // upper triangle (p00, p01, p11)
            add([p00, p01, p11], [0.0, -ih, ih], [-ih, ih, 0.0], [x + h / 3.0, y + 2.0 * h / 3.0]);
        }
    }
    Discretization { q: Csr::from_triplets(g.len(), g.len(), trip), lin }
}

fn initial_guess(cfg: &ModelConfig, zero: bool) -> Vec<f64> {
    if zero {
        return vec![0.0; cfg.grid().len()];
    }
    let a = cfg.a;
    let t0 = a + exclusion_boundary(a);
    ScalarField::from_fn(cfg.grid(), |x1, x2| (x1 + x2 - t0).max(0.0).powi(2) / 4.0).values
}

/// Tracks the best feasible point seen so far.
struct Incumbent<'a> {
    disc: &'a Discretization,
    set: &'a ConstraintSet,
    repair: Vec<f64>,
    ray_scaling: bool,
    /// Linear term scale for majorized subproblems (1 for the plain problem).
    lin_scale: f64,
    best: Option<(f64, Vec<f64>)>,
    history: Vec<f64>,
}

impl<'a> Incumbent<'a> {
    fn new(disc: &'a Discretization, set: &'a ConstraintSet, ray_scaling: bool) -> Self {
        Incumbent { disc, set, repair: set.repair_direction(), ray_scaling, lin_scale: 1.0, best: None, history: vec![] }
    }

    fn repaired(&self, x: &[f64]) -> Vec<f64> {
        let s = self.set.repair_multiplier(x);
        let mut u: Vec<f64> = x.iter().zip(&self.repair).map(|(a, b)| a + s * b).collect();
        if self.ray_scaling {
            let qu = self.disc.q.mul(&u);
            let quad = dot(&u, &qu);
            if quad > 0.0 {
                let t = (self.lin_scale * dot(&self.disc.lin, &u) / quad).max(0.0);
                u.iter_mut().for_each(|v| *v *= t);
            }
        }
        u
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.lin_scale * dot(&self.disc.lin, u) - 0.5 * dot(u, &self.disc.q.mul(u))
    }

    fn offer(&mut self, x: &[f64]) {
        let u = self.repaired(x);
        let v = self.value(&u);
        let better = match &self.best {
            None => true,
            Some((b, _)) => v > *b,
        };
        if better {
            self.best = Some((v, u));
        }
        self.history.push(self.best.as_ref().unwrap().0);
    }

    fn reset(&mut self, lin_scale: f64) {
        self.lin_scale = lin_scale;
        self.best = None;
    }
}

fn pairwise_convexity_defect(u: &ScalarField, samples: usize, seed: u64) -> f64 {
    let g = u.grid;
    let n = g.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let (i0, j0) = (rng.gen_range(0..n), rng.gen_range(0..n));
        // partner with matching parity so the midpoint is a node
        let pick = |rng: &mut ChaCha8Rng, p: usize| p + 2 * rng.gen_range(0..=(n - 1 - p) / 2);
        let i1 = pick(&mut rng, i0 % 2);
        let j1 = pick(&mut rng, j0 % 2);
        if i0 == i1 && j0 == j1 {
            continue;
        }
        let (im, jm) = ((i0 + i1) / 2, (j0 + j1) / 2);
        let d2 = ((i1 as f64 - i0 as f64).powi(2) + (j1 as f64 - j0 as f64).powi(2)) * g.h * g.h / 4.0;
        let defect = u.at(im, jm) - 0.5 * (u.at(i0, j0) + u.at(i1, j1));
        worst = worst.max(2.0 * defect / d2);
    }
    worst
}

fn check_supported(cfg: &ModelConfig, opts: &PrimalOptions) -> Result<()> {
    cfg.validate()?;
    if !cfg.cost.is_quadratic() {
        return Err(Error::Config("the primal solver supports the quadratic cost only".into()));
    }
    if !(1..=3).contains(&opts.stencil) {
        return Err(Error::Config(format!("stencil width must be 1, 2 or 3, got {}", opts.stencil)));
    }
    Ok(())
}

fn finish_report(
    cfg: &ModelConfig,
    opts: &PrimalOptions,
    u: &ScalarField,
    set: &ConstraintSet,
    disc: &Discretization,
    stats: (bool, usize, f64, Vec<f64>, Vec<(usize, f64)>, Instant, Vec<StageReport>),
) -> SolveReport {
    let (converged, iterations, stationarity, phi_history, step_history, t0, stages) = stats;
    let max_violation = set.max_violation(&u.values);
    let phi = evaluate_phi_regularized(u, cfg, 0.0).unwrap_or(f64::NAN);
    let status = if converged && max_violation <= opts.tol_feas { SolveStatus::Converged } else { SolveStatus::NotConverged };
    SolveReport {
        status,
        iterations,
        phi,
        phi_discrete: quadratic_value(&disc.q, &disc.lin, &u.values),
        phi_history,
        max_violation,
        stationarity,
        step_history,
        wall_time_s: t0.elapsed().as_secs_f64(),
        constraints: set.counts(),
        stencil: opts.stencil,
        pairwise_convexity_defect: pairwise_convexity_defect(u, opts.convexity_samples, opts.seed),
        stages,
    }
}

/// Maximize the profit functional over the discrete cone.
///
/// On `NotConverged` the best feasible iterate is still returned.
pub fn solve_primal(cfg: &ModelConfig, opts: &PrimalOptions) -> Result<(ScalarField, SolveReport)> {
    check_supported(cfg, opts)?;
    let t0 = Instant::now();
    let set = assemble_constraints(cfg, opts.stencil);
    let disc = assemble_objective(cfg);
    let mut split = Splitting::new(&disc.q, &set, &opts.splitting)?;
    let mut st = SplitState::warm(initial_guess(cfg, opts.zero_start), &set);
    let mut inc = Incumbent::new(&disc, &set, opts.ray_scaling);
    let out = split.run(&disc.lin, &mut st, &opts.splitting, |x, _| inc.offer(x))?;
    inc.offer(&st.x);
    let u = ScalarField { grid: cfg.grid(), values: inc.best.take().unwrap().1 };
    let history = std::mem::take(&mut inc.history);
    let report = finish_report(
        cfg,
        opts,
        &u,
        &set,
        &disc,
        (out.converged, out.iterations, out.last.stationarity, history, split.rho_history.clone(), t0, vec![]),
    );
    Ok((u, report))
}

/// Warm-started solves of the regularized problems along a decreasing `eps` schedule ending at 0.
///
/// Each stage maximizes `Phi - eps ||Du||` by majorizing the norm term at the
/// current iterate, which turns every subproblem into the plain problem with
/// its linear term divided by `1 + eps / ||Du_k||`; the factorization is shared.
pub fn solve_primal_continuation(
    cfg: &ModelConfig,
    eps_schedule: &[f64],
    opts: &PrimalOptions,
) -> Result<(ScalarField, SolveReport)> {
    check_supported(cfg, opts)?;
    if eps_schedule.is_empty() || *eps_schedule.last().unwrap() != 0.0 {
        return Err(Error::Config("eps schedule must end at 0".into()));
    }
    if eps_schedule.windows(2).any(|w| !(w[0] > w[1])) || eps_schedule.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::Config("eps schedule must be strictly decreasing and nonnegative".into()));
    }
    let t0 = Instant::now();
    let set = assemble_constraints(cfg, opts.stencil);
    let disc = assemble_objective(cfg);
    let mut split = Splitting::new(&disc.q, &set, &opts.splitting)?;
    let mut st = SplitState::warm(initial_guess(cfg, opts.zero_start), &set);
    let mut inc = Incumbent::new(&disc, &set, opts.ray_scaling);
    let mut stages = Vec::new();
    let mut all_converged = true;
    let mut iterations = 0;
    let mut stationarity = 0.0;
    let mut current: Vec<f64> = st.x.clone();
    let norm = |u: &[f64]| dot(u, &disc.q.mul(u)).max(0.0).sqrt();

    for &eps in eps_schedule {
        let mut stage_iters = 0;
        let mut steps = 0;
        let mut stage_ok = true;
        let mut kappa_prev = f64::NAN;
        loop {
            let kappa = if eps == 0.0 { 1.0 } else { 1.0 + eps / norm(&current).max(1e-300) };
            let lin: Vec<f64> = disc.lin.iter().map(|v| v / kappa).collect();
            inc.reset(1.0 / kappa);
            let out = split.run(&lin, &mut st, &opts.splitting, |x, _| inc.offer(x))?;
            inc.offer(&st.x);
            current = inc.best.take().unwrap().1;
            stage_iters += out.iterations;
            stationarity = out.last.stationarity;
            stage_ok &= out.converged;
            steps += 1;
            if eps == 0.0 || (kappa - kappa_prev).abs() <= 1e-13 * kappa || steps >= 200 {
                break;
            }
            kappa_prev = kappa;
        }
        iterations += stage_iters;
        all_converged &= stage_ok;
        let phi_eps = quadratic_value(&disc.q, &disc.lin, &current) - eps * norm(&current);
        stages.push(StageReport {
            eps,
            phi_eps,
            majorization_steps: steps,
            iterations: stage_iters,
            status: if stage_ok { SolveStatus::Converged } else { SolveStatus::NotConverged },
        });
    }
    let u = ScalarField { grid: cfg.grid(), values: current };
    let history = std::mem::take(&mut inc.history);
    let report = finish_report(
        cfg,
        opts,
        &u,
        &set,
        &disc,
        (all_converged, iterations, stationarity, history, split.rho_history.clone(), t0, stages),
    );
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradient_norm;

    #[test]
    fn discrete_objective_is_exact_for_quadratics() {
        // Phi[|x|^2/2] = 0 and Phi[x1] = -1/2 hold exactly for the interpolant too
        let cfg = ModelConfig::new(0.0, 12).unwrap();
        let d = assemble_objective(&cfg);
        let half = ScalarField::from_fn(cfg.grid(), |x1, x2| 0.5 * (x1 * x1 + x2 * x2));
        let ramp = ScalarField::from_fn(cfg.grid(), |x1, _| x1);
        // the interpolant of |x|^2/2 has an O(h^2) error in its energy, so compare ramps exactly
        assert!((quadratic_value(&d.q, &d.lin, &ramp.values) + 0.5).abs() < 1e-13);
        assert!(quadratic_value(&d.q, &d.lin, &half.values).abs() < 0.01);
    }

    #[test]
    fn quadratic_form_is_gradient_energy() {
        let cfg = ModelConfig::new(1.0, 10).unwrap();
        let d = assemble_objective(&cfg);
        let u = ScalarField::from_fn(cfg.grid(), |x1, x2| 2.0 * x1 - x2);
        let e = dot(&u.values, &d.q.mul(&u.values));
        assert!((e - 5.0).abs() < 1e-12);
        assert!((gradient_norm(&crate::model::gradient(&u), &cfg).powi(2) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_quadratic_cost() {
        let cfg = ModelConfig::new(0.0, 9).unwrap().with_cost(crate::model::CostSpec::Quartic);
        assert!(solve_primal(&cfg, &PrimalOptions::default()).is_err());
    }

    #[test]
    fn schedule_validation() {
        let cfg = ModelConfig::new(0.0, 9).unwrap();
        let o = PrimalOptions::default();
        assert!(solve_primal_continuation(&cfg, &[0.1, 0.2, 0.0], &o).is_err());
        assert!(solve_primal_continuation(&cfg, &[0.1], &o).is_err());
    }

    #[test]
    fn small_solve_is_feasible_and_symmetric() {
        let cfg = ModelConfig::new(0.0, 12).unwrap();
        let (u, rep) = solve_primal(&cfg, &PrimalOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!(rep.max_violation <= 1e-8);
        assert!(u.asymmetry() < 1e-6);
        assert!(rep.phi_history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(rep.phi > 0.0 && rep.phi < 1.0 / 3.0);
    }
}
