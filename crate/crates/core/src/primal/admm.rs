//! Operator splitting for `max lin.u - u'Qu/2` subject to `A u >= 0`.
//!
//! The splitting introduces `z = A u` and alternates a linear solve in `u`,
//! a projection of `z` onto the nonnegative orthant and a multiplier update,
//! with over-relaxation and occasional penalty rebalancing.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Cholesky;
use faer::Side;
use serde::{Deserialize, Serialize};

use super::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::sparse::{dot, inf_norm, Csr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplittingSettings {
    /// Proximal regularization of the `u` update.
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    pub rho: f64,
    pub adaptive_rho: bool,
    pub max_iter: usize,
    pub check_every: usize,
    /// Stop when every constraint row is violated by less than this.
    pub tol_violation: f64,
    /// Stop when the stationarity residual is below this times `|lin|_inf`.
    pub tol_stationarity: f64,
    /// Attempt an active-set polish every this many iterations (0 disables).
    pub polish_every: usize,
    pub polish_delta: f64,
    pub polish_refine: usize,
}

impl Default for SplittingSettings {
    fn default() -> Self {
        SplittingSettings {
            sigma: 1e-6,
            relaxation: 1.6,
            rho: 0.1,
            adaptive_rho: true,
            max_iter: 20_000,
            check_every: 25,
            tol_violation: 1e-11,
            tol_stationarity: 1e-9,
            polish_every: 2000,
            polish_delta: 1e-7,
            polish_refine: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SplitState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl SplitState {
    pub fn warm(x: Vec<f64>, a: &ConstraintSet) -> Self {
        let mut z = a.apply(&x);
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        let y = vec![0.0; z.len()];
        SplitState { x, z, y }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CheckPoint {
    pub stationarity: f64,
}

pub(crate) struct SplitOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub last: CheckPoint,
}

pub(crate) struct Splitting<'a> {
    q: &'a Csr,
    a: &'a ConstraintSet,
    ata: Csr,
    pub rho: f64,
    sigma: f64,
    factor: Cholesky<usize, f64>,
    /// (iteration, rho) each time the penalty changes, including the start.
    pub rho_history: Vec<(usize, f64)>,
    pub total_iters: usize,
}

fn gram(a: &ConstraintSet) -> Csr {
    let n = a.grid.len();
    let mut trip = Vec::with_capacity(a.len() * 9);
    for r in 0..a.len() {
        let row: Vec<(usize, f64)> = a.row(r).collect();
        for &(p, vp) in &row {
            for &(q, vq) in &row {
                trip.push((p, q, vp * vq));
            }
        }
    }
    Csr::from_triplets(n, n, trip)
}

fn factorize(q: &Csr, ata: &Csr, sigma: f64, rho: f64) -> Result<Cholesky<usize, f64>> {
    let n = q.n_rows;
    let mut trip: Vec<(usize, usize, f64)> = q.triplets().collect();
    trip.extend((0..n).map(|i| (i, i, sigma)));
    trip.extend(ata.triplets().map(|(r, c, v)| (r, c, rho * v)));
    let k = Csr::from_triplets(n, n, trip).to_faer();
    k.as_ref()
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::SolverBreakdown(format!("cholesky of the splitting system: {e:?}")))
}

impl<'a> Splitting<'a> {
    pub fn new(q: &'a Csr, a: &'a ConstraintSet, settings: &SplittingSettings) -> Result<Self> {
        // Sequential kernels keep results independent of the thread count.
        faer::set_global_parallelism(faer::Parallelism::None);
        let ata = gram(a);
        let factor = factorize(q, &ata, settings.sigma, settings.rho)?;
        Ok(Splitting {
            q,
            a,
            ata,
            rho: settings.rho,
            sigma: settings.sigma,
            factor,
            rho_history: vec![(0, settings.rho)],
            total_iters: 0,
        })
    }

    /// Run until the stopping test passes or `max_iter` iterations elapse.
    /// `on_check` sees the current primal iterate and `A x` at each residual check.
    pub fn run(
        &mut self,
        lin: &[f64],
        st: &mut SplitState,
        settings: &SplittingSettings,
        mut on_check: impl FnMut(&[f64], &[f64]),
    ) -> Result<SplitOutcome> {
        let n = st.x.len();
        let m = st.z.len();
        let alpha = settings.relaxation;
        let lin_scale = inf_norm(lin).max(1e-300);
        let mut rhs = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let mut atw = vec![0.0; n];
        let mut w = vec![0.0; m];
        let mut zt = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut qx = vec![0.0; n];
        let mut col = Col::<f64>::zeros(n);
        let mut last = CheckPoint { stationarity: f64::INFINITY };

        for it in 1..=settings.max_iter {
            // rhs = sigma x + lin + A^T (rho z - y)
            for r in 0..m {
                w[r] = self.rho * st.z[r] - st.y[r];
            }
            self.a.apply_transpose_into(&w, &mut atw);
            for i in 0..n {
                rhs[i] = self.sigma * st.x[i] + lin[i] + atw[i];
                col[i] = rhs[i];
            }
            let xt = self.factor.solve(&col);
            for i in 0..n {
                rhs[i] = xt[i];
            }
            self.a.apply_into(&rhs, &mut zt);
            for i in 0..n {
                st.x[i] = alpha * rhs[i] + (1.0 - alpha) * st.x[i];
            }
            for r in 0..m {
                let zr = alpha * zt[r] + (1.0 - alpha) * st.z[r];
                let zn = (zr + st.y[r] / self.rho).max(0.0);
                st.y[r] += self.rho * (zr - zn);
                st.z[r] = zn;
            }
            self.total_iters += 1;

            if it % settings.check_every != 0 && it != settings.max_iter {
                continue;
            }
            self.a.apply_into(&st.x, &mut ax);
            self.q.mul_into(&st.x, &mut qx);
            self.a.apply_transpose_into(&st.y, &mut aty);
            let mut r_prim = 0.0_f64;
            let mut violation = 0.0_f64;
            for r in 0..m {
                r_prim = r_prim.max((ax[r] - st.z[r]).abs());
                violation = violation.max(-ax[r]);
            }
            // stationarity of u'Qu/2 - lin.u - y.(Au) with y <= 0 on active rows
            let mut r_dual = 0.0_f64;
            for i in 0..n {
                r_dual = r_dual.max((qx[i] - lin[i] + aty[i]).abs());
            }
            if !(r_dual.is_finite() && r_prim.is_finite()) {
                return Err(Error::SolverBreakdown(format!("non-finite residual at iteration {it}")));
            }
            last = CheckPoint { stationarity: r_dual };
            log::trace!("splitting it={it} rho={:.3e} r_prim={r_prim:.3e} r_dual={r_dual:.3e} violation={violation:.3e}", self.rho);
            on_check(&st.x, &ax);
            if violation < settings.tol_violation && r_dual < settings.tol_stationarity * lin_scale {
                return Ok(SplitOutcome { iterations: it, converged: true, last });
            }
            if settings.polish_every > 0 && it % settings.polish_every == 0 {
                if let Some(p) = self.polish(lin, st, settings)? {
                    log::debug!("polish at it={it}: violation={:.3e} stationarity={:.3e}", p.violation, p.stationarity);
                    on_check(&p.x, &self.a.apply(&p.x));
                    if p.violation < settings.tol_violation && p.stationarity < settings.tol_stationarity * lin_scale {
                        st.x = p.x;
                        return Ok(SplitOutcome { iterations: it, converged: true, last: CheckPoint { stationarity: p.stationarity } });
                    }
                }
            }
            if settings.adaptive_rho {
                let sp = r_prim / inf_norm(&ax).max(inf_norm(&st.z)).max(1e-300);
                let sd = r_dual / inf_norm(&qx).max(inf_norm(&aty)).max(lin_scale);
                let proposed = self.rho * (sp / sd.max(1e-300)).sqrt();
                if proposed.is_finite() && (proposed > 5.0 * self.rho || proposed < self.rho / 5.0) {
                    let proposed = proposed.clamp(1e-6, 1e6);
                    // y stays, z stays; only the penalty in the linear system changes
                    self.rho = proposed;
                    self.factor = factorize(self.q, &self.ata, self.sigma, self.rho)?;
                    self.rho_history.push((self.total_iters, self.rho));
                }
            }
        }
        Ok(SplitOutcome { iterations: settings.max_iter, converged: false, last })
    }
}

pub(crate) struct Polished {
    pub x: Vec<f64>,
    pub violation: f64,
    pub stationarity: f64,
}

impl Splitting<'_> {
    /// Guess the active rows from the multipliers and solve the equality
    /// constrained problem on them exactly (regularized KKT system plus
    /// iterative refinement).
    fn polish(&self, lin: &[f64], st: &SplitState, settings: &SplittingSettings) -> Result<Option<Polished>> {
        let n = st.x.len();
        let active: Vec<usize> = (0..st.z.len()).filter(|&r| st.z[r] < -st.y[r]).collect();
        let na = active.len();
        let delta = settings.polish_delta;
        let mut trip: Vec<(usize, usize, f64)> = self.q.triplets().collect();
        for (k, &r) in active.iter().enumerate() {
            for (c, v) in self.a.row(r) {
                trip.push((n + k, c, v));
                trip.push((c, n + k, v));
            }
        }
        let exact = Csr::from_triplets(n + na, n + na, trip.clone());
        trip.extend((0..n).map(|i| (i, i, delta)));
        trip.extend((0..na).map(|k| (n + k, n + k, -delta)));
        let reg = Csr::from_triplets(n + na, n + na, trip).to_faer();
        let lu = match reg.as_ref().sp_lu() {
            Ok(lu) => lu,
            Err(e) => {
                log::debug!("polish factorization failed: {e:?}");
                return Ok(None);
            }
        };
        let mut rhs = vec![0.0; n + na];
        rhs[..n].copy_from_slice(lin);
        let mut sol = vec![0.0; n + na];
        for _ in 0..settings.polish_refine {
            let ks = exact.mul(&sol);
            let res = Col::<f64>::from_fn(n + na, |i| rhs[i] - ks[i]);
            let d = lu.solve(&res);
            for i in 0..n + na {
                sol[i] += d[i];
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let x = sol[..n].to_vec();
        // multipliers of lower bounds are nonpositive; clip the wrong-signed ones
        let mut y = vec![0.0; st.z.len()];
        for (k, &r) in active.iter().enumerate() {
            y[r] = sol[n + k].min(0.0);
        }
        let mut aty = vec![0.0; n];
        self.a.apply_transpose_into(&y, &mut aty);
        let qx = self.q.mul(&x);
        let stationarity = (0..n).map(|i| (qx[i] - lin[i] + aty[i]).abs()).fold(0.0, f64::max);
        let violation = self.a.apply(&x).iter().fold(0.0_f64, |m, v| m.max(-v));
        Ok(Some(Polished { x, violation, stationarity }))
    }
}

/// Objective `lin.u - u'Qu/2`.
pub(crate) fn quadratic_value(q: &Csr, lin: &[f64], u: &[f64]) -> f64 {
    dot(lin, u) - 0.5 * dot(u, &q.mul(u))
}
