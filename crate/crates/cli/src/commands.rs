use std::io::Write;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use screendual_core::dual::{certify_with, default_test_family, DualCertificate};
use screendual_core::fbp::{rc_baseline, solve_free_boundary, FbpStatus, FreeBoundarySolution, RcBaseline, RcInterpretation};
use screendual_core::market::{check_incentives, simulate_market, MarketOutcome};
use screendual_core::model::io::{fmt_f64, write_scalar_csv};
use screendual_core::model::ScalarField;
use screendual_core::primal::{solve_primal, solve_primal_continuation, SolveReport, SolveStatus};
use screendual_core::region::{classify_regions, extract_bunches, RegionMask};

use crate::config::ConfigError;
use crate::run::{read_field, Run};

/// Whether every solver involved reached its target.
pub struct Outcome {
    pub converged: bool,
}

fn primal(run: &mut Run) -> Result<(ScalarField, SolveReport)> {
    let cfg = run.config.model.clone();
    let opts = run.config.primal.clone();
    let eps = run.config.continuation.clone();
    let (u, rep) = run.timed("primal", || {
        if eps.is_empty() {
            solve_primal(&cfg, &opts)
        } else {
            solve_primal_continuation(&cfg, &eps, &opts)
        }
    })?;
    run.write_with("primal_field.csv", |w| write_scalar_csv(&u, w))?;
    run.write_json("primal_report.json", &rep)?;
    if rep.status != SolveStatus::Converged {
        run.note(format!("primal solve stopped after {} iterations without meeting its tolerances", rep.iterations));
    }
    Ok((u, rep))
}

/// The field named on the command line, or a fresh primal solve.
fn input_field(run: &mut Run, field: Option<&Path>) -> Result<(ScalarField, bool)> {
    match field {
        Some(path) => {
            let u = read_field(path)?;
            let expected = run.config.model.grid();
            if u.grid.n != expected.n || (u.grid.lo[0] - expected.lo[0]).abs() > 1e-12 || (u.grid.h - expected.h).abs() > 1e-12 {
                return Err(ConfigError::Invalid(format!(
                    "field {} has {} nodes per side on [{}, ...], the model grid has {} on [{}, ...]",
                    path.display(),
                    u.grid.n,
                    u.grid.lo[0],
                    expected.n,
                    expected.lo[0]
                ))
                .into());
            }
            // snap to the model lattice so downstream grid comparisons are exact
            Ok((ScalarField { grid: expected, values: u.values }, true))
        }
        None => {
            let (u, rep) = primal(run)?;
            Ok((u, rep.status == SolveStatus::Converged))
        }
    }
}

fn regions(run: &mut Run, u: &ScalarField) -> Result<RegionMask> {
    let th = run.config.thresholds();
    run.tolerance("region.tau_rank", th.rank);
    run.tolerance("region.tau_angle_rad", th.angle);
    run.tolerance("region.tau_bunch", th.bunch);
    let mask = run.timed("regions", || classify_regions(u, &th));
    run.write_with("regions.csv", |w| mask.write_csv(w))?;
    Ok(mask)
}

fn certificate(run: &mut Run, u: &ScalarField) -> DualCertificate {
    let tol = run.config.tol_gamma();
    run.tolerance("dual.tol_gamma", tol);
    let cfg = run.config.model.clone();
    run.timed("certify", || certify_with(u, &cfg, &default_test_family(u, &cfg), tol))
}

fn analytic(run: &mut Run) -> Result<FreeBoundarySolution> {
    let cfg = run.config.model.clone();
    let opts = run.config.fbp.clone();
    run.tolerance("fbp.seam_target", 5.0 * cfg.h());
    let sol = run.timed("free_boundary", || solve_free_boundary(&cfg, &opts))?;
    let r = &sol.report;
    if let Some(reason) = &r.fallback_reason {
        run.note(format!("leaf family rejected ({reason}); the straight interface was used instead"));
    }
    if r.status != FbpStatus::Converged {
        run.note(format!("free-boundary matching stopped at max mismatch {:.3e} > {:.1e}", r.max_mismatch, r.tol_match));
    }
    run.write_with("analytic_field.csv", |w| write_scalar_csv(&sol.field, w))?;
    run.write_json("fbp_report.json", &sol.report)?;
    let samples = opts.interface_samples;
    run.write_with("geometry.csv", |w| sol.geometry.write_polylines_csv(samples, w))?;
    run.write_with("mismatch.csv", |mut w| {
        writeln!(w, "theta,x1,x2,n1,n2,jump,active")?;
        for m in &sol.mismatch {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_f64(m.theta),
                fmt_f64(m.point[0]),
                fmt_f64(m.point[1]),
                fmt_f64(m.normal[0]),
                fmt_f64(m.normal[1]),
                fmt_f64(m.jump),
                m.active
            )?;
        }
        Ok(())
    })?;
    if let Some(fol) = sol.foliation() {
        #[derive(Serialize)]
        struct Sample {
            theta: f64,
            m: f64,
            dm: f64,
            h: f64,
            b: f64,
            r: f64,
        }
        let samples: Vec<Sample> = (0..fol.len())
            .map(|k| Sample { theta: fol.theta[k], m: fol.m[k], dm: fol.dm[k], h: fol.h[k], b: fol.b[k], r: fol.r[k] })
            .collect();
        run.write_json("foliation.json", &samples)?;
    }
    Ok(sol)
}

fn rc_name(which: RcInterpretation) -> &'static str {
    match which {
        RcInterpretation::Formula => "formula",
        RcInterpretation::Figure => "figure",
    }
}

fn baselines(run: &mut Run) -> Result<Vec<RcBaseline>> {
    let cfg = run.config.model.clone();
    let rc = run.config.rc.clone();
    let mut out = Vec::new();
    for which in rc.interpretations {
        let b = run.timed("rc_baseline", || rc_baseline(&cfg, which, rc.samples))?;
        if let Some(f) = &b.field {
            run.write_with(&format!("rc_{}_field.csv", rc_name(which)), |w| write_scalar_csv(f, w))?;
        }
        out.push(b);
    }
    Ok(out)
}

fn market(run: &mut Run, u: &ScalarField) -> Result<MarketOutcome> {
    let cfg = run.config.model.clone();
    let mc = run.config.market;
    let opts = mc.options();
    let out = run.timed("market", || simulate_market(u, &cfg, &opts))?;
    run.tolerance("market.tol_bilevel", out.tol_bilevel);
    if out.bilevel_gap > out.tol_bilevel {
        run.note(format!("profit replay differs from the objective by {:.3e} > {:.3e}", out.bilevel_gap, out.tol_bilevel));
    }
    run.write_with("histogram.csv", |w| out.write_histogram_csv(w))?;
    Ok(out)
}

pub fn solve_primal_cmd(run: &mut Run) -> Result<Outcome> {
    let (u, rep) = primal(run)?;
    regions(run, &u)?;
    Ok(Outcome { converged: rep.status == SolveStatus::Converged })
}

pub fn solve_analytic_cmd(run: &mut Run) -> Result<Outcome> {
    let sol = analytic(run)?;
    Ok(Outcome { converged: sol.report.status == FbpStatus::Converged })
}

pub fn certify_cmd(run: &mut Run, field: Option<&Path>) -> Result<Outcome> {
    let (u, converged) = input_field(run, field)?;
    let cert = certificate(run, &u);
    run.write_json("certificate.json", &cert)?;
    Ok(Outcome { converged })
}

#[derive(Serialize)]
struct CompareRow {
    route: String,
    status: String,
    phi: f64,
    gap: f64,
    slackness_r2: f64,
    certified: bool,
    max_mismatch: Option<f64>,
    sup_diff_to_primal: f64,
    phi_diff_to_primal: f64,
}

pub fn compare_cmd(run: &mut Run) -> Result<Outcome> {
    let (u, rep) = primal(run)?;
    let cert = certificate(run, &u);
    let mut rows = vec![CompareRow {
        route: "primal".into(),
        status: format!("{:?}", rep.status),
        phi: cert.phi,
        gap: cert.gap,
        slackness_r2: cert.slackness_r2,
        certified: cert.certified,
        max_mismatch: None,
        sup_diff_to_primal: 0.0,
        phi_diff_to_primal: 0.0,
    }];
    let sol = analytic(run)?;
    let c = certificate(run, &sol.field);
    rows.push(CompareRow {
        route: format!("analytic_{:?}", sol.report.family).to_lowercase(),
        status: format!("{:?}", sol.report.status),
        phi: c.phi,
        gap: c.gap,
        slackness_r2: c.slackness_r2,
        certified: c.certified,
        max_mismatch: Some(sol.report.max_mismatch),
        sup_diff_to_primal: sol.field.max_abs_diff(&u),
        phi_diff_to_primal: c.phi - cert.phi,
    });
    for b in baselines(run)? {
        let Some(f) = &b.field else { continue };
        let c = certificate(run, f);
        rows.push(CompareRow {
            route: format!("rc_{}", rc_name(b.interpretation)),
            status: "baseline".into(),
            phi: c.phi,
            gap: c.gap,
            slackness_r2: c.slackness_r2,
            certified: c.certified,
            max_mismatch: Some(b.max_mismatch),
            sup_diff_to_primal: f.max_abs_diff(&u),
            phi_diff_to_primal: c.phi - cert.phi,
        });
    }
    run.write_json("compare.json", &rows)?;
    Ok(Outcome { converged: rep.status == SolveStatus::Converged && sol.report.status == FbpStatus::Converged })
}

pub fn simulate_market_cmd(run: &mut Run, field: Option<&Path>) -> Result<Outcome> {
    let (u, converged) = input_field(run, field)?;
    let out = market(run, &u)?;
    run.write_with("menu.csv", |w| out.menu.write_csv(w))?;
    let cfg = run.config.model.clone();
    let mc = run.config.market;
    let ic = run.timed("incentives", || check_incentives(&out, &cfg, mc.ic_pairs, mc.seed));
    if !ic.passed {
        run.note(format!("incentive check failed: IC {:.3e}, IR {:.3e}", ic.worst_ic_violation, ic.worst_ir_violation));
    }
    run.write_json("incentives.json", &ic)?;
    run.write_json("market.json", &out)?;
    Ok(Outcome { converged })
}

pub fn rc_baseline_cmd(run: &mut Run) -> Result<Outcome> {
    let b = baselines(run)?;
    run.write_json("rc_baseline.json", &b)?;
    Ok(Outcome { converged: true })
}

pub fn export_plots_cmd(run: &mut Run, field: Option<&Path>) -> Result<Outcome> {
    let (u, converged) = input_field(run, field)?;
    let mask = regions(run, &u)?;
    run.write_with("det_hessian.csv", |mut w| {
        writeln!(w, "x1,x2,det")?;
        for k in 0..mask.grid.len() {
            let p = mask.grid.point(k);
            writeln!(w, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(mask.det[k]))?;
        }
        Ok(())
    })?;
    let segments = run.timed("regions", || extract_bunches(&u, &mask));
    run.write_with("bunches.csv", |mut w| {
        writeln!(w, "theta,x1_start,x2_start,x1_end,x2_end,y1,y2,label")?;
        for s in &segments {
            let [p, q] = s.endpoints;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(s.theta),
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(q[0]),
                fmt_f64(q[1]),
                fmt_f64(s.product[0]),
                fmt_f64(s.product[1]),
                s.label.as_str()
            )?;
        }
        Ok(())
    })?;
    market(run, &u)?;
    Ok(Outcome { converged })
}
