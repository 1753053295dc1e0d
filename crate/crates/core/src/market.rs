//! Price menus, agent choices and profit replay.
//!
//! The menu is the conjugate of the payoff: `v(y) = max_x x.y - u(x)` over the
//! agent nodes, tabulated on a product grid covering the chosen products.
//! Agents then pick by brute force among the tabulated products and the
//! free outside option `y = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::io::fmt_f64;
use crate::model::{evaluate_phi_with_tol, gradient, legendre_transform, Grid, ModelConfig, ScalarField};

/// Ties in utility closer than this are broken by the product ordering.
const TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketOptions {
    /// Product grid spacing relative to the agent spacing.
    pub resolution: f64,
    /// Extra product cells added around the range of `Du`.
    pub margin_cells: usize,
    /// Allowed `|profit - phi|` in units of the agent spacing.
    pub tol_bilevel_cells: f64,
    /// Products chosen by at least this many agents count as bunched.
    pub bunch_agents: usize,
}

impl Default for MarketOptions {
    fn default() -> Self {
        MarketOptions { resolution: 1.0, margin_cells: 3, tol_bilevel_cells: 20.0, bunch_agents: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMenu {
    pub products: Grid,
    pub prices: Vec<f64>,
    /// What the menu was computed from.
    pub provenance: String,
    /// Product box of the observed gradients, before the margin.
    pub support_lo: [f64; 2],
    pub support_hi: [f64; 2],
}

impl PriceMenu {
    pub fn price(&self, k: usize) -> f64 {
        self.prices[k]
    }

    /// Bilinear interpolation of the tabulated prices; `None` outside the product box.
    pub fn price_at(&self, y: [f64; 2]) -> Option<f64> {
        let g = self.products;
        let s = [(y[0] - g.lo[0]) / g.h, (y[1] - g.lo[1]) / g.h];
        let top = (g.n - 1) as f64;
        if !(s[0] >= -1e-12 && s[1] >= -1e-12 && s[0] <= top + 1e-12 && s[1] <= top + 1e-12) {
            return None;
        }
        let i = (s[0].floor() as usize).min(g.n - 2);
        let j = (s[1].floor() as usize).min(g.n - 2);
        let (t, u) = ((s[0] - i as f64).clamp(0.0, 1.0), (s[1] - j as f64).clamp(0.0, 1.0));
        let v = |a: usize, b: usize| self.prices[g.idx(a, b)];
        Some((1.0 - t) * (1.0 - u) * v(i, j) + t * (1.0 - u) * v(i + 1, j) + (1.0 - t) * u * v(i, j + 1) + t * u * v(i + 1, j + 1))
    }

    /// Difference of the forward and backward slopes of `v` at `y` along `dir`,
    /// each taken over `cells` product cells.
    pub fn slope_jump(&self, y: [f64; 2], dir: [f64; 2], cells: f64) -> Option<f64> {
        let n = dir[0].hypot(dir[1]);
        let d = cells * self.products.h;
        let e = [dir[0] / n * d, dir[1] / n * d];
        let f = self.price_at([y[0] + e[0], y[1] + e[1]])?;
        let c = self.price_at(y)?;
        let b = self.price_at([y[0] - e[0], y[1] - e[1]])?;
        Some((f - c) / d - (c - b) / d)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y1", "y2", "price"])?;
        for k in 0..self.products.len() {
            let y = self.products.point(k);
            w.write_record([fmt_f64(y[0]), fmt_f64(y[1]), fmt_f64(self.prices[k])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conjugate of `u` on a product grid spanning the range of its gradient.
pub fn price_menu(u: &ScalarField, opts: &MarketOptions) -> Result<PriceMenu> {
    if !u.is_finite() {
        return Err(Error::DomainViolation { what: "payoff has non-finite values", value: f64::NAN });
    }
    if !(opts.resolution > 0.0 && opts.resolution.is_finite()) {
        return Err(Error::Config(format!("market.resolution must be positive, got {}", opts.resolution)));
    }
    let du = gradient(u);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for k in 0..du.grid.len() {
        let y = du.at(k);
        for c in 0..2 {
            lo[c] = lo[c].min(y[c]);
            hi[c] = hi[c].max(y[c]);
        }
    }
    // products are nonnegative; the outside option sits at the origin
    let step = opts.resolution * u.grid.h;
    let margin = opts.margin_cells as f64 * step;
    let box_lo = [(lo[0] - margin).max(0.0), (lo[1] - margin).max(0.0)];
    let box_lo = [(box_lo[0] / step).floor() * step, (box_lo[1] / step).floor() * step];
    let side = (hi[0] + margin - box_lo[0]).max(hi[1] + margin - box_lo[1]).max(step);
    let n = (side / step).ceil() as usize + 1;
    let products = Grid { lo: box_lo, h: step, n };
    let (v, _) = legendre_transform(u, &products, 1.0);
    Ok(PriceMenu {
        products,
        prices: v.values,
        provenance: format!("conjugate of a payoff on [{}, {}]^2 with {} nodes per side", u.grid.lo[0], u.grid.hi()[0], u.grid.n),
        support_lo: lo,
        support_hi: hi,
    })
}

/// Product chosen by type `x`: `None` is the outside option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub product: Option<usize>,
    pub y: [f64; 2],
    pub utility: f64,
}

fn prefer(y: [f64; 2], than: [f64; 2]) -> bool {
    let (s, t) = (y[0] + y[1], than[0] + than[1]);
    if s != t {
        return s > t;
    }
    (y[0], y[1]) > (than[0], than[1])
}

/// Exhaustive argmax of `x.y - v(y)` over the menu and the outside option.
pub fn best_response(menu: &PriceMenu, x: [f64; 2]) -> Choice {
    let g = menu.products;
    let mut best = Choice { product: None, y: [0.0, 0.0], utility: 0.0 };
    for k in 0..g.len() {
        let p = menu.prices[k];
        if !p.is_finite() {
            continue;
        }
        let y = g.point(k);
        let util = x[0] * y[0] + x[1] * y[1] - p;
        if util > best.utility + TIE || (util >= best.utility - TIE && prefer(y, best.y)) {
            best = Choice { product: Some(k), y, utility: util };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCell {
    pub y: [f64; 2],
    pub mass: f64,
    pub agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub menu: PriceMenu,
    pub choices: Vec<[f64; 2]>,
    pub utilities: Vec<f64>,
    pub profit: f64,
    pub phi: f64,
    pub bilevel_gap: f64,
    pub tol_bilevel: f64,
    /// Mass of types taking the outside option (or the zero product).
    pub exclusion_fraction: f64,
    /// Mass of types whose product is shared by at least `bunch_agents` types.
    pub bunched_fraction: f64,
    pub min_utility: f64,
    /// One entry per product with positive mass, the outside option first.
    pub histogram: Vec<HistogramCell>,
}

impl MarketOutcome {
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y1", "y2", "mass"])?;
        for c in &self.histogram {
            w.write_record([fmt_f64(c.y[0]), fmt_f64(c.y[1]), fmt_f64(c.mass)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn simulate_market(u: &ScalarField, cfg: &ModelConfig, opts: &MarketOptions) -> Result<MarketOutcome> {
    cfg.validate()?;
    let grid = cfg.grid();
    if u.grid != grid {
        return Err(Error::GridMismatch { expected: grid.len(), got: u.grid.len() });
    }
    let menu = price_menu(u, opts)?;
    let picks: Vec<Choice> = (0..grid.len()).into_par_iter().map(|k| best_response(&menu, grid.point(k))).collect();
    let w = cfg.weights();

    let mut profit = 0.0;
    let mut excluded = 0.0;
    let mut outside = (0.0, 0usize);
    let mut per_product = vec![(0.0, 0usize); menu.products.len()];
    for (k, c) in picks.iter().enumerate() {
        match c.product {
            Some(p) => {
                profit += w[k] * (menu.prices[p] - cfg.cost.cost(c.y));
                per_product[p].0 += w[k];
                per_product[p].1 += 1;
            }
            None => {
                outside.0 += w[k];
                outside.1 += 1;
            }
        }
        if c.y == [0.0, 0.0] {
            excluded += w[k];
        }
    }
    let mut histogram = vec![HistogramCell { y: [0.0, 0.0], mass: outside.0, agents: outside.1 }];
    let mut bunched = 0.0;
    for (p, &(mass, agents)) in per_product.iter().enumerate() {
        if agents == 0 {
            continue;
        }
        let y = menu.products.point(p);
        if y != [0.0, 0.0] && agents >= opts.bunch_agents {
            bunched += mass;
        }
        histogram.push(HistogramCell { y, mass, agents });
    }
    let phi = evaluate_phi_with_tol(u, cfg, f64::INFINITY)?;
    let tol_bilevel = opts.tol_bilevel_cells * grid.h;
    let bilevel_gap = (profit - phi).abs();
    if bilevel_gap > tol_bilevel {
        log::warn!("profit replay {profit:.6} differs from the payoff objective {phi:.6} by more than {tol_bilevel:.3e}");
    }
    let utilities: Vec<f64> = picks.iter().map(|c| c.utility).collect();
    Ok(MarketOutcome {
        menu,
        choices: picks.iter().map(|c| c.y).collect(),
        min_utility: utilities.iter().cloned().fold(f64::INFINITY, f64::min),
        utilities,
        profit,
        phi,
        bilevel_gap,
        tol_bilevel,
        exclusion_fraction: excluded,
        bunched_fraction: bunched,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncentiveReport {
    pub pairs: usize,
    /// Largest gain from mimicking another type.
    pub worst_ic_violation: f64,
    pub worst_ir_violation: f64,
    pub passed: bool,
}

/// Incentive compatibility on random pairs of grid types and participation
/// for every type.
pub fn check_incentives(outcome: &MarketOutcome, cfg: &ModelConfig, pairs: usize, seed: u64) -> IncentiveReport {
    let grid = cfg.grid();
    let menu = &outcome.menu;
    let price = |y: [f64; 2]| {
        if y == [0.0, 0.0] {
            0.0
        } else {
            menu.price_at(y).unwrap_or(f64::INFINITY)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let (k, l) = (rng.gen_range(0..grid.len()), rng.gen_range(0..grid.len()));
        let x = grid.point(k);
        let (y, z) = (outcome.choices[k], outcome.choices[l]);
        let own = x[0] * y[0] + x[1] * y[1] - price(y);
        let mimic = x[0] * z[0] + x[1] * z[1] - price(z);
        worst = worst.max(mimic - own);
    }
    let worst_ir = outcome.utilities.iter().fold(0.0_f64, |m, &v| m.max(-v));
    IncentiveReport { pairs, worst_ic_violation: worst, worst_ir_violation: worst_ir, passed: worst <= 1e-12 && worst_ir <= 1e-12 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(n: usize) -> (ScalarField, ModelConfig) {
        let cfg = ModelConfig::new(0.0, n).unwrap();
        (ScalarField::from_fn(cfg.grid(), |x1, x2| 0.5 * (x1 * x1 + x2 * x2)), cfg)
    }

    #[test]
    fn self_dual_menu() {
        let (u, cfg) = quadratic(41);
        let menu = price_menu(&u, &MarketOptions::default()).unwrap();
        for y in [[0.2, 0.3], [0.5, 0.5], [0.9, 0.1]] {
            let v = menu.price_at(y).unwrap();
            assert!((v - 0.5 * (y[0] * y[0] + y[1] * y[1])).abs() < cfg.h(), "{y:?} {v}");
        }
    }

    #[test]
    fn zero_payoff_menu_is_top_corner_surplus() {
        let cfg = ModelConfig::new(0.0, 21).unwrap();
        let menu = price_menu(&ScalarField::zeros(cfg.grid()), &MarketOptions::default()).unwrap();
        for k in 0..menu.products.len() {
            let y = menu.products.point(k);
            assert!((menu.prices[k] - (y[0] + y[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_best_response() {
        let (u, _) = quadratic(41);
        let menu = price_menu(&u, &MarketOptions::default()).unwrap();
        let c = best_response(&menu, [0.6, 0.8]);
        assert!((c.y[0] - 0.6).abs() <= menu.products.h + 1e-12 && (c.y[1] - 0.8).abs() <= menu.products.h + 1e-12, "{:?}", c.y);
        assert!((c.utility - 0.5).abs() < 0.05);
    }

    #[test]
    fn infinite_prices_leave_outside_option() {
        let products = Grid::square([0.0, 0.0], 1.0, 5);
        let mut prices = vec![f64::INFINITY; products.len()];
        prices[0] = 0.0;
        let menu = PriceMenu { products, prices, provenance: "test".into(), support_lo: [0.0; 2], support_hi: [1.0; 2] };
        let c = best_response(&menu, [0.7, 0.2]);
        assert_eq!(c.y, [0.0, 0.0]);
        assert_eq!(c.utility, 0.0);
    }

    #[test]
    fn ties_prefer_larger_products() {
        let products = Grid::square([0.0, 0.0], 1.0, 3);
        let prices = vec![0.0; products.len()];
        let menu = PriceMenu { products, prices, provenance: "test".into(), support_lo: [0.0; 2], support_hi: [1.0; 2] };
        // at x = 0 every product gives zero utility
        assert_eq!(best_response(&menu, [0.0, 0.0]).y, [1.0, 1.0]);
        // equal utility for (1, 0) and (0, 1); the larger first coordinate wins
        let mut prices = vec![10.0; products.len()];
        prices[products.idx(2, 0)] = 0.5;
        prices[products.idx(0, 2)] = 0.5;
        let menu = PriceMenu { products, prices, provenance: "test".into(), support_lo: [0.0; 2], support_hi: [1.0; 2] };
        assert_eq!(best_response(&menu, [1.0, 1.0]).y, [1.0, 0.0]);
    }

    #[test]
    fn replay_matches_objective_for_smooth_payoff() {
        let (u, cfg) = quadratic(33);
        let out = simulate_market(&u, &cfg, &MarketOptions::default()).unwrap();
        assert!(out.bilevel_gap <= out.tol_bilevel, "{} vs {}", out.profit, out.phi);
        assert!(out.min_utility >= 0.0);
        let mass: f64 = out.histogram.iter().map(|c| c.mass).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let ic = check_incentives(&out, &cfg, 2000, 7);
        assert!(ic.passed, "{ic:?}");
    }

    #[test]
    fn histogram_csv_header() {
        let (u, cfg) = quadratic(17);
        let out = simulate_market(&u, &cfg, &MarketOptions::default()).unwrap();
        let mut buf = Vec::new();
        out.write_histogram_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("y1,y2,mass\n"));
    }
}
