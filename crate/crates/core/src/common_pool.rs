//! Common-pool ("smart market") clearing.
//!
//! Every participant trades with the pool at one equilibrium price. The
//! price solves `sum_i w_ag,i(q) = W`; we carry two independent routes to
//! it, a closed form and a bracketing bisection on excess demand, and keep
//! both as a cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::market_core::{
    marginal_agricultural_utility, validate_population, Allocation, MarketConfig, Participant,
};

/// Relative tolerance on the clearing residual |sum w_tr| / W.
pub const CLEARING_TOL: f64 = 1e-10;
/// Relative tolerance for KKT stationarity and price agreement.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClearingMethod {
    ClosedForm,
    Numeric,
}

/// Outcome of clearing one market.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClearingResult {
    /// Equilibrium price in $/ML.
    pub q: f64,
    /// Shadow price of the water budget, m = q * e^{lambda T}.
    pub m: f64,
    /// Per-participant allocations, in input order.
    pub allocations: Vec<Allocation>,
    pub method: ClearingMethod,
}

impl ClearingResult {
    /// Net traded volume; zero at equilibrium up to tolerance.
    pub fn clearing_residual(&self) -> f64 {
        self.allocations.iter().map(|a| a.w_tr).sum()
    }

    pub fn any_clamped(&self) -> bool {
        self.allocations.iter().any(|a| a.clamped)
    }
}

/// A participant's utility-maximizing split at price `q`, solving the
/// first-order condition a*(a*w_ag/(1-gamma)+b)^(gamma-1)*p_cr = q*e^{lambda T}.
///
/// When the unconstrained optimum calls for negative agricultural water the
/// allocation is clamped to `w_ag = 0` and flagged.
pub fn individual_optimum(q: f64, p: &Participant, cfg: &MarketConfig) -> Result<Allocation> {
    if !(q > 0.0) {
        return Err(MarketError::Domain(format!("price must be positive, got {q}")));
    }
    let m = q * cfg.growth();
    let w_ag = ((m / (p.a * cfg.p_cr)).powf(1.0 / (cfg.gamma - 1.0)) - p.b) * (1.0 - cfg.gamma)
        / p.a;
    if w_ag < 0.0 {
        Ok(Allocation { w_ag: 0.0, w_tr: p.w, clamped: true })
    } else {
        Ok(Allocation { w_ag, w_tr: p.w - w_ag, clamped: false })
    }
}

/// The price at which a participant neither buys nor sells.
pub fn autarky_price(p: &Participant, cfg: &MarketConfig) -> Result<f64> {
    Ok(marginal_agricultural_utility(p.w, p, cfg)? / cfg.growth())
}

/// Excess agricultural demand E(q) = sum_i w_ag,i(q) - W. Strictly
/// decreasing in q; its root is the clearing price.
pub fn excess_demand(q: f64, ps: &[Participant], cfg: &MarketConfig) -> Result<f64> {
    let total_w: f64 = ps.iter().map(|p| p.w).sum();
    let mut demand = 0.0;
    for p in ps {
        demand += individual_optimum(q, p, cfg)?.w_ag;
    }
    Ok(demand - total_w)
}

fn check_population(ps: &[Participant], cfg: &MarketConfig) -> Result<f64> {
    let report = validate_population(ps, cfg);
    if !report.is_valid() {
        return Err(MarketError::Domain(report.violations.join("; ")));
    }
    let total_w: f64 = ps.iter().map(|p| p.w).sum();
    if !(total_w > 0.0) {
        return Err(MarketError::Degenerate(format!(
            "total endowment W = {total_w} must be positive"
        )));
    }
    Ok(total_w)
}

/// Clearing price by bracketing + bisection on excess demand.
///
/// The initial bracket is the [min, max] of autarky prices, expanded
/// geometrically until E(q) changes sign. This route is independent of the
/// closed form and serves as its oracle.
pub fn clearing_price_numeric(ps: &[Participant], cfg: &MarketConfig) -> Result<f64> {
    let total_w = check_population(ps, cfg)?;
    let tol = CLEARING_TOL * total_w;

    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for p in ps {
        if let Ok(price) = autarky_price(p, cfg) {
            lo = lo.min(price);
            hi = hi.max(price);
        }
    }
    if !lo.is_finite() || hi <= 0.0 {
        // Autarky marginals singular everywhere (w_i = 0 with b_i = 0); fall
        // back to a unit bracket and let the expansion find the root.
        lo = 1.0;
        hi = 1.0;
    }

    // Lower price raises demand, so E(lo) should be >= 0 and E(hi) <= 0.
    let mut expansions = 0;
    while excess_demand(lo, ps, cfg)? < 0.0 {
        lo /= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(MarketError::Bracket("excess demand never positive".into()));
        }
    }
    expansions = 0;
    while excess_demand(hi, ps, cfg)? > 0.0 {
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(MarketError::Bracket("excess demand never negative".into()));
        }
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let e = excess_demand(mid, ps, cfg)?;
        if e.abs() <= tol || (hi - lo) <= f64::EPSILON * mid {
            return Ok(mid);
        }
        if e > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let e = excess_demand(mid, ps, cfg)?;
    if e.abs() <= tol {
        Ok(mid)
    } else {
        Err(MarketError::Bracket(format!(
            "bisection stalled with residual {e} (tol {tol})"
        )))
    }
}

/// The exponent applied to 1/a_i in the closed form's denominator sum.
///
/// `Derived` is gamma/(gamma-1), obtained by substituting the individual
/// optimum into the clearing condition. `Printed` is 1/(gamma-1), retained
/// only for comparison: it disagrees with the numeric clearing price except
/// in degenerate populations (e.g. all a_i equal to 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenominatorExponent {
    Derived,
    Printed,
}

fn closed_form_over(
    ps: &[Participant],
    active: &[bool],
    cfg: &MarketConfig,
    exponent: DenominatorExponent,
) -> Result<f64> {
    // Clamped participants use zero agricultural water, so the active set
    // must absorb the full endowment W.
    let total_w: f64 = ps.iter().map(|p| p.w).sum();
    let gamma = cfg.gamma;
    let expo = match exponent {
        DenominatorExponent::Derived => gamma / (gamma - 1.0),
        DenominatorExponent::Printed => 1.0 / (gamma - 1.0),
    };
    let mut s_b = 0.0;
    let mut s_a = 0.0;
    let mut any = false;
    for (p, &is_active) in ps.iter().zip(active) {
        if is_active {
            s_b += p.b / p.a;
            s_a += (1.0 / p.a).powf(expo);
            any = true;
        }
    }
    if !any {
        return Err(MarketError::Degenerate(
            "every participant clamped at w_ag = 0".into(),
        ));
    }
    let numerator = total_w / (1.0 - gamma) + s_b;
    if !(numerator > 0.0 && s_a > 0.0) {
        return Err(MarketError::Domain(format!(
            "closed form undefined: numerator {numerator}, denominator {s_a}"
        )));
    }
    Ok((numerator / s_a).powf(gamma - 1.0) * cfg.p_cr / cfg.growth())
}

/// Closed-form clearing price over an interior population.
pub fn clearing_price_closed_form(ps: &[Participant], cfg: &MarketConfig) -> Result<f64> {
    check_population(ps, cfg)?;
    closed_form_over(ps, &vec![true; ps.len()], cfg, DenominatorExponent::Derived)
}

/// Closed-form price with a selectable denominator exponent; see
/// [`DenominatorExponent`].
pub fn clearing_price_closed_form_with(
    ps: &[Participant],
    cfg: &MarketConfig,
    exponent: DenominatorExponent,
) -> Result<f64> {
    check_population(ps, cfg)?;
    closed_form_over(ps, &vec![true; ps.len()], cfg, exponent)
}

/// Clear the market: closed-form price with a clamp-and-reclear loop for
/// participants pinned at `w_ag = 0`, then per-participant optima.
///
/// Clamps only accumulate (removing a clamped participant's demand raises
/// the price), so the loop runs at most n passes.
pub fn clear_market(ps: &[Participant], cfg: &MarketConfig) -> Result<ClearingResult> {
    let total_w = check_population(ps, cfg)?;
    let mut active = vec![true; ps.len()];

    for _pass in 0..=ps.len() {
        let q = closed_form_over(ps, &active, cfg, DenominatorExponent::Derived)?;
        let mut allocations = Vec::with_capacity(ps.len());
        let mut new_clamp = false;
        for (idx, p) in ps.iter().enumerate() {
            if active[idx] {
                let alloc = individual_optimum(q, p, cfg)?;
                if alloc.clamped {
                    active[idx] = false;
                    new_clamp = true;
                }
                allocations.push(alloc);
            } else {
                allocations.push(Allocation { w_ag: 0.0, w_tr: p.w, clamped: true });
            }
        }
        if new_clamp {
            continue;
        }
        let result = ClearingResult {
            q,
            m: q * cfg.growth(),
            allocations,
            method: ClearingMethod::ClosedForm,
        };
        if result.clearing_residual().abs() <= 10.0 * CLEARING_TOL * total_w {
            return Ok(result);
        }
        break;
    }

    // Closed form unusable (should not happen for valid populations); the
    // numeric route clamps inside excess demand and needs no loop.
    let q = clearing_price_numeric(ps, cfg)?;
    let allocations = ps
        .iter()
        .map(|p| individual_optimum(q, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClearingResult { q, m: q * cfg.growth(), allocations, method: ClearingMethod::Numeric })
}

/// One KKT check with its residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktReport {
    pub checks: Vec<KktCheck>,
}

impl KktReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Verify the first-order conditions of a clearing result: stationarity of
/// every interior participant, complementary slackness of clamped ones,
/// budget identities, market clearing, and m = q * e^{lambda T}.
pub fn verify_kkt(res: &ClearingResult, ps: &[Participant], cfg: &MarketConfig) -> KktReport {
    let mut checks = Vec::new();
    let m = res.q * cfg.growth();
    let total_w: f64 = ps.iter().map(|p| p.w).sum();

    let shadow_residual = (res.m - m).abs();
    checks.push(KktCheck {
        name: "shadow price m = q*e^{lambda T}".into(),
        residual: shadow_residual,
        tolerance: KKT_TOL * m,
        pass: shadow_residual <= KKT_TOL * m,
    });

    for (p, alloc) in ps.iter().zip(&res.allocations) {
        if alloc.clamped {
            // At the boundary the marginal may not exceed the shadow price.
            let marginal = marginal_agricultural_utility(0.0, p, cfg).unwrap_or(f64::INFINITY);
            let residual = (marginal - m).max(0.0);
            checks.push(KktCheck {
                name: format!("complementary slackness ({})", p.id),
                residual,
                tolerance: KKT_TOL * m,
                pass: residual <= KKT_TOL * m,
            });
        } else {
            let residual = match marginal_agricultural_utility(alloc.w_ag, p, cfg) {
                Ok(marginal) => (marginal - m).abs(),
                Err(_) => f64::INFINITY,
            };
            checks.push(KktCheck {
                name: format!("stationarity ({})", p.id),
                residual,
                tolerance: KKT_TOL * m,
                pass: residual <= KKT_TOL * m,
            });
        }
        let budget = (alloc.w_ag + alloc.w_tr - p.w).abs();
        let budget_tol = 1e-12 * p.w.max(1.0);
        checks.push(KktCheck {
            name: format!("budget ({})", p.id),
            residual: budget,
            tolerance: budget_tol,
            pass: budget <= budget_tol,
        });
    }

    let clearing = res.clearing_residual().abs();
    let clearing_tol = 1e-9 * total_w;
    checks.push(KktCheck {
        name: "market clearing".into(),
        residual: clearing,
        tolerance: clearing_tol,
        pass: clearing <= clearing_tol,
    });

    KktReport { checks }
}
