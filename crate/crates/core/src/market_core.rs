//! Domain types and the HARA utility algebra.
//!
//! A participant's utility splits into an agricultural part, modelled by a
//! HARA (hyperbolic absolute risk aversion) yield curve scaled by the crop
//! price, and a trading part, linear in the traded volume and compounded
//! over the growing period at the risk-free rate.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// One market participant: HARA parameters and initial water endowment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    /// Water-utilization efficiency (yield-units per ML), must be > 0.
    pub a: f64,
    /// Non-water productivity intercept, must be >= 0.
    pub b: f64,
    /// Initial water endowment in ML, must be >= 0.
    pub w: f64,
}

impl Participant {
    pub fn new(id: impl Into<String>, a: f64, b: f64, w: f64) -> Self {
        Self { id: id.into(), a, b, w }
    }
}

/// Market-wide constants shared by every participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// HARA curvature exponent, restricted to (0, 1).
    pub gamma: f64,
    /// Risk-free interest rate per year.
    pub lambda: f64,
    /// Crop growing period in years.
    pub t: f64,
    /// Crop price in $ per yield-unit.
    pub p_cr: f64,
}

impl MarketConfig {
    pub fn new(gamma: f64, lambda: f64, t: f64, p_cr: f64) -> Self {
        Self { gamma, lambda, t, p_cr }
    }

    /// Compounding factor e^{lambda * t} applied to trading proceeds.
    pub fn growth(&self) -> f64 {
        (self.lambda * self.t).exp()
    }
}

/// A participant's split of their endowment into agricultural use and trade.
///
/// `w_tr > 0` means the participant sells, `w_tr < 0` means they buy.
/// `clamped` marks allocations forced to the `w_ag = 0` boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub w_ag: f64,
    pub w_tr: f64,
    #[serde(default)]
    pub clamped: bool,
}

impl Allocation {
    pub fn new(w_ag: f64, w_tr: f64) -> Self {
        Self { w_ag, w_tr, clamped: false }
    }

    /// The no-trade allocation for a participant.
    pub fn autarky(p: &Participant) -> Self {
        Self::new(p.w, 0.0)
    }
}

/// Argument of the HARA power: a*w_ag/(1-gamma) + b.
pub fn hara_argument(w_ag: f64, p: &Participant, cfg: &MarketConfig) -> f64 {
    p.a * w_ag / (1.0 - cfg.gamma) + p.b
}

/// Crop yield Y(w_ag) = ((1-gamma)/gamma) * (a*w_ag/(1-gamma) + b)^gamma.
pub fn crop_yield(w_ag: f64, p: &Participant, cfg: &MarketConfig) -> Result<f64> {
    let base = hara_argument(w_ag, p, cfg);
    if base < 0.0 {
        return Err(MarketError::Domain(format!(
            "HARA argument {base} < 0 for participant {} at w_ag = {w_ag}",
            p.id
        )));
    }
    Ok((1.0 - cfg.gamma) / cfg.gamma * base.powf(cfg.gamma))
}

/// Agricultural utility: crop yield valued at the crop price.
pub fn agricultural_utility(w_ag: f64, p: &Participant, cfg: &MarketConfig) -> Result<f64> {
    Ok(crop_yield(w_ag, p, cfg)? * cfg.p_cr)
}

/// Trading utility: proceeds of selling `w_tr` ML at price `q`, compounded
/// over the growing period. Negative `w_tr` is a purchase.
pub fn trading_utility(w_tr: f64, q: f64, cfg: &MarketConfig) -> f64 {
    w_tr * q * cfg.growth()
}

/// Total utility of an allocation at price `q`.
pub fn total_utility(
    alloc: &Allocation,
    q: f64,
    p: &Participant,
    cfg: &MarketConfig,
) -> Result<f64> {
    Ok(agricultural_utility(alloc.w_ag, p, cfg)? + trading_utility(alloc.w_tr, q, cfg))
}

/// Marginal agricultural utility: a * (a*w_ag/(1-gamma) + b)^(gamma-1) * p_cr.
///
/// Strictly positive and strictly decreasing in `w_ag` on its domain; the
/// derivative is singular where the HARA argument vanishes.
pub fn marginal_agricultural_utility(
    w_ag: f64,
    p: &Participant,
    cfg: &MarketConfig,
) -> Result<f64> {
    let base = hara_argument(w_ag, p, cfg);
    if base <= 0.0 {
        return Err(MarketError::Domain(format!(
            "HARA argument {base} <= 0 for participant {}: marginal utility undefined",
            p.id
        )));
    }
    Ok(p.a * base.powf(cfg.gamma - 1.0) * cfg.p_cr)
}

/// Every invariant violation found for a participant/config pair.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every Participant and MarketConfig invariant; an empty report means valid.
pub fn validate(p: &Participant, cfg: &MarketConfig) -> ValidationReport {
    let mut v = Vec::new();
    if !(p.a > 0.0) {
        v.push(format!("participant {}: a > 0 violated (a = {})", p.id, p.a));
    }
    if !(p.b >= 0.0) {
        v.push(format!("participant {}: b >= 0 violated (b = {})", p.id, p.b));
    }
    if !(p.w >= 0.0) {
        v.push(format!("participant {}: w >= 0 violated (w = {})", p.id, p.w));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        v.push(format!("gamma in (0,1) violated (gamma = {})", cfg.gamma));
    }
    if !(cfg.lambda >= 0.0) {
        v.push(format!("lambda >= 0 violated (lambda = {})", cfg.lambda));
    }
    if !(cfg.t > 0.0) {
        v.push(format!("T > 0 violated (T = {})", cfg.t));
    }
    if !(cfg.p_cr > 0.0) {
        v.push(format!("p_cr > 0 violated (p_cr = {})", cfg.p_cr));
    }
    ValidationReport { violations: v }
}

/// Validate a whole population against one config.
pub fn validate_population(ps: &[Participant], cfg: &MarketConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ps.is_empty() {
        report.violations.push("n >= 1 violated (empty population)".into());
    }
    for p in ps {
        report.violations.extend(validate(p, cfg).violations);
    }
    report
}
