//! Welfare aggregation and numerical verification of the mechanism claims:
//! welfare dominance of the common pool, Pareto optimality of its
//! equilibrium via pairwise transfer perturbations, and the no-deviation
//! (Nash) property at the equilibrium price.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common_pool::{clear_market, individual_optimum, ClearingResult};
use crate::error::{MarketError, Result};
use crate::market_core::{
    agricultural_utility, total_utility, Allocation, MarketConfig, Participant,
};
use crate::pairwise::{pairwise_market, PairingStrategy};

/// Relative tolerance for welfare-dominance and Pareto margins.
pub const WELFARE_TOL: f64 = 1e-9;
/// Relative tolerance on the finite-difference slope f'(0).
pub const SLOPE_TOL: f64 = 1e-6;

/// Sum of all participants' utilities at a common price.
///
/// When the market clears at one price the transfer terms cancel and the
/// total equals the sum of agricultural utilities alone.
pub fn total_welfare(
    allocs: &[Allocation],
    q: f64,
    ps: &[Participant],
    cfg: &MarketConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for (p, alloc) in ps.iter().zip(allocs) {
        sum += total_utility(alloc, q, p, cfg)?;
    }
    Ok(sum)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerAgentWelfare {
    pub id: String,
    pub u_common: f64,
    pub u_pairwise: f64,
}

/// Side-by-side welfare of the two mechanisms on one population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WelfareReport {
    pub u_common: f64,
    pub u_pairwise: f64,
    /// u_common - u_pairwise; nonnegative up to tolerance.
    pub gap: f64,
    pub per_agent: Vec<PerAgentWelfare>,
    pub strategy: PairingStrategy,
}

impl WelfareReport {
    pub fn dominance_holds(&self) -> bool {
        self.gap >= -WELFARE_TOL * self.u_common.abs()
    }
}

/// Clear the same population under both mechanisms and report the gap.
pub fn welfare_gap(
    ps: &[Participant],
    cfg: &MarketConfig,
    strategy: PairingStrategy,
    seed: u64,
) -> Result<WelfareReport> {
    let common = clear_market(ps, cfg)?;
    let u_common = total_welfare(&common.allocations, common.q, ps, cfg)?;
    let pair = pairwise_market(ps, strategy, cfg, seed)?;
    let pair_allocs = pair.allocations(ps);

    let mut per_agent = Vec::with_capacity(ps.len());
    let mut deal_price = vec![None; ps.len()];
    for (&(i, j), deal) in pair.pair_indices.iter().zip(&pair.deals) {
        deal_price[i] = Some(deal.q_tilde);
        deal_price[j] = Some(deal.q_tilde);
    }
    for (idx, p) in ps.iter().enumerate() {
        let u_pair = match deal_price[idx] {
            Some(q_tilde) => total_utility(&pair_allocs[idx], q_tilde, p, cfg)?,
            None => agricultural_utility(p.w, p, cfg)?,
        };
        per_agent.push(PerAgentWelfare {
            id: p.id.clone(),
            u_common: total_utility(&common.allocations[idx], common.q, p, cfg)?,
            u_pairwise: u_pair,
        });
    }

    Ok(WelfareReport {
        u_common,
        u_pairwise: pair.total_welfare,
        gap: u_common - pair.total_welfare,
        per_agent,
        strategy,
    })
}

/// Joint utility change when participant `i` takes `d` ML more agricultural
/// water (paying d*q) and `j` gives `d` up (receiving d*q). The payments
/// cancel in the sum, so the sign is decided by the yield terms alone.
pub fn pareto_f(
    res: &ClearingResult,
    i: usize,
    j: usize,
    d: f64,
    ps: &[Participant],
    cfg: &MarketConfig,
) -> Result<f64> {
    if d < 0.0 {
        return Err(MarketError::Domain(format!("transfer amount d = {d} must be >= 0")));
    }
    let (wi, wj) = (res.allocations[i].w_ag, res.allocations[j].w_ag);
    if wj - d < 0.0 {
        return Err(MarketError::Domain(format!(
            "transfer d = {d} exceeds giver's agricultural allocation {wj}"
        )));
    }
    let delta_i = -d * res.q + agricultural_utility(wi + d, &ps[i], cfg)?
        - agricultural_utility(wi, &ps[i], cfg)?;
    let delta_j = d * res.q + agricultural_utility(wj - d, &ps[j], cfg)?
        - agricultural_utility(wj, &ps[j], cfg)?;
    Ok(delta_i + delta_j)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoSample {
    pub i: usize,
    pub j: usize,
    pub d: f64,
    pub f_value: f64,
}

/// Result of scanning an allocation for profitable pairwise transfers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoScan {
    pub samples: Vec<ParetoSample>,
    pub max_f: f64,
    /// Central-difference estimates of f'(0), one per scanned ordered pair.
    pub fprime_at_zero: Vec<f64>,
    pub second_differences_negative: bool,
    /// |total welfare| of the scanned state; tolerances are relative to it.
    pub scale: f64,
    pub pass: bool,
}

/// Largest transfer participant `j` can give without leaving the domain.
fn max_transfer(res: &ClearingResult, j: usize) -> f64 {
    0.999 * res.allocations[j].w_ag
}

/// Scan an allocation for Pareto-improving pairwise transfers: a
/// deterministic log-spaced d-grid over ring-adjacent pairs plus seeded
/// random (i, j, d) triples. Passes iff no sampled transfer improves joint
/// utility beyond tolerance, every slope at d = 0 vanishes, and f is
/// concave along the grids.
pub fn pareto_scan(
    res: &ClearingResult,
    ps: &[Participant],
    cfg: &MarketConfig,
    n_samples: usize,
    seed: u64,
) -> Result<ParetoScan> {
    let n = ps.len();
    let u_total = total_welfare(&res.allocations, res.q, ps, cfg)?;
    let scale = u_total.abs();
    let mut samples = Vec::new();
    let mut fprime = Vec::new();
    let mut concave = true;

    let w_min = ps
        .iter()
        .map(|p| p.w)
        .filter(|&w| w > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);

    // Deterministic pairs around the ring.
    for k in 0..n {
        let (i, j) = (k, (k + 1) % n);
        if i == j {
            continue;
        }
        let d_max = max_transfer(res, j);
        if d_max <= 0.0 {
            continue;
        }
        // 20 log-spaced transfer amounts.
        let d_lo = (1e-6 * w_min).min(d_max / 2.0);
        for step in 0..20 {
            let t = step as f64 / 19.0;
            let d = d_lo * (d_max / d_lo).powf(t);
            samples.push(ParetoSample { i, j, d, f_value: pareto_f(res, i, j, d, ps, cfg)? });
        }

        // Slope at zero by central difference: f(-h) is the reverse transfer.
        let h = 1e-7 * w_min;
        if max_transfer(res, i) > h {
            let forward = pareto_f(res, i, j, h, ps, cfg)?;
            let backward = pareto_f(res, j, i, h, ps, cfg)?;
            fprime.push((forward - backward) / (2.0 * h));
        }

        // Concavity along an even grid.
        let h2 = d_max / 10.0;
        let grid: Vec<f64> = (0..=9)
            .map(|k| pareto_f(res, i, j, k as f64 * h2, ps, cfg))
            .collect::<Result<_>>()?;
        for k in 1..9 {
            if grid[k + 1] - 2.0 * grid[k] + grid[k - 1] >= 0.0 {
                concave = false;
            }
        }
    }

    // Random triples.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < n_samples && attempts < 100 * n_samples.max(1) && n >= 2 {
        attempts += 1;
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let d_max = max_transfer(res, j);
        if d_max <= 0.0 {
            continue;
        }
        let d = rng.gen_range(0.0..d_max);
        samples.push(ParetoSample { i, j, d, f_value: pareto_f(res, i, j, d, ps, cfg)? });
        drawn += 1;
    }

    let max_f = samples.iter().map(|s| s.f_value).fold(f64::NEG_INFINITY, f64::max);
    let slopes_ok = fprime.iter().all(|fp| fp.abs() <= SLOPE_TOL * scale);
    let pass = max_f <= WELFARE_TOL * scale && slopes_ok && concave;

    Ok(ParetoScan {
        samples,
        max_f,
        fprime_at_zero: fprime,
        second_differences_negative: concave,
        scale,
        pass,
    })
}

/// Negative control for the Pareto scan: re-optimize every other
/// participant at a perturbed price (factor * q) while the rest keep their
/// equilibrium allocations. Marginal utilities then differ across the two
/// groups, so a profitable pairwise transfer exists and the scan must fail.
pub fn mispriced_control(
    res: &ClearingResult,
    ps: &[Participant],
    cfg: &MarketConfig,
    factor: f64,
) -> Result<ClearingResult> {
    let q_perturbed = res.q * factor;
    let mut control = res.clone();
    for (idx, p) in ps.iter().enumerate() {
        if idx % 2 == 0 {
            control.allocations[idx] = individual_optimum(q_perturbed, p, cfg)?;
        }
    }
    Ok(control)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashSample {
    pub participant: usize,
    pub alpha: f64,
    /// Deviation utility minus equilibrium utility.
    pub delta: f64,
}

/// Result of searching for profitable unilateral deviations at the
/// equilibrium price.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashReport {
    pub samples: Vec<NashSample>,
    pub max_delta: f64,
    pub scale: f64,
    pub pass: bool,
}

/// Sample feasible unilateral deviations w_ag' = alpha * w at the fixed
/// equilibrium price; none may improve on the equilibrium utility.
pub fn nash_deviation_test(
    res: &ClearingResult,
    ps: &[Participant],
    cfg: &MarketConfig,
    n_samples: usize,
    seed: u64,
) -> Result<NashReport> {
    let u_total = total_welfare(&res.allocations, res.q, ps, cfg)?;
    let scale = u_total.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();

    for (idx, p) in ps.iter().enumerate() {
        let eq_u = total_utility(&res.allocations[idx], res.q, p, cfg)?;
        let eq_alpha = if p.w > 0.0 { res.allocations[idx].w_ag / p.w } else { 0.0 };
        let mut alphas = vec![0.0, eq_alpha];
        for _ in 0..n_samples {
            alphas.push(rng.gen_range(0.0..5.0));
        }
        for alpha in alphas {
            let w_ag = alpha * p.w;
            let dev = Allocation::new(w_ag, p.w - w_ag);
            let delta = total_utility(&dev, res.q, p, cfg)? - eq_u;
            samples.push(NashSample { participant: idx, alpha, delta });
        }
    }

    let max_delta = samples.iter().map(|s| s.delta).fold(f64::NEG_INFINITY, f64::max);
    let pass = max_delta <= WELFARE_TOL * scale;
    Ok(NashReport { samples, max_delta, scale, pass })
}
