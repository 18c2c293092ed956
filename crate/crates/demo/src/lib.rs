//! Browser bindings for the water-market library.
//!
//! Three operations, each taking and returning JSON strings so the page
//! needs no generated glue types: clear a seeded market and trace its excess
//! demand curve, compare mechanism welfare, and trace the joint-utility
//! curve f(d) for a pairwise transfer at the equilibrium.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use water_market::analysis::{pareto_f, welfare_gap};
use water_market::common_pool::{clear_market, excess_demand};
use water_market::pairwise::PairingStrategy;
use water_market::scenario::{generate_population, GeneratorSpec};
use water_market::{MarketConfig, Participant};

#[derive(Deserialize)]
struct DemoRequest {
    count: usize,
    seed: u64,
    gamma: f64,
    lambda: f64,
    t: f64,
    crop_price: f64,
    /// Pair for the transfer curve; ignored by the other operations.
    #[serde(default)]
    pair: Option<(usize, usize)>,
}

fn parse(input: &str) -> Result<(Vec<Participant>, MarketConfig), String> {
    let req: DemoRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    build(&req)
}

fn build(req: &DemoRequest) -> Result<(Vec<Participant>, MarketConfig), String> {
    if req.count < 2 || req.count > 200 {
        return Err("count must be between 2 and 200".into());
    }
    if !(req.gamma > 0.0 && req.gamma < 1.0) {
        return Err("gamma must lie in (0, 1)".into());
    }
    let cfg = MarketConfig::new(req.gamma, req.lambda, req.t, req.crop_price);
    let spec = GeneratorSpec {
        count: req.count,
        a_range: [0.3, 3.0],
        b_range: [0.05, 1.5],
        w_range: [0.5, 40.0],
    };
    Ok((generate_population(&spec, &cfg, req.seed), cfg))
}

#[derive(Serialize)]
struct CurvePoint {
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct ClearResponse {
    q: f64,
    m: f64,
    total_water: f64,
    allocations: Vec<AllocationRow>,
    excess_demand: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct AllocationRow {
    id: String,
    w: f64,
    w_ag: f64,
    w_tr: f64,
    clamped: bool,
}

fn clear_impl(input: &str) -> Result<String, String> {
    let (ps, cfg) = parse(input)?;
    let res = clear_market(&ps, &cfg).map_err(|e| e.to_string())?;
    let mut curve = Vec::with_capacity(61);
    for k in 0..=60 {
        let price = res.q * (0.5 + k as f64 / 60.0);
        if let Ok(e) = excess_demand(price, &ps, &cfg) {
            curve.push(CurvePoint { x: price, y: e });
        }
    }
    let response = ClearResponse {
        q: res.q,
        m: res.m,
        total_water: ps.iter().map(|p| p.w).sum(),
        allocations: ps
            .iter()
            .zip(&res.allocations)
            .map(|(p, a)| AllocationRow {
                id: p.id.clone(),
                w: p.w,
                w_ag: a.w_ag,
                w_tr: a.w_tr,
                clamped: a.clamped,
            })
            .collect(),
        excess_demand: curve,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CompareRow {
    strategy: String,
    u_pairwise: f64,
    gap: f64,
}

#[derive(Serialize)]
struct CompareResponse {
    u_common: f64,
    strategies: Vec<CompareRow>,
}

fn compare_impl(input: &str) -> Result<String, String> {
    let (ps, cfg) = parse(input)?;
    let req: DemoRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let mut strategies = Vec::new();
    let mut u_common = 0.0;
    for (name, strategy) in [
        ("random", PairingStrategy::Random),
        ("greedy", PairingStrategy::Greedy),
        ("stable", PairingStrategy::Stable),
    ] {
        let report = welfare_gap(&ps, &cfg, strategy, req.seed).map_err(|e| e.to_string())?;
        u_common = report.u_common;
        strategies.push(CompareRow {
            strategy: name.into(),
            u_pairwise: report.u_pairwise,
            gap: report.gap,
        });
    }
    serde_json::to_string(&CompareResponse { u_common, strategies })
        .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TransferResponse {
    q: f64,
    i: usize,
    j: usize,
    d_max: f64,
    curve: Vec<CurvePoint>,
}

fn transfer_impl(input: &str) -> Result<String, String> {
    let (ps, cfg) = parse(input)?;
    let req: DemoRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let (i, j) = req.pair.unwrap_or((0, 1));
    if i >= ps.len() || j >= ps.len() || i == j {
        return Err("pair indices must be distinct and within the population".into());
    }
    let res = clear_market(&ps, &cfg).map_err(|e| e.to_string())?;
    let d_max = 0.999 * res.allocations[j].w_ag;
    let mut curve = Vec::with_capacity(101);
    for k in 0..=100 {
        let d = d_max * k as f64 / 100.0;
        let f = pareto_f(&res, i, j, d, &ps, &cfg).map_err(|e| e.to_string())?;
        curve.push(CurvePoint { x: d, y: f });
    }
    serde_json::to_string(&TransferResponse { q: res.q, i, j, d_max, curve })
        .map_err(|e| e.to_string())
}

/// Clear a seeded random market; returns the price, per-participant split,
/// and an excess-demand curve around the clearing price.
#[wasm_bindgen]
pub fn demo_clear(input: &str) -> Result<String, String> {
    clear_impl(input)
}

/// Welfare of the common pool vs one pair-wise round under each strategy.
#[wasm_bindgen]
pub fn demo_compare(input: &str) -> Result<String, String> {
    compare_impl(input)
}

/// Joint-utility change f(d) for transferring d ML within a pair at the
/// common-pool equilibrium; nonpositive everywhere when the pool is optimal.
#[wasm_bindgen]
pub fn demo_transfer_curve(input: &str) -> Result<String, String> {
    transfer_impl(input)
}
