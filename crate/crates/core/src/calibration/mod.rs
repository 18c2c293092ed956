//! Parameter fitting: the HARA yield curve against per-farm yield data, and
//! the aggregate clearing-price formula against monthly market rows
//! (allocation, actual price, crop price).

mod lm;

pub use lm::{levenberg_marquardt, LmOptions, LmOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// One (water, yield) observation. Water in ML, yield in tonnes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldDatum {
    pub water: f64,
    pub yield_t: f64,
}

/// One month of market data. `water_gl` is the total allocation in GL; it
/// is converted to ML (x1000) when it enters the price formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRow {
    pub month: String,
    pub water_gl: f64,
    pub actual_price: f64,
    pub crop_price: f64,
    pub model_price: Option<f64>,
    pub residual: Option<f64>,
}

pub const GL_TO_ML: f64 = 1000.0;

/// A fitted parameter vector with per-point relative residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Root-mean-square relative residual.
    pub rms: f64,
}

impl CalibrationFit {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.param_names.iter().position(|n| n == name).map(|i| self.params[i])
    }
}

fn rms(residuals: &[f64]) -> f64 {
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// HARA yield curve Y(w) = ((1-gamma)/gamma) * (a*w/(1-gamma) + b)^gamma.
pub fn hara_yield(w: f64, a: f64, b: f64, gamma: f64) -> f64 {
    (1.0 - gamma) / gamma * (a * w / (1.0 - gamma) + b).max(0.0).powf(gamma)
}

/// Fit (a, b, gamma) to yield data by multi-start damped least squares on
/// relative residuals. Box: a in [1e-3, 1e3] (log-spaced starts),
/// b in [0, 1e3], gamma in [0.05, 0.95].
pub fn fit_hara_yield(data: &[YieldDatum]) -> Result<CalibrationFit> {
    if data.len() < 4 {
        return Err(MarketError::Fit(format!(
            "need at least 4 data points, got {}",
            data.len()
        )));
    }
    let w0 = data[0].water;
    if data.iter().all(|d| d.water == w0) {
        return Err(MarketError::Fit("water values are all equal".into()));
    }
    let y_max = data.iter().map(|d| d.yield_t.abs()).fold(0.0, f64::max);
    if y_max <= 0.0 {
        return Err(MarketError::Fit("all yields are zero".into()));
    }

    let residual_fn = |x: &[f64]| -> Option<Vec<f64>> {
        let (a, b, gamma) = (x[0], x[1], x[2]);
        Some(
            data.iter()
                .map(|d| {
                    (hara_yield(d.water, a, b, gamma) - d.yield_t)
                        / d.yield_t.abs().max(1e-6 * y_max)
                })
                .collect(),
        )
    };

    let lower = [1e-3, 0.0, 0.05];
    let upper = [1e3, 1e3, 0.95];
    let mut best: Option<LmOutcome> = None;
    for ia in 0..5 {
        // log-spaced from 1e-2 to 1e2
        let a0 = 10f64.powf(-2.0 + ia as f64);
        for ib in 0..5 {
            let b0 = ib as f64 * 2.5;
            for ig in 0..5 {
                let g0 = 0.1 + ig as f64 * 0.2;
                if let Some(out) = levenberg_marquardt(
                    &residual_fn,
                    &[a0, b0, g0],
                    &lower,
                    &upper,
                    LmOptions::default(),
                ) {
                    if out.converged
                        && best.as_ref().map_or(true, |b| out.sse < b.sse)
                    {
                        best = Some(out);
                    }
                }
            }
        }
    }

    let best = best.ok_or_else(|| MarketError::Fit("no start converged".into()))?;
    let residuals = residual_fn(&best.x).unwrap();
    Ok(CalibrationFit {
        param_names: vec!["a".into(), "b".into(), "gamma".into()],
        params: best.x,
        rms: rms(&residuals),
        residuals,
    })
}

/// Aggregate clearing-price model evaluated at one month.
///
/// `s_b` = sum of b_i/a_i, `s_a` = sum of (1/a_i)^(gamma/(gamma-1)); the
/// price depends on the population only through these aggregates.
pub fn aggregate_model_price(
    water_ml: f64,
    crop_price: f64,
    s_b: f64,
    s_a: f64,
    gamma: f64,
    lambda: f64,
    t: f64,
) -> f64 {
    ((water_ml / (1.0 - gamma) + s_b) / s_a).powf(gamma - 1.0) * crop_price
        * (-lambda * t).exp()
}

/// Fit (s_b, s_a, gamma, T) to monthly rows with lambda fixed, minimizing
/// squared relative price errors. Targets the model-price column when a row
/// carries one, else the actual price. `n` is recorded as metadata only:
/// the price formula sees the population through the aggregates alone.
pub fn fit_market_aggregates(
    rows: &[MarketRow],
    lambda: f64,
    n: usize,
) -> Result<CalibrationFit> {
    if rows.len() < 4 {
        return Err(MarketError::Fit(format!(
            "need at least 4 rows, got {}",
            rows.len()
        )));
    }
    for row in rows {
        if !(row.water_gl > 0.0 && row.crop_price > 0.0) {
            return Err(MarketError::Fit(format!(
                "row {} has non-positive water or crop price",
                row.month
            )));
        }
    }
    let targets: Vec<f64> =
        rows.iter().map(|r| r.model_price.unwrap_or(r.actual_price)).collect();
    if targets.iter().any(|&t| !(t > 0.0)) {
        return Err(MarketError::Fit("non-positive target price".into()));
    }

    // Parameters: [s_b, log10(s_a), gamma, T].
    let residual_fn = |x: &[f64]| -> Option<Vec<f64>> {
        let (s_b, s_a, gamma, t) = (x[0], 10f64.powf(x[1]), x[2], x[3]);
        Some(
            rows.iter()
                .zip(&targets)
                .map(|(row, &target)| {
                    let q = aggregate_model_price(
                        row.water_gl * GL_TO_ML,
                        row.crop_price,
                        s_b,
                        s_a,
                        gamma,
                        lambda,
                        t,
                    );
                    q / target - 1.0
                })
                .collect(),
        )
    };

    let lower = [0.0, -4.0, 0.05, 0.2];
    let upper = [1e7, 10.0, 0.95, 1.2];
    let mut best: Option<LmOutcome> = None;
    for isb in 0..5 {
        let sb0 = [0.0, 1e2, 1e3, 1e4, 1e5][isb];
        for isa in 0..5 {
            let lsa0 = -2.0 + 2.5 * isa as f64;
            for ig in 0..5 {
                let g0 = 0.1 + ig as f64 * 0.2;
                for it in 0..5 {
                    let t0 = 0.25 + it as f64 * 0.225;
                    if let Some(out) = levenberg_marquardt(
                        &residual_fn,
                        &[sb0, lsa0, g0, t0],
                        &lower,
                        &upper,
                        LmOptions::default(),
                    ) {
                        if out.converged
                            && best.as_ref().map_or(true, |b| out.sse < b.sse)
                        {
                            best = Some(out);
                        }
                    }
                }
            }
        }
    }

    let best = best.ok_or_else(|| MarketError::Fit("no start converged".into()))?;
    let residuals = residual_fn(&best.x).unwrap();
    Ok(CalibrationFit {
        param_names: vec![
            "s_b".into(),
            "s_a".into(),
            "gamma".into(),
            "t".into(),
            "lambda".into(),
            "n".into(),
        ],
        params: vec![
            best.x[0],
            10f64.powf(best.x[1]),
            best.x[2],
            best.x[3],
            lambda,
            n as f64,
        ],
        rms: rms(&residuals),
        residuals,
    })
}

/// Price predicted by a market fit for one row.
pub fn fitted_price(fit: &CalibrationFit, water_gl: f64, crop_price: f64) -> Result<f64> {
    let get = |name: &str| {
        fit.param(name)
            .ok_or_else(|| MarketError::Fit(format!("fit lacks parameter {name}")))
    };
    Ok(aggregate_model_price(
        water_gl * GL_TO_ML,
        crop_price,
        get("s_b")?,
        get("s_a")?,
        get("gamma")?,
        get("lambda")?,
        get("t")?,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRowReport {
    pub month: String,
    pub water_gl: f64,
    pub actual_price: f64,
    pub fitted_price: f64,
    /// |fitted - actual| / actual.
    pub residual_vs_actual: f64,
    pub reference_model_price: Option<f64>,
    /// |fitted - reference model| / reference model, when the column exists.
    pub residual_vs_reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: Vec<TableRowReport>,
    /// Months with residual vs actual below 10%.
    pub months_under_10pct: usize,
    pub rms_vs_actual: f64,
    pub rms_vs_reference: Option<f64>,
}

/// Recompute every row's model price from a fit and report relative
/// residuals against the actual-price column (and the reference model column
/// where present).
pub fn reproduce_table(fit: &CalibrationFit, rows: &[MarketRow]) -> Result<TableReport> {
    let mut out = Vec::with_capacity(rows.len());
    let mut vs_actual = Vec::new();
    let mut vs_reference = Vec::new();
    for row in rows {
        let price = fitted_price(fit, row.water_gl, row.crop_price)?;
        let residual_vs_actual = (price - row.actual_price).abs() / row.actual_price;
        let residual_vs_reference = row.model_price.map(|m| (price - m).abs() / m);
        vs_actual.push(residual_vs_actual);
        if let Some(r) = residual_vs_reference {
            vs_reference.push(r);
        }
        out.push(TableRowReport {
            month: row.month.clone(),
            water_gl: row.water_gl,
            actual_price: row.actual_price,
            fitted_price: price,
            residual_vs_actual,
            reference_model_price: row.model_price,
            residual_vs_reference,
        });
    }
    let months_under_10pct = out.iter().filter(|r| r.residual_vs_actual < 0.10).count();
    Ok(TableReport {
        months_under_10pct,
        rms_vs_actual: rms(&vs_actual),
        rms_vs_reference: if vs_reference.is_empty() { None } else { Some(rms(&vs_reference)) },
        rows: out,
    })
}
