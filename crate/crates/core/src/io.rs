//! CSV ingestion and report formatting helpers.
//!
//! Market CSV schema: header `month,water_gl,actual_price,crop_price,
//! model_price,residual` (last two optional), UTF-8, `.` decimal separator.
//! Yield CSV schema: header `water,yield`.

use std::path::Path;

use crate::calibration::{MarketRow, YieldDatum};
use crate::error::{MarketError, Result};

fn parse_field(raw: &str, line: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| MarketError::Parse {
        line,
        msg: format!("non-numeric value {raw:?} in column {column}"),
    })
}

fn parse_optional(raw: Option<&str>, line: usize, column: &str) -> Result<Option<f64>> {
    match raw {
        None => Ok(None),
        Some(s) if s.trim().is_empty() => Ok(None),
        Some(s) => parse_field(s, line, column).map(Some),
    }
}

/// Read monthly market rows. GL values are kept as read; the GL to ML
/// conversion happens when rows enter the calibration formula.
pub fn ingest_market_csv(path: &Path) -> Result<Vec<MarketRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| MarketError::Parse { line: 0, msg: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|_| MarketError::Parse { line: 1, msg: "no header".into() })?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(MarketError::Parse { line: 1, msg: "no header".into() });
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| MarketError::Parse {
            line: 1,
            msg: format!("missing required column {name}"),
        })
    };
    let month_col = required("month")?;
    let water_col = required("water_gl")?;
    let actual_col = required("actual_price")?;
    let crop_col = required("crop_price")?;
    let model_col = col("model_price");
    let residual_col = col("residual");

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record.map_err(|e| MarketError::Parse { line, msg: e.to_string() })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        rows.push(MarketRow {
            month: field(month_col).trim().to_string(),
            water_gl: parse_field(field(water_col), line, "water_gl")?,
            actual_price: parse_field(field(actual_col), line, "actual_price")?,
            crop_price: parse_field(field(crop_col), line, "crop_price")?,
            model_price: parse_optional(model_col.map(|c| field(c)), line, "model_price")?,
            residual: parse_optional(residual_col.map(|c| field(c)), line, "residual")?,
        });
    }
    if rows.is_empty() {
        return Err(MarketError::Parse { line: 1, msg: "no data rows".into() });
    }
    Ok(rows)
}

/// Write market rows back out in the ingestion schema (6 significant
/// digits, so ingest(emit(rows)) round-trips at CSV precision).
pub fn emit_market_csv(rows: &[MarketRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| MarketError::Parse { line: 0, msg: e.to_string() })?;
    writer
        .write_record(["month", "water_gl", "actual_price", "crop_price", "model_price", "residual"])
        .map_err(|e| MarketError::Parse { line: 0, msg: e.to_string() })?;
    for row in rows {
        let opt = |v: Option<f64>| v.map(|x| fmt_sig(x, 6)).unwrap_or_default();
        writer
            .write_record([
                row.month.clone(),
                fmt_sig(row.water_gl, 6),
                fmt_sig(row.actual_price, 6),
                fmt_sig(row.crop_price, 6),
                opt(row.model_price),
                opt(row.residual),
            ])
            .map_err(|e| MarketError::Parse { line: 0, msg: e.to_string() })?;
    }
    writer.flush()?;
    Ok(())
}

/// Read (water, yield) observations for the yield-curve fit.
pub fn ingest_yield_csv(path: &Path) -> Result<Vec<YieldDatum>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| MarketError::Parse { line: 0, msg: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|_| MarketError::Parse { line: 1, msg: "no header".into() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| MarketError::Parse {
            line: 1,
            msg: format!("missing required column {name}"),
        })
    };
    let water_col = col("water")?;
    let yield_col = col("yield")?;
    let mut data = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| MarketError::Parse { line, msg: e.to_string() })?;
        data.push(YieldDatum {
            water: parse_field(record.get(water_col).unwrap_or(""), line, "water")?,
            yield_t: parse_field(record.get(yield_col).unwrap_or(""), line, "yield")?,
        });
    }
    Ok(data)
}

/// Format with `sig` significant digits in plain decimal notation.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    let rounded = if decimals == 0 {
        let scale = 10f64.powi(exp + 1 - sig as i32);
        (x / scale).round() * scale
    } else {
        x
    };
    format!("{:.*}", decimals, rounded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("wm-io-{name}-{}", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn ingest_minimal_csv() {
        let path = temp(
            "min",
            "month,water_gl,actual_price,crop_price\nJUL,37,260,280\nAUG,54.3,200,260\n",
        );
        let rows = ingest_market_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].month, "JUL");
        assert_eq!(rows[0].water_gl, 37.0);
        assert_eq!(rows[0].model_price, None);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn empty_file_is_a_header_error() {
        let path = temp("empty", "");
        let err = ingest_market_csv(&path).unwrap_err();
        assert!(err.to_string().contains("no header") || err.to_string().contains("line 1"));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn non_numeric_water_names_the_line() {
        let path = temp(
            "bad",
            "month,water_gl,actual_price,crop_price\nJUL,37,260,280\nAUG,oops,200,260\n",
        );
        let err = ingest_market_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("water_gl"), "{msg}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn market_csv_round_trips_at_csv_precision() {
        let rows = vec![
            MarketRow {
                month: "JUL".into(),
                water_gl: 37.0,
                actual_price: 260.0,
                crop_price: 280.0,
                model_price: Some(262.6),
                residual: Some(0.01),
            },
            MarketRow {
                month: "DEC".into(),
                water_gl: 76.6,
                actual_price: 270.0,
                crop_price: 285.0,
                model_price: None,
                residual: None,
            },
        ];
        let path = std::env::temp_dir().join(format!("wm-io-rt-{}.csv", std::process::id()));
        emit_market_csv(&rows, &path).unwrap();
        let back = ingest_market_csv(&path).unwrap();
        assert_eq!(rows, back);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn fmt_sig_rounds_to_significant_digits() {
        assert_eq!(fmt_sig(262.5831, 6), "262.583");
        assert_eq!(fmt_sig(0.0123456789, 6), "0.0123457");
        assert_eq!(fmt_sig(1234567.0, 6), "1234570");
        assert_eq!(fmt_sig(0.0, 6), "0");
    }
}
