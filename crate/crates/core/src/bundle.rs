//! Report bundle: CSV and JSON files describing a grid run.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! metadata.json          config echo, seeds, notes, failures
//! summary.csv            one row per variant, sorted by RMSE
//! per_step.csv           mean / std of |e| per variant and horizon step
//! seasonal_points.csv    per-instant mean |e| against day of year
//! seasonal_fit.csv       cubic coefficients per variant
//! seasonal_curve.csv     fitted curve per variant, days 1..=366
//! sigma_min.csv          correlation and sample count per BST variant
//! sigma_min_points.csv   logged smallest singular values
//! skipped.csv            instants that were not scored
//! variants/<name>.csv    per-instant errors
//! predictions/<name>.csv per-instant predictions, if kept
//! ```
//!
//! Apart from the `wall_time` columns, all files are reproducible.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{sigma_min_correlation, EvaluationReport, Family, GridOutcome, VariantSpec};
use crate::error::{Error, Result};
use crate::series::format_timestamp;

/// Horizon steps reported in the summary (1-based, one per decile).
pub const DECILE_STEPS: [usize; 10] = [10, 19, 29, 38, 48, 58, 67, 77, 86, 96];

pub const METADATA_FILE: &str = "metadata.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub family: Family,
    pub rmse: f64,
    pub instants: usize,
    pub skipped: usize,
    pub mean_wall_time: f64,
}

fn decile_steps(t_f: usize) -> Vec<usize> {
    if t_f == 96 {
        return DECILE_STEPS.to_vec();
    }
    let mut s: Vec<usize> = (1..=10).map(|d| ((d * t_f) as f64 / 10.0).round().max(1.0) as usize).collect();
    s.dedup();
    s
}

fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes the bundle for `outcome` into `dir`, creating it if needed.
/// `metadata` is stored as given under the `run` key.
pub fn write_bundle(dir: &Path, outcome: &GridOutcome, metadata: serde_json::Value, utc_offset_hours: f64) -> Result<()> {
    fs::create_dir_all(dir.join("variants"))?;
    let ranked = outcome.ranked();

    let meta = serde_json::json!({
        "format": 1,
        "version": env!("CARGO_PKG_VERSION"),
        "run": metadata,
        "variants": ranked.iter().map(|r| r.name()).collect::<Vec<_>>(),
        "failures": outcome.failures.iter().map(|(v, e)| serde_json::json!({"variant": v, "error": e})).collect::<Vec<_>>(),
        "notes": outcome.notes,
        "variant_notes": ranked.iter().map(|r| (r.name(), serde_json::json!(r.notes))).collect::<serde_json::Map<_, _>>(),
    });
    fs::write(dir.join(METADATA_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;

    let t_f = ranked.first().map_or(96, |r| r.per_step_mean.len());
    let deciles = decile_steps(t_f);
    let mut w = csv_writer(&dir.join(SUMMARY_FILE))?;
    let mut header: Vec<String> = ["variant", "family", "rmse", "instants", "skipped"].map(String::from).to_vec();
    header.extend(deciles.iter().map(|h| format!("mean_h{h}")));
    header.extend(deciles.iter().map(|h| format!("std_h{h}")));
    header.push("mean_wall_time".into());
    w.write_record(&header)?;
    for r in &ranked {
        let mut row = vec![
            r.name(),
            r.variant.family().to_string(),
            fmt(r.rmse),
            r.instants.len().to_string(),
            r.skipped.len().to_string(),
        ];
        row.extend(deciles.iter().map(|&h| fmt(r.per_step_mean[h - 1])));
        row.extend(deciles.iter().map(|&h| fmt(r.per_step_std[h - 1])));
        row.push(fmt(r.mean_wall_time));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("per_step.csv"))?;
    w.write_record(["variant", "step", "mean", "std"])?;
    for r in &ranked {
        for (h, (m, s)) in r.per_step_mean.iter().zip(&r.per_step_std).enumerate() {
            w.write_record([r.name(), (h + 1).to_string(), fmt(*m), fmt(*s)])?;
        }
    }
    w.flush()?;

    let mut points = csv_writer(&dir.join("seasonal_points.csv"))?;
    points.write_record(["variant", "time", "day_of_year", "mean_abs_error"])?;
    let mut fit = csv_writer(&dir.join("seasonal_fit.csv"))?;
    fit.write_record(["variant", "c0", "c1", "c2", "c3", "residual_ss"])?;
    let mut curve = csv_writer(&dir.join("seasonal_curve.csv"))?;
    curve.write_record(["variant", "day_of_year", "fitted"])?;
    for r in &ranked {
        for (rec, (day, e)) in r.instants.iter().zip(r.seasonal_points(utc_offset_hours)) {
            points.write_record([r.name(), format_timestamp(rec.time), fmt(day), fmt(e)])?;
        }
        if let Some(s) = &r.seasonal {
            let mut row = vec![r.name()];
            row.extend(s.coefficients.iter().map(|c| fmt(*c)));
            row.push(fmt(s.residual_ss));
            fit.write_record(&row)?;
            for (d, v) in &s.curve {
                curve.write_record([r.name(), format!("{d}"), fmt(*v)])?;
            }
        }
    }
    points.flush()?;
    fit.flush()?;
    curve.flush()?;

    let mut corr = csv_writer(&dir.join("sigma_min.csv"))?;
    corr.write_record(["variant", "correlation", "samples"])?;
    let mut sig = csv_writer(&dir.join("sigma_min_points.csv"))?;
    sig.write_record(["variant", "time", "sigma_min", "mean_abs_error"])?;
    for r in ranked.iter().filter(|r| r.variant.family().is_bst()) {
        let (c, n) = sigma_min_correlation(r)?;
        corr.write_record([r.name(), fmt(c), n.to_string()])?;
        for rec in &r.instants {
            if let Some(s) = rec.sigma_min {
                sig.write_record([r.name(), format_timestamp(rec.time), fmt(s), fmt(rec.mean_abs_error())])?;
            }
        }
    }
    corr.flush()?;
    sig.flush()?;

    let mut w = csv_writer(&dir.join("skipped.csv"))?;
    w.write_record(["step", "time", "reason"])?;
    for s in &outcome.skipped {
        let reason = serde_json::to_value(s.reason)?;
        w.write_record([s.step.to_string(), format_timestamp(s.time), reason.as_str().unwrap_or_default().to_string()])?;
    }
    w.flush()?;

    for r in &ranked {
        write_variant(&dir.join("variants").join(format!("{}.csv", r.name())), r)?;
        if r.instants.iter().any(|i| i.predictions.is_some()) {
            fs::create_dir_all(dir.join("predictions"))?;
            write_predictions(&dir.join("predictions").join(format!("{}.csv", r.name())), r)?;
        }
    }
    Ok(())
}

fn write_variant(path: &Path, r: &EvaluationReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let t_f = r.per_step_mean.len();
    let mut header: Vec<String> = ["time", "step", "sigma_min", "mean_abs_error", "wall_time"].map(String::from).to_vec();
    header.extend((1..=t_f).map(|h| format!("e_{h}")));
    w.write_record(&header)?;
    for rec in &r.instants {
        let mut row = vec![
            format_timestamp(rec.time),
            rec.step.to_string(),
            rec.sigma_min.map(fmt).unwrap_or_default(),
            fmt(rec.mean_abs_error()),
            fmt(rec.wall_time),
        ];
        row.extend(rec.abs_errors.iter().map(|e| fmt(*e)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_predictions(path: &Path, r: &EvaluationReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let t_f = r.per_step_mean.len();
    let mut header = vec!["time".to_string(), "step".to_string()];
    header.extend((1..=t_f).map(|h| format!("y_{h}")));
    w.write_record(&header)?;
    for rec in &r.instants {
        let Some(p) = &rec.predictions else { continue };
        let mut row = vec![format_timestamp(rec.time), rec.step.to_string()];
        row.extend(p.iter().map(|v| fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `summary.csv` of a bundle; rows come back sorted by RMSE.
pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join(SUMMARY_FILE);
    if !dir.join(METADATA_FILE).is_file() {
        return Err(Error::Input(format!("{} has no {METADATA_FILE}", dir.display())));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("{} lacks column {name}", path.display())))
    };
    let (cv, cf, cr, ci, cs, cw) = (
        col("variant")?,
        col("family")?,
        col("rmse")?,
        col("instants")?,
        col("skipped")?,
        col("mean_wall_time")?,
    );
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse {
            line: line + 2,
            msg: format!("invalid {what}"),
        };
        let variant = rec.get(cv).ok_or_else(|| bad("variant"))?.to_string();
        variant.parse::<VariantSpec>().map_err(|_| bad("variant"))?;
        rows.push(SummaryRow {
            variant,
            family: rec.get(cf).unwrap_or_default().parse().map_err(|_| bad("family"))?,
            rmse: rec.get(cr).unwrap_or_default().parse().map_err(|_| bad("rmse"))?,
            instants: rec.get(ci).unwrap_or_default().parse().map_err(|_| bad("instants"))?,
            skipped: rec.get(cs).unwrap_or_default().parse().map_err(|_| bad("skipped"))?,
            mean_wall_time: rec.get(cw).unwrap_or_default().parse().map_err(|_| bad("mean_wall_time"))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{} lists no variants", path.display())));
    }
    rows.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then_with(|| a.variant.cmp(&b.variant)));
    Ok(rows)
}

/// Best row of each family, in family order.
pub fn best_per_family(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    Family::ALL
        .iter()
        .filter_map(|f| {
            rows.iter()
                .filter(|r| r.family == *f)
                .min_by(|a, b| a.rmse.total_cmp(&b.rmse))
                .cloned()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deciles() {
        assert_eq!(decile_steps(96), DECILE_STEPS.to_vec());
        assert_eq!(decile_steps(10), (1..=10).collect::<Vec<_>>());
        assert_eq!(*decile_steps(20).last().unwrap(), 20);
    }

    #[test]
    fn best_of_each_family() {
        let row = |v: &str, f: Family, rmse: f64| SummaryRow {
            variant: v.into(),
            family: f,
            rmse,
            instants: 1,
            skipped: 0,
            mean_wall_time: 0.0,
        };
        let rows = vec![
            row("bst_static-l1e0", Family::BstStatic, 0.3),
            row("bst_static-l1e1", Family::BstStatic, 0.2),
            row("arx_static", Family::ArxStatic, 0.5),
        ];
        let best = best_per_family(&rows);
        assert_eq!(best.len(), 2);
        assert_eq!(best[0].variant, "arx_static");
        assert_eq!(best[1].variant, "bst_static-l1e1");
    }
}
