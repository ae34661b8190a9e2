//! Criterion-vs-Taylor comparison tables at matched parameter counts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::curves::{aggregate, read_curves, Aggregate, AggregatedLevel, CURVES_FILE};
use crate::error::{Error, Result};
use crate::metrics::{fmt_value, Metric};
use crate::pruning::Criterion;

pub const RUN_FILE: &str = "run.json";
/// Default relative parameter-count difference allowed when pairing levels.
pub const PAIR_TOLERANCE: f64 = 0.02;

/// `100·(other − taylor)/taylor`, independent of the metric's direction.
pub fn percent_delta(other: f64, taylor: f64) -> f64 {
    100.0 * (other - taylor) / taylor
}

/// Identity of a result directory, stored as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub criterion: Criterion,
    /// `prune` or `retrain`.
    pub kind: String,
    pub repetitions: usize,
    #[serde(default)]
    pub notes: serde_json::Value,
}

impl RunInfo {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::invalid("report", format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn label(&self) -> String {
        if self.kind == "prune" {
            self.criterion.name().to_string()
        } else {
            format!("{}-{}", self.kind, self.criterion.name())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub criterion: String,
    pub params_taylor: f64,
    pub params_other: f64,
    /// Reduction of the Taylor level relative to the Taylor run's largest model.
    pub reduction_pct: f64,
    pub taylor: [f64; 12],
    pub other: [f64; 12],
    pub delta_pct: [f64; 12],
}

pub fn report_header() -> String {
    let mut cols = vec!["criterion".to_string(), "params_taylor".into(), "params_other".into(), "reduction_pct".into()];
    for m in Metric::ALL {
        cols.push(format!("{}_taylor", m.name()));
        cols.push(format!("{}_other", m.name()));
        cols.push(format!("{}_delta_pct", m.name()));
    }
    cols.join(",")
}

/// Pairs every Taylor level with the nearest-size level of `other` when the
/// relative size difference is within `tolerance`.
pub fn compare(label: &str, taylor: &[AggregatedLevel], other: &[AggregatedLevel], tolerance: f64) -> Vec<ComparisonRow> {
    let top = taylor.iter().map(|l| l.params).fold(0.0, f64::max);
    taylor
        .iter()
        .filter_map(|t| {
            let o = other.iter().min_by(|a, b| (a.params - t.params).abs().total_cmp(&(b.params - t.params).abs()))?;
            ((o.params - t.params).abs() <= tolerance * t.params).then(|| ComparisonRow {
                criterion: label.to_string(),
                params_taylor: t.params,
                params_other: o.params,
                reduction_pct: 100.0 * (1.0 - t.params / top),
                taylor: t.values,
                other: o.values,
                delta_pct: std::array::from_fn(|i| percent_delta(o.values[i], t.values[i])),
            })
        })
        .collect()
}

fn render_csv(rows: &[ComparisonRow]) -> String {
    let mut s = report_header();
    s.push('\n');
    for r in rows {
        let mut cols = vec![
            r.criterion.clone(),
            format!("{:.1}", r.params_taylor),
            format!("{:.1}", r.params_other),
            format!("{:.4}", r.reduction_pct),
        ];
        for i in 0..12 {
            cols.push(fmt_value(r.taylor[i]));
            cols.push(fmt_value(r.other[i]));
            cols.push(fmt_value(r.delta_pct[i]));
        }
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

/// Aligned table: one block per metric, direction arrow in the heading.
pub fn render_text(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    for (i, m) in Metric::ALL.iter().enumerate() {
        let arrow = if m.higher_is_better() { "↑" } else { "↓" };
        let _ = writeln!(s, "{} {arrow}", m.name());
        let _ = writeln!(
            s,
            "  {:<18} {:>12} {:>12} {:>10} {:>12} {:>12} {:>9}",
            "vs taylor", "params(T)", "params(C)", "reduct%", "taylor", "criterion", "Δ%"
        );
        for r in rows {
            let _ = writeln!(
                s,
                "  {:<18} {:>12.0} {:>12.0} {:>10.2} {:>12.4} {:>12.4} {:>+9.2}",
                r.criterion, r.params_taylor, r.params_other, r.reduction_pct, r.taylor[i], r.other[i], r.delta_pct[i]
            );
        }
        s.push('\n');
    }
    s
}

pub struct Report {
    pub rows: Vec<ComparisonRow>,
    pub csv_path: PathBuf,
    pub text: String,
}

/// Compares every non-Taylor run against the (single) Taylor run.
pub fn cmd_report(runs: &[PathBuf], out: &Path, how: Aggregate, tolerance: f64) -> Result<Report> {
    if runs.len() < 2 {
        return Err(Error::config("runs", "need at least two result directories"));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::config("tolerance", "must be >= 0"));
    }
    let mut loaded = Vec::new();
    for dir in runs {
        let info = RunInfo::read(dir)?;
        let levels = aggregate(&read_curves(&dir.join(CURVES_FILE))?, how);
        loaded.push((info, levels));
    }
    let taylor_pos = loaded
        .iter()
        .position(|(i, _)| i.criterion.is_taylor())
        .ok_or_else(|| Error::config("runs", "no Taylor run among the inputs"))?;
    let (taylor_info, taylor) = &loaded[taylor_pos];
    let mut rows = Vec::new();
    for (k, (info, levels)) in loaded.iter().enumerate() {
        if k == taylor_pos {
            continue;
        }
        let label = if info.kind == taylor_info.kind {
            info.criterion.name().to_string()
        } else {
            info.label()
        };
        rows.extend(compare(&label, taylor, levels, tolerance));
    }
    if rows.is_empty() {
        return Err(Error::NoPairs(format!("no levels within {:.1}% of each other", 100.0 * tolerance)));
    }
    fs::create_dir_all(out)?;
    let csv_path = out.join("report.csv");
    write_checked_report(&csv_path, &render_csv(&rows))?;
    let text = render_text(&rows);
    fs::write(out.join("report.txt"), &text)?;
    Ok(Report { rows, csv_path, text })
}

fn write_checked_report(path: &Path, body: &str) -> Result<()> {
    // the criterion column is textual, so only header and arity are checked
    fs::write(path, body)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let n = rdr.headers()?.len();
    if rdr.headers()?.iter().collect::<Vec<_>>().join(",") != report_header() {
        return Err(Error::CsvSchema {
            path: path.to_path_buf(),
            msg: "unexpected header".into(),
        });
    }
    for rec in rdr.records() {
        if rec?.len() != n {
            return Err(Error::CsvSchema {
                path: path.to_path_buf(),
                msg: "row arity differs from header".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_delta_matches_printed_table_values() {
        assert!((percent_delta(41.70, 35.83) - 16.39).abs() < 0.05);
        assert!((percent_delta(0.3276, 0.3896) - (-15.93)).abs() < 0.05);
        assert_eq!(percent_delta(2.5, 2.5), 0.0);
    }

    fn lvl(params: f64, v: f64) -> AggregatedLevel {
        AggregatedLevel {
            event: 0,
            params,
            flops: 0.0,
            values: [v; 12],
        }
    }

    #[test]
    fn pairing_respects_tolerance() {
        let t = [lvl(1000.0, 1.0), lvl(500.0, 1.0)];
        let o = [lvl(1015.0, 2.0), lvl(450.0, 2.0)];
        let rows = compare("x", &t, &o, 0.02);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].params_other, 1015.0);
        assert!((rows[0].delta_pct[0] - 100.0).abs() < 1e-12);
        assert!(compare("x", &t, &o, 0.001).is_empty());
    }
}
