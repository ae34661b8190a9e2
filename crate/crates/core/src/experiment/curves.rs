//! Plot-ready CSV files: the metric-vs-size curves of prune runs and the
//! per-metric series derived from them.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{fmt_value, Metric, MetricsReport};
use crate::pruning::PruneLevel;

pub const CURVES_FILE: &str = "curves.csv";

/// `repetition,event,params,flops,<12 metric columns>`; event 0 is the unpruned base.
pub fn curves_header() -> String {
    format!("repetition,event,params,flops,{}", MetricsReport::csv_header())
}

/// Header of the per-metric plot file: mean size per event, every repetition's
/// value, then best and mean across repetitions.
pub fn plot_header(repetitions: usize) -> String {
    let reps: Vec<String> = (0..repetitions).map(|r| format!("rep_{r}")).collect();
    format!("event,params,flops,{},best,mean", reps.join(","))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub repetition: usize,
    pub event: usize,
    pub params: usize,
    pub flops: u64,
    pub metrics: MetricsReport,
}

pub fn curve_rows(repetition: usize, levels: &[PruneLevel]) -> Vec<CurveRow> {
    levels
        .iter()
        .enumerate()
        .map(|(event, l)| CurveRow {
            repetition,
            event,
            params: l.params,
            flops: l.flops,
            metrics: l.metrics,
        })
        .collect()
}

pub fn render_curves(rows: &[CurveRow]) -> String {
    let mut s = curves_header();
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.repetition, r.event, r.params, r.flops, r.metrics.to_csv_row()));
    }
    s
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    check_csv(path, &curves_header())?;
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let f = &rec[i];
            if f.is_empty() {
                Ok(f64::NAN)
            } else {
                f.parse().map_err(|_| schema_err(path, format!("non-numeric field `{f}`")))
            }
        };
        let int = |i: usize| -> Result<u64> { rec[i].parse().map_err(|_| schema_err(path, format!("bad integer `{}`", &rec[i]))) };
        let values = (4..16).map(num).collect::<Result<Vec<f64>>>()?;
        rows.push(CurveRow {
            repetition: int(0)? as usize,
            event: int(1)? as usize,
            params: int(2)? as usize,
            flops: int(3)?,
            metrics: MetricsReport::from_values(&values).expect("12 values"),
        });
    }
    Ok(rows)
}

fn schema_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::CsvSchema {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Verifies the header matches exactly and every row has the header's arity
/// with numeric (or empty) fields.
pub fn check_csv(path: &Path, expected_header: &str) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(schema_err(path, "empty file")),
    };
    let header: Vec<&str> = header.iter().collect();
    if header.join(",") != expected_header {
        return Err(schema_err(path, format!("header `{}` != `{expected_header}`", header.join(","))));
    }
    let mut n = 0;
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(schema_err(path, format!("row {} has {} fields, expected {}", i + 1, rec.len(), header.len())));
        }
        if let Some(bad) = rec.iter().find(|f| !f.is_empty() && f.parse::<f64>().is_err()) {
            return Err(schema_err(path, format!("row {} has non-numeric field `{bad}`", i + 1)));
        }
        n += 1;
    }
    Ok(n)
}

/// Writes `contents` then re-reads it through the schema check.
pub fn write_checked(path: &Path, header: &str, contents: &str) -> Result<usize> {
    fs::write(path, contents)?;
    check_csv(path, header)
}

/// Rows grouped by event, each group ordered by repetition.
fn by_event(rows: &[CurveRow]) -> Vec<Vec<&CurveRow>> {
    let events = rows.iter().map(|r| r.event + 1).max().unwrap_or(0);
    let mut groups: Vec<Vec<&CurveRow>> = vec![Vec::new(); events];
    for r in rows {
        groups[r.event].push(r);
    }
    for g in &mut groups {
        g.sort_by_key(|r| r.repetition);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

pub fn best_of(metric: Metric, vals: impl IntoIterator<Item = f64>) -> f64 {
    vals.into_iter()
        .filter(|v| !v.is_nan())
        .fold(f64::NAN, |b, v| if b.is_nan() || metric.better(v, b) { v } else { b })
}

pub fn mean_of(vals: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.into_iter().filter(|v| !v.is_nan()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One plot CSV body per metric.
pub fn render_plots(rows: &[CurveRow], repetitions: usize) -> Vec<(Metric, String)> {
    let groups = by_event(rows);
    Metric::ALL
        .iter()
        .map(|&m| {
            let mut s = plot_header(repetitions);
            s.push('\n');
            for g in &groups {
                let params = mean_of(g.iter().map(|r| r.params as f64));
                let flops = mean_of(g.iter().map(|r| r.flops as f64));
                let mut reps = vec![f64::NAN; repetitions];
                for r in g {
                    if r.repetition < repetitions {
                        reps[r.repetition] = r.metrics.get(m);
                    }
                }
                let cols: Vec<String> = reps.iter().map(|&v| fmt_value(v)).collect();
                s.push_str(&format!(
                    "{},{:.1},{:.1},{},{},{}\n",
                    g[0].event,
                    params,
                    flops,
                    cols.join(","),
                    fmt_value(best_of(m, reps.iter().copied())),
                    fmt_value(mean_of(reps.iter().copied()))
                ));
            }
            (m, s)
        })
        .collect()
}

/// File-name-safe metric name for plot files.
pub fn plot_file_name(m: Metric) -> String {
    let safe: String = m.name().chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    format!("plot_{safe}.csv")
}

/// How repetitions are combined into one curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Best,
    Mean,
}

/// One aggregated point of a run's curve.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedLevel {
    pub event: usize,
    pub params: f64,
    pub flops: f64,
    pub values: [f64; 12],
}

pub fn aggregate(rows: &[CurveRow], how: Aggregate) -> Vec<AggregatedLevel> {
    by_event(rows)
        .into_iter()
        .map(|g| AggregatedLevel {
            event: g[0].event,
            params: mean_of(g.iter().map(|r| r.params as f64)),
            flops: mean_of(g.iter().map(|r| r.flops as f64)),
            values: Metric::ALL.map(|m| {
                let vals = g.iter().map(|r| r.metrics.get(m));
                match how {
                    Aggregate::Best => best_of(m, vals),
                    Aggregate::Mean => mean_of(vals),
                }
            }),
        })
        .collect()
}
