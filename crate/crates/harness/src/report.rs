//! Plot-ready CSVs and text tables from sweep results.

use serde::{Deserialize, Serialize};

use crate::spec::Method;
use crate::sweep::ResultRow;
use crate::{HarnessError, Result};

pub const HEADER: [&str; 5] = ["sweep_value", "method", "mean", "std", "n"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sweep_value: f64,
    pub method: Method,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl From<&ResultRow> for ReportRow {
    fn from(r: &ResultRow) -> Self {
        Self {
            sweep_value: r.sweep_value,
            method: r.method,
            mean: r.mean,
            std: r.std,
            n: r.n,
        }
    }
}

fn sorted(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value).then(a.method.cmp(&b.method)));
    rows
}

/// CSV with columns (sweep value, method, mean, std, n), rows ordered by
/// sweep value then method. Floats use shortest round-trip formatting.
pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in sorted(rows) {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    report_csv(&rows.iter().map(ReportRow::from).collect::<Vec<_>>())
}

/// Per-decision wall-clock, one line per cell.
pub fn timing_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sweep_value", "method", "ms_per_decision"])?;
    for r in rows {
        w.write_record([r.sweep_value.to_string(), r.method.name().to_string(), r.ms_per_decision.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses a CSV written by [`report_csv`].
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(HarnessError::Report(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: ReportRow = rec?;
        let ok = row.sweep_value.is_finite() && row.mean.is_finite() && row.std.is_finite() && row.std >= 0.0;
        if !ok {
            return Err(HarnessError::Report(format!("bad row {row:?}")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Aligned table: one line per sweep value, one `mean ± std` column per method.
pub fn render_table(rows: &[ReportRow]) -> String {
    let rows = sorted(rows);
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut values: Vec<f64> = rows.iter().map(|r| r.sweep_value).collect();
    values.dedup();
    let mut out = format!("{:>10}", "value");
    for m in &methods {
        out.push_str(&format!(" {:>18}", m.name()));
    }
    out.push('\n');
    for v in values {
        out.push_str(&format!("{v:>10}"));
        for m in &methods {
            let cell = rows
                .iter()
                .find(|r| r.sweep_value == v && r.method == *m)
                .map(|r| format!("{:.4} ± {:.4}", r.mean, r.std))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(" {cell:>18}"));
        }
        out.push('\n');
    }
    out
}
