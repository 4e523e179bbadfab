//! `results.csv` I/O and the human-readable table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use prbcast_core::models::EstimatorKind;

use crate::harness::{sort_rows, BenchmarkRow};
use crate::{BenchError, Result};

pub const RESULTS_HEADER: [&str; 10] = [
    "model",
    "weeks",
    "mse",
    "train_seconds_mean",
    "train_seconds_sd",
    "predict_ms_mean",
    "predict_ms_sd",
    "peak_memory_bytes",
    "repetitions",
    "error",
];

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.name().to_string(),
            r.weeks.to_string(),
            cell(r.mse),
            cell(r.train_seconds_mean),
            cell(r.train_seconds_sd),
            cell(r.predict_ms_mean),
            cell(r.predict_ms_sd),
            cell(r.peak_memory_bytes),
            r.repetitions.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<BenchmarkRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(BenchError::Report(format!("{} has an unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |what: &str| BenchError::Report(format!("row {}: bad {what}", i + 1));
        let opt_f64 = |k: usize| -> Result<Option<f64>> {
            match field(k) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(RESULTS_HEADER[k])),
            }
        };
        rows.push(BenchmarkRow {
            model: field(0).parse().map_err(|_| bad("model"))?,
            weeks: field(1).parse().map_err(|_| bad("weeks"))?,
            mse: opt_f64(2)?,
            train_seconds_mean: opt_f64(3)?,
            train_seconds_sd: opt_f64(4)?,
            predict_ms_mean: opt_f64(5)?,
            predict_ms_sd: opt_f64(6)?,
            peak_memory_bytes: match field(7) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("peak_memory_bytes"))?),
            },
            repetitions: field(8).parse().map_err(|_| bad("repetitions"))?,
            error: Some(field(9).to_string()).filter(|e| !e.is_empty()),
        });
    }
    Ok(rows)
}

fn fmt_mean_sd(mean: Option<f64>, sd: Option<f64>, digits: usize) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.digits$} ± {s:.digits$}"),
        (Some(m), None) => format!("{m:.digits$}"),
        _ => "n/a".into(),
    }
}

/// One section per model, one column per data length.
pub fn render_table(rows: &[BenchmarkRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(BenchError::Report("no rows to report".into()));
    }
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut weeks: Vec<usize> = rows.iter().map(|r| r.weeks).collect();
    weeks.sort_unstable();
    weeks.dedup();
    let mut models: Vec<EstimatorKind> = rows.iter().map(|r| r.model).collect();
    models.dedup();

    let width = 22;
    let mut out = String::new();
    let _ = write!(out, "{:<26}", "");
    for w in &weeks {
        let _ = write!(out, "{:>width$}", format!("{w} weeks"));
    }
    out.push('\n');
    for m in models {
        let _ = writeln!(out, "{}", m.name().to_uppercase());
        let find = |w: usize| rows.iter().find(|r| r.model == m && r.weeks == w);
        let metrics: [(&str, &dyn Fn(&BenchmarkRow) -> String); 4] = [
            ("  MSE", &|r| r.mse.map_or("n/a".into(), |v| format!("{v:.4}"))),
            ("  Training time (s)", &|r| fmt_mean_sd(r.train_seconds_mean, r.train_seconds_sd, 3)),
            ("  Prediction time (ms)", &|r| fmt_mean_sd(r.predict_ms_mean, r.predict_ms_sd, 3)),
            ("  Peak memory (MiB)", &|r| {
                r.peak_memory_bytes
                    .map_or("n/a".into(), |b| format!("{:.1}", b as f64 / (1024.0 * 1024.0)))
            }),
        ];
        for (label, f) in metrics {
            let _ = write!(out, "{label:<26}");
            for &w in &weeks {
                let text = match find(w) {
                    Some(r) if r.error.is_some() => "ERROR".to_string(),
                    Some(r) => f(r),
                    None => "-".into(),
                };
                let _ = write!(out, "{text:>width$}");
            }
            out.push('\n');
        }
    }
    let errors: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.error.is_some()).collect();
    if !errors.is_empty() {
        out.push_str("\nErrors:\n");
        for r in errors {
            let _ = writeln!(out, "  {} {} weeks: {}", r.model, r.weeks, r.error.as_deref().unwrap_or(""));
        }
    }
    Ok(out)
}

/// `plot_<metric>.csv` files with one column per model.
pub fn write_plot_csvs(dir: &Path, rows: &[BenchmarkRow]) -> Result<Vec<PathBuf>> {
    let mut weeks: Vec<usize> = rows.iter().map(|r| r.weeks).collect();
    weeks.sort_unstable();
    weeks.dedup();
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut models: Vec<EstimatorKind> = sorted.iter().map(|r| r.model).collect();
    models.dedup();

    let metrics: [(&str, fn(&BenchmarkRow) -> Option<f64>); 4] = [
        ("mse", |r| r.mse),
        ("train_seconds", |r| r.train_seconds_mean),
        ("predict_ms", |r| r.predict_ms_mean),
        ("peak_memory_bytes", |r| r.peak_memory_bytes.map(|b| b as f64)),
    ];
    let mut paths = Vec::new();
    for (name, get) in metrics {
        let path = dir.join(format!("plot_{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["weeks".to_string()];
        header.extend(models.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for &wk in &weeks {
            let mut rec = vec![wk.to_string()];
            for &m in &models {
                let v = sorted.iter().find(|r| r.model == m && r.weeks == wk).and_then(get);
                rec.push(cell(v));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads `dir/results.csv`, writes the table to `dir/report.txt` and the plot
/// CSVs. Returns the table and whether any row carried an error.
pub fn report(dir: &Path) -> Result<(String, bool)> {
    let rows = read_rows(&dir.join("results.csv"))?;
    let table = render_table(&rows)?;
    fs::write(dir.join("report.txt"), &table)?;
    write_plot_csvs(dir, &rows)?;
    Ok((table, rows.iter().any(|r| r.error.is_some())))
}
