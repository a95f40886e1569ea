//! CSV schemas: transition datasets, training reports, episodes and summaries.

use std::path::Path;

use nalgebra::DVector;
use shiftguard_core::adapt::EpisodeLog;
use shiftguard_core::train::{Transition, TrainReport};

use crate::error::{Error, Result};
use crate::model::write_atomic;

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

pub fn dataset_header(n: usize, m: usize) -> Vec<String> {
    indexed("s", n).chain(indexed("a", m)).chain(indexed("sp", n)).collect()
}

pub fn episode_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(indexed("ref", n));
    h.extend(indexed("s", n));
    h.extend(indexed("a", m));
    h.extend(["residual_norm", "logdet_bound", "solver_status", "solve_ms"].map(String::from));
    h
}

pub fn summary_header(with_gap: bool) -> Vec<String> {
    let mut h = vec!["seed", "mean_residual", "max_residual"];
    if with_gap {
        h.push("min_d_rel");
    }
    h.push("total_solve_ms");
    h.into_iter().map(String::from).collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| x.to_string()));
}

pub fn dataset_csv(data: &[Transition]) -> Result<Vec<u8>> {
    let first = data.first().ok_or_else(|| Error::Format("empty dataset".into()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(dataset_header(first.s.len(), first.a.len()))?;
    for t in data {
        let mut row = Vec::new();
        push_vec(&mut row, &t.s);
        push_vec(&mut row, &t.a);
        push_vec(&mut row, &t.sp);
        w.write_record(&row)?;
    }
    finish(w)
}

pub fn read_dataset(path: &Path, n: usize, m: usize) -> Result<Vec<Transition>> {
    let table = Table::read(path)?;
    let cols = dataset_header(n, m);
    let idx: Vec<usize> = cols.iter().map(|c| table.column_index(c)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let v = |k: usize| row[idx[k]];
        out.push(Transition {
            s: DVector::from_fn(n, |i, _| v(i)),
            a: DVector::from_fn(m, |i, _| v(n + i)),
            sp: DVector::from_fn(n, |i, _| v(n + m + i)),
        });
    }
    Ok(out)
}

pub fn report_csv(report: &TrainReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &report.epochs {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])?;
    }
    finish(w)
}

pub fn episode_csv(log: &EpisodeLog, n: usize, m: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(episode_header(n, m))?;
    for r in &log.steps {
        let mut row = vec![r.t.to_string()];
        push_vec(&mut row, &r.reference);
        push_vec(&mut row, &r.state);
        push_vec(&mut row, &r.action);
        row.push(r.residual_norm.to_string());
        row.push(r.log_det_bound.map(|v| v.to_string()).unwrap_or_default());
        row.push(r.status.as_str().to_string());
        row.push(r.solve_ms.to_string());
        w.write_record(&row)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub seed: u64,
    pub mean_residual: f64,
    pub max_residual: f64,
    pub min_d_rel: Option<f64>,
    pub total_solve_ms: f64,
}

impl SummaryRow {
    pub fn from_log(seed: u64, log: &EpisodeLog) -> Self {
        Self {
            seed,
            mean_residual: log.mean_residual(),
            max_residual: log.max_residual(),
            min_d_rel: log.min_gap(),
            total_solve_ms: log.total_solve_ms(),
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow], with_gap: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(summary_header(with_gap))?;
    for r in rows {
        let mut row = vec![r.seed.to_string(), r.mean_residual.to_string(), r.max_residual.to_string()];
        if with_gap {
            row.push(r.min_d_rel.map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(r.total_solve_ms.to_string());
        w.write_record(&row)?;
    }
    finish(w)
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

/// Numeric CSV loaded by column name; blank or non-numeric cells read as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let headers: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(|c| c.trim().parse().unwrap_or(f64::NAN)).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column {name}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Number of `prefix_k` columns, counted from `k = 0`.
    pub fn indexed_count(&self, prefix: &str) -> usize {
        (0..).take_while(|i| self.headers.iter().any(|h| *h == format!("{prefix}_{i}"))).count()
    }
}
