//! CSV schemas of every command output.

use std::path::Path;

use anyhow::Context;
use ising_topo::dataset::Split;
use ising_topo::eval::{ConnectionRecord, EntropySplit, PredictionReport, SweepPoint};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::write_atomic;

pub fn write<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(path, &bytes)
}

pub fn read<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// `report.csv`: one row per candidate connection of every instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instance: usize,
    pub lattice_id: u32,
    pub i: usize,
    pub j: usize,
    pub predicted: u8,
    pub truth: u8,
    pub p0: f64,
    pub p1: f64,
    pub entropy: f64,
}

impl From<&ConnectionRecord> for ReportRow {
    fn from(r: &ConnectionRecord) -> Self {
        Self {
            instance: r.instance,
            lattice_id: r.lattice_id,
            i: r.pair.0,
            j: r.pair.1,
            predicted: u8::from(r.predicted),
            truth: u8::from(r.truth),
            p0: r.probs[0],
            p1: r.probs[1],
            entropy: r.entropy,
        }
    }
}

impl ReportRow {
    pub fn record(&self) -> ConnectionRecord {
        ConnectionRecord {
            instance: self.instance,
            lattice_id: self.lattice_id,
            pair: (self.i, self.j),
            predicted: self.predicted != 0,
            truth: self.truth != 0,
            probs: [self.p0, self.p1],
            entropy: self.entropy,
        }
    }
}

pub fn report_rows(r: &PredictionReport) -> Vec<ReportRow> {
    r.records.iter().map(ReportRow::from).collect()
}

pub fn read_report(path: &Path) -> anyhow::Result<PredictionReport> {
    let rows: Vec<ReportRow> = read(path)?;
    Ok(PredictionReport::from_records(Split::Test, rows.iter().map(ReportRow::record).collect()))
}

/// `summary.csv` of `eval`. Empty entropy cells mark an empty subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub split: String,
    pub instances: usize,
    pub connections: usize,
    pub gamma: f64,
    pub mean_entropy_correct: Option<f64>,
    pub mean_entropy_incorrect: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

impl SummaryRow {
    pub fn new(split: Split, instances: usize, r: &PredictionReport, e: &EntropySplit) -> Self {
        Self {
            split: split.name().to_string(),
            instances,
            connections: r.records.len(),
            gamma: r.gamma,
            mean_entropy_correct: e.correct,
            mean_entropy_incorrect: e.incorrect,
            n_correct: e.n_correct,
            n_incorrect: e.n_incorrect,
        }
    }
}

/// `sweep.csv` of `sweep-entropy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub eta: f64,
    pub gamma_filtered: Option<f64>,
    pub kept: usize,
}

impl From<&SweepPoint> for SweepRow {
    fn from(p: &SweepPoint) -> Self {
        Self {
            threshold: p.threshold,
            eta: p.eta,
            gamma_filtered: p.gamma_filtered,
            kept: p.kept,
        }
    }
}

/// `plateau.csv` of `train`/`finetune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauRow {
    pub epoch: usize,
    pub grad_norm: f64,
    pub plateau: u8,
}

/// `scores.csv` of `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub group: usize,
    pub lattice_id: u32,
    pub i: usize,
    pub j: usize,
    pub score: f64,
    pub degenerate: u8,
    pub predicted: u8,
    pub truth: u8,
}

/// `baseline.csv` of `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub split: String,
    pub lag: u8,
    pub pooling: String,
    pub include_train: u8,
    pub groups: usize,
    pub gamma: f64,
    pub density_guess: f64,
}

/// `fit.csv` of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

/// `temperature.csv` of `sweep-temperature`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub gamma_cold: f64,
    pub gamma_finetuned: Option<f64>,
    pub gamma_baseline: f64,
    pub density_guess: f64,
    pub cold_grad_norm_epoch1: f64,
    pub finetune_grad_norm_epoch1: Option<f64>,
    pub finetune_start_grad_norm: Option<f64>,
}

/// Two numeric columns of a CSV, chosen by header name or position.
pub fn read_points(path: &Path, x: Option<&str>, y: Option<&str>) -> anyhow::Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: Option<&str>, default: usize| -> anyhow::Result<usize> {
        match name {
            None if headers.len() > default => Ok(default),
            None => anyhow::bail!("{} has fewer than two columns", path.display()),
            Some(n) => headers
                .iter()
                .position(|h| h.trim() == n)
                .ok_or_else(|| anyhow::anyhow!("{} has no column `{n}`", path.display())),
        }
    };
    let (cx, cy) = (col(x, 0)?, col(y, 1)?);
    let mut pts = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> anyhow::Result<f64> {
            let cell = rec.get(c).unwrap_or("").trim();
            cell.parse()
                .with_context(|| format!("{} row {}: `{cell}` is not a number", path.display(), line + 2))
        };
        pts.push((num(cx)?, num(cy)?));
    }
    Ok(pts)
}
