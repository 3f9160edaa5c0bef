//! Report assembly and artifact emission: JSON, CSV, and SVG outputs plus
//! the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deepcluster::{ClusterArtifacts, Embedding};
use crate::plot::{BarChart, LinePlot};
use crate::predict::{PredictionRow, SweepEntry};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot emit an empty report")]
    Empty,
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

fn wrap_io(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One table row: a group evaluated by one algorithm at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub horizon: usize,
    pub group: usize,
    pub algorithm: String,
    pub mre_train: f64,
    pub mre_test: f64,
    pub gap: f64,
    pub mare: f64,
    pub mire: f64,
}

/// Network-level summary per horizon and algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRow {
    pub horizon: usize,
    pub algorithm: String,
    pub mre_train: f64,
    pub mre_test: f64,
    pub gap: f64,
    pub pooled_mre_test: f64,
    pub excluded_samples: usize,
}

/// The full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub network: Vec<NetworkRow>,
    pub segments: usize,
    pub groups: usize,
    /// (N_r - K) / N_r: fraction of models saved by sharing
    pub model_reduction: f64,
}

/// Fraction of per-segment models made redundant by group sharing.
pub fn model_reduction(segments: usize, k: usize) -> f64 {
    if segments == 0 {
        return 0.0;
    }
    (segments - k.min(segments)) as f64 / segments as f64
}

/// Flatten sweep entries into the report table.
pub fn build_report(
    entries: &[SweepEntry],
    segments: usize,
    k: usize,
) -> Result<Report, ReportError> {
    if entries.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut rows = Vec::new();
    let mut network = Vec::new();
    for entry in entries {
        for g in &entry.report.groups {
            rows.push(ReportRow {
                horizon: entry.horizon,
                group: g.group,
                algorithm: entry.algorithm.to_string(),
                mre_train: g.mre_train,
                mre_test: g.mre_test,
                gap: g.gap,
                mare: g.mare_test,
                mire: g.mire_test,
            });
        }
        network.push(NetworkRow {
            horizon: entry.horizon,
            algorithm: entry.algorithm.to_string(),
            mre_train: entry.report.network_mre_train,
            mre_test: entry.report.network_mre_test,
            gap: entry.report.network_gap,
            pooled_mre_test: entry.report.pooled_mre_test,
            excluded_samples: entry.report.excluded_samples,
        });
    }
    Ok(Report {
        rows,
        network,
        segments,
        groups: k,
        model_reduction: model_reduction(segments, k),
    })
}

/// JSON float formatting, reused for CSV so the two agree to full precision.
fn num(v: f64) -> String {
    serde_json::Number::from_f64(v)
        .map(|n| n.to_string())
        .unwrap_or_else(|| "null".to_string())
}

/// Write `report.json` and `report.csv` (same numbers, two encodings).
pub fn write_report(report: &Report, dir: &Path) -> Result<(), ReportError> {
    let json_path = dir.join("report.json");
    let json = serde_json::to_vec_pretty(report)?;
    std::fs::write(&json_path, json).map_err(wrap_io(&json_path))?;

    let csv_path = dir.join("report.csv");
    let mut out = String::from("horizon,group,algorithm,mre_train,mre_test,gap,mare,mire\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.horizon,
            row.group,
            row.algorithm,
            num(row.mre_train),
            num(row.mre_test),
            num(row.gap),
            num(row.mare),
            num(row.mire),
        ));
    }
    std::fs::write(&csv_path, out).map_err(wrap_io(&csv_path))?;
    Ok(())
}

/// Per-horizon grouped bar charts of train/test MRE and the gap.
pub fn write_report_charts(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut horizons: Vec<usize> = report.rows.iter().map(|r| r.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut written = Vec::new();
    for horizon in horizons {
        let rows: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.horizon == horizon)
            .collect();
        let mut groups: Vec<usize> = rows.iter().map(|r| r.group).collect();
        groups.sort_unstable();
        groups.dedup();
        let mut algorithms: Vec<&str> = rows.iter().map(|r| r.algorithm.as_str()).collect();
        algorithms.sort_unstable();
        algorithms.dedup();
        let mut series = Vec::new();
        for algorithm in &algorithms {
            for (suffix, field) in [
                ("train", 0_usize),
                ("test", 1),
                ("gap", 2),
            ] {
                let values: Vec<f64> = groups
                    .iter()
                    .map(|g| {
                        rows.iter()
                            .find(|r| r.group == *g && r.algorithm == *algorithm)
                            .map_or(0.0, |r| match field {
                                0 => r.mre_train,
                                1 => r.mre_test,
                                _ => r.gap,
                            })
                    })
                    .collect();
                series.push((format!("{algorithm} {suffix}"), values));
            }
        }
        let chart = BarChart {
            title: format!("MRE by group, horizon {horizon}"),
            y_label: "MRE".into(),
            group_labels: groups.iter().map(|g| format!("group {g}")).collect(),
            series,
        };
        let path = dir.join(format!("report_h{horizon}.svg"));
        std::fs::write(&path, chart.to_svg()).map_err(wrap_io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// `segment_id,timestamp,true,pred,re`; excluded samples carry an empty re.
pub fn write_predictions_csv(rows: &[PredictionRow], path: &Path) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(wrap_io(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "segment_id,timestamp,true,pred,re").map_err(wrap_io(path))?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.segment_id,
            row.timestamp,
            num(row.true_speed),
            num(row.predicted),
            row.re.map(num).unwrap_or_default(),
        )
        .map_err(wrap_io(path))?;
    }
    w.flush().map_err(wrap_io(path))
}

/// True-versus-predicted line plot for one segment's test horizon.
pub fn write_predictions_plot(
    rows: &[PredictionRow],
    segment_id: &str,
    path: &Path,
) -> Result<(), ReportError> {
    let points: Vec<&PredictionRow> = rows
        .iter()
        .filter(|r| r.segment_id == segment_id)
        .collect();
    if points.is_empty() {
        return Err(ReportError::Empty);
    }
    let t0 = points[0].timestamp;
    let as_hours = |t: i64| (t - t0) as f64 / 3600.0;
    let plot = LinePlot {
        title: format!("true vs predicted speed, segment {segment_id}"),
        x_label: "hours into test period".into(),
        y_label: "speed (km/h)".into(),
        series: vec![
            (
                "true".into(),
                points
                    .iter()
                    .map(|r| (as_hours(r.timestamp), r.true_speed))
                    .collect(),
            ),
            (
                "predicted".into(),
                points
                    .iter()
                    .map(|r| (as_hours(r.timestamp), r.predicted))
                    .collect(),
            ),
        ],
    };
    std::fs::write(path, plot.to_svg()).map_err(wrap_io(path))
}

/// The clustering artifact file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClustersFile {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub silhouette: f64,
    pub inertia: f64,
    pub silhouette_by_k: Vec<(usize, f64)>,
    pub loss_history: Vec<f64>,
}

pub fn write_clusters_json(artifacts: &ClusterArtifacts, path: &Path) -> Result<(), ReportError> {
    let file = ClustersFile {
        k: artifacts.clustering.k,
        assignments: artifacts.clustering.assignments.clone(),
        centroids: artifacts.clustering.centroids.clone(),
        silhouette: artifacts.clustering.silhouette,
        inertia: artifacts.clustering.inertia,
        silhouette_by_k: artifacts.silhouette_by_k.clone(),
        loss_history: artifacts.loss_history.clone(),
    };
    let json = serde_json::to_vec_pretty(&file)?;
    std::fs::write(path, json).map_err(wrap_io(path))
}

pub fn read_clusters_json(path: &Path) -> Result<ClustersFile, ReportError> {
    let bytes = std::fs::read(path).map_err(wrap_io(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Read back a `report.json` written by [`write_report`].
pub fn read_report(path: &Path) -> Result<Report, ReportError> {
    let bytes = std::fs::read(path).map_err(wrap_io(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// `segment_id,e0,...,e{D-1}`, one row per segment.
pub fn write_embeddings_csv(
    embeddings: &BTreeMap<String, Embedding>,
    path: &Path,
) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(wrap_io(path))?;
    let mut w = std::io::BufWriter::new(file);
    let dim = embeddings.values().next().map_or(0, Embedding::dim);
    let header: Vec<String> = (0..dim).map(|i| format!("e{i}")).collect();
    writeln!(w, "segment_id,{}", header.join(",")).map_err(wrap_io(path))?;
    for (segment, embedding) in embeddings {
        let values: Vec<String> = embedding.values().iter().map(|v| num(*v)).collect();
        writeln!(w, "{segment},{}", values.join(",")).map_err(wrap_io(path))?;
    }
    w.flush().map_err(wrap_io(path))
}

/// Generic two-column CSV, used by the similarity and acf artifacts.
pub fn write_pairs_csv(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = (f64, f64)>,
) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(wrap_io(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}").map_err(wrap_io(path))?;
    for (a, b) in rows {
        writeln!(w, "{},{}", num(a), num(b)).map_err(wrap_io(path))?;
    }
    w.flush().map_err(wrap_io(path))
}

/// Everything needed to reproduce a run bitwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub crate_version: String,
    pub checkpoint_format: u32,
    pub config: crate::config::PipelineConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &crate::config::PipelineConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: config.run.seed,
            config_digest: config.digest(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: 1,
            config: config.clone(),
        }
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), ReportError> {
    let json = serde_json::to_vec_pretty(manifest)?;
    std::fs::write(path, json).map_err(wrap_io(path))
}
