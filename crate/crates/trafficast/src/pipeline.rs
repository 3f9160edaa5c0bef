//! End-to-end orchestration of the pipeline stages and their artifacts.
//!
//! Every stage reads and writes files under one output directory, so the
//! `pipeline` subcommand and the individually invoked stages produce the
//! same bytes for the same config and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::deepcluster::{cluster_network, ClusterArtifacts};
use crate::error::Error;
use crate::ingest::{apply_calendar_filter, fill_gaps, load_csv, write_csv, SpeedSeries};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::plot::LinePlot;
use crate::predict::{
    evaluate_models, train_models, GroupModel, PredictConfig, SweepOutput, TrainedModels,
};
use crate::report::{
    build_report, write_clusters_json, write_embeddings_csv, write_pairs_csv,
    write_predictions_csv, write_predictions_plot, write_report, write_report_charts,
    ClustersFile, Manifest, Report,
};
use crate::series::{acf, select_interval, similarity_cdf, split_periodic, traffic_similarity, AcfProfile, DayGrid};
use crate::synth::generate;

pub const DATA_CSV: &str = "data.csv";
pub const LABELS_CSV: &str = "labels.csv";
pub const SIMILARITY_CSV: &str = "similarity.csv";
pub const SIMILARITY_SVG: &str = "similarity.svg";
pub const ACF_CSV: &str = "acf.csv";
pub const ACF_SVG: &str = "acf.svg";
pub const INTERVAL_JSON: &str = "interval.json";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub const EMBEDDER_CKPT: &str = "embedder.ckpt";
pub const LOSS_HISTORY_CSV: &str = "loss_history.csv";
pub const MODELS_DIR: &str = "models";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const PREDICTIONS_SVG: &str = "predictions.svg";
pub const MANIFEST_JSON: &str = "manifest.json";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Generate the synthetic network and write `data.csv` / `labels.csv`.
pub fn synth_dataset(config: &PipelineConfig, out_dir: &Path) -> Result<(), Error> {
    let spec = config.synth_spec();
    let (series, labels) = generate(&spec)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_csv(&series, out_dir.join(DATA_CSV))?;
    let labels_path = out_dir.join(LABELS_CSV);
    let mut text = String::from("segment_id,archetype\n");
    for label in &labels {
        text.push_str(&format!("{},{}\n", label.segment_id, label.archetype));
    }
    std::fs::write(&labels_path, text).map_err(io_err(&labels_path))?;
    Ok(())
}

/// Load the dataset named by the config, falling back to the `data.csv` a
/// previous synth run left in the output directory.
pub fn load_dataset(config: &PipelineConfig, out_dir: &Path) -> Result<Vec<SpeedSeries>, Error> {
    let path = if config.data.input.is_empty() {
        out_dir.join(DATA_CSV)
    } else {
        PathBuf::from(&config.data.input)
    };
    Ok(load_csv(path)?)
}

/// Gap-fill and calendar-filter every segment.
pub fn clean(series: &[SpeedSeries], config: &PipelineConfig) -> Result<Vec<SpeedSeries>, Error> {
    let filter = config.calendar_filter();
    series
        .iter()
        .map(|s| {
            let filled = fill_gaps(s, config.data.max_gap)?;
            Ok(apply_calendar_filter(&filled, &filter, config.data.period)?)
        })
        .collect()
}

/// Split every cleaned segment into its day grid.
pub fn day_grids(series: &[SpeedSeries], config: &PipelineConfig) -> Result<Vec<DayGrid>, Error> {
    series
        .iter()
        .map(|s| Ok(split_periodic(s, config.data.period)?))
        .collect()
}

/// Pooled day-to-day similarity CDF artifacts.
pub fn similarity_artifacts(
    grids: &[DayGrid],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<(f64, f64)>, Error> {
    let mut pooled = Vec::new();
    let mut degenerate = 0_usize;
    for grid in grids {
        let sim = traffic_similarity(&grid.flatten(), config.data.period)?;
        if sim.degenerate {
            degenerate += 1;
        }
        pooled.extend(sim.values);
    }
    let cdf = similarity_cdf(&pooled)?;
    write_pairs_csv(
        &out_dir.join(SIMILARITY_CSV),
        "threshold,fraction",
        cdf.iter().copied(),
    )?;
    let plot = LinePlot {
        title: format!(
            "day-to-day similarity CDF ({} segments{})",
            grids.len(),
            if degenerate > 0 {
                format!(", {degenerate} degenerate")
            } else {
                String::new()
            }
        ),
        x_label: "similarity threshold".into(),
        y_label: "fraction of slots".into(),
        series: vec![("pooled CDF".into(), cdf.clone())],
    };
    let svg_path = out_dir.join(SIMILARITY_SVG);
    std::fs::write(&svg_path, plot.to_svg()).map_err(io_err(&svg_path))?;
    Ok(cdf)
}

/// Mean ACF over segments, computed on the training prefix of each
/// segment's usable days only.
pub fn mean_training_acf(
    grids: &[DayGrid],
    config: &PipelineConfig,
) -> Result<AcfProfile, Error> {
    let max_lag = config.series.acf_max_lag;
    let mut sums = vec![0.0_f64; max_lag];
    let mut n_min = usize::MAX;
    for grid in grids {
        let values = grid.flatten();
        let train_len =
            ((values.len() as f64 * config.predict.split) as usize).max(max_lag + 1);
        let profile = acf(&values[..train_len.min(values.len())], max_lag)?;
        for (s, c) in sums.iter_mut().zip(profile.coefficients()) {
            *s += c;
        }
        n_min = n_min.min(profile.sample_count());
    }
    for s in &mut sums {
        *s /= grids.len() as f64;
    }
    Ok(AcfProfile::from_coefficients(sums, n_min))
}

/// The stride decision as stored in `interval.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalDecision {
    pub stride: usize,
    pub fallback: bool,
    pub threshold: f64,
    pub coefficients: Vec<f64>,
    pub confidence_band: f64,
}

/// ACF artifacts plus the interval decision (honoring a fixed
/// `series.stride` override).
pub fn interval_stage(
    grids: &[DayGrid],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<IntervalDecision, Error> {
    let profile = mean_training_acf(grids, config)?;
    write_pairs_csv(
        &out_dir.join(ACF_CSV),
        "lag,coefficient",
        profile
            .coefficients()
            .iter()
            .enumerate()
            .map(|(i, c)| ((i + 1) as f64, *c)),
    )?;
    let band = profile.confidence_band();
    let coefficients: Vec<(f64, f64)> = profile
        .coefficients()
        .iter()
        .enumerate()
        .map(|(i, c)| ((i + 1) as f64, *c))
        .collect();
    let max_lag = profile.max_lag() as f64;
    let plot = LinePlot {
        title: "mean training ACF".into(),
        x_label: "lag".into(),
        y_label: "autocorrelation".into(),
        series: vec![
            ("mean ACF".into(), coefficients),
            ("+95% band".into(), vec![(1.0, band), (max_lag, band)]),
            ("-95% band".into(), vec![(1.0, -band), (max_lag, -band)]),
            (
                "threshold".into(),
                vec![
                    (1.0, config.series.acf_threshold),
                    (max_lag, config.series.acf_threshold),
                ],
            ),
        ],
    };
    let svg_path = out_dir.join(ACF_SVG);
    std::fs::write(&svg_path, plot.to_svg()).map_err(io_err(&svg_path))?;

    let decision = if config.series.stride > 0 {
        IntervalDecision {
            stride: config.series.stride,
            fallback: false,
            threshold: config.series.acf_threshold,
            coefficients: profile.coefficients().to_vec(),
            confidence_band: band,
        }
    } else {
        let choice = select_interval(&profile, config.series.acf_threshold)?;
        IntervalDecision {
            stride: choice.stride,
            fallback: choice.fallback,
            threshold: config.series.acf_threshold,
            coefficients: profile.coefficients().to_vec(),
            confidence_band: band,
        }
    };
    let path = out_dir.join(INTERVAL_JSON);
    let json = serde_json::to_vec_pretty(&decision).expect("serializable");
    std::fs::write(&path, json).map_err(io_err(&path))?;
    Ok(decision)
}

/// Read a previously written interval decision.
pub fn read_interval(out_dir: &Path) -> Result<IntervalDecision, Error> {
    let path = out_dir.join(INTERVAL_JSON);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Run DeepCluster and write its artifacts.
pub fn cluster_stage(
    grids: &[DayGrid],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<ClusterArtifacts, Error> {
    let artifacts = cluster_network(grids, &config.cluster_config())?;
    write_clusters_json(&artifacts, &out_dir.join(CLUSTERS_JSON))?;
    write_embeddings_csv(&artifacts.embeddings, &out_dir.join(EMBEDDINGS_CSV))?;
    save_checkpoint(&artifacts.embedder, out_dir.join(EMBEDDER_CKPT))?;
    write_pairs_csv(
        &out_dir.join(LOSS_HISTORY_CSV),
        "epoch,mean_triplet_loss",
        artifacts
            .loss_history
            .iter()
            .enumerate()
            .map(|(i, l)| ((i + 1) as f64, *l)),
    )?;
    Ok(artifacts)
}

pub fn read_clusters(out_dir: &Path) -> Result<ClustersFile, Error> {
    Ok(crate::report::read_clusters_json(&out_dir.join(CLUSTERS_JSON))?)
}

fn gm_path(out_dir: &Path, horizon: usize, group: usize) -> PathBuf {
    out_dir
        .join(MODELS_DIR)
        .join(format!("gm_h{horizon}_g{group}.ckpt"))
}

fn im_path(out_dir: &Path, horizon: usize, segment: &str) -> PathBuf {
    out_dir
        .join(MODELS_DIR)
        .join(format!("im_h{horizon}_{segment}.ckpt"))
}

/// Train all models and save their checkpoints.
pub fn train_stage(
    series: &[SpeedSeries],
    assignments: &BTreeMap<String, usize>,
    predict_config: &PredictConfig,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<TrainedModels, Error> {
    let models = train_models(
        series,
        assignments,
        predict_config,
        &config.predict.horizons,
        config.predict.with_im,
    )?;
    let models_dir = out_dir.join(MODELS_DIR);
    std::fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
    for ((horizon, group), model) in &models.gm {
        save_checkpoint(&model.network, gm_path(out_dir, *horizon, *group))?;
    }
    for ((horizon, segment), model) in &models.im {
        save_checkpoint(&model.network, im_path(out_dir, *horizon, segment))?;
    }
    Ok(models)
}

/// Load the checkpoints written by [`train_stage`].
pub fn load_models(
    assignments: &BTreeMap<String, usize>,
    k: usize,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<TrainedModels, Error> {
    let mut models = TrainedModels::default();
    for &horizon in &config.predict.horizons {
        for group in 0..k {
            let path = gm_path(out_dir, horizon, group);
            let network = load_checkpoint(&path)?;
            let input_length = network.input_shape()[0];
            models.gm.insert(
                (horizon, group),
                GroupModel {
                    group,
                    network,
                    input_length,
                    train_history: Vec::new(),
                    epochs_run: 0,
                },
            );
        }
        if config.predict.with_im {
            for (segment, &group) in assignments {
                let path = im_path(out_dir, horizon, segment);
                if !path.exists() {
                    continue;
                }
                let network = load_checkpoint(&path)?;
                let input_length = network.input_shape()[0];
                models.im.insert(
                    (horizon, segment.clone()),
                    GroupModel {
                        group,
                        network,
                        input_length,
                        train_history: Vec::new(),
                        epochs_run: 0,
                    },
                );
            }
        }
    }
    Ok(models)
}

/// Evaluate models and write every report artifact.
pub fn evaluate_stage(
    series: &[SpeedSeries],
    assignments: &BTreeMap<String, usize>,
    k: usize,
    predict_config: &PredictConfig,
    config: &PipelineConfig,
    models: &TrainedModels,
    out_dir: &Path,
) -> Result<Report, Error> {
    let SweepOutput {
        entries,
        predictions,
    } = evaluate_models(
        series,
        assignments,
        predict_config,
        &config.predict.horizons,
        models,
    )?;
    let report = build_report(&entries, series.len(), k)?;
    write_report(&report, out_dir)?;
    write_report_charts(&report, out_dir)?;
    write_predictions_csv(&predictions, &out_dir.join(PREDICTIONS_CSV))?;
    if let Some(first) = predictions.first() {
        let segment = first.segment_id.clone();
        write_predictions_plot(&predictions, &segment, &out_dir.join(PREDICTIONS_SVG))?;
    }
    Ok(report)
}

/// Configure the global worker pool; one thread keeps runs maximally
/// reproducible end to end. Calling this twice is a no-op.
pub fn init_threads(threads: usize) {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
        .ok();
}

/// Write the run manifest for a subcommand.
pub fn write_run_manifest(
    command: &str,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    Ok(crate::report::write_manifest(
        &Manifest::new(command, config),
        &out_dir.join(MANIFEST_JSON),
    )?)
}

/// The whole pipeline: dataset, analyses, clustering, training, evaluation.
/// Returns the final report.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Report, Error> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_run_manifest("pipeline", config, out_dir)?;

    if config.data.input.is_empty() {
        progress("generating synthetic network");
        synth_dataset(config, out_dir)?;
    }
    progress("loading dataset");
    let raw = load_dataset(config, out_dir)?;
    progress(&format!("{} segments loaded", raw.len()));
    let filtered = clean(&raw, config)?;
    let grids = day_grids(&filtered, config)?;

    progress("computing similarity and ACF artifacts");
    similarity_artifacts(&grids, config, out_dir)?;
    let decision = interval_stage(&grids, config, out_dir)?;
    progress(&format!(
        "input interval l = {}{}",
        decision.stride,
        if decision.fallback { " (fallback)" } else { "" }
    ));

    progress("clustering segments");
    let artifacts = cluster_stage(&grids, config, out_dir)?;
    progress(&format!(
        "K = {} groups, silhouette {:.3}",
        artifacts.clustering.k, artifacts.clustering.silhouette
    ));

    let predict_config = config.predict_config(decision.stride);
    progress("training prediction models");
    let models = train_stage(
        &filtered,
        &artifacts.clustering.assignments,
        &predict_config,
        config,
        out_dir,
    )?;
    progress("evaluating");
    let report = evaluate_stage(
        &filtered,
        &artifacts.clustering.assignments,
        artifacts.clustering.k,
        &predict_config,
        config,
        &models,
        out_dir,
    )?;
    progress("done");
    Ok(report)
}

/// Write one PGM per usable day of every grid.
pub fn rasterize_stage(
    grids: &[DayGrid],
    resolution: usize,
    out_dir: &Path,
) -> Result<usize, Error> {
    let raster_dir = out_dir.join("rasters");
    std::fs::create_dir_all(&raster_dir).map_err(io_err(&raster_dir))?;
    let mut written = 0;
    for grid in grids {
        for day in 0..grid.days() {
            let normalized = crate::raster::normalize_for_raster(grid.row(day))?;
            let image = crate::raster::rasterize(&normalized, resolution)?;
            let path = raster_dir.join(format!("{}_day{day:03}.pgm", grid.segment_id()));
            crate::raster::write_pgm(&image, &path)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Print the chosen interval with its ACF table (the `select-interval`
/// subcommand output).
pub fn print_interval_table(decision: &IntervalDecision, mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "lag  coefficient  above_threshold({})", decision.threshold)?;
    for (i, c) in decision.coefficients.iter().enumerate() {
        writeln!(
            out,
            "{:>3}  {:>11.6}  {}",
            i + 1,
            c,
            if *c > decision.threshold { "yes" } else { "no" }
        )?;
    }
    writeln!(
        out,
        "selected input interval l = {}{}",
        decision.stride,
        if decision.fallback {
            " (no lag above threshold; fallback)"
        } else {
            ""
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PipelineConfig {
        let mut config = PipelineConfig::default();
        config.data.period = 48; // 30-minute slots
        config.synth.segments_per_archetype = 1;
        config.synth.days = 7;
        config.data.exclude_weekends = true;
        config.run.seed = 5;
        config
    }

    #[test]
    fn synth_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        synth_dataset(&config, dir.path()).unwrap();
        let series = load_dataset(&config, dir.path()).unwrap();
        assert_eq!(series.len(), 3);
        for s in &series {
            assert_eq!(s.len(), 7 * 48);
        }
        let labels = std::fs::read_to_string(dir.path().join(LABELS_CSV)).unwrap();
        assert_eq!(labels.lines().count(), 4);
    }

    #[test]
    fn clean_filters_weekends() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        synth_dataset(&config, dir.path()).unwrap();
        let series = load_dataset(&config, dir.path()).unwrap();
        // Mon-start 7-day week -> 5 weekdays retained
        let cleaned = clean(&series, &config).unwrap();
        for s in &cleaned {
            assert_eq!(s.len(), 5 * 48);
        }
    }

    #[test]
    fn interval_stage_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        synth_dataset(&config, dir.path()).unwrap();
        let series = load_dataset(&config, dir.path()).unwrap();
        let cleaned = clean(&series, &config).unwrap();
        let grids = day_grids(&cleaned, &config).unwrap();
        let decision = interval_stage(&grids, &config, dir.path()).unwrap();
        assert!(decision.stride >= 1);
        assert!(dir.path().join(ACF_CSV).exists());
        assert!(dir.path().join(ACF_SVG).exists());
        let again = read_interval(dir.path()).unwrap();
        assert_eq!(again.stride, decision.stride);
        // fixed stride override wins
        let mut fixed = config.clone();
        fixed.series.stride = 4;
        let forced = interval_stage(&grids, &fixed, dir.path()).unwrap();
        assert_eq!(forced.stride, 4);
    }

    #[test]
    fn similarity_stage_writes_cdf() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        synth_dataset(&config, dir.path()).unwrap();
        let series = load_dataset(&config, dir.path()).unwrap();
        let cleaned = clean(&series, &config).unwrap();
        let grids = day_grids(&cleaned, &config).unwrap();
        let cdf = similarity_artifacts(&grids, &config, dir.path()).unwrap();
        assert_eq!(cdf.len(), 101);
        assert!(dir.path().join(SIMILARITY_CSV).exists());
    }

    #[test]
    fn rasterize_stage_writes_one_pgm_per_day() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        synth_dataset(&config, dir.path()).unwrap();
        let series = load_dataset(&config, dir.path()).unwrap();
        let cleaned = clean(&series, &config).unwrap();
        let grids = day_grids(&cleaned, &config).unwrap();
        let written = rasterize_stage(&grids, 32, dir.path()).unwrap();
        assert_eq!(written, 3 * 5);
        let entries = std::fs::read_dir(dir.path().join("rasters")).unwrap().count();
        assert_eq!(entries, 15);
    }
}
