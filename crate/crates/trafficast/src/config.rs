//! Pipeline configuration: a sectioned key-value file (TOML syntax), with
//! `TRAFFICAST_<SECTION>_<KEY>` environment overrides. Unknown keys are
//! hard errors, and validation reports every bad field at once.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ingest::DEFAULT_UTC_OFFSET_SECS;
use crate::nn::TrainConfig;
use crate::predict::{PredictConfig, TargetConvention};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("environment variable {var}: {reason}")]
    BadEnv { var: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// CSV to ingest; empty means generate synthetic data instead
    pub input: String,
    pub period: usize,
    /// longest missing run that is still interpolated
    pub max_gap: usize,
    pub exclude_weekends: bool,
    /// ISO dates, e.g. "2017-10-01"
    pub exclude_dates: Vec<NaiveDate>,
    pub utc_offset_secs: i32,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            input: String::new(),
            period: 288,
            max_gap: 2,
            exclude_weekends: true,
            exclude_dates: Vec::new(),
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub segments_per_archetype: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub day_jitter: f64,
    pub obs_noise: f64,
    pub event_rate: f64,
    pub event_depth: f64,
    pub amplitude_low: f64,
    pub amplitude_high: f64,
    pub offset_low: f64,
    pub offset_high: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            segments_per_archetype: 9,
            // 12 whole Mon-start weeks; weekend filtering leaves 60 days
            days: 84,
            start_date: NaiveDate::from_ymd_opt(2017, 9, 4).unwrap(),
            day_jitter: 2.5,
            obs_noise: 3.0,
            event_rate: 0.05,
            event_depth: 30.0,
            amplitude_low: 0.92,
            amplitude_high: 1.08,
            offset_low: -4.0,
            offset_high: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub resolution: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub batches_per_epoch: usize,
    pub segments_per_batch: usize,
    pub images_per_segment: usize,
    pub min_epoch_loss: f64,
    pub k_min: usize,
    pub k_max: usize,
    /// 0 selects K by silhouette
    pub forced_k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            resolution: 64,
            embedding_dim: 32,
            learning_rate: 1e-3,
            batch_size: 12,
            epochs: 5,
            margin: 0.2,
            batches_per_epoch: 50,
            segments_per_batch: 6,
            images_per_segment: 9,
            min_epoch_loss: 5e-3,
            k_min: 2,
            k_max: 8,
            forced_k: 0,
            kmeans_restarts: 10,
            kmeans_max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesSection {
    pub acf_max_lag: usize,
    pub acf_threshold: f64,
    /// 0 selects the stride from the ACF profile
    pub stride: usize,
}

impl Default for SeriesSection {
    fn default() -> Self {
        Self {
            acf_max_lag: 20,
            acf_threshold: 0.8,
            stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub horizons: Vec<usize>,
    pub split: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stopping: bool,
    pub patience: usize,
    pub validation_fraction: f64,
    /// "after-window" or "literal"
    pub target_convention: String,
    pub with_im: bool,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            horizons: vec![1, 2, 3],
            split: 0.8,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 6,
            early_stopping: true,
            patience: 5,
            validation_fraction: 0.1,
            target_convention: "after-window".into(),
            with_im: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            out_dir: "out".into(),
        }
    }
}

/// The whole pipeline configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub synth: SynthSection,
    pub cluster: ClusterSection,
    pub series: SeriesSection,
    pub predict: PredictSection,
    pub run: RunSection,
}

impl PipelineConfig {
    /// Parse a config file, apply `TRAFFICAST_*` environment overrides, and
    /// validate.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Defaults plus environment overrides; used when no file is given.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut config = PipelineConfig::default();
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Apply `TRAFFICAST_<SECTION>_<KEY>=<value>` overrides. Unknown
    /// variables under the prefix are hard errors.
    pub fn apply_env(
        &mut self,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (var, value) in vars {
            let Some(rest) = var.strip_prefix("TRAFFICAST_") else {
                continue;
            };
            let Some((section, key)) = rest.split_once('_') else {
                return Err(ConfigError::BadEnv {
                    var,
                    reason: "expected TRAFFICAST_<SECTION>_<KEY>".into(),
                });
            };
            let section = section.to_ascii_lowercase();
            let key = key.to_ascii_lowercase();
            self.set_key(&section, &key, &value)
                .map_err(|reason| ConfigError::BadEnv { var: var.clone(), reason })?;
        }
        Ok(())
    }

    fn set_key(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| format!("{e}"))
        }
        fn parse_dates(value: &str) -> Result<Vec<NaiveDate>, String> {
            value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse::<NaiveDate>(s.trim()))
                .collect()
        }
        fn parse_list(value: &str) -> Result<Vec<usize>, String> {
            value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse::<usize>(s.trim()))
                .collect()
        }
        match (section, key) {
            ("data", "input") => self.data.input = value.to_string(),
            ("data", "period") => self.data.period = parse(value)?,
            ("data", "max_gap") => self.data.max_gap = parse(value)?,
            ("data", "exclude_weekends") => self.data.exclude_weekends = parse(value)?,
            ("data", "exclude_dates") => self.data.exclude_dates = parse_dates(value)?,
            ("data", "utc_offset_secs") => self.data.utc_offset_secs = parse(value)?,
            ("synth", "segments_per_archetype") => {
                self.synth.segments_per_archetype = parse(value)?
            }
            ("synth", "days") => self.synth.days = parse(value)?,
            ("synth", "start_date") => self.synth.start_date = parse(value)?,
            ("synth", "day_jitter") => self.synth.day_jitter = parse(value)?,
            ("synth", "obs_noise") => self.synth.obs_noise = parse(value)?,
            ("synth", "event_rate") => self.synth.event_rate = parse(value)?,
            ("synth", "event_depth") => self.synth.event_depth = parse(value)?,
            ("synth", "amplitude_low") => self.synth.amplitude_low = parse(value)?,
            ("synth", "amplitude_high") => self.synth.amplitude_high = parse(value)?,
            ("synth", "offset_low") => self.synth.offset_low = parse(value)?,
            ("synth", "offset_high") => self.synth.offset_high = parse(value)?,
            ("cluster", "resolution") => self.cluster.resolution = parse(value)?,
            ("cluster", "embedding_dim") => self.cluster.embedding_dim = parse(value)?,
            ("cluster", "learning_rate") => self.cluster.learning_rate = parse(value)?,
            ("cluster", "batch_size") => self.cluster.batch_size = parse(value)?,
            ("cluster", "epochs") => self.cluster.epochs = parse(value)?,
            ("cluster", "margin") => self.cluster.margin = parse(value)?,
            ("cluster", "batches_per_epoch") => self.cluster.batches_per_epoch = parse(value)?,
            ("cluster", "segments_per_batch") => {
                self.cluster.segments_per_batch = parse(value)?
            }
            ("cluster", "images_per_segment") => {
                self.cluster.images_per_segment = parse(value)?
            }
            ("cluster", "min_epoch_loss") => self.cluster.min_epoch_loss = parse(value)?,
            ("cluster", "k_min") => self.cluster.k_min = parse(value)?,
            ("cluster", "k_max") => self.cluster.k_max = parse(value)?,
            ("cluster", "forced_k") => self.cluster.forced_k = parse(value)?,
            ("cluster", "kmeans_restarts") => self.cluster.kmeans_restarts = parse(value)?,
            ("cluster", "kmeans_max_iters") => self.cluster.kmeans_max_iters = parse(value)?,
            ("series", "acf_max_lag") => self.series.acf_max_lag = parse(value)?,
            ("series", "acf_threshold") => self.series.acf_threshold = parse(value)?,
            ("series", "stride") => self.series.stride = parse(value)?,
            ("predict", "horizons") => self.predict.horizons = parse_list(value)?,
            ("predict", "split") => self.predict.split = parse(value)?,
            ("predict", "learning_rate") => self.predict.learning_rate = parse(value)?,
            ("predict", "batch_size") => self.predict.batch_size = parse(value)?,
            ("predict", "epochs") => self.predict.epochs = parse(value)?,
            ("predict", "early_stopping") => self.predict.early_stopping = parse(value)?,
            ("predict", "patience") => self.predict.patience = parse(value)?,
            ("predict", "validation_fraction") => {
                self.predict.validation_fraction = parse(value)?
            }
            ("predict", "target_convention") => {
                self.predict.target_convention = value.to_string()
            }
            ("predict", "with_im") => self.predict.with_im = parse(value)?,
            ("run", "seed") => self.run.seed = parse(value)?,
            ("run", "threads") => self.run.threads = parse(value)?,
            ("run", "out_dir") => self.run.out_dir = value.to_string(),
            _ => return Err(format!("unknown config key {section}.{key}")),
        }
        Ok(())
    }

    /// Check every field; all violations are reported together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, message: &str| {
            if !ok {
                errors.push(message.to_string());
            }
        };
        check(
            self.data.period > 0 && 86_400 % self.data.period == 0,
            "data.period: must divide one day into whole seconds",
        );
        check(
            self.synth.segments_per_archetype > 0,
            "synth.segments_per_archetype: must be at least 1",
        );
        check(self.synth.days >= 2, "synth.days: must be at least 2");
        check(
            self.synth.day_jitter >= 0.0,
            "synth.day_jitter: must be non-negative",
        );
        check(
            self.synth.obs_noise >= 0.0,
            "synth.obs_noise: must be non-negative",
        );
        check(
            (0.0..=1.0).contains(&self.synth.event_rate),
            "synth.event_rate: must lie in [0, 1]",
        );
        check(
            self.synth.event_depth >= 0.0,
            "synth.event_depth: must be non-negative",
        );
        check(
            self.synth.amplitude_low > 0.0
                && self.synth.amplitude_high >= self.synth.amplitude_low,
            "synth.amplitude_low/high: must be positive and ordered",
        );
        check(
            self.synth.offset_high >= self.synth.offset_low,
            "synth.offset_low/high: must be ordered",
        );
        check(
            self.cluster.resolution >= 16,
            "cluster.resolution: must be at least 16 for the embedder stack",
        );
        check(
            self.cluster.embedding_dim > 0,
            "cluster.embedding_dim: must be positive",
        );
        check(
            self.cluster.learning_rate > 0.0,
            "cluster.learning_rate: must be positive",
        );
        check(
            self.cluster.batch_size > 0,
            "cluster.batch_size: must be positive",
        );
        check(self.cluster.margin >= 0.0, "cluster.margin: must be non-negative");
        check(
            self.cluster.batches_per_epoch > 0,
            "cluster.batches_per_epoch: must be positive",
        );
        check(
            self.cluster.segments_per_batch >= 2,
            "cluster.segments_per_batch: must be at least 2",
        );
        check(
            self.cluster.images_per_segment >= 2,
            "cluster.images_per_segment: must be at least 2",
        );
        check(self.cluster.k_min >= 2, "cluster.k_min: must be at least 2");
        check(
            self.cluster.k_max >= self.cluster.k_min,
            "cluster.k_max: must be >= cluster.k_min",
        );
        check(
            self.cluster.kmeans_restarts > 0,
            "cluster.kmeans_restarts: must be positive",
        );
        check(
            self.cluster.kmeans_max_iters > 0,
            "cluster.kmeans_max_iters: must be positive",
        );
        check(
            self.series.acf_max_lag >= 1,
            "series.acf_max_lag: must be at least 1",
        );
        check(
            self.series.acf_threshold > 0.0 && self.series.acf_threshold < 1.0,
            "series.acf_threshold: must lie strictly between 0 and 1",
        );
        check(
            !self.predict.horizons.is_empty()
                && self.predict.horizons.iter().all(|&h| h >= 1),
            "predict.horizons: must be a non-empty list of positive slots",
        );
        check(
            self.predict.split > 0.0 && self.predict.split < 1.0,
            "predict.split: must lie strictly between 0 and 1",
        );
        check(
            self.predict.learning_rate > 0.0,
            "predict.learning_rate: must be positive",
        );
        check(
            self.predict.batch_size > 0,
            "predict.batch_size: must be positive",
        );
        check(
            self.predict.validation_fraction >= 0.0 && self.predict.validation_fraction < 1.0,
            "predict.validation_fraction: must lie in [0, 1)",
        );
        check(
            matches!(self.predict.target_convention.as_str(), "after-window" | "literal"),
            "predict.target_convention: must be \"after-window\" or \"literal\"",
        );
        check(self.run.threads >= 1, "run.threads: must be at least 1");
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn target_convention(&self) -> TargetConvention {
        match self.predict.target_convention.as_str() {
            "literal" => TargetConvention::Literal,
            _ => TargetConvention::AfterWindow,
        }
    }

    /// The cluster-stage view of this config.
    pub fn cluster_config(&self) -> crate::deepcluster::ClusterConfig {
        crate::deepcluster::ClusterConfig {
            resolution: self.cluster.resolution,
            embedding_dim: self.cluster.embedding_dim,
            train: TrainConfig {
                learning_rate: self.cluster.learning_rate,
                batch_size: self.cluster.batch_size,
                epochs: self.cluster.epochs,
                margin: self.cluster.margin,
                seed: self.run.seed,
                ..TrainConfig::default()
            },
            batches_per_epoch: self.cluster.batches_per_epoch,
            segments_per_batch: self.cluster.segments_per_batch,
            images_per_segment: self.cluster.images_per_segment,
            min_epoch_loss: self.cluster.min_epoch_loss,
            k_range: (self.cluster.k_min, self.cluster.k_max),
            forced_k: (self.cluster.forced_k > 0).then_some(self.cluster.forced_k),
            kmeans_restarts: self.cluster.kmeans_restarts,
            kmeans_max_iters: self.cluster.kmeans_max_iters,
        }
    }

    /// The prediction-stage view, given the chosen stride.
    pub fn predict_config(&self, stride: usize) -> PredictConfig {
        PredictConfig {
            input_length: crate::series::input_length(self.data.period, stride),
            stride,
            horizon: self.predict.horizons.first().copied().unwrap_or(1),
            split: self.predict.split,
            convention: self.target_convention(),
            train: TrainConfig {
                learning_rate: self.predict.learning_rate,
                batch_size: self.predict.batch_size,
                epochs: self.predict.epochs,
                seed: self.run.seed,
                ..TrainConfig::default()
            },
            early_stopping: self.predict.early_stopping,
            patience: self.predict.patience,
            validation_fraction: self.predict.validation_fraction,
        }
    }

    /// The synthetic-data view of this config.
    pub fn synth_spec(&self) -> crate::synth::SynthSpec {
        let mut archetypes = crate::synth::default_archetypes();
        for a in &mut archetypes {
            a.day_jitter = self.synth.day_jitter;
            a.obs_noise = self.synth.obs_noise;
            a.event_rate = self.synth.event_rate;
            a.event_depth = self.synth.event_depth;
        }
        crate::synth::SynthSpec {
            archetypes,
            segments_per_archetype: self.synth.segments_per_archetype,
            days: self.synth.days,
            period: self.data.period,
            seed: crate::rng::stage_seed(self.run.seed, "synth"),
            amplitude_range: (self.synth.amplitude_low, self.synth.amplitude_high),
            offset_range: (self.synth.offset_low, self.synth.offset_high),
            start_date: self.synth.start_date,
            utc_offset_secs: self.data.utc_offset_secs,
        }
    }

    pub fn calendar_filter(&self) -> crate::ingest::CalendarFilter {
        crate::ingest::CalendarFilter {
            exclude_weekends: self.data.exclude_weekends,
            exclude_dates: self.data.exclude_dates.clone(),
            utc_offset_secs: self.data.utc_offset_secs,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out_dir)
    }

    /// Hash of the effective configuration, for the run manifest.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}
