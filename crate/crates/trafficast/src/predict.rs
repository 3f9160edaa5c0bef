//! Group-based prediction: strided training samples, one shared recurrent
//! model per cluster (GM), per-segment baselines (IM), and the relative
//! error metrics used to compare them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{fit_minmax, IngestError, MinMaxScaler, SpeedSeries};
use crate::nn::{
    add_grads, mse_loss, predictor_specs, scale_grads, AdamState, Network, NnError, Tensor,
    TrainConfig,
};
use crate::rng::stage_rng;

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("segment {segment}: too short for even one sample (len {len})")]
    TooShort { segment: String, len: usize },
    #[error("segment {segment}: split {split} leaves no {side} samples")]
    EmptySplit {
        segment: String,
        split: f64,
        side: &'static str,
    },
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    BadSplit(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("input length and stride must be at least 1")]
    BadWindow,
    #[error("need at least {need} samples for {folds} folds, got {got}")]
    TooFewForFolds { need: usize, folds: usize, got: usize },
    #[error("folds must be at least 2")]
    TooFewFolds,
    #[error("group {0} has no member segments")]
    EmptyGroup(usize),
    #[error("segment {0} is not assigned to any group")]
    UnassignedSegment(String),
    #[error("no model for group {0}")]
    MissingModel(usize),
    #[error("predictor diverged at epoch {epoch}: mean loss {loss:.3e}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("segment {0}: no relative errors to aggregate")]
    NoErrors(String),
    #[error("empty report")]
    EmptyReport,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Where the prediction target sits relative to the strided input window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetConvention {
    /// `horizon` sampling slots after the last input measurement
    /// (window start t, last input t + (N_i-1)*l, target t + (N_i-1)*l + N_o).
    AfterWindow,
    /// the literal index arithmetic `t + N_i + N_o`.
    Literal,
}

/// Prediction-stage hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    /// input window length N_i
    pub input_length: usize,
    /// input interval l (sampling stride inside the window)
    pub stride: usize,
    /// prediction horizon N_o in sampling slots
    pub horizon: usize,
    /// chronological fraction of samples used for training
    pub split: f64,
    pub convention: TargetConvention,
    pub train: TrainConfig,
    pub early_stopping: bool,
    pub patience: usize,
    /// chronological tail of each segment's training samples held out for
    /// early stopping
    pub validation_fraction: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            input_length: 58,
            stride: 5,
            horizon: 1,
            split: 0.8,
            convention: TargetConvention::AfterWindow,
            train: TrainConfig {
                batch_size: 32,
                epochs: 6,
                ..TrainConfig::default()
            },
            early_stopping: true,
            patience: 5,
            validation_fraction: 0.1,
        }
    }
}

impl PredictConfig {
    fn target_offset(&self) -> usize {
        match self.convention {
            TargetConvention::AfterWindow => (self.input_length - 1) * self.stride + self.horizon,
            TargetConvention::Literal => self.input_length + self.horizon,
        }
    }

    fn validate(&self) -> Result<(), PredictError> {
        if self.input_length == 0 || self.stride == 0 {
            return Err(PredictError::BadWindow);
        }
        if self.horizon == 0 {
            return Err(PredictError::ZeroHorizon);
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(PredictError::BadSplit(self.split));
        }
        Ok(())
    }
}

/// Windowed samples of one segment, already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub segment_id: String,
    pub input_length: usize,
    /// normalized strided windows
    pub inputs: Vec<Vec<f64>>,
    /// normalized targets
    pub targets: Vec<f64>,
    /// raw targets in km/h
    pub raw_targets: Vec<f64>,
    /// 1-based window start per sample
    pub starts: Vec<usize>,
    /// 1-based target index per sample
    pub target_indices: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn slice_of(&self, range: std::ops::Range<usize>) -> SampleSet {
        SampleSet {
            segment_id: self.segment_id.clone(),
            input_length: self.input_length,
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            raw_targets: self.raw_targets[range.clone()].to_vec(),
            starts: self.starts[range.clone()].to_vec(),
            target_indices: self.target_indices[range].to_vec(),
        }
    }
}

/// Sliding strided windows plus chronological train/test split.
///
/// The earliest `split` fraction of samples trains; the scaler is fit on
/// the raw values seen up to the last training target only. Windows that
/// touch a missing value are skipped.
pub fn make_samples(
    series: &SpeedSeries,
    config: &PredictConfig,
) -> Result<(SampleSet, SampleSet, MinMaxScaler), PredictError> {
    config.validate()?;
    let values = series.values();
    let n = values.len();
    let offset = config.target_offset();
    let window_last = (config.input_length - 1) * config.stride;

    // collect (start, target) of every complete sample, 1-based
    let mut windows = Vec::new();
    't: for t in 1..=n {
        let target = t + offset;
        let last_used = (t + window_last).max(target);
        if last_used > n {
            break;
        }
        for i in 0..config.input_length {
            if values[t - 1 + i * config.stride].is_none() {
                continue 't;
            }
        }
        if values[target - 1].is_none() {
            continue;
        }
        windows.push((t, target));
    }
    if windows.is_empty() {
        return Err(PredictError::TooShort {
            segment: series.segment_id().to_string(),
            len: n,
        });
    }

    let n_train = (windows.len() as f64 * config.split).floor() as usize;
    if n_train == 0 {
        return Err(PredictError::EmptySplit {
            segment: series.segment_id().to_string(),
            split: config.split,
            side: "training",
        });
    }
    if n_train == windows.len() {
        return Err(PredictError::EmptySplit {
            segment: series.segment_id().to_string(),
            split: config.split,
            side: "test",
        });
    }

    // scaler over the raw values available up to the training boundary
    let train_horizon_idx = windows[n_train - 1].1; // last training target
    let train_values: Vec<f64> = values[..train_horizon_idx]
        .iter()
        .filter_map(|v| *v)
        .collect();
    let scaler = fit_minmax(&train_values)?;

    let build = |slice: &[(usize, usize)]| -> SampleSet {
        let mut inputs = Vec::with_capacity(slice.len());
        let mut targets = Vec::with_capacity(slice.len());
        let mut raw_targets = Vec::with_capacity(slice.len());
        let mut starts = Vec::with_capacity(slice.len());
        let mut target_indices = Vec::with_capacity(slice.len());
        for &(t, target) in slice {
            let window: Vec<f64> = (0..config.input_length)
                .map(|i| scaler.transform(values[t - 1 + i * config.stride].unwrap()))
                .collect();
            let raw = values[target - 1].unwrap();
            inputs.push(window);
            targets.push(scaler.transform(raw));
            raw_targets.push(raw);
            starts.push(t);
            target_indices.push(target);
        }
        SampleSet {
            segment_id: series.segment_id().to_string(),
            input_length: config.input_length,
            inputs,
            targets,
            raw_targets,
            starts,
            target_indices,
        }
    };

    Ok((
        build(&windows[..n_train]),
        build(&windows[n_train..]),
        scaler,
    ))
}

/// Contiguous time-ordered folds covering the training set exactly once as
/// validation; no shuffling across time.
pub fn kfold_split(train: &SampleSet, folds: usize) -> Result<Vec<(SampleSet, SampleSet)>, PredictError> {
    if folds < 2 {
        return Err(PredictError::TooFewFolds);
    }
    let n = train.len();
    if n < folds {
        return Err(PredictError::TooFewForFolds {
            need: folds,
            folds,
            got: n,
        });
    }
    let mut out = Vec::with_capacity(folds);
    let base = n / folds;
    let extra = n % folds;
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let val_range = start..start + size;
        let mut fit = train.slice_of(0..start);
        let tail = train.slice_of(val_range.end..n);
        fit.inputs.extend(tail.inputs);
        fit.targets.extend(tail.targets);
        fit.raw_targets.extend(tail.raw_targets);
        fit.starts.extend(tail.starts);
        fit.target_indices.extend(tail.target_indices);
        out.push((fit, train.slice_of(val_range)));
        start += size;
    }
    Ok(out)
}

/// One trained predictor shared by the segments of a group.
#[derive(Debug, Clone)]
pub struct GroupModel {
    pub group: usize,
    pub network: Network,
    pub input_length: usize,
    /// per-epoch mean training loss (normalized MSE)
    pub train_history: Vec<f64>,
    /// epochs actually run (early stopping may cut training short)
    pub epochs_run: usize,
}

struct PooledSample {
    input: Vec<f64>,
    target: f64,
    raw_target: f64,
    scaler: MinMaxScaler,
}

fn forward_prediction(network: &Network, input: &[f64]) -> Result<f64, NnError> {
    let tensor = Tensor::from_vec(&[input.len(), 1], input.to_vec())?;
    Ok(network.forward(&tensor)?.data()[0])
}

/// Train one predictor on the pooled training samples of `members`.
///
/// `label` names the model in the seed derivation, so reruns with the same
/// label, seed, and data are bitwise identical.
pub fn train_gm(
    members: &[&SpeedSeries],
    group: usize,
    config: &PredictConfig,
    label: &str,
) -> Result<GroupModel, PredictError> {
    if members.is_empty() {
        return Err(PredictError::EmptyGroup(group));
    }
    config.validate()?;
    config.train.validate()?;

    let mut pooled: Vec<PooledSample> = Vec::new();
    let mut validation: Vec<PooledSample> = Vec::new();
    for series in members {
        let (train, _test, scaler) = make_samples(series, config)?;
        let n = train.len();
        let n_val = if config.early_stopping {
            ((n as f64 * config.validation_fraction).floor() as usize).min(n - 1)
        } else {
            0
        };
        let split_at = n - n_val;
        for i in 0..n {
            let sample = PooledSample {
                input: train.inputs[i].clone(),
                target: train.targets[i],
                raw_target: train.raw_targets[i],
                scaler,
            };
            if i < split_at {
                pooled.push(sample);
            } else {
                validation.push(sample);
            }
        }
    }

    let mut init_rng = stage_rng(config.train.seed, &format!("{label}/init"));
    let mut network = Network::from_specs(
        &predictor_specs(),
        &[config.input_length, 1],
        &mut init_rng,
    )?;
    let mut shuffle_rng: ChaCha8Rng = stage_rng(config.train.seed, &format!("{label}/shuffle"));
    let mut adam = AdamState::for_params(&network.params());

    let mut history = Vec::new();
    let mut over_initial = 0_usize;
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0_usize;
    let mut epochs_run = 0_usize;

    let mut order: Vec<usize> = (0..pooled.len()).collect();
    for epoch in 0..config.train.epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.train.batch_size) {
            let mut grads = network.zero_grads();
            for &i in chunk {
                let sample = &pooled[i];
                let tensor =
                    Tensor::from_vec(&[config.input_length, 1], sample.input.clone())?;
                let (out, caches) = network.forward_cached(&tensor)?;
                let (loss, grad) = mse_loss(out.data()[0], sample.target);
                epoch_loss += loss;
                add_grads(
                    &mut grads,
                    &network.backward(&caches, &Tensor::from_vec(&[1], vec![grad])?)?,
                );
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            adam.step(network.params_mut(), &grads, &config.train)?;
        }
        let mean = epoch_loss / pooled.len().max(1) as f64;
        history.push(mean);
        let initial = history[0];
        if initial > 0.0 && mean > 10.0 * initial {
            over_initial += 1;
            if over_initial >= 3 {
                return Err(PredictError::Divergence { epoch, loss: mean });
            }
        } else {
            over_initial = 0;
        }

        if config.early_stopping && !validation.is_empty() {
            let mut sum = 0.0;
            let mut count = 0_usize;
            for sample in &validation {
                let pred = sample
                    .scaler
                    .inverse(forward_prediction(&network, &sample.input)?);
                if let Some(re) = relative_error(sample.raw_target, pred) {
                    sum += re;
                    count += 1;
                }
            }
            let val_mre = if count > 0 { sum / count as f64 } else { f64::INFINITY };
            let improved = best.as_ref().is_none_or(|(b, _)| val_mre < *b);
            if improved {
                best = Some((
                    val_mre,
                    network.params().into_iter().cloned().collect(),
                ));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, params)) = best {
        for (dst, src) in network.params_mut().into_iter().zip(params) {
            *dst = src;
        }
    }
    Ok(GroupModel {
        group,
        network,
        input_length: config.input_length,
        train_history: history,
        epochs_run,
    })
}

/// Individual baseline: the group trainer applied to a single segment.
pub fn train_im(
    series: &SpeedSeries,
    config: &PredictConfig,
    label: &str,
) -> Result<GroupModel, PredictError> {
    train_gm(&[series], 0, config, label)
}

/// Route each segment's inputs through its group's model and denormalize
/// with the segment's scaler.
pub fn predict_network(
    models: &BTreeMap<usize, GroupModel>,
    assignments: &BTreeMap<String, usize>,
    inputs: &BTreeMap<String, (Vec<Vec<f64>>, MinMaxScaler)>,
) -> Result<BTreeMap<String, Vec<f64>>, PredictError> {
    let mut out = BTreeMap::new();
    for (segment, (windows, scaler)) in inputs {
        let group = assignments
            .get(segment)
            .ok_or_else(|| PredictError::UnassignedSegment(segment.clone()))?;
        let model = models
            .get(group)
            .ok_or(PredictError::MissingModel(*group))?;
        let mut predictions = Vec::with_capacity(windows.len());
        for window in windows {
            predictions.push(scaler.inverse(forward_prediction(&model.network, window)?));
        }
        out.insert(segment.clone(), predictions);
    }
    Ok(out)
}

/// `|true - pred| / true`; `None` flags an excluded sample (true <= 0).
pub fn relative_error(true_speed: f64, predicted: f64) -> Option<f64> {
    if true_speed <= 0.0 {
        return None;
    }
    Some((true_speed - predicted).abs() / true_speed)
}

/// Test metrics of one group plus the train/test generalization gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: usize,
    pub segments: usize,
    pub mre_train: f64,
    pub mre_test: f64,
    pub gap: f64,
    pub mare_test: f64,
    pub mire_test: f64,
}

/// Aggregated evaluation of one algorithm at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// RE series over test points, per segment
    pub per_segment_re: BTreeMap<String, Vec<f64>>,
    pub segment_mean_re: BTreeMap<String, f64>,
    pub groups: Vec<GroupMetrics>,
    /// unweighted mean over all segments' means
    pub network_mre_test: f64,
    pub network_mre_train: f64,
    pub network_gap: f64,
    /// per-point pooled test MRE, emitted alongside the per-segment form
    pub pooled_mre_test: f64,
    /// samples excluded because the true speed was not positive
    pub excluded_samples: usize,
}

/// Combine per-segment RE lists into group and network metrics.
///
/// Group MRE is the unweighted mean of member-segment mean REs (the
/// 1/|C_k| form); MARE/MIRE are the max/min member means.
pub fn aggregate_metrics(
    test_re: &BTreeMap<String, Vec<f64>>,
    train_re: &BTreeMap<String, Vec<f64>>,
    assignments: &BTreeMap<String, usize>,
    excluded_samples: usize,
) -> Result<EvalReport, PredictError> {
    if test_re.is_empty() {
        return Err(PredictError::EmptyReport);
    }
    let mut segment_mean_re = BTreeMap::new();
    let mut segment_mean_train = BTreeMap::new();
    for (segment, res) in test_re {
        if res.is_empty() {
            return Err(PredictError::NoErrors(segment.clone()));
        }
        segment_mean_re.insert(
            segment.clone(),
            res.iter().sum::<f64>() / res.len() as f64,
        );
    }
    for (segment, res) in train_re {
        if !res.is_empty() {
            segment_mean_train.insert(
                segment.clone(),
                res.iter().sum::<f64>() / res.len() as f64,
            );
        }
    }

    let mut by_group: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for segment in test_re.keys() {
        let group = assignments
            .get(segment)
            .ok_or_else(|| PredictError::UnassignedSegment(segment.clone()))?;
        by_group.entry(*group).or_default().push(segment);
    }

    let mut groups = Vec::new();
    for (group, members) in &by_group {
        let means: Vec<f64> = members.iter().map(|s| segment_mean_re[*s]).collect();
        let train_means: Vec<f64> = members
            .iter()
            .filter_map(|s| segment_mean_train.get(*s).copied())
            .collect();
        let mre_test = means.iter().sum::<f64>() / means.len() as f64;
        let mre_train = if train_means.is_empty() {
            0.0
        } else {
            train_means.iter().sum::<f64>() / train_means.len() as f64
        };
        groups.push(GroupMetrics {
            group: *group,
            segments: members.len(),
            mre_train,
            mre_test,
            gap: mre_test - mre_train,
            mare_test: means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mire_test: means.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }

    let network_mre_test =
        segment_mean_re.values().sum::<f64>() / segment_mean_re.len() as f64;
    let network_mre_train = if segment_mean_train.is_empty() {
        0.0
    } else {
        segment_mean_train.values().sum::<f64>() / segment_mean_train.len() as f64
    };
    let total_points: usize = test_re.values().map(Vec::len).sum();
    let pooled_mre_test =
        test_re.values().flatten().sum::<f64>() / total_points as f64;

    Ok(EvalReport {
        per_segment_re: test_re.clone(),
        segment_mean_re,
        groups,
        network_mre_test,
        network_mre_train,
        network_gap: network_mre_test - network_mre_train,
        pooled_mre_test,
        excluded_samples,
    })
}

/// Which model family a sweep entry evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    Gm,
    Im,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Gm => write!(f, "GM"),
            Algorithm::Im => write!(f, "IM"),
        }
    }
}

/// One row group of the sweep: a full evaluation of GM or IM at a horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub horizon: usize,
    pub algorithm: Algorithm,
    pub report: EvalReport,
}

/// A prediction with its ground truth for the prediction dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub segment_id: String,
    pub timestamp: i64,
    pub true_speed: f64,
    pub predicted: f64,
    pub re: Option<f64>,
}

/// Evaluate one trained model over a segment: RE lists on train and test
/// plus the dump rows for the test portion.
fn evaluate_segment(
    model: &GroupModel,
    series: &SpeedSeries,
    config: &PredictConfig,
) -> Result<(Vec<f64>, Vec<f64>, usize, Vec<PredictionRow>), PredictError> {
    let (train, test, scaler) = make_samples(series, config)?;
    let mut excluded = 0_usize;
    let mut eval = |set: &SampleSet, rows: Option<&mut Vec<PredictionRow>>| -> Result<Vec<f64>, PredictError> {
        let mut res = Vec::with_capacity(set.len());
        let mut rows = rows;
        for i in 0..set.len() {
            let pred = scaler.inverse(forward_prediction(&model.network, &set.inputs[i])?);
            let re = relative_error(set.raw_targets[i], pred);
            match re {
                Some(re) => res.push(re),
                None => excluded += 1,
            }
            if let Some(rows) = rows.as_deref_mut() {
                rows.push(PredictionRow {
                    segment_id: set.segment_id.clone(),
                    timestamp: series.timestamp(set.target_indices[i] - 1),
                    true_speed: set.raw_targets[i],
                    predicted: pred,
                    re,
                });
            }
        }
        Ok(res)
    };
    let train_re = eval(&train, None)?;
    let mut rows = Vec::new();
    let test_re = eval(&test, Some(&mut rows))?;
    Ok((train_re, test_re, excluded, rows))
}

/// All models trained for a sweep, keyed by horizon.
#[derive(Debug, Clone, Default)]
pub struct TrainedModels {
    /// (horizon, group) -> shared model
    pub gm: BTreeMap<(usize, usize), GroupModel>,
    /// (horizon, segment) -> individual baseline
    pub im: BTreeMap<(usize, String), GroupModel>,
}

fn group_members<'a>(
    series: &'a [SpeedSeries],
    assignments: &BTreeMap<String, usize>,
) -> Result<BTreeMap<usize, Vec<&'a SpeedSeries>>, PredictError> {
    let mut groups: BTreeMap<usize, Vec<&SpeedSeries>> = BTreeMap::new();
    for s in series {
        let group = assignments
            .get(s.segment_id())
            .ok_or_else(|| PredictError::UnassignedSegment(s.segment_id().to_string()))?;
        groups.entry(*group).or_default().push(s);
    }
    Ok(groups)
}

/// Train one GM per group (and one IM per segment when requested) for every
/// horizon. Model labels encode horizon and group/segment, so runs are
/// reproducible model by model.
pub fn train_models(
    series: &[SpeedSeries],
    assignments: &BTreeMap<String, usize>,
    config: &PredictConfig,
    horizons: &[usize],
    with_im: bool,
) -> Result<TrainedModels, PredictError> {
    let groups = group_members(series, assignments)?;
    let mut models = TrainedModels::default();
    for &horizon in horizons {
        let cfg = PredictConfig {
            horizon,
            ..config.clone()
        };
        for (&group, members) in &groups {
            let model = train_gm(members, group, &cfg, &format!("gm/h{horizon}/g{group}"))?;
            models.gm.insert((horizon, group), model);
        }
        if with_im {
            for s in series {
                let id = s.segment_id().to_string();
                let group = assignments[&id];
                let model = train_im(s, &cfg, &format!("im/h{horizon}/{id}"))?;
                models.im.insert((horizon, id), GroupModel { group, ..model });
            }
        }
    }
    Ok(models)
}

/// Everything the sweep produces: the Table-style entries plus GM test
/// predictions at the first horizon.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub entries: Vec<SweepEntry>,
    pub predictions: Vec<PredictionRow>,
}

/// Evaluate trained models over train and test samples of every segment.
pub fn evaluate_models(
    series: &[SpeedSeries],
    assignments: &BTreeMap<String, usize>,
    config: &PredictConfig,
    horizons: &[usize],
    models: &TrainedModels,
) -> Result<SweepOutput, PredictError> {
    let groups = group_members(series, assignments)?;
    let mut entries = Vec::new();
    let mut predictions = Vec::new();
    for &horizon in horizons {
        let cfg = PredictConfig {
            horizon,
            ..config.clone()
        };

        let mut test_re = BTreeMap::new();
        let mut train_re = BTreeMap::new();
        let mut excluded = 0_usize;
        for (&group, members) in &groups {
            let model = models
                .gm
                .get(&(horizon, group))
                .ok_or(PredictError::MissingModel(group))?;
            for s in members {
                let (tr, te, ex, rows) = evaluate_segment(model, s, &cfg)?;
                excluded += ex;
                train_re.insert(s.segment_id().to_string(), tr);
                test_re.insert(s.segment_id().to_string(), te);
                if horizon == horizons[0] {
                    predictions.extend(rows);
                }
            }
        }
        entries.push(SweepEntry {
            horizon,
            algorithm: Algorithm::Gm,
            report: aggregate_metrics(&test_re, &train_re, assignments, excluded)?,
        });

        let im_for_horizon: Vec<(&String, &GroupModel)> = models
            .im
            .iter()
            .filter(|((h, _), _)| *h == horizon)
            .map(|((_, id), m)| (id, m))
            .collect();
        if !im_for_horizon.is_empty() {
            let mut test_re = BTreeMap::new();
            let mut train_re = BTreeMap::new();
            let mut excluded = 0_usize;
            let by_id: BTreeMap<&str, &SpeedSeries> =
                series.iter().map(|s| (s.segment_id(), s)).collect();
            for (id, model) in im_for_horizon {
                let s = by_id[id.as_str()];
                let (tr, te, ex, _) = evaluate_segment(model, s, &cfg)?;
                excluded += ex;
                train_re.insert(id.clone(), tr);
                test_re.insert(id.clone(), te);
            }
            entries.push(SweepEntry {
                horizon,
                algorithm: Algorithm::Im,
                report: aggregate_metrics(&test_re, &train_re, assignments, excluded)?,
            });
        }
    }
    Ok(SweepOutput {
        entries,
        predictions,
    })
}

/// Train and evaluate GM (and optionally IM) at each horizon.
pub fn horizon_sweep(
    series: &[SpeedSeries],
    assignments: &BTreeMap<String, usize>,
    config: &PredictConfig,
    horizons: &[usize],
    with_im: bool,
) -> Result<(SweepOutput, TrainedModels), PredictError> {
    let models = train_models(series, assignments, config, horizons, with_im)?;
    let output = evaluate_models(series, assignments, config, horizons, &models)?;
    Ok((output, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn toy_series(id: &str, n: usize) -> SpeedSeries {
        let values = (1..=n).map(|i| Some(i as f64)).collect();
        SpeedSeries::new(id, 0, 300, values).unwrap()
    }

    fn small_config(input_length: usize, stride: usize, horizon: usize) -> PredictConfig {
        PredictConfig {
            input_length,
            stride,
            horizon,
            ..PredictConfig::default()
        }
    }

    /// Brute-force enumerator: generates every (window, target) pair
    /// straight from the index definitions, for both conventions.
    fn enumerate_windows(
        n: usize,
        n_i: usize,
        l: usize,
        n_o: usize,
        convention: TargetConvention,
    ) -> Vec<(Vec<usize>, usize)> {
        let mut out = Vec::new();
        for t in 1..=n {
            let window: Vec<usize> = (0..n_i).map(|i| t + i * l).collect();
            let target = match convention {
                TargetConvention::AfterWindow => window[n_i - 1] + n_o,
                TargetConvention::Literal => t + n_i + n_o,
            };
            if window[n_i - 1] <= n && target <= n {
                out.push((window, target));
            }
        }
        out
    }

    #[test]
    fn samples_match_enumerator_after_window() {
        let series = toy_series("s", 20);
        let config = small_config(3, 2, 1);
        let (train, test, scaler) = make_samples(&series, &config).unwrap();
        let expected = enumerate_windows(20, 3, 2, 1, TargetConvention::AfterWindow);
        assert_eq!(train.len() + test.len(), expected.len());
        let all_starts: Vec<usize> = train.starts.iter().chain(&test.starts).copied().collect();
        let all_targets: Vec<usize> = train
            .target_indices
            .iter()
            .chain(&test.target_indices)
            .copied()
            .collect();
        for (i, (window, target)) in expected.iter().enumerate() {
            assert_eq!(all_starts[i], window[0]);
            assert_eq!(all_targets[i], *target);
        }
        // first sample: input indices 1,3,5 -> values 1,3,5; target index 6
        assert_eq!(train.starts[0], 1);
        assert_eq!(train.target_indices[0], 6);
        let raw: Vec<f64> = train.inputs[0].iter().map(|v| scaler.inverse(*v)).collect();
        for (got, want) in raw.iter().zip([1.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((train.raw_targets[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn samples_match_enumerator_literal() {
        let series = toy_series("s", 30);
        let config = PredictConfig {
            convention: TargetConvention::Literal,
            ..small_config(4, 3, 2)
        };
        let (train, test, _) = make_samples(&series, &config).unwrap();
        let expected = enumerate_windows(30, 4, 3, 2, TargetConvention::Literal);
        assert_eq!(train.len() + test.len(), expected.len());
        let got: Vec<(usize, usize)> = train
            .starts
            .iter()
            .zip(&train.target_indices)
            .chain(test.starts.iter().zip(&test.target_indices))
            .map(|(a, b)| (*a, *b))
            .collect();
        let want: Vec<(usize, usize)> =
            expected.iter().map(|(w, t)| (w[0], *t)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn inputs_agree_with_slice() {
        let series = toy_series("s", 40);
        let config = small_config(5, 3, 2);
        let (train, _, scaler) = make_samples(&series, &config).unwrap();
        let values: Vec<f64> = series.complete_values().unwrap();
        for i in 0..train.len() {
            let expect = crate::series::slice(&values, train.starts[i], 5, 3).unwrap();
            for (got, want) in train.inputs[i].iter().zip(&expect) {
                assert!((scaler.inverse(*got) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_80_20_exact_counts() {
        // offset = (3-1)*1 + 1 = 3; len 103 gives exactly 100 samples
        let series = toy_series("s", 103);
        let config = small_config(3, 1, 1);
        let (train, test, _) = make_samples(&series, &config).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let max_train = *train.target_indices.iter().max().unwrap();
        let min_test = *test.target_indices.iter().min().unwrap();
        assert!(max_train < min_test, "train must precede test");
    }

    #[test]
    fn too_short_series_errors() {
        let series = toy_series("s", 5);
        let config = small_config(10, 5, 1);
        assert!(matches!(
            make_samples(&series, &config),
            Err(PredictError::TooShort { .. })
        ));
    }

    #[test]
    fn windows_skip_missing_values() {
        let mut values: Vec<Option<f64>> = (1..=30).map(|i| Some(i as f64)).collect();
        values[10] = None;
        let series = SpeedSeries::new("s", 0, 300, values).unwrap();
        let config = small_config(3, 1, 1);
        let (train, test, _) = make_samples(&series, &config).unwrap();
        for set in [&train, &test] {
            for (t, target) in set.starts.iter().zip(&set.target_indices) {
                // index 11 (1-based) is missing; no window or target may use it
                assert!(!(*t..*t + 3).contains(&11));
                assert_ne!(*target, 11);
            }
        }
    }

    #[test]
    fn kfold_partitions_exactly() {
        let series = toy_series("s", 128);
        let config = small_config(3, 1, 1);
        let (train, _, _) = make_samples(&series, &config).unwrap();
        let folds = kfold_split(&train, 10).unwrap();
        assert_eq!(folds.len(), 10);
        let total: usize = folds.iter().map(|(_, v)| v.len()).sum();
        assert_eq!(total, train.len());
        let mut seen = std::collections::BTreeSet::new();
        for (fit, val) in &folds {
            assert_eq!(fit.len() + val.len(), train.len());
            for t in &val.starts {
                assert!(seen.insert(*t), "start {t} appears in two folds");
            }
        }
        assert_eq!(seen.len(), train.len());
    }

    #[test]
    fn kfold_two_folds_half_half() {
        let series = toy_series("s", 103);
        let (train, _, _) = make_samples(&series, &small_config(3, 1, 1)).unwrap();
        let folds = kfold_split(&train, 2).unwrap();
        assert_eq!(folds[0].1.len(), 40);
        assert_eq!(folds[1].1.len(), 40);
    }

    #[test]
    fn kfold_more_folds_than_samples_errors() {
        let series = toy_series("s", 12);
        let (train, _, _) = make_samples(&series, &small_config(3, 1, 1)).unwrap();
        assert!(matches!(
            kfold_split(&train, 100),
            Err(PredictError::TooFewForFolds { .. })
        ));
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(50.0, 45.0), Some(0.1));
        assert_eq!(relative_error(50.0, 50.0), Some(0.0));
        assert_eq!(relative_error(0.0, 10.0), None);
        assert_eq!(relative_error(-1.0, 10.0), None);
    }

    #[test]
    fn aggregate_two_segment_arithmetic() {
        let mut test_re = BTreeMap::new();
        test_re.insert("a".to_string(), vec![0.04, 0.04]);
        test_re.insert("b".to_string(), vec![0.06]);
        let train_re = BTreeMap::new();
        let mut assignments = BTreeMap::new();
        assignments.insert("a".to_string(), 0_usize);
        assignments.insert("b".to_string(), 0_usize);
        let report = aggregate_metrics(&test_re, &train_re, &assignments, 0).unwrap();
        let g = &report.groups[0];
        assert!((g.mre_test - 0.05).abs() < 1e-12);
        assert!((g.mare_test - 0.06).abs() < 1e-12);
        assert!((g.mire_test - 0.04).abs() < 1e-12);
    }

    #[test]
    fn aggregate_single_segment_group_degenerate_extremes() {
        let mut test_re = BTreeMap::new();
        test_re.insert("a".to_string(), vec![0.1, 0.2, 0.3]);
        let mut assignments = BTreeMap::new();
        assignments.insert("a".to_string(), 3_usize);
        let report =
            aggregate_metrics(&test_re, &BTreeMap::new(), &assignments, 0).unwrap();
        let g = &report.groups[0];
        assert_eq!(g.group, 3);
        assert!((g.mre_test - g.mare_test).abs() < 1e-15);
        assert!((g.mre_test - g.mire_test).abs() < 1e-15);
    }

    /// Naive oracle: recompute all aggregates from the raw lists with
    /// straight loops, no shared code with aggregate_metrics.
    fn naive_aggregates(
        test_re: &BTreeMap<String, Vec<f64>>,
        assignments: &BTreeMap<String, usize>,
    ) -> (BTreeMap<usize, (f64, f64, f64)>, f64) {
        let mut means: BTreeMap<&String, f64> = BTreeMap::new();
        for (s, list) in test_re {
            let mut sum = 0.0;
            for v in list {
                sum += v;
            }
            means.insert(s, sum / list.len() as f64);
        }
        let mut group_lists: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (s, m) in &means {
            group_lists.entry(assignments[*s]).or_default().push(*m);
        }
        let mut out = BTreeMap::new();
        for (g, list) in group_lists {
            let mut sum = 0.0;
            let mut max = f64::MIN;
            let mut min = f64::MAX;
            for v in &list {
                sum += v;
                if *v > max {
                    max = *v;
                }
                if *v < min {
                    min = *v;
                }
            }
            out.insert(g, (sum / list.len() as f64, max, min));
        }
        let network = means.values().sum::<f64>() / means.len() as f64;
        (out, network)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn aggregate_matches_naive_oracle(seed in 0_u64..500) {
            let mut rng = stage_rng(seed, "agg-oracle");
            let segments = rng.gen_range(2..10_usize);
            let mut test_re = BTreeMap::new();
            let mut assignments = BTreeMap::new();
            for s in 0..segments {
                let id = format!("s{s}");
                let points = rng.gen_range(1..30_usize);
                let list: Vec<f64> = (0..points).map(|_| rng.gen_range(0.0..0.5)).collect();
                test_re.insert(id.clone(), list);
                assignments.insert(id, rng.gen_range(0..3_usize));
            }
            let report =
                aggregate_metrics(&test_re, &BTreeMap::new(), &assignments, 0).unwrap();
            let (oracle_groups, oracle_network) = naive_aggregates(&test_re, &assignments);
            prop_assert!((report.network_mre_test - oracle_network).abs() < 1e-12);
            for g in &report.groups {
                let (mre, mare, mire) = oracle_groups[&g.group];
                prop_assert!((g.mre_test - mre).abs() < 1e-12);
                prop_assert!((g.mare_test - mare).abs() < 1e-12);
                prop_assert!((g.mire_test - mire).abs() < 1e-12);
                // metric ordering
                prop_assert!(g.mire_test <= g.mre_test + 1e-15);
                prop_assert!(g.mre_test <= g.mare_test + 1e-15);
            }
        }
    }

    fn constant_model(group: usize, n_i: usize, bias: f64) -> GroupModel {
        let mut rng = stage_rng(0, "const-model");
        let mut network = Network::from_specs(
            &[LayerSpec::Dense {
                units: 1,
                activation: Activation::Identity,
            }],
            &[n_i, 1],
            &mut rng,
        )
        .unwrap();
        // zero the weights, set the bias
        {
            let mut params = network.params_mut();
            for v in params[0].data_mut() {
                *v = 0.0;
            }
            params[1].data_mut()[0] = bias;
        }
        GroupModel {
            group,
            network,
            input_length: n_i,
            train_history: Vec::new(),
            epochs_run: 0,
        }
    }

    #[test]
    fn predict_network_routes_by_group() {
        let mut models = BTreeMap::new();
        models.insert(0_usize, constant_model(0, 3, 0.25));
        models.insert(1_usize, constant_model(1, 3, 0.75));
        let mut assignments = BTreeMap::new();
        assignments.insert("a".to_string(), 0_usize);
        assignments.insert("b".to_string(), 1_usize);
        let scaler = MinMaxScaler { min: 0.0, max: 100.0 };
        let mut inputs = BTreeMap::new();
        inputs.insert("a".to_string(), (vec![vec![0.1, 0.2, 0.3]], scaler));
        inputs.insert("b".to_string(), (vec![vec![0.1, 0.2, 0.3]], scaler));
        let out = predict_network(&models, &assignments, &inputs).unwrap();
        assert!((out["a"][0] - 25.0).abs() < 1e-9);
        assert!((out["b"][0] - 75.0).abs() < 1e-9);
    }

    #[test]
    fn same_group_segments_share_predictions() {
        let mut models = BTreeMap::new();
        models.insert(0_usize, constant_model(0, 2, 0.5));
        let mut assignments = BTreeMap::new();
        assignments.insert("a".to_string(), 0_usize);
        assignments.insert("b".to_string(), 0_usize);
        let scaler = MinMaxScaler { min: 0.0, max: 10.0 };
        let wa = vec![vec![0.9, 0.1]];
        let wb = vec![vec![0.2, 0.8]];
        let mut inputs = BTreeMap::new();
        inputs.insert("a".to_string(), (wa.clone(), scaler));
        inputs.insert("b".to_string(), (wb.clone(), scaler));
        let out1 = predict_network(&models, &assignments, &inputs).unwrap();
        // swap the inputs; with a shared model the outputs swap exactly
        let mut inputs = BTreeMap::new();
        inputs.insert("a".to_string(), (wb, scaler));
        inputs.insert("b".to_string(), (wa, scaler));
        let out2 = predict_network(&models, &assignments, &inputs).unwrap();
        assert_eq!(out1["a"], out2["b"]);
        assert_eq!(out1["b"], out2["a"]);
    }

    #[test]
    fn unknown_segment_errors() {
        let mut models = BTreeMap::new();
        models.insert(0_usize, constant_model(0, 2, 0.5));
        let assignments = BTreeMap::new();
        let scaler = MinMaxScaler { min: 0.0, max: 1.0 };
        let mut inputs = BTreeMap::new();
        inputs.insert("ghost".to_string(), (vec![vec![0.0, 0.0]], scaler));
        assert!(matches!(
            predict_network(&models, &assignments, &inputs),
            Err(PredictError::UnassignedSegment(_))
        ));
    }

    fn wavy_series(id: &str, n: usize, seed: u64) -> SpeedSeries {
        let mut rng = stage_rng(seed, id);
        let values = (0..n)
            .map(|i| {
                let base = 50.0 + 20.0 * (i as f64 * 0.3).sin();
                Some(base + rng.gen_range(-2.0..2.0))
            })
            .collect();
        SpeedSeries::new(id, 0, 300, values).unwrap()
    }

    fn quick_train_config() -> PredictConfig {
        PredictConfig {
            input_length: 6,
            stride: 2,
            horizon: 1,
            train: TrainConfig {
                epochs: 1,
                batch_size: 16,
                ..TrainConfig::default()
            },
            early_stopping: false,
            ..PredictConfig::default()
        }
    }

    #[test]
    fn im_equals_gm_on_single_segment() {
        let series = wavy_series("w", 160, 5);
        let config = quick_train_config();
        let gm = train_gm(&[&series], 0, &config, "shared-label").unwrap();
        let im = train_im(&series, &config, "shared-label").unwrap();
        for (a, b) in gm.network.params().iter().zip(im.network.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn duplicated_segment_pools_duplicate_samples() {
        let series = wavy_series("w", 120, 6);
        let clone = SpeedSeries::new(
            "w2",
            series.t0(),
            series.step(),
            series.values().to_vec(),
        )
        .unwrap();
        let config = quick_train_config();
        let (a_train, a_test, _) = make_samples(&series, &config).unwrap();
        let (b_train, b_test, _) = make_samples(&clone, &config).unwrap();
        assert_eq!(a_train.inputs, b_train.inputs);
        assert_eq!(a_train.targets, b_train.targets);
        assert_eq!(a_test.inputs, b_test.inputs);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let series = wavy_series("w", 160, 7);
        let mut config = quick_train_config();
        config.train.epochs = 0;
        let model = train_gm(&[&series], 0, &config, "init-only").unwrap();
        assert_eq!(model.epochs_run, 0);
        assert!(model.train_history.is_empty());
        // identical to a fresh initialization with the same label
        let mut rng = stage_rng(config.train.seed, "init-only/init");
        let fresh = Network::from_specs(&predictor_specs(), &[6, 1], &mut rng).unwrap();
        for (a, b) in model.network.params().iter().zip(fresh.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let series = wavy_series("w", 160, 8);
        let config = quick_train_config();
        let m1 = train_gm(&[&series], 0, &config, "det").unwrap();
        let m2 = train_gm(&[&series], 0, &config, "det").unwrap();
        for (a, b) in m1.network.params().iter().zip(m2.network.params()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(m1.train_history, m2.train_history);
    }
}
