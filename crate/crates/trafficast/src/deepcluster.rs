//! Shape-based segment clustering: rasterized daily sub-series are embedded
//! by a triplet-loss CNN, per-segment embeddings are averaged, and segments
//! are grouped by k-means with silhouette-selected K.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::{
    add_grads, embedder_specs, l2_normalize, scale_grads, triplet_loss_grads, AdamState, Network,
    NnError, Tensor, TrainConfig,
};
use crate::raster::{normalize_for_raster, rasterize, RasterError};
use crate::rng::stage_rng;
use crate::series::DayGrid;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("need at least {need} segments, got {got}")]
    TooFewSegments { need: usize, got: usize },
    #[error("segment {segment} has {days} usable days; need at least 2")]
    TooFewDays { segment: String, days: usize },
    #[error("k = {k} exceeds the number of points {points}")]
    KTooLarge { k: usize, points: usize },
    #[error("silhouette needs at least 2 clusters")]
    KTooSmall,
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("invalid k range {lo}..={hi} for {points} points")]
    BadKRange { lo: usize, hi: usize, points: usize },
    #[error("embedder diverged at epoch {epoch}: mean loss {loss:.3e}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("segment {segment}: day embeddings cancel out; no mean representation")]
    ZeroMeanEmbedding { segment: String },
    #[error("triplet count must be at least 1")]
    NoTriplets,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Indices of one training triplet: two days of one segment plus one day of
/// another segment. All indices refer to positions in the grid list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndex {
    /// (segment, day)
    pub anchor: (usize, usize),
    pub positive: (usize, usize),
    pub negative: (usize, usize),
}

impl TripletIndex {
    /// Constraint check: anchor/positive share a segment but not a day, and
    /// the negative comes from a different segment.
    pub fn is_valid(&self) -> bool {
        self.anchor.0 == self.positive.0
            && self.anchor.1 != self.positive.1
            && self.negative.0 != self.anchor.0
    }
}

/// Unit-norm representation of a segment or sub-series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wrap a vector, validating unit norm within 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self, NnError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(NnError::NotUnitNorm(norm));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Final grouping of the network plus quality scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub silhouette: f64,
    pub inertia: f64,
}

/// Everything the clustering stage produces.
#[derive(Debug, Clone)]
pub struct ClusterArtifacts {
    pub clustering: Clustering,
    pub embeddings: BTreeMap<String, Embedding>,
    pub loss_history: Vec<f64>,
    pub silhouette_by_k: Vec<(usize, f64)>,
    pub embedder: Network,
}

/// Hyperparameters of the clustering stage.
#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// raster resolution R (images are R x R)
    pub resolution: usize,
    pub embedding_dim: usize,
    pub train: TrainConfig,
    pub batches_per_epoch: usize,
    pub segments_per_batch: usize,
    pub images_per_segment: usize,
    /// stop training once the epoch mean loss falls below this
    pub min_epoch_loss: f64,
    pub k_range: (usize, usize),
    /// skip silhouette selection and use this K
    pub forced_k: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            embedding_dim: 32,
            train: TrainConfig::default(),
            batches_per_epoch: 50,
            segments_per_batch: 6,
            images_per_segment: 9,
            min_epoch_loss: 5e-3,
            k_range: (2, 8),
            forced_k: None,
            kmeans_restarts: 10,
            kmeans_max_iters: 300,
        }
    }
}

/// Rasterize every usable day of every grid into network input tensors
/// (white pixels become 1.0).
pub fn day_input_tensors(
    grids: &[DayGrid],
    resolution: usize,
) -> Result<Vec<Vec<Tensor>>, ClusterError> {
    grids
        .iter()
        .map(|grid| {
            (0..grid.days())
                .map(|day| day_input_tensor(grid.row(day), resolution))
                .collect()
        })
        .collect()
}

/// One day's sub-series as a normalized raster tensor `[R, R, 1]`.
pub fn day_input_tensor(day: &[f64], resolution: usize) -> Result<Tensor, ClusterError> {
    let normalized = normalize_for_raster(day)?;
    let image = rasterize(&normalized, resolution)?;
    let data = image
        .pixels()
        .iter()
        .map(|&p| if p == 255 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(&[resolution, resolution, 1], data)?)
}

fn check_grids(grids: &[DayGrid], min_segments: usize) -> Result<(), ClusterError> {
    if grids.len() < min_segments {
        return Err(ClusterError::TooFewSegments {
            need: min_segments,
            got: grids.len(),
        });
    }
    for grid in grids {
        if grid.days() < 2 {
            return Err(ClusterError::TooFewDays {
                segment: grid.segment_id().to_string(),
                days: grid.days(),
            });
        }
    }
    Ok(())
}

/// One batch of triplets following the batch composition: a handful of
/// segments per batch, a handful of images per segment.
fn sample_batch(
    day_counts: &[usize],
    batch_size: usize,
    segments_per_batch: usize,
    images_per_segment: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TripletIndex> {
    let all_segments: Vec<usize> = (0..day_counts.len()).collect();
    let chosen: Vec<usize> = all_segments
        .choose_multiple(rng, segments_per_batch.max(2).min(day_counts.len()))
        .copied()
        .collect();
    // image pool per chosen segment
    let pools: Vec<Vec<usize>> = chosen
        .iter()
        .map(|&s| {
            let days: Vec<usize> = (0..day_counts[s]).collect();
            days.choose_multiple(rng, images_per_segment.max(2).min(day_counts[s]))
                .copied()
                .collect()
        })
        .collect();
    (0..batch_size)
        .map(|_| {
            let a_pos = rng.gen_range(0..chosen.len());
            let anchor_seg = chosen[a_pos];
            let pool = &pools[a_pos];
            let i = pool[rng.gen_range(0..pool.len())];
            let j = loop {
                let j = pool[rng.gen_range(0..pool.len())];
                if j != i {
                    break j;
                }
            };
            let n_pos = loop {
                let p = rng.gen_range(0..chosen.len());
                if p != a_pos {
                    break p;
                }
            };
            let negative_seg = chosen[n_pos];
            let k = pools[n_pos][rng.gen_range(0..pools[n_pos].len())];
            TripletIndex {
                anchor: (anchor_seg, i),
                positive: (anchor_seg, j),
                negative: (negative_seg, k),
            }
        })
        .collect()
}

/// Sample `n` triplets uniformly under the constraints (two distinct days of
/// one segment, one day of another). Deterministic per rng state.
pub fn generate_triplets(
    grids: &[DayGrid],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TripletIndex>, ClusterError> {
    check_grids(grids, 2)?;
    if n == 0 {
        return Err(ClusterError::NoTriplets);
    }
    let day_counts: Vec<usize> = grids.iter().map(|g| g.days()).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let batch = sample_batch(&day_counts, (n - out.len()).min(12), 6, 9, rng);
        out.extend(batch);
    }
    out.truncate(n);
    Ok(out)
}

/// Every valid triplet; the space grows as R*d^2*(R-1)*d, so this is only
/// for small grids and test oracles.
pub fn enumerate_triplets(grids: &[DayGrid]) -> Result<Vec<TripletIndex>, ClusterError> {
    check_grids(grids, 2)?;
    let mut out = Vec::new();
    for (r_a, grid_a) in grids.iter().enumerate() {
        for i in 0..grid_a.days() {
            for j in 0..grid_a.days() {
                if i == j {
                    continue;
                }
                for (r_n, grid_n) in grids.iter().enumerate() {
                    if r_n == r_a {
                        continue;
                    }
                    for k in 0..grid_n.days() {
                        out.push(TripletIndex {
                            anchor: (r_a, i),
                            positive: (r_a, j),
                            negative: (r_n, k),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Train the embedder on triplet batches drawn from the rasterized days.
///
/// Returns the network and the per-epoch mean hinged triplet loss. Training
/// stops early once the epoch loss falls under `min_epoch_loss`, and errors
/// out if the loss exceeds 10x its initial value for three epochs running.
pub fn train_embedder(
    images: &[Vec<Tensor>],
    config: &ClusterConfig,
) -> Result<(Network, Vec<f64>), ClusterError> {
    config.train.validate()?;
    let mut init_rng = stage_rng(config.train.seed, "embedder/init");
    let specs = embedder_specs(config.embedding_dim);
    let input_shape = [config.resolution, config.resolution, 1];
    let mut network = Network::from_specs(&specs, &input_shape, &mut init_rng)?;

    let mut triplet_rng = stage_rng(config.train.seed, "embedder/triplets");
    let day_counts: Vec<usize> = images.iter().map(|v| v.len()).collect();
    let mut adam = AdamState::for_params(&network.params());
    let mut history = Vec::with_capacity(config.train.epochs);
    let mut over_initial = 0_usize;

    for epoch in 0..config.train.epochs {
        let mut epoch_loss = 0.0;
        let mut count = 0_usize;
        for _ in 0..config.batches_per_epoch {
            let batch = sample_batch(
                &day_counts,
                config.train.batch_size,
                config.segments_per_batch,
                config.images_per_segment,
                &mut triplet_rng,
            );
            let mut grads = network.zero_grads();
            for triplet in &batch {
                let anchor = &images[triplet.anchor.0][triplet.anchor.1];
                let positive = &images[triplet.positive.0][triplet.positive.1];
                let negative = &images[triplet.negative.0][triplet.negative.1];
                let (fa, ca) = network.forward_cached(anchor)?;
                let (fp, cp) = network.forward_cached(positive)?;
                let (fng, cn) = network.forward_cached(negative)?;
                let (loss, ga, gp, gn) = triplet_loss_grads(
                    fa.data(),
                    fp.data(),
                    fng.data(),
                    config.train.margin,
                );
                epoch_loss += loss;
                count += 1;
                if loss > 0.0 {
                    let dim = ga.len();
                    add_grads(
                        &mut grads,
                        &network.backward(&ca, &Tensor::from_vec(&[dim], ga)?)?,
                    );
                    add_grads(
                        &mut grads,
                        &network.backward(&cp, &Tensor::from_vec(&[dim], gp)?)?,
                    );
                    add_grads(
                        &mut grads,
                        &network.backward(&cn, &Tensor::from_vec(&[dim], gn)?)?,
                    );
                }
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            adam.step(network.params_mut(), &grads, &config.train)?;
        }
        let mean = epoch_loss / count.max(1) as f64;
        history.push(mean);
        let initial = history[0];
        if mean > 10.0 * initial && initial > 0.0 {
            over_initial += 1;
            if over_initial >= 3 {
                return Err(ClusterError::Divergence { epoch, loss: mean });
            }
        } else {
            over_initial = 0;
        }
        if mean < config.min_epoch_loss {
            break;
        }
    }
    Ok((network, history))
}

/// Average the day embeddings of one segment and re-normalize.
pub fn segment_representation(
    embedder: &Network,
    segment_id: &str,
    day_images: &[Tensor],
) -> Result<Embedding, ClusterError> {
    if day_images.is_empty() {
        return Err(ClusterError::TooFewDays {
            segment: segment_id.to_string(),
            days: 0,
        });
    }
    let embeddings: Vec<Vec<f64>> = day_images
        .par_iter()
        .map(|img| embedder.forward(img).map(|t| t.data().to_vec()))
        .collect::<Result<_, _>>()?;
    let dim = embeddings[0].len();
    let mut mean = vec![0.0; dim];
    for e in &embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= embeddings.len() as f64;
    }
    let unit = l2_normalize(&mean).map_err(|_| ClusterError::ZeroMeanEmbedding {
        segment: segment_id.to_string(),
    })?;
    Ok(Embedding(unit))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Plain k-means fit over raw points.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn kmeans_plus_plus_init(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> KmeansFit {
    let dim = points[0].len();
    let mut centroids = kmeans_plus_plus_init(points, k, rng);
    let mut assignments = assign(points, &centroids);
    for _ in 0..max_iters {
        // empty-cluster repair: reseed with the point farthest from its
        // centroid, then re-assign
        loop {
            let mut counts = vec![0_usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let farthest = (0..points.len())
                .max_by(|&a, &b| {
                    let da = squared_distance(&points[a], &centroids[assignments[a]]);
                    let db = squared_distance(&points[b], &centroids[assignments[b]]);
                    da.partial_cmp(&db).unwrap()
                })
                .expect("points are non-empty");
            if squared_distance(&points[farthest], &centroids[assignments[farthest]]) == 0.0 {
                // true duplicates: the empty cluster cannot be filled
                break;
            }
            centroids[empty] = points[farthest].clone();
            assignments = assign(points, &centroids);
        }

        // means of the members
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0_usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            }
        }
        let new_assignments = assign(points, &centroids);
        if new_assignments == assignments {
            break;
        }
        assignments = new_assignments;
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum();
    KmeansFit {
        assignments,
        centroids,
        inertia,
    }
}

/// K-means with k-means++ initialization; best of `restarts` runs by
/// inertia. Deterministic given the rng.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<KmeansFit, ClusterError> {
    if k == 0 || k > points.len() {
        return Err(ClusterError::KTooLarge {
            k,
            points: points.len(),
        });
    }
    let mut best: Option<KmeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, k, max_iters, rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette score over all points; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64, ClusterError> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(ClusterError::KTooSmall);
    }
    let mut counts = vec![0_usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(ClusterError::EmptyCluster(empty));
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if counts[own] == 1 {
            continue; // silhouette of a singleton is 0
        }
        let mut sums = vec![0.0_f64; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[assignments[j]] += squared_distance(&points[i], &points[j]).sqrt();
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Pick K by maximum silhouette over the range; ties break toward the
/// smaller K. Also returns the score per examined K.
pub fn select_k(
    points: &[Vec<f64>],
    k_range: (usize, usize),
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(usize, Vec<(usize, f64)>), ClusterError> {
    let (lo, hi) = k_range;
    if lo < 2 || hi < lo || hi >= points.len() {
        return Err(ClusterError::BadKRange {
            lo,
            hi,
            points: points.len(),
        });
    }
    let mut scores = Vec::new();
    let mut best_k = lo;
    let mut best_score = f64::NEG_INFINITY;
    for k in lo..=hi {
        let mut rng = stage_rng(seed, &format!("select-k/{k}"));
        let fit = kmeans(points, k, restarts, max_iters, &mut rng)?;
        let score = silhouette(points, &fit.assignments)?;
        scores.push((k, score));
        if score > best_score {
            best_score = score;
            best_k = k;
        }
    }
    Ok((best_k, scores))
}

/// The full clustering stage: rasterize, train the embedder, embed and
/// average per segment, select K, and group.
pub fn cluster_network(
    grids: &[DayGrid],
    config: &ClusterConfig,
) -> Result<ClusterArtifacts, ClusterError> {
    check_grids(grids, 3)?;
    let images = day_input_tensors(grids, config.resolution)?;
    let (embedder, loss_history) = train_embedder(&images, config)?;

    let mut points = Vec::with_capacity(grids.len());
    let mut embeddings = BTreeMap::new();
    for (grid, segment_images) in grids.iter().zip(&images) {
        let embedding = segment_representation(&embedder, grid.segment_id(), segment_images)?;
        points.push(embedding.values().to_vec());
        embeddings.insert(grid.segment_id().to_string(), embedding);
    }

    let (k, silhouette_by_k) = match config.forced_k {
        Some(k) => (k, Vec::new()),
        None => {
            let hi = config.k_range.1.min(points.len() - 1);
            let lo = config.k_range.0.min(hi);
            select_k(
                &points,
                (lo, hi),
                config.kmeans_restarts,
                config.kmeans_max_iters,
                config.train.seed,
            )?
        }
    };

    let mut rng = stage_rng(config.train.seed, "kmeans/final");
    let fit = kmeans(
        &points,
        k,
        config.kmeans_restarts,
        config.kmeans_max_iters,
        &mut rng,
    )?;
    let score = if k >= 2 {
        silhouette(&points, &fit.assignments).unwrap_or(0.0)
    } else {
        0.0
    };
    let assignments: BTreeMap<String, usize> = grids
        .iter()
        .zip(&fit.assignments)
        .map(|(g, &a)| (g.segment_id().to_string(), a))
        .collect();
    Ok(ClusterArtifacts {
        clustering: Clustering {
            k,
            assignments,
            centroids: fit.centroids,
            silhouette: score,
            inertia: fit.inertia,
        },
        embeddings,
        loss_history,
        silhouette_by_k,
        embedder,
    })
}
