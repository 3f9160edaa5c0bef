//! Cross-module integration checks.

use trafficast::deepcluster::{cluster_network, ClusterConfig};
use trafficast::ingest::{load_csv, write_csv, SpeedSeries};
use trafficast::nn::TrainConfig;
use trafficast::series::split_periodic;
use trafficast::synth::{default_archetypes, generate, SynthSpec};

#[test]
fn paper_scale_csv_round_trip() {
    // 27 segments x 90 days x 288 slots
    let spec = SynthSpec {
        seed: 1,
        ..SynthSpec::new(default_archetypes(), 9, 90)
    };
    let (series, _) = generate(&spec).unwrap();
    assert_eq!(series.len(), 27);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("network.csv");
    write_csv(&series, &path).unwrap();
    let loaded = load_csv(&path).unwrap();
    assert_eq!(loaded.len(), 27);
    for (original, reloaded) in series.iter().zip(&loaded) {
        assert_eq!(reloaded.segment_id(), original.segment_id());
        assert_eq!(reloaded.len(), 25_920);
        assert_eq!(reloaded.step(), 300);
        // index -> timestamp reconstruction matches the source exactly
        for i in [0_usize, 1, 287, 288, 25_919] {
            assert_eq!(reloaded.timestamp(i), original.timestamp(i));
        }
        assert_eq!(reloaded.values(), original.values());
    }
    let grid = split_periodic(&loaded[0], 288).unwrap();
    assert_eq!(grid.days(), 90);
}

#[test]
fn clustering_invariant_under_segment_rescaling() {
    // per-day normalization makes the pipeline scale-free; doubling every
    // speed (exact in binary floating point) must reproduce the clustering
    // bit for bit under the same seed
    let spec = SynthSpec {
        seed: 21,
        period: 48,
        ..SynthSpec::new(default_archetypes(), 2, 6)
    };
    let (series, _) = generate(&spec).unwrap();
    let rescaled: Vec<SpeedSeries> = series
        .iter()
        .map(|s| {
            let values = s
                .values()
                .iter()
                .map(|v| v.map(|x| x * 2.0))
                .collect();
            SpeedSeries::new(s.segment_id(), s.t0(), s.step(), values).unwrap()
        })
        .collect();

    let config = ClusterConfig {
        resolution: 16,
        train: TrainConfig {
            epochs: 1,
            seed: 5,
            ..TrainConfig::default()
        },
        batches_per_epoch: 3,
        images_per_segment: 4,
        k_range: (2, 3),
        ..ClusterConfig::default()
    };
    let grids = |set: &[SpeedSeries]| -> Vec<_> {
        set.iter().map(|s| split_periodic(s, 48).unwrap()).collect()
    };
    let a = cluster_network(&grids(&series), &config).unwrap();
    let b = cluster_network(&grids(&rescaled), &config).unwrap();
    assert_eq!(a.clustering.assignments, b.clustering.assignments);
    assert_eq!(a.clustering.k, b.clustering.k);
    for (x, y) in a.embeddings.values().zip(b.embeddings.values()) {
        assert_eq!(x.values(), y.values());
    }
}

#[test]
fn cluster_artifacts_are_consistent() {
    let spec = SynthSpec {
        seed: 33,
        period: 48,
        ..SynthSpec::new(default_archetypes(), 2, 6)
    };
    let (series, _) = generate(&spec).unwrap();
    let grids: Vec<_> = series
        .iter()
        .map(|s| split_periodic(s, 48).unwrap())
        .collect();
    let config = ClusterConfig {
        resolution: 16,
        train: TrainConfig {
            epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        },
        batches_per_epoch: 3,
        images_per_segment: 4,
        k_range: (2, 4),
        ..ClusterConfig::default()
    };
    let artifacts = cluster_network(&grids, &config).unwrap();
    // every segment assigned exactly once, to a group below K
    assert_eq!(artifacts.clustering.assignments.len(), series.len());
    assert!(artifacts
        .clustering
        .assignments
        .values()
        .all(|&g| g < artifacts.clustering.k));
    // every embedding is unit norm
    for embedding in artifacts.embeddings.values() {
        let norm: f64 = embedding.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
    // centroids are the means of their members' embeddings
    let k = artifacts.clustering.k;
    let dim = artifacts.embeddings.values().next().unwrap().dim();
    for group in 0..k {
        let members: Vec<&str> = artifacts
            .clustering
            .assignments
            .iter()
            .filter(|(_, &g)| g == group)
            .map(|(id, _)| id.as_str())
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0_f64; dim];
        for id in &members {
            for (m, v) in mean.iter_mut().zip(artifacts.embeddings[*id].values()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        for (got, want) in artifacts.clustering.centroids[group].iter().zip(&mean) {
            assert!((got - want).abs() < 1e-9, "centroid mismatch: {got} vs {want}");
        }
    }
}
