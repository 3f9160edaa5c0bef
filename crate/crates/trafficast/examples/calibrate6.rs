// dev scratch: calibrate the interval-study experiment (criterion 6)
use std::collections::BTreeMap;

use trafficast::nn::TrainConfig;
use trafficast::predict::{horizon_sweep, PredictConfig, TargetConvention};
use trafficast::rng::stage_seed;
use trafficast::series::{input_length, select_interval, split_periodic};
use trafficast::synth::{default_archetypes, generate, SynthSpec};

fn main() {
    let period = 96_usize;

    // part (a): stability of the selected interval across seeds
    println!("— interval stability —");
    for max_lag in [12_usize, 20] {
        let mut chosen = Vec::new();
        for seed in 0..5_u64 {
            let spec = SynthSpec {
                seed: stage_seed(seed, "c6/data"),
                period,
                ..SynthSpec::new(default_archetypes(), 1, 18)
            };
            let (series, _) = generate(&spec).unwrap();
            let grids: Vec<_> = series
                .iter()
                .map(|s| split_periodic(s, period).unwrap())
                .collect();
            // mean ACF over the training prefix (80%)
            let max = max_lag;
            let mut sums = vec![0.0_f64; max];
            for grid in &grids {
                let values = grid.flatten();
                let train = &values[..(values.len() as f64 * 0.8) as usize];
                let profile = trafficast::series::acf(train, max).unwrap();
                for (s, c) in sums.iter_mut().zip(profile.coefficients()) {
                    *s += c;
                }
            }
            for s in &mut sums {
                *s /= grids.len() as f64;
            }
            let profile = trafficast::series::AcfProfile::from_coefficients(sums.clone(), 10000);
            let choice = select_interval(&profile, 0.8).unwrap();
            chosen.push(choice.stride);
            if seed == 0 {
                let show: Vec<String> = sums.iter().take(12).map(|c| format!("{c:.3}")).collect();
                println!("  max_lag {max}: acf head = [{}]", show.join(", "));
            }
        }
        println!("  max_lag {max_lag}: strides across 5 seeds = {chosen:?}");
    }

    // part (b): Table-style MRE ordering over l
    for (epochs, days, seed) in [(6_usize, 18_usize, 0_u64), (10, 18, 0)] {
        println!("— interval study: epochs {epochs}, days {days}, seed {seed} —");
        let spec = SynthSpec {
            seed: stage_seed(seed, "c6/data"),
            period,
            ..SynthSpec::new(default_archetypes(), 1, days)
        };
        let (series, _) = generate(&spec).unwrap();
        let assignments: BTreeMap<String, usize> =
            series.iter().map(|s| (s.segment_id().to_string(), 0)).collect();
        for l in [1_usize, 3, 5, 7] {
            let config = PredictConfig {
                input_length: input_length(period, l),
                stride: l,
                horizon: 1,
                split: 0.8,
                convention: TargetConvention::AfterWindow,
                train: TrainConfig {
                    epochs,
                    batch_size: 32,
                    seed,
                    ..TrainConfig::default()
                },
                early_stopping: false,
                patience: 5,
                validation_fraction: 0.0,
            };
            let start = std::time::Instant::now();
            let (output, _) = horizon_sweep(&series, &assignments, &config, &[1], false).unwrap();
            let report = &output.entries[0].report;
            println!(
                "  l = {l}: N_i = {:>3}, train MRE {:.2}%, test MRE {:.2}%  ({:.1}s)",
                input_length(period, l),
                report.network_mre_train * 100.0,
                report.network_mre_test * 100.0,
                start.elapsed().as_secs_f32(),
            );
        }
    }
}
