// dev scratch: calibrate the GM-vs-IM generalization gap experiment (criterion 7)
use std::collections::BTreeMap;

use trafficast::nn::TrainConfig;
use trafficast::predict::{horizon_sweep, PredictConfig, TargetConvention};
use trafficast::rng::stage_seed;
use trafficast::synth::{default_archetypes, generate, SynthSpec};

fn main() {
    let period = 72_usize;
    let stride = 3_usize;
    let n_i = period.div_ceil(stride);
    for epochs in [4_usize, 8] {
        println!("— epochs {epochs} —");
        let mut gm_wins = 0;
        for seed in 0..10_u64 {
            let spec = SynthSpec {
                seed: stage_seed(seed, "c7/data"),
                period,
                ..SynthSpec::new(default_archetypes(), 9, 15)
            };
            let (series, labels) = generate(&spec).unwrap();
            // scarce-data benchmark: one group of 9 same-archetype segments
            let group0: Vec<_> = series
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.archetype == "evening-breakdown")
                .map(|(s, _)| s.clone())
                .collect();
            assert_eq!(group0.len(), 9);
            let assignments: BTreeMap<String, usize> = group0
                .iter()
                .map(|s| (s.segment_id().to_string(), 0))
                .collect();
            let config = PredictConfig {
                input_length: n_i,
                stride,
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
            let (output, _) = horizon_sweep(&group0, &assignments, &config, &[1], true).unwrap();
            let gm = &output.entries[0].report;
            let im = &output.entries[1].report;
            let win = gm.network_gap < im.network_gap;
            if win {
                gm_wins += 1;
            }
            println!(
                "  seed {seed}: GM train {:.2}% test {:.2}% gap {:.2}% | IM train {:.2}% test {:.2}% gap {:.2}% | {} ({:.0}s)",
                gm.network_mre_train * 100.0,
                gm.network_mre_test * 100.0,
                gm.network_gap * 100.0,
                im.network_mre_train * 100.0,
                im.network_mre_test * 100.0,
                im.network_gap * 100.0,
                if win { "GM" } else { "IM" },
                start.elapsed().as_secs_f32(),
            );
        }
        println!("  GM smaller gap on {gm_wins}/10 seeds");
    }
}
