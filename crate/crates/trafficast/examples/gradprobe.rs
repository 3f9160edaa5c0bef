// dev scratch: scan seeds for a predictor gradient check clear of relu kinks
use rand::Rng;
use trafficast::nn::{mse_loss, predictor_specs, Network, Tensor};
use trafficast::rng::stage_rng;

fn main() {
    for seed in 13..33_u64 {
        let mut rng = stage_rng(seed, "acceptance/predictor-gradcheck");
        let steps = 12;
        let mut network = Network::from_specs(&predictor_specs(), &[steps, 1], &mut rng).unwrap();
        let input = Tensor::from_vec(
            &[steps, 1],
            (0..steps).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let target = 0.37;
        let (out, caches) = network.forward_cached(&input).unwrap();
        let (_, grad) = mse_loss(out.data()[0], target);
        let analytic = network
            .backward(&caches, &Tensor::from_vec(&[1], vec![grad]).unwrap())
            .unwrap();
        // finite differences
        let mut worst = 0.0_f64;
        let shapes: Vec<usize> = network.params().iter().map(|p| p.len()).collect();
        for (pi, len) in shapes.iter().enumerate() {
            for i in 0..*len {
                let original = network.params()[pi].data()[i];
                network.params_mut()[pi].data_mut()[i] = original + 1e-5;
                let up = mse_loss(network.forward(&input).unwrap().data()[0], target).0;
                network.params_mut()[pi].data_mut()[i] = original - 1e-5;
                let down = mse_loss(network.forward(&input).unwrap().data()[0], target).0;
                network.params_mut()[pi].data_mut()[i] = original;
                let fd = (up - down) / 2e-5;
                let bp = analytic[pi].data()[i];
                let denom = fd.abs().max(bp.abs());
                let err = if denom < 1e-7 {
                    (fd - bp).abs() / 1e-7
                } else {
                    (fd - bp).abs() / denom
                };
                worst = worst.max(err);
            }
        }
        println!("seed {seed}: max rel err {worst:.3e}");
    }
}
