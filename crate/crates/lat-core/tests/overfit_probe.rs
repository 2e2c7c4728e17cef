use lat_core::model::{LatConfig, LatParams};
use lat_core::polar::{construct, ConstructionMethod};
use lat_core::trainer::{overfit_fixed_batch, sample_batch, NoiseScheme, SampleOptions, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[test]
fn overfit_probe() {
    let net = LatConfig { n_layers: 2, d_model: 32, n_heads: 4, d_ff: 64, n_max: 8, scale_by_d_head: false };
    let code = Arc::new(construct(3, 4, 5.0, ConstructionMethod::Ga).unwrap());
    let opts = SampleOptions { ebn0_min_db: 3.0, ebn0_max_db: 3.0, continuous_ebn0: false, scheme: NoiseScheme::Gaussian };
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let batch = sample_batch(&code, 32, &opts, &mut rng).unwrap();
    let tconf = TrainConfig { lr: 1e-3, lambda_bler: 0.1, ..Default::default() };
    let params = LatParams::init(net, 7).unwrap();
    let start = std::time::Instant::now();
    let (_, trace) = overfit_fixed_batch(params, &tconf, &batch, 2000, true).unwrap();
    println!("steps: {}, final acc: {}, t: {:?}", trace.len(), trace.last().unwrap(), start.elapsed());
    println!("acc trace (every 50): {:?}", trace.iter().step_by(50).collect::<Vec<_>>());
    assert_eq!(*trace.last().unwrap(), 1.0);
}
