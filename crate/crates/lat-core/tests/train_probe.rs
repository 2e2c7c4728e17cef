use lat_core::eval::{run_point, Decoder, McOptions, StopRule};
use lat_core::model::{LatConfig, LatParams};
use lat_core::polar::{construct, ConstructionMethod};
use lat_core::trainer::{fine_tune, train, CodeSpace, TrainConfig};
use std::sync::Arc;

#[test]
fn train_probe() {
    let net = LatConfig { n_layers: 3, d_model: 128, n_heads: 8, d_ff: 256, n_max: 16, scale_by_d_head: false };
    let code = Arc::new(construct(4, 8, 5.0, ConstructionMethod::Ga).unwrap());
    let tconf = TrainConfig {
        batch_size: 256,
        lr: 5e-4,
        val_blocks: 192,
        max_epochs: 260,
        seed: 11,
        max_seconds: Some(420),
        ..Default::default()
    };
    let params = LatParams::init(net, 3).unwrap();
    let start = std::time::Instant::now();
    let out = train(params, &tconf, CodeSpace::Fixed(Arc::clone(&code)), 0, |log, _| {
        if log.epoch % 20 == 0 {
            println!("epoch {:4} loss {:.4} val_ber {:.4} buf {}", log.epoch, log.train_loss, log.val_ber, log.buffer_size);
        }
    }).unwrap();
    println!("train took {:?}, best val ber {:.4}, stop {:?}", start.elapsed(), out.best_val_ber, out.stop);

    let ft = fine_tune(out.params, &TrainConfig { max_seconds: Some(120), ..tconf.clone() }, Arc::clone(&code), 40, 0, |_, _| {}).unwrap();
    println!("ft best val ber {:.4}", ft.best_val_ber);

    let opts = McOptions { stop: StopRule { min_block_errors: 100, max_blocks: 20_000 }, ..Default::default() };
    let decoders = [Decoder::Sc, Decoder::Lat(Arc::new(ft.params))];
    let reports = run_point(&decoders, &code, 5.0, 99, &opts).unwrap();
    for r in &reports {
        println!("{}: blocks {} ber {:.5} bler {:.5}", r.decoder, r.blocks, r.ber, r.bler);
    }
}
