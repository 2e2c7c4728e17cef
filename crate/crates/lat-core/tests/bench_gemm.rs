#[test]
fn bench_batched_shapes() {
    use lat_core::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    // (batch*16) x 512 @ 512 x 2048 -- the dominant FFN product at batch 64.
    let a = Tensor::uniform(1024, 512, 0.05, &mut rng);
    let b = Tensor::uniform(512, 2048, 0.05, &mut rng);
    let mut tape = Tape::new();
    let va = tape.leaf(a, false);
    let vb = tape.leaf(b, false);
    let iters = 40;
    let start = std::time::Instant::now();
    let mut sink = 0.0f64;
    for _ in 0..iters {
        let c = tape.matmul(va, vb);
        sink += tape.value(c).data[0] as f64;
    }
    let dt = start.elapsed().as_secs_f64();
    let flops = 2.0 * 1024.0 * 512.0 * 2048.0 * iters as f64;
    println!("batched NN GFLOP/s: {:.2} (sink {sink})", flops / dt / 1e9);
}
