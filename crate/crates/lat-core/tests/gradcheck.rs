//! Full-network finite-difference gradient check on the tiny configuration.
//!
//! The default (f32) build checks relative error < 1e-3; the f64 test build
//! (`--features f64`) tightens this to 1e-6.

use lat_core::model::{forward_batch, param_vars_from_ordered, LatConfig, LatParams};
use lat_core::polar::{construct, ConstructionMethod};
use lat_core::tensor::gradcheck::{default_step, finite_difference};
use lat_core::tensor::{Tape, Tensor, Var};
use lat_core::trainer::{bler_surrogate, kld_loss, smooth_labels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

#[cfg(feature = "f64")]
const REL_TOL: f64 = 1e-6;
#[cfg(not(feature = "f64"))]
const REL_TOL: f64 = 1e-3;

#[test]
fn full_network_gradients_match_finite_differences() {
    let config = LatConfig::tiny(); // N_max = 4, d_m = 8, h = 2, N_b = 2
    let code = construct(2, 2, 3.0, ConstructionMethod::Ga).unwrap();
    let params = LatParams::init(config, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ys: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let labels: Vec<Vec<u8>> = (0..3)
        .map(|_| (0..code.k).map(|_| rng.gen_range(0..2u8)).collect())
        .collect();
    let weights = [1.2, 0.4, 2.1];
    let n_pad = config.n_max - code.block_len;

    let inputs: Vec<Tensor> = params.named().iter().map(|(_, t)| (*t).clone()).collect();
    let code_b = code.clone();
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let pv = param_vars_from_ordered(&config, vars);
        let out = forward_batch(tape, &pv, &config, &code_b, &ys).unwrap();
        let mut total = None;
        for (s, (label, &w)) in labels.iter().zip(&weights).enumerate() {
            let rows: Vec<usize> = code_b
                .message_set
                .iter()
                .map(|&a| s * config.n_max + n_pad + a)
                .collect();
            let probs_msg = tape.select_rows(out.probs, Rc::new(rows));
            let smoothed = smooth_labels(label, w);
            let kld = kld_loss(tape, probs_msg, &smoothed, w, code_b.block_len);
            let bler = bler_surrogate(tape, probs_msg, label);
            let bler = tape.scale(bler, 0.1);
            let loss = tape.add(kld, bler);
            total = Some(match total {
                None => loss,
                Some(acc) => tape.add(acc, loss),
            });
        }
        total.unwrap()
    };

    // 50 random parameter entries across all groups.
    let mut probe_rng = ChaCha8Rng::seed_from_u64(5150);
    let probes: Vec<(usize, usize)> = (0..50)
        .map(|_| {
            let t = probe_rng.gen_range(0..inputs.len());
            let e = probe_rng.gen_range(0..inputs[t].len());
            (t, e)
        })
        .collect();

    let results = finite_difference(build, &inputs, &probes, default_step());
    let mut worst = 0.0f64;
    for r in &results {
        worst = worst.max(r.rel_err);
        assert!(
            r.rel_err < REL_TOL,
            "param {} entry {}: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
            r.tensor_index,
            r.entry,
            r.analytic,
            r.numeric,
            r.rel_err
        );
    }
    println!("worst relative error over {} probes: {worst:.3e}", results.len());
}
