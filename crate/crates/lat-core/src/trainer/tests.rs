use super::*;
use crate::model::forward_batch;
use crate::tensor::Tape;

fn smoke_net() -> LatConfig {
    LatConfig { n_layers: 2, d_model: 16, n_heads: 2, d_ff: 32, n_max: 8, scale_by_d_head: false }
}

fn smoke_tconf() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        buffer_capacity: 16,
        val_blocks: 32,
        max_epochs: 50,
        seed: 42,
        ..Default::default()
    }
}

fn fixed_code() -> Arc<PolarCode> {
    Arc::new(construct(3, 4, 5.0, ConstructionMethod::Ga).unwrap())
}

#[test]
fn loss_decreases_over_first_epochs() {
    let net = smoke_net();
    let tconf = smoke_tconf();
    let params = LatParams::init(net, 1).unwrap();
    let outcome = train(params, &tconf, CodeSpace::Fixed(fixed_code()), 0, |_, _| {}).unwrap();
    assert_eq!(outcome.stop, StopReason::MaxEpochs);
    let losses: Vec<f64> = outcome.log.iter().map(|l| l.train_loss).collect();
    assert_eq!(losses.len(), 50);
    // Monotone trend on 5-epoch means: last mean well below first mean.
    let first: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(
        last < first,
        "training loss did not trend down: first {first:.4}, last {last:.4}"
    );
}

#[test]
fn early_stop_counts_stagnant_epochs_exactly() {
    let net = smoke_net();
    // lr = 0 freezes the parameters, so validation never improves after the
    // first measured epoch.
    let tconf = TrainConfig {
        lr: 0.0,
        staged_patience: 7,
        max_epochs: 100,
        batch_size: 8,
        val_blocks: 16,
        seed: 3,
        ..Default::default()
    };
    let params = LatParams::init(net, 2).unwrap();
    let outcome = train(params, &tconf, CodeSpace::Fixed(fixed_code()), 0, |_, _| {}).unwrap();
    assert_eq!(outcome.stop, StopReason::EarlyStopped);
    // Epoch 1 improves over +inf; epochs 2..=8 are the 7 stagnant ones.
    assert_eq!(outcome.epochs_run, 8);
}

#[test]
fn fine_tune_runs_exactly_requested_epochs_and_never_regresses() {
    let net = smoke_net();
    let tconf = smoke_tconf();
    let code = fixed_code();
    let initial = LatParams::init(net, 5).unwrap();
    let space = CodeSpace::Fixed(Arc::clone(&code));
    let (before, _) = validation_metrics(&initial, &tconf, &space).unwrap();
    let outcome = fine_tune(initial, &tconf, Arc::clone(&code), 12, 0, |_, _| {}).unwrap();
    assert_eq!(outcome.epochs_run, 12);
    let (after, _) = validation_metrics(&outcome.params, &tconf, &space).unwrap();
    assert!(after <= before, "fine-tune regressed: {before} -> {after}");
}

#[test]
fn budget_stops_training() {
    let net = smoke_net();
    let tconf = TrainConfig { max_seconds: Some(0), ..smoke_tconf() };
    let params = LatParams::init(net, 1).unwrap();
    let outcome = train(params, &tconf, CodeSpace::Fixed(fixed_code()), 0, |_, _| {}).unwrap();
    assert_eq!(outcome.stop, StopReason::BudgetExhausted);
    assert_eq!(outcome.epochs_run, 0);
}

#[test]
fn checkpoint_reload_reproduces_validation_bitwise() {
    let net = smoke_net();
    let tconf = TrainConfig { max_epochs: 3, ..smoke_tconf() };
    let params = LatParams::init(net, 9).unwrap();
    let space = CodeSpace::Fixed(fixed_code());
    let outcome = train(params, &tconf, space.clone(), 0, |_, _| {}).unwrap();

    let dir = std::env::temp_dir().join(format!("lat-train-rt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("t.ckpt");
    let meta = crate::model::ModelMeta { config: net, trained_epochs: 3, seed: 9 };
    outcome.params.save(&path, &meta).unwrap();
    let (reloaded, _) = LatParams::load(&path).unwrap();

    let a = validation_metrics(&outcome.params, &tconf, &space).unwrap();
    let b = validation_metrics(&reloaded, &tconf, &space).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn every_parameter_group_receives_gradient() {
    let net = smoke_net();
    let params = LatParams::init(net, 13).unwrap();
    let code = fixed_code();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let opts = SampleOptions::default();
    let batch = sample_batch(&code, 8, &opts, &mut rng).unwrap();

    let mut tape = Tape::new();
    let vars = register_params(&mut tape, &params, true);
    let ys: Vec<Vec<f64>> = batch.iter().map(|s| s.sample.received.clone()).collect();
    let out = forward_batch(&mut tape, &vars, &net, &code, &ys).unwrap();
    let n_pad = net.n_max - code.block_len;
    let mut total = None;
    for (s, ws) in batch.iter().enumerate() {
        let rows: Vec<usize> =
            code.message_set.iter().map(|&a| s * net.n_max + n_pad + a).collect();
        let probs_msg = tape.select_rows(out.probs, Rc::new(rows));
        let labels = smooth_labels(&ws.label, ws.weight);
        let kld = kld_loss(&mut tape, probs_msg, &labels, ws.weight, code.block_len);
        let bler = bler_surrogate(&mut tape, probs_msg, &ws.label);
        let bler = tape.scale(bler, 0.1);
        let loss = tape.add(kld, bler);
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss),
        });
    }
    let grads = tape.backward(total.unwrap()).unwrap();
    for ((name, _), var) in params.named().iter().zip(vars.ordered()) {
        let g = grads
            .get(*var)
            .unwrap_or_else(|| panic!("no gradient for parameter group {name}"));
        assert!(
            g.data.iter().any(|&v| v != 0.0),
            "gradient for {name} is identically zero"
        );
    }
}
