//! Training framework: importance-sampled batches, experience reflow, dynamic
//! label smoothing, hybrid KLD + block-error loss, Adam, early stopping.

pub mod loss;
pub mod reflow;
pub mod sample;

pub use loss::{bler_surrogate, kld_loss};
pub use reflow::{reference_label, relabel, should_retain, ExperienceBuffer};
pub use sample::{
    importance_weight, sample_batch, sample_one, smooth_labels, smoothing_eps, LabelSource,
    NoiseScheme, SampleOptions, WeightedSample,
};

use crate::error::{Error, Result};
use crate::model::{
    decode_batch, forward_batch, register_params, LatConfig, LatParams,
};
use crate::polar::{construct, ConstructionMethod, PolarCode};
use crate::tensor::{adam_step, AdamConfig, AdamState, Real, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

/// Samples per forward/backward call; bounds tape memory.
const TRAIN_CHUNK: usize = 64;
const VAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Boundary-confidence threshold p_b for experience reflow.
    pub p_b: f64,
    /// Experience buffer capacity L_m.
    pub buffer_capacity: usize,
    /// Block-error regularizer weight lambda_B.
    pub lambda_bler: f64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    /// Per-epoch multiplicative learning-rate decay; 1.0 keeps it constant.
    pub lr_decay: f64,
    /// Early-stopping patience in epochs without validation improvement.
    pub staged_patience: usize,
    pub max_epochs: usize,
    pub ebn0_min_db: f64,
    pub ebn0_max_db: f64,
    /// Continuous Eb/N0 draws instead of the integer grid.
    pub continuous_ebn0: bool,
    pub seed: u64,
    /// Design Eb/N0 for GA construction of sampled code configurations.
    pub design_ebn0_db: f64,
    /// Framework toggles (all on for the full framework).
    pub importance_sampling: bool,
    pub label_smoothing: bool,
    pub reflow: bool,
    /// Validation set size (blocks) and operating point.
    pub val_blocks: usize,
    pub val_ebn0_db: f64,
    /// Wall-clock budget; training stops cleanly once exceeded.
    pub max_seconds: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            p_b: 0.55,
            buffer_capacity: 128,
            lambda_bler: 0.1,
            lr: 0.0002,
            betas: (0.9, 0.98),
            weight_decay: 0.0,
            lr_decay: 1.0,
            staged_patience: 100,
            max_epochs: 2000,
            ebn0_min_db: 1.0,
            ebn0_max_db: 15.0,
            continuous_ebn0: false,
            seed: 0,
            design_ebn0_db: 5.0,
            importance_sampling: true,
            label_smoothing: true,
            reflow: true,
            val_blocks: 256,
            val_ebn0_db: 5.0,
            max_seconds: None,
        }
    }
}

impl TrainConfig {
    fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            ebn0_min_db: self.ebn0_min_db,
            ebn0_max_db: self.ebn0_max_db,
            continuous_ebn0: self.continuous_ebn0,
            scheme: if self.importance_sampling {
                NoiseScheme::ImportanceUniform
            } else {
                NoiseScheme::Gaussian
            },
        }
    }
}

/// Which code configurations an epoch draws from.
#[derive(Debug, Clone)]
pub enum CodeSpace {
    /// Every valid (N = 2^n <= N_max, 1 <= k < N), uniformly.
    UniformValid,
    /// A single fixed configuration (fine-tuning).
    Fixed(Arc<PolarCode>),
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub train_loss: f64,
    pub kld: f64,
    pub bler_term: f64,
    pub val_ber: f64,
    pub val_bler: f64,
    pub buffer_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
    BudgetExhausted,
    Aborted(String),
}

pub struct TrainOutcome {
    /// Best-validation parameters.
    pub params: LatParams,
    pub epochs_run: u64,
    pub best_val_ber: f64,
    pub stop: StopReason,
    pub log: Vec<EpochLog>,
}

struct ValBlock {
    code: Arc<PolarCode>,
    received: Vec<f64>,
    message: Vec<u8>,
}

fn sample_code(
    n_max: usize,
    design_ebn0_db: f64,
    rng: &mut ChaCha8Rng,
    cache: &mut HashMap<(usize, usize), Arc<PolarCode>>,
) -> Result<Arc<PolarCode>> {
    let n_max_exp = n_max.trailing_zeros() as usize;
    let n = rng.gen_range(1..=n_max_exp);
    let len = 1usize << n;
    let k = rng.gen_range(1..len);
    if let Some(code) = cache.get(&(n, k)) {
        return Ok(Arc::clone(code));
    }
    let code = Arc::new(construct(n, k, design_ebn0_db, ConstructionMethod::Ga)?);
    cache.insert((n, k), Arc::clone(&code));
    Ok(code)
}

fn build_validation_set(
    net: &LatConfig,
    tconf: &TrainConfig,
    space: &CodeSpace,
) -> Result<Vec<ValBlock>> {
    let mut rng = ChaCha8Rng::seed_from_u64(tconf.seed);
    rng.set_stream(3);
    let mut cache = HashMap::new();
    let mut blocks = Vec::with_capacity(tconf.val_blocks);
    for _ in 0..tconf.val_blocks {
        let code = match space {
            CodeSpace::Fixed(code) => Arc::clone(code),
            CodeSpace::UniformValid => {
                sample_code(net.n_max, tconf.design_ebn0_db, &mut rng, &mut cache)?
            }
        };
        let message: Vec<u8> = (0..code.k).map(|_| rng.gen_range(0..2u8)).collect();
        let x = crate::polar::encode(&code, &message)?;
        let symbols = crate::polar::bpsk(&x);
        let sigma2 = crate::polar::ebn0_to_sigma2(tconf.val_ebn0_db, code.rate())?;
        let (_, received) = crate::polar::awgn(&symbols, sigma2, &mut rng)?;
        blocks.push(ValBlock { code, received, message });
    }
    Ok(blocks)
}

/// (BER, BLER) of the current parameters on the held-out validation set.
fn validate(params: &LatParams, net: &LatConfig, set: &[ValBlock]) -> Result<(f64, f64)> {
    let mut groups: Vec<(Arc<PolarCode>, Vec<usize>)> = Vec::new();
    for (i, block) in set.iter().enumerate() {
        match groups.iter_mut().find(|(code, _)| **code == *block.code) {
            Some((_, idxs)) => idxs.push(i),
            None => groups.push((Arc::clone(&block.code), vec![i])),
        }
    }
    let mut bit_errors = 0u64;
    let mut bits = 0u64;
    let mut block_errors = 0u64;
    for (code, idxs) in &groups {
        for chunk in idxs.chunks(VAL_CHUNK) {
            let ys: Vec<Vec<f64>> = chunk.iter().map(|&i| set[i].received.clone()).collect();
            let decisions = decode_batch(params, net, code, &ys)?;
            for (&i, decision) in chunk.iter().zip(&decisions) {
                let truth = &set[i].message;
                bits += truth.len() as u64;
                let errs = truth.iter().zip(decision).filter(|(a, b)| a != b).count() as u64;
                bit_errors += errs;
                if errs > 0 {
                    block_errors += 1;
                }
            }
        }
    }
    Ok((
        bit_errors as f64 / bits.max(1) as f64,
        block_errors as f64 / set.len().max(1) as f64,
    ))
}

/// Deterministic held-out metrics (BER, BLER) for a parameter set on the
/// validation set a TrainConfig defines.
pub fn validation_metrics(
    params: &LatParams,
    tconf: &TrainConfig,
    space: &CodeSpace,
) -> Result<(f64, f64)> {
    let set = build_validation_set(&params.config, tconf, space)?;
    validate(params, &params.config, &set)
}

struct EpochStats {
    loss: f64,
    kld: f64,
    bler: f64,
}

/// One optimization epoch over `batch`; returns stats and per-sample
/// (message-row probabilities, hard decision) for the reflow update.
fn run_epoch(
    params: &mut LatParams,
    net: &LatConfig,
    tconf: &TrainConfig,
    batch: &[WeightedSample],
    adam: &mut AdamState,
    lr: f64,
) -> Result<(EpochStats, Vec<(Tensor, Vec<u8>)>)> {
    // Group sample indices by code configuration, first-seen order.
    let mut groups: Vec<(Arc<PolarCode>, Vec<usize>)> = Vec::new();
    for (i, s) in batch.iter().enumerate() {
        match groups.iter_mut().find(|(code, _)| **code == *s.code) {
            Some((_, idxs)) => idxs.push(i),
            None => groups.push((Arc::clone(&s.code), vec![i])),
        }
    }

    let named = params.named();
    let mut grad_acc: Vec<Tensor> =
        named.iter().map(|(_, t)| Tensor::zeros(t.rows, t.cols)).collect();
    let mut outputs: Vec<Option<(Tensor, Vec<u8>)>> = vec![None; batch.len()];
    let mut sum_loss = 0.0;
    let mut sum_kld = 0.0;
    let mut sum_bler = 0.0;
    let inv_total = 1.0 / batch.len() as f64;

    for (code, idxs) in &groups {
        let n_pad = net.n_max - code.block_len;
        for chunk in idxs.chunks(TRAIN_CHUNK) {
            let mut tape = Tape::new();
            let vars = register_params(&mut tape, params, true);
            let ys: Vec<Vec<f64>> = chunk.iter().map(|&i| batch[i].sample.received.clone()).collect();
            let out = forward_batch(&mut tape, &vars, net, code, &ys)?;
            let mut chunk_loss = None;
            for (s, &i) in chunk.iter().enumerate() {
                let ws = &batch[i];
                let rows: Vec<usize> =
                    code.message_set.iter().map(|&a| s * net.n_max + n_pad + a).collect();
                let probs_msg = tape.select_rows(out.probs, Rc::new(rows));
                let smoothing_w = if tconf.label_smoothing { ws.weight } else { 0.0 };
                let labels = smooth_labels(&ws.label, smoothing_w);
                let kld = kld_loss(&mut tape, probs_msg, &labels, ws.weight, code.block_len);
                let total = if tconf.lambda_bler != 0.0 {
                    let bler = bler_surrogate(&mut tape, probs_msg, &ws.label);
                    sum_bler += tape.value(bler).data[0] as f64;
                    let scaled = tape.scale(bler, tconf.lambda_bler as Real);
                    tape.add(kld, scaled)
                } else {
                    kld
                };
                sum_kld += tape.value(kld).data[0] as f64;
                sum_loss += tape.value(total).data[0] as f64;
                chunk_loss = Some(match chunk_loss {
                    None => total,
                    Some(acc) => tape.add(acc, total),
                });

                // Forward outputs for the reflow predicate.
                let pm = tape.value(probs_msg).clone();
                let decision: Vec<u8> =
                    (0..pm.rows).map(|r| u8::from(pm.get(r, 1) > pm.get(r, 0))).collect();
                outputs[i] = Some((pm, decision));
            }
            let chunk_loss = chunk_loss.expect("non-empty chunk");
            let scaled = tape.scale(chunk_loss, inv_total as Real);
            if !tape.value(scaled).all_finite() {
                return Err(Error::Contract("non-finite training loss".into()));
            }
            let mut grads = tape.backward(scaled)?;
            for (slot, var) in grad_acc.iter_mut().zip(vars.ordered()) {
                if let Some(g) = grads.take(*var) {
                    for (acc, gv) in slot.data.iter_mut().zip(&g.data) {
                        *acc += gv;
                    }
                }
            }
        }
    }

    let adam_cfg = AdamConfig {
        lr: lr as Real,
        beta1: tconf.betas.0 as Real,
        beta2: tconf.betas.1 as Real,
        eps: 1e-8,
        weight_decay: tconf.weight_decay as Real,
    };
    let mut named_mut = params.named_mut();
    let mut refs: Vec<&mut Tensor> = named_mut.iter_mut().map(|(_, t)| &mut **t).collect();
    adam_step(&mut refs, &grad_acc, adam, &adam_cfg);
    for (name, t) in &named_mut {
        if !t.all_finite() {
            return Err(Error::Contract(format!("non-finite parameter '{name}' after update")));
        }
    }

    let stats = EpochStats {
        loss: sum_loss * inv_total,
        kld: sum_kld * inv_total,
        bler: sum_bler * inv_total,
    };
    Ok((stats, outputs.into_iter().map(|o| o.expect("all samples evaluated")).collect()))
}

/// Repeatedly optimizes one fixed batch (no fresh sampling, no reflow, no
/// validation) -- a pure capacity probe. Returns the final parameters and the
/// per-step hard-decision block accuracy against the batch labels; stops early
/// once accuracy reaches 1.0 when `stop_at_full` is set.
pub fn overfit_fixed_batch(
    initial: LatParams,
    tconf: &TrainConfig,
    batch: &[WeightedSample],
    steps: usize,
    stop_at_full: bool,
) -> Result<(LatParams, Vec<f64>)> {
    let net = initial.config;
    net.validate()?;
    let mut params = initial;
    let mut adam = AdamState::new(&params.named().iter().map(|(_, t)| *t).collect::<Vec<_>>());
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let lr = tconf.lr * tconf.lr_decay.powi(step as i32);
        let (_, outputs) = run_epoch(&mut params, &net, tconf, batch, &mut adam, lr)?;
        let correct = outputs
            .iter()
            .zip(batch)
            .filter(|((_, decision), ws)| *decision == ws.label)
            .count();
        let accuracy = correct as f64 / batch.len() as f64;
        trace.push(accuracy);
        if stop_at_full && accuracy == 1.0 {
            break;
        }
    }
    Ok((params, trace))
}

/// Full training loop. Returns the best-validation parameters along with the
/// per-epoch log. `on_epoch` fires after every epoch; its second argument is
/// `Some(best)` when validation improved.
pub fn train<F>(
    initial: LatParams,
    tconf: &TrainConfig,
    space: CodeSpace,
    start_epoch: u64,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, Option<&LatParams>),
{
    let net = initial.config;
    net.validate()?;
    let started = Instant::now();
    let val_set = build_validation_set(&net, tconf, &space)?;

    let mut rng_code = ChaCha8Rng::seed_from_u64(tconf.seed);
    rng_code.set_stream(1);
    let mut rng_batch = ChaCha8Rng::seed_from_u64(tconf.seed);
    rng_batch.set_stream(2);
    let mut code_cache = HashMap::new();
    let opts = tconf.sample_options();

    let mut params = initial;
    let mut adam = AdamState::new(&params.named().iter().map(|(_, t)| *t).collect::<Vec<_>>());
    let mut buffer = ExperienceBuffer::new(tconf.buffer_capacity);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut log = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut epochs_run = 0;

    for e in 0..tconf.max_epochs {
        let epoch = start_epoch + e as u64 + 1;
        if let Some(budget) = tconf.max_seconds {
            if started.elapsed().as_secs() >= budget {
                stop = StopReason::BudgetExhausted;
                break;
            }
        }
        let code = match &space {
            CodeSpace::Fixed(code) => Arc::clone(code),
            CodeSpace::UniformValid => {
                sample_code(net.n_max, tconf.design_ebn0_db, &mut rng_code, &mut code_cache)?
            }
        };
        let fresh = sample_batch(&code, tconf.batch_size, &opts, &mut rng_batch)?;
        let mut batch: Vec<WeightedSample> = buffer.drain();
        batch.extend(fresh);

        let lr = tconf.lr * tconf.lr_decay.powi(e as i32);
        let epoch_result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            run_epoch(&mut params, &net, tconf, &batch, &mut adam, lr)
        }));
        let (stats, outputs) = match epoch_result {
            Ok(Ok(ok)) => ok,
            Ok(Err(err)) => {
                stop = StopReason::Aborted(err.to_string());
                break;
            }
            Err(_) => {
                stop = StopReason::Aborted("panic during epoch (non-finite forward)".into());
                break;
            }
        };
        epochs_run = e as u64 + 1;

        if tconf.reflow {
            for (ws, (probs, decision)) in batch.into_iter().zip(&outputs) {
                if should_retain(probs, &ws.label, decision, tconf.p_b) {
                    let mut retained = ws;
                    relabel(&mut retained)?;
                    buffer.push(retained);
                }
            }
        }

        let (val_ber, val_bler) = validate(&params, &net, &val_set)?;
        let improved = val_ber < best_val;
        if improved {
            best_val = val_ber;
            best_params = params.clone();
            stagnant = 0;
        } else {
            stagnant += 1;
        }

        let entry = EpochLog {
            epoch,
            train_loss: stats.loss,
            kld: stats.kld,
            bler_term: stats.bler,
            val_ber,
            val_bler,
            buffer_size: buffer.len(),
            lr,
        };
        on_epoch(&entry, improved.then_some(&best_params));
        log.push(entry);

        if stagnant >= tconf.staged_patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }

    Ok(TrainOutcome { params: best_params, epochs_run, best_val_ber: best_val, stop, log })
}

/// Continues training restricted to one code configuration for exactly
/// `epochs` epochs (no early stopping). The incoming parameters count as the
/// initial best, so the result never validates worse than the input.
pub fn fine_tune<F>(
    initial: LatParams,
    tconf: &TrainConfig,
    code: Arc<PolarCode>,
    epochs: usize,
    start_epoch: u64,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, Option<&LatParams>),
{
    let net = initial.config;
    net.validate()?;
    let space = CodeSpace::Fixed(Arc::clone(&code));
    let val_set = build_validation_set(&net, tconf, &space)?;
    let (initial_ber, _) = validate(&initial, &net, &val_set)?;

    let ft_conf = TrainConfig {
        max_epochs: epochs,
        staged_patience: usize::MAX,
        ..tconf.clone()
    };
    let mut outcome = train(initial.clone(), &ft_conf, space, start_epoch, |entry, best| {
        on_epoch(entry, best)
    })?;
    if initial_ber <= outcome.best_val_ber {
        outcome.params = initial;
        outcome.best_val_ber = initial_ber;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests;
