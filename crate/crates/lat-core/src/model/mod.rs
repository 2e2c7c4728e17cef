//! The latent-attention transformer decoder.
//!
//! Query and Key matrices come from trainable positional tables (plus the
//! frozen-prior Query embedding), never from the layer input, so the attention
//! weight pattern of a layer depends only on the code configuration. The layer
//! input propagates through the residual path and the Value side.

pub mod embed;
pub mod mask;

pub use embed::{build_u_f, front_pad, input_embed, query_embed, value_embed, PaddedInput};
pub use mask::{build_mask, MaskSet};

use crate::error::{Error, Result};
use crate::polar::PolarCode;
use crate::tensor::{load_checkpoint, save_checkpoint, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::rc::Rc;

pub const LAYER_NORM_EPS: Real = 1e-5;
/// Floor applied inside log-losses.
pub const PROB_FLOOR: Real = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatConfig {
    /// Decoding layers N_b.
    pub n_layers: usize,
    /// Latent width d_m.
    pub d_model: usize,
    /// Attention heads h.
    pub n_heads: usize,
    /// FFN hidden width d_f.
    pub d_ff: usize,
    /// Network size N_max (maximum code length).
    pub n_max: usize,
    /// Use the conventional sqrt(d_h) attention scale instead of the
    /// sqrt(d_m) this architecture specifies.
    #[serde(default)]
    pub scale_by_d_head: bool,
}

impl Default for LatConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            n_max: 16,
            scale_by_d_head: false,
        }
    }
}

impl LatConfig {
    /// A deliberately small configuration for gradient oracles and smoke tests.
    pub fn tiny() -> Self {
        Self { n_layers: 2, d_model: 8, n_heads: 2, d_ff: 16, n_max: 4, scale_by_d_head: false }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn attn_scale(&self) -> Real {
        let d = if self.scale_by_d_head { self.d_head() } else { self.d_model };
        1.0 / (d as Real).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.n_max.is_power_of_two() {
            return Err(Error::Config(format!("n_max {} must be a power of two", self.n_max)));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::Config("n_layers and d_ff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub phi_q: Tensor,
    pub phi_k: Tensor,
    pub heads: Vec<HeadParams>,
    pub w_o: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// All trainable parameter groups, keyed by name for checkpoints and the
/// optimizer (see [`LatParams::named`] for the canonical ordering).
#[derive(Debug, Clone)]
pub struct LatParams {
    pub config: LatConfig,
    pub e_in_p: Tensor,
    pub e_v_sign: Tensor,
    pub e_v_abs: Tensor,
    pub e_q_p: Tensor,
    pub layers: Vec<LayerParams>,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl LatParams {
    /// Scaled-uniform initialization: U(-1/sqrt(d_m), 1/sqrt(d_m)) for every
    /// table and weight matrix, zero biases, unit layer-norm gains.
    pub fn init(config: LatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.d_model as Real).sqrt();
        let (n_max, d_m, d_h, d_f) = (config.n_max, config.d_model, config.d_head(), config.d_ff);
        let mut u = |rows: usize, cols: usize| Tensor::uniform(rows, cols, bound, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                phi_q: u(n_max, d_m),
                phi_k: u(2 * n_max, d_m),
                heads: (0..config.n_heads)
                    .map(|_| HeadParams { w_q: u(d_m, d_h), w_k: u(d_m, d_h), w_v: u(d_m, d_h) })
                    .collect(),
                w_o: u(d_m, d_m),
                ffn_w1: u(d_m, d_f),
                ffn_b1: Tensor::zeros(1, d_f),
                ffn_w2: u(d_f, d_m),
                ffn_b2: Tensor::zeros(1, d_m),
                ln1_gain: Tensor::filled(1, d_m, 1.0),
                ln1_bias: Tensor::zeros(1, d_m),
                ln2_gain: Tensor::filled(1, d_m, 1.0),
                ln2_bias: Tensor::zeros(1, d_m),
            })
            .collect();
        Ok(Self {
            e_in_p: u(n_max, d_m),
            e_v_sign: u(n_max, d_m),
            e_v_abs: u(n_max, d_m),
            e_q_p: u(n_max * n_max, d_m),
            layers,
            w_out: u(d_m, 2),
            b_out: Tensor::zeros(1, 2),
            config,
        })
    }

    /// Canonical (name, tensor) listing; the optimizer state and checkpoint
    /// blob are index-aligned with this order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("e_in_p".into(), &self.e_in_p),
            ("e_v_sign".into(), &self.e_v_sign),
            ("e_v_abs".into(), &self.e_v_abs),
            ("e_q_p".into(), &self.e_q_p),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.phi_q"), &layer.phi_q));
            out.push((format!("layer{l}.phi_k"), &layer.phi_k));
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{h}.w_q"), &head.w_q));
                out.push((format!("layer{l}.head{h}.w_k"), &head.w_k));
                out.push((format!("layer{l}.head{h}.w_v"), &head.w_v));
            }
            out.push((format!("layer{l}.w_o"), &layer.w_o));
            out.push((format!("layer{l}.ffn_w1"), &layer.ffn_w1));
            out.push((format!("layer{l}.ffn_b1"), &layer.ffn_b1));
            out.push((format!("layer{l}.ffn_w2"), &layer.ffn_w2));
            out.push((format!("layer{l}.ffn_b2"), &layer.ffn_b2));
            out.push((format!("layer{l}.ln1_gain"), &layer.ln1_gain));
            out.push((format!("layer{l}.ln1_bias"), &layer.ln1_bias));
            out.push((format!("layer{l}.ln2_gain"), &layer.ln2_gain));
            out.push((format!("layer{l}.ln2_bias"), &layer.ln2_bias));
        }
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("e_in_p".into(), &mut self.e_in_p),
            ("e_v_sign".into(), &mut self.e_v_sign),
            ("e_v_abs".into(), &mut self.e_v_abs),
            ("e_q_p".into(), &mut self.e_q_p),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.phi_q"), &mut layer.phi_q));
            out.push((format!("layer{l}.phi_k"), &mut layer.phi_k));
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("layer{l}.head{h}.w_q"), &mut head.w_q));
                out.push((format!("layer{l}.head{h}.w_k"), &mut head.w_k));
                out.push((format!("layer{l}.head{h}.w_v"), &mut head.w_v));
            }
            out.push((format!("layer{l}.w_o"), &mut layer.w_o));
            out.push((format!("layer{l}.ffn_w1"), &mut layer.ffn_w1));
            out.push((format!("layer{l}.ffn_b1"), &mut layer.ffn_b1));
            out.push((format!("layer{l}.ffn_w2"), &mut layer.ffn_w2));
            out.push((format!("layer{l}.ffn_b2"), &mut layer.ffn_b2));
            out.push((format!("layer{l}.ln1_gain"), &mut layer.ln1_gain));
            out.push((format!("layer{l}.ln1_bias"), &mut layer.ln1_bias));
            out.push((format!("layer{l}.ln2_gain"), &mut layer.ln2_gain));
            out.push((format!("layer{l}.ln2_bias"), &mut layer.ln2_bias));
        }
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), &mut self.b_out));
        out
    }

    pub fn save(&self, path: &Path, meta: &ModelMeta) -> Result<()> {
        save_checkpoint(path, meta, &self.named())
    }

    /// Loads a checkpoint, validating every tensor shape against the stored
    /// configuration. Mismatches are reported by tensor name.
    pub fn load(path: &Path) -> Result<(Self, ModelMeta)> {
        let (hyper, tensors) = load_checkpoint(path)?;
        let meta: ModelMeta = serde_json::from_value(hyper)
            .map_err(|e| Error::Format(format!("bad checkpoint hyperparameters: {e}")))?;
        let mut params = Self::init(meta.config, 0)?;
        let mut expected = params.named_mut();
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, config expects {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((name, slot), (stored_name, stored)) in expected.iter_mut().zip(tensors) {
            if *name != stored_name {
                return Err(Error::Format(format!(
                    "checkpoint tensor order mismatch: expected '{name}', found '{stored_name}'"
                )));
            }
            if !slot.same_shape(&stored) {
                return Err(Error::Format(format!(
                    "tensor '{name}': checkpoint shape {}x{} does not match config shape {}x{}",
                    stored.rows, stored.cols, slot.rows, slot.cols
                )));
            }
            **slot = stored;
        }
        Ok((params, meta))
    }
}

/// Checkpoint manifest header alongside the tensor table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: LatConfig,
    pub trained_epochs: u64,
    pub seed: u64,
}

struct HeadVars {
    w_q: Var,
    w_k: Var,
    w_v: Var,
}

struct LayerVars {
    phi_q: Var,
    phi_k: Var,
    heads: Vec<HeadVars>,
    w_o: Var,
    ffn_w1: Var,
    ffn_b1: Var,
    ffn_w2: Var,
    ffn_b2: Var,
    ln1_gain: Var,
    ln1_bias: Var,
    ln2_gain: Var,
    ln2_bias: Var,
}

/// Tape handles for every parameter tensor, in [`LatParams::named`] order.
pub struct ParamVars {
    e_in_p: Var,
    e_v_sign: Var,
    e_v_abs: Var,
    e_q_p: Var,
    layers: Vec<LayerVars>,
    w_out: Var,
    b_out: Var,
    ordered: Vec<Var>,
}

impl ParamVars {
    /// Vars in the canonical parameter order ([`LatParams::named`]).
    pub fn ordered(&self) -> &[Var] {
        &self.ordered
    }
}

/// Registers every parameter on the tape as leaves.
pub fn register_params(tape: &mut Tape, params: &LatParams, trainable: bool) -> ParamVars {
    let mut ordered = Vec::new();
    let mut reg = |tape: &mut Tape, t: &Tensor| {
        let v = tape.leaf(t.clone(), trainable);
        ordered.push(v);
        v
    };
    let e_in_p = reg(tape, &params.e_in_p);
    let e_v_sign = reg(tape, &params.e_v_sign);
    let e_v_abs = reg(tape, &params.e_v_abs);
    let e_q_p = reg(tape, &params.e_q_p);
    let layers = params
        .layers
        .iter()
        .map(|layer| LayerVars {
            phi_q: reg(tape, &layer.phi_q),
            phi_k: reg(tape, &layer.phi_k),
            heads: layer
                .heads
                .iter()
                .map(|h| HeadVars {
                    w_q: reg(tape, &h.w_q),
                    w_k: reg(tape, &h.w_k),
                    w_v: reg(tape, &h.w_v),
                })
                .collect(),
            w_o: reg(tape, &layer.w_o),
            ffn_w1: reg(tape, &layer.ffn_w1),
            ffn_b1: reg(tape, &layer.ffn_b1),
            ffn_w2: reg(tape, &layer.ffn_w2),
            ffn_b2: reg(tape, &layer.ffn_b2),
            ln1_gain: reg(tape, &layer.ln1_gain),
            ln1_bias: reg(tape, &layer.ln1_bias),
            ln2_gain: reg(tape, &layer.ln2_gain),
            ln2_bias: reg(tape, &layer.ln2_bias),
        })
        .collect();
    let w_out = reg(tape, &params.w_out);
    let b_out = reg(tape, &params.b_out);
    ParamVars { e_in_p, e_v_sign, e_v_abs, e_q_p, layers, w_out, b_out, ordered }
}

/// Rebuilds the [`ParamVars`] structure from leaves already registered on a
/// tape, in [`LatParams::named`] order. Used by gradient oracles that need to
/// perturb individual parameter tensors.
pub fn param_vars_from_ordered(config: &LatConfig, vars: &[Var]) -> ParamVars {
    let mut it = vars.iter().copied();
    let mut next = || it.next().expect("var list shorter than parameter list");
    let e_in_p = next();
    let e_v_sign = next();
    let e_v_abs = next();
    let e_q_p = next();
    let layers = (0..config.n_layers)
        .map(|_| LayerVars {
            phi_q: next(),
            phi_k: next(),
            heads: (0..config.n_heads)
                .map(|_| HeadVars { w_q: next(), w_k: next(), w_v: next() })
                .collect(),
            w_o: next(),
            ffn_w1: next(),
            ffn_b1: next(),
            ffn_w2: next(),
            ffn_b2: next(),
            ln1_gain: next(),
            ln1_bias: next(),
            ln2_gain: next(),
            ln2_bias: next(),
        })
        .collect();
    let w_out = next();
    let b_out = next();
    assert!(it.next().is_none(), "var list longer than parameter list");
    ParamVars { e_in_p, e_v_sign, e_v_abs, e_q_p, layers, w_out, b_out, ordered: vars.to_vec() }
}

/// Output of a batched forward pass over one code configuration.
pub struct ForwardOutput {
    /// Row-stochastic (batch * n_max) x 2 soft bit estimates.
    pub probs: Var,
    pub n_pad: usize,
    pub batch: usize,
}

impl ForwardOutput {
    /// Stacked-row index of message position `a` (0-based input index) for
    /// batch element `s`.
    pub fn message_row(&self, n_max: usize, s: usize, a: usize) -> usize {
        s * n_max + self.n_pad + a
    }
}

/// Runs the network over a batch of received vectors that share one code
/// configuration. Because Q and K never read the layer input, the attention
/// weights are computed once per (layer, head) and shared across the batch;
/// only the Value path is per-sample.
pub fn forward_batch(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &LatConfig,
    code: &PolarCode,
    ys: &[Vec<f64>],
) -> Result<ForwardOutput> {
    config.validate()?;
    if ys.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    for y in ys {
        if y.len() != code.block_len {
            return Err(Error::Argument(format!(
                "received length {} != N = {}",
                y.len(),
                code.block_len
            )));
        }
    }
    let n_max = config.n_max;
    let batch = ys.len();
    let u_f = build_u_f(code);
    let padded: Vec<PaddedInput> = ys
        .iter()
        .map(|y| front_pad(&u_f, y, n_max))
        .collect::<Result<_>>()?;
    let n_pad = padded[0].n_pad;
    let u_p = padded[0].u_p.clone();
    let y_ps: Vec<Vec<f64>> = padded.into_iter().map(|p| p.y_p).collect();

    let mask = Rc::new(build_mask(code, n_max)?.to_softmax_mask());

    // Shared (per-code) embeddings and the per-sample Value embedding.
    let u_f_emb = input_embed(tape, &u_p, vars.e_in_p);
    let q_f = query_embed(tape, &u_p, vars.e_q_p);
    let v_y = embed::value_embed_batch(tape, &y_ps, vars.e_v_sign, vars.e_v_abs);

    let scale = config.attn_scale();
    let mut v_in = tape.tile_rows(u_f_emb, batch);
    for layer in &vars.layers {
        let attn = latent_attention_batch(tape, layer, q_f, v_y, u_f_emb, batch, scale, &mask)?;
        let res1 = tape.add(v_in, attn);
        let a = tape.layer_norm(res1, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS);
        let h1 = tape.matmul(a, layer.ffn_w1);
        let h1b = tape.add_row_broadcast(h1, layer.ffn_b1);
        let hidden = tape.mish(h1b);
        let h2 = tape.matmul(hidden, layer.ffn_w2);
        let ffn = tape.add_row_broadcast(h2, layer.ffn_b2);
        let res2 = tape.add(a, ffn);
        v_in = tape.layer_norm(res2, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS);
    }
    let logits = tape.matmul(v_in, vars.w_out);
    let logits = tape.add_row_broadcast(logits, vars.b_out);
    let probs = tape.row_softmax(logits);
    Ok(ForwardOutput { probs, n_pad, batch })
}

/// One latent-attention sublayer over the whole batch. The Value matrix is the
/// concatenation [V_y; U^f]; its two column groups are contracted separately
/// so the U^f half (shared by the batch) is computed once.
#[allow(clippy::too_many_arguments)]
fn latent_attention_batch(
    tape: &mut Tape,
    layer: &LayerVars,
    q_f: Var,
    v_y: Var,
    u_f_emb: Var,
    batch: usize,
    scale: Real,
    mask: &Rc<crate::tensor::SoftmaxMask>,
) -> Result<Var> {
    let n_max = tape.value(q_f).rows;
    let q = tape.add(q_f, layer.phi_q);
    let k = layer.phi_k;
    let mut heads = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let qh = tape.matmul(q, head.w_q);
        let kh = tape.matmul(k, head.w_k);
        let scores = tape.matmul_nt(qh, kh);
        let scaled = tape.scale(scores, scale);
        let weights = tape.masked_row_softmax(scaled, Rc::clone(mask))?;
        let w_obs = tape.slice_cols(weights, 0, n_max);
        let w_prior = tape.slice_cols(weights, n_max, n_max);
        let vy_proj = tape.matmul(v_y, head.w_v);
        let uf_proj = tape.matmul(u_f_emb, head.w_v);
        let h_obs = tape.shared_block_matmul(w_obs, vy_proj);
        let h_prior_one = tape.matmul(w_prior, uf_proj);
        let h_prior = tape.tile_rows(h_prior_one, batch);
        heads.push(tape.add(h_obs, h_prior));
    }
    let concat = tape.concat_cols(&heads);
    Ok(tape.matmul(concat, layer.w_o))
}

/// The post-softmax attention weight matrix (n_max x 2 n_max) of one
/// (layer, head) pair for a code configuration. Weights depend only on the
/// code and the parameters, never on the received vector.
pub fn attention_weights(
    params: &LatParams,
    config: &LatConfig,
    code: &PolarCode,
    layer_idx: usize,
    head_idx: usize,
) -> Result<Tensor> {
    config.validate()?;
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let u_f = build_u_f(code);
    let padded = front_pad(&u_f, &vec![0.0; code.block_len], config.n_max)?;
    let mask = Rc::new(build_mask(code, config.n_max)?.to_softmax_mask());
    let q_f = query_embed(&mut tape, &padded.u_p, vars.e_q_p);
    let layer = &vars.layers[layer_idx];
    let head = &layer.heads[head_idx];
    let q = tape.add(q_f, layer.phi_q);
    let qh = tape.matmul(q, head.w_q);
    let kh = tape.matmul(layer.phi_k, head.w_k);
    let scores = tape.matmul_nt(qh, kh);
    let scaled = tape.scale(scores, config.attn_scale());
    let weights = tape.masked_row_softmax(scaled, mask)?;
    Ok(tape.value(weights).clone())
}

/// Single-sample forward pass; returns the n_max x 2 soft output.
pub fn forward(
    params: &LatParams,
    config: &LatConfig,
    code: &PolarCode,
    y: &[f64],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let out = forward_batch(&mut tape, &vars, config, code, &[y.to_vec()])?;
    Ok(tape.value(out.probs).clone())
}

/// Positional hard decision over the message rows of a single-sample soft
/// output: argmax of the two class probabilities, ties to class 0.
pub fn hard_decision(probs: &Tensor, code: &PolarCode, n_max: usize) -> Vec<u8> {
    let n_pad = n_max - code.block_len;
    code.message_set
        .iter()
        .map(|&a| {
            let row = n_pad + a;
            u8::from(probs.get(row, 1) > probs.get(row, 0))
        })
        .collect()
}

/// Batched inference: hard decisions for every received vector.
pub fn decode_batch(
    params: &LatParams,
    config: &LatConfig,
    code: &PolarCode,
    ys: &[Vec<f64>],
) -> Result<Vec<Vec<u8>>> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let out = forward_batch(&mut tape, &vars, config, code, ys)?;
    let probs = tape.value(out.probs);
    let n_max = config.n_max;
    Ok((0..out.batch)
        .map(|s| {
            code.message_set
                .iter()
                .map(|&a| {
                    let row = out.message_row(n_max, s, a);
                    u8::from(probs.get(row, 1) > probs.get(row, 0))
                })
                .collect()
        })
        .collect())
}
