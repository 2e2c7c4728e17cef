//! Frozen-prior vector, front-padding, and the three embedding layers.

use crate::error::{Error, Result};
use crate::polar::PolarCode;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Frozen-prior vector u^f: 0 at message positions, 2v - 1 at frozen
/// positions with frozen value v (so all-zero frozen bits map to -1).
pub fn build_u_f(code: &PolarCode) -> Vec<f64> {
    let mut u_f = vec![0.0; code.block_len];
    for (&pos, &v) in code.frozen_set.iter().zip(&code.frozen_values) {
        u_f[pos] = 2.0 * f64::from(v) - 1.0;
    }
    u_f
}

/// Front-padded network input: zeros prepended so the code occupies the last
/// N positions of the N_max-wide network.
#[derive(Debug, Clone)]
pub struct PaddedInput {
    pub u_p: Vec<f64>,
    pub y_p: Vec<f64>,
    pub n_pad: usize,
}

pub fn front_pad(u_f: &[f64], y: &[f64], n_max: usize) -> Result<PaddedInput> {
    if u_f.len() != y.len() {
        return Err(Error::Argument("u_f and y must have equal length".into()));
    }
    if u_f.len() > n_max {
        return Err(Error::Capability(format!(
            "code length {} exceeds network size {n_max}",
            u_f.len()
        )));
    }
    let n_pad = n_max - u_f.len();
    let mut u_p = vec![0.0; n_max];
    let mut y_p = vec![0.0; n_max];
    u_p[n_pad..].copy_from_slice(u_f);
    y_p[n_pad..].copy_from_slice(y);
    Ok(PaddedInput { u_p, y_p, n_pad })
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// U^f = diag(u_p) E_in: row i is u_p[i] times the i-th positional vector.
pub fn input_embed(tape: &mut Tape, u_p: &[f64], e_in_p: Var) -> Var {
    let n = u_p.len();
    let mut diag = Tensor::zeros(n, n);
    for (i, &v) in u_p.iter().enumerate() {
        diag.set(i, i, v as Real);
    }
    let d = tape.constant(diag);
    tape.matmul(d, e_in_p)
}

/// V_y row i = sign(y_p[i]) E_sign[i] + |y_p[i]| E_abs[i], with sign(0) = 0.
/// Batched: one row block of n_max per sample, stacked vertically.
pub fn value_embed_batch(
    tape: &mut Tape,
    y_ps: &[Vec<f64>],
    e_v_sign: Var,
    e_v_abs: Var,
) -> Var {
    let batch = y_ps.len();
    let n_max = y_ps[0].len();
    let d_m = tape.value(e_v_sign).cols;
    let mut signs = Tensor::zeros(batch * n_max, d_m);
    let mut mags = Tensor::zeros(batch * n_max, d_m);
    for (s, y_p) in y_ps.iter().enumerate() {
        for (i, &y) in y_p.iter().enumerate() {
            let row = s * n_max + i;
            let sgn = sign0(y) as Real;
            let mag = y.abs() as Real;
            signs.data[row * d_m..(row + 1) * d_m].fill(sgn);
            mags.data[row * d_m..(row + 1) * d_m].fill(mag);
        }
    }
    let sign_w = tape.constant(signs);
    let mag_w = tape.constant(mags);
    let sign_tab = tape.tile_rows(e_v_sign, batch);
    let abs_tab = tape.tile_rows(e_v_abs, batch);
    let sterm = tape.elementwise_mul(sign_w, sign_tab);
    let aterm = tape.elementwise_mul(mag_w, abs_tab);
    tape.add(sterm, aterm)
}

pub fn value_embed(tape: &mut Tape, y_p: &[f64], e_v_sign: Var, e_v_abs: Var) -> Var {
    value_embed_batch(tape, &[y_p.to_vec()], e_v_sign, e_v_abs)
}

/// Q^f row i = (1/N_max) sum_j u_p[j] E_Q[(i-1) N_max + j], expressed as a
/// single product with a sparse selection matrix of shape n_max x n_max^2.
pub fn query_embed(tape: &mut Tape, u_p: &[f64], e_q_p: Var) -> Var {
    let n_max = u_p.len();
    let mut sel = Tensor::zeros(n_max, n_max * n_max);
    let scale = 1.0 / n_max as f64;
    for i in 0..n_max {
        for (j, &v) in u_p.iter().enumerate() {
            if v != 0.0 {
                sel.set(i, i * n_max + j, (v * scale) as Real);
            }
        }
    }
    let sel = tape.constant(sel);
    tape.matmul(sel, e_q_p)
}
