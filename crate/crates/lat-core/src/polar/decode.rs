//! SC, SCL, and brute-force ML decoders over the polar code tree.

use super::{polar_transform, PolarCode};
use crate::error::{Error, Result};

/// Hard limit on ML enumeration: 2^20 codewords.
const ML_MAX_K: usize = 20;

/// Min-sum check-node combine: sign(a) sign(b) min(|a|, |b|).
pub fn f_fn(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.signum() * y.signum() * x.abs().min(y.abs()))
        .collect()
}

/// Variable-node combine given the left decision u: (1 - 2u) a + b.
pub fn g_fn(u: &[u8], a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(u.len(), a.len());
    u.iter()
        .zip(a.iter().zip(b))
        .map(|(&ui, (&x, &y))| (1.0 - 2.0 * f64::from(ui)) * x + y)
        .collect()
}

/// Successive cancellation decoding. Returns (message, full u estimate).
pub fn sc_decode(code: &PolarCode, llr: &[f64]) -> Result<(Vec<u8>, Vec<u8>)> {
    if llr.len() != code.block_len {
        return Err(Error::Argument(format!(
            "llr length {} != N = {}",
            llr.len(),
            code.block_len
        )));
    }
    let mut u_hat = vec![0u8; code.block_len];
    sc_node(code, llr, 0, &mut u_hat);
    Ok((code.extract(&u_hat), u_hat))
}

/// Recursive SC tree traversal. Fills leaf decisions into `u_hat` starting at
/// input offset `pos` and returns the node's bit value vector beta.
fn sc_node(code: &PolarCode, alpha: &[f64], pos: usize, u_hat: &mut [u8]) -> Vec<u8> {
    if alpha.len() == 1 {
        let bit = if code.is_frozen(pos) {
            code.frozen_value(pos)
        } else {
            u8::from(alpha[0] < 0.0)
        };
        u_hat[pos] = bit;
        return vec![bit];
    }
    let half = alpha.len() / 2;
    let (a, b) = alpha.split_at(half);
    let beta_left = sc_node(code, &f_fn(a, b), pos, u_hat);
    let beta_right = sc_node(code, &g_fn(&beta_left, a, b), pos + half, u_hat);
    let mut beta: Vec<u8> = beta_left.iter().zip(&beta_right).map(|(l, r)| l ^ r).collect();
    beta.extend_from_slice(&beta_right);
    beta
}

/// Leaf LLR alpha_t given the decisions for leaves 0..t within this subtree.
/// The left subtree's beta is recovered as the polar transform of its decisions.
fn leaf_llr(alpha: &[f64], prefix: &[u8], t: usize) -> f64 {
    if alpha.len() == 1 {
        return alpha[0];
    }
    let half = alpha.len() / 2;
    let (a, b) = alpha.split_at(half);
    if t < half {
        leaf_llr(&f_fn(a, b), prefix, t)
    } else {
        let mut beta_left = prefix[..half].to_vec();
        polar_transform(&mut beta_left);
        leaf_llr(&g_fn(&beta_left, a, b), &prefix[half..], t - half)
    }
}

#[derive(Clone)]
struct Path {
    u: Vec<u8>,
    metric: f64,
}

/// Successive cancellation list decoding with the cumulative LLR penalty
/// metric: a decision against the sign of its leaf LLR costs |llr|. The best
/// final metric wins. With list_size >= 2^k no path is ever pruned and the
/// decision coincides with ML (the full-path penalty telescopes to the sum of
/// |channel llr| over sign-contradicted codeword positions).
///
/// Leaf LLRs are recomputed from each path's decision prefix, which keeps the
/// implementation simple at O(N^2 log N) per path -- sized for the short-code
/// regime this workbench targets.
pub fn scl_decode(code: &PolarCode, llr: &[f64], list_size: usize) -> Result<Vec<u8>> {
    if list_size < 1 {
        return Err(Error::Argument("list size must be >= 1".into()));
    }
    if llr.len() != code.block_len {
        return Err(Error::Argument(format!(
            "llr length {} != N = {}",
            llr.len(),
            code.block_len
        )));
    }
    let mut paths = vec![Path { u: Vec::with_capacity(code.block_len), metric: 0.0 }];
    for t in 0..code.block_len {
        let mut next: Vec<Path> = Vec::with_capacity(paths.len() * 2);
        for path in &paths {
            let alpha = leaf_llr(llr, &path.u, t);
            if code.is_frozen(t) {
                let bit = code.frozen_value(t);
                let mut p = path.clone();
                p.u.push(bit);
                p.metric += penalty(alpha, bit);
                next.push(p);
            } else {
                for bit in [0u8, 1] {
                    let mut p = path.clone();
                    p.u.push(bit);
                    p.metric += penalty(alpha, bit);
                    next.push(p);
                }
            }
        }
        if next.len() > list_size {
            // Stable sort: on metric ties the bit-0 extension (pushed first)
            // survives, matching the SC hard decision at alpha = 0.
            next.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap());
            next.truncate(list_size);
        }
        paths = next;
    }
    let best = paths
        .iter()
        .min_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap())
        .expect("list is never empty");
    Ok(code.extract(&best.u))
}

#[inline]
fn penalty(alpha: f64, bit: u8) -> f64 {
    let hard = u8::from(alpha < 0.0);
    if hard == bit {
        0.0
    } else {
        alpha.abs()
    }
}

/// Brute-force maximum likelihood decoding: the message whose codeword
/// symbols minimize ||y - s||^2. Ties resolve to the smallest message read as
/// a big-endian unsigned integer.
pub fn ml_decode(code: &PolarCode, received: &[f64]) -> Result<Vec<u8>> {
    if code.k > ML_MAX_K {
        return Err(Error::Capability(format!(
            "ML enumeration guard: k = {} exceeds {ML_MAX_K}",
            code.k
        )));
    }
    if received.len() != code.block_len {
        return Err(Error::Argument(format!(
            "received length {} != N = {}",
            received.len(),
            code.block_len
        )));
    }
    let mut best_msg = 0u64;
    let mut best_dist = f64::INFINITY;
    let mut message = vec![0u8; code.k];
    for m in 0u64..(1u64 << code.k) {
        for (j, bit) in message.iter_mut().enumerate() {
            *bit = ((m >> (code.k - 1 - j)) & 1) as u8;
        }
        let x = super::encode(code, &message)?;
        let dist: f64 = received
            .iter()
            .zip(&x)
            .map(|(&y, &xi)| {
                let s = 1.0 - 2.0 * f64::from(xi);
                (y - s) * (y - s)
            })
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best_msg = m;
        }
    }
    Ok((0..code.k)
        .map(|j| ((best_msg >> (code.k - 1 - j)) & 1) as u8)
        .collect())
}
