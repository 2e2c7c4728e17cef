//! Hybrid training loss: weighted KLD over the smoothed labels plus the
//! differentiable block-error surrogate.

use crate::model::PROB_FLOOR;
use crate::tensor::{Real, Tape, Tensor, Var};
use std::rc::Rc;

/// (w / 2N) sum_ij m_ls[i,j] ln(m_ls[i,j] / probs[i,j]) over the message rows.
/// `block_len` is the code length N from the paper's normalization.
pub fn kld_loss(tape: &mut Tape, probs_msg: Var, labels: &Tensor, weight: f64, block_len: usize) -> Var {
    assert_eq!(tape.value(probs_msg).rows, labels.rows, "label/prob row mismatch");
    // Split ln(p/q) = ln p - ln q; the label entropy term is constant.
    let entropy: f64 = labels
        .data
        .iter()
        .map(|&p| {
            let p = p as f64;
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    let lnq = tape.ln_clamped(probs_msg, PROB_FLOOR);
    let labels_const = tape.constant(labels.clone());
    let ce = tape.elementwise_mul(labels_const, lnq);
    let ce_sum = tape.sum_all(ce);
    let ent = tape.constant(Tensor::scalar(entropy as Real));
    let gap = tape.sub(ent, ce_sum);
    tape.scale(gap, (weight / (2.0 * block_len as f64)) as Real)
}

/// Differentiable block-error surrogate: 1 - prod_i p_true(i). Reduces to the
/// block-error indicator when the soft probabilities harden to {0, 1}.
pub fn bler_surrogate(tape: &mut Tape, probs_msg: Var, label: &[u8]) -> Var {
    assert_eq!(tape.value(probs_msg).rows, label.len());
    let cols: Vec<usize> = label.iter().map(|&b| b as usize).collect();
    let p_true = tape.row_gather(probs_msg, Rc::new(cols));
    let prod = tape.prod_all(p_true);
    let one = tape.constant(Tensor::scalar(1.0));
    tape.sub(one, prod)
}
