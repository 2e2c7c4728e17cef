//! Central finite-difference gradient oracle.
//!
//! Rebuilds the forward pass from scratch for every probe, so the check stays
//! independent of the tape's backward rules.

use super::{Real, Tape, Tensor, Var};

/// Result of probing one parameter entry.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub tensor_index: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Checks `d loss / d inputs[probes.tensor_index][probes.entry]` against a
/// five-point central-difference stencil (O(h^4) truncation). `build` must
/// construct the loss from leaves registered in the order of `inputs`.
///
/// The relative error divides by max(|analytic|, |numeric|, floor); the floor
/// absorbs the irreducible float-rounding noise of evaluating the loss, so
/// near-zero gradients are held to a tight absolute tolerance instead of an
/// impossible relative one.
pub fn finite_difference<F>(
    build: F,
    inputs: &[Tensor],
    probes: &[(usize, usize)],
    step: Real,
) -> Vec<ProbeResult>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data[0] as f64
    };

    // Analytic gradients from one backward pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    probes
        .iter()
        .map(|&(ti, entry)| {
            let analytic = grads
                .get(vars[ti])
                .map(|g| g.data[entry] as f64)
                .unwrap_or(0.0);
            let base = inputs[ti].data[entry];
            let h = step * (1.0 + base.abs());
            let eval_at = |offset: Real| {
                let mut shifted = inputs.to_vec();
                shifted[ti].data[entry] = base + offset;
                eval(&shifted)
            };
            let (f_m2, f_m1, f_p1, f_p2) =
                (eval_at(-2.0 * h), eval_at(-h), eval_at(h), eval_at(2.0 * h));
            let numeric = (f_m2 - 8.0 * f_m1 + 8.0 * f_p1 - f_p2) / (12.0 * h as f64);
            let rel_err = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(noise_floor());
            ProbeResult { tensor_index: ti, entry, analytic, numeric, rel_err }
        })
        .collect()
}

/// Default probe step for the active float width.
pub fn default_step() -> Real {
    #[cfg(feature = "f64")]
    {
        5e-5
    }
    #[cfg(not(feature = "f64"))]
    {
        2e-2
    }
}

/// Gradient magnitude below which the finite-difference estimate is dominated
/// by float-rounding noise of the loss evaluation (~eps_mach / step).
fn noise_floor() -> f64 {
    #[cfg(feature = "f64")]
    {
        5e-6
    }
    #[cfg(not(feature = "f64"))]
    {
        8e-3
    }
}
