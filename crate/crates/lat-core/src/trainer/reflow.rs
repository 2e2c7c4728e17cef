//! Experience reflow: misclassified low-confidence samples are retained in a
//! bounded buffer and relabeled by a reference decoder.

use super::sample::{LabelSource, WeightedSample};
use crate::error::Result;
use crate::polar::{channel_llr, ml_decode, scl_decode, PolarCode};
use crate::tensor::Tensor;
use std::collections::VecDeque;

/// ML relabeling is used up to this message length; SCL(4) beyond it.
const REFERENCE_ML_MAX_K: usize = 12;
const REFERENCE_SCL_LIST: usize = 4;

/// Bounded FIFO of retained boundary-case samples.
#[derive(Debug, Default)]
pub struct ExperienceBuffer {
    entries: VecDeque<WeightedSample>,
    capacity: usize,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { entries: VecDeque::with_capacity(capacity.min(1024)), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightedSample> {
        self.entries.iter()
    }

    pub fn drain(&mut self) -> Vec<WeightedSample> {
        self.entries.drain(..).collect()
    }

    /// Appends a retained sample, evicting the oldest beyond capacity.
    pub fn push(&mut self, sample: WeightedSample) {
        self.entries.push_back(sample);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }
}

/// Retention predicate: the block decision is wrong and at least one erring
/// bit has true-class confidence below the boundary threshold p_b.
pub fn should_retain(probs_msg: &Tensor, label: &[u8], decision: &[u8], p_b: f64) -> bool {
    if decision == label {
        return false;
    }
    label.iter().zip(decision).enumerate().any(|(i, (&m, &d))| {
        d != m && (probs_msg.get(i, m as usize) as f64) < p_b
    })
}

/// Reference label m*: ML when the codebook is enumerable, SCL(4) otherwise.
pub fn reference_label(code: &PolarCode, received: &[f64], sigma2: f64) -> Result<Vec<u8>> {
    if code.k <= REFERENCE_ML_MAX_K {
        ml_decode(code, received)
    } else {
        let llr = channel_llr(received, sigma2);
        scl_decode(code, &llr, REFERENCE_SCL_LIST)
    }
}

/// Relabels a retained sample with the reference decoder output (idempotent:
/// already-relabeled samples are left as they are).
pub fn relabel(sample: &mut WeightedSample) -> Result<()> {
    if sample.label_source == LabelSource::ReferenceDecoder {
        return Ok(());
    }
    sample.label = reference_label(&sample.code, &sample.sample.received, sample.sample.sigma2)?;
    sample.label_source = LabelSource::ReferenceDecoder;
    Ok(())
}
