//! Entropy-aware importance sampling and dynamic label smoothing.

use crate::error::Result;
use crate::polar::{bpsk, ebn0_to_sigma2, encode, ChannelSample, PolarCode};
use crate::tensor::{Real, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    GroundTruth,
    ReferenceDecoder,
}

/// One training sample with its importance weight and current label.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub code: Arc<PolarCode>,
    pub sample: ChannelSample,
    pub weight: f64,
    pub label_source: LabelSource,
    pub label: Vec<u8>,
}

/// w = 1 - (1/N) ln p_g(n) for Gaussian density p_g at variance sigma^2.
/// Closed form: 1 + (1/2) ln(2 pi sigma^2) + ||n||^2 / (2 N sigma^2).
pub fn importance_weight(noise: &[f64], sigma2: f64) -> f64 {
    let n = noise.len() as f64;
    let sq: f64 = noise.iter().map(|v| v * v).sum();
    let log_pg = -(n / 2.0) * (2.0 * std::f64::consts::PI * sigma2).ln() - sq / (2.0 * sigma2);
    1.0 - log_pg / n
}

/// Noise sampling scheme for training batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseScheme {
    /// Uniform over the 3-sigma cube with the entropy-aware weight attached.
    ImportanceUniform,
    /// Plain AWGN with unit weight (the ablation arm).
    Gaussian,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub ebn0_min_db: f64,
    pub ebn0_max_db: f64,
    /// Integer-grid Eb/N0 draws by default; continuous when set.
    pub continuous_ebn0: bool,
    pub scheme: NoiseScheme,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            ebn0_min_db: 1.0,
            ebn0_max_db: 15.0,
            continuous_ebn0: false,
            scheme: NoiseScheme::ImportanceUniform,
        }
    }
}

/// Draws one training sample: uniform message, Eb/N0 from the configured grid,
/// then noise per the scheme.
pub fn sample_one<R: Rng>(
    code: &Arc<PolarCode>,
    opts: &SampleOptions,
    rng: &mut R,
) -> Result<WeightedSample> {
    let message: Vec<u8> = (0..code.k).map(|_| rng.gen_range(0..2u8)).collect();
    let u_vec = code.embed(&message)?;
    let codeword = encode(code, &message)?;
    let symbols = bpsk(&codeword);
    let ebn0_db = if opts.continuous_ebn0 {
        rng.gen_range(opts.ebn0_min_db..=opts.ebn0_max_db)
    } else {
        rng.gen_range(opts.ebn0_min_db.round() as i64..=opts.ebn0_max_db.round() as i64) as f64
    };
    let sigma2 = ebn0_to_sigma2(ebn0_db, code.rate())?;
    let sigma = sigma2.sqrt();
    let (noise, weight) = match opts.scheme {
        NoiseScheme::ImportanceUniform => {
            let noise: Vec<f64> =
                (0..code.block_len).map(|_| rng.gen_range(-3.0 * sigma..=3.0 * sigma)).collect();
            let w = importance_weight(&noise, sigma2);
            (noise, w)
        }
        NoiseScheme::Gaussian => {
            let normal = Normal::new(0.0, sigma).expect("positive sigma");
            let noise: Vec<f64> = (0..code.block_len).map(|_| normal.sample(rng)).collect();
            (noise, 1.0)
        }
    };
    let received: Vec<f64> = symbols.iter().zip(&noise).map(|(s, n)| s + n).collect();
    Ok(WeightedSample {
        code: Arc::clone(code),
        sample: ChannelSample {
            message: message.clone(),
            u_vec,
            codeword,
            symbols,
            received,
            noise,
            sigma2,
        },
        weight,
        label_source: LabelSource::GroundTruth,
        label: message,
    })
}

/// A fresh batch over a single code configuration.
pub fn sample_batch<R: Rng>(
    code: &Arc<PolarCode>,
    batch_size: usize,
    opts: &SampleOptions,
    rng: &mut R,
) -> Result<Vec<WeightedSample>> {
    (0..batch_size).map(|_| sample_one(code, opts, rng)).collect()
}

/// Smoothing intensity: eps = 0.1 tanh(w), always below 0.1.
pub fn smoothing_eps(weight: f64) -> f64 {
    0.1 * weight.tanh()
}

/// One-hot labels softened toward eps off-class mass; rows sum to 1 exactly.
pub fn smooth_labels(message: &[u8], weight: f64) -> Tensor {
    let eps = smoothing_eps(weight) as Real;
    let mut labels = Tensor::zeros(message.len(), 2);
    for (i, &bit) in message.iter().enumerate() {
        labels.set(i, bit as usize, 1.0 - eps);
        labels.set(i, 1 - bit as usize, eps);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::{construct, ConstructionMethod};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_closed_forms() {
        // n = 0, sigma^2 = 1: w = 1 + 0.5 ln(2 pi).
        let w = importance_weight(&[0.0, 0.0, 0.0], 1.0);
        assert!((w - 1.918938533204673).abs() < 1e-12, "{w}");
        // N = 1, sigma^2 = 1, n = 3: w = 1 + 0.5 ln(2 pi) + 4.5.
        let w = importance_weight(&[3.0], 1.0);
        assert!((w - 6.418938533204673).abs() < 1e-12, "{w}");
    }

    #[test]
    fn weight_matches_formula_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let n: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let sigma2: f64 = rng.gen_range(0.05..2.0);
            let w = importance_weight(&n, sigma2);
            let sq: f64 = n.iter().map(|v| v * v).sum();
            let closed = 1.0
                + 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
                + sq / (2.0 * n.len() as f64 * sigma2);
            assert!((w - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_stays_inside_three_sigma_and_is_uniform() {
        let code = Arc::new(construct(3, 4, 2.0, ConstructionMethod::Ga).unwrap());
        let opts = SampleOptions { ebn0_min_db: 4.0, ebn0_max_db: 4.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pooled: Vec<f64> = Vec::new();
        for _ in 0..12_500 {
            let s = sample_one(&code, &opts, &mut rng).unwrap();
            let bound = 3.0 * s.sample.sigma2.sqrt();
            for &n in &s.sample.noise {
                assert!(n.abs() <= bound + 1e-12);
                pooled.push(n / bound); // normalize to [-1, 1]
            }
        }
        // Kolmogorov-Smirnov against U(-1, 1) at alpha = 0.01.
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = pooled.len() as f64;
        let mut d_max: f64 = 0.0;
        for (i, &x) in pooled.iter().enumerate() {
            let cdf = (x + 1.0) / 2.0;
            let emp_hi = (i + 1) as f64 / n;
            let emp_lo = i as f64 / n;
            d_max = d_max.max((emp_hi - cdf).abs()).max((cdf - emp_lo).abs());
        }
        let critical = 1.628 / n.sqrt();
        assert!(d_max < critical, "KS statistic {d_max} >= {critical}");
    }

    #[test]
    fn eps_stays_below_multiplier() {
        assert_eq!(smoothing_eps(0.0), 0.0);
        assert!((smoothing_eps(1.9189) - 0.0957737).abs() < 1e-4);
        // 3-sigma-bounded noise keeps w below ~8, where tanh(w) < 1 holds in
        // f64 as well as on paper.
        for w in [0.1, 0.5, 1.0, 5.0, 8.0, 12.0] {
            let eps = smoothing_eps(w);
            assert!((0.0..0.1).contains(&eps), "w={w} eps={eps}");
        }
        // Far outside the sampling domain tanh saturates; eps never exceeds 0.1.
        assert!(smoothing_eps(1e9) <= 0.1);
    }

    #[test]
    fn smoothed_rows_sum_to_one() {
        let labels = smooth_labels(&[0, 1, 1, 0], 1.3);
        for r in 0..4 {
            let sum = labels.get(r, 0) + labels.get(r, 1);
            assert_eq!(sum, 1.0);
        }
        // w = 0 gives the exact one-hot encoding.
        let hard = smooth_labels(&[1], 0.0);
        assert_eq!(hard.data, vec![0.0, 1.0]);
    }
}
