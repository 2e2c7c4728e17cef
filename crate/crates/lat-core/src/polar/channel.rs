//! BPSK modulation, AWGN channel simulation, and channel LLRs.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Finite stand-in for an infinite LLR in the noiseless (sigma^2 = 0) channel.
pub const LLR_CLAMP: f64 = 1e9;

/// One simulated transmission: message through channel.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub message: Vec<u8>,
    pub u_vec: Vec<u8>,
    pub codeword: Vec<u8>,
    pub symbols: Vec<f64>,
    pub received: Vec<f64>,
    pub noise: Vec<f64>,
    pub sigma2: f64,
}

/// BPSK mapping s_i = 1 - 2 x_i.
pub fn bpsk(codeword: &[u8]) -> Vec<f64> {
    codeword.iter().map(|&x| 1.0 - 2.0 * f64::from(x & 1)).collect()
}

/// Draws i.i.d. Gaussian noise of variance `sigma2` and returns (noise, received).
pub fn awgn<R: Rng>(symbols: &[f64], sigma2: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(Error::Argument(format!("noise variance must be finite and >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok((vec![0.0; symbols.len()], symbols.to_vec()));
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("valid std dev");
    let noise: Vec<f64> = (0..symbols.len()).map(|_| normal.sample(rng)).collect();
    let received = symbols.iter().zip(&noise).map(|(s, n)| s + n).collect();
    Ok((noise, received))
}

/// Per-dimension noise variance for a given Eb/N0 (dB) at code rate R,
/// unit-energy BPSK convention: sigma^2 = 1 / (2 R 10^(EbN0/10)).
pub fn ebn0_to_sigma2(ebn0_db: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Argument(format!("rate must be in (0, 1], got {rate}")));
    }
    Ok(1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0)))
}

/// Channel LLRs alpha_i = 2 y_i / sigma^2. A zero variance selects sign-only
/// decoding: LLRs are clamped to +-`LLR_CLAMP` instead of propagating infinities.
pub fn channel_llr(received: &[f64], sigma2: f64) -> Vec<f64> {
    if sigma2 == 0.0 {
        received
            .iter()
            .map(|&y| {
                if y > 0.0 {
                    LLR_CLAMP
                } else if y < 0.0 {
                    -LLR_CLAMP
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        received.iter().map(|&y| 2.0 * y / sigma2).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bpsk_mapping() {
        assert_eq!(bpsk(&[0]), vec![1.0]);
        assert_eq!(bpsk(&[1]), vec![-1.0]);
        assert_eq!(bpsk(&[0, 1, 1, 0]), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn awgn_zero_variance_is_identity() {
        let s = vec![1.0, -1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (noise, received) = awgn(&s, 0.0, &mut rng).unwrap();
        assert_eq!(noise, vec![0.0; 3]);
        assert_eq!(received, s);
    }

    #[test]
    fn awgn_rejects_negative_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(awgn(&[1.0], -0.5, &mut rng).is_err());
    }

    #[test]
    fn awgn_is_reproducible_per_seed() {
        let s = vec![1.0; 64];
        let (n1, _) = awgn(&s, 0.7, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let (n2, _) = awgn(&s, 0.7, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn awgn_moments() {
        let s = vec![0.0; 1_000_000];
        let sigma2 = 0.8;
        let (noise, _) = awgn(&s, sigma2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let var = noise.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>() / noise.len() as f64;
        assert!(mean.abs() < 0.01 * sigma2, "mean {mean}");
        assert!((var - sigma2).abs() < 0.01 * sigma2, "var {var}");
    }

    #[test]
    fn ebn0_conversion_closed_forms() {
        assert!((ebn0_to_sigma2(0.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((ebn0_to_sigma2(10.0 * 2f64.log10(), 1.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((ebn0_to_sigma2(0.0, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(ebn0_to_sigma2(0.0, 0.0).is_err());
    }

    #[test]
    fn llr_closed_forms() {
        let llr = channel_llr(&[1.0, 0.0], 1.0);
        assert!((llr[0] - 2.0).abs() < 1e-12);
        assert_eq!(llr[1], 0.0);
        let llr = channel_llr(&[-0.5], 0.5);
        assert!((llr[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn llr_sign_mode() {
        let llr = channel_llr(&[0.3, -0.2, 0.0], 0.0);
        assert_eq!(llr, vec![LLR_CLAMP, -LLR_CLAMP, 0.0]);
    }
}
