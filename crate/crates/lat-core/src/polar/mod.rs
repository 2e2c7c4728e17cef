//! Classical polar coding: construction, encoding, channel simulation, and the
//! SC / SCL / ML reference decoders.
//!
//! All bit indices are 0-based internally. The generator is the n-th Kronecker
//! power of the 2x2 kernel F = [[1,0],[1,1]]; the reverse-shuffle permutation is
//! omitted throughout, so subchannel i of the recursion maps to input position i.

mod channel;
mod decode;

pub use channel::{awgn, bpsk, channel_llr, ebn0_to_sigma2, ChannelSample, LLR_CLAMP};
pub use decode::{f_fn, g_fn, ml_decode, sc_decode, scl_decode};

use crate::error::{Error, Result};

/// Subchannel reliability estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConstructionMethod {
    /// Gaussian approximation of mean LLR evolution (AWGN).
    Ga,
    /// Bhattacharyya parameter evolution.
    Bhattacharyya,
}

impl std::str::FromStr for ConstructionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(Self::Ga),
            "bhattacharyya" | "bh" | "bec" => Ok(Self::Bhattacharyya),
            other => Err(Error::Argument(format!(
                "unknown construction method '{other}' (expected 'ga' or 'bhattacharyya')"
            ))),
        }
    }
}

/// Per-subchannel reliability scores. Higher metric = more reliable.
#[derive(Debug, Clone)]
pub struct Reliability {
    pub metric: Vec<f64>,
    pub method: ConstructionMethod,
}

impl Reliability {
    /// Indices of the `k` most reliable subchannels, sorted ascending.
    /// Ties prefer the higher index (the more deeply polarized channel).
    pub fn best(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.metric.len()).collect();
        order.sort_by(|&a, &b| {
            self.metric[b]
                .partial_cmp(&self.metric[a])
                .unwrap()
                .then(b.cmp(&a))
        });
        let mut best: Vec<usize> = order[..k].to_vec();
        best.sort_unstable();
        best
    }
}

/// A polar code configuration: length, dimension, and the frozen index set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarCode {
    /// Code length exponent, N = 2^n.
    pub n: usize,
    /// Code length in bits.
    pub block_len: usize,
    /// Message length in bits.
    pub k: usize,
    /// Frozen positions A_k^c, sorted ascending (0-based).
    pub frozen_set: Vec<usize>,
    /// Message positions A_k, sorted ascending (0-based).
    pub message_set: Vec<usize>,
    /// Frozen bit values aligned with `frozen_set`. All zero by default.
    pub frozen_values: Vec<u8>,
}

impl PolarCode {
    /// Builds a code directly from a message index set.
    pub fn from_message_set(n: usize, message_set: Vec<usize>) -> Result<Self> {
        let block_len = 1usize << n;
        let k = message_set.len();
        if n < 1 {
            return Err(Error::Config("code exponent n must be >= 1".into()));
        }
        if k < 1 || k > block_len {
            return Err(Error::Config(format!(
                "invalid (n, k) = ({n}, {k}): need 1 <= k <= {block_len}"
            )));
        }
        let mut message_set = message_set;
        message_set.sort_unstable();
        message_set.dedup();
        if message_set.len() != k || message_set.iter().any(|&i| i >= block_len) {
            return Err(Error::Config("message set indices must be distinct and < N".into()));
        }
        let in_message: Vec<bool> = {
            let mut v = vec![false; block_len];
            for &i in &message_set {
                v[i] = true;
            }
            v
        };
        let frozen_set: Vec<usize> = (0..block_len).filter(|&i| !in_message[i]).collect();
        let frozen_values = vec![0u8; frozen_set.len()];
        Ok(Self { n, block_len, k, frozen_set, message_set, frozen_values })
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.block_len as f64
    }

    pub fn is_frozen(&self, idx: usize) -> bool {
        self.frozen_set.binary_search(&idx).is_ok()
    }

    /// Frozen value at input position `idx` (must be frozen).
    pub fn frozen_value(&self, idx: usize) -> u8 {
        let slot = self.frozen_set.binary_search(&idx).expect("index not frozen");
        self.frozen_values[slot]
    }

    /// Embeds a k-bit message into the N-bit input vector u.
    pub fn embed(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.k {
            return Err(Error::Argument(format!(
                "message length {} != k = {}",
                message.len(),
                self.k
            )));
        }
        let mut u = vec![0u8; self.block_len];
        for (&pos, &bit) in self.message_set.iter().zip(message) {
            u[pos] = bit & 1;
        }
        for (&pos, &bit) in self.frozen_set.iter().zip(&self.frozen_values) {
            u[pos] = bit & 1;
        }
        Ok(u)
    }

    /// Extracts the message bits from a full input vector u.
    pub fn extract(&self, u: &[u8]) -> Vec<u8> {
        self.message_set.iter().map(|&i| u[i]).collect()
    }
}

/// Constructs a polar code: the k most reliable subchannels under `method`
/// at the given design Eb/N0 become message positions.
pub fn construct(
    n: usize,
    k: usize,
    design_ebn0_db: f64,
    method: ConstructionMethod,
) -> Result<PolarCode> {
    if n < 1 {
        return Err(Error::Config("code exponent n must be >= 1".into()));
    }
    let block_len = 1usize << n;
    if k < 1 || k > block_len {
        return Err(Error::Config(format!(
            "invalid (n, k) = ({n}, {k}): need 1 <= k <= {block_len}"
        )));
    }
    let rate = k as f64 / block_len as f64;
    let sigma2 = ebn0_to_sigma2(design_ebn0_db, rate)?;
    let rel = reliability(n, sigma2, method);
    PolarCode::from_message_set(n, rel.best(k))
}

/// Reliability of every subchannel at the given channel noise variance.
pub fn reliability(n: usize, sigma2: f64, method: ConstructionMethod) -> Reliability {
    let metric = match method {
        ConstructionMethod::Ga => ga_mean_llrs(n, 2.0 / sigma2),
        ConstructionMethod::Bhattacharyya => {
            // Z for unit-energy BPSK over AWGN.
            let z0 = (-1.0 / (2.0 * sigma2)).exp();
            bhattacharyya_params(n, z0).into_iter().map(|z| -z).collect()
        }
    };
    Reliability { metric, method }
}

/// Bhattacharyya parameter of every subchannel, starting from a root
/// parameter `z0` (e.g. the erasure probability of a BEC).
///
/// Recursion per polarization stage: Z- = 2Z - Z^2, Z+ = Z^2.
pub fn bhattacharyya_params(n: usize, z0: f64) -> Vec<f64> {
    let mut z = vec![z0];
    for _ in 0..n {
        let mut next = Vec::with_capacity(z.len() * 2);
        for &zi in &z {
            next.push(2.0 * zi - zi * zi);
            next.push(zi * zi);
        }
        z = next;
    }
    z
}

/// Mean LLR of every subchannel under the Gaussian approximation, starting
/// from root mean `m0` (= 2/sigma^2 for unit-energy BPSK).
///
/// The minus branch evolves through phi: m- = phi_inv(1 - (1 - phi(m))^2);
/// the plus branch doubles: m+ = 2m.
pub fn ga_mean_llrs(n: usize, m0: f64) -> Vec<f64> {
    let mut m = vec![m0];
    for _ in 0..n {
        let mut next = Vec::with_capacity(m.len() * 2);
        for &mi in &m {
            let p = phi(mi);
            next.push(phi_inv(1.0 - (1.0 - p) * (1.0 - p)));
            next.push(2.0 * mi);
        }
        m = next;
    }
    m
}

/// Two-segment approximation of the GA phi function.
fn phi(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        1.0
    } else if x < 10.0 {
        (-0.4527 * x.powf(0.86) + 0.0218).exp()
    } else {
        (std::f64::consts::PI / x).sqrt() * (-x / 4.0).exp() * (1.0 - 10.0 / (7.0 * x))
    }
}

/// Inverse of `phi` by bisection. phi is strictly decreasing on (0, inf).
fn phi_inv(y: f64) -> f64 {
    if y >= 1.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while phi(hi) > y && hi < 1e9 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The n-th Kronecker power of the polarization kernel F = [[1,0],[1,1]],
/// as dense rows of 0/1 bytes.
pub fn kronecker_generator(n: usize) -> Vec<Vec<u8>> {
    assert!(n >= 1, "kronecker_generator requires n >= 1");
    let f = [[1u8, 0], [1, 1]];
    let mut g = vec![vec![1u8, 0], vec![1, 1]];
    for _ in 1..n {
        let half = g.len();
        let size = half * 2;
        let mut next = vec![vec![0u8; size]; size];
        for i in 0..size {
            for j in 0..size {
                next[i][j] = f[i / half][j / half] * g[i % half][j % half];
            }
        }
        g = next;
    }
    g
}

/// In-place polar transform: u <- u F^{(x)n} over GF(2).
pub fn polar_transform(bits: &mut [u8]) {
    let len = bits.len();
    debug_assert!(len.is_power_of_two());
    if len <= 1 {
        return;
    }
    let (left, right) = bits.split_at_mut(len / 2);
    for (l, r) in left.iter_mut().zip(right.iter()) {
        *l ^= r;
    }
    polar_transform(left);
    polar_transform(right);
}

/// Encodes a k-bit message: embeds it with the frozen values and applies the
/// polar transform.
pub fn encode(code: &PolarCode, message: &[u8]) -> Result<Vec<u8>> {
    let mut u = code.embed(message)?;
    polar_transform(&mut u);
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bhattacharyya_bec_half() {
        let z = bhattacharyya_params(2, 0.5);
        let expected = [0.9375, 0.5625, 0.4375, 0.0625];
        for (got, want) in z.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{z:?}");
        }
    }

    #[test]
    fn construct_bec_message_set() {
        // Design point chosen so exp(-1/(2 sigma^2)) = 0.5.
        let rel = Reliability {
            metric: bhattacharyya_params(2, 0.5).into_iter().map(|z| -z).collect(),
            method: ConstructionMethod::Bhattacharyya,
        };
        assert_eq!(rel.best(2), vec![2, 3]); // {3, 4} 1-based
    }

    #[test]
    fn construct_rate_one() {
        let code = construct(1, 2, 0.0, ConstructionMethod::Ga).unwrap();
        assert_eq!(code.message_set, vec![0, 1]);
        assert!(code.frozen_set.is_empty());
    }

    #[test]
    fn construct_rejects_bad_k() {
        assert!(construct(2, 0, 0.0, ConstructionMethod::Ga).is_err());
        assert!(construct(2, 5, 0.0, ConstructionMethod::Ga).is_err());
    }

    #[test]
    fn tie_break_prefers_higher_index() {
        let rel = Reliability {
            metric: vec![1.0, 1.0, 1.0, 1.0],
            method: ConstructionMethod::Bhattacharyya,
        };
        assert_eq!(rel.best(2), vec![2, 3]);
    }

    #[test]
    fn generator_small_cases() {
        assert_eq!(kronecker_generator(1), vec![vec![1, 0], vec![1, 1]]);
        let g2 = kronecker_generator(2);
        assert_eq!(
            g2,
            vec![
                vec![1, 0, 0, 0],
                vec![1, 1, 0, 0],
                vec![1, 0, 1, 0],
                vec![1, 1, 1, 1]
            ]
        );
    }

    #[test]
    fn generator_rows_match_encode_of_unit_vectors() {
        for n in 1..=4 {
            let g = kronecker_generator(n);
            let len = 1 << n;
            for i in 0..len {
                let mut u = vec![0u8; len];
                u[i] = 1;
                polar_transform(&mut u);
                assert_eq!(g[i], u, "n={n} row {i}");
            }
        }
    }

    #[test]
    fn generator_lower_triangular_unit_diagonal() {
        let g = kronecker_generator(4);
        for (i, row) in g.iter().enumerate() {
            assert_eq!(row[i], 1);
            for (j, &v) in row.iter().enumerate() {
                if j > i {
                    assert_eq!(v, 0, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn encode_known_vectors() {
        // N=2, u=(1,1) -> (0,1)
        let mut u = vec![1u8, 1];
        polar_transform(&mut u);
        assert_eq!(u, vec![0, 1]);
        // N=4, u=(0,0,0,1) -> all ones
        let mut u = vec![0u8, 0, 0, 1];
        polar_transform(&mut u);
        assert_eq!(u, vec![1, 1, 1, 1]);
        // N=4, u=(0,1,0,0) -> (1,1,0,0)
        let mut u = vec![0u8, 1, 0, 0];
        polar_transform(&mut u);
        assert_eq!(u, vec![1, 1, 0, 0]);
    }

    #[test]
    fn encode_checks_message_length() {
        let code = construct(2, 2, 0.0, ConstructionMethod::Bhattacharyya).unwrap();
        assert!(encode(&code, &[1]).is_err());
    }

    #[test]
    fn encode_is_linear_over_gf2() {
        let code = construct(3, 4, 2.0, ConstructionMethod::Ga).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m1: Vec<u8> = (0..code.k).map(|_| rng.gen_range(0..2)).collect();
            let m2: Vec<u8> = (0..code.k).map(|_| rng.gen_range(0..2)).collect();
            let msum: Vec<u8> = m1.iter().zip(&m2).map(|(a, b)| a ^ b).collect();
            let x1 = encode(&code, &m1).unwrap();
            let x2 = encode(&code, &m2).unwrap();
            let xsum = encode(&code, &msum).unwrap();
            let xor: Vec<u8> = x1.iter().zip(&x2).map(|(a, b)| a ^ b).collect();
            assert_eq!(xor, xsum);
        }
    }
}
