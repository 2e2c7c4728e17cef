//! Dense GEMM kernels for the three product layouts the tape needs:
//!
//! - `matmul_nn`: C += A B          (A: m x k, B: k x n)
//! - `matmul_nt`: C += A B^T        (A: m x n, B: k x n, C: m x k)
//! - `matmul_tn`: C += A^T B        (A: m x k, B: m x n, C: k x n)
//!
//! The f32 build dispatches to AVX2+FMA register-blocked kernels when the CPU
//! supports them, with B repacked into contiguous 32-column panels so the
//! inner loops stream packed memory. Large products split across threads by
//! disjoint output-row ranges, which keeps results bitwise identical for any
//! thread count. Everything falls back to portable loops otherwise (and always
//! in the f64 test build). All kernels accumulate into C.

use super::Real;
use rayon::prelude::*;

/// Below this many multiply-accumulates a product stays single-threaded.
const PAR_MIN_MACS: usize = 4_000_000;

#[cfg(all(target_arch = "x86_64", not(feature = "f64")))]
fn use_avx2() -> bool {
    use std::sync::OnceLock;
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    })
}

pub fn matmul_nn(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    #[cfg(all(target_arch = "x86_64", not(feature = "f64")))]
    if use_avx2() && n >= 32 {
        let pack = avx2::pack_panels(b, k, n);
        let rows_per = par_rows(m, m * k * n);
        c.par_chunks_mut(rows_per * n)
            .zip(a.par_chunks(rows_per * k))
            .for_each(|(c_rows, a_rows)| unsafe {
                avx2::nn_avx2(c_rows, a_rows, b, &pack, a_rows.len() / k, k, n);
            });
        return;
    }
    nn_portable(c, a, b, m, k, n);
}

pub fn matmul_nt(c: &mut [Real], a: &[Real], b: &[Real], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    #[cfg(all(target_arch = "x86_64", not(feature = "f64")))]
    if use_avx2() && n >= 32 {
        let rows_per = par_rows(m, m * k * n);
        c.par_chunks_mut(rows_per * k)
            .zip(a.par_chunks(rows_per * n))
            .for_each(|(c_rows, a_rows)| unsafe {
                avx2::nt_avx2(c_rows, a_rows, b, a_rows.len() / n, n, k);
            });
        return;
    }
    nt_portable(c, a, b, m, n, k);
}

pub fn matmul_tn(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    #[cfg(all(target_arch = "x86_64", not(feature = "f64")))]
    if use_avx2() && n >= 32 {
        // Split by output rows (columns of A); every thread streams all of B.
        let rows_per = par_rows(k, m * k * n);
        let chunks: Vec<(usize, &mut [f32])> = {
            let mut out = Vec::new();
            let mut rest = c;
            let mut p0 = 0;
            while p0 < k {
                let take = rows_per.min(k - p0);
                let (head, tail) = rest.split_at_mut(take * n);
                out.push((p0, head));
                rest = tail;
                p0 += take;
            }
            out
        };
        chunks.into_par_iter().for_each(|(p0, c_rows)| unsafe {
            avx2::tn_avx2(c_rows, a, b, m, k, n, p0, c_rows.len() / n);
        });
        return;
    }
    tn_portable(c, a, b, m, k, n);
}

/// Output rows per thread chunk: whole output if the product is small.
fn par_rows(rows: usize, macs: usize) -> usize {
    if macs < PAR_MIN_MACS || rows < 2 {
        return rows.max(1);
    }
    let threads = rayon::current_num_threads().max(1);
    rows.div_ceil(4 * threads).max(1)
}

fn nn_portable(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

fn nt_portable(c: &mut [Real], a: &[Real], b: &[Real], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: Real = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

fn tn_portable(c: &mut [Real], a: &[Real], b: &[Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(all(target_arch = "x86_64", not(feature = "f64")))]
mod avx2 {
    use std::arch::x86_64::*;

    /// Repacks B (k x n row-major) into contiguous 32-column panels:
    /// panel q holds rows 0..k of columns 32q..32q+32. The column tail
    /// (n % 32) is handled separately by the kernels.
    pub fn pack_panels(b: &[f32], k: usize, n: usize) -> Vec<f32> {
        let nb = n - n % 32;
        let mut pack = vec![0.0f32; k * nb];
        let panels = nb / 32;
        for q in 0..panels {
            let jb = q * 32;
            let base = q * k * 32;
            for p in 0..k {
                let src = &b[p * n + jb..p * n + jb + 32];
                pack[base + p * 32..base + p * 32 + 32].copy_from_slice(src);
            }
        }
        pack
    }

    /// C rows += A rows . B using the packed panels (plus the column tail
    /// straight from `b`).
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn nn_avx2(
        c: &mut [f32],
        a: &[f32],
        b: &[f32],
        pack: &[f32],
        m: usize,
        k: usize,
        n: usize,
    ) {
        let nb = n - n % 32;
        let panels = nb / 32;
        for q in 0..panels {
            let base = q * k * 32;
            for i in 0..m {
                let mut acc0 = _mm256_setzero_ps();
                let mut acc1 = _mm256_setzero_ps();
                let mut acc2 = _mm256_setzero_ps();
                let mut acc3 = _mm256_setzero_ps();
                let a_row = a.as_ptr().add(i * k);
                let mut bp = pack.as_ptr().add(base);
                for p in 0..k {
                    let av = _mm256_set1_ps(*a_row.add(p));
                    acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), acc0);
                    acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(8)), acc1);
                    acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(16)), acc2);
                    acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(24)), acc3);
                    bp = bp.add(32);
                }
                let cp = c.as_mut_ptr().add(i * n + q * 32);
                _mm256_storeu_ps(cp, _mm256_add_ps(_mm256_loadu_ps(cp), acc0));
                _mm256_storeu_ps(cp.add(8), _mm256_add_ps(_mm256_loadu_ps(cp.add(8)), acc1));
                _mm256_storeu_ps(cp.add(16), _mm256_add_ps(_mm256_loadu_ps(cp.add(16)), acc2));
                _mm256_storeu_ps(cp.add(24), _mm256_add_ps(_mm256_loadu_ps(cp.add(24)), acc3));
            }
        }
        if nb < n {
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    for j in nb..n {
                        c[i * n + j] += av * b[p * n + j];
                    }
                }
            }
        }
    }

    /// C rows += A rows . B^T: dot products along contiguous rows, tiled over
    /// 8 B-rows so they stay cached across the A rows.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn nt_avx2(c: &mut [f32], a: &[f32], b: &[f32], m: usize, n: usize, k: usize) {
        let nb = n - n % 32;
        for pt in (0..k).step_by(8) {
            let p_end = (pt + 8).min(k);
            for i in 0..m {
                let a_row = a.as_ptr().add(i * n);
                for p in pt..p_end {
                    let b_row = b.as_ptr().add(p * n);
                    let mut acc0 = _mm256_setzero_ps();
                    let mut acc1 = _mm256_setzero_ps();
                    let mut acc2 = _mm256_setzero_ps();
                    let mut acc3 = _mm256_setzero_ps();
                    let mut j = 0;
                    while j < nb {
                        acc0 = _mm256_fmadd_ps(
                            _mm256_loadu_ps(a_row.add(j)),
                            _mm256_loadu_ps(b_row.add(j)),
                            acc0,
                        );
                        acc1 = _mm256_fmadd_ps(
                            _mm256_loadu_ps(a_row.add(j + 8)),
                            _mm256_loadu_ps(b_row.add(j + 8)),
                            acc1,
                        );
                        acc2 = _mm256_fmadd_ps(
                            _mm256_loadu_ps(a_row.add(j + 16)),
                            _mm256_loadu_ps(b_row.add(j + 16)),
                            acc2,
                        );
                        acc3 = _mm256_fmadd_ps(
                            _mm256_loadu_ps(a_row.add(j + 24)),
                            _mm256_loadu_ps(b_row.add(j + 24)),
                            acc3,
                        );
                        j += 32;
                    }
                    let sum = _mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3));
                    let mut dot = hsum(sum);
                    for t in nb..n {
                        dot += *a_row.add(t) * *b_row.add(t);
                    }
                    c[i * k + p] += dot;
                }
            }
        }
    }

    /// C rows p0..p0+rows of A^T B (A: m x k, B: m x n).
    #[target_feature(enable = "avx2", enable = "fma")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn tn_avx2(
        c: &mut [f32],
        a: &[f32],
        b: &[f32],
        m: usize,
        k: usize,
        n: usize,
        p0: usize,
        rows: usize,
    ) {
        let nb = n - n % 32;
        for jb in (0..nb).step_by(32) {
            for local_p in 0..rows {
                let p = p0 + local_p;
                let mut acc0 = _mm256_setzero_ps();
                let mut acc1 = _mm256_setzero_ps();
                let mut acc2 = _mm256_setzero_ps();
                let mut acc3 = _mm256_setzero_ps();
                for i in 0..m {
                    let av = _mm256_set1_ps(a[i * k + p]);
                    let bp = b.as_ptr().add(i * n + jb);
                    acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), acc0);
                    acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(8)), acc1);
                    acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(16)), acc2);
                    acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(24)), acc3);
                }
                let cp = c.as_mut_ptr().add(local_p * n + jb);
                _mm256_storeu_ps(cp, _mm256_add_ps(_mm256_loadu_ps(cp), acc0));
                _mm256_storeu_ps(cp.add(8), _mm256_add_ps(_mm256_loadu_ps(cp.add(8)), acc1));
                _mm256_storeu_ps(cp.add(16), _mm256_add_ps(_mm256_loadu_ps(cp.add(16)), acc2));
                _mm256_storeu_ps(cp.add(24), _mm256_add_ps(_mm256_loadu_ps(cp.add(24)), acc3));
            }
        }
        if nb < n {
            for i in 0..m {
                for local_p in 0..rows {
                    let av = a[i * k + p0 + local_p];
                    for j in nb..n {
                        c[local_p * n + j] += av * b[i * n + j];
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx2")]
    unsafe fn hsum(v: __m256) -> f32 {
        let hi = _mm256_extractf128_ps(v, 1);
        let lo = _mm256_castps256_ps128(v);
        let s = _mm_add_ps(hi, lo);
        let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
        let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
        _mm_cvtss_f32(s)
    }
}
