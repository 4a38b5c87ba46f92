//! Dense kernels: matrix multiplication and Cholesky factorization with
//! triangular solves.
//!
//! Multiplication parallelizes over output rows above a flop threshold; each
//! row is produced by exactly one thread, so results are bit-identical
//! regardless of scheduling.

use rayon::prelude::*;

use crate::dtype::Real;
use crate::error::TensorError;
use crate::tensor::Tensor;

const PAR_FLOP_THRESHOLD: usize = 1 << 17;

/// C[m,n] = A[m,k] * B[k,n]
pub fn matmul_into<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row_job = |(i, crow): (usize, &mut [T])| {
        let arow = &a[i * k..(i + 1) * k];
        for x in crow.iter_mut() {
            *x = T::zero();
        }
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cx, &bx) in crow.iter_mut().zip(brow.iter()) {
                *cx = *cx + av * bx;
            }
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row_job);
    } else {
        c.chunks_mut(n).enumerate().for_each(row_job);
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T
pub fn matmul_tb_into<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row_job = |(i, crow): (usize, &mut [T])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cx) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc = acc + av * bv;
            }
            *cx = acc;
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row_job);
    } else {
        c.chunks_mut(n).enumerate().for_each(row_job);
    }
}

/// C[k,n] = A[m,k]^T * B[m,n]
pub fn matmul_ta_into<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for x in c.iter_mut() {
        *x = T::zero();
    }
    // Accumulate rank-1 updates row by row; sequential in p keeps it deterministic.
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cx, &bx) in crow.iter_mut().zip(brow.iter()) {
                *cx = *cx + av * bx;
            }
        }
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (m, k) = a.rows_cols()?;
    let (k2, n) = b.rows_cols()?;
    if k != k2 {
        return Err(TensorError::shape(
            "matmul",
            format!("inner extents disagree: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    matmul_into(a.data(), b.data(), out.data_mut(), m, k, n);
    Ok(out)
}

/// Jitter policy for Cholesky retries: `base_factor * trace(A)/n` added to the
/// diagonal on failure, doubling up to `max_doublings` times.
#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    pub base_factor: f64,
    pub max_doublings: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy { base_factor: 1e-8, max_doublings: 6 }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// with diagonal jitter retries per the policy. Returns the factor and the
/// jitter that was finally applied (0.0 when none was needed).
pub fn cholesky<T: Real>(
    a: &Tensor<T>,
    policy: JitterPolicy,
) -> Result<(Tensor<T>, f64), TensorError> {
    let (n, n2) = a.rows_cols()?;
    if n != n2 {
        return Err(TensorError::shape("cholesky", format!("matrix not square: {:?}", a.shape())));
    }
    let trace: f64 = (0..n).map(|i| a.data()[i * n + i].as_f64()).sum();
    let base = policy.base_factor * trace / n.max(1) as f64;

    let mut jitter = 0.0f64;
    for attempt in 0..=policy.max_doublings {
        match try_cholesky(a.data(), n, T::from_f64(jitter)) {
            Some(l) => {
                let t = Tensor::new(vec![n, n], l)?;
                return Ok((t, jitter));
            }
            None => {
                jitter = if attempt == 0 { base } else { jitter * 2.0 };
                if jitter <= 0.0 {
                    // trace can be 0 for the zero matrix; fall back to an absolute floor
                    jitter = 1e-12;
                }
            }
        }
    }
    Err(TensorError::linalg(
        "cholesky",
        format!("factorization failed after {} jitter doublings (n={})", policy.max_doublings, n),
    ))
}

fn try_cholesky<T: Real>(a: &[T], n: usize, jitter: T) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            if i == j {
                sum = sum + jitter;
            }
            for p in 0..j {
                sum = sum - l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if sum <= T::zero() || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L x = b for lower-triangular L (forward substitution).
pub fn solve_lower<T: Real>(l: &Tensor<T>, b: &[T]) -> Result<Vec<T>, TensorError> {
    let (n, n2) = l.rows_cols()?;
    if n != n2 || b.len() != n {
        return Err(TensorError::shape(
            "solve_lower",
            format!("L is {:?}, rhs has length {}", l.shape(), b.len()),
        ));
    }
    let ld = l.data();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut sum = x[i];
        for p in 0..i {
            sum = sum - ld[i * n + p] * x[p];
        }
        x[i] = sum / ld[i * n + i];
    }
    Ok(x)
}

/// Solve L^T x = b for lower-triangular L (back substitution).
pub fn solve_lower_transpose<T: Real>(l: &Tensor<T>, b: &[T]) -> Result<Vec<T>, TensorError> {
    let (n, n2) = l.rows_cols()?;
    if n != n2 || b.len() != n {
        return Err(TensorError::shape(
            "solve_lower_transpose",
            format!("L is {:?}, rhs has length {}", l.shape(), b.len()),
        ));
    }
    let ld = l.data();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut sum = x[i];
        for p in (i + 1)..n {
            sum = sum - ld[p * n + i] * x[p];
        }
        x[i] = sum / ld[i * n + i];
    }
    Ok(x)
}

/// Solve (L L^T) x = b given the Cholesky factor L.
pub fn cholesky_solve<T: Real>(l: &Tensor<T>, b: &[T]) -> Result<Vec<T>, TensorError> {
    let z = solve_lower(l, b)?;
    solve_lower_transpose(l, &z)
}

/// Explicit inverse of (L L^T) via column-wise solves. O(n^3); used for the
/// GP marginal-likelihood gradient.
pub fn cholesky_inverse<T: Real>(l: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, _) = l.rows_cols()?;
    let mut inv = Tensor::zeros(&[n, n]);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e[j] = T::one();
        let col = cholesky_solve(l, &e)?;
        e[j] = T::zero();
        for i in 0..n {
            inv.data_mut()[i * n + j] = col[i];
        }
    }
    Ok(inv)
}
