//! Structured complex linear algebra shared by the whole simulator:
//! Hermitian eigen-analysis with rank splitting, Kronecker / block
//! Khatri-Rao products, and zero-forcing solves.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

use crate::num::Real;

/// Complex matrix over the generic scalar.
pub type CMat<T> = DMatrix<Complex<T>>;
/// Complex column vector over the generic scalar.
pub type CVec<T> = DVector<Complex<T>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian: |M - M^H| = {deviation:e} exceeds {tol:e}")]
    NonHermitian { deviation: f64, tol: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Gram matrix numerically singular (condition estimate {cond:e})")]
    RankDeficient { cond: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Truncated Hermitian eigen-decomposition: orthonormal columns and the
/// matching real eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenBasis<T: Real> {
    /// Semi-unitary matrix whose columns are eigenvectors.
    pub vectors: CMat<T>,
    /// Eigenvalues, descending, same count as columns of `vectors`.
    pub values: Vec<T>,
}

impl<T: Real> EigenBasis<T> {
    /// Number of eigenpairs kept.
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Ambient dimension (rows of the eigenvector matrix).
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// Keep only eigenpairs with `value >= eps_rel * values[0]`.
    pub fn truncated(&self, eps_rel: T) -> Self {
        let cut = self
            .values
            .first()
            .map(|top| *top * eps_rel)
            .unwrap_or_else(T::zero);
        let keep = if self.values.is_empty() || self.values[0] <= T::zero() {
            0
        } else {
            self.values.iter().take_while(|v| **v >= cut).count()
        };
        EigenBasis {
            vectors: self.vectors.columns(0, keep).into_owned(),
            values: self.values[..keep].to_vec(),
        }
    }

    /// `vectors * diag(sqrt(values))`, the Karhunen-Loeve factor.
    pub fn sqrt_factor(&self) -> CMat<T> {
        let mut m = self.vectors.clone();
        for (j, v) in self.values.iter().enumerate() {
            let s = Complex::new(v.max(T::zero()).sqrt(), T::zero());
            for r in 0..m.nrows() {
                m[(r, j)] *= s;
            }
        }
        m
    }

    /// Reassemble `U diag(values) U^H`.
    pub fn reconstruct(&self) -> CMat<T> {
        let mut scaled = self.vectors.clone();
        for (j, v) in self.values.iter().enumerate() {
            for r in 0..scaled.nrows() {
                scaled[(r, j)] *= Complex::new(*v, T::zero());
            }
        }
        &scaled * self.vectors.adjoint()
    }
}

/// Signal/null split of a Hermitian spectrum against the full space.
#[derive(Debug, Clone)]
pub struct NullSplit<T: Real> {
    /// Columns spanning the retained (signal) eigen-space.
    pub signal_basis: CMat<T>,
    /// Columns spanning the orthogonal complement.
    pub null_basis: CMat<T>,
}

impl<T: Real> NullSplit<T> {
    pub fn signal_rank(&self) -> usize {
        self.signal_basis.ncols()
    }

    pub fn null_rank(&self) -> usize {
        self.null_basis.ncols()
    }
}

fn check_finite<T: Real>(m: &CMat<T>) -> Result<(), LinalgError> {
    if m.iter()
        .all(|z| z.re.is_finite_real() && z.im.is_finite_real())
    {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Hermitian eigen-decomposition with eigenvalues sorted descending.
///
/// The input must be square and Hermitian within `1e-9` relative; the
/// decomposition itself is delegated to nalgebra's symmetric eigensolver.
pub fn hermitian_eig<T: Real>(m: &CMat<T>) -> Result<EigenBasis<T>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    check_finite(m)?;
    let scale = m.norm();
    let dev = (m - m.adjoint()).norm();
    let tol = T::lit(1e-9) * scale.max(T::lit(1e-300));
    if dev > tol && scale > T::zero() {
        return Err(LinalgError::NonHermitian {
            deviation: dev.as_f64(),
            tol: tol.as_f64(),
        });
    }
    if m.nrows() == 0 {
        return Ok(EigenBasis {
            vectors: CMat::<T>::zeros(0, 0),
            values: Vec::new(),
        });
    }
    // Work on the exactly-Hermitian average so roundoff in the input cannot
    // leak into complex eigenvalues.
    let half = Complex::new(T::lit(0.5), T::zero());
    let sym = (m + m.adjoint()) * half;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Descending, stable so ties keep the solver's output order.
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut vectors = CMat::<T>::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src]);
    }
    Ok(EigenBasis { vectors, values })
}

/// Split an eigen-basis into signal space (eigenvalues above
/// `eps_rel * lambda_max`) and its orthogonal complement in the
/// `full_dim`-dimensional ambient space.
///
/// When the basis does not span the full space, the complement is completed
/// by orthonormalization. An empty signal space is valid (zero matrix in,
/// identity null basis out).
pub fn split_by_threshold<T: Real>(
    eig: &EigenBasis<T>,
    full_dim: usize,
    eps_rel: T,
) -> Result<NullSplit<T>, LinalgError> {
    if eig.dim() != full_dim && eig.rank() > 0 {
        return Err(LinalgError::DimensionMismatch(format!(
            "eigenbasis lives in dim {} but full_dim is {}",
            eig.dim(),
            full_dim
        )));
    }
    let signal = eig.truncated(eps_rel);
    let r_signal = signal.rank();
    let signal_basis = if r_signal == 0 {
        CMat::<T>::zeros(full_dim, 0)
    } else {
        signal.vectors.clone()
    };

    let null_basis = if eig.rank() == full_dim {
        // Full orthonormal basis available: the complement is just the
        // remaining eigenvector columns.
        eig.vectors.columns(r_signal, full_dim - r_signal).into_owned()
    } else {
        complement_basis(&signal_basis, full_dim)?
    };
    Ok(NullSplit {
        signal_basis,
        null_basis,
    })
}

/// Orthonormal basis of the orthogonal complement of `span(s)` in C^dim,
/// obtained from the eigen-space of the complement projector.
fn complement_basis<T: Real>(s: &CMat<T>, dim: usize) -> Result<CMat<T>, LinalgError> {
    let r = s.ncols();
    if r == 0 {
        return Ok(CMat::<T>::identity(dim, dim));
    }
    let proj = CMat::<T>::identity(dim, dim) - s * s.adjoint();
    let eig = hermitian_eig(&proj)?;
    let half = T::lit(0.5);
    let keep = eig.values.iter().take_while(|v| **v > half).count();
    Ok(eig.vectors.columns(0, keep).into_owned())
}

/// Kronecker product, azimuth-major ordering: `kron(a, b)` stacks copies of
/// `b` scaled by the entries of `a`.
pub fn kron<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMat::<T>::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let s = a[(i, j)];
            for p in 0..rb {
                for q in 0..cb {
                    out[(i * rb + p, j * cb + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Block-diagonal stack of `K` equal-length vectors: a `(K r) x K` matrix
/// with vector `k` in diagonal block `k` (the Khatri-Rao product
/// `I_K o [w_1, ..., w_K]`).
pub fn khatri_rao_block<T: Real>(vectors: &[CVec<T>]) -> Result<CMat<T>, LinalgError> {
    let k = vectors.len();
    if k == 0 {
        return Ok(CMat::<T>::zeros(0, 0));
    }
    let r = vectors[0].len();
    for v in vectors {
        if v.len() != r {
            return Err(LinalgError::LengthMismatch {
                expected: r,
                got: v.len(),
            });
        }
    }
    Ok(block_diag_columns(vectors))
}

/// Same block-diagonal layout as [`khatri_rao_block`] but tolerating blocks
/// of different lengths; used when per-user effective ranks differ.
pub fn block_diag_columns<T: Real>(vectors: &[CVec<T>]) -> CMat<T> {
    let total: usize = vectors.iter().map(|v| v.len()).sum();
    let mut out = CMat::<T>::zeros(total, vectors.len());
    let mut row = 0;
    for (k, v) in vectors.iter().enumerate() {
        for (i, z) in v.iter().enumerate() {
            out[(row + i, k)] = *z;
        }
        row += v.len();
    }
    out
}

/// Complex matrix product through four real products, which dispatch to the
/// backend's optimized real kernels; falls back to the ordinary product for
/// small operands where the split overhead dominates.
pub fn fast_mul<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    let (m, ka) = a.shape();
    let (kb, n) = b.shape();
    assert_eq!(ka, kb, "inner dimensions");
    if m * ka * n < 32_768 {
        return a * b;
    }
    let a_re = DMatrix::<T>::from_fn(m, ka, |i, j| a[(i, j)].re);
    let a_im = DMatrix::<T>::from_fn(m, ka, |i, j| a[(i, j)].im);
    let b_re = DMatrix::<T>::from_fn(kb, n, |i, j| b[(i, j)].re);
    let b_im = DMatrix::<T>::from_fn(kb, n, |i, j| b[(i, j)].im);
    let rr = &a_re * &b_re;
    let ii = &a_im * &b_im;
    let ri = &a_re * &b_im;
    let ir = &a_im * &b_re;
    CMat::<T>::from_fn(m, n, |i, j| {
        Complex::new(rr[(i, j)] - ii[(i, j)], ri[(i, j)] + ir[(i, j)])
    })
}

/// `a^H b` through [`fast_mul`].
pub fn fast_adjoint_mul<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    fast_mul(&a.adjoint(), b)
}

/// Eigen-structure of `Sum_i c_i c_i^H` straight from the stacked columns
/// through an SVD, avoiding the dense `n x n` eigensolve when the rank is
/// far below the dimension.
pub fn low_rank_eigh<T: Real>(columns: &[CVec<T>]) -> Result<EigenBasis<T>, LinalgError> {
    let k = columns.len();
    if k == 0 {
        return Ok(EigenBasis {
            vectors: CMat::<T>::zeros(0, 0),
            values: Vec::new(),
        });
    }
    let n = columns[0].len();
    let mut m = CMat::<T>::zeros(n, k);
    for (j, c) in columns.iter().enumerate() {
        if c.len() != n {
            return Err(LinalgError::LengthMismatch {
                expected: n,
                got: c.len(),
            });
        }
        m.set_column(j, c);
    }
    check_finite(&m)?;
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut pairs: Vec<(T, usize)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, s)| (*s * *s, i))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite singular values"));
    let mut vectors = CMat::<T>::zeros(n, pairs.len());
    let mut values = Vec::with_capacity(pairs.len());
    for (dst, (val, src)) in pairs.iter().enumerate() {
        vectors.set_column(dst, &u.column(*src));
        values.push(*val);
    }
    Ok(EigenBasis { vectors, values })
}

/// Condition-number guard used by the zero-forcing solves.
pub const ZF_CONDITION_LIMIT: f64 = 1e12;

/// Zero-forcing directions `D = H (H^H H)^{-1}` satisfying `H^H D = I`.
///
/// Fails with `RankDeficient` when the Gram matrix condition number exceeds
/// [`ZF_CONDITION_LIMIT`], which in the precoding pipeline signals a violated
/// dimension condition rather than numerical noise.
pub fn zf_direction<T: Real>(h_eff: &CMat<T>) -> Result<CMat<T>, LinalgError> {
    let k = h_eff.ncols();
    if k == 0 {
        return Ok(CMat::<T>::zeros(h_eff.nrows(), 0));
    }
    if k > h_eff.nrows() {
        return Err(LinalgError::RankDeficient { cond: f64::INFINITY });
    }
    check_finite(h_eff)?;
    let gram = h_eff.adjoint() * h_eff;
    let eig = hermitian_eig(&gram)?;
    let top = eig.values[0];
    let bottom = eig.values[k - 1];
    let limit = T::lit(ZF_CONDITION_LIMIT);
    if bottom <= T::zero() || top / bottom > limit {
        let cond = if bottom <= T::zero() {
            f64::INFINITY
        } else {
            (top / bottom).as_f64()
        };
        return Err(LinalgError::RankDeficient { cond });
    }
    let inv = gram
        .try_inverse()
        .ok_or(LinalgError::RankDeficient { cond: f64::INFINITY })?;
    Ok(h_eff * inv)
}
