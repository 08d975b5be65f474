//! Small dense linear-algebra helpers shared by the fit and variance code.

use nalgebra::{DMatrix, DVector};

/// Relative asymmetry ||A - A'|| / ||A|| (Frobenius), 0 for the zero matrix.
pub(crate) fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

/// Replace A by (A + A') / 2.
pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let at = a.transpose();
    *a += at;
    *a *= 0.5;
}

/// 2-norm condition number via singular values; infinite when rank deficient.
pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of a real square matrix as (re, im) pairs.
pub(crate) fn eigenvalues(a: &DMatrix<f64>) -> Vec<(f64, f64)> {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect()
}

/// Outcome of the principal inverse square root computation.
pub(crate) enum InvSqrtError {
    /// The matrix has complex or non-positive real eigenvalues, so the
    /// principal square root is not a real matrix.
    NotRealPositive,
    /// The Schur decomposition failed to converge (pathological input).
    SchurFailed,
}

/// Principal inverse square root B^(-1/2) of a real matrix whose eigenvalues
/// are all real and strictly positive.
///
/// Uses the real Schur form B = Q T Q'. When every eigenvalue is real the
/// quasi-triangular factor T is genuinely triangular; the square root of T
/// follows from the standard recurrence on its entries, and
/// B^(-1/2) = Q (sqrt T)^(-1) Q'.
pub(crate) fn principal_inv_sqrt(b: &DMatrix<f64>) -> Result<DMatrix<f64>, InvSqrtError> {
    let p = b.nrows();
    if p == 1 {
        let v = b[(0, 0)];
        if v <= 0.0 {
            return Err(InvSqrtError::NotRealPositive);
        }
        return Ok(DMatrix::from_element(1, 1, 1.0 / v.sqrt()));
    }
    let scale = b.norm().max(1.0);
    let schur = nalgebra::Schur::try_new(b.clone(), 1e-14, 0).ok_or(InvSqrtError::SchurFailed)?;
    let (q, t) = schur.unpack();
    // A nonzero subdiagonal entry marks a 2x2 block, i.e. a complex pair.
    for i in 0..p - 1 {
        if t[(i + 1, i)].abs() > 1e-12 * scale {
            return Err(InvSqrtError::NotRealPositive);
        }
    }
    if (0..p).any(|i| t[(i, i)] <= 0.0) {
        return Err(InvSqrtError::NotRealPositive);
    }
    // sqrt of an upper-triangular matrix, column by column.
    let mut s = DMatrix::zeros(p, p);
    for i in 0..p {
        s[(i, i)] = t[(i, i)].sqrt();
    }
    for off in 1..p {
        for i in 0..p - off {
            let j = i + off;
            let mut acc = t[(i, j)];
            for k in i + 1..j {
                acc -= s[(i, k)] * s[(k, j)];
            }
            s[(i, j)] = acc / (s[(i, i)] + s[(j, j)]);
        }
    }
    let s_inv = s
        .try_inverse()
        .ok_or(InvSqrtError::NotRealPositive)?;
    Ok(&q * s_inv * q.transpose())
}

/// Sum with pairwise (cascade) reduction; the result is independent of any
/// chunking the caller may have used to produce `xs`.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Project a vector of per-item values through `f` and pairwise-sum them.
pub(crate) fn pairwise_sum_by<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    let vals: Vec<f64> = items.iter().map(f).collect();
    pairwise_sum(&vals)
}

/// Outer product x y' added into acc with weight w.
pub(crate) fn add_outer(acc: &mut DMatrix<f64>, w: f64, x: &DVector<f64>, y: &DVector<f64>) {
    acc.ger(w, x, y, 1.0);
}
