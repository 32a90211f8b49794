//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest |m_ij − m_ji| relative to the largest |m_ij|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// ascending order (columns of the returned matrix are the eigenvectors).
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

fn checked_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if asymmetry(m) > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (relative asymmetry {:e})",
            asymmetry(m)
        )));
    }
    let (values, vectors) = sorted_eigen(m);
    let norm = m.norm();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-8 * norm {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok((values, vectors))
}

fn spectral_function(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mapped = DMatrix::from_diagonal(&values.map(f));
    symmetrize(&(vectors * mapped * vectors.transpose()))
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-1e-8‖m‖, 0)` are clipped to zero; anything more negative
/// is rejected with [`Error::NotPsd`].
pub fn sym_psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = checked_eigen(m)?;
    Ok(spectral_function(&values, &vectors, |x| x.max(0.0).sqrt()))
}

/// Inverse symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = checked_eigen(m)?;
    if values[0] <= 0.0 {
        return Err(Error::NotPsd {
            min_eigenvalue: values[0],
        });
    }
    Ok(spectral_function(&values, &vectors, |x| 1.0 / x.sqrt()))
}

/// Flip the sign of `w` so its first coordinate with |w_i| > 1e-14 is positive.
pub fn canonical_sign(w: &mut DVector<f64>) {
    if let Some(first) = w.iter().copied().find(|x| x.abs() > 1e-14) {
        if first < 0.0 {
            w.neg_mut();
        }
    }
}
