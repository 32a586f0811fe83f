//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest eigenvalue of `ΦᵀΦ` (the squared spectral norm of `Φ`) by power
/// iteration, stopping once the estimate changes by less than `rel_tol`.
///
/// Iterates on whichever Gram matrix (`ΦᵀΦ` or `ΦΦᵀ`) is smaller; both share
/// the top eigenvalue. The start vector is a fixed pseudo-random draw so the
/// result is deterministic and never starts orthogonal to a structured
/// eigenvector.
pub fn gram_spectral_radius(phi: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let gram = if phi.nrows() <= phi.ncols() { phi * phi.transpose() } else { phi.transpose() * phi };
    let k = gram.nrows();
    if k == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_1a);
    let mut v = DVector::from_fn(k, |_, _| rng.random::<f64>() + 0.5);
    let norm = v.norm();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Symmetric eigendecomposition with eigenpairs sorted by ascending eigenvalue.
/// Equal eigenvalues keep nalgebra's output order.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, 1e-14, 100_000)
        .ok_or_else(|| Error::Numeric(format!("symmetric eigensolver did not converge (size {n})")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_matches_eigensolver() {
        let phi = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0, -2.0, 1.0, 1.0, 0.0]);
        let (vals, _) = sorted_symmetric_eigen(phi.transpose() * &phi).unwrap();
        let top = vals[vals.len() - 1];
        let est = gram_spectral_radius(&phi, 1e-12, 100_000);
        assert!((est - top).abs() < 1e-8 * top, "{est} vs {top}");
    }

    #[test]
    fn spectral_radius_of_antipodal_columns() {
        // ones-vector start would sit in the null space of this Gram matrix
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        let est = gram_spectral_radius(&phi, 1e-10, 10_000);
        assert!((est - 2.0).abs() < 1e-8);
    }

    #[test]
    fn eigen_sorted_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = sorted_symmetric_eigen(m).unwrap();
        assert_eq!(vals.as_slice(), &[-1.0, 2.0, 5.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }
}
