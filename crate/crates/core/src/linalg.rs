//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &Mat) -> bool {
    m.is_square() && symmetrize(m).cholesky().is_some()
}

pub fn is_positive_semidefinite(m: &Mat, tol: f64) -> bool {
    m.is_square() && min_sym_eigenvalue(m) >= -tol * (1.0 + m.amax())
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag<'a>(blocks: impl IntoIterator<Item = &'a Mat> + Clone) -> Mat {
    let (rows, cols) = blocks
        .clone()
        .into_iter()
        .fold((0, 0), |(r, c), b| (r + b.nrows(), c + b.ncols()));
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Frobenius inner product.
pub fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

/// Lower Cholesky factor of a symmetric positive (semi)definite matrix.
/// Falls back to an eigen-decomposition square root when the matrix is
/// only semidefinite.
pub fn sqrt_factor(m: &Mat) -> Mat {
    if let Some(ch) = symmetrize(m).cholesky() {
        return ch.l();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let m = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = Mat::from_element(1, 1, 2.0);
        let b = Mat::from_row_slice(2, 1, &[3.0, 4.0]);
        let d = block_diag([&a, &b]);
        assert_eq!(d.shape(), (3, 2));
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(1, 1)], 3.0);
        assert_eq!(d[(2, 1)], 4.0);
        assert_eq!(d[(1, 0)], 0.0);
    }

    #[test]
    fn sqrt_factor_handles_semidefinite() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = sqrt_factor(&m);
        assert!((&l * l.transpose() - m).amax() < 1e-12);
    }
}
