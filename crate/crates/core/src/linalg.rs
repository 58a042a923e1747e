//! Thin helpers over `faer` shared by the model, scattering and transition modules.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Attempts made before a frame draw is declared rank deficient.
pub const FRAME_ATTEMPTS: usize = 3;

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Mat<f64> {
    // Column-major fill order keeps the stream consumption independent of faer internals.
    let mut m = Mat::<f64>::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = sigma * z;
        }
    }
    m
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Returns `None` when a
/// column collapses below `1e-10` of its original norm.
pub fn orthonormalize_columns(mut m: Mat<f64>) -> Option<Mat<f64>> {
    let (rows, cols) = (m.nrows(), m.ncols());
    for j in 0..cols {
        let original: f64 = (0..rows).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt();
        if original == 0.0 || !original.is_finite() {
            return None;
        }
        for _pass in 0..2 {
            for p in 0..j {
                let dot: f64 = (0..rows).map(|i| m[(i, p)] * m[(i, j)]).sum();
                for i in 0..rows {
                    m[(i, j)] -= dot * m[(i, p)];
                }
            }
        }
        let norm: f64 = (0..rows).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt();
        if norm < 1e-10 * original {
            return None;
        }
        for i in 0..rows {
            m[(i, j)] /= norm;
        }
    }
    Some(m)
}

/// Haar-distributed `rows x cols` frame with orthonormal columns (`cols <= rows`).
pub fn random_orthonormal_columns<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Mat<f64>> {
    if cols > rows {
        return Err(Error::DimensionMismatch(format!(
            "cannot fit {cols} orthonormal columns in dimension {rows}"
        )));
    }
    for _ in 0..FRAME_ATTEMPTS {
        if let Some(q) = orthonormalize_columns(gaussian_matrix(rows, cols, 1.0, rng)) {
            return Ok(q);
        }
    }
    Err(Error::RankDeficient {
        rows,
        cols,
        attempts: FRAME_ATTEMPTS,
    })
}

/// Eigenvalues in nondecreasing order with matching eigenvector columns.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    if a.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenSolver)?;
    let values = (0..a.nrows()).map(|i| evd.S().column_vector()[i]).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn to_complex(a: MatRef<'_, f64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Largest modulus; NaN if any entry is NaN.
pub fn max_abs_c(a: MatRef<'_, C64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)].norm();
            if v.is_nan() {
                return f64::NAN;
            }
            m = m.max(v);
        }
    }
    m
}

pub fn max_abs_diff_c(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

/// `max |A - A^T|` over all entries.
pub fn asymmetry_c(a: MatRef<'_, C64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..j {
            m = m.max((a[(i, j)] - a[(j, i)]).norm());
        }
    }
    m
}

/// `max |S^dagger S - 1|` over all entries.
pub fn unitarity_defect(s: MatRef<'_, C64>) -> f64 {
    let n = s.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..n {
                acc += s[(r, i)].conj() * s[(r, j)];
            }
            if i == j {
                acc -= 1.0;
            }
            m = m.max(acc.norm());
        }
    }
    m
}

/// Solves `A X = B` by partial-pivot LU. Returns the solution together with the
/// relative residual `max|AX - B| / max|B|` (infinite when the solve blew up).
pub fn solve_checked(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> (Mat<C64>, f64) {
    let x = a.partial_piv_lu().solve(b);
    let mut finite = true;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].re.is_finite() || !x[(i, j)].im.is_finite() {
                finite = false;
            }
        }
    }
    if !finite {
        return (x, f64::INFINITY);
    }
    let ax = a * &x;
    let scale = max_abs_c(b).max(f64::MIN_POSITIVE);
    let residual = max_abs_diff_c(ax.as_ref(), b) / scale;
    (x, residual)
}

pub fn identity_c(n: usize) -> Mat<C64> {
    Mat::from_fn(
        n,
        n,
        |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) },
    )
}

pub fn identity(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthonormal_frames_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_orthonormal_columns(12, 5, &mut rng).unwrap();
        let g = q.transpose() * &q;
        let mut defect = 0.0f64;
        for i in 0..5 {
            for j in 0..5 {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((g[(i, j)] - target).abs());
            }
        }
        assert!(defect < 1e-14, "defect {defect}");
    }

    #[test]
    fn collapsed_columns_are_rejected() {
        let m = Mat::from_fn(3, 2, |i, _| i as f64 + 1.0);
        assert!(orthonormalize_columns(m).is_none());
        assert!(random_orthonormal_columns(2, 3, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn solve_reports_singular_systems() {
        let a = Mat::<C64>::zeros(2, 2);
        let (_, residual) = solve_checked(a.as_ref(), identity_c(2).as_ref());
        assert!(residual > 1e-8);
        let (x, residual) = solve_checked(identity_c(3).as_ref(), identity_c(3).as_ref());
        assert!(residual < 1e-15);
        assert_eq!(x[(1, 1)], C64::new(1.0, 0.0));
    }
}
