//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Orthonormal basis of the column span, dropping singular values below
/// `tol · σ_max`.
pub fn orthonormal_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol * smax).collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Numerical rank with relative tolerance.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    orthonormal_basis(m, tol).ncols()
}

/// Orthonormal basis of `{v : M v ≈ 0}`, keeping right singular vectors whose
/// singular value is at most `tol` (absolute).
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    // pad so that the SVD returns a full set of right singular vectors
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= tol).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| vt[(keep[c], r)])
}

/// Principal angles between the spans of two orthonormal bases, largest first.
/// Computed from sines, `sin θ = σ((I − Q₁Q₁ᵀ) Q₂)`, which keeps small angles accurate.
/// Requires `q2.ncols() ≤ q1.ncols()` for a complete set.
pub fn principal_angles(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Vec<f64> {
    if q2.ncols() == 0 {
        return Vec::new();
    }
    if q1.ncols() == 0 {
        return vec![std::f64::consts::FRAC_PI_2; q2.ncols()];
    }
    let resid = q2 - q1 * (q1.transpose() * q2);
    let s = resid.svd(false, false).singular_values;
    let mut out: Vec<f64> = s.iter().map(|v| v.min(1.0).asin()).collect();
    out.sort_by(|a, b| b.partial_cmp(a).expect("finite angles"));
    out
}

/// Largest principal angle between two subspaces of equal dimension, or π/2
/// when the dimensions differ.
pub fn max_principal_angle(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    if q1.ncols() != q2.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    principal_angles(q1, q2).first().copied().unwrap_or(0.0)
}

/// Norm of the part of `q2` outside span(`q1`), in spectral norm.
pub fn containment_residual(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    if q2.ncols() == 0 {
        return 0.0;
    }
    let resid = q2 - q1 * (q1.transpose() * q2);
    resid.svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

/// Matrix built from column vectors.
pub fn from_columns(rows: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r])
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
