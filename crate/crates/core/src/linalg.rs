//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Relative singular-value cutoff used by every pseudo-inverse in the crate.
pub const PINV_RTOL: f64 = 1e-10;

/// Moore–Penrose pseudo-inverse together with the numerical rank it used.
#[derive(Debug, Clone)]
pub struct Pinv {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

/// SVD pseudo-inverse with singular values below `PINV_RTOL * σ_max` treated as zero.
pub fn pinv(m: &DMatrix<f64>) -> Pinv {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Pinv {
            matrix: DMatrix::zeros(cols, rows),
            rank: 0,
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = PINV_RTOL * sigma_max;
    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    Pinv { matrix: out, rank }
}

/// Numerical rank with the same cutoff as [`pinv`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.clone().singular_values();
    let cutoff = PINV_RTOL * s.max();
    s.iter().filter(|&&v| v > cutoff && v > 0.0).count()
}

/// Nonzero singular values (same cutoff as [`pinv`]), descending.
pub fn nonzero_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let s = m.clone().singular_values();
    let cutoff = PINV_RTOL * s.max();
    let mut v: Vec<f64> = s.iter().copied().filter(|&x| x > cutoff && x > 0.0).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Orthonormal basis of the null space of `m` (columns), from the full SVD of `mᵀm`.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to a square matrix so the SVD returns a complete right basis.
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = PINV_RTOL * sigma_max.max(f64::MIN_POSITIVE);
    let mut basis = Vec::new();
    for k in 0..cols {
        let s = svd.singular_values[k];
        if s <= cutoff || sigma_max == 0.0 {
            basis.push(v_t.row(k).transpose());
        }
    }
    if basis.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&basis)
    }
}

/// Cross-product matrix `[x]ₓ` with `[x]ₓ y = x × y`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn to_dvector(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

pub fn segment3(v: &DVector<f64>, start: usize) -> Vector3<f64> {
    Vector3::new(v[start], v[start + 1], v[start + 2])
}
