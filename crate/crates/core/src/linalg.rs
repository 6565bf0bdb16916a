//! Small dense linear-algebra helpers shared by the model and the analyses.

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::frames::j_matrix;

pub type Complex64 = Complex<f64>;

/// `a I + b J`.
pub fn rot_block(a: f64, b: f64) -> Matrix2<f64> {
    Matrix2::new(a, b, -b, a)
}

/// `r I - w0 l J`, the DQ-frame impedance of a series RL element (or, with
/// `(g, c)`, the admittance of a shunt GC element).
pub fn dq_impedance(r: f64, l: f64, omega0: f64) -> Matrix2<f64> {
    rot_block(r, -omega0 * l)
}

/// Reads the 2-vector stored at `s[2k..2k+2]`.
#[inline]
pub fn get2(s: &[f64], k: usize) -> Vector2<f64> {
    Vector2::new(s[2 * k], s[2 * k + 1])
}

#[inline]
pub fn put2(s: &mut [f64], k: usize, v: Vector2<f64>) {
    s[2 * k] = v.x;
    s[2 * k + 1] = v.y;
}

/// `J v` without forming the matrix.
#[inline]
pub fn j_mul(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(v.y, -v.x)
}

/// Block-diagonal matrix from 2x2 blocks.
pub fn blkdiag(blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let n = blocks.len();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for (k, b) in blocks.iter().enumerate() {
        out.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(b);
    }
    out
}

/// `I_n (x) J`.
pub fn big_j(n: usize) -> DMatrix<f64> {
    blkdiag(&vec![j_matrix(); n])
}

/// `I_n (x) e`, the 2n x n matrix selecting direct components when transposed.
pub fn big_e(n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * n, n);
    for k in 0..n {
        out[(2 * k, k)] = 1.0;
    }
    out
}

/// `B (x) I_2` for a real matrix `B`.
pub fn kron_i2(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = b.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            out[(2 * i, 2 * j)] = b[(i, j)];
            out[(2 * i + 1, 2 * j + 1)] = b[(i, j)];
        }
    }
    out
}

pub fn inv2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    m.try_inverse()
}

/// True when `m` is of the form `a I + b J` up to `tol` (relative to its size).
pub fn is_rotational_block(m: &Matrix2<f64>, tol: f64) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m[(0, 0)] - m[(1, 1)]).abs() <= tol * scale && (m[(0, 1)] + m[(1, 0)]).abs() <= tol * scale
}

/// Checks every 2x2 block of an even-sized matrix for `a I + b J` structure.
pub fn all_blocks_rotational(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let (r, c) = m.shape();
    (0..r / 2).all(|i| {
        (0..c / 2).all(|j| {
            let b: Matrix2<f64> = m.fixed_view::<2, 2>(2 * i, 2 * j).into_owned();
            (b[(0, 0)] - b[(1, 1)]).abs() <= tol * scale
                && (b[(0, 1)] + b[(1, 0)]).abs() <= tol * scale
        })
    })
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        s.max() / min
    }
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of `G + G^*`.
pub fn min_hermitian_part_eigenvalue(g: &DMatrix<Complex64>) -> f64 {
    let h = g + g.adjoint();
    // Symmetrize explicitly so the solver sees an exactly Hermitian input.
    let h = (&h + h.adjoint()).scale(0.5);
    h.symmetric_eigenvalues().min()
}

/// Symmetric square root and its inverse of a symmetric positive definite matrix.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::Hypothesis(
            "matrix is not positive definite".to_string(),
        ));
    }
    let q = &eig.eigenvectors;
    let s = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let sqrt = q * DMatrix::from_diagonal(&s) * q.transpose();
    let inv = q * DMatrix::from_diagonal(&s.map(|x| 1.0 / x)) * q.transpose();
    Ok((sqrt, inv))
}

/// `n` points log-spaced from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let (la, lb) = (a.log10(), b.log10());
            (0..n)
                .map(|k| 10f64.powf(la + (lb - la) * k as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

/// Row-wise strict diagonal dominance with positive diagonal.
pub fn row_dominant_positive(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| {
        let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        m[(i, i)] > 0.0 && m[(i, i)] > off
    })
}

/// Column-wise strict diagonal dominance with positive diagonal.
pub fn column_dominant_positive(m: &DMatrix<f64>) -> bool {
    row_dominant_positive(&m.transpose())
}
