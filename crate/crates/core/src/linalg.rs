//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `‖m - mᵀ‖_F / max(‖m‖_F, 1e-300)`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1e-300)
}

/// `‖m + mᵀ‖_F / max(‖m‖_F, 1e-300)`, zero for a skew matrix.
pub fn relative_skew_defect(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).norm() / m.norm().max(1e-300)
}

/// Solves the continuous Lyapunov equation `a x + x aᵀ + c = 0` by a direct
/// Kronecker-product linear solve. Returns `None` when the operator
/// `x ↦ a x + x aᵀ` is singular.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(a x) = (I ⊗ a) vec x, vec(x aᵀ) = (a ⊗ I) vec x
    let op = id.kronecker(a) + a.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, c.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs)?;
    let mut x = DMatrix::from_column_slice(n, n, sol.as_slice());
    if c == &c.transpose() {
        symmetrize(&mut x);
    }
    Some(x)
}

/// Real parts of the eigenvalues of a real square matrix, sorted ascending.
pub fn eigen_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
    re.sort_by(|a, b| a.total_cmp(b));
    re
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a complex Hermitian matrix.
pub fn min_hermitian_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `re + i·im` as a complex matrix.
pub fn complexify(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
        Complex64::new(re[(i, j)], im[(i, j)])
    })
}

/// The canonical symplectic form `[[0, I], [-I, 0]]` for `n_modes` modes.
pub fn canonical_sigma(n_modes: usize) -> DMatrix<f64> {
    let n = 2 * n_modes;
    let mut s = DMatrix::zeros(n, n);
    for k in 0..n_modes {
        s[(k, n_modes + k)] = 1.0;
        s[(n_modes + k, k)] = -1.0;
    }
    s
}

/// Row-major nested vectors into a matrix; `None` on ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Matrix into row-major nested vectors.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
