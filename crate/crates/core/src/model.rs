//! Linear-Gaussian system description.
//!
//! The canonical operators `r = (x_1..x_M, p_1..p_M)` satisfy
//! `[r_j, r_k] = i σ_jk`. The Hamiltonian is `H = rᵀ H r / 2`, the jump
//! operators are `L = Λ r` and the homodyne channels are `C = (A + iB) r`.
//! Everything else (drift, diffusion, Riccati coefficients) is derived from
//! these six matrices.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Symmetry and skewness tolerance (relative).
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalue floor for positive-semidefinite checks.
pub const PSD_FLOOR: f64 = -1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("diffusion matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}); measurement channels over-count the jump operators")]
    NonPositiveDiffusion { min_eigenvalue: f64 },
    #[error("model failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("invalid model JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

/// One monitored linear bosonic system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    n_modes: usize,
    sigma: DMatrix<f64>,
    h_matrix: DMatrix<f64>,
    h_linear: DVector<f64>,
    lambda: DMatrix<Complex64>,
    a_meas: DMatrix<f64>,
    b_meas: DMatrix<f64>,
    delta: DMatrix<f64>,
    omega: DMatrix<f64>,
    coarse_grained: bool,
}

/// Splits `ΛᴴΛ` into its real symmetric part `Δ` and imaginary skew part `Ω`.
pub fn decompose_lambda(lambda: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let gram = lambda.adjoint() * lambda;
    let n = gram.nrows();
    let mut delta = DMatrix::from_fn(n, n, |i, j| gram[(i, j)].re);
    let mut omega = DMatrix::from_fn(n, n, |i, j| gram[(i, j)].im);
    linalg::symmetrize(&mut delta);
    for i in 0..n {
        omega[(i, i)] = 0.0;
        for j in (i + 1)..n {
            let s = 0.5 * (omega[(i, j)] - omega[(j, i)]);
            omega[(i, j)] = s;
            omega[(j, i)] = -s;
        }
    }
    (delta, omega)
}

/// Coefficients of the annihilation operator `a_k = (x_k + i p_k)/√2` on the
/// canonical ordering.
pub fn annihilation(n_modes: usize, k: usize) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(0.0, 0.0); 2 * n_modes];
    c[k] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    c[n_modes + k] = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
    c
}

/// Coefficients of `a_k†`.
pub fn creation(n_modes: usize, k: usize) -> Vec<Complex64> {
    annihilation(n_modes, k).iter().map(|z| z.conj()).collect()
}

/// Coefficients of a single quadrature `r_j`.
pub fn quadrature(n_modes: usize, j: usize) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(0.0, 0.0); 2 * n_modes];
    c[j] = Complex64::new(1.0, 0.0);
    c
}

/// Multiplies a coefficient row by a complex scalar.
pub fn scaled(row: &[Complex64], s: Complex64) -> Vec<Complex64> {
    row.iter().map(|z| z * s).collect()
}

fn stack_complex(rows: &[Vec<Complex64>], ncols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

impl LinearModel {
    /// Builds a model from its defining matrices. Only shapes are checked
    /// here; physical invariants are reported by [`LinearModel::validate`].
    pub fn new(
        sigma: DMatrix<f64>,
        h_matrix: DMatrix<f64>,
        h_linear: DVector<f64>,
        lambda: DMatrix<Complex64>,
        a_meas: DMatrix<f64>,
        b_meas: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let n = sigma.nrows();
        if n == 0 || n % 2 != 0 || sigma.ncols() != n {
            return Err(ModelError::Shape(format!(
                "sigma must be a non-empty even-dimensional square matrix, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let check = |name: &str, r: usize, c: usize, er: Option<usize>, ec: usize| {
            if c != ec || er.is_some_and(|er| er != r) {
                Err(ModelError::Shape(format!(
                    "{name} has shape {r}x{c}, expected {}x{ec}",
                    er.map_or("N".to_string(), |v| v.to_string())
                )))
            } else {
                Ok(())
            }
        };
        check("H", h_matrix.nrows(), h_matrix.ncols(), Some(n), n)?;
        check("h", h_linear.nrows(), 1, Some(n), 1)?;
        check("Lambda", lambda.nrows(), lambda.ncols(), None, n)?;
        check("A", a_meas.nrows(), a_meas.ncols(), None, n)?;
        check("B", b_meas.nrows(), b_meas.ncols(), Some(a_meas.nrows()), n)?;
        let (delta, omega) = decompose_lambda(&lambda);
        Ok(Self {
            n_modes: n / 2,
            sigma,
            h_matrix,
            h_linear,
            lambda,
            a_meas,
            b_meas,
            delta,
            omega,
            coarse_grained: false,
        })
    }

    /// Builds a model in the canonical ordering from complex coefficient
    /// rows: one row per jump operator `L_j = Σ λ_jk r_k` and one row per
    /// measurement channel `C_k = Σ c_kl r_l`.
    pub fn from_channels(
        n_modes: usize,
        h_matrix: DMatrix<f64>,
        jumps: &[Vec<Complex64>],
        measurements: &[Vec<Complex64>],
    ) -> Result<Self, ModelError> {
        let n = 2 * n_modes;
        if let Some(bad) = jumps.iter().chain(measurements).find(|r| r.len() != n) {
            return Err(ModelError::Shape(format!(
                "channel row of length {} in a {n}-dimensional phase space",
                bad.len()
            )));
        }
        let lambda = stack_complex(jumps, n);
        let meas = stack_complex(measurements, n);
        let a = meas.map(|z| z.re);
        let b = meas.map(|z| z.im);
        Self::new(
            linalg::canonical_sigma(n_modes),
            h_matrix,
            DVector::zeros(n),
            lambda,
            a,
            b,
        )
    }

    /// Freely decaying cavity at rate `gamma`, homodyne detection of the
    /// output with efficiency `eta` and local-oscillator phase `phi`.
    pub fn decaying_cavity(gamma: f64, eta: f64, phi: f64) -> Self {
        let a = annihilation(1, 0);
        let jump = scaled(&a, Complex64::new(gamma.sqrt(), 0.0));
        let meas = scaled(&a, Complex64::from_polar((eta * gamma).sqrt(), -phi));
        Self::from_channels(1, DMatrix::zeros(2, 2), &[jump], &[meas])
            .expect("static shapes")
    }

    /// Cavity whose output couples through a two-mode-squeezing interaction:
    /// jump `√Γ a†`, monitored channel `√(ηΓ) a†`.
    pub fn squeezing_cavity(gamma: f64, eta: f64) -> Self {
        let ad = creation(1, 0);
        let jump = scaled(&ad, Complex64::new(gamma.sqrt(), 0.0));
        let meas = scaled(&ad, Complex64::new((eta * gamma).sqrt(), 0.0));
        Self::from_channels(1, DMatrix::zeros(2, 2), &[jump], &[meas])
            .expect("static shapes")
    }

    /// Marks the model as a coarse-grained effective description; the
    /// information constraint is then reported as a warning only.
    pub fn with_coarse_grained(mut self, flag: bool) -> Self {
        self.coarse_grained = flag;
        self
    }

    pub fn with_h_linear(mut self, h: DVector<f64>) -> Result<Self, ModelError> {
        if h.len() != self.dim() {
            return Err(ModelError::Shape(format!(
                "h has length {}, expected {}",
                h.len(),
                self.dim()
            )));
        }
        self.h_linear = h;
        Ok(self)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Phase-space dimension `2M`.
    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    /// Number of monitored channels `N_C`.
    pub fn n_channels(&self) -> usize {
        self.a_meas.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn h_matrix(&self) -> &DMatrix<f64> {
        &self.h_matrix
    }

    pub fn h_linear(&self) -> &DVector<f64> {
        &self.h_linear
    }

    pub fn lambda(&self) -> &DMatrix<Complex64> {
        &self.lambda
    }

    pub fn a_meas(&self) -> &DMatrix<f64> {
        &self.a_meas
    }

    pub fn b_meas(&self) -> &DMatrix<f64> {
        &self.b_meas
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn is_coarse_grained(&self) -> bool {
        self.coarse_grained
    }

    /// Unconditional drift `Q = σ(H + Ω)`.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        &self.sigma * (&self.h_matrix + &self.omega)
    }

    /// `D = 2σ(Δ - BᵀB)σᵀ` without the positivity check.
    pub fn diffusion_matrix_unchecked(&self) -> DMatrix<f64> {
        let inner = &self.delta - self.b_meas.transpose() * &self.b_meas;
        let mut d = 2.0 * &self.sigma * inner * self.sigma.transpose();
        linalg::symmetrize(&mut d);
        d
    }

    /// Diffusion matrix `D = 2σ(Δ - BᵀB)σᵀ`.
    pub fn diffusion_matrix(&self) -> Result<DMatrix<f64>, ModelError> {
        let d = self.diffusion_matrix_unchecked();
        let min = linalg::min_symmetric_eigenvalue(&d);
        if min < PSD_FLOOR {
            return Err(ModelError::NonPositiveDiffusion { min_eigenvalue: min });
        }
        Ok(d)
    }

    /// `AᵀA`, the information-gain matrix of the Riccati equations.
    pub fn ata(&self) -> DMatrix<f64> {
        self.a_meas.transpose() * &self.a_meas
    }

    /// `σBᵀA`.
    pub fn sigma_bt_a(&self) -> DMatrix<f64> {
        &self.sigma * self.b_meas.transpose() * &self.a_meas
    }

    /// `σBᵀ`, the record-independent part of the mean gain.
    pub fn sigma_bt(&self) -> DMatrix<f64> {
        &self.sigma * self.b_meas.transpose()
    }

    /// Checks every model invariant and reports each one with the size of
    /// its violation.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let skew = linalg::relative_skew_defect(&self.sigma);
        checks.push(Check::new("sigma_skew_symmetric", skew <= SYMMETRY_TOL, skew));
        let det = self.sigma.determinant();
        checks.push(Check::new("sigma_invertible", det.abs() > 1e-12, det));
        let asym = linalg::relative_asymmetry(&self.h_matrix);
        checks.push(Check::new("hamiltonian_symmetric", asym <= SYMMETRY_TOL, asym));

        let gram = linalg::complexify(&self.delta, &self.omega);
        let gram_min = linalg::min_hermitian_eigenvalue(&gram);
        checks.push(Check::new("jump_gram_psd", gram_min >= PSD_FLOOR, gram_min));

        let meas = linalg::complexify(&self.a_meas, &self.b_meas);
        let info = &gram - meas.adjoint() * &meas;
        let info_min = linalg::min_hermitian_eigenvalue(&info);
        let mut c = Check::new("information_constraint", info_min >= PSD_FLOOR, info_min);
        if self.coarse_grained {
            c.severity = Severity::Warning;
            c.note = Some("coarse-grained model: diffusion positivity is the binding check".into());
        }
        checks.push(c);

        let d = self.diffusion_matrix_unchecked();
        let d_min = linalg::min_symmetric_eigenvalue(&d);
        checks.push(Check::new("diffusion_psd", d_min >= PSD_FLOOR, d_min));
        ValidationReport { checks }
    }

    /// Returns an error carrying the report if any hard check fails.
    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let report = self.validate();
        if report.passed() {
            Ok(())
        } else {
            Err(ModelError::Invalid(report))
        }
    }

    /// Parses the JSON model format (strict: unknown keys are rejected).
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let file = ModelFile {
            n_modes: self.n_modes,
            sigma: Some(linalg::to_rows(&self.sigma)),
            h_matrix: linalg::to_rows(&self.h_matrix),
            h_linear: Some(self.h_linear.iter().copied().collect()),
            lambda: ComplexRows {
                re: linalg::to_rows(&self.lambda.map(|z| z.re)),
                im: linalg::to_rows(&self.lambda.map(|z| z.im)),
            },
            a_meas: linalg::to_rows(&self.a_meas),
            b_meas: linalg::to_rows(&self.b_meas),
        };
        serde_json::to_value(file).expect("plain data")
    }
}

/// On-disk JSON model layout. Matrices are row-major arrays of arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_modes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(rename = "H")]
    pub h_matrix: Vec<Vec<f64>>,
    #[serde(rename = "h", default, skip_serializing_if = "Option::is_none")]
    pub h_linear: Option<Vec<f64>>,
    #[serde(rename = "Lambda")]
    pub lambda: ComplexRows,
    #[serde(rename = "A")]
    pub a_meas: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b_meas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexRows {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>, ModelError> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols));
    }
    linalg::from_rows(rows).ok_or_else(|| ModelError::Shape(format!("{name} has ragged rows")))
}

impl ModelFile {
    pub fn into_model(self) -> Result<LinearModel, ModelError> {
        let n = 2 * self.n_modes;
        if n == 0 {
            return Err(ModelError::Shape("n_modes must be positive".into()));
        }
        let sigma = match &self.sigma {
            Some(rows) => rows_to_matrix("sigma", rows, n)?,
            None => linalg::canonical_sigma(self.n_modes),
        };
        let h = rows_to_matrix("H", &self.h_matrix, n)?;
        let h_linear = DVector::from_vec(self.h_linear.unwrap_or_else(|| vec![0.0; n]));
        let re = rows_to_matrix("Lambda.re", &self.lambda.re, n)?;
        let im = rows_to_matrix("Lambda.im", &self.lambda.im, n)?;
        if re.shape() != im.shape() {
            return Err(ModelError::Shape(format!(
                "Lambda.re is {:?} but Lambda.im is {:?}",
                re.shape(),
                im.shape()
            )));
        }
        let lambda = linalg::complexify(&re, &im);
        let a = rows_to_matrix("A", &self.a_meas, n)?;
        let b = rows_to_matrix("B", &self.b_meas, n)?;
        LinearModel::new(sigma, h, h_linear, lambda, a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Offending eigenvalue, asymmetry or determinant.
    pub magnitude: f64,
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    fn new(name: &'static str, passed: bool, magnitude: f64) -> Self {
        Self {
            name,
            passed,
            magnitude,
            severity: Severity::Error,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    /// True when every error-severity check passes.
    pub fn passed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.passed || c.severity == Severity::Warning)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = match (c.passed, c.severity) {
                (true, _) => "pass",
                (false, Severity::Warning) => "warn",
                (false, Severity::Error) => "FAIL",
            };
            writeln!(f, "  {status:4} {:<24} {:e}", c.name, c.magnitude)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn damped_cavity_lambda() {
        let s = (0.5_f64).sqrt();
        let lambda = DMatrix::from_row_slice(1, 2, &[c(s, 0.0), c(0.0, s)]);
        let (delta, omega) = decompose_lambda(&lambda);
        assert_abs_diff_eq!(delta, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-14);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.5, 0.0]);
        assert_abs_diff_eq!(omega, expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_lambda() {
        let (delta, omega) = decompose_lambda(&DMatrix::zeros(3, 2));
        assert_eq!(delta, DMatrix::zeros(2, 2));
        assert_eq!(omega, DMatrix::zeros(2, 2));
    }

    #[test]
    fn thermal_pair_lambda() {
        let (gamma, nbar): (f64, f64) = (0.7, 3.0);
        let up = (gamma * (nbar + 1.0)).sqrt();
        let down = (gamma * nbar).sqrt();
        let jumps = [
            scaled(&annihilation(1, 0), c(up, 0.0)),
            scaled(&creation(1, 0), c(down, 0.0)),
        ];
        let lambda = stack_complex(&jumps, 2);
        let (delta, omega) = decompose_lambda(&lambda);
        let d = gamma * (2.0 * nbar + 1.0) / 2.0;
        assert_abs_diff_eq!(delta, DMatrix::identity(2, 2) * d, epsilon = 1e-14);
        assert_abs_diff_eq!(omega, linalg::canonical_sigma(1) * (gamma / 2.0), epsilon = 1e-14);
    }

    #[test]
    fn cavity_drift_and_diffusion() {
        let m = LinearModel::decaying_cavity(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(m.drift_matrix(), DMatrix::identity(2, 2) * -0.5, epsilon = 1e-14);
        let eta = 0.8;
        let m = LinearModel::decaying_cavity(1.0, eta, 0.0);
        let d = m.diffusion_matrix().unwrap();
        assert_abs_diff_eq!(d, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 - eta, 1.0])), epsilon = 1e-14);
        // measurement matrices of √(ηΓ) a
        let s = (eta / 2.0).sqrt();
        assert_abs_diff_eq!(m.a_meas(), &DMatrix::from_row_slice(1, 2, &[s, 0.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(m.b_meas(), &DMatrix::from_row_slice(1, 2, &[0.0, s]), epsilon = 1e-15);
    }

    #[test]
    fn empty_model_drift_is_zero() {
        let m = LinearModel::from_channels(1, DMatrix::zeros(2, 2), &[], &[]).unwrap();
        assert_eq!(m.drift_matrix(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn unobserved_diffusion() {
        // Δ = I from jumps x and p
        let jumps = [quadrature(1, 0), quadrature(1, 1)];
        let m = LinearModel::from_channels(1, DMatrix::zeros(2, 2), &jumps, &[]).unwrap();
        assert_abs_diff_eq!(m.diffusion_matrix().unwrap(), DMatrix::identity(2, 2) * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn validation_passes_for_cavity() {
        let report = LinearModel::decaying_cavity(1.0, 0.9, 0.0).validate();
        assert!(report.passed(), "{report}");
        assert!(report.checks.iter().all(|c| c.passed));
    }

    #[test]
    fn overcounted_measurement_fails_information_constraint() {
        let base = LinearModel::decaying_cavity(1.0, 1.0, 0.0);
        let m = LinearModel::new(
            base.sigma().clone(),
            base.h_matrix().clone(),
            base.h_linear().clone(),
            base.lambda().clone(),
            base.a_meas() * 10.0,
            base.b_meas().clone(),
        )
        .unwrap();
        let report = m.validate();
        assert!(!report.check("information_constraint").unwrap().passed);
        assert!(!report.passed());
    }

    #[test]
    fn overcounted_b_gives_negative_diffusion() {
        let base = LinearModel::decaying_cavity(1.0, 1.0, 0.0);
        let m = LinearModel::new(
            base.sigma().clone(),
            base.h_matrix().clone(),
            base.h_linear().clone(),
            base.lambda().clone(),
            base.a_meas().clone(),
            base.b_meas() * 10.0,
        )
        .unwrap();
        assert!(matches!(m.diffusion_matrix(), Err(ModelError::NonPositiveDiffusion { .. })));
    }

    #[test]
    fn asymmetric_hamiltonian_fails() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        let m = LinearModel::from_channels(1, h, &[], &[]).unwrap();
        let report = m.validate();
        assert!(!report.check("hamiltonian_symmetric").unwrap().passed);
    }

    #[test]
    fn coarse_grained_downgrades_information_constraint() {
        let base = LinearModel::decaying_cavity(1.0, 1.0, 0.0);
        let m = LinearModel::new(
            base.sigma().clone(),
            base.h_matrix().clone(),
            base.h_linear().clone(),
            base.lambda().clone(),
            base.a_meas() * 1.2,
            base.b_meas().clone(),
        )
        .unwrap()
        .with_coarse_grained(true);
        let report = m.validate();
        let info = report.check("information_constraint").unwrap();
        assert!(!info.passed);
        assert_eq!(info.severity, Severity::Warning);
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let m = LinearModel::decaying_cavity(2.0, 0.5, 0.3);
        let text = m.to_json_value().to_string();
        let back = LinearModel::from_json_str(&text).unwrap();
        assert_abs_diff_eq!(back.a_meas(), m.a_meas(), epsilon = 0.0);
        assert_eq!(back.lambda(), m.lambda());

        let bad = r#"{"n_modes":1,"H":[[0,0],[0,0]],"Lambda":{"re":[],"im":[]},"A":[],"B":[],"extra":1}"#;
        assert!(matches!(LinearModel::from_json_str(bad), Err(ModelError::Json { .. })));
        let ok = r#"{"n_modes":1,"H":[[0,0],[0,0]],"Lambda":{"re":[],"im":[]},"A":[],"B":[]}"#;
        let m = LinearModel::from_json_str(ok).unwrap();
        assert_eq!(m.n_channels(), 0);
        assert_eq!(m.sigma(), &linalg::canonical_sigma(1));
    }

    #[test]
    fn json_syntax_error_reports_position() {
        let err = LinearModel::from_json_str("{\n  \"n_modes\": 1,\n  oops\n}").unwrap_err();
        match err {
            ModelError::Json { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    fn complex_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
        proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), rows * cols)
            .prop_map(move |v| DMatrix::from_iterator(rows, cols, v.into_iter().map(|(a, b)| c(a, b))))
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs_gram(lambda in complex_matrix(3, 4)) {
            let (delta, omega) = decompose_lambda(&lambda);
            let gram = lambda.adjoint() * &lambda;
            let rebuilt = linalg::complexify(&delta, &omega);
            prop_assert!((gram - rebuilt).norm() < 1e-13);
            prop_assert!(linalg::relative_skew_defect(&omega) < 1e-15 || omega.norm() < 1e-15);
        }

        #[test]
        fn decomposition_is_unitarily_invariant(lambda in complex_matrix(2, 2), theta in 0.0..6.3f64, phi in 0.0..6.3f64) {
            // 2x2 unitary acting on the channel index
            let u = DMatrix::from_row_slice(2, 2, &[
                Complex64::from_polar(1.0, phi) * theta.cos(), c(-theta.sin(), 0.0),
                Complex64::from_polar(1.0, phi) * theta.sin(), c(theta.cos(), 0.0),
            ]);
            let (d1, o1) = decompose_lambda(&lambda);
            let (d2, o2) = decompose_lambda(&(u * &lambda));
            prop_assert!((d1 - d2).norm() < 1e-12);
            prop_assert!((o1 - o2).norm() < 1e-12);
        }
    }

    #[test]
    fn drift_and_diffusion_are_deterministic() {
        let m = LinearModel::decaying_cavity(1.3, 0.7, 0.2);
        assert_eq!(m.drift_matrix(), m.drift_matrix());
        assert_eq!(m.diffusion_matrix().unwrap(), m.diffusion_matrix().unwrap());
    }
}
