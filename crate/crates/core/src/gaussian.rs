//! Gaussian-operator calculus.
//!
//! A Gaussian operator is fixed by its first moments `r` and covariance `V`
//! (vacuum `V = I`). Equivalently it is proportional to
//! `exp(-(r̂ - r)ᵀ Γ (r̂ - r))`; [`gamma_exponent`] converts between the two
//! and [`FockOracle`] checks the conversion by brute force.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg;
use crate::model::PSD_FLOOR;

/// κ used for pure directions when a finite exponent is requested.
pub const KAPPA_CAP: f64 = 46.0;

#[derive(Debug, Error, PartialEq)]
pub enum GaussianError {
    #[error("covariance determinant {0:e} is not positive")]
    NonPositiveDeterminant(f64),
    #[error("covariance is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("symplectic eigenvalue {tau} is too close to 1: the exponent is unbounded")]
    PureDirection { tau: f64 },
    #[error("V_E + V_ρ is singular")]
    SingularSum,
    #[error("effect has divergent quadratures {0:?}; only the marginal density over the remaining ones is defined")]
    DivergentEffect(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Fock cutoff {cutoff} too small: tail weight {tail:e}")]
    CutoffTooSmall { cutoff: usize, tail: f64 },
    #[error("the Fock oracle handles a single mode only")]
    SingleModeOnly,
}

/// Conditional state: mean vector and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn vacuum(n_modes: usize) -> Self {
        Self::coherent(DVector::zeros(2 * n_modes))
    }

    pub fn coherent(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(n, n),
        }
    }

    pub fn thermal(n_modes: usize, nbar: f64) -> Self {
        let n = 2 * n_modes;
        Self {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n) * (2.0 * nbar + 1.0),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn purity(&self) -> Result<f64, GaussianError> {
        purity(&self.cov)
    }

    pub fn as_effect(&self) -> GaussianEffect {
        GaussianEffect::new(self.mean.clone(), self.cov.clone())
    }
}

/// Retrodicted effect operator. Quadratures listed in `divergent` carry no
/// information (their covariance grew without bound).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEffect {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub divergent: Vec<usize>,
}

impl GaussianEffect {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            mean,
            cov,
            divergent: Vec::new(),
        }
    }

    /// The identity operator: flat in every quadrature.
    pub fn identity(n_modes: usize) -> Self {
        let n = 2 * n_modes;
        Self {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n) * crate::riccati::FREEZE_THRESHOLD,
            divergent: (0..n).collect(),
        }
    }

    pub fn with_divergent(mut self, divergent: Vec<usize>) -> Self {
        self.divergent = divergent;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn is_identity(&self) -> bool {
        self.divergent.len() == self.mean.len()
    }

    pub fn as_state(&self) -> GaussianState {
        GaussianState::new(self.mean.clone(), self.cov.clone())
    }
}

/// `1/√det V`.
pub fn purity(cov: &DMatrix<f64>) -> Result<f64, GaussianError> {
    let det = cov.determinant();
    if !(det > 0.0) {
        return Err(GaussianError::NonPositiveDeterminant(det));
    }
    Ok(1.0 / det.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeisenbergCheck {
    pub passed: bool,
    pub min_eigenvalue: f64,
}

/// Checks `V + iσ ≥ 0`.
pub fn heisenberg_check(cov: &DMatrix<f64>, sigma: &DMatrix<f64>) -> HeisenbergCheck {
    let min = linalg::min_hermitian_eigenvalue(&linalg::complexify(cov, sigma));
    HeisenbergCheck {
        passed: min >= PSD_FLOOR,
        min_eigenvalue: min,
    }
}

/// Symplectic diagonalization `V = Sᵀ(T⊕T)S`.
#[derive(Debug, Clone)]
pub struct WilliamsonDecomposition {
    pub s: DMatrix<f64>,
    /// Symplectic eigenvalues, descending.
    pub tau: Vec<f64>,
    pub residual: f64,
}

impl WilliamsonDecomposition {
    /// `Sᵀ(T⊕T)S`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.s.transpose() * self.diagonal() * &self.s
    }

    fn diagonal(&self) -> DMatrix<f64> {
        let t: Vec<f64> = self.tau.iter().chain(self.tau.iter()).copied().collect();
        DMatrix::from_diagonal(&DVector::from_vec(t))
    }
}

fn symmetric_power(v: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>, GaussianError> {
    let eig = v.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(GaussianError::NotPositiveDefinite(min));
    }
    let d = eig.eigenvalues.map(|x| x.powf(power));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Williamson decomposition of a positive-definite covariance in the
/// canonical ordering.
///
/// `iV^{1/2}σV^{1/2}` is Hermitian with eigenvalues `±τ_k`. Each
/// eigenvector `a + ib` of `+τ_k` gives an orthonormal pair `(√2 b, √2 a)`
/// which brings `V^{1/2}σV^{1/2}` to `[[0, T], [-T, 0]]`.
pub fn williamson(cov: &DMatrix<f64>) -> Result<WilliamsonDecomposition, GaussianError> {
    let n = cov.nrows();
    if n == 0 || n % 2 != 0 || cov.ncols() != n {
        return Err(GaussianError::Dimension(format!("covariance is {:?}", cov.shape())));
    }
    let m = n / 2;
    let half = symmetric_power(cov, 0.5)?;
    let sigma = linalg::canonical_sigma(m);
    let k = &half * &sigma * &half;
    let ik = k.map(|x| Complex64::new(0.0, x));
    let eig = ik.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut o = DMatrix::zeros(n, n);
    let mut tau = Vec::with_capacity(m);
    for (slot, &idx) in order.iter().take(m).enumerate() {
        tau.push(eig.eigenvalues[idx]);
        let u = eig.eigenvectors.column(idx);
        for r in 0..n {
            o[(r, slot)] = std::f64::consts::SQRT_2 * u[r].im;
            o[(r, m + slot)] = std::f64::consts::SQRT_2 * u[r].re;
        }
    }
    let inv_sqrt_t: Vec<f64> = tau.iter().chain(tau.iter()).map(|t| 1.0 / t.sqrt()).collect();
    let s = DMatrix::from_diagonal(&DVector::from_vec(inv_sqrt_t)) * o.transpose() * half;
    let mut w = WilliamsonDecomposition { s, tau, residual: 0.0 };
    w.residual = (w.reconstruct() - cov).norm();
    Ok(w)
}

/// Symplectic defect `‖SᵀσS - σ‖_F`.
pub fn symplectic_defect(s: &DMatrix<f64>) -> f64 {
    let sigma = linalg::canonical_sigma(s.nrows() / 2);
    (s.transpose() * &sigma * s - sigma).norm()
}

/// `κ` with `τ = coth(κ/2)`, i.e. `κ = ln((τ + 1)/(τ - 1))`.
pub fn kappa_from_tau(tau: f64) -> f64 {
    ((tau + 1.0) / (tau - 1.0)).ln()
}

/// Exponent matrix `Γ` of the operator `exp(-(r̂ - r)ᵀΓ(r̂ - r))` whose
/// covariance is `cov`: `Γ = S⁻¹(K⊕K)S⁻ᵀ/2` with `K = diag(κ_k)`.
///
/// Pure directions (`τ ≤ 1 + 1e-9`) are an error unless `cap_pure` is set,
/// in which case they use `κ = 46`.
pub fn gamma_exponent(cov: &DMatrix<f64>, cap_pure: bool) -> Result<DMatrix<f64>, GaussianError> {
    let w = williamson(cov)?;
    let mut kappa = Vec::with_capacity(w.tau.len());
    for &t in &w.tau {
        if t <= 1.0 + 1e-9 {
            if !cap_pure {
                return Err(GaussianError::PureDirection { tau: t });
            }
            kappa.push(KAPPA_CAP);
        } else {
            kappa.push(kappa_from_tau(t).min(KAPPA_CAP));
        }
    }
    let k: Vec<f64> = kappa.iter().chain(kappa.iter()).map(|x| 0.5 * x).collect();
    let s_inv = w
        .s
        .clone()
        .try_inverse()
        .ok_or(GaussianError::NotPositiveDefinite(0.0))?;
    let mut g = &s_inv * DMatrix::from_diagonal(&DVector::from_vec(k)) * s_inv.transpose();
    linalg::symmetrize(&mut g);
    Ok(g)
}

/// `Tr exp(-r̂ᵀΓr̂) = Π_k √(τ_k² - 1)/2` for the operator with covariance
/// `cov`. Infinite for a flat effect, zero in a pure direction.
pub fn effect_trace(cov: &DMatrix<f64>) -> Result<f64, GaussianError> {
    let w = williamson(cov)?;
    Ok(w.tau.iter().map(|t| (t * t - 1.0).max(0.0).sqrt() / 2.0).product())
}

fn check_dims(a: &DVector<f64>, b: &DVector<f64>) -> Result<(), GaussianError> {
    if a.len() != b.len() {
        return Err(GaussianError::Dimension(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `Tr{E ρ}` for a unit-trace effect:
/// `2^M exp(-δᵀ(V_E + V_ρ)⁻¹δ)/√det(V_E + V_ρ)`, `δ = r_E - r_ρ`.
///
/// Equals the purity when `E = ρ`.
pub fn outcome_density(effect: &GaussianEffect, state: &GaussianState) -> Result<f64, GaussianError> {
    if !effect.divergent.is_empty() {
        return Err(GaussianError::DivergentEffect(effect.divergent.clone()));
    }
    check_dims(&effect.mean, &state.mean)?;
    let m = state.mean.len() / 2;
    let (quad, det) = gaussian_form(&(&effect.cov + &state.cov), &(&effect.mean - &state.mean))?;
    Ok(2f64.powi(m as i32) * (-quad).exp() / det.sqrt())
}

fn gaussian_form(sum: &DMatrix<f64>, delta: &DVector<f64>) -> Result<(f64, f64), GaussianError> {
    let chol = sum.clone().cholesky().ok_or(GaussianError::SingularSum)?;
    let det = chol.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(GaussianError::SingularSum);
    }
    let quad = delta.dot(&chol.solve(delta));
    Ok((quad, det))
}

/// Probability density of the effect's outcome `r_E` given `state`,
/// normalized over `r_E`. Divergent quadratures of the effect are
/// marginalized: the density is over the remaining `n` coordinates,
/// `exp(-δᵀS⁻¹δ)/(π^{n/2}√det S)` with `S` the restricted `V_E + V_ρ`.
pub fn povm_density(effect: &GaussianEffect, state: &GaussianState) -> Result<f64, GaussianError> {
    check_dims(&effect.mean, &state.mean)?;
    let active: Vec<usize> = (0..effect.mean.len())
        .filter(|j| !effect.divergent.contains(j))
        .collect();
    if active.is_empty() {
        return Ok(1.0);
    }
    let sum = (&effect.cov + &state.cov).select_rows(&active).select_columns(&active);
    let delta = (&effect.mean - &state.mean).select_rows(&active);
    let (quad, det) = gaussian_form(&sum, &delta)?;
    let n = active.len() as f64;
    Ok((-quad).exp() / (std::f64::consts::PI.powf(n / 2.0) * det.sqrt()))
}

/// Mean `uᵀr` and variance `uᵀ(V/2)u` along the unit direction `u`.
pub fn marginal(mean: &DVector<f64>, cov: &DMatrix<f64>, u: &DVector<f64>) -> (f64, f64) {
    (u.dot(mean), 0.5 * u.dot(&(cov * u)))
}

/// Dense single-mode operators in a Fock basis truncated at `d` levels.
#[derive(Debug, Clone)]
pub struct FockOracle {
    pub d: usize,
    pub a: DMatrix<Complex64>,
    pub ad: DMatrix<Complex64>,
    pub x: DMatrix<Complex64>,
    pub p: DMatrix<Complex64>,
    xx: DMatrix<Complex64>,
    pp: DMatrix<Complex64>,
    xp_px: DMatrix<Complex64>,
}

impl FockOracle {
    pub const DEFAULT_CUTOFF: usize = 40;

    pub fn new(d: usize) -> Self {
        let c = |x: f64| Complex64::new(x, 0.0);
        let a = DMatrix::from_fn(d, d, |i, j| if j == i + 1 { c((j as f64).sqrt()) } else { c(0.0) });
        let ad = a.adjoint();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = (&a + &ad) * c(s);
        let p = (&a - &ad) * Complex64::new(0.0, -s);
        // exact truncations of the quadratic forms, not products of truncated x and p
        let a2 = DMatrix::from_fn(d, d, |i, j| {
            if j == i + 2 {
                c(((j * (j - 1)) as f64).sqrt())
            } else {
                c(0.0)
            }
        });
        let ad2 = a2.adjoint();
        let n2 = DMatrix::from_fn(d, d, |i, j| if i == j { c(2.0 * i as f64 + 1.0) } else { c(0.0) });
        let xx = (&a2 + &ad2 + &n2) * c(0.5);
        let pp = (&n2 - &a2 - &ad2) * c(0.5);
        let xp_px = (&a2 - &ad2) * Complex64::new(0.0, -1.0);
        Self { d, a, ad, x, p, xx, pp, xp_px }
    }

    /// Hermitian matrix of `(r̂ - c)ᵀΓ(r̂ - c)`.
    pub fn quadratic_form(&self, gamma: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<Complex64> {
        let c = |x: f64| Complex64::new(x, 0.0);
        let (gxx, gpp) = (gamma[(0, 0)], gamma[(1, 1)]);
        let gxp = 0.5 * (gamma[(0, 1)] + gamma[(1, 0)]);
        let (cx, cp) = (center[0], center[1]);
        let id = DMatrix::<Complex64>::identity(self.d, self.d);
        let mut h = &self.xx * c(gxx) + &self.pp * c(gpp) + &self.xp_px * c(gxp);
        h -= &self.x * c(2.0 * (gxx * cx + gxp * cp));
        h -= &self.p * c(2.0 * (gpp * cp + gxp * cx));
        h += id * c(gxx * cx * cx + gpp * cp * cp + 2.0 * gxp * cx * cp);
        h
    }

    /// `exp(-(r̂ - c)ᵀΓ(r̂ - c))`, unnormalized.
    pub fn gaussian_operator(&self, gamma: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<Complex64> {
        let eig = self.quadratic_form(gamma, center).symmetric_eigen();
        let w = eig.eigenvalues.map(|e| Complex64::new((-e).exp(), 0.0));
        &eig.eigenvectors * DMatrix::from_diagonal(&w) * eig.eigenvectors.adjoint()
    }

    /// Unit-trace density operator with the given moments.
    pub fn state(&self, state: &GaussianState) -> Result<DMatrix<Complex64>, GaussianError> {
        if state.mean.len() != 2 {
            return Err(GaussianError::SingleModeOnly);
        }
        let gamma = gamma_exponent(&state.cov, true)?;
        let op = self.gaussian_operator(&gamma, &state.mean);
        let tr = op.trace();
        let rho = op / tr;
        self.check_tail(&rho)?;
        Ok(rho)
    }

    /// Symmetrized moments `(⟨r⟩, ⟨{Δr_j, Δr_k}⟩)` of a density operator.
    pub fn moments(&self, rho: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<f64>) {
        let ev = |op: &DMatrix<Complex64>| (rho * op).trace().re;
        let (mx, mp) = (ev(&self.x), ev(&self.p));
        let vxx = 2.0 * (ev(&self.xx) - mx * mx);
        let vpp = 2.0 * (ev(&self.pp) - mp * mp);
        let vxp = ev(&self.xp_px) - 2.0 * mx * mp;
        (
            DVector::from_vec(vec![mx, mp]),
            DMatrix::from_row_slice(2, 2, &[vxx, vxp, vxp, vpp]),
        )
    }

    fn check_tail(&self, op: &DMatrix<Complex64>) -> Result<(), GaussianError> {
        let total: f64 = (0..self.d).map(|i| op[(i, i)].re).sum();
        let tail: f64 = (self.d.saturating_sub(5)..self.d).map(|i| op[(i, i)].re).sum::<f64>() / total;
        if tail > 1e-8 {
            return Err(GaussianError::CutoffTooSmall { cutoff: self.d, tail });
        }
        Ok(())
    }
}

/// Brute-force `Tr{E ρ}` in a truncated Fock space, with `E` the
/// unnormalized operator `exp(-(r̂ - r_E)ᵀΓ_E(r̂ - r_E))` (the identity for
/// a fully divergent effect) and `ρ` normalized.
pub fn fock_oracle_trace(
    effect: &GaussianEffect,
    state: &GaussianState,
    cutoff: usize,
) -> Result<f64, GaussianError> {
    if effect.mean.len() != 2 || state.mean.len() != 2 {
        return Err(GaussianError::SingleModeOnly);
    }
    let oracle = FockOracle::new(cutoff);
    let rho = oracle.state(state)?;
    if effect.is_identity() {
        return Ok(rho.trace().re);
    }
    let gamma = gamma_exponent(&effect.cov, true)?;
    let e = oracle.gaussian_operator(&gamma, &effect.mean);
    oracle.check_tail(&(&e / e.trace()))?;
    Ok((e * rho).trace().re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn squeezer(r: f64, theta: f64) -> DMatrix<f64> {
        let (c, s) = (theta.cos(), theta.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        &rot * diag(&[(-r).exp(), r.exp()]) * rot.transpose()
    }

    #[test]
    fn purity_examples() {
        assert_relative_eq!(purity(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        assert_relative_eq!(purity(&(DMatrix::identity(2, 2) * 5.0)).unwrap(), 0.2, epsilon = 1e-15);
        assert_relative_eq!(purity(&diag(&[1.0 / 3.0, 3.0])).unwrap(), 1.0, epsilon = 1e-15);
        assert!(purity(&diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn heisenberg_examples() {
        let s = linalg::canonical_sigma(1);
        let v = heisenberg_check(&DMatrix::identity(2, 2), &s);
        assert!(v.passed && v.min_eigenvalue.abs() < 1e-14);
        assert!(!heisenberg_check(&diag(&[0.5, 0.5]), &s).passed);
        assert!(heisenberg_check(&diag(&[1.0 / 3.0, 3.0]), &s).passed);
    }

    #[test]
    fn williamson_examples() {
        let w = williamson(&DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(w.tau[0], 1.0, epsilon = 1e-14);
        assert!(symplectic_defect(&w.s) < 1e-12);
        assert!(w.residual < 1e-12);

        let w = williamson(&diag(&[1.0 / 3.0, 3.0])).unwrap();
        assert_relative_eq!(w.tau[0], 1.0, epsilon = 1e-12);
        assert!(symplectic_defect(&w.s) < 1e-10);
        assert!(w.residual < 1e-10);

        let w = williamson(&(DMatrix::identity(2, 2) * 5.0)).unwrap();
        assert_relative_eq!(w.tau[0], 5.0, epsilon = 1e-13);
        assert!(matches!(williamson(&diag(&[1.0, 0.0])), Err(GaussianError::NotPositiveDefinite(_))));
    }

    #[test]
    fn williamson_two_mode_degenerate() {
        let v = DMatrix::identity(4, 4) * 3.0;
        let w = williamson(&v).unwrap();
        assert_relative_eq!(w.tau[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(w.tau[1], 3.0, epsilon = 1e-12);
        assert!(symplectic_defect(&w.s) < 1e-10);
        assert!(w.residual < 1e-10);
    }

    #[test]
    fn thermal_exponent_is_half_kappa() {
        let tau = 1.0 / (1.0 - (-1.0f64).exp());
        let g = gamma_exponent(&(DMatrix::identity(2, 2) * tau), false).unwrap();
        let kappa = kappa_from_tau(tau);
        assert_relative_eq!(g, DMatrix::identity(2, 2) * (kappa / 2.0), epsilon = 1e-12);
        // flat limit
        let g = gamma_exponent(&(DMatrix::identity(2, 2) * 1e8), false).unwrap();
        assert!(g.norm() < 1e-7);
        assert!(matches!(
            gamma_exponent(&DMatrix::identity(2, 2), false),
            Err(GaussianError::PureDirection { .. })
        ));
        let capped = gamma_exponent(&DMatrix::identity(2, 2), true).unwrap();
        assert_relative_eq!(capped, DMatrix::identity(2, 2) * (KAPPA_CAP / 2.0), epsilon = 1e-9);
    }

    #[test]
    fn outcome_density_examples() {
        let vac = GaussianState::vacuum(1);
        assert_relative_eq!(outcome_density(&vac.as_effect(), &vac).unwrap(), 1.0, epsilon = 1e-15);

        // δᵀ(2I)⁻¹δ = 50
        let far = GaussianEffect::new(DVector::from_vec(vec![10.0, 0.0]), DMatrix::identity(2, 2));
        assert_relative_eq!(outcome_density(&far, &vac).unwrap(), (-50.0f64).exp(), max_relative = 1e-12);

        let sq = GaussianState::new(DVector::from_vec(vec![0.3, -0.2]), squeezer(0.4, 0.7));
        assert_relative_eq!(outcome_density(&sq.as_effect(), &sq).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            outcome_density(&GaussianEffect::identity(1), &vac),
            Err(GaussianError::DivergentEffect(_))
        ));
    }

    #[test]
    fn marginal_examples() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let p = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(marginal(&DVector::zeros(2), &DMatrix::identity(2, 2), &x), (0.0, 0.5));
        let mean = DVector::from_vec(vec![2.0, -1.0]);
        assert_eq!(marginal(&mean, &DMatrix::identity(2, 2), &p), (-1.0, 0.5));
        let (_, var) = marginal(&mean, &diag(&[1.0 / 3.0, 3.0]), &x);
        assert_relative_eq!(var, 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn fock_commutator() {
        let o = FockOracle::new(30);
        let comm = &o.x * &o.p - &o.p * &o.x;
        for i in 0..29 {
            for j in 0..29 {
                let expect = if i == j { Complex64::new(0.0, 1.0) } else { Complex64::new(0.0, 0.0) };
                assert!((comm[(i, j)] - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fock_pins_the_exponent_convention() {
        // the operator built from Γ must reproduce the covariance it came from
        let o = FockOracle::new(FockOracle::DEFAULT_CUTOFF);
        let cov = squeezer(0.3, 0.4) * 2.0;
        let mean = DVector::from_vec(vec![0.5, -0.8]);
        let rho = o.state(&GaussianState::new(mean.clone(), cov.clone())).unwrap();
        let (m, v) = o.moments(&rho);
        assert_relative_eq!(m, mean, epsilon = 1e-8);
        assert_relative_eq!(v, cov, epsilon = 1e-8);
    }

    #[test]
    fn fock_trace_matches_effect_trace() {
        let o = FockOracle::new(FockOracle::DEFAULT_CUTOFF);
        for tau in [1.5, 2.0, 3.0] {
            let cov = DMatrix::identity(2, 2) * tau;
            let g = gamma_exponent(&cov, false).unwrap();
            let tr = o.gaussian_operator(&g, &DVector::zeros(2)).trace().re;
            assert_relative_eq!(tr, effect_trace(&cov).unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn fock_oracle_examples() {
        let vac = GaussianState::vacuum(1);
        let coh = GaussianState::coherent(DVector::from_vec(vec![1.0, -0.5]));
        assert_relative_eq!(fock_oracle_trace(&GaussianEffect::identity(1), &coh, 40).unwrap(), 1.0, epsilon = 1e-10);
        // capped vacuum exponent: Tr{E ρ}/Tr{E} = 1
        let e = vac.as_effect();
        let g = gamma_exponent(&e.cov, true).unwrap();
        let tr_e = FockOracle::new(40).gaussian_operator(&g, &e.mean).trace().re;
        assert_relative_eq!(fock_oracle_trace(&e, &vac, 40).unwrap() / tr_e, 1.0, epsilon = 1e-10);

        let thermal = GaussianEffect::new(DVector::zeros(2), DMatrix::identity(2, 2) * 3.0);
        let fock = fock_oracle_trace(&thermal, &vac, 40).unwrap();
        let formula = effect_trace(&thermal.cov).unwrap() * outcome_density(&thermal, &vac).unwrap();
        assert_relative_eq!(fock, formula, max_relative = 1e-6);

        let thermal2 = GaussianEffect::new(DVector::zeros(2), DMatrix::identity(2, 2) * 2.0);
        let displaced = GaussianState::coherent(DVector::from_vec(vec![1.0, 0.0]));
        let fock = fock_oracle_trace(&thermal2, &displaced, 40).unwrap();
        let formula = effect_trace(&thermal2.cov).unwrap() * outcome_density(&thermal2, &displaced).unwrap();
        assert_relative_eq!(fock, formula, max_relative = 1e-6);
    }

    #[test]
    fn fock_cutoff_too_small() {
        let hot = GaussianState::thermal(1, 10.0);
        assert!(matches!(
            fock_oracle_trace(&GaussianEffect::identity(1), &hot, 20),
            Err(GaussianError::CutoffTooSmall { .. })
        ));
    }

    #[test]
    fn heterodyne_resolution_of_identity() {
        let effect_cov = DMatrix::identity(2, 2);
        let state = GaussianState::new(DVector::from_vec(vec![0.7, -0.4]), squeezer(0.5, 0.3) * 1.5);
        let (n, span) = (241, 12.0);
        let h = span / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r = DVector::from_vec(vec![-span / 2.0 + i as f64 * h, -span / 2.0 + j as f64 * h]);
                total += povm_density(&GaussianEffect::new(r, effect_cov.clone()), &state).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn marginalized_povm_density_is_normalized() {
        let state = GaussianState::vacuum(1);
        let h = 0.01;
        let total: f64 = (0..2001)
            .map(|i| {
                let r = DVector::from_vec(vec![-10.0 + i as f64 * h, 0.0]);
                let e = GaussianEffect::new(r, diag(&[0.25, 1e9])).with_divergent(vec![1]);
                povm_density(&e, &state).unwrap() * h
            })
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    fn physical_cov() -> impl Strategy<Value = DMatrix<f64>> {
        (1.0..3.0f64, 0.0..0.8f64, 0.0..3.2f64).prop_map(|(tau, r, th)| squeezer(r, th) * tau)
    }

    fn two_mode_cov() -> impl Strategy<Value = DMatrix<f64>> {
        (proptest::collection::vec(-0.6..0.6f64, 16), 1.0..3.0f64, 1.0..3.0f64).prop_map(|(h, t1, t2)| {
            // symplectic S = exp(σ G) with G symmetric
            let g = DMatrix::from_row_slice(4, 4, &h);
            let g = (&g + g.transpose()) * 0.25;
            let s = (linalg::canonical_sigma(2) * g).exp();
            s.transpose() * diag(&[t1, t2, t1, t2]) * s
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn williamson_round_trip(v in two_mode_cov()) {
            let w = williamson(&v).unwrap();
            prop_assert!(w.residual < 1e-9 * (1.0 + v.norm()));
            prop_assert!(symplectic_defect(&w.s) < 1e-9 * (1.0 + w.s.norm_squared()));
            prop_assert!(w.tau.windows(2).all(|p| p[0] >= p[1]));
        }

        #[test]
        fn physical_purity_at_most_one(v in two_mode_cov()) {
            prop_assert!(heisenberg_check(&v, &linalg::canonical_sigma(2)).passed);
            prop_assert!(purity(&v).unwrap() <= 1.0 + 1e-9);
        }

        #[test]
        fn trace_symmetry(v1 in physical_cov(), v2 in physical_cov(), dx in -2.0..2.0f64, dp in -2.0..2.0f64) {
            let a = GaussianState::new(DVector::from_vec(vec![dx, dp]), v1);
            let b = GaussianState::new(DVector::zeros(2), v2);
            let ab = outcome_density(&a.as_effect(), &b).unwrap();
            let ba = outcome_density(&b.as_effect(), &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-14 * ab.max(1e-300));
        }
    }
}
