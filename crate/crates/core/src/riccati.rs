//! Deterministic covariance dynamics.
//!
//! Both directions share one Riccati form. Writing `Q̃ = Q + 2σBᵀA` forward
//! and `Q̃ = -Q - 2σBᵀA` backward, the conditional drift is
//! `M = Q̃ - 2V AᵀA` and the covariance obeys
//!
//! ```text
//! dV/ds = M V + V Mᵀ + D + 2V AᵀA V = Q̃V + VQ̃ᵀ + D - 2V AᵀA V
//! ```
//!
//! where `s = t` for states and `s = T - t` for effect operators.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::model::{LinearModel, ModelError, PSD_FLOOR};

/// Default magnitude at which an integrated covariance counts as divergent.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e12;
/// Diagonal value above which a quadrature is frozen as divergent during
/// steady-state relaxation and retrodiction.
pub const FREEZE_THRESHOLD: f64 = 1e9;
/// Residual tolerance factor required of a converged steady state.
pub const STEADY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "fwd", alias = "forward")]
    Forward,
    #[serde(rename = "bwd", alias = "backward")]
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fwd" | "forward" => Ok(Direction::Forward),
            "bwd" | "backward" => Ok(Direction::Backward),
            other => Err(format!("unknown direction '{other}' (expected fwd or bwd)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial covariance is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("initial covariance violates V + iσ ≥ 0 (min eigenvalue {0:e})")]
    NotPhysical(f64),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("covariance diverged at s = {time} (entries {indices:?} exceed the bound)")]
    DivergenceDetected {
        time: f64,
        indices: Vec<usize>,
        partial: Box<CovarianceTrajectory>,
    },
    #[error("no finite steady state: diagonal entries {diverging:?} diverge")]
    NoSteadyState {
        diverging: Vec<usize>,
        partial: Box<CovarianceSolution>,
    },
    #[error("steady-state relaxation did not converge (residual {residual:e})")]
    NotConverged {
        residual: f64,
        partial: Box<CovarianceSolution>,
    },
    #[error("unconditional drift is not stable (max eigenvalue real part {0:e})")]
    UnstableUnconditional(f64),
    #[error("Lyapunov operator is singular")]
    SingularLyapunov,
}

/// Steady or asymptotic covariance together with its conditional drift.
#[derive(Debug, Clone)]
pub struct CovarianceSolution {
    pub v: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub eigen_real_parts: Vec<f64>,
    pub direction: Direction,
    pub converged: bool,
    pub residual: f64,
    /// Diagonal indices frozen as divergent (empty for a finite solution).
    pub divergent: Vec<usize>,
}

impl CovarianceSolution {
    /// All drift eigenvalues have negative real part.
    pub fn is_stable(&self) -> bool {
        self.eigen_real_parts.iter().all(|&x| x < 0.0)
    }
}

/// Covariance sampled on a uniform grid of the integration variable `s`.
#[derive(Debug, Clone)]
pub struct CovarianceTrajectory {
    pub direction: Direction,
    pub times: Vec<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    pub final_residual: f64,
}

/// Precomputed coefficients of one Riccati direction.
#[derive(Debug, Clone)]
pub struct RiccatiSystem {
    pub direction: Direction,
    pub q_tilde: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub ata: DMatrix<f64>,
}

impl RiccatiSystem {
    pub fn new(model: &LinearModel, direction: Direction) -> Result<Self, ModelError> {
        let q = model.drift_matrix();
        let sba = model.sigma_bt_a();
        let q_tilde = match direction {
            Direction::Forward => q + 2.0 * sba,
            Direction::Backward => -q - 2.0 * sba,
        };
        Ok(Self {
            direction,
            q_tilde,
            d: model.diffusion_matrix()?,
            ata: model.ata(),
        })
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    /// `M = Q̃ - 2V AᵀA`.
    pub fn drift(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.q_tilde - 2.0 * v * &self.ata
    }

    /// `Q̃V + VQ̃ᵀ + D - 2V AᵀA V`.
    pub fn rhs(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let qv = &self.q_tilde * v;
        let vav = v * &self.ata * v;
        let mut f = &qv + qv.transpose() + &self.d - 2.0 * vav;
        linalg::symmetrize(&mut f);
        f
    }

    fn masked_rhs(&self, v: &DMatrix<f64>, frozen: &[bool]) -> DMatrix<f64> {
        let mut f = self.rhs(v);
        mask(&mut f, frozen);
        f
    }

    fn masked_drift_norm(&self, v: &DMatrix<f64>, frozen: &[bool]) -> f64 {
        let mut m = self.drift(v);
        mask(&mut m, frozen);
        m.norm()
    }

    /// Advances `v` by `ds` with classical RK4, subdividing so that each
    /// substep satisfies `h ‖M‖ ≤ 0.1`. Frozen indices are held fixed.
    pub fn advance(&self, v: &mut DMatrix<f64>, ds: f64, frozen: &[bool]) {
        let mut remaining = ds;
        while remaining > 0.0 {
            let scale = self.masked_drift_norm(v, frozen);
            let h_max = if scale > 0.0 { 0.1 / scale } else { remaining };
            let h = if h_max >= remaining {
                remaining
            } else {
                remaining / (remaining / h_max).ceil()
            };
            self.rk4_step(v, h, frozen);
            remaining -= h;
            if remaining < 1e-14 * ds {
                break;
            }
        }
    }

    fn rk4_step(&self, v: &mut DMatrix<f64>, h: f64, frozen: &[bool]) {
        let k1 = self.masked_rhs(v, frozen);
        let k2 = self.masked_rhs(&(&*v + &k1 * (0.5 * h)), frozen);
        let k3 = self.masked_rhs(&(&*v + &k2 * (0.5 * h)), frozen);
        let k4 = self.masked_rhs(&(&*v + &k3 * h), frozen);
        *v += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
        linalg::symmetrize(v);
    }
}

/// Zeroes the rows and columns of frozen indices.
pub fn mask(m: &mut DMatrix<f64>, frozen: &[bool]) {
    for (j, &f) in frozen.iter().enumerate() {
        if f {
            m.row_mut(j).fill(0.0);
            m.column_mut(j).fill(0.0);
        }
    }
}

/// Marks every active diagonal entry above `threshold` as frozen, zeroing its
/// off-diagonal couplings. Returns true if anything new was frozen.
pub fn freeze_divergent(v: &mut DMatrix<f64>, frozen: &mut [bool], threshold: f64) -> bool {
    let mut changed = false;
    for j in 0..frozen.len() {
        if !frozen[j] && !(v[(j, j)].abs() <= threshold) {
            frozen[j] = true;
            changed = true;
            let keep = if v[(j, j)].is_finite() { v[(j, j)] } else { threshold };
            v.row_mut(j).fill(0.0);
            v.column_mut(j).fill(0.0);
            v[(j, j)] = keep;
        }
    }
    changed
}

/// `M_ρ = Q + 2σBᵀA - 2V AᵀA`.
pub fn conditional_drift_forward(model: &LinearModel, v: &DMatrix<f64>) -> DMatrix<f64> {
    model.drift_matrix() + 2.0 * model.sigma_bt_a() - 2.0 * v * model.ata()
}

/// `M_E = -Q - 2σBᵀA - 2V AᵀA`.
pub fn conditional_drift_backward(model: &LinearModel, v: &DMatrix<f64>) -> DMatrix<f64> {
    -model.drift_matrix() - 2.0 * model.sigma_bt_a() - 2.0 * v * model.ata()
}

pub fn conditional_drift(model: &LinearModel, v: &DMatrix<f64>, direction: Direction) -> DMatrix<f64> {
    match direction {
        Direction::Forward => conditional_drift_forward(model, v),
        Direction::Backward => conditional_drift_backward(model, v),
    }
}

/// Right-hand side `dV/ds` of the Riccati equation in the given direction.
pub fn riccati_rhs(
    model: &LinearModel,
    v: &DMatrix<f64>,
    direction: Direction,
) -> Result<DMatrix<f64>, ModelError> {
    Ok(RiccatiSystem::new(model, direction)?.rhs(v))
}

/// Default transient step `1e-3 / |most negative real part of Q|`.
pub fn default_dt(model: &LinearModel) -> f64 {
    let most_negative = linalg::eigen_real_parts(&model.drift_matrix())
        .first()
        .copied()
        .unwrap_or(0.0);
    if most_negative < 0.0 {
        1e-3 / most_negative.abs()
    } else {
        1e-3
    }
}

fn check_initial(model: &LinearModel, v0: &DMatrix<f64>, direction: Direction) -> Result<(), RiccatiError> {
    if v0.shape() != (model.dim(), model.dim()) {
        return Err(ModelError::Shape(format!(
            "initial covariance is {:?}, expected {}x{}",
            v0.shape(),
            model.dim(),
            model.dim()
        ))
        .into());
    }
    let asym = linalg::relative_asymmetry(v0);
    if asym > 1e-12 {
        return Err(RiccatiError::NotSymmetric(asym));
    }
    if direction == Direction::Forward {
        let z = linalg::complexify(v0, model.sigma());
        let min = linalg::min_hermitian_eigenvalue(&z);
        if min < PSD_FLOOR {
            return Err(RiccatiError::NotPhysical(min));
        }
    }
    Ok(())
}

/// Integrates the covariance over `s ∈ [0, t_span]` on a grid of spacing
/// `dt`, returning every grid point. For the backward direction `s` is the
/// time remaining until the final condition.
pub fn integrate_covariance(
    model: &LinearModel,
    v0: &DMatrix<f64>,
    t_span: f64,
    dt: f64,
    direction: Direction,
    bound: f64,
) -> Result<CovarianceTrajectory, RiccatiError> {
    if !(dt > 0.0) || !(t_span >= 0.0) {
        return Err(RiccatiError::InvalidStep(format!("dt = {dt}, t_span = {t_span}")));
    }
    check_initial(model, v0, direction)?;
    let sys = RiccatiSystem::new(model, direction)?;
    let n = (t_span / dt - 1e-9).ceil().max(0.0) as usize;
    let frozen = vec![false; sys.dim()];
    let mut v = v0.clone();
    let mut traj = CovarianceTrajectory {
        direction,
        times: vec![0.0],
        covariances: vec![v.clone()],
        final_residual: 0.0,
    };
    for k in 0..n {
        let t0 = k as f64 * dt;
        let h = (t_span - t0).min(dt);
        sys.advance(&mut v, h, &frozen);
        let t1 = t0 + h;
        traj.times.push(t1);
        traj.covariances.push(v.clone());
        let over: Vec<usize> = (0..sys.dim())
            .filter(|&j| (0..sys.dim()).any(|i| !(v[(i, j)].abs() <= bound)))
            .collect();
        if !over.is_empty() {
            traj.final_residual = sys.rhs(&v).norm();
            return Err(RiccatiError::DivergenceDetected {
                time: t1,
                indices: over,
                partial: Box::new(traj),
            });
        }
    }
    traj.final_residual = sys.rhs(&v).norm();
    Ok(traj)
}

/// Options for [`steady_state_with`].
#[derive(Debug, Clone)]
pub struct SteadyOptions {
    /// Relaxation stops once `‖F(V)‖ ≤ relax_tol (1 + ‖V‖)`.
    pub relax_tol: f64,
    pub max_relax_steps: usize,
    pub freeze_threshold: f64,
    pub newton_iterations: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            relax_tol: 1e-6,
            max_relax_steps: 5_000_000,
            freeze_threshold: FREEZE_THRESHOLD,
            newton_iterations: 60,
        }
    }
}

/// Asymptotic covariance in the given direction with default options.
pub fn steady_state(model: &LinearModel, direction: Direction) -> Result<CovarianceSolution, RiccatiError> {
    steady_state_with(model, direction, &SteadyOptions::default())
}

/// Relaxes the covariance ODE from `V = I`, then polishes the active block
/// with Newton iterations on the algebraic Riccati residual.
pub fn steady_state_with(
    model: &LinearModel,
    direction: Direction,
    opts: &SteadyOptions,
) -> Result<CovarianceSolution, RiccatiError> {
    let sys = RiccatiSystem::new(model, direction)?;
    let n = sys.dim();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut frozen = vec![false; n];
    let mut relaxed = false;
    for _ in 0..opts.max_relax_steps {
        let f = sys.masked_rhs(&v, &frozen);
        let fnorm = f.norm();
        let vnorm = active_norm(&v, &frozen);
        if fnorm <= opts.relax_tol * (1.0 + vnorm) {
            relaxed = true;
            break;
        }
        let scale = sys.masked_drift_norm(&v, &frozen);
        let mut h = if scale > 0.0 { 0.1 / scale } else { f64::INFINITY };
        h = h.min(0.5 * (1.0 + vnorm) / fnorm);
        sys.rk4_step(&mut v, h, &frozen);
        freeze_divergent(&mut v, &mut frozen, opts.freeze_threshold);
        if frozen.iter().all(|&f| f) {
            break;
        }
    }

    let active: Vec<usize> = (0..n).filter(|&j| !frozen[j]).collect();
    if !active.is_empty() {
        newton_polish(&sys, &mut v, &active, opts.newton_iterations);
    }
    let residual = sys.masked_rhs(&v, &frozen).norm();
    let m = {
        let mut m = sys.drift(&v);
        mask(&mut m, &frozen);
        m
    };
    let eigen_real_parts = linalg::eigen_real_parts(&m);
    let divergent: Vec<usize> = (0..n).filter(|&j| frozen[j]).collect();
    let finite_ok = residual <= STEADY_TOLERANCE * (1.0 + active_norm(&v, &frozen));
    let stable = active_eigen_real_parts(&m, &active).iter().all(|&x| x < 0.0);
    let sol = CovarianceSolution {
        v,
        m,
        eigen_real_parts,
        direction,
        converged: finite_ok && stable && divergent.is_empty(),
        residual,
        divergent: divergent.clone(),
    };
    if !divergent.is_empty() {
        return Err(RiccatiError::NoSteadyState {
            diverging: divergent,
            partial: Box::new(sol),
        });
    }
    if !relaxed && !finite_ok {
        return Err(RiccatiError::NotConverged {
            residual,
            partial: Box::new(sol),
        });
    }
    Ok(sol)
}

fn active_norm(v: &DMatrix<f64>, frozen: &[bool]) -> f64 {
    let mut w = v.clone();
    mask(&mut w, frozen);
    w.norm()
}

fn active_eigen_real_parts(m: &DMatrix<f64>, active: &[usize]) -> Vec<f64> {
    if active.is_empty() {
        return Vec::new();
    }
    linalg::eigen_real_parts(&m.select_rows(active).select_columns(active))
}

/// Kleinman-Newton iteration on the sub-problem restricted to `active`.
fn newton_polish(sys: &RiccatiSystem, v: &mut DMatrix<f64>, active: &[usize], iterations: usize) {
    let sub = |m: &DMatrix<f64>| m.select_rows(active).select_columns(active);
    let reduced = RiccatiSystem {
        direction: sys.direction,
        q_tilde: sub(&sys.q_tilde),
        d: sub(&sys.d),
        ata: sub(&sys.ata),
    };
    let mut w = sub(v);
    let mut best = reduced.rhs(&w).norm();
    for _ in 0..iterations {
        let f = reduced.rhs(&w);
        let m = reduced.drift(&w);
        let Some(x) = linalg::solve_lyapunov(&m, &f) else {
            break;
        };
        let candidate = &w + x;
        let r = reduced.rhs(&candidate).norm();
        if !(r < best) {
            break;
        }
        w = candidate;
        best = r;
        if best <= 1e-14 * (1.0 + w.norm()) {
            break;
        }
    }
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            v[(i, j)] = w[(a, b)];
        }
    }
}

/// Diffusion of the unmonitored dynamics, `2σΔσᵀ`.
pub fn unconditional_diffusion(model: &LinearModel) -> DMatrix<f64> {
    let mut d = 2.0 * model.sigma() * model.delta() * model.sigma().transpose();
    linalg::symmetrize(&mut d);
    d
}

/// Solves `QV + VQᵀ + 2σΔσᵀ = 0`, the steady state of the averaged
/// (unconditioned) evolution.
pub fn lyapunov_unconditional(model: &LinearModel) -> Result<DMatrix<f64>, RiccatiError> {
    let q = model.drift_matrix();
    let max_re = linalg::eigen_real_parts(&q).last().copied().unwrap_or(0.0);
    if max_re >= 0.0 {
        return Err(RiccatiError::UnstableUnconditional(max_re));
    }
    linalg::solve_lyapunov(&q, &unconditional_diffusion(model)).ok_or(RiccatiError::SingularLyapunov)
}

/// `V + iσ` as a Hermitian matrix; positive semidefinite for physical states.
pub fn uncertainty_matrix(v: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<Complex64> {
    linalg::complexify(v, sigma)
}
