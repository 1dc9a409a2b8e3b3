//! Measurement records, the forward filter and the backward retrodictor.
//!
//! Means follow `dr = M r dt + K dY` with `K = VAᵀ - σBᵀ` forward and
//! `K = VAᵀ + σBᵀ` backward. Each step applies the gain and then the exact
//! propagator `Φ = exp(M dt)` of the frozen drift:
//!
//! ```text
//! forward   r_{k+1} = Φ_k (r_k     + K_k dY_k)      coefficients at t_k
//! backward  r_k     = Φ_k (r_{k+1} + K_k dY_k)      coefficients at t_{k+1}
//! ```
//!
//! To first order this is the Euler step with the noise coefficient at the
//! lower (forward) or upper (backward) endpoint, and it stays stable for the
//! very stiff drift right after an uninformative final condition.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use thiserror::Error;

use crate::gaussian::{GaussianEffect, GaussianState};
use crate::linalg;
use crate::model::{LinearModel, ModelError};
use crate::riccati::{self, CovarianceSolution, Direction, RiccatiError, RiccatiSystem, FREEZE_THRESHOLD};
use crate::rng;

/// Covariance `v_large` of the uninformative final effect.
pub const DEFAULT_V_LARGE: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("dt = {dt:e} exceeds 0.1/|λ_max| = {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("record has {found} channels, model has {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("state has dimension {found}, model has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("kernel grid does not match the record: {0}")]
    GridMismatch(String),
    #[error("steady state is not converged; mode functions are undefined")]
    NotConverged,
    #[error("covariance became non-finite at step {0}")]
    NonFinite(usize),
}

/// Homodyne increments `dY_k` over `[t_k, t_k + dt)`, row-major by step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub dt: f64,
    pub n_steps: usize,
    pub n_channels: usize,
    pub increments: Vec<f64>,
    pub seed: Option<u64>,
}

impl MeasurementRecord {
    pub fn new(dt: f64, n_channels: usize, increments: Vec<f64>) -> Result<Self, TrajectoryError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(TrajectoryError::InvalidGrid(format!("dt = {dt}")));
        }
        if n_channels == 0 && !increments.is_empty() {
            return Err(TrajectoryError::InvalidGrid("increments without channels".into()));
        }
        if n_channels > 0 && increments.len() % n_channels != 0 {
            return Err(TrajectoryError::InvalidGrid(format!(
                "{} values do not fill rows of {n_channels}",
                increments.len()
            )));
        }
        if let Some(k) = increments.iter().position(|x| !x.is_finite()) {
            return Err(TrajectoryError::InvalidGrid(format!("non-finite increment at index {k}")));
        }
        let n_steps = if n_channels == 0 { 0 } else { increments.len() / n_channels };
        Ok(Self {
            dt,
            n_steps,
            n_channels,
            increments,
            seed: None,
        })
    }

    /// Record of `n_steps` zero increments.
    pub fn zeros(dt: f64, n_steps: usize, n_channels: usize) -> Self {
        Self {
            dt,
            n_steps,
            n_channels,
            increments: vec![0.0; n_steps * n_channels],
            seed: None,
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_channels..(k + 1) * self.n_channels]
    }

    /// Start time of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Coarser record whose increments are sums of `factor` consecutive
    /// steps; trailing steps that do not fill a block are dropped.
    pub fn aggregate(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let n = self.n_steps / factor;
        let mut inc = vec![0.0; n * self.n_channels];
        for k in 0..n * factor {
            let dst = (k / factor) * self.n_channels;
            for (c, v) in self.row(k).iter().enumerate() {
                inc[dst + c] += v;
            }
        }
        Self {
            dt: self.dt * factor as f64,
            n_steps: n,
            n_channels: self.n_channels,
            increments: inc,
            seed: self.seed,
        }
    }

    /// Same increments in reverse step order.
    pub fn reversed(&self) -> Self {
        let mut inc = Vec::with_capacity(self.increments.len());
        for k in (0..self.n_steps).rev() {
            inc.extend_from_slice(self.row(k));
        }
        Self {
            increments: inc,
            ..self.clone()
        }
    }
}

/// Number of whole steps of size `dt` in `duration`.
pub fn step_count(duration: f64, dt: f64) -> Result<usize, TrajectoryError> {
    if !(dt > 0.0) || !(duration >= 0.0) || !duration.is_finite() {
        return Err(TrajectoryError::InvalidGrid(format!("dt = {dt}, duration = {duration}")));
    }
    Ok((duration / dt + 1e-9).floor() as usize)
}

/// Deterministic part of a filtering or retrodiction run: covariances on the
/// grid and the per-step propagator and gain.
#[derive(Debug, Clone)]
pub struct CovarianceSchedule {
    pub direction: Direction,
    pub dt: f64,
    /// `V(t_k)`, `k = 0..=n_steps`.
    pub covs: Vec<DMatrix<f64>>,
    pub divergent: Vec<Vec<bool>>,
    /// Step `k` propagator `exp(M dt)`.
    pub phi: Vec<DMatrix<f64>>,
    /// Step `k` gain `K`.
    pub gain: Vec<DMatrix<f64>>,
    /// Constant contribution `±σh dt` of the linear drive.
    pub offset: DVector<f64>,
}

struct StepCoefficients<'a> {
    sys: RiccatiSystem,
    at: DMatrix<f64>,
    sigma_bt: DMatrix<f64>,
    model: &'a LinearModel,
}

impl StepCoefficients<'_> {
    fn new(model: &LinearModel, direction: Direction) -> Result<StepCoefficients<'_>, TrajectoryError> {
        Ok(StepCoefficients {
            sys: RiccatiSystem::new(model, direction)?,
            at: model.a_meas().transpose(),
            sigma_bt: model.sigma_bt(),
            model,
        })
    }

    fn at(&self, v: &DMatrix<f64>, frozen: &[bool], dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut m = self.sys.drift(v);
        riccati::mask(&mut m, frozen);
        let mut phi = (m * dt).exp();
        riccati::mask(&mut phi, frozen);
        let mut gain = match self.sys.direction {
            Direction::Forward => v * &self.at - &self.sigma_bt,
            Direction::Backward => v * &self.at + &self.sigma_bt,
        };
        for (j, &f) in frozen.iter().enumerate() {
            if f {
                gain.row_mut(j).fill(0.0);
            }
        }
        (phi, gain)
    }

    fn offset(&self, dt: f64) -> DVector<f64> {
        let s = self.model.sigma() * self.model.h_linear() * dt;
        match self.sys.direction {
            Direction::Forward => s,
            Direction::Backward => -s,
        }
    }
}

fn initial_frozen(v: &mut DMatrix<f64>, flagged: &[usize]) -> Vec<bool> {
    let mut frozen = vec![false; v.nrows()];
    for &j in flagged {
        frozen[j] = true;
        let keep = v[(j, j)];
        v.row_mut(j).fill(0.0);
        v.column_mut(j).fill(0.0);
        v[(j, j)] = keep;
    }
    riccati::freeze_divergent(v, &mut frozen, FREEZE_THRESHOLD);
    frozen
}

impl CovarianceSchedule {
    /// Forward schedule from `V(t_0) = v0`.
    pub fn forward(model: &LinearModel, v0: &DMatrix<f64>, dt: f64, n_steps: usize) -> Result<Self, TrajectoryError> {
        check_cov(model, v0)?;
        let coef = StepCoefficients::new(model, Direction::Forward)?;
        let mut v = v0.clone();
        let mut frozen = initial_frozen(&mut v, &[]);
        let mut s = Self::empty(Direction::Forward, dt, n_steps, coef.offset(dt));
        s.covs.push(v.clone());
        s.divergent.push(frozen.clone());
        for k in 0..n_steps {
            let (phi, gain) = coef.at(&v, &frozen, dt);
            s.phi.push(phi);
            s.gain.push(gain);
            coef.sys.advance(&mut v, dt, &frozen);
            riccati::freeze_divergent(&mut v, &mut frozen, FREEZE_THRESHOLD);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TrajectoryError::NonFinite(k));
            }
            s.covs.push(v.clone());
            s.divergent.push(frozen.clone());
        }
        Ok(s)
    }

    /// Backward schedule from `V_E(t_N) = v_final`; `flagged` lists
    /// quadratures of the final effect that are already uninformative.
    pub fn backward(
        model: &LinearModel,
        v_final: &DMatrix<f64>,
        flagged: &[usize],
        dt: f64,
        n_steps: usize,
    ) -> Result<Self, TrajectoryError> {
        check_cov(model, v_final)?;
        let coef = StepCoefficients::new(model, Direction::Backward)?;
        let mut v = v_final.clone();
        let mut frozen = initial_frozen(&mut v, flagged);
        let mut s = Self::empty(Direction::Backward, dt, n_steps, coef.offset(dt));
        s.covs.push(v.clone());
        s.divergent.push(frozen.clone());
        for k in (0..n_steps).rev() {
            let (phi, gain) = coef.at(&v, &frozen, dt);
            s.phi.push(phi);
            s.gain.push(gain);
            coef.sys.advance(&mut v, dt, &frozen);
            riccati::freeze_divergent(&mut v, &mut frozen, FREEZE_THRESHOLD);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TrajectoryError::NonFinite(k));
            }
            s.covs.push(v.clone());
            s.divergent.push(frozen.clone());
        }
        s.covs.reverse();
        s.divergent.reverse();
        s.phi.reverse();
        s.gain.reverse();
        Ok(s)
    }

    fn empty(direction: Direction, dt: f64, n_steps: usize, offset: DVector<f64>) -> Self {
        Self {
            direction,
            dt,
            covs: Vec::with_capacity(n_steps + 1),
            divergent: Vec::with_capacity(n_steps + 1),
            phi: Vec::with_capacity(n_steps),
            gain: Vec::with_capacity(n_steps),
            offset,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.phi.len()
    }

    pub fn dim(&self) -> usize {
        self.covs[0].nrows()
    }

    fn check_record(&self, record: &MeasurementRecord) -> Result<(), TrajectoryError> {
        if record.n_steps != self.n_steps() || (record.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(TrajectoryError::InvalidGrid(format!(
                "record has {} steps of {}, schedule has {} of {}",
                record.n_steps,
                record.dt,
                self.n_steps(),
                self.dt
            )));
        }
        let nc = self.gain.first().map_or(record.n_channels, |g| g.ncols());
        if record.n_channels != nc {
            return Err(TrajectoryError::ChannelMismatch {
                expected: nc,
                found: record.n_channels,
            });
        }
        Ok(())
    }

    /// One mean update through step `k` (in time order) from the
    /// endpoint the direction starts at.
    #[inline]
    fn step(&self, k: usize, r: &mut DVector<f64>, dy: &[f64], tmp: &mut DVector<f64>) {
        tmp.copy_from(r);
        if !dy.is_empty() {
            tmp.gemv(1.0, &self.gain[k], &DVectorView::from_slice(dy, dy.len()), 1.0);
        }
        r.gemv(1.0, &self.phi[k], tmp, 0.0);
        *r += &self.offset;
        let frozen = match self.direction {
            Direction::Forward => &self.divergent[k + 1],
            Direction::Backward => &self.divergent[k],
        };
        for (j, &f) in frozen.iter().enumerate() {
            if f {
                r[j] = 0.0;
            }
        }
    }

    /// Runs the means over the record from the starting endpoint. Returns
    /// the means at `t_0..=t_N` in time order.
    pub fn propagate(&self, r_start: &DVector<f64>, record: &MeasurementRecord) -> Result<Vec<DVector<f64>>, TrajectoryError> {
        self.check_record(record)?;
        let n = self.n_steps();
        let mut out = Vec::with_capacity(n + 1);
        let mut r = r_start.clone();
        let mut tmp = r.clone();
        out.push(r.clone());
        match self.direction {
            Direction::Forward => {
                for k in 0..n {
                    self.step(k, &mut r, record.row(k), &mut tmp);
                    out.push(r.clone());
                }
            }
            Direction::Backward => {
                for k in (0..n).rev() {
                    self.step(k, &mut r, record.row(k), &mut tmp);
                    out.push(r.clone());
                }
                out.reverse();
            }
        }
        Ok(out)
    }

    /// Mean at the far endpoint only (`t_N` forward, `t_0` backward).
    pub fn propagate_endpoint(&self, r_start: &DVector<f64>, record: &MeasurementRecord) -> Result<DVector<f64>, TrajectoryError> {
        self.check_record(record)?;
        let mut r = r_start.clone();
        let mut tmp = r.clone();
        match self.direction {
            Direction::Forward => (0..self.n_steps()).for_each(|k| self.step(k, &mut r, record.row(k), &mut tmp)),
            Direction::Backward => (0..self.n_steps()).rev().for_each(|k| self.step(k, &mut r, record.row(k), &mut tmp)),
        }
        Ok(r)
    }

    /// Draws a record while running the conditional state forward with the
    /// innovation form: `dY = 2A r dt + dW`, then the ordinary filter step.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        a_meas: &DMatrix<f64>,
        r0: &DVector<f64>,
        rng: &mut R,
        mut means: Option<&mut Vec<DVector<f64>>>,
    ) -> (MeasurementRecord, DVector<f64>) {
        assert_eq!(self.direction, Direction::Forward, "records are simulated forward in time");
        let nc = a_meas.nrows();
        let n = self.n_steps();
        let two_a_dt = a_meas * (2.0 * self.dt);
        let mut inc = vec![0.0; n * nc];
        let mut r = r0.clone();
        let mut tmp = r.clone();
        let mut drift = DVector::zeros(nc);
        if let Some(m) = means.as_deref_mut() {
            m.push(r.clone());
        }
        for k in 0..n {
            let dy = &mut inc[k * nc..(k + 1) * nc];
            rng::fill_normal(rng, self.dt, dy);
            drift.gemv(1.0, &two_a_dt, &r, 0.0);
            for (d, m) in dy.iter_mut().zip(drift.iter()) {
                *d += m;
            }
            self.step(k, &mut r, &inc[k * nc..(k + 1) * nc], &mut tmp);
            if let Some(m) = means.as_deref_mut() {
                m.push(r.clone());
            }
        }
        let record = MeasurementRecord {
            dt: self.dt,
            n_steps: n,
            n_channels: nc,
            increments: inc,
            seed: None,
        };
        (record, r)
    }

    fn path(&self, means: Vec<DVector<f64>>) -> GaussianPath {
        let divergent = self
            .divergent
            .iter()
            .map(|f| f.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
            .collect();
        GaussianPath {
            direction: self.direction,
            dt: self.dt,
            means,
            covs: self.covs.clone(),
            divergent,
        }
    }
}

fn check_cov(model: &LinearModel, v: &DMatrix<f64>) -> Result<(), TrajectoryError> {
    if v.shape() != (model.dim(), model.dim()) {
        return Err(TrajectoryError::DimensionMismatch {
            expected: model.dim(),
            found: v.nrows(),
        });
    }
    Ok(())
}

fn check_mean(model: &LinearModel, r: &DVector<f64>) -> Result<(), TrajectoryError> {
    if r.len() != model.dim() {
        return Err(TrajectoryError::DimensionMismatch {
            expected: model.dim(),
            found: r.len(),
        });
    }
    Ok(())
}

/// Means and covariances on the grid `t_k = k dt`.
#[derive(Debug, Clone)]
pub struct GaussianPath {
    pub direction: Direction,
    pub dt: f64,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Quadratures flagged divergent at each grid point; their means are 0
    /// and carry no information.
    pub divergent: Vec<Vec<usize>>,
}

impl GaussianPath {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn state(&self, k: usize) -> GaussianState {
        GaussianState::new(self.means[k].clone(), self.covs[k].clone())
    }

    pub fn effect(&self, k: usize) -> GaussianEffect {
        GaussianEffect::new(self.means[k].clone(), self.covs[k].clone()).with_divergent(self.divergent[k].clone())
    }
}

/// Largest eigenvalue modulus of `Q` and of the conditional drift at `v`.
pub fn max_rate(model: &LinearModel, v: &DMatrix<f64>) -> f64 {
    let m = riccati::conditional_drift_forward(model, v);
    m.complex_eigenvalues()
        .iter()
        .chain(model.drift_matrix().complex_eigenvalues().iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Synthetic record from the model started in `initial`. The conditional
/// state is the truth: its means feed `dY = 2A r dt + dW`.
pub fn simulate_record(
    model: &LinearModel,
    initial: &GaussianState,
    dt: f64,
    duration: f64,
    seed: u64,
) -> Result<(MeasurementRecord, GaussianPath), TrajectoryError> {
    simulate_indexed(model, initial, dt, duration, seed, 0)
}

/// As [`simulate_record`], drawing from stream `index` of `seed`.
pub fn simulate_indexed(
    model: &LinearModel,
    initial: &GaussianState,
    dt: f64,
    duration: f64,
    seed: u64,
    index: u64,
) -> Result<(MeasurementRecord, GaussianPath), TrajectoryError> {
    check_mean(model, &initial.mean)?;
    let n = step_count(duration, dt)?;
    let rate = max_rate(model, &initial.cov);
    if rate > 0.0 && dt > 0.1 / rate {
        return Err(TrajectoryError::StepTooLarge { dt, limit: 0.1 / rate });
    }
    let schedule = CovarianceSchedule::forward(model, &initial.cov, dt, n)?;
    let mut means = Vec::with_capacity(n + 1);
    let (mut record, _) = schedule.simulate(model.a_meas(), &initial.mean, &mut rng::stream(seed, index), Some(&mut means));
    record.seed = Some(seed);
    Ok((record, schedule.path(means)))
}

/// Forward filter: conditional states given the record and the initial
/// state at `t_0`.
pub fn filter_forward(model: &LinearModel, initial: &GaussianState, record: &MeasurementRecord) -> Result<GaussianPath, TrajectoryError> {
    check_mean(model, &initial.mean)?;
    check_channels(model, record)?;
    let schedule = CovarianceSchedule::forward(model, &initial.cov, record.dt, record.n_steps)?;
    let means = schedule.propagate(&initial.mean, record)?;
    Ok(schedule.path(means))
}

/// Uninformative final effect: mean zero, covariance `v_large · I`.
pub fn identity_surrogate(n_modes: usize, v_large: f64) -> GaussianEffect {
    let n = 2 * n_modes;
    GaussianEffect::new(DVector::zeros(n), DMatrix::identity(n, n) * v_large)
}

/// Backward retrodiction: effect operators at every grid point given the
/// record and the effect at the final time.
pub fn retrodict_backward(
    model: &LinearModel,
    final_effect: &GaussianEffect,
    record: &MeasurementRecord,
) -> Result<GaussianPath, TrajectoryError> {
    check_mean(model, &final_effect.mean)?;
    check_channels(model, record)?;
    let schedule = CovarianceSchedule::backward(model, &final_effect.cov, &final_effect.divergent, record.dt, record.n_steps)?;
    let means = schedule.propagate(&final_effect.mean, record)?;
    Ok(schedule.path(means))
}

fn check_channels(model: &LinearModel, record: &MeasurementRecord) -> Result<(), TrajectoryError> {
    if record.n_channels != model.n_channels() && record.n_steps > 0 {
        return Err(TrajectoryError::ChannelMismatch {
            expected: model.n_channels(),
            found: record.n_channels,
        });
    }
    Ok(())
}

/// Steady-state filter kernels `f(τ)` sampled at lags `times`:
/// `e^{τ M}(V Aᵀ ∓ σBᵀ)`, minus sign forward.
#[derive(Debug, Clone)]
pub struct ModeFunctionSet {
    pub direction: Direction,
    pub times: Vec<f64>,
    /// One `2M × N_C` matrix per lag.
    pub kernel: Vec<DMatrix<f64>>,
}

impl ModeFunctionSet {
    /// Entry `f_jk` at every lag.
    pub fn component(&self, j: usize, k: usize) -> Vec<f64> {
        self.kernel.iter().map(|m| m[(j, k)]).collect()
    }
}

pub fn mode_functions(model: &LinearModel, steady: &CovarianceSolution, times: &[f64]) -> Result<ModeFunctionSet, TrajectoryError> {
    if !steady.converged {
        return Err(TrajectoryError::NotConverged);
    }
    let at = model.a_meas().transpose();
    let base = match steady.direction {
        Direction::Forward => &steady.v * &at - model.sigma_bt(),
        Direction::Backward => &steady.v * &at + model.sigma_bt(),
    };
    let kernel = times.iter().map(|&t| (&steady.m * t).exp() * &base).collect();
    Ok(ModeFunctionSet {
        direction: steady.direction,
        times: times.to_vec(),
        kernel,
    })
}

/// Uniform lag grid `j dt`, `j = 0..=n`.
pub fn lag_grid(dt: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|j| j as f64 * dt).collect()
}

/// Discrete kernel integral over the whole record. Forward (Itô) weights
/// step `k` by `f(t_N - t_k)`; backward weights it by `f(t_{k+1} - t_0)`.
/// The kernel grid must be `j dt` for `j = 0..=n_steps` at least.
pub fn apply_kernel(record: &MeasurementRecord, kernel: &ModeFunctionSet) -> Result<DVector<f64>, TrajectoryError> {
    let n = record.n_steps;
    if kernel.times.len() < n + 1 {
        return Err(TrajectoryError::GridMismatch(format!(
            "kernel has {} lags, record needs {}",
            kernel.times.len(),
            n + 1
        )));
    }
    for (j, &t) in kernel.times.iter().enumerate().take(n + 1) {
        let expect = j as f64 * record.dt;
        if (t - expect).abs() > 1e-9 * record.dt.max(expect) {
            return Err(TrajectoryError::GridMismatch(format!("lag {j} is {t}, expected {expect}")));
        }
    }
    let dim = kernel.kernel.first().map_or(0, |m| m.nrows());
    let mut x = DVector::zeros(dim);
    if n == 0 {
        return Ok(x);
    }
    if kernel.kernel[0].ncols() != record.n_channels {
        return Err(TrajectoryError::ChannelMismatch {
            expected: kernel.kernel[0].ncols(),
            found: record.n_channels,
        });
    }
    for k in 0..n {
        let lag = match kernel.direction {
            Direction::Forward => n - k,
            Direction::Backward => k + 1,
        };
        let dy = DVectorView::from_slice(record.row(k), record.n_channels);
        x.gemv(1.0, &kernel.kernel[lag], &dy, 1.0);
    }
    Ok(x)
}

/// Where the noise coefficient of a step is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    /// `r_{k+1} = e^{M dt}(r_k + K dY_k)`.
    Lower,
    /// `r_{k+1} = e^{M dt} r_k + K dY_k`.
    Upper,
}

/// Solves `dr = M r dt + K dY` on the record with constant coefficients,
/// returning `r` at every grid point.
pub fn integrate_linear_sde(
    drift: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    r0: &DVector<f64>,
    record: &MeasurementRecord,
    endpoint: Endpoint,
) -> Vec<DVector<f64>> {
    let phi = (drift * record.dt).exp();
    let mut out = Vec::with_capacity(record.n_steps + 1);
    let mut r = r0.clone();
    let mut tmp = r.clone();
    out.push(r.clone());
    for k in 0..record.n_steps {
        let dy = DVectorView::from_slice(record.row(k), record.n_channels);
        match endpoint {
            Endpoint::Lower => {
                tmp.copy_from(&r);
                tmp.gemv(1.0, gain, &dy, 1.0);
                r.gemv(1.0, &phi, &tmp, 0.0);
            }
            Endpoint::Upper => {
                tmp.gemv(1.0, &phi, &r, 0.0);
                tmp.gemv(1.0, gain, &dy, 1.0);
                r.copy_from(&tmp);
            }
        }
        out.push(r.clone());
    }
    out
}

/// Records drawn with zero signal: `dY = dW`.
pub fn wiener_record(n_channels: usize, dt: f64, n_steps: usize, seed: u64, index: u64) -> MeasurementRecord {
    let mut inc = vec![0.0; n_steps * n_channels];
    rng::fill_normal(&mut rng::stream(seed, index), dt, &mut inc);
    MeasurementRecord {
        dt,
        n_steps,
        n_channels,
        increments: inc,
        seed: Some(seed),
    }
}

/// Sample mean and covariance of a set of vectors.
pub fn sample_moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let dim = samples.first().map_or(0, |s| s.len());
    let mean = samples.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    linalg::symmetrize(&mut cov);
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cavity(eta: f64) -> LinearModel {
        LinearModel::decaying_cavity(1.0, eta, 0.0)
    }

    fn coherent(x: f64, p: f64) -> GaussianState {
        GaussianState::coherent(DVector::from_vec(vec![x, p]))
    }

    #[test]
    fn unobserved_record_is_white_noise() {
        let m = LinearModel::from_channels(
            1,
            DMatrix::zeros(2, 2),
            &[crate::model::annihilation(1, 0)],
            &[vec![num_complex::Complex64::new(0.0, 0.0); 2]],
        )
        .unwrap();
        let dt = 1e-3;
        let (rec, _) = simulate_record(&m, &GaussianState::vacuum(1), dt, 100.0, 5).unwrap();
        assert_eq!(rec.n_steps, 100_000);
        let var = rec.increments.iter().map(|x| x * x).sum::<f64>() / rec.n_steps as f64;
        assert!((var / dt - 1.0).abs() < 0.05, "{}", var / dt);
    }

    #[test]
    fn zero_duration() {
        let (rec, truth) = simulate_record(&cavity(1.0), &coherent(1.0, 0.0), 0.01, 0.0, 1).unwrap();
        assert_eq!(rec.n_steps, 0);
        assert_eq!(truth.len(), 1);
        assert_eq!(truth.means[0], DVector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn step_too_large() {
        assert!(matches!(
            simulate_record(&cavity(1.0), &coherent(0.0, 0.0), 0.5, 1.0, 1),
            Err(TrajectoryError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn filter_reproduces_truth_bitwise() {
        let m = LinearModel::decaying_cavity(1.0, 0.7, 0.3);
        let init = GaussianState::new(DVector::from_vec(vec![1.0, -0.5]), DMatrix::identity(2, 2) * 3.0);
        let (rec, truth) = simulate_record(&m, &init, 1e-3, 3.0, 11).unwrap();
        let filt = filter_forward(&m, &init, &rec).unwrap();
        assert_eq!(filt.means, truth.means);
        assert_eq!(filt.covs, truth.covs);
    }

    #[test]
    fn zero_record_filter_decays_at_conditional_rate() {
        // η = 1 from a coherent state: M = -Γ/2 I and the means decay as e^{-t/2}
        let m = cavity(1.0);
        let rec = MeasurementRecord::zeros(0.01, 200, 1);
        let path = filter_forward(&m, &coherent(2.0, 0.0), &rec).unwrap();
        let last = path.means.last().unwrap();
        assert_relative_eq!(last[0], 2.0 * (-1.0f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(last[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn long_filter_covariance_reaches_steady_state() {
        let m = LinearModel::decaying_cavity(1.0, 0.6, 0.0);
        let rec = MeasurementRecord::zeros(0.01, 4000, 1);
        let init = GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0);
        let path = filter_forward(&m, &init, &rec).unwrap();
        let ss = riccati::steady_state(&m, Direction::Forward).unwrap();
        assert_relative_eq!(*path.covs.last().unwrap(), ss.v, epsilon = 1e-8);
    }

    #[test]
    fn retrodicted_covariance_reaches_closed_form() {
        let eta = 0.9;
        let rec = MeasurementRecord::zeros(0.005, 6000, 1);
        let path = retrodict_backward(&cavity(eta), &identity_surrogate(1, DEFAULT_V_LARGE), &rec).unwrap();
        assert_relative_eq!(path.covs[0][(0, 0)], (1.0 - eta) / eta, max_relative = 1e-8);
        assert_eq!(path.divergent[0], vec![1]);
        assert!(path.divergent.last().unwrap().is_empty());
        assert_eq!(path.means[0][1], 0.0);
    }

    #[test]
    fn zero_record_backward_drift() {
        // at the steady V_E, M_E,xx = Γ/2 - ηΓ - ηΓ V_xx = -Γ/2; p is excluded
        let eta = 0.8;
        let m = cavity(eta);
        let vxx = (1.0 - eta) / eta;
        let v = DMatrix::from_row_slice(2, 2, &[vxx, 0.0, 0.0, 1e10]);
        let fin = GaussianEffect::new(DVector::from_vec(vec![1.0, 0.0]), v).with_divergent(vec![1]);
        let rec = MeasurementRecord::zeros(0.01, 100, 1);
        let path = retrodict_backward(&m, &fin, &rec).unwrap();
        assert_relative_eq!(path.means[0][0], (-0.5f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn backward_kernel_matches_retrodiction() {
        let eta = 0.7;
        let m = LinearModel::decaying_cavity(1.0, eta, 0.0);
        let mut ss = match riccati::steady_state(&m, Direction::Backward) {
            Err(RiccatiError::NoSteadyState { partial, .. }) => *partial,
            other => panic!("{other:?}"),
        };
        // the x block alone is a converged one-dimensional problem
        let x_only = LinearModel::from_channels(
            1,
            DMatrix::zeros(2, 2),
            &[crate::model::scaled(&crate::model::annihilation(1, 0), num_complex::Complex64::new(1.0, 0.0))],
            &[crate::model::scaled(&crate::model::annihilation(1, 0), num_complex::Complex64::new(eta.sqrt(), 0.0))],
        )
        .unwrap();
        ss.converged = true;
        let rec = wiener_record(1, 0.01, 500, 3, 0);
        let fin = GaussianEffect::new(DVector::from_vec(vec![0.4, 0.0]), ss.v.clone()).with_divergent(vec![1]);
        let path = retrodict_backward(&x_only, &fin, &rec).unwrap();
        let kernel = mode_functions(&x_only, &ss, &lag_grid(0.01, 500)).unwrap();
        let x = apply_kernel(&rec, &kernel).unwrap();
        let damped = (&ss.m * 5.0).exp() * &fin.mean;
        assert_relative_eq!(path.means[0][0], x[0] + damped[0], epsilon = 1e-8);
    }

    #[test]
    fn forward_kernel_matches_filter() {
        let m = LinearModel::decaying_cavity(1.0, 0.5, 0.4);
        let ss = riccati::steady_state(&m, Direction::Forward).unwrap();
        let rec = wiener_record(1, 0.01, 300, 9, 2);
        let r0 = DVector::from_vec(vec![0.3, -0.1]);
        let path = filter_forward(&m, &GaussianState::new(r0.clone(), ss.v.clone()), &rec).unwrap();
        let kernel = mode_functions(&m, &ss, &lag_grid(0.01, 300)).unwrap();
        let x = apply_kernel(&rec, &kernel).unwrap();
        let damped = (&ss.m * 3.0).exp() * r0;
        assert_relative_eq!(*path.means.last().unwrap(), x + damped, epsilon = 1e-8);
    }

    #[test]
    fn kernel_edge_cases() {
        let rec = MeasurementRecord::new(0.1, 1, vec![0.5, -0.2, 1.0]).unwrap();
        let ones = ModeFunctionSet {
            direction: Direction::Forward,
            times: lag_grid(0.1, 3),
            kernel: vec![DMatrix::from_element(2, 1, 1.0); 4],
        };
        let x = apply_kernel(&rec, &ones).unwrap();
        assert_relative_eq!(x[0], 1.3, epsilon = 1e-15);
        let zero = ModeFunctionSet {
            kernel: vec![DMatrix::zeros(2, 1); 4],
            ..ones.clone()
        };
        assert_eq!(apply_kernel(&rec, &zero).unwrap(), DVector::zeros(2));
        let short = ModeFunctionSet {
            times: lag_grid(0.1, 2),
            kernel: vec![DMatrix::zeros(2, 1); 3],
            ..ones.clone()
        };
        assert!(matches!(apply_kernel(&rec, &short), Err(TrajectoryError::GridMismatch(_))));
        let shifted = ModeFunctionSet {
            times: lag_grid(0.2, 3),
            ..ones
        };
        assert!(matches!(apply_kernel(&rec, &shifted), Err(TrajectoryError::GridMismatch(_))));
    }

    #[test]
    fn lag_zero_kernel() {
        let m = LinearModel::decaying_cavity(1.0, 0.5, 0.0);
        let ss = riccati::steady_state(&m, Direction::Forward).unwrap();
        let k = mode_functions(&m, &ss, &[0.0]).unwrap();
        let expect = &ss.v * m.a_meas().transpose() - m.sigma_bt();
        assert_eq!(k.kernel[0], expect);
    }

    #[test]
    fn unconverged_steady_state_is_rejected() {
        let m = cavity(0.5);
        let Err(RiccatiError::NoSteadyState { partial, .. }) = riccati::steady_state(&m, Direction::Backward) else {
            panic!()
        };
        assert!(matches!(mode_functions(&m, &partial, &[0.0]), Err(TrajectoryError::NotConverged)));
    }

    #[test]
    fn aggregate_sums_blocks() {
        let rec = MeasurementRecord::new(0.1, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let agg = rec.aggregate(2);
        assert_eq!(agg.n_steps, 2);
        assert_eq!(agg.increments, vec![4.0, 6.0, 12.0, 14.0]);
        assert_relative_eq!(agg.dt, 0.2);
        assert_eq!(rec.reversed().row(0), &[9.0, 10.0]);
    }

    #[test]
    fn endpoint_choices_agree_without_drift() {
        let rec = wiener_record(1, 0.01, 100, 1, 0);
        let zero = DMatrix::zeros(2, 2);
        let gain = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let a = integrate_linear_sde(&zero, &gain, &DVector::zeros(2), &rec, Endpoint::Lower);
        let b = integrate_linear_sde(&zero, &gain, &DVector::zeros(2), &rec, Endpoint::Upper);
        assert_relative_eq!(*a.last().unwrap(), *b.last().unwrap(), epsilon = 1e-12);
    }
}
