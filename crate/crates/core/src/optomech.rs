//! Coarse-grained optomechanical models.
//!
//! A driven cavity (linewidth `κ`, enhanced coupling `g`) is adiabatically
//! eliminated, leaving one mechanical mode in its rotating frame with
//! thermal damping and measurement-induced Stokes/anti-Stokes jumps at rates
//! `Γ±`. Homodyne detection of the cavity output at the carrier or at one of
//! the sidebands gives the channels assembled by [`build_scenario`].

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{annihilation, creation, quadrature, scaled, LinearModel, ModelError};
use crate::riccati::{self, Direction, RiccatiError};

#[derive(Debug, Error)]
pub enum OptomechError {
    #[error("drive is unstable: Γ+ = {gamma_plus:e} ≥ Γ- + γ = {limit:e}")]
    UnstableDrive { gamma_plus: f64, limit: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("invalid scenario JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Drive and detection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Resonant drive, local oscillator at the carrier.
    ResonantResonant,
    /// Resonant drive, local oscillator on the red sideband.
    ResonantRed,
    /// Resonant drive, local oscillator on the blue sideband.
    ResonantBlue,
    /// Red-detuned drive, local oscillator on the red sideband.
    DetunedRed,
    /// Red-detuned drive, local oscillator on the blue sideband.
    DetunedBlue,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::ResonantResonant,
        Scheme::ResonantRed,
        Scheme::ResonantBlue,
        Scheme::DetunedRed,
        Scheme::DetunedBlue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ResonantResonant => "resonant_resonant",
            Scheme::ResonantRed => "resonant_red",
            Scheme::ResonantBlue => "resonant_blue",
            Scheme::DetunedRed => "detuned_red",
            Scheme::DetunedBlue => "detuned_blue",
        }
    }

    pub fn is_detuned(self) -> bool {
        matches!(self, Scheme::DetunedRed | Scheme::DetunedBlue)
    }

    /// Names of the measurement channels in model order.
    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            Scheme::ResonantResonant => &["c", "s"],
            _ => &["dc", "c2", "s2"],
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scheme '{s}'"))
    }
}

/// Physical parameters. All rates share one unit; `delta_c` is the drive
/// detuning `ω_drive - ω_cavity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptomechParams {
    pub omega_m: f64,
    pub kappa: f64,
    pub g: f64,
    pub gamma: f64,
    pub nbar: f64,
    #[serde(default)]
    pub delta_c: f64,
    #[serde(default)]
    pub phi_lo: f64,
    pub eta: f64,
}

impl OptomechParams {
    /// Parameters whose bare quantum cooperativity `C/(n̄+1)` equals `cq`;
    /// `g` is solved from the resonant rate.
    pub fn with_quantum_cooperativity(mut self, cq: f64) -> Self {
        self.set_cooperativity(cq * (self.nbar + 1.0));
        self
    }

    /// Parameters whose bare cooperativity `Γ/γ` equals `c`.
    pub fn with_cooperativity(mut self, c: f64) -> Self {
        self.set_cooperativity(c);
        self
    }

    fn set_cooperativity(&mut self, c: f64) {
        let lorentz = (self.kappa / 2.0).powi(2) + self.omega_m.powi(2);
        self.g = (c * self.gamma * lorentz / self.kappa).max(0.0).sqrt();
    }

    /// Mechanical quality factor `Ω_m/γ`.
    pub fn quality_factor(&self) -> f64 {
        self.omega_m / self.gamma
    }

    pub fn validate(&self) -> Result<(), OptomechError> {
        let bad = |m: &str| Err(OptomechError::InvalidParams(m.to_string()));
        let finite = [self.omega_m, self.kappa, self.g, self.gamma, self.nbar, self.delta_c, self.phi_lo, self.eta];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if self.nbar < 0.0 {
            return bad("nbar must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if self.g < 0.0 {
            return bad("g must be nonnegative");
        }
        Ok(())
    }
}

/// Anti-Stokes and Stokes rates `(Γ-, Γ+)`,
/// `Γ± = g²κ/((κ/2)² + (-Δ_c ± Ω_m)²)`.
pub fn sideband_rates(p: &OptomechParams) -> (f64, f64) {
    let rate = |d: f64| p.g * p.g * p.kappa / ((p.kappa / 2.0).powi(2) + d * d);
    (rate(-p.delta_c - p.omega_m), rate(-p.delta_c + p.omega_m))
}

/// Measurement rate `Γ` of a resonant drive.
pub fn resonant_rate(p: &OptomechParams) -> f64 {
    p.g * p.g * p.kappa / ((p.kappa / 2.0).powi(2) + p.omega_m.powi(2))
}

/// Enhancement factors `f±` with `Γ± = Γ f±`.
pub fn enhancement_factors(p: &OptomechParams) -> (f64, f64) {
    let r = p.omega_m / p.kappa;
    let f = |d: f64| (1.0 + 4.0 * r * r) / (1.0 + 4.0 * d * d / (p.kappa * p.kappa));
    (f(-p.delta_c - p.omega_m), f(-p.delta_c + p.omega_m))
}

/// Optical-spring shifted frequency `Ω_m - √2 g²(β+ + β-)`,
/// `β± = (Δ_c ± Ω_m)/((κ/2)² + (Δ_c ± Ω_m)²)`.
pub fn effective_frequency(p: &OptomechParams) -> f64 {
    let beta = |d: f64| d / ((p.kappa / 2.0).powi(2) + d * d);
    p.omega_m - std::f64::consts::SQRT_2 * p.g * p.g * (beta(p.delta_c + p.omega_m) + beta(p.delta_c - p.omega_m))
}

/// Local-oscillator detuning `ω_lo - ω_0` implied by the scheme.
pub fn lo_detuning(p: &OptomechParams, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::ResonantResonant => 0.0,
        Scheme::ResonantRed | Scheme::DetunedRed => -effective_frequency(p),
        Scheme::ResonantBlue | Scheme::DetunedBlue => effective_frequency(p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cooperativities {
    /// `4g²/(κγ)`.
    pub classical: f64,
    /// Resonant-drive `Γ/γ`.
    pub bare: f64,
    pub minus: f64,
    pub plus: f64,
    /// `C/(n̄+1)` for the bare, minus and plus variants.
    pub q: f64,
    pub q_minus: f64,
    pub q_plus: f64,
}

pub fn cooperativities(p: &OptomechParams) -> Cooperativities {
    let (gm, gp) = sideband_rates(p);
    let bare = resonant_rate(p) / p.gamma;
    let n1 = p.nbar + 1.0;
    Cooperativities {
        classical: 4.0 * p.g * p.g / (p.kappa * p.gamma),
        bare,
        minus: gm / p.gamma,
        plus: gp / p.gamma,
        q: bare / n1,
        q_minus: gm / p.gamma / n1,
        q_plus: gp / p.gamma / n1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stability {
    pub stable: bool,
    /// `Γ- + γ - Γ+`.
    pub margin: f64,
}

pub fn drive_stability(p: &OptomechParams) -> Stability {
    let (gm, gp) = sideband_rates(p);
    let margin = gm + p.gamma - gp;
    Stability { stable: margin > 0.0, margin }
}

/// Regime diagnostics that do not prevent building a model.
pub fn warnings(p: &OptomechParams) -> Vec<String> {
    const RATIO: f64 = 20.0;
    let mut out = Vec::new();
    let spring = p.g * p.g / p.kappa;
    if spring > 0.0 && p.omega_m / spring < RATIO {
        out.push(format!("rotating-wave approximation: Ω_m/(g²/κ) = {:.3} < {RATIO}", p.omega_m / spring));
    }
    if p.nbar > 0.0 {
        let thermal = p.nbar * p.gamma;
        if p.omega_m / thermal < RATIO {
            out.push(format!("rotating-wave approximation: Ω_m/(n̄γ) = {:.3} < {RATIO}", p.omega_m / thermal));
        }
        if p.quality_factor() / p.nbar < RATIO {
            out.push(format!("Q/n̄ = {:.3} < {RATIO}", p.quality_factor() / p.nbar));
        }
    }
    if p.g / p.kappa > 0.1 {
        out.push(format!("weak coupling: g/κ = {:.3} > 0.1", p.g / p.kappa));
    }
    out
}

fn check_scheme(p: &OptomechParams, scheme: Scheme) -> Result<(), OptomechError> {
    p.validate()?;
    if scheme.is_detuned() {
        if p.delta_c == 0.0 {
            return Err(OptomechError::InvalidParams(format!("{scheme} requires delta_c != 0")));
        }
        let s = drive_stability(p);
        if !s.stable {
            let (gm, gp) = sideband_rates(p);
            return Err(OptomechError::UnstableDrive {
                gamma_plus: gp,
                limit: gm + p.gamma,
            });
        }
    } else if p.delta_c != 0.0 {
        return Err(OptomechError::InvalidParams(format!("{scheme} requires delta_c = 0")));
    }
    Ok(())
}

/// Coarse-grained one-mode model in the mechanical rotating frame (`H = 0`).
///
/// Jumps: `√(γ(n̄+1)) a`, `√(γn̄) a†`, `√Γ- a`, `√Γ+ a†`. Channels, all
/// multiplied by `e^{-iφ_lo}`:
///
/// - carrier LO: `√(ηΓ) x` and `√(ηΓ) p`;
/// - red LO: `√(ηΓ+) a†` at DC and `√(ηΓ-/2) a`, `√(ηΓ-/2)(-i a)` at `2Ω`;
/// - blue LO: `√(ηΓ-) a` at DC and `√(ηΓ+/2) a†`, `√(ηΓ+/2)(i a†)` at `2Ω`.
///
/// The `2Ω` components are the cosine and sine parts of a term oscillating
/// at twice the mechanical frequency; each carries half the rate.
pub fn build_scenario(p: &OptomechParams, scheme: Scheme) -> Result<LinearModel, OptomechError> {
    check_scheme(p, scheme)?;
    let (gm, gp) = sideband_rates(p);
    let a = annihilation(1, 0);
    let ad = creation(1, 0);
    let real = |x: f64| Complex64::new(x.max(0.0).sqrt(), 0.0);
    let jumps = vec![
        scaled(&a, real(p.gamma * (p.nbar + 1.0))),
        scaled(&ad, real(p.gamma * p.nbar)),
        scaled(&a, real(gm)),
        scaled(&ad, real(gp)),
    ];
    let i = Complex64::new(0.0, 1.0);
    let eta = p.eta;
    let mut channels = match scheme {
        Scheme::ResonantResonant => vec![
            scaled(&quadrature(1, 0), real(eta * gm)),
            scaled(&quadrature(1, 1), real(eta * gm)),
        ],
        Scheme::ResonantRed | Scheme::DetunedRed => vec![
            scaled(&ad, real(eta * gp)),
            scaled(&a, real(eta * gm / 2.0)),
            scaled(&a, -i * real(eta * gm / 2.0)),
        ],
        Scheme::ResonantBlue | Scheme::DetunedBlue => vec![
            scaled(&a, real(eta * gm)),
            scaled(&ad, real(eta * gp / 2.0)),
            scaled(&ad, i * real(eta * gp / 2.0)),
        ],
    };
    let phase = Complex64::from_polar(1.0, -p.phi_lo);
    for c in &mut channels {
        *c = scaled(c, phase);
    }
    Ok(LinearModel::from_channels(1, DMatrix::zeros(2, 2), &jumps, &channels)?.with_coarse_grained(true))
}

/// Printed steady-state variances `(V_xx, V_pp)`; `None` where no closed
/// form exists.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClosedForm {
    pub exact_xx: Option<f64>,
    pub exact_pp: Option<f64>,
    pub approx_xx: Option<f64>,
    pub approx_pp: Option<f64>,
}

/// Closed-form variances for a scheme and direction. Resonant-drive forms
/// use `C = Γ/γ`; detuned forms use `C± = Γ±/γ`.
pub fn closed_form_variances(p: &OptomechParams, scheme: Scheme, direction: Direction) -> ClosedForm {
    let co = cooperativities(p);
    let (eta, nbar) = (p.eta, p.nbar);
    let c = co.bare;
    let ec = eta * c;
    let cq = co.q;
    let fwd = direction == Direction::Forward;
    // ±1 in front of the square roots: -1 forward, +1 backward
    let sgn = if fwd { -1.0 } else { 1.0 };
    let approx_res = ((cq + 1.0) / (eta * cq)).sqrt();
    let approx_sq = (((3.0 - 2.0 * eta) * cq + 3.0) / (eta * cq)).sqrt();
    let some = |x: f64| if x.is_finite() { Some(x) } else { None };
    match scheme {
        Scheme::ResonantResonant => {
            if ec == 0.0 {
                let thermal = if fwd { Some(2.0 * nbar + 1.0 + 2.0 * c) } else { None };
                return ClosedForm {
                    exact_xx: thermal,
                    exact_pp: thermal,
                    ..Default::default()
                };
            }
            let v = ((1.0 + 8.0 * ec * (2.0 * c + 2.0 * nbar + 1.0)).sqrt() + sgn) / (4.0 * ec);
            ClosedForm {
                exact_xx: some(v),
                exact_pp: some(v),
                approx_xx: some(approx_res),
                approx_pp: some(approx_res),
            }
        }
        Scheme::ResonantRed | Scheme::ResonantBlue => {
            if ec == 0.0 {
                return ClosedForm::default();
            }
            let red = scheme == Scheme::ResonantRed;
            let shift = if red { 0.0 } else { 1.0 };
            let rx = (1.0 + 4.0 * ec * ((3.0 - 2.0 * eta) * c + 3.0 * nbar + 2.0 - shift)).sqrt();
            let rp = (1.0 + 4.0 * ec * (c + nbar + shift)).sqrt();
            // offsets after the radicals: red forward (-1/3, +1), blue forward (+1/3, -1), reversed backward
            let parity = if red == fwd { 1.0 } else { -1.0 };
            let exact_xx = (rx + sgn) / (3.0 * ec) - parity / 3.0;
            let exact_pp = (rp + sgn) / ec + parity;
            let (approx_xx, approx_pp) = match (red, fwd) {
                (true, true) => (2.0 / 3.0 * approx_sq - 1.0 / 3.0, 2.0 * approx_res + 1.0),
                (true, false) => (2.0 / 3.0 * approx_sq + 1.0 / 3.0, 2.0 * approx_res - 1.0),
                (false, true) => (approx_sq / 3.0 + 1.0 / 6.0, approx_res - 0.5),
                (false, false) => (2.0 / 3.0 * approx_sq - 1.0 / 3.0, 2.0 * approx_res + 1.0),
            };
            ClosedForm {
                exact_xx: some(exact_xx),
                exact_pp: some(exact_pp),
                approx_xx: some(approx_xx),
                approx_pp: some(approx_pp),
            }
        }
        Scheme::DetunedRed if fwd => {
            let (cm, cp) = (co.minus, co.plus);
            let r = (cm - cp + 1.0).powi(2)
                + 4.0 * eta * (3.0 - 2.0 * eta) * cm * cp
                + 8.0 * eta * cp * (nbar + 1.0)
                + 4.0 * nbar * eta * cm;
            let v = (-1.0 - (1.0 - eta) * cm + (1.0 - 2.0 * eta) * cp + r.sqrt()) / (eta * (cm + 2.0 * cp));
            ClosedForm {
                exact_xx: some(v),
                ..Default::default()
            }
        }
        Scheme::DetunedBlue if !fwd => {
            let (cm, cp) = (co.minus, co.plus);
            let s = (cm - cp + 1.0).powi(2)
                + 4.0 * eta * (3.0 - 2.0 * eta) * cm * cp
                + 4.0 * eta * cp * (nbar + 1.0)
                + 8.0 * nbar * eta * cm;
            let v = (1.0 - (1.0 - eta) * cp + (1.0 - 2.0 * eta) * cm + s.sqrt()) / (eta * (2.0 * cm + cp));
            ClosedForm {
                exact_xx: some(v),
                ..Default::default()
            }
        }
        Scheme::DetunedRed | Scheme::DetunedBlue => ClosedForm::default(),
    }
}

/// Printed degenerate drift eigenvalue `-(γ/2)√(1 + 8ηC(2C + 2n̄ + 1))` of
/// the resonant scheme.
pub fn resonant_drift_eigenvalue(p: &OptomechParams) -> f64 {
    let c = cooperativities(p).bare;
    -(p.gamma / 2.0) * (1.0 + 8.0 * p.eta * c * (2.0 * c + 2.0 * p.nbar + 1.0)).sqrt()
}

/// Efficiency above which the best quadrature beats shot noise:
/// `(1 + 1/C_q^-)/2` for the detuned blue-sideband retrodiction.
pub fn detuned_sub_shot_threshold(p: &OptomechParams) -> f64 {
    0.5 * (1.0 + 1.0 / cooperativities(p).q_minus)
}

/// Scenario file layout: the parameters plus the scheme. Exactly one of
/// `g`, `cooperativity` (`Γ/γ`) or `cq` (`Γ/(γ(n̄+1))`) fixes the coupling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub omega_m: f64,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooperativity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cq: Option<f64>,
    pub gamma: f64,
    pub nbar: f64,
    #[serde(default)]
    pub delta_c: f64,
    #[serde(default)]
    pub phi_lo: f64,
    pub eta: f64,
    pub scheme: Scheme,
}

impl ScenarioFile {
    pub fn from_json_str(text: &str) -> Result<Self, OptomechError> {
        serde_json::from_str(text).map_err(|e| OptomechError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn resolve(&self) -> Result<(OptomechParams, Scheme), OptomechError> {
        let base = OptomechParams {
            omega_m: self.omega_m,
            kappa: self.kappa,
            g: 0.0,
            gamma: self.gamma,
            nbar: self.nbar,
            delta_c: self.delta_c,
            phi_lo: self.phi_lo,
            eta: self.eta,
        };
        let params = match (self.g, self.cooperativity, self.cq) {
            (Some(g), None, None) => OptomechParams { g, ..base },
            (None, Some(c), None) => base.with_cooperativity(c),
            (None, None, Some(cq)) => base.with_quantum_cooperativity(cq),
            _ => {
                return Err(OptomechError::InvalidParams(
                    "give exactly one of g, cooperativity, cq".into(),
                ))
            }
        };
        params.validate()?;
        Ok((params, self.scheme))
    }
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Eta,
    /// Bare quantum cooperativity `C/(n̄+1)`.
    Cq,
    /// Drive detuning in the parameter units.
    DeltaC,
    /// `Ω_m/κ`, varied through `κ` at fixed `Ω_m`.
    OmegaMOverKappa,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Eta => "eta",
            Axis::Cq => "cq",
            Axis::DeltaC => "delta_c",
            Axis::OmegaMOverKappa => "omega_m_over_kappa",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Axis::Eta, Axis::Cq, Axis::DeltaC, Axis::OmegaMOverKappa]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown sweep axis '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl AxisSpec {
    /// `n` evenly spaced values from `lo` to `hi`, or logarithmically spaced
    /// when `log` is set.
    pub fn range(axis: Axis, lo: f64, hi: f64, n: usize, log: bool) -> Self {
        let values = if n <= 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|k| {
                    let t = k as f64 / (n - 1) as f64;
                    if log {
                        (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                    } else {
                        lo + t * (hi - lo)
                    }
                })
                .collect()
        };
        Self { axis, values }
    }
}

/// One sweep point. Divergent or missing values are NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axes: Vec<(Axis, f64)>,
    pub v_xx_rho: f64,
    pub v_pp_rho: f64,
    pub v_xx_e: f64,
    pub v_pp_e: f64,
    pub purity_rho: f64,
    pub purity_e: f64,
    pub converged_rho: bool,
    pub converged_e: bool,
    pub closed_xx_rho: f64,
    pub closed_pp_rho: f64,
    pub closed_xx_e: f64,
    pub closed_pp_e: f64,
}

/// Parameters at one grid point: axes are applied to the template and the
/// coupling is then re-solved so that the bare `C_q` stays fixed unless it
/// is itself swept.
pub fn apply_axes(template: &OptomechParams, point: &[(Axis, f64)]) -> OptomechParams {
    let mut p = *template;
    let mut cq = cooperativities(template).q;
    for &(axis, value) in point {
        match axis {
            Axis::Eta => p.eta = value,
            Axis::Cq => cq = value,
            Axis::DeltaC => p.delta_c = value,
            Axis::OmegaMOverKappa => p.kappa = p.omega_m / value,
        }
    }
    p.with_quantum_cooperativity(cq)
}

/// Numeric and closed-form steady states on the Cartesian product of the
/// axes (last axis fastest). No axes gives the template point alone.
pub fn sweep(template: &OptomechParams, scheme: Scheme, axes: &[AxisSpec]) -> Result<Vec<SweepRow>, OptomechError> {
    let mut points: Vec<Vec<(Axis, f64)>> = vec![Vec::new()];
    for spec in axes {
        points = points
            .into_iter()
            .flat_map(|pt| {
                spec.values.iter().map(move |&v| {
                    let mut q = pt.clone();
                    q.push((spec.axis, v));
                    q
                })
            })
            .collect();
    }
    crate::rng::ensemble_map(points.len(), |i| sweep_point(template, scheme, &points[i]))
        .into_iter()
        .collect()
}

fn sweep_point(template: &OptomechParams, scheme: Scheme, point: &[(Axis, f64)]) -> Result<SweepRow, OptomechError> {
    let p = apply_axes(template, point);
    let model = build_scenario(&p, scheme)?;
    let solve = |dir| -> Result<(f64, f64, f64, bool), OptomechError> {
        let (sol, converged) = match riccati::steady_state(&model, dir) {
            Ok(s) => (s, true),
            Err(RiccatiError::NoSteadyState { partial, .. }) | Err(RiccatiError::NotConverged { partial, .. }) => {
                (*partial, false)
            }
            Err(e) => return Err(e.into()),
        };
        let pick = |j: usize| if sol.divergent.contains(&j) { f64::NAN } else { sol.v[(j, j)] };
        let purity = if sol.divergent.is_empty() {
            crate::gaussian::purity(&sol.v).unwrap_or(f64::NAN)
        } else {
            0.0
        };
        Ok((pick(0), pick(1), purity, converged && sol.converged))
    };
    let (xr, pr, purr, cr) = solve(Direction::Forward)?;
    let (xe, pe, pure, ce) = solve(Direction::Backward)?;
    let cf_f = closed_form_variances(&p, scheme, Direction::Forward);
    let cf_b = closed_form_variances(&p, scheme, Direction::Backward);
    let nan = |x: Option<f64>| x.unwrap_or(f64::NAN);
    Ok(SweepRow {
        axes: point.to_vec(),
        v_xx_rho: xr,
        v_pp_rho: pr,
        v_xx_e: xe,
        v_pp_e: pe,
        purity_rho: purr,
        purity_e: pure,
        converged_rho: cr,
        converged_e: ce,
        closed_xx_rho: nan(cf_f.exact_xx),
        closed_pp_rho: nan(cf_f.exact_pp),
        closed_xx_e: nan(cf_b.exact_xx),
        closed_pp_e: nan(cf_b.exact_pp),
    })
}
