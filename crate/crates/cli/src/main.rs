//! `qretro`: filtering, retrodiction and optomechanics sweeps from the
//! command line.
//!
//! Exit status: 0 on success, 1 on input or I/O errors, 2 when a covariance
//! diverges or a steady state does not exist.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use qretro_core::io;
use qretro_core::optomech;
use qretro_core::riccati::{self, RiccatiError};
use qretro_core::trajectory::{self, CovarianceSchedule, TrajectoryError};
use qretro_core::verify::{self, VerifyOptions};
use qretro_core::{gaussian, rng, CovarianceSolution, Direction};
use serde_json::json;

use config::Loaded;

#[derive(Parser)]
#[command(name = "qretro", version, about = "Gaussian filtering and retrodiction for monitored linear quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic covariance, drift and purity in one direction.
    Steady(Common),
    /// Draws a measurement record and the true conditional trajectory.
    Simulate(Common),
    /// Runs the forward filter over a record.
    Filter(Common),
    /// Retrodicts effect operators backward over a record, or summarizes
    /// an ensemble of simulated records with `--ensemble`.
    Retrodict(Common),
    /// Optomechanics parameter sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `name=lo:hi:n[:log]` or `name=v1,v2,...`; axes: eta, cq, delta_c,
        /// omega_m_over_kappa. Repeatable; the last axis varies fastest.
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
    /// Steady-state mode functions sampled at lags `0, dt, ..., duration`.
    Modes(Common),
    /// Runs the acceptance checks.
    Verify {
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stdout: bool,
        /// Relative shift of closed-form references (sensitivity test).
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb: f64,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Model, scenario or run file (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// fwd or bwd.
    #[arg(long)]
    direction: Option<Direction>,
    /// Write data to standard output instead of `--out`.
    #[arg(long)]
    stdout: bool,
    /// Measurement record CSV.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Covariance of the uninformative final effect.
    #[arg(long = "v-large")]
    v_large: Option<f64>,
}

/// Failure that maps to exit status 2.
#[derive(Debug)]
struct Diverged(String);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Diverged {}

fn classify_riccati(e: RiccatiError) -> anyhow::Error {
    match e {
        RiccatiError::DivergenceDetected { .. } | RiccatiError::NoSteadyState { .. } | RiccatiError::NotConverged { .. } => {
            Diverged(e.to_string()).into()
        }
        other => other.into(),
    }
}

fn classify_trajectory(e: TrajectoryError) -> anyhow::Error {
    match e {
        TrajectoryError::NonFinite(_) | TrajectoryError::NotConverged => Diverged(e.to_string()).into(),
        TrajectoryError::Riccati(r) => classify_riccati(r),
        other => other.into(),
    }
}

struct Settings {
    loaded: Loaded,
    common: Common,
}

impl Settings {
    fn new(common: Common) -> Result<Self> {
        let loaded = config::load(&common.config)?;
        Ok(Self { loaded, common })
    }

    fn dt(&self) -> Result<f64> {
        let dt = self
            .common
            .dt
            .or(self.loaded.run.dt)
            .unwrap_or_else(|| riccati::default_dt(&self.loaded.model));
        if !(dt > 0.0) || !dt.is_finite() {
            bail!("dt must be positive, got {dt}");
        }
        Ok(dt)
    }

    fn duration(&self) -> Result<f64> {
        let d = self
            .common
            .duration
            .or(self.loaded.run.duration)
            .ok_or_else(|| anyhow!("--duration is required"))?;
        if !(d >= 0.0) || !d.is_finite() {
            bail!("duration must be nonnegative, got {d}");
        }
        Ok(d)
    }

    fn seed(&self) -> u64 {
        self.common.seed.or(self.loaded.run.seed).unwrap_or(0)
    }

    fn ensemble(&self) -> Result<usize> {
        let n = self.common.ensemble.or(self.loaded.run.ensemble).unwrap_or(1);
        if n == 0 {
            bail!("ensemble must be at least 1");
        }
        Ok(n)
    }

    fn direction(&self) -> Direction {
        self.common.direction.or(self.loaded.run.direction).unwrap_or(Direction::Forward)
    }

    fn v_large(&self) -> Result<f64> {
        let v = self.common.v_large.or(self.loaded.run.v_large).unwrap_or(trajectory::DEFAULT_V_LARGE);
        if !(v >= 1.0) {
            bail!("v_large must be at least 1, got {v}");
        }
        Ok(v)
    }

    fn out(&self, default: &str) -> PathBuf {
        match (&self.common.out, &self.loaded.run.out) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => self.loaded.resolve(p),
            (None, None) => PathBuf::from(default),
        }
    }

    fn record_path(&self) -> Result<PathBuf> {
        match (&self.common.record, &self.loaded.run.record) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(p)) => Ok(self.loaded.resolve(p)),
            (None, None) => bail!("--record is required"),
        }
    }

    fn read_record(&self) -> Result<qretro_core::MeasurementRecord> {
        let path = self.record_path()?;
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let hint = self.common.dt.or(self.loaded.run.dt);
        io::read_record(file, hint).with_context(|| format!("reading {}", path.display()))
    }

    /// Writes to stdout with `--stdout`, otherwise to `path`.
    fn emit(&self, path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        if self.common.stdout {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        } else {
            write_file(path, f)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// `dir/stem<suffix>.ext`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!(qretro_core::linalg::to_rows(m))
}

fn steady_report(sol: &CovarianceSolution) -> serde_json::Value {
    let purity = if sol.divergent.is_empty() {
        gaussian::purity(&sol.v).ok()
    } else {
        None
    };
    json!({
        "direction": sol.direction,
        "converged": sol.converged,
        "residual": sol.residual,
        "divergent": sol.divergent,
        "V": matrix_json(&sol.v),
        "M": matrix_json(&sol.m),
        "eigen_real_parts": sol.eigen_real_parts,
        "purity": purity,
    })
}

fn print_steady(sol: &CovarianceSolution) {
    eprintln!("direction: {}", sol.direction);
    eprintln!("converged: {} (residual {:.3e})", sol.converged, sol.residual);
    eprintln!("V ={}", sol.v);
    eprintln!("M ={}", sol.m);
    eprintln!("Re eig(M): {:?}", sol.eigen_real_parts);
    if sol.divergent.is_empty() {
        match gaussian::purity(&sol.v) {
            Ok(p) => eprintln!("purity: {p}"),
            Err(e) => eprintln!("purity: undefined ({e})"),
        }
    } else {
        let names: Vec<String> = sol.divergent.iter().map(|j| format!("r_{}", j + 1)).collect();
        eprintln!("divergent: {}", names.join(", "));
        eprintln!("purity: 0");
    }
}

fn cmd_steady(common: Common) -> Result<()> {
    let s = Settings::new(common)?;
    let dir = s.direction();
    let (sol, failure) = match riccati::steady_state(&s.loaded.model, dir) {
        Ok(sol) => (sol, None),
        Err(RiccatiError::NoSteadyState { diverging, partial }) => {
            (*partial, Some(format!("no steady state: quadratures {diverging:?} diverge")))
        }
        Err(RiccatiError::NotConverged { residual, partial }) => {
            (*partial, Some(format!("steady state not converged (residual {residual:.3e})")))
        }
        Err(e) => return Err(classify_riccati(e)),
    };
    print_steady(&sol);
    let report = steady_report(&sol);
    if s.common.stdout || s.common.out.is_some() || s.loaded.run.out.is_some() {
        s.emit(&s.out("steady.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    match failure {
        Some(msg) => Err(Diverged(msg).into()),
        None => Ok(()),
    }
}

fn cmd_simulate(common: Common) -> Result<()> {
    let s = Settings::new(common)?;
    let model = &s.loaded.model;
    let initial = s.loaded.initial_state()?;
    let (dt, duration, seed, n) = (s.dt()?, s.duration()?, s.seed(), s.ensemble()?);
    let out = s.out("record.csv");
    if n == 1 {
        let (record, path) = trajectory::simulate_record(model, &initial, dt, duration, seed).map_err(classify_trajectory)?;
        s.emit(&out, |w| Ok(io::write_record(w, &record)?))?;
        if !s.common.stdout {
            write_file(&sibling(&out, ".truth"), |w| Ok(io::write_trajectory(w, &path, model.dim())?))?;
        }
        return Ok(());
    }
    if s.common.stdout {
        bail!("--stdout cannot be combined with --ensemble");
    }
    let width = (n - 1).to_string().len();
    let results = rng::ensemble_map(n, |i| {
        let (record, path) = trajectory::simulate_indexed(model, &initial, dt, duration, seed, i as u64).map_err(classify_trajectory)?;
        let file = sibling(&out, &format!("_{i:0width$}"));
        write_file(&file, |w| Ok(io::write_record(w, &record)?))?;
        write_file(&sibling(&file, ".truth"), |w| Ok(io::write_trajectory(w, &path, model.dim())?))
    });
    results.into_iter().collect::<Result<Vec<_>>>()?;
    eprintln!("wrote {n} records next to {}", out.display());
    Ok(())
}

fn cmd_filter(common: Common) -> Result<()> {
    let s = Settings::new(common)?;
    let record = s.read_record()?;
    let initial = s.loaded.initial_state()?;
    let path = trajectory::filter_forward(&s.loaded.model, &initial, &record).map_err(classify_trajectory)?;
    s.emit(&s.out("filtered.csv"), |w| Ok(io::write_trajectory(w, &path, s.loaded.model.dim())?))
}

fn cmd_retrodict(common: Common) -> Result<()> {
    let s = Settings::new(common)?;
    let model = &s.loaded.model;
    let effect = trajectory::identity_surrogate(model.n_modes(), s.v_large()?);
    let n = s.ensemble()?;
    if n == 1 {
        let record = s.read_record()?;
        let path = trajectory::retrodict_backward(model, &effect, &record).map_err(classify_trajectory)?;
        return s.emit(&s.out("retrodicted.csv"), |w| Ok(io::write_trajectory(w, &path, model.dim())?));
    }
    // ensemble of simulated records, retrodicted to t_0
    let initial = s.loaded.initial_state()?;
    let (dt, duration, seed) = (s.dt()?, s.duration()?, s.seed());
    let steps = trajectory::step_count(duration, dt)?;
    let rate = trajectory::max_rate(model, &initial.cov);
    if rate > 0.0 && dt > 0.1 / rate {
        return Err(TrajectoryError::StepTooLarge { dt, limit: 0.1 / rate }.into());
    }
    let truth = CovarianceSchedule::forward(model, &initial.cov, dt, steps).map_err(classify_trajectory)?;
    let retro = CovarianceSchedule::backward(model, &effect.cov, &effect.divergent, dt, steps).map_err(classify_trajectory)?;
    let means = rng::ensemble_map(n, |i| {
        let (record, _) = truth.simulate(model.a_meas(), &initial.mean, &mut rng::stream(seed, i as u64), None);
        retro.propagate_endpoint(&effect.mean, &record).expect("schedule matches record")
    });
    let (mean, cov) = trajectory::sample_moments(&means);
    let dim = model.dim();
    let divergent: Vec<usize> = (0..dim).filter(|&j| retro.divergent[0][j]).collect();
    let out = s.out("retrodicted.csv");
    s.emit(&out, |w| {
        let header: Vec<String> = std::iter::once("index".to_string()).chain((1..=dim).map(|j| format!("r_{j}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, r) in means.iter().enumerate() {
            let row: Vec<String> = std::iter::once(i.to_string()).chain(r.iter().map(|&x| io::fmt_f64(x))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    let variance: Vec<f64> = (0..dim).map(|j| cov[(j, j)]).collect();
    // (V_E + V_0)/2 per quadrature, from the Gaussian outcome density
    let predicted: Vec<Option<f64>> = (0..dim)
        .map(|j| (!retro.divergent[0][j]).then(|| (retro.covs[0][(j, j)] + initial.cov[(j, j)]) / 2.0))
        .collect();
    let summary = json!({
        "ensemble": n,
        "seed": seed,
        "dt": dt,
        "duration": duration,
        "mean": mean.iter().collect::<Vec<_>>(),
        "variance": variance,
        "predicted_variance": predicted,
        "standard_error": variance.iter().map(|v| (v / n as f64).sqrt()).collect::<Vec<_>>(),
        "V_E_t0": matrix_json(&retro.covs[0]),
        "divergent": divergent,
    });
    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    if !s.common.stdout {
        write_file(&sibling(&out, ".summary").with_extension("json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &summary)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_sweep(common: Common, axes: Vec<String>) -> Result<()> {
    let s = Settings::new(common)?;
    let (params, scheme) = s.loaded.scenario.ok_or_else(|| anyhow!("sweep needs an optomechanics scenario"))?;
    let specs = if axes.is_empty() {
        s.loaded.run.axes.clone().unwrap_or_default()
    } else {
        axes.iter().map(|a| config::parse_axis(a)).collect::<Result<Vec<_>>>()?
    };
    let rows = optomech::sweep(&params, scheme, &specs)?;
    let names: Vec<&str> = specs.iter().map(|a| a.axis.as_str()).collect();
    s.emit(&s.out("sweep.csv"), |w| Ok(io::write_sweep(w, &names, &rows)?))
}

fn cmd_modes(common: Common) -> Result<()> {
    let s = Settings::new(common)?;
    let model = &s.loaded.model;
    let sol = riccati::steady_state(model, s.direction()).map_err(classify_riccati)?;
    let dt = s.dt()?;
    let n = trajectory::step_count(s.duration()?, dt)?;
    let modes = trajectory::mode_functions(model, &sol, &trajectory::lag_grid(dt, n)).map_err(classify_trajectory)?;
    let names = s.loaded.channel_names();
    s.emit(&s.out("modes.csv"), |w| Ok(io::write_modes(w, &modes, names)?))
}

fn cmd_verify(quick: bool, seed: Option<u64>, out: Option<PathBuf>, stdout: bool, perturb: f64) -> Result<()> {
    let mut opts = VerifyOptions {
        quick,
        closed_form_perturbation: perturb,
        ..Default::default()
    };
    if let Some(seed) = seed {
        opts.seed = seed;
    }
    let checks: Vec<_> = verify::CRITERIA
        .iter()
        .map(|f| {
            let r = f(&opts);
            eprintln!("{}", r.line());
            for d in &r.details {
                eprintln!("    {d}");
            }
            r
        })
        .collect();
    let report = verify::VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        quick,
        checks,
    };
    let text = serde_json::to_string_pretty(&report)?;
    if stdout {
        println!("{text}");
    } else if let Some(path) = out {
        write_file(&path, |w| Ok(writeln!(w, "{text}")?))?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", report.checks.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Steady(c) => cmd_steady(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Filter(c) => cmd_filter(c),
        Command::Retrodict(c) => cmd_retrodict(c),
        Command::Sweep { common, axes } => cmd_sweep(common, axes),
        Command::Modes(c) => cmd_modes(c),
        Command::Verify {
            quick,
            seed,
            out,
            stdout,
            perturb,
        } => cmd_verify(quick, seed, out, stdout, perturb),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Diverged>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
