//! Config loading. A config file is one of
//!
//! - a model file (has `n_modes`),
//! - an optomechanics scenario (has `scheme`),
//! - a run file pointing at either of the above (`model` / `scenario`, as a
//!   path relative to the run file or inline) plus run settings.
//!
//! Command-line flags override run-file values.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use qretro_core::gaussian::GaussianState;
use qretro_core::optomech::{self, AxisSpec, OptomechParams, ScenarioFile, Scheme};
use qretro_core::{Direction, LinearModel};
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Path(PathBuf),
    Inline(Value),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
}

/// Run-file layout; every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub model: Option<Source>,
    pub scenario: Option<Source>,
    pub initial: Option<InitialState>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub ensemble: Option<usize>,
    pub v_large: Option<f64>,
    pub direction: Option<Direction>,
    pub record: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub axes: Option<Vec<AxisSpec>>,
}

/// Model plus what is known about where it came from.
pub struct Loaded {
    pub model: LinearModel,
    pub scenario: Option<(OptomechParams, Scheme)>,
    pub run: RunFile,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn channel_names(&self) -> Option<&'static [&'static str]> {
        self.scenario.map(|(_, s)| s.channel_names())
    }

    /// Resolves a path from the run file against its directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn initial_state(&self) -> Result<GaussianState> {
        let n = self.model.dim();
        match &self.run.initial {
            None => Ok(GaussianState::vacuum(self.model.n_modes())),
            Some(init) => {
                if init.mean.len() != n {
                    bail!("initial mean has {} entries, model needs {n}", init.mean.len());
                }
                let cov = match &init.cov {
                    None => nalgebra::DMatrix::identity(n, n),
                    Some(rows) => {
                        let m = qretro_core::linalg::from_rows(rows).ok_or_else(|| anyhow!("initial cov has ragged rows"))?;
                        if m.shape() != (n, n) {
                            bail!("initial cov must be {n}x{n}");
                        }
                        m
                    }
                };
                Ok(GaussianState::new(nalgebra::DVector::from_vec(init.mean.clone()), cov))
            }
        }
    }
}

fn parse_value(text: &str, what: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| anyhow!("invalid JSON in {what}: {e}"))
}

fn model_from_value(v: &Value, what: &str) -> Result<LinearModel> {
    let model = LinearModel::from_json_str(&v.to_string()).with_context(|| format!("model in {what}"))?;
    model.ensure_valid().with_context(|| format!("model in {what}"))?;
    Ok(model)
}

fn scenario_from_value(v: &Value, what: &str) -> Result<(LinearModel, OptomechParams, Scheme)> {
    let (params, scheme) = ScenarioFile::from_json_str(&v.to_string())
        .and_then(|s| s.resolve())
        .with_context(|| format!("scenario in {what}"))?;
    for w in optomech::warnings(&params) {
        eprintln!("warning: {w}");
    }
    let model = optomech::build_scenario(&params, scheme).with_context(|| format!("scenario in {what}"))?;
    Ok((model, params, scheme))
}

fn read_source(src: &Source, base: &Path) -> Result<(Value, String)> {
    match src {
        Source::Inline(v) => Ok((v.clone(), "inline value".into())),
        Source::Path(p) => {
            let path = if p.is_absolute() { p.clone() } else { base.join(p) };
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let what = path.display().to_string();
            Ok((parse_value(&text, &what)?, what))
        }
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let what = path.display().to_string();
    let value = parse_value(&text, &what)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let obj = value.as_object().ok_or_else(|| anyhow!("{what}: expected a JSON object"))?;
    if obj.contains_key("n_modes") {
        return Ok(Loaded {
            model: model_from_value(&value, &what)?,
            scenario: None,
            run: RunFile::default(),
            base_dir,
        });
    }
    if obj.contains_key("scheme") {
        let (model, p, s) = scenario_from_value(&value, &what)?;
        return Ok(Loaded {
            model,
            scenario: Some((p, s)),
            run: RunFile::default(),
            base_dir,
        });
    }
    let run: RunFile = serde_json::from_str(&text)
        .map_err(|e| anyhow!("invalid run file {what}: {e}"))?;
    let (model, scenario) = match (&run.model, &run.scenario) {
        (Some(src), None) => {
            let (v, w) = read_source(src, &base_dir)?;
            (model_from_value(&v, &w)?, None)
        }
        (None, Some(src)) => {
            let (v, w) = read_source(src, &base_dir)?;
            let (m, p, s) = scenario_from_value(&v, &w)?;
            (m, Some((p, s)))
        }
        _ => bail!("{what}: a run file needs exactly one of 'model' or 'scenario'"),
    };
    Ok(Loaded {
        model,
        scenario,
        run,
        base_dir,
    })
}

/// Parses `name=lo:hi:n[:log]` or `name=v1,v2,...`.
pub fn parse_axis(spec: &str) -> Result<AxisSpec> {
    let (name, rest) = spec.split_once('=').ok_or_else(|| anyhow!("axis '{spec}': expected name=values"))?;
    let axis = name.trim().parse().map_err(|e: String| anyhow!(e))?;
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("axis '{spec}': bad number '{s}'"));
    if rest.contains(':') {
        let parts: Vec<&str> = rest.split(':').collect();
        let log = match parts.len() {
            3 => false,
            4 if parts[3] == "log" => true,
            _ => bail!("axis '{spec}': expected lo:hi:n or lo:hi:n:log"),
        };
        let n: usize = parts[2].trim().parse().with_context(|| format!("axis '{spec}': bad count"))?;
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        if log && (lo <= 0.0 || hi <= 0.0) {
            bail!("axis '{spec}': log spacing needs positive bounds");
        }
        Ok(AxisSpec::range(axis, lo, hi, n, log))
    } else {
        let values = rest.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>>>()?;
        Ok(AxisSpec { axis, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qretro_core::optomech::Axis;

    #[test]
    fn axis_specs() {
        let a = parse_axis("eta=0.5:1:3").unwrap();
        assert_eq!(a.axis, Axis::Eta);
        assert_eq!(a.values, vec![0.5, 0.75, 1.0]);
        let b = parse_axis("cq=0.01:100:5:log").unwrap();
        assert!((b.values[2] - 1.0).abs() < 1e-12);
        let c = parse_axis("delta_c=-1,-0.5").unwrap();
        assert_eq!(c.values, vec![-1.0, -0.5]);
        assert!(parse_axis("bogus=1").is_err());
        assert!(parse_axis("eta").is_err());
    }
}
