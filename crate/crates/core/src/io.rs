//! CSV formats.
//!
//! Record: header `t,dY_1,...,dY_Nc`, one row per step, `t` the start of
//! the step, values are increments. Trajectory: header
//! `t,r_1,...,r_2M,V_11,V_12,...`, one row per grid point, covariance upper
//! triangle row by row. Floats are written with 17 significant digits so
//! that reading a file back is exact.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::optomech::SweepRow;
use crate::trajectory::{GaussianPath, MeasurementRecord, ModeFunctionSet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

fn format_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        line,
        message: message.into(),
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse(field: &str, line: usize) -> Result<f64, IoError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format_err(line, format!("'{field}' is not a number")))
}

pub fn record_header(n_channels: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n_channels).map(|c| format!("dY_{c}")))
        .collect()
}

pub fn write_record<W: Write>(out: W, record: &MeasurementRecord) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(record_header(record.n_channels))?;
    for k in 0..record.n_steps {
        let row = std::iter::once(fmt_f64(record.time(k))).chain(record.row(k).iter().map(|&v| fmt_f64(v)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record. The step is taken from the time column; `dt_hint` is
/// required when the file has fewer than two rows and is checked otherwise.
pub fn read_record<R: Read>(input: R, dt_hint: Option<f64>) -> Result<MeasurementRecord, IoError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rd.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(format_err(1, "first column must be 't'"));
    }
    let nc = header.len() - 1;
    for (c, name) in header.iter().skip(1).enumerate() {
        if name != format!("dY_{}", c + 1) {
            return Err(format_err(1, format!("unexpected column '{name}'")));
        }
    }
    let mut times = Vec::new();
    let mut inc = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        times.push(parse(&row[0], line)?);
        for f in row.iter().skip(1) {
            inc.push(parse(f, line)?);
        }
    }
    let dt = match (times.len(), dt_hint) {
        (n, _) if n >= 2 => times[1] - times[0],
        (_, Some(dt)) => dt,
        _ => return Err(format_err(1, "cannot infer dt from fewer than two rows")),
    };
    if !(dt > 0.0) {
        return Err(format_err(2, format!("non-increasing time column (dt = {dt})")));
    }
    if let Some(h) = dt_hint {
        if (h - dt).abs() > 1e-9 * h {
            return Err(format_err(2, format!("time step {dt} differs from dt = {h}")));
        }
    }
    for (k, &t) in times.iter().enumerate() {
        let expect = k as f64 * dt;
        if (t - expect).abs() > 1e-9 * dt.max(expect) {
            return Err(format_err(k + 2, format!("time {t} is off the grid {expect}")));
        }
    }
    let n_steps = times.len();
    let mut record = MeasurementRecord::new(dt, nc, inc).map_err(|e| format_err(1, e.to_string()))?;
    record.n_steps = n_steps;
    Ok(record)
}

pub fn trajectory_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|j| format!("r_{j}")));
    for i in 1..=dim {
        for j in i..=dim {
            h.push(format!("V_{i}{j}"));
        }
    }
    h
}

/// Writes means and covariances at `t_k = k dt`; `dim` sets the header
/// when the path is empty.
pub fn write_trajectory<W: Write>(out: W, path: &GaussianPath, dim: usize) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(dim))?;
    for (k, (r, v)) in path.means.iter().zip(&path.covs).enumerate() {
        let mut row = vec![fmt_f64(k as f64 * path.dt)];
        row.extend(r.iter().map(|&x| fmt_f64(x)));
        for i in 0..dim {
            for j in i..dim {
                row.push(fmt_f64(v[(i, j)]));
            }
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

pub fn read_trajectory<R: Read>(input: R) -> Result<TrajectoryTable, IoError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let cols = header.len().saturating_sub(1);
    // cols = n + n(n+1)/2
    let dim = (0..=cols).find(|&n| n + n * (n + 1) / 2 == cols).ok_or_else(|| format_err(1, "bad column count"))?;
    if header != trajectory_header(dim) {
        return Err(format_err(1, "unexpected header"));
    }
    let mut table = TrajectoryTable {
        times: Vec::new(),
        means: Vec::new(),
        covs: Vec::new(),
    };
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let vals = row.iter().map(|f| parse(f, line)).collect::<Result<Vec<_>, _>>()?;
        table.times.push(vals[0]);
        table.means.push(DVector::from_column_slice(&vals[1..=dim]));
        let mut v = DMatrix::zeros(dim, dim);
        let mut idx = 1 + dim;
        for a in 0..dim {
            for b in a..dim {
                v[(a, b)] = vals[idx];
                v[(b, a)] = vals[idx];
                idx += 1;
            }
        }
        table.covs.push(v);
    }
    Ok(table)
}

fn quadrature_names(dim: usize) -> Vec<String> {
    let m = dim / 2;
    (0..dim)
        .map(|j| {
            let q = if j % 2 == 0 { "x" } else { "p" };
            if m == 1 {
                q.to_string()
            } else {
                format!("{q}{}", j / 2 + 1)
            }
        })
        .collect()
}

/// Writes kernels as `t,f_<q><c>,...`, quadrature-major. Channel labels
/// default to `1..N_C`.
pub fn write_modes<W: Write>(out: W, modes: &ModeFunctionSet, channels: Option<&[&str]>) -> Result<(), IoError> {
    let (dim, nc) = modes.kernel.first().map_or((0, 0), |m| (m.nrows(), m.ncols()));
    let labels: Vec<String> = match channels {
        Some(c) if c.len() == nc => c.iter().map(|s| s.to_string()).collect(),
        _ => (1..=nc).map(|c| format!("_{c}")).collect(),
    };
    let mut header = vec!["t".to_string()];
    for q in quadrature_names(dim) {
        for c in &labels {
            header.push(format!("f_{q}{c}"));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for (t, k) in modes.times.iter().zip(&modes.kernel) {
        let mut row = vec![fmt_f64(*t)];
        for j in 0..dim {
            for c in 0..nc {
                row.push(fmt_f64(k[(j, c)]));
            }
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format sweep table; axis columns come first, flags are 0/1.
pub fn write_sweep<W: Write>(out: W, axes: &[&str], rows: &[SweepRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = axes.iter().map(|s| s.to_string()).collect();
    header.extend(
        [
            "v_xx_rho",
            "v_pp_rho",
            "v_xx_e",
            "v_pp_e",
            "purity_rho",
            "purity_e",
            "converged_rho",
            "converged_e",
            "closed_xx_rho",
            "closed_pp_rho",
            "closed_xx_e",
            "closed_pp_e",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for r in rows {
        let mut row: Vec<String> = r.axes.iter().map(|&(_, v)| fmt_f64(v)).collect();
        row.extend([r.v_xx_rho, r.v_pp_rho, r.v_xx_e, r.v_pp_e, r.purity_rho, r.purity_e].map(fmt_f64));
        row.push(flag(r.converged_rho));
        row.push(flag(r.converged_e));
        row.extend([r.closed_xx_rho, r.closed_pp_rho, r.closed_xx_e, r.closed_pp_e].map(fmt_f64));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
