//! File formats: demonstrations (CSV/JSON), via-points, query grids and
//! prediction exports.
//!
//! Demonstration CSV layout:
//!
//! ```text
//! # input_dim=1 output_dim=2
//! demo_id,t,x,y
//! 0,0,3,2
//! ...
//! ```
//!
//! The preamble is optional (`input_dim=1` and the remaining columns as
//! outputs are assumed without it). Rows of one demonstration must be
//! contiguous. Floats are written in shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::DemonstrationSet;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::gmrgp::{GmrGpFile, GmrGpModel, ViaPoint};
use crate::gp::PosteriorPrediction;
use crate::linalg::row_major;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `json` for a `.json` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidParam(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Resample every demonstration to this many samples.
    pub resample: Option<usize>,
    /// Reject demonstrations of differing lengths with `RaggedDemo`.
    pub equal_length: bool,
}

/// JSON layout of a demonstration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationFile {
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub columns: Vec<String>,
    pub demos: Vec<DemoRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

pub fn load_demonstrations(
    path: &Path,
    format: Option<Format>,
    options: &LoadOptions,
) -> Result<DemonstrationSet> {
    let text = fs::read_to_string(path)?;
    let set = match format.unwrap_or_else(|| Format::from_path(path)) {
        Format::Csv => parse_demo_csv(&text)?,
        Format::Json => from_demo_file(serde_json::from_str(&text)?)?,
    };
    finish_load(set, options)
}

fn finish_load(set: DemonstrationSet, options: &LoadOptions) -> Result<DemonstrationSet> {
    if options.equal_length {
        let lens: Vec<usize> = set.boundaries().iter().map(|r| r.len()).collect();
        if lens.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::RaggedDemo(format!("demonstration lengths differ: {lens:?}")));
        }
    }
    match options.resample {
        Some(len) => set.resampled(len),
        None => Ok(set),
    }
}

fn parse_preamble(line: &str) -> Result<(Option<usize>, Option<usize>)> {
    let mut din = None;
    let mut dout = None;
    for token in line.trim_start_matches('#').split_whitespace() {
        let Some((key, value)) = token.split_once('=') else {
            continue;
        };
        let parsed = value.parse::<usize>().map_err(|e| Error::ParseError {
            row: 1,
            column: 0,
            message: format!("preamble `{token}`: {e}"),
        })?;
        match key {
            "input_dim" => din = Some(parsed),
            "output_dim" => dout = Some(parsed),
            _ => {}
        }
    }
    Ok((din, dout))
}

/// Parses the demonstration CSV layout described in the module docs.
pub fn parse_demo_csv(text: &str) -> Result<DemonstrationSet> {
    let mut body = text;
    let mut line_offset = 0;
    let (mut din, mut dout) = (None, None);
    if let Some(first) = text.lines().next().filter(|l| l.starts_with('#')) {
        (din, dout) = parse_preamble(first)?;
        body = text[first.len()..].trim_start_matches(['\r', '\n']);
        line_offset = 1;
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "demo_id" {
        return Err(Error::ParseError {
            row: line_offset + 1,
            column: 1,
            message: "header must start with `demo_id` followed by input and output columns".into(),
        });
    }
    let din = din.unwrap_or(1);
    let dout = dout.unwrap_or(header.len() - 1 - din);
    if din == 0 || dout == 0 || 1 + din + dout != header.len() {
        return Err(Error::ParseError {
            row: line_offset + 1,
            column: header.len(),
            message: format!(
                "expected 1 + {din} + {dout} columns, header has {}",
                header.len()
            ),
        });
    }

    let mut demos: Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = line_offset + k + 2;
        let record = record.map_err(|e| Error::ParseError {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::ParseError {
                row,
                column: record.len(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let id = record[0].to_string();
        let mut values = Vec::with_capacity(din + dout);
        for c in 1..record.len() {
            let v: f64 = record[c].parse().map_err(|e| Error::ParseError {
                row,
                column: c + 1,
                message: format!("`{}`: {e}", &record[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row,
                    column: header[c].clone(),
                });
            }
            values.push(v);
        }
        if ids.last() != Some(&id) {
            if ids.contains(&id) {
                return Err(Error::RaggedDemo(format!(
                    "rows of demonstration `{id}` are not contiguous (row {row})"
                )));
            }
            ids.push(id);
            demos.push((Vec::new(), Vec::new()));
        }
        let demo = demos.last_mut().expect("pushed above");
        demo.0.push(DVector::from_column_slice(&values[..din]));
        demo.1.push(DVector::from_column_slice(&values[din..]));
    }
    DemonstrationSet::from_demos(demos)
}

fn from_demo_file(file: DemonstrationFile) -> Result<DemonstrationSet> {
    let mut demos = Vec::with_capacity(file.demos.len());
    for (k, d) in file.demos.into_iter().enumerate() {
        if d.inputs.len() != d.outputs.len() {
            return Err(Error::RaggedDemo(format!(
                "demonstration {k} has {} inputs and {} outputs",
                d.inputs.len(),
                d.outputs.len()
            )));
        }
        let check = |v: &[f64], dim: usize, what: &str, i: usize| -> Result<DVector<f64>> {
            if v.len() != dim {
                return Err(Error::RaggedDemo(format!(
                    "demonstration {k}, sample {i}: {what} has {} values, expected {dim}",
                    v.len()
                )));
            }
            Ok(DVector::from_column_slice(v))
        };
        let xs = d
            .inputs
            .iter()
            .enumerate()
            .map(|(i, v)| check(v, file.input_dim, "input", i))
            .collect::<Result<Vec<_>>>()?;
        let ys = d
            .outputs
            .iter()
            .enumerate()
            .map(|(i, v)| check(v, file.output_dim, "output", i))
            .collect::<Result<Vec<_>>>()?;
        demos.push((xs, ys));
    }
    DemonstrationSet::from_demos(demos)
}

fn default_columns(din: usize, dout: usize) -> Vec<String> {
    let mut cols: Vec<String> = if din == 1 {
        vec!["t".into()]
    } else {
        (0..din).map(|i| format!("x{i}")).collect()
    };
    cols.extend((0..dout).map(|i| format!("y{i}")));
    cols
}

pub fn to_demo_file(set: &DemonstrationSet) -> DemonstrationFile {
    DemonstrationFile {
        input_dim: set.input_dim(),
        output_dim: set.output_dim(),
        columns: default_columns(set.input_dim(), set.output_dim()),
        demos: (0..set.num_demos())
            .map(|k| {
                let (xs, ys) = set.demo(k);
                DemoRecord {
                    inputs: xs.iter().map(|v| v.iter().copied().collect()).collect(),
                    outputs: ys.iter().map(|v| v.iter().copied().collect()).collect(),
                }
            })
            .collect(),
    }
}

pub fn write_demo_csv<W: Write>(mut out: W, set: &DemonstrationSet) -> Result<()> {
    writeln!(
        out,
        "# input_dim={} output_dim={}",
        set.input_dim(),
        set.output_dim()
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["demo_id".to_string()];
    header.extend(default_columns(set.input_dim(), set.output_dim()));
    w.write_record(&header)?;
    for k in 0..set.num_demos() {
        let (xs, ys) = set.demo(k);
        for (x, y) in xs.iter().zip(ys) {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().chain(y.iter()).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_demonstrations(path: &Path, format: Option<Format>, set: &DemonstrationSet) -> Result<()> {
    let file = fs::File::create(path)?;
    let out = std::io::BufWriter::new(file);
    match format.unwrap_or_else(|| Format::from_path(path)) {
        Format::Csv => write_demo_csv(out, set),
        Format::Json => Ok(serde_json::to_writer_pretty(out, &to_demo_file(set))?),
    }
}

/// Contents of a model file: a GMR-GP model or a bare mixture.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    GmrGp(GmrGpModel),
    Gmm(GmmModel),
}

impl LoadedModel {
    pub fn gmm(&self) -> &GmmModel {
        match self {
            LoadedModel::GmrGp(m) => m.gmm(),
            LoadedModel::Gmm(g) => g,
        }
    }
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = fs::read_to_string(path)?;
    match serde_json::from_str::<GmrGpFile>(&text) {
        Ok(file) => Ok(LoadedModel::GmrGp(GmrGpModel::from_file(file)?)),
        Err(first) => match serde_json::from_str::<GmmModel>(&text) {
            Ok(gmm) => Ok(LoadedModel::Gmm(gmm)),
            Err(_) => Err(first.into()),
        },
    }
}

/// Via-points as a JSON array or as `{"via_points": [...]}`.
pub fn parse_via_points(text: &str) -> Result<Vec<ViaPoint>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum ViaFile {
        List(Vec<ViaPoint>),
        Wrapped { via_points: Vec<ViaPoint> },
    }
    Ok(match serde_json::from_str(text)? {
        ViaFile::List(v) | ViaFile::Wrapped { via_points: v } => v,
    })
}

/// Inclusive 1-D grid from `"start:stop:step"`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = |msg: &str| Error::InvalidParam(format!("grid `{spec}`: {msg}"));
    if parts.len() != 3 {
        return Err(bad("expected start:stop:step"));
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    grid(nums[0], nums[1], nums[2])
}

/// `start, start + step, …` up to `stop` (included within a 1e-9 step
/// tolerance).
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite() && step > 0.0 && stop >= start) {
        return Err(Error::InvalidParam(format!(
            "grid needs finite start <= stop and step > 0, got {start}:{stop}:{step}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

pub fn grid_inputs(ts: &[f64]) -> Vec<DVector<f64>> {
    ts.iter().map(|&t| DVector::from_element(1, t)).collect()
}

/// One row per query: `x…, mean…, cov_i_j…, lower…, upper…` with
/// `mean ± 2σ` bounds per output dimension.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    xs: &[DVector<f64>],
    preds: &[PosteriorPrediction],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (din, d) = match (xs.first(), preds.first()) {
        (Some(x), Some(p)) => (x.len(), p.mean.len()),
        _ => {
            w.flush()?;
            return Ok(());
        }
    };
    let mut header: Vec<String> = (0..din).map(|i| format!("x{i}")).collect();
    header.extend((0..d).map(|i| format!("mean{i}")));
    for i in 0..d {
        header.extend((0..d).map(|j| format!("cov{i}_{j}")));
    }
    header.extend((0..d).map(|i| format!("lower{i}")));
    header.extend((0..d).map(|i| format!("upper{i}")));
    w.write_record(&header)?;
    for (x, p) in xs.iter().zip(preds) {
        let sd: Vec<f64> = (0..d).map(|i| p.covariance[(i, i)].max(0.0).sqrt()).collect();
        let row: Vec<String> = x
            .iter()
            .chain(p.mean.iter())
            .copied()
            .chain(row_major(&p.covariance))
            .chain((0..d).map(|i| p.mean[i] - 2.0 * sd[i]))
            .chain((0..d).map(|i| p.mean[i] + 2.0 * sd[i]))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `sample, x…, y…`.
pub fn write_samples_csv<W: Write>(
    out: W,
    xs: &[DVector<f64>],
    samples: &[Vec<DVector<f64>>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (din, d) = match (xs.first(), samples.first().and_then(|s| s.first())) {
        (Some(x), Some(y)) => (x.len(), y.len()),
        _ => {
            w.flush()?;
            return Ok(());
        }
    };
    let mut header = vec!["sample".to_string()];
    header.extend((0..din).map(|i| format!("x{i}")));
    header.extend((0..d).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (s, traj) in samples.iter().enumerate() {
        for (x, y) in xs.iter().zip(traj) {
            let mut row = vec![s.to_string()];
            row.extend(x.iter().chain(y.iter()).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
