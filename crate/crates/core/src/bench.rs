//! Per-query latency of GMR, a demonstration-conditioned MOGP and a
//! via-point-conditioned GMR-GP over a grid of demonstration sizes `N` and
//! via-point counts `V`.
//!
//! Each repetition times a batch of queries and records the mean per-query
//! latency. Methods are timed one after another; within a method, the cells
//! of one `N` are interleaved so that slow drift spreads evenly across `V`.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::DemonstrationSet;
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, EmConfig, GmmModel};
use crate::gmr::{gmr_mean, gmr_predict};
use crate::gmrgp::{GmrGpModel, NoiseModel, ViaPoint};
use crate::mogp::{coregionalization_base, MogpModel};
use crate::synth::{generate_synthetic, SynthKind, SynthParams, MINJERK_DURATION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    Gmr,
    Mogp,
    GmrGp,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Gmr => "gmr",
            BenchMethod::Mogp => "mogp",
            BenchMethod::GmrGp => "gmr-gp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    /// Total demonstration samples; split over `demos` equal demonstrations.
    pub n_grid: Vec<usize>,
    pub v_grid: Vec<usize>,
    pub demos: usize,
    pub output_dim: usize,
    pub components: usize,
    pub warmup: usize,
    pub repetitions: usize,
    /// Lower bound on the wall time of one timed batch, in milliseconds.
    pub min_batch_ms: f64,
    pub max_batch: usize,
    pub lengthscale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![BenchMethod::Gmr, BenchMethod::Mogp, BenchMethod::GmrGp],
            n_grid: vec![100, 1000, 10000],
            v_grid: vec![3],
            demos: 5,
            output_dim: 2,
            components: 4,
            warmup: 5,
            repetitions: 30,
            min_batch_ms: 0.5,
            max_batch: 256,
            lengthscale: 0.5,
            noise: 1e-4,
            seed: 0,
        }
    }
}

/// Latency statistics of one `(method, N, V)` cell, in milliseconds per
/// query. MOGP ignores via-points and reports `v = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub n: usize,
    pub v: usize,
    pub output_dim: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
    pub count: usize,
    pub batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub samples_ms: Vec<f64>,
}

impl BenchReport {
    fn failed(method: BenchMethod, n: usize, v: usize, d: usize, err: &Error) -> Self {
        Self {
            method: method.name().into(),
            n,
            v,
            output_dim: d,
            mean_ms: f64::NAN,
            std_ms: f64::NAN,
            median_ms: f64::NAN,
            count: 0,
            batch: 0,
            error: Some(err.to_string()),
            samples_ms: Vec::new(),
        }
    }

    fn from_samples(method: BenchMethod, n: usize, v: usize, d: usize, batch: usize, samples: Vec<f64>) -> Self {
        let count = samples.len();
        let mean = samples.iter().sum::<f64>() / count as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count.max(2) - 1) as f64;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            sorted[count / 2]
        } else {
            0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
        };
        Self {
            method: method.name().into(),
            n,
            v,
            output_dim: d,
            mean_ms: mean,
            std_ms: var.sqrt(),
            median_ms: median,
            count,
            batch,
            error: None,
            samples_ms: samples,
        }
    }
}

/// Via-points spread over the interior of the time range, offset slightly
/// from the GMR mean.
pub fn bench_via_points(gmm: &GmmModel, v: usize) -> Result<Vec<ViaPoint>> {
    (0..v)
        .map(|i| {
            let t = MINJERK_DURATION * (i + 1) as f64 / (v + 1) as f64;
            let m = gmr_mean(gmm, &DVector::from_element(1, t))?;
            Ok(ViaPoint::new(vec![t], m.iter().map(|y| y + 0.01).collect()))
        })
        .collect()
}

fn bench_demos(config: &BenchConfig, n: usize) -> Result<DemonstrationSet> {
    let params = SynthParams {
        demos: config.demos,
        samples: n / config.demos.max(1),
        noise: 1.0,
        output_dim: config.output_dim,
    };
    generate_synthetic(SynthKind::Minjerk, &params, None, config.seed)
}

type Query<'a> = Box<dyn Fn(&DVector<f64>) -> Result<()> + 'a>;

struct Cell<'a> {
    method: BenchMethod,
    v: usize,
    query: Query<'a>,
    batch: usize,
    samples: Vec<f64>,
    error: Option<Error>,
}

fn time_batch(query: &Query<'_>, xs: &[DVector<f64>], batch: usize, offset: usize) -> Result<f64> {
    let start = Instant::now();
    for k in 0..batch {
        query(&xs[(offset + k) % xs.len()])?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / batch as f64)
}

/// Runs every requested cell sequentially and returns one report per cell.
/// Build or query failures are recorded in the report's `error`.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchReport>> {
    if config.repetitions == 0 || config.demos == 0 {
        return Err(Error::InvalidParam("bench needs >= 1 repetition and demonstration".into()));
    }
    let xs: Vec<DVector<f64>> = (0..97)
        .map(|i| DVector::from_element(1, MINJERK_DURATION * (i as f64 + 0.5) / 97.0))
        .collect();
    let mut reports = Vec::new();
    for &n in &config.n_grid {
        log::info!("bench: N = {n}");
        let d = config.output_dim;
        let demos = match bench_demos(config, n) {
            Ok(demos) => demos,
            Err(e) => {
                for &m in &config.methods {
                    reports.push(BenchReport::failed(m, n, 0, d, &e));
                }
                continue;
            }
        };
        let em = EmConfig {
            seed: config.seed,
            ..EmConfig::default()
        };
        let gmm = fit_gmm(&demos, config.components, &em).map(|f| f.model);
        let mogp = config.methods.contains(&BenchMethod::Mogp).then(|| {
            MogpModel::new(1, coregionalization_base(&demos), &[config.lengthscale], &[1.0], config.noise)
                .and_then(|m| m.condition_on_demos(&demos))
        });
        let gmrgp: Vec<(usize, Result<GmrGpModel>)> = config
            .v_grid
            .iter()
            .map(|&v| {
                let model = gmm.as_ref().map_err(clone_err).and_then(|g| {
                    GmrGpModel::new(
                        g.clone(),
                        vec![config.lengthscale; g.num_components()],
                        NoiseModel::Shared {
                            variance: config.noise,
                        },
                    )?
                    .adapt(bench_via_points(g, v)?)
                });
                (v, model)
            })
            .collect();

        let mut pending: Vec<(BenchMethod, usize, Result<Query<'_>>)> = Vec::new();
        for &m in &config.methods {
            match m {
                BenchMethod::Gmr => {
                    for &v in &config.v_grid {
                        let q = gmm.as_ref().map_err(clone_err).map(|g| -> Query<'_> {
                            Box::new(move |x| gmr_predict(g, x).map(drop))
                        });
                        pending.push((m, v, q));
                    }
                }
                BenchMethod::Mogp => {
                    let q = mogp.as_ref().expect("built above").as_ref().map_err(clone_err).map(
                        |model| -> Query<'_> { Box::new(move |x| model.predict(x).map(drop)) },
                    );
                    pending.push((m, 0, q));
                }
                BenchMethod::GmrGp => {
                    for (v, model) in &gmrgp {
                        let q = model.as_ref().map_err(clone_err).map(|model| -> Query<'_> {
                            Box::new(move |x| model.predict(x).map(drop))
                        });
                        pending.push((m, *v, q));
                    }
                }
            }
        }
        let mut cells = Vec::new();
        for (method, v, q) in pending {
            match q {
                Ok(query) => cells.push(Cell {
                    method,
                    v,
                    query,
                    batch: 1,
                    samples: Vec::new(),
                    error: None,
                }),
                Err(e) => reports.push(BenchReport::failed(method, n, v, d, &e)),
            }
        }

        for cell in &mut cells {
            let mut fastest: Option<f64> = None;
            for w in 0..config.warmup.max(1) {
                match time_batch(&cell.query, &xs, 1, w) {
                    Ok(t) => fastest = Some(fastest.map_or(t, |f| f.min(t))),
                    Err(e) => {
                        cell.error = Some(e);
                        break;
                    }
                }
            }
            if let Some(t) = fastest {
                cell.batch = ((config.min_batch_ms / t.max(1e-9)).ceil() as usize).clamp(1, config.max_batch.max(1));
            }
        }
        for &method in &config.methods {
            for rep in 0..config.repetitions {
                for cell in cells.iter_mut().filter(|c| c.method == method && c.error.is_none()) {
                    match time_batch(&cell.query, &xs, cell.batch, rep * cell.batch) {
                        Ok(t) => cell.samples.push(t),
                        Err(e) => cell.error = Some(e),
                    }
                }
            }
        }
        for cell in cells {
            reports.push(match cell.error {
                Some(e) => BenchReport::failed(cell.method, n, cell.v, d, &e),
                None => BenchReport::from_samples(cell.method, n, cell.v, d, cell.batch, cell.samples),
            });
        }
    }
    Ok(reports)
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidParam(e.to_string())
}

/// Least-squares slope of latency against `V` over every repetition of
/// `method`, with its standard error. `None` with fewer than two distinct `V`.
pub fn latency_slope(reports: &[BenchReport], method: BenchMethod) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.method == method.name() && r.error.is_none())
        .flat_map(|r| r.samples_ms.iter().map(move |&s| (r.v as f64, s)))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 3 || sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    Some((slope, (rss / (n - 2.0) / sxx).sqrt()))
}

pub fn write_bench_csv<W: Write>(out: W, reports: &[BenchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "n", "v", "output_dim", "mean_ms", "std_ms", "median_ms", "count", "batch", "error",
    ])?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.n.to_string(),
            r.v.to_string(),
            r.output_dim.to_string(),
            r.mean_ms.to_string(),
            r.std_ms.to_string(),
            r.median_ms.to_string(),
            r.count.to_string(),
            r.batch.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_produces_every_cell() {
        let cfg = BenchConfig {
            n_grid: vec![50],
            v_grid: vec![1, 2],
            warmup: 1,
            repetitions: 3,
            min_batch_ms: 0.01,
            ..BenchConfig::default()
        };
        let reports = run_bench(&cfg).unwrap();
        assert_eq!(reports.len(), 5);
        for r in &reports {
            assert!(r.error.is_none(), "{r:?}");
            assert_eq!(r.count, 3);
            assert!(r.median_ms > 0.0);
        }
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &reports).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn slope_of_exact_line() {
        let mk = |v: usize, s: Vec<f64>| BenchReport::from_samples(BenchMethod::Gmr, 1, v, 1, 1, s);
        let reports = vec![mk(1, vec![1.0, 1.0]), mk(3, vec![2.0, 2.0])];
        let (slope, se) = latency_slope(&reports, BenchMethod::Gmr).unwrap();
        assert!((slope - 0.5).abs() < 1e-12);
        assert!(se < 1e-12);
    }
}
