//! `gmrgp` command-line front end.
//!
//! Every subcommand exits with status 0 on success. On failure it prints
//! `{"error": <kind>, "message": <text>}` on stderr and exits with 1.
//! `GMRGP_LOG` sets the log level (`error`, `warn`, `info`, `debug`, `trace`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmrgp::bench::{run_bench, write_bench_csv, BenchConfig};
use gmrgp::io::{
    grid_inputs, load_demonstrations, load_model, parse_grid, parse_via_points, save_demonstrations,
    write_samples_csv, write_trajectory_csv, Format, LoadOptions, LoadedModel,
};
use gmrgp::scenario::write_tracking_csv;
use gmrgp::{
    fit_gmm, generate_synthetic, gmr_predict_batch, EmConfig, Error, GmmModel, GmrGpModel, NoiseModel,
    OptConfig, PosteriorPrediction, Result, Scenario, SynthKind, SynthParams,
};
use nalgebra::DVector;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gmrgp", version, about = "Learn, adapt and track trajectories with GMR-based Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a GMM to demonstrations and the GMR-GP hyperparameters on top.
    Fit(FitArgs),
    /// Condition a GMR-GP model on via-points.
    Adapt(AdaptArgs),
    /// Predict mean and covariance over a query grid.
    Predict(PredictArgs),
    /// Draw trajectories from the (posterior) process over a query grid.
    Sample(SampleArgs),
    /// Run an LQR tracking scenario.
    Track(TrackArgs),
    /// Time per-query latency of GMR, MOGP and GMR-GP.
    Bench(BenchArgs),
    /// Write synthetic demonstrations.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    components: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Demonstration file format (default: from the extension).
    #[arg(long)]
    format: Option<FileFormat>,
    /// Resample every demonstration to this many samples first.
    #[arg(long)]
    resample: Option<usize>,
    /// Fixed lengthscale for every component; skips hyperparameter fitting.
    #[arg(long)]
    lengthscale: Option<f64>,
    /// Noise variance used with `--lengthscale`.
    #[arg(long, default_value_t = 1e-4)]
    noise: f64,
    /// Optimizer settings as JSON (fields of `OptConfig`); the flags below override it.
    #[arg(long)]
    opt_config: Option<PathBuf>,
    /// Number of optimizer starts.
    #[arg(long)]
    starts: Option<usize>,
    /// Objective evaluations per start.
    #[arg(long)]
    max_evals: Option<usize>,
    /// Keep every k-th demonstration point in the likelihood.
    #[arg(long)]
    stride: Option<usize>,
    /// Cap on likelihood points when no stride is given.
    #[arg(long)]
    max_points: Option<usize>,
    /// EM settings as JSON (fields of `EmConfig`).
    #[arg(long)]
    em_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    via: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gmr,
    GmrGp,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Csv,
    Json,
}

impl From<FileFormat> for Format {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Csv => Format::Csv,
            FileFormat::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query grid `start:stop:step`.
    #[arg(long)]
    grid: String,
    #[arg(long, value_enum, default_value = "gmr-gp")]
    method: Method,
    /// Extra via-points applied before predicting.
    #[arg(long)]
    via: Option<PathBuf>,
    #[arg(long)]
    format: Option<FileFormat>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    via: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Per-step report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON (printed to stdout as well).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark settings as JSON (fields of `BenchConfig`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = ["letter", "minjerk", "gmm-draw"])]
    kind: String,
    /// Number of demonstrations.
    #[arg(long, default_value_t = 5)]
    count: usize,
    /// Samples per demonstration.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    output_dim: usize,
    /// Mixture to draw from (`gmm-draw`); a GMM or GMR-GP model file.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    format: Option<FileFormat>,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn gmrgp_model(path: &Path) -> Result<GmrGpModel> {
    match load_model(path)? {
        LoadedModel::GmrGp(m) => Ok(m),
        LoadedModel::Gmm(_) => Err(Error::InvalidParam(format!(
            "{} holds a bare GMM; run `gmrgp fit` to build a GMR-GP model",
            path.display()
        ))),
    }
}

fn with_via(model: GmrGpModel, via: Option<&PathBuf>) -> Result<GmrGpModel> {
    match via {
        Some(path) => {
            let mut points = model.via_points().to_vec();
            points.extend(parse_via_points(&std::fs::read_to_string(path)?)?);
            model.adapt(points)
        }
        None => Ok(model),
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let options = LoadOptions {
        resample: args.resample,
        equal_length: false,
    };
    let demos = load_demonstrations(&args.demos, args.format.map(Into::into), &options)?;
    let mut em: EmConfig = match &args.em_config {
        Some(p) => read_json(p)?,
        None => EmConfig::default(),
    };
    em.seed = args.seed;
    let fitted = fit_gmm(&demos, args.components, &em)?;
    log::info!(
        "EM finished after {} iterations (converged: {}), log-likelihood {}",
        fitted.iterations(),
        fitted.converged,
        fitted.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    let model = match args.lengthscale {
        Some(l) => GmrGpModel::new(
            fitted.model,
            vec![l; args.components],
            NoiseModel::Shared { variance: args.noise },
        )?,
        None => {
            let mut opt: OptConfig = match &args.opt_config {
                Some(p) => read_json(p)?,
                None => OptConfig::default(),
            };
            opt.seed = args.seed;
            opt.starts = args.starts.unwrap_or(opt.starts);
            opt.max_evals = args.max_evals.unwrap_or(opt.max_evals);
            opt.max_points = args.max_points.unwrap_or(opt.max_points);
            opt.stride = args.stride.or(opt.stride);
            GmrGpModel::build(fitted.model, &demos, &opt)?.0
        }
    };
    std::fs::write(&args.out, model.to_json()? + "\n")?;
    Ok(())
}

fn adapt(args: AdaptArgs) -> Result<()> {
    let model = gmrgp_model(&args.model)?;
    let via = parse_via_points(&std::fs::read_to_string(&args.via)?)?;
    let adapted = model.adapt(via)?;
    std::fs::write(&args.out, adapted.to_json()? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    x: &'a [f64],
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

fn predict(args: PredictArgs) -> Result<()> {
    let xs = grid_inputs(&parse_grid(&args.grid)?);
    let preds: Vec<PosteriorPrediction> = match args.method {
        Method::GmrGp => with_via(gmrgp_model(&args.model)?, args.via.as_ref())?.predict_trajectory(&xs)?,
        Method::Gmr => {
            if args.via.is_some() {
                return Err(Error::InvalidParam("GMR predictions cannot take via-points".into()));
            }
            let loaded = load_model(&args.model)?;
            gmr_predict_batch(loaded.gmm(), &xs)?
                .into_iter()
                .map(|p| PosteriorPrediction {
                    mean: p.mean,
                    covariance: p.covariance,
                })
                .collect()
        }
    };
    let format = args.format.map(Into::into).unwrap_or_else(|| Format::from_path(&args.out));
    match format {
        Format::Csv => write_trajectory_csv(create(&args.out)?, &xs, &preds),
        Format::Json => {
            let records: Vec<PredictionRecord> = xs
                .iter()
                .zip(&preds)
                .map(|(x, p)| PredictionRecord {
                    x: x.as_slice(),
                    mean: p.mean.iter().copied().collect(),
                    covariance: p.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect();
            write_json(&args.out, &records)
        }
    }
}

fn sample(args: SampleArgs) -> Result<()> {
    let model = with_via(gmrgp_model(&args.model)?, args.via.as_ref())?;
    let xs: Vec<DVector<f64>> = grid_inputs(&parse_grid(&args.grid)?);
    let samples = model.sample_trajectories(&xs, args.samples, args.seed)?;
    write_samples_csv(create(&args.out)?, &xs, &samples)
}

fn track(args: TrackArgs) -> Result<()> {
    let scenario = Scenario::from_json(&std::fs::read_to_string(&args.scenario)?)?;
    let base = args.scenario.parent().unwrap_or(Path::new("."));
    let run = scenario.run(base)?;
    write_tracking_csv(create(&args.out)?, &run)?;
    if let Some(path) = &args.summary {
        write_json(path, &run.summary)?;
    }
    println!("{}", serde_json::to_string_pretty(&run.summary)?);
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut config: BenchConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let reports = run_bench(&config)?;
    for r in reports.iter().filter(|r| r.error.is_some()) {
        log::warn!("{} at N={} V={} failed: {}", r.method, r.n, r.v, r.error.as_deref().unwrap_or(""));
    }
    write_bench_csv(create(&args.out)?, &reports)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let kind: SynthKind = args.kind.parse()?;
    let params = SynthParams {
        demos: args.count,
        samples: args.samples,
        noise: args.noise,
        output_dim: args.output_dim,
    };
    let model: Option<GmmModel> = match &args.model {
        Some(p) => Some(load_model(p)?.gmm().clone()),
        None => None,
    };
    let set = generate_synthetic(kind, &params, model.as_ref(), args.seed)?;
    save_demonstrations(&args.out, args.format.map(Into::into), &set)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Adapt(a) => adapt(a),
        Command::Predict(a) => predict(a),
        Command::Sample(a) => sample(a),
        Command::Track(a) => track(a),
        Command::Bench(a) => bench(a),
        Command::Generate(a) => generate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GMRGP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
