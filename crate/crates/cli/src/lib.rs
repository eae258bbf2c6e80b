//! The `s2dm` command-line driver.
//!
//! Every command is a plain function over parsed arguments so tests can call
//! it without spawning a process. [`run_from_args`] is the whole binary.

pub mod ablate;
pub mod error;
pub mod svg;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use s2dm::checkpoint::Checkpoint;
use s2dm::config::{loss_curve_csv, manifest_text, RunConfig};
use s2dm::evalkit::{load_batch, make_dataset, mmd_rbf, moment_report, save_batch, save_trajectory, sliced_wasserstein_mode, MetricReport};
use s2dm::fsio::write_atomic;
use s2dm::oracle::checks::{run_suite, OracleReport, SuiteOptions};
use s2dm::par::ExecMode;
use s2dm::predictor::NoisePredictor;
use s2dm::samplers::{alpha_grid, draw_latents, interpolate_run, sample, InterpMode, SamplerKind, SamplerSpec};
use s2dm::schedule::{build_stride, ScheduleParams};
use s2dm::{difftrain, SampleBatch};

pub use ablate::{AblateOptions, AblationGrid};
pub use error::{CliError, CliResult, EXIT_BUDGET, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

/// Overrides the default output directory.
pub const OUT_DIR_ENV: &str = "S2DM_OUT_DIR";
pub const METRICS: [&str; 3] = ["swd", "mmd", "moments"];

#[derive(Debug, Parser)]
#[command(name = "s2dm", version, about = "Skip-step diffusion lab on 2D point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Compare two sample files.
    Eval(EvalArgs),
    /// Decode interpolations between latent pairs.
    Interpolate(InterpolateArgs),
    /// Train skip widths against a baseline and score every sampling stride.
    Ablate(AblateArgs),
    /// Run the analytic invariant suite.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory [default: $S2DM_OUT_DIR or ./s2dm-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of sampling steps.
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// ddim or pndm
    #[arg(long, default_value = "ddim")]
    pub sampler: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV [default: <out dir>/samples.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every visited state to `<out>.trajectory.csv`.
    #[arg(long)]
    pub trajectory: bool,
    /// Also write a scatter plot to `<out>.svg`.
    #[arg(long)]
    pub svg: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// swd, mmd or moments
    #[arg(long, default_value = "swd")]
    pub metric: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = s2dm::evalkit::DEFAULT_PROJECTIONS)]
    pub projections: usize,
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth: f64,
    /// Where to save the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, default_value_t = 11)]
    pub alphas: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per latent.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    /// Straight-line instead of spherical interpolation.
    #[arg(long)]
    pub linear: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,10,50")]
    pub skips: Vec<usize>,
    /// Jump widths between sampled timesteps.
    #[arg(long, value_delimiter = ',', default_value = "2,10,50")]
    pub strides: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 2000)]
    pub n_eval: usize,
    #[arg(long, default_value_t = s2dm::evalkit::DEFAULT_PROJECTIONS)]
    pub projections: usize,
    /// Largest total iteration count run without --force.
    #[arg(long, default_value_t = ablate::DEFAULT_BUDGET)]
    pub budget: u64,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Fewer Monte Carlo samples and a shorter training check.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("s2dm-out"))
}

fn out_dir(arg: &Option<PathBuf>) -> PathBuf {
    arg.clone().unwrap_or_else(default_out_dir)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Trains and writes `checkpoint.s2dm`, `manifest.txt` and `loss_curve.csv`.
/// An aborted run still writes its manifest and loss log.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<PathBuf> {
    let cfg = read_config(&args.config)?;
    let dir = out_dir(&args.out);
    let data = make_dataset(&cfg.data)?;
    match difftrain::train(&cfg.train, &data, ExecMode::from_jobs(args.jobs)) {
        Ok(done) => {
            let ckpt = dir.join("checkpoint.s2dm");
            done.checkpoint.save(&ckpt)?;
            write_text(&dir.join("manifest.txt"), &manifest_text(&cfg, &done.manifest))?;
            write_text(&dir.join("loss_curve.csv"), &loss_curve_csv(&done.manifest))?;
            let _ = writeln!(out, "checkpoint={}", ckpt.display());
            let _ = writeln!(out, "checkpoint_hash={}", done.checkpoint.content_hash());
            let _ = writeln!(out, "iterations={}", done.manifest.iterations_run);
            Ok(ckpt)
        }
        Err(abort) => {
            write_text(&dir.join("manifest.txt"), &manifest_text(&cfg, &abort.manifest))?;
            write_text(&dir.join("loss_curve.csv"), &loss_curve_csv(&abort.manifest))?;
            Err(abort.error.into())
        }
    }
}

fn sampler_spec(kind: &str, steps: usize, eta: f64, total: usize) -> CliResult<SamplerSpec> {
    let kind = SamplerKind::parse(kind)
        .ok_or_else(|| CliError::Usage(format!("unknown sampler {kind:?}; valid samplers: ddim, pndm")))?;
    let stride = build_stride(total, steps)?;
    Ok(match kind {
        SamplerKind::Ddim => SamplerSpec::ddim(stride, eta),
        SamplerKind::Pndm => {
            if eta != 0.0 {
                return Err(CliError::Usage("the pndm sampler is deterministic; drop --eta".into()));
            }
            SamplerSpec::pndm(stride)
        }
    })
}

pub fn cmd_sample(args: &SampleArgs, out: &mut dyn Write) -> CliResult<PathBuf> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = ckpt.model()?;
    let sched = ckpt.schedule()?;
    let spec = sampler_spec(&args.sampler, args.steps, args.eta, sched.steps())?.with_trajectory(args.trajectory);
    let (samples, traj) = sample(&model, &sched, &spec, args.n, args.seed, ExecMode::from_jobs(args.jobs))?;
    let path = args.out.clone().unwrap_or_else(|| default_out_dir().join("samples.csv"));
    save_batch(&samples, &path)?;
    if let Some(traj) = traj {
        save_trajectory(&traj.states, &with_suffix(&path, ".trajectory.csv"))?;
    }
    if args.svg {
        write_text(&with_suffix(&path, ".svg"), &svg::scatter(&samples))?;
    }
    let _ = writeln!(out, "samples={}", path.display());
    let _ = writeln!(out, "n={} steps={} sampler={}", samples.n(), spec.stride.len(), args.sampler);
    Ok(path)
}

/// Computes one metric; `seed` only matters for the sliced distance.
pub fn evaluate(
    a: &SampleBatch,
    b: &SampleBatch,
    metric: &str,
    seed: u64,
    projections: usize,
    bandwidth: f64,
    mode: ExecMode,
) -> CliResult<MetricReport> {
    check_metric(metric)?;
    Ok(match metric {
        "swd" => sliced_wasserstein_mode(a, b, projections, seed, mode)?,
        "mmd" => mmd_rbf(a, b, bandwidth)?,
        _ => moment_report(a, b)?,
    })
}

fn check_metric(metric: &str) -> CliResult<()> {
    if METRICS.contains(&metric) {
        return Ok(());
    }
    Err(CliError::Usage(format!(
        "unknown metric {metric:?}; valid metrics: {}",
        METRICS.join(", ")
    )))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<MetricReport> {
    check_metric(&args.metric)?;
    let a = load_batch(&args.samples)?;
    let b = load_batch(&args.reference)?;
    let report = evaluate(&a, &b, &args.metric, args.seed, args.projections, args.bandwidth, ExecMode::from_jobs(args.jobs))?;
    let text = report.to_text();
    let _ = out.write_all(text.as_bytes());
    if let Some(p) = &args.out {
        write_text(p, &text)?;
    }
    Ok(report)
}

/// Rows of `alpha,x0,..` for one interpolation pair.
pub fn interpolation_csv(alphas: &[f64], decoded: &[SampleBatch]) -> String {
    let dim = decoded.first().map_or(0, |b| b.dim());
    let mut s = String::from("alpha");
    for j in 0..dim {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (a, batch) in alphas.iter().zip(decoded) {
        for row in batch.rows() {
            let _ = write!(s, "{a:?}");
            for v in row {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
    }
    s
}

/// Pair `j` interpolates the latents `sample --seed seed+2j` and
/// `sample --seed seed+2j+1` would draw.
pub fn cmd_interpolate(args: &InterpolateArgs, out: &mut dyn Write) -> CliResult<Vec<Vec<SampleBatch>>> {
    if args.alphas < 2 || args.pairs == 0 || args.n == 0 {
        return Err(CliError::Usage("need --alphas >= 2, --pairs >= 1 and --n >= 1".into()));
    }
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = ckpt.model()?;
    let sched = ckpt.schedule()?;
    let stride = build_stride(sched.steps(), args.steps)?;
    let alphas = alpha_grid(args.alphas);
    let mode = if args.linear { InterpMode::Linear } else { InterpMode::Spherical };
    let dir = out_dir(&args.out);
    let dim = model.data_dim();
    let mut all = Vec::with_capacity(args.pairs);
    for j in 0..args.pairs as u64 {
        let z1 = draw_latents(args.n, dim, args.seed + 2 * j);
        let z2 = draw_latents(args.n, dim, args.seed + 2 * j + 1);
        let decoded = interpolate_run(&model, &sched, &stride, &z1, &z2, &alphas, mode, ExecMode::from_jobs(args.jobs))?;
        let csv = dir.join(format!("pair_{j}.csv"));
        write_text(&csv, &interpolation_csv(&alphas, &decoded))?;
        write_text(&dir.join(format!("pair_{j}.svg")), &svg::strip(&decoded))?;
        let _ = writeln!(out, "pair={j} csv={}", csv.display());
        all.push(decoded);
    }
    Ok(all)
}

pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> CliResult<AblationGrid> {
    let cfg = read_config(&args.config)?;
    let opts = AblateOptions {
        skips: args.skips.clone(),
        strides: args.strides.clone(),
        seeds: args.seeds.clone(),
        n_eval: args.n_eval,
        projections: args.projections,
        budget: args.budget,
        force: args.force,
        exec: ExecMode::from_jobs(args.jobs),
    };
    let grid = ablate::run_ablation(&cfg, &opts)?;
    let dir = out_dir(&args.out);
    write_text(&dir.join("grid.csv"), &grid.to_csv())?;
    write_text(&dir.join("grid.svg"), &grid.to_svg())?;
    write_text(&dir.join("trend.txt"), &grid.trend_text())?;
    let _ = out.write_all(grid.to_table().as_bytes());
    let _ = out.write_all(grid.trend_text().as_bytes());
    Ok(grid)
}

pub fn suite_options(quick: bool, seed: u64) -> SuiteOptions {
    let mut opts = SuiteOptions {
        seed,
        ..SuiteOptions::default()
    };
    if quick {
        opts.chain_samples = 20_000;
        opts.gamma_iterations = 20_000;
    }
    opts
}

pub fn cmd_oracle_check(args: &OracleArgs, out: &mut dyn Write) -> CliResult<OracleReport> {
    let sched = ScheduleParams::default().build()?;
    let report = run_suite(&sched, &suite_options(args.quick, args.seed), ExecMode::from_jobs(args.jobs))?;
    let text = report.to_text();
    let _ = out.write_all(text.as_bytes());
    if let Some(p) = &args.out {
        write_text(p, &text)?;
    }
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::OracleFailed { failed });
    }
    Ok(report)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out).map(drop),
        Command::Sample(a) => cmd_sample(a, out).map(drop),
        Command::Eval(a) => cmd_eval(a, out).map(drop),
        Command::Interpolate(a) => cmd_interpolate(a, out).map(drop),
        Command::Ablate(a) => cmd_ablate(a, out).map(drop),
        Command::OracleCheck(a) => cmd_oracle_check(a, out).map(drop),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_from_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match run(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
