use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use normsep::analysis::{escape_bounds, predict_escape};
use normsep::detection::{detection_bounds, simulate_detection, DetectionSpec, IncrementLaw};
use normsep::dynamics::{closed_form_mean_v, simulate_on_manifold, SgdHyper};
use normsep::harness::{
    analyze_dir, read_run, run_sweep, run_training, write_records, write_report, write_sweep, ExperimentConfig,
    SweepAxis, SweepSpec,
};
use normsep::models::{build_fourier_solution, build_lookup_solution};
use normsep::spectral::{model_spectrum, select_support};

/// Overrides the configured seed for `train` and the default seed list for `sweep`.
const SEED_ENV: &str = "NORMSEP_SEED";

#[derive(Parser, Debug)]
#[command(name = "normsep", version, about = "Grokking dynamics under weight decay: training, sweeps and oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write its run directory
    Train(TrainArgs),
    /// Run a one-axis sweep over several seeds
    Sweep(SweepArgs),
    /// Simulate the on-manifold norm recursion against its closed form
    Synth(SynthArgs),
    /// Bounds and Monte-Carlo estimate of the detection stopping time
    Detect(DetectArgs),
    /// Fourier spectra of a saved run or an explicit construction
    Spectral(SpectralArgs),
    /// Fits and regressions over a results directory
    Analyze(AnalyzeArgs),
    /// Predicted escape time and, given eta and lambda, its bounds
    Predict(PredictArgs),
    /// Emit the flat CSV files a plotting front end reads
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON config; omitted fields keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config field by dotted path, e.g. `model.hidden=128`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                ExperimentConfig::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,

    #[arg(long, default_value = "runs")]
    out: PathBuf,

    /// Print the default config as JSON and exit
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// lambda, eta, p, optimizer, task or eta_x_lambda
    #[arg(long)]
    axis: String,

    /// Comma-separated axis values; eta_x_lambda takes `<eta>x<lambda>`
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,

    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,

    /// Concurrent runs; 0 lets the pool decide
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    v0: f64,
    #[arg(long)]
    v_post: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Independent trajectories averaged for the mean curve
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write `synth.csv` here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Law {
    Constant,
    Bernoulli,
    Clipped,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    delta_min: f64,
    #[arg(long, default_value_t = 1.0)]
    m_bound: f64,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, value_enum, default_value = "bernoulli")]
    law: Law,
    /// Spread of the clipped Gaussian law
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 10_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Construction {
    Lookup,
    Fourier,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    /// Run directory with logged checkpoints
    #[arg(long, conflicts_with = "construction")]
    run: Option<PathBuf>,

    #[arg(long, value_enum, requires = "p")]
    construction: Option<Construction>,

    #[arg(long)]
    p: Option<usize>,

    /// Frequencies of the Fourier construction
    #[arg(long, value_delimiter = ',', default_value = "1")]
    kappa: Vec<usize>,

    #[arg(long, default_value_t = 0.99)]
    coverage: f64,

    #[arg(long, default_value = "spectra")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long = "in")]
    input: PathBuf,

    /// Also write `analysis.json` here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    v_mem: f64,
    #[arg(long)]
    v_post: f64,
    #[arg(long, requires = "lambda")]
    eta: Option<f64>,
    #[arg(long, requires = "eta")]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}=`{v}` is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    if args.print_defaults {
        println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
        return Ok(());
    }
    let mut cfg = args.config.load()?;
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    let record = run_training(&cfg)?;
    write_records(std::slice::from_ref(&record), &args.out)?;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    println!("run_id      {}", record.run_id);
    println!("t_mem       {}", opt(record.t_mem.map(|t| t.to_string())));
    println!("t_grok      {}", opt(record.t_grok.map(|t| t.to_string())));
    println!("delay       {}", opt(record.delay.map(|t| t.to_string())));
    println!("v_mem       {}", opt(record.v_mem.map(|v| format!("{v:.1}"))));
    println!("v_post      {}", opt(record.v_post_at_grok.map(|v| format!("{v:.1}"))));
    println!("v_final     {:.1}", record.v_final);
    if let Some(f) = record.fit {
        println!("fit         rho={:.6} gamma={:.3e} r2={:.4}", f.rho, f.gamma_fit, f.r2);
    }
    println!("predicted   {}", opt(record.predicted_delay().map(|v| format!("{v:.1}"))));
    println!("written to  {}", args.out.join(&record.run_id).display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let base = args.config.load()?;
    let axis: SweepAxis = args.axis.parse()?;
    let seeds = if !args.seeds.is_empty() {
        args.seeds
    } else {
        vec![env_seed()?.unwrap_or(base.seed)]
    };
    let spec = SweepSpec {
        axis,
        values: args.values,
        seeds,
        jobs: args.jobs,
        thresholds: Default::default(),
    };
    let (result, records) = run_sweep(&base, &spec)?;
    write_sweep(&result, &records, &args.out)?;
    println!("{:>14} {:>6} {:>6} {:>10} {:>8} regime", "value", "runs", "failed", "mean_delay", "grok");
    for p in &result.points {
        println!(
            "{:>14} {:>6} {:>6} {:>10} {:>8.2} {}",
            p.axis_value,
            p.runs.len(),
            p.failed.len(),
            p.mean_delay.map_or("-".into(), |d| format!("{d:.0}")),
            p.grok_fraction,
            p.regime.label
        );
    }
    for r in &result.regressions {
        println!("{}: slope={:.4e} r2={:.4} n={}", r.name, r.result.slope, r.result.r2, r.result.n);
    }
    println!("written to {}", args.out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let hyper = SgdHyper::new(args.eta, args.lambda, args.sigma)?;
    let (lower, upper) = escape_bounds(args.eta, args.lambda, args.v0, args.v_post, args.sigma)?;
    // exact per-step factor of the noiseless recursion
    let gamma = -2.0 * (1.0 - 2.0 * args.eta * args.lambda).ln();
    let predicted = predict_escape(gamma, args.v0, args.v_post)?;
    let steps = (upper.ceil() as usize + 1).max(1);
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let mut mean = vec![0.0; steps + 1];
    for i in 0..args.trials {
        let traj = simulate_on_manifold(args.dim, args.v0, &hyper, steps, normsep::rng::derive_seed(args.seed, i as u64))?;
        for (m, v) in mean.iter_mut().zip(&traj.v_series) {
            *m += v / args.trials as f64;
        }
    }
    // escape of the trial-averaged norm
    let first = mean.iter().position(|&v| v <= args.v_post);
    println!("lower       {lower:.1}");
    println!("upper       {upper:.1}");
    println!("predicted   {predicted:.1}");
    match first {
        Some(t) => println!("simulated   {t}"),
        None => println!("simulated   none within {steps} steps"),
    }
    let inside = first.is_some_and(|t| (t as f64) >= lower - 1.0 && (t as f64) <= upper + 1.0);
    println!("consistent  {inside}");
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("synth.csv");
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["step", "mean_v", "closed_form"])?;
        for (t, m) in mean.iter().enumerate() {
            let cf = closed_form_mean_v(t, args.v0, &hyper)?;
            w.write_record([t.to_string(), format!("{m:.16e}"), format!("{cf:.16e}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let spec = DetectionSpec::new(args.delta_min, args.m_bound, args.p, args.delta)?;
    let bounds = detection_bounds(&spec);
    let law = match args.law {
        Law::Constant => IncrementLaw::Constant { value: args.delta_min },
        Law::Bernoulli => IncrementLaw::BernoulliScaled,
        Law::Clipped => IncrementLaw::ClippedGaussian { sigma: args.sigma },
    };
    let est = simulate_detection(&spec, law, args.n_mc, args.seed)?;
    println!("gamma       {:.4}", spec.gamma_thresh);
    println!("lower       {:.2}", bounds.lower);
    println!("upper       {:.2}", bounds.upper);
    println!("mean_tau    {:.3} ± {:.3}", est.mean_tau, est.stderr);
    let inside = est.mean_tau >= bounds.lower - 1.0 && est.mean_tau <= bounds.upper + 3.0 * est.stderr;
    println!("inside      {inside}");
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let body = serde_json::json!({ "spec": spec, "law": law, "bounds": bounds, "estimate": est });
        let path = dir.join("detect.json");
        fs::write(&path, serde_json::to_string_pretty(&body)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn spectral(args: SpectralArgs) -> Result<()> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if let Some(kind) = args.construction {
        let p = args.p.context("--p is required with --construction")?;
        let c = match kind {
            Construction::Lookup => build_lookup_solution(p)?,
            Construction::Fourier => build_fourier_solution(p, &args.kappa)?,
        };
        let s = model_spectrum(&c)?;
        let support = select_support(std::slice::from_ref(&s), args.coverage)?;
        let s = s.with_support(support);
        s.write_files(&args.out, "construction")?;
        println!("sq_norm     {:.6}", c.sq_norm);
        println!("support     {:?}", s.support.as_deref().unwrap_or_default());
        println!("r_value     {:.6e}", s.r_value.unwrap_or(f64::NAN));
        return Ok(());
    }
    let Some(dir) = args.run else {
        bail!("either --run or --construction is required");
    };
    let record = read_run(&dir)?;
    if record.checkpoints.is_empty() {
        bail!("run {} has no spectral checkpoints (set spectral_every)", record.run_id);
    }
    let spectra: Vec<_> = record.checkpoints.iter().map(|c| c.spectrum.clone()).collect();
    let support = match &record.spectral_support {
        Some(s) => s.clone(),
        None => select_support(&spectra, args.coverage)?,
    };
    println!("support     {support:?}");
    println!("{:>8} {:>14}", "step", "r_value");
    for cp in &record.checkpoints {
        let s = cp.spectrum.clone().with_support(support.clone());
        s.write_files(&args.out, &format!("step_{:07}", cp.step))?;
        println!("{:>8} {:>14.6e}", cp.step, s.r_value.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let analysis = analyze_dir(&args.input)?;
    let text = serde_json::to_string_pretty(&analysis)?;
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("analysis.json");
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let t = predict_escape(args.gamma, args.v_mem, args.v_post)?;
    println!("{t:.1}");
    if let (Some(eta), Some(lambda)) = (args.eta, args.lambda) {
        let (lo, hi) = escape_bounds(eta, lambda, args.v_mem, args.v_post, args.sigma)?;
        println!("lower {lo:.1}");
        println!("upper {hi:.1}");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let files = write_report(&args.input, &args.out)?;
    for f in files {
        println!("{}", args.out.join(f).display());
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Spectral(a) => spectral(a),
        Command::Analyze(a) => analyze(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap maps help and version to exit 0 and usage errors to 2
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
