use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ngcheck::check::{run_workflow, workflow_on_grid, CheckReport, HyperMode, ReferenceMethod, SensitivityReport, WorkflowConfig};
use ngcheck::data::{standardize, write_csv, ModelSpec, Table};
use ngcheck::inference::{conditional_posterior, empirical_bayes, hyper_grid, log_marginal, HyperGrid};
use ngcheck::latent::{build_iid, build_rw1};
use ngcheck::matern::{distances_1d, matern_smoothness_check, HyperSource, MaternCheckConfig};
use ngcheck::model::{GaussianLGM, HyperParams};
use ngcheck::samplers::{simulate_latent, stream_rng, NigNoiseSpec};
use ngcheck::simstudy::{run_sim_study, SimStudyConfig};
use ngcheck::{Error, Result};
use rand::Rng;

#[derive(Parser)]
#[command(name = "ngcheck", version, about = "Latent non-Gaussianity checks and sensitivities for latent Gaussian models")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit hyperparameters and write fit.json.
    Fit(ModelArgs),
    /// Run the check and write check.json, d_scores.csv and, when triggered, sensitivity.json.
    Check(CheckArgs),
    /// Sensitivities of the configured targets, regardless of the check outcome.
    Sens(CheckArgs),
    /// Matérn smoothness check on a one-dimensional dataset.
    Matern(MaternArgs),
    /// Simulate a latent path and noisy observations.
    Simulate(SimulateArgs),
    /// Factorial simulation study.
    Simstudy(SimstudyArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the data file named in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Points per hyperparameter dimension; 1 uses the mode only.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Hyperparameters from an earlier `fit` instead of refitting.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    reference: Option<RefArg>,
    #[arg(long)]
    trigger: Option<f64>,
    #[arg(long)]
    n_rep: Option<usize>,
    /// Comma-separated targets such as `beta[1],w[3]`.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    Analytic,
    Mc,
    I0,
}

impl From<RefArg> for ReferenceMethod {
    fn from(r: RefArg) -> Self {
        match r {
            RefArg::Analytic => ReferenceMethod::AnalyticGaussian,
            RefArg::Mc => ReferenceMethod::McReference,
            RefArg::I0 => ReferenceMethod::I0Approx,
        }
    }
}

#[derive(Args)]
struct MaternArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON with `data`, `x`, `y`, `standardize` and `check` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatentArg {
    Rw1,
    Iid,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "rw1")]
    latent: LatentArg,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_w: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_eps: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV file.
    #[arg(long, default_value = "simulated.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SimstudyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Model specification plus workflow settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    #[serde(flatten)]
    model: ModelSpec,
    #[serde(default)]
    workflow: WorkflowConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct FitArtifact {
    hyper: HyperParams,
    log_marginal: f64,
    posterior_mean_w: Vec<f64>,
    posterior_mean_beta: Vec<f64>,
    grid: HyperGrid,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct MaternRunConfig {
    data: Option<PathBuf>,
    x: String,
    y: String,
    standardize: bool,
    check: MaternCheckConfig,
}

impl Default for MaternRunConfig {
    fn default() -> Self {
        Self { data: None, x: "x".into(), y: "y".into(), standardize: true, check: MaternCheckConfig::default() }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn load_model(args: &ModelArgs) -> Result<(RunConfig, GaussianLGM)> {
    let mut cfg: RunConfig = read_json(&args.config)?;
    if let Some(d) = &args.data {
        cfg.model.data = std::path::absolute(d)?;
    }
    let m = cfg.model.build(&config_dir(&args.config))?;
    if cfg.workflow.init.is_none() {
        cfg.workflow.init = Some(cfg.model.initial_hyper(&m));
    }
    if let Some(k) = args.grid_points {
        cfg.workflow.hyper_mode = if k <= 1 { HyperMode::Mode } else { HyperMode::Grid { points_per_dim: k, span_sd: 2.0 } };
    }
    fs::create_dir_all(&args.out)?;
    Ok((cfg, m))
}

fn fit_grid(m: &GaussianLGM, wf: &WorkflowConfig) -> Result<HyperGrid> {
    let init = wf.init.clone().unwrap_or_else(|| m.default_hyper());
    match &wf.hyper_mode {
        HyperMode::Fixed => Ok(HyperGrid::single(init)),
        HyperMode::Mode => Ok(HyperGrid::single(empirical_bayes(m, &init)?.hyper)),
        HyperMode::Grid { points_per_dim, span_sd } => hyper_grid(m, &empirical_bayes(m, &init)?.hyper, *points_per_dim, *span_sd),
    }
}

fn mode_of(grid: &HyperGrid) -> HyperParams {
    let k = (0..grid.points.len()).max_by(|&a, &b| grid.weights[a].total_cmp(&grid.weights[b])).unwrap_or(0);
    grid.points[k].clone()
}

fn cmd_fit(args: &ModelArgs) -> Result<()> {
    let (cfg, m) = load_model(args)?;
    let grid = fit_grid(&m, &cfg.workflow)?;
    let hyper = mode_of(&grid);
    let post = conditional_posterior(&m, &hyper)?;
    let fit = FitArtifact {
        log_marginal: log_marginal(&m, &hyper)?,
        posterior_mean_w: post.mean_w.clone(),
        posterior_mean_beta: post.mean_beta.clone(),
        hyper,
        grid,
    };
    write_json(&args.out.join("fit.json"), &fit)
}

fn run_check(args: &CheckArgs, force_sens: bool) -> Result<(CheckReport, SensitivityReport, PathBuf)> {
    let (mut cfg, m) = load_model(&args.model)?;
    let wf = &mut cfg.workflow;
    if let Some(s) = args.seed {
        wf.seed = s;
    }
    if let Some(r) = args.reference {
        wf.reference = r.into();
    }
    if let Some(t) = args.trigger {
        wf.trigger = t;
    }
    if let Some(n) = args.n_rep {
        wf.n_rep = n;
    }
    if let Some(t) = &args.targets {
        wf.targets = t.clone();
    }
    if force_sens {
        wf.trigger = f64::INFINITY;
    }
    wf.keep_ref_samples = true;
    let (c, s) = match &args.fit {
        Some(f) => {
            let fit: FitArtifact = read_json(f)?;
            workflow_on_grid(&m, &fit.grid, wf)?
        }
        None => run_workflow(&m, wf)?,
    };
    Ok((c, s, args.model.out.clone()))
}

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let (mut c, s, out) = run_check(args, false)?;
    if let Some(samples) = c.ref_samples.take() {
        write_csv(&out.join("ref_samples.csv"), &["s0_rep"], samples.into_iter().map(|v| vec![v]))?;
    }
    write_csv(&out.join("d_scores.csv"), &["index", "d_i"], s.d.iter().enumerate().map(|(i, &d)| vec![i as f64, d]))?;
    write_json(&out.join("check.json"), &c)?;
    if !s.s_l.is_empty() {
        write_json(&out.join("sensitivity.json"), &s)?;
    }
    println!("s0 = {:.6}  p = {:.4}  ({:?})", c.s0_obs, c.p_value, c.method);
    for comp in &c.components {
        println!("  {}: s0 = {:.6}  p = {:.4}", comp.name, comp.s0, comp.p_value);
    }
    Ok(())
}

fn cmd_sens(args: &CheckArgs) -> Result<()> {
    let (_, s, out) = run_check(args, true)?;
    write_json(&out.join("sensitivity.json"), &s)?;
    for (k, v) in &s.s_l {
        println!("{k}: mean = {:.6}  sensitivity = {:.6}  scaled = {:.4}", v.mean, v.raw, v.scaled);
    }
    Ok(())
}

fn cmd_matern(args: &MaternArgs) -> Result<()> {
    let (mut cfg, base) = match &args.config {
        Some(p) => (read_json::<MaternRunConfig>(p)?, config_dir(p)),
        None => (MaternRunConfig::default(), PathBuf::new()),
    };
    let data = match (&args.data, &cfg.data) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => return Err(Error::InvalidParameter("matern needs --data or a config with `data`".into())),
    };
    if let Some(nu) = args.nu {
        cfg.check.nu0 = nu;
    }
    if let Some(s) = args.seed {
        cfg.check.seed = s;
    }
    if let Some(k) = args.grid_points {
        cfg.check.source = if k <= 1 { HyperSource::Mode } else { HyperSource::Grid { points_per_dim: k, span_sd: 2.0 } };
    }
    let table = Table::read(&data)?;
    let x = table.numeric(&cfg.x)?;
    let mut y = table.numeric(&cfg.y)?;
    if cfg.standardize {
        standardize(&mut y);
    }
    fs::create_dir_all(&args.out)?;
    let r = matern_smoothness_check(&y, &distances_1d(&x), &cfg.check)?;
    write_csv(&args.out.join("matern_scatter.csv"), &["d_obs", "d_rep", "weight"], r.scatter.iter().map(|s| vec![s.d_obs, s.d_rep, s.weight]))?;
    write_json(&args.out.join("matern.json"), &serde_json::json!({ "nu0": r.nu0, "p_value": r.p_value, "mode": r.mode }))?;
    println!("nu0 = {}  p = {:.4}", r.nu0, r.p_value);
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.n < 2 {
        return Err(Error::InvalidParameter("n must be at least 2".into()));
    }
    let s = match args.latent {
        LatentArg::Rw1 => build_rw1(args.n, args.sigma_w)?,
        LatentArg::Iid => build_iid(args.n, args.sigma_w)?,
    };
    let spec = if args.eta > 0.0 { NigNoiseSpec::new(s.h.clone(), args.eta)? } else { NigNoiseSpec::gaussian(s.h.clone()) };
    let mut rng = stream_rng(args.seed, 0);
    let w = simulate_latent(&s, &spec, &mut rng)?;
    let noise: Vec<f64> = (0..args.n).map(|_| args.sigma_eps * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_csv(&args.out, &["index", "w", "y"], w.iter().zip(&noise).enumerate().map(|(i, (&w, &e))| vec![i as f64, w, w + e]))
}

fn cmd_simstudy(args: &SimstudyArgs) -> Result<()> {
    let mut cfg: SimStudyConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SimStudyConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&args.out)?;
    let r = run_sim_study(&cfg)?;
    let path = args.out.join("simstudy.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &r.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    for ((n, sw, eta), p) in r.median_p() {
        println!("N = {n}  sigma_w = {:.4}  eta = {}  median p = {p:.4}", f64::from_bits(sw), f64::from_bits(eta));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Check(a) => cmd_check(a),
        Command::Sens(a) => cmd_sens(a),
        Command::Matern(a) => cmd_matern(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Simstudy(a) => cmd_simstudy(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
