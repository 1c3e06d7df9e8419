//! The `collapse` command line.
//!
//! Every subcommand reads a model JSON (see [`crate::model`]), writes its
//! tables and reports into the output directory and finishes with a
//! `<command>.manifest.json` run record. Exit codes: 0 success, 1 usage or
//! validation error, 2 failed check in `verify`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diffusion::{integrate_with, DiffusionModel, DiffusionOptions, Scheme};
use crate::dilation::{build_dilation, survival_ensemble, Flavor, METER_CAP};
use crate::error::{Error, Result};
use crate::genfun::{genfun_mc_path, genfun_ode, TestFunction};
use crate::io::{load_state, load_test_function, num, write_csv, write_json, Manifest};
use crate::linalg::{outer, re, Operator, StateVector};
use crate::master::{dyson_series, integrate_master};
use crate::model::{matrix_to_json, ModelSpec, ValidatedModel};
use crate::trajectory::{ensemble_average, uniform_grid};
use crate::verify::{run_all, Scale, VerifyConfig};
use crate::zeno::{zeno_sweep, ZenoConfig};

#[derive(Debug, Parser)]
#[command(name = "collapse", version, about = "Poisson collapse dynamics: simulation and cross-checks")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "COLLAPSE_WORKERS")]
    pub workers: Option<usize>,
    /// Directory for output files, created if missing.
    #[arg(long, global = true, env = "COLLAPSE_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Ensemble of jump trajectories: mean density and survival probability.
    Trajectories(TrajectoriesArgs),
    /// Averaged master equation on a time grid.
    Master(MasterArgs),
    /// Dyson series of the master equation at one time.
    Dyson(DysonArgs),
    /// Generating functional of a test function by ODE and/or Monte Carlo.
    Genfun(GenfunArgs),
    /// Unitary dilation of C and survival norms of the compressed evolution.
    Dilation(DilationArgs),
    /// One path of the Itô–Schrödinger equation (needs R in the model).
    Diffusion(DiffusionArgs),
    /// λ-sweep toward the frequent-collapse limit (needs R in the model).
    Zeno(ZenoArgs),
    /// Runs the cross-oracle verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Model JSON with dim, H, C and/or R, lambda.
    #[arg(long)]
    pub model: PathBuf,
    /// Initial state JSON, an array of [re, im] pairs (default: uniform superposition).
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrajectoriesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 2.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// Trajectory i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct MasterArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 2.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DysonArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Truncation tolerance of the series remainder.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GenfunMode {
    Ode,
    Mc,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct GenfunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Test function JSON {grid, values, lambda_ref?} (default: zero on [0, t_max]).
    #[arg(long)]
    pub function: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GenfunMode::Both)]
    pub mode: GenfunMode,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DilationArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Flavor::Hermitian)]
    pub flavor: Flavor,
    /// Number of trajectories for the survival table.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.25)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of meters (jumps) a trajectory may adjoin.
    #[arg(long, default_value_t = METER_CAP)]
    pub max_jumps: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffusionArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Scheme::EulerMaruyama)]
    pub scheme: Scheme,
    /// Renormalize ψ after every step (changes the process).
    #[arg(long)]
    pub renormalize: bool,
    /// Record every k-th step.
    #[arg(long, default_value_t = 10)]
    pub record_every: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ZenoArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated intensities.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_diffusion: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long, default_value_t = 4242)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Divide every sample count by ten.
    #[arg(long)]
    pub quick: bool,
    /// Collapse-form d = 2 model (default: built-in reference model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rate-form model supplying H and R (default: built-in reference).
    #[arg(long)]
    pub rate_model: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Trajectories(_) => "trajectories",
            Command::Master(_) => "master",
            Command::Dyson(_) => "dyson",
            Command::Genfun(_) => "genfun",
            Command::Dilation(_) => "dilation",
            Command::Diffusion(_) => "diffusion",
            Command::Zeno(_) => "zeno",
            Command::Verify(_) => "verify",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Trajectories(a) => Some(a.seed),
            Command::Genfun(a) => Some(a.seed),
            Command::Dilation(a) => Some(a.seed),
            Command::Diffusion(a) => Some(a.seed),
            Command::Zeno(a) => Some(a.seed),
            Command::Master(_) | Command::Dyson(_) | Command::Verify(_) => None,
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &argv) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Context {
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Context {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }
}

fn execute(cli: &Cli, argv: &[std::ffi::OsString]) -> Result<bool> {
    let start = Instant::now();
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::InvalidArgument("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut ctx = Context { out_dir: cli.out_dir.clone(), outputs: Vec::new() };
    let ok = pool.install(|| dispatch(&cli.command, &mut ctx))?;
    let manifest = Manifest {
        command: cli.command.name().into(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        config: serde_json::to_value(&cli.command).expect("config serializes"),
        seed: cli.command.seed(),
        version: env!("CARGO_PKG_VERSION").into(),
        workers,
        wall_seconds: start.elapsed().as_secs_f64(),
        outputs: ctx.outputs.clone(),
    };
    let path = ctx.out_dir.join(format!("{}.manifest.json", cli.command.name()));
    write_json(&path, &manifest)?;
    log::info!("wrote {}", path.display());
    Ok(ok)
}

fn load_model(path: &Path) -> Result<ValidatedModel> {
    ModelSpec::from_json_file(path)?.validate().map_err(|e| match e {
        Error::Parse { .. } | Error::Io { .. } => e,
        other => Error::Parse { path: path.display().to_string(), message: other.to_string() },
    })
}

fn initial_state(args: &ModelArgs, d: usize) -> Result<StateVector> {
    match &args.state {
        Some(p) => load_state(p, d),
        None => Ok(StateVector::from_element(d, re((d as f64).recip().sqrt()))),
    }
}

fn prepare(ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir).map_err(|source| Error::Io { path: ctx.out_dir.display().to_string(), source })
}

fn matrix_header(prefix: &str, d: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        for j in 0..d {
            h.push(format!("{prefix}{i}{j}_re"));
            h.push(format!("{prefix}{i}{j}_im"));
        }
    }
    h
}

fn matrix_cells(m: &Operator) -> Vec<String> {
    let mut out = Vec::with_capacity(2 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(num(m[(i, j)].re));
            out.push(num(m[(i, j)].im));
        }
    }
    out
}

fn vector_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).flat_map(|k| [format!("{prefix}{k}_re"), format!("{prefix}{k}_im")]).collect()
}

fn vector_cells(v: &StateVector) -> Vec<String> {
    v.iter().flat_map(|z| [num(z.re), num(z.im)]).collect()
}

fn dispatch(command: &Command, ctx: &mut Context) -> Result<bool> {
    match command {
        Command::Trajectories(a) => trajectories(a, ctx),
        Command::Master(a) => master(a, ctx),
        Command::Dyson(a) => dyson(a, ctx),
        Command::Genfun(a) => genfun(a, ctx),
        Command::Dilation(a) => dilation(a, ctx),
        Command::Diffusion(a) => diffusion(a, ctx),
        Command::Zeno(a) => zeno(a, ctx),
        Command::Verify(a) => verify(a, ctx),
    }
    .map(|ok| ok.unwrap_or(true))
}

fn trajectories(a: &TrajectoriesArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    let grid = uniform_grid(a.t_max, a.step)?;
    prepare(ctx)?;
    let ens = ensemble_average(&model, &eta, a.n, &grid, a.seed)?;
    let mut header: Vec<String> = ["t", "q_bar", "q_stderr", "rho_stderr"].map(String::from).to_vec();
    header.extend(matrix_header("rho", model.dim()));
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            let mut row = vec![num(grid[k]), num(ens.q_bar[k]), num(ens.q_stderr[k]), num(ens.rho_stderr[k])];
            row.extend(matrix_cells(&ens.rho_bar.rho[k]));
            row
        })
        .collect();
    write_csv(&ctx.path("trajectories.csv"), &header, &rows)?;
    Ok(None)
}

fn master(a: &MasterArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    let grid = uniform_grid(a.t_max, a.step)?;
    prepare(ctx)?;
    let path = integrate_master(&model, &outer(&eta), &grid)?;
    let mut header: Vec<String> = ["t", "trace", "purity"].map(String::from).to_vec();
    header.extend(matrix_header("rho", model.dim()));
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            let mut row = vec![num(grid[k]), num(path.trace[k]), num(path.purity(k))];
            row.extend(matrix_cells(&path.rho[k]));
            row
        })
        .collect();
    write_csv(&ctx.path("master.csv"), &header, &rows)?;
    Ok(None)
}

fn dyson(a: &DysonArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    prepare(ctx)?;
    let sigma = outer(&eta);
    let series = dyson_series(&model, &sigma, a.t, a.tol)?;
    let ode = integrate_master(&model, &sigma, &[0.0, a.t])?;
    let report = serde_json::json!({
        "t": a.t,
        "tol": a.tol,
        "order": series.order,
        "nodes": series.nodes,
        "rho": matrix_to_json(&series.rho),
        "trace_distance_to_master": crate::linalg::trace_distance(&series.rho, ode.last()),
    });
    write_json(&ctx.path("dyson.json"), &report)?;
    println!("order {}", series.order);
    Ok(None)
}

fn genfun(a: &GenfunArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    let f = match &a.function {
        Some(p) => load_test_function(p, model.lambda())?,
        None => TestFunction::zero(vec![0.0, a.t_max], model.lambda())?,
    };
    let grid = uniform_grid(a.t_max, a.step)?;
    prepare(ctx)?;
    let d = model.dim();
    let ode = matches!(a.mode, GenfunMode::Ode | GenfunMode::Both).then(|| genfun_ode(&model, &f, &eta, &grid)).transpose()?;
    let mc = matches!(a.mode, GenfunMode::Mc | GenfunMode::Both)
        .then(|| genfun_mc_path(&model, &f, &eta, a.n, &grid, a.seed))
        .transpose()?;
    let mut header = vec!["t".to_string()];
    if ode.is_some() {
        header.extend(vector_header("ode", d));
    }
    if mc.is_some() {
        header.extend(vector_header("mc", d));
        header.push("mc_stderr".into());
    }
    if ode.is_some() && mc.is_some() {
        header.push("z".into());
    }
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            let mut row = vec![num(grid[k])];
            if let Some(ode) = &ode {
                row.extend(vector_cells(&ode[k]));
            }
            if let Some(mc) = &mc {
                row.extend(vector_cells(&mc.mean[k]));
                row.push(num(mc.stderr[k]));
                if let Some(ode) = &ode {
                    let gap = (&mc.mean[k] - &ode[k]).norm();
                    row.push(num(if mc.stderr[k] > 0.0 { gap / mc.stderr[k] } else { 0.0 }));
                }
            }
            row
        })
        .collect();
    write_csv(&ctx.path("genfun.csv"), &header, &rows)?;
    Ok(None)
}

fn dilation(a: &DilationArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    let grid = uniform_grid(a.t_max, a.step)?;
    prepare(ctx)?;
    let s = build_dilation(model.collapse(), a.flavor)?;
    let table = survival_ensemble(&s, &model, &eta, a.n, &grid, a.seed, a.max_jumps)?;
    let master = integrate_master(&model, &outer(&eta), &grid)?;
    let z: Vec<f64> = (0..grid.len())
        .map(|k| if table.stderr[k] > 0.0 { (table.mean[k] - master.trace[k]).abs() / table.stderr[k] } else { 0.0 })
        .collect();
    let report = serde_json::json!({
        "flavor": a.flavor,
        "unitarity_residual": s.unitarity_residual(),
        "intertwining_residual": s.intertwining_residual(),
        "dilation": matrix_to_json(s.matrix()),
        "survival": {
            "grid": table.grid,
            "mean": table.mean,
            "stderr": table.stderr,
            "master_trace": master.trace,
            "z": z,
            "n": table.n,
            "seed_base": table.seed_base,
        },
    });
    write_json(&ctx.path("dilation.json"), &report)?;
    Ok(None)
}

fn diffusion(a: &DiffusionArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    let dm = DiffusionModel::from_model(&model)?;
    prepare(ctx)?;
    let options = DiffusionOptions { scheme: a.scheme, renormalize: a.renormalize, record_every: a.record_every };
    if a.renormalize {
        log::warn!("--renormalize changes the process; results are exploratory");
    }
    let path = integrate_with(&dm, &eta, a.dt, a.t_max, a.seed, &options)?;
    let mut header = vec!["t".to_string()];
    header.extend(vector_header("psi", dm.dim()));
    header.push("norm_sq".into());
    let rows: Vec<Vec<String>> = path
        .grid
        .iter()
        .zip(&path.psi)
        .map(|(&t, psi)| {
            let mut row = vec![num(t)];
            row.extend(vector_cells(psi));
            row.push(num(psi.norm_squared()));
            row
        })
        .collect();
    write_csv(&ctx.path("diffusion.csv"), &header, &rows)?;
    Ok(None)
}

fn zeno(a: &ZenoArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let model = load_model(&a.model.model)?;
    let eta = initial_state(&a.model, model.dim())?;
    let r = model.rate().ok_or(Error::MissingRate)?;
    prepare(ctx)?;
    let config = ZenoConfig {
        t_max: a.t_max,
        grid_step: a.step,
        n: a.n,
        seed_base: a.seed,
        dt_diffusion: a.dt,
        n_diffusion: a.n_diffusion,
    };
    let rows = zeno_sweep(model.hamiltonian(), r, &a.lambdas, &eta, &config)?;
    let header = ["lambda", "sup_err_semigroup", "trace_dist_semigroup", "trace_dist_diffusion", "side_condition_ok"]
        .map(String::from)
        .to_vec();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.lambda.map_or_else(|| "inf".to_string(), num),
                num(r.sup_err_semigroup),
                num(r.trace_dist_semigroup),
                num(r.trace_dist_diffusion),
                r.side_condition_ok.to_string(),
            ]
        })
        .collect();
    write_csv(&ctx.path("zeno.csv"), &header, &cells)?;
    Ok(None)
}

fn verify(a: &VerifyArgs, ctx: &mut Context) -> Result<Option<bool>> {
    let mut config = VerifyConfig { scale: if a.quick { Scale::Quick } else { Scale::Full }, ..Default::default() };
    if let Some(p) = &a.model {
        config.fixture = load_model(p)?;
    }
    if let Some(p) = &a.rate_model {
        let m = load_model(p)?;
        config.rate = m.rate().ok_or(Error::MissingRate)?.clone();
        config.rate_hamiltonian = m.hamiltonian().clone();
    }
    prepare(ctx)?;
    let results = run_all(&config)?;
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().all(|r| r.passed);
    write_json(&ctx.path("verify.json"), &results)?;
    Ok(Some(passed))
}
