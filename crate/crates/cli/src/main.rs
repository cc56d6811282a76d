//! `sdo`: simulation, data generation, training and benchmarking front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sdo_core::bench::{
    data_efficiency_sweep, resolve_sdo_iterations, run_benchmark, warm_start, Artifacts, Strategy,
};
use sdo_core::bound::run_checks;
use sdo_core::config::RunConfig;
use sdo_core::datagen::{bc_dataset, bench_dataset, sample_load_profile, sample_rod_speeds, surrogate_dataset, DatasetManifest};
use sdo_core::io::{self, Provenance};
use sdo_core::surrogate::{prior_for, train, Normalization, Sequence};
use sdo_core::warmstart::{bc_train, refine_full, BcExample, BcNet, BudgetCalibration, Scenario};
use sdo_core::{ControlBox, PwrModel, SdoError, SurrogateNet};

#[derive(Parser)]
#[command(name = "sdo", version, about = "Surrogate warm starts for single-shooting NMPC of a 1-D PWR model")]
struct Cli {
    /// TOML (or .json) run configuration; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every output.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop simulation to a trajectory CSV.
    Simulate(SimulateArgs),
    /// Nominal operating point, steady-state table and optional budget timing.
    Calibrate(CalibrateArgs),
    /// Generate a dataset: surrogate transients, BC examples or the benchmark suite.
    GenData(GenDataArgs),
    TrainSurrogate(TrainSurrogateArgs),
    TrainBc(TrainBcArgs),
    /// Warm-start and refine one scenario.
    Solve(SolveArgs),
    /// Compare strategies on a scenario suite.
    Bench(BenchArgs),
    /// Surrogate data-efficiency sweep.
    Sweep(SweepArgs),
    /// Check the surrogate-gap bounds on random strongly convex instances.
    VerifyBound(VerifyBoundArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 24.0)]
    hours: f64,
    /// Constant load as a fraction of nominal power.
    #[arg(long, default_value_t = 1.0)]
    load: f64,
    /// Constant rod speed in cm/s.
    #[arg(long, default_value_t = 0.0)]
    rod_speed: f64,
    /// Sample the load profile and rod motion instead.
    #[arg(long)]
    random: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Also time full-scale against surrogate iterations with this net.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    /// Scenario JSON used for the timing (default: one generated scenario).
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DataKind {
    Surrogate,
    Bc,
    Bench,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    /// Number of items (overrides the configuration).
    #[arg(long)]
    count: Option<usize>,
    /// Output directory (default: <out>/data/<kind>).
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainSurrogateArgs {
    /// Surrogate dataset directory (default: <out>/data/surrogate).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct TrainBcArgs {
    /// BC dataset directory (default: <out>/data/bc).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    /// cold, shift, bc, sdo or sdo_<percent>pct.
    #[arg(long, default_value = "sdo")]
    strategy: String,
    /// Surrogate share of the budget for `--strategy sdo` (default: budget.surrogate_fraction).
    #[arg(long)]
    sdo_fraction: Option<f64>,
    /// Full-scale iterations.
    #[arg(long)]
    budget_iters: Option<usize>,
    /// Surrogate iterations (skips the wall-time calibration).
    #[arg(long)]
    sdo_iterations: Option<usize>,
    /// Scenario JSON (default: one generated scenario).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long)]
    bc: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark suite directory (default: <out>/data/bench).
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Default: <out>/surrogate.json when an SDO strategy is benchmarked.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    /// Default: <out>/bc.json when the bc strategy is benchmarked.
    #[arg(long)]
    bc: Option<PathBuf>,
    /// Comma-separated strategies (cold is always included).
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Pinned surrogate iterations, e.g. `sdo_1pct=1,sdo_5pct=7`.
    #[arg(long, value_parser = parse_pins)]
    sdo_iterations: Option<BTreeMap<String, usize>>,
    #[arg(long)]
    budget_iters: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Surrogate iterations of the SDO warm start (default: calibrated).
    #[arg(long)]
    sdo_iterations: Option<usize>,
}

#[derive(Args)]
struct VerifyBoundArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 6)]
    max_dims: usize,
    /// Largest surrogate gap M.
    #[arg(long, default_value_t = 1.0)]
    m_max: f64,
    /// Every k-th instance uses M = 0 (0 disables).
    #[arg(long, default_value_t = 10)]
    zero_every: usize,
}

fn parse_pins(s: &str) -> Result<BTreeMap<String, usize>, String> {
    let mut out = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (name, it) = part.split_once('=').ok_or_else(|| format!("`{part}` is not name=iterations"))?;
        let strategy: Strategy = name.trim().parse().map_err(|e: SdoError| e.to_string())?;
        let it: usize = it.trim().parse().map_err(|e| format!("`{it}`: {e}"))?;
        out.insert(strategy.to_string(), it);
    }
    Ok(out)
}

/// Failure classes and their exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<SdoError> for Failure {
    fn from(e: SdoError) -> Self {
        match e {
            SdoError::Config(_) | SdoError::Validation(_) | SdoError::Toml(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Usage(m) => ("usage", m),
                Failure::Runtime(m) => ("runtime", m),
            };
            eprintln!("{}", serde_json::json!({ "error": kind, "message": msg }));
            ExitCode::from(f.code())
        }
    }
}

/// Everything a subcommand needs after configuration has been resolved.
struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    model: PwrModel,
}

impl Ctx {
    fn prov(&self) -> CliResult<Provenance> {
        Ok(Provenance::new(self.cfg.hash()?, self.cfg.seed))
    }

    fn path(&self, name: &str) -> CliResult<PathBuf> {
        Ok(io::out_path(&self.out, name)?)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed)
    }

    fn default_dir(&self, given: &Option<PathBuf>, sub: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join("data").join(sub))
    }
}

/// Configuration precedence: command line, then file, then defaults.
fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            log::info!("configuration file {}", p.display());
            RunConfig::from_path(p).map_err(|e| match e {
                SdoError::Io { .. } | SdoError::Json(_) => usage(e.to_string()),
                other => Failure::from(other),
            })?
        }
        None => RunConfig::default(),
    };
    let set = |key: &str, shown: String| log::info!("{key} = {shown} (command line)");
    if let Some(s) = cli.seed {
        cfg.seed = s;
        set("seed", s.to_string());
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
        set("threads", t.to_string());
    }
    match &cli.command {
        Command::GenData(a) => {
            if let Some(c) = a.count {
                match a.kind {
                    DataKind::Surrogate => cfg.datagen.surrogate.count = c,
                    DataKind::Bc => cfg.datagen.bc_count = c,
                    DataKind::Bench => cfg.datagen.bench_count = c,
                }
                set("count", c.to_string());
            }
        }
        Command::TrainSurrogate(a) => {
            if let Some(e) = a.epochs {
                cfg.surrogate.max_epochs = e;
                set("surrogate.max_epochs", e.to_string());
            }
            if let Some(l) = a.lambda {
                cfg.surrogate.lambda = l;
                set("surrogate.lambda", l.to_string());
            }
        }
        Command::TrainBc(a) => {
            if let Some(e) = a.epochs {
                cfg.bc.epochs = e;
                set("bc.epochs", e.to_string());
            }
        }
        Command::Solve(a) => {
            if let Some(n) = a.budget_iters {
                set_budget(&mut cfg, n);
                set("budget.max_iterations", n.to_string());
            }
        }
        Command::Bench(a) => {
            if let Some(n) = a.budget_iters {
                set_budget(&mut cfg, n);
                set("budget.max_iterations", n.to_string());
            }
            if let Some(s) = &a.strategies {
                let mut s = s.clone();
                if !s.contains(&Strategy::Cold) {
                    s.insert(0, Strategy::Cold);
                }
                set("bench.strategies", format!("{s:?}"));
                cfg.bench.strategies = s;
            }
            if let Some(p) = &a.sdo_iterations {
                cfg.bench.sdo_iterations = Some(p.clone());
                set("bench.sdo_iterations", format!("{p:?}"));
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Calibrate(_) => "calibrate",
        Command::GenData(_) => "gen_data",
        Command::TrainSurrogate(_) => "train_surrogate",
        Command::TrainBc(_) => "train_bc",
        Command::Solve(_) => "solve",
        Command::Bench(_) => "bench",
        Command::Sweep(_) => "sweep",
        Command::VerifyBound(_) => "verify_bound",
        Command::ShowConfig => "show_config",
    }
}

/// New iteration budget; checkpoints past it are dropped.
fn set_budget(cfg: &mut RunConfig, n: usize) {
    cfg.budget.max_iterations = n;
    cfg.budget.record_at.retain(|&k| k <= n);
    cfg.bench.violation_at.retain(|&k| k <= n);
}

fn run(cli: Cli) -> CliResult {
    let cfg = resolve_config(&cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let model = PwrModel::new(cfg.model.clone())?;
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        model,
    };
    io::write_json(&ctx.path(&format!("{}_config.json", command_name(&cli.command)))?, &ctx.cfg)?;
    let t = Instant::now();
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::GenData(a) => gen_data(&ctx, a),
        Command::TrainSurrogate(a) => train_surrogate(&ctx, a),
        Command::TrainBc(a) => train_bc(&ctx, a),
        Command::Solve(a) => solve(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::VerifyBound(a) => verify_bound(&ctx, a),
        Command::ShowConfig => unreachable!("handled above"),
    }?;
    log::info!("done in {:.1} s", t.elapsed().as_secs_f64());
    Ok(())
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> CliResult {
    let dt = ctx.cfg.ocp.dt;
    if !(a.hours > 0.0) {
        return Err(usage(format!("--hours must be positive (got {})", a.hours)));
    }
    let n = (a.hours * 3600.0 / dt).round() as usize;
    let p = ctx.model.params();
    let (u, w) = if a.random {
        let mut rng = ctx.rng();
        let d = &ctx.cfg.datagen.surrogate;
        let w = sample_load_profile(&mut rng, n, dt, p.p_nom, &d.load);
        let x0 = ctx.model.steady_state(w[0])?;
        (sample_rod_speeds(&mut rng, &ctx.model, x0.h_cr, n, dt, &d.rods), w)
    } else {
        if !(a.load > 0.0) {
            return Err(usage(format!("--load must be positive (got {})", a.load)));
        }
        (vec![a.rod_speed; n], vec![a.load * p.p_nom; n])
    };
    let x0 = ctx.model.steady_state(w[0])?;
    let traj = ctx.model.simulate(&x0, &u, &w, dt)?;
    io::write_trajectory_csv(&ctx.path("trajectory.csv")?, &traj, ctx.model.n_z(), Some(&ctx.prov()?))?;
    println!("{} states over {} s written to {}", traj.states.len(), n as f64 * dt, ctx.out.join("trajectory.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct SteadyRow {
    load: f64,
    boron: f64,
    t_in: f64,
    ao: f64,
    total_xenon: f64,
}

#[derive(Serialize)]
struct CalibrationOut {
    params_hash: String,
    nominal_power: Vec<f64>,
    nominal_xenon: Vec<f64>,
    nominal_boron: f64,
    nominal_t_in: f64,
    steady_states: Vec<SteadyRow>,
    budget: Option<BudgetOut>,
}

#[derive(Serialize)]
struct BudgetOut {
    calibration: BudgetCalibration,
    ratio: f64,
    full_iterations: usize,
    iterations_at_1pct: usize,
    iterations_at_5pct: usize,
}

fn load_scenario(ctx: &Ctx, path: &Option<PathBuf>) -> CliResult<Scenario> {
    let s = match path {
        Some(p) => io::read_json::<Scenario>(p)?,
        None => {
            let (mut suite, _) = bench_dataset(&ctx.model, &ctx.cfg.ocp, &ctx.cfg.datagen.scenarios, 1, ctx.cfg.seed)?;
            suite.pop().ok_or_else(|| Failure::Runtime("scenario generation returned nothing".into()))?
        }
    };
    s.validate()?;
    Ok(s)
}

fn calibrate(ctx: &Ctx, a: &CalibrateArgs) -> CliResult {
    let nom = ctx.model.nominal();
    let p_nom = ctx.model.params().p_nom;
    let mut steady_states = Vec::new();
    for k in 3..=10 {
        let load = k as f64 / 10.0;
        let x = ctx.model.steady_state(load * p_nom)?;
        steady_states.push(SteadyRow {
            load,
            boron: x.boron,
            t_in: x.t_in,
            ao: sdo_core::ocp::axial_offset(&x.power)?,
            total_xenon: x.total_xenon(),
        });
    }
    let budget = match &a.surrogate {
        Some(path) => {
            let net = SurrogateNet::load(path)?;
            let scenario = load_scenario(ctx, &a.scenario)?;
            let b = &ctx.cfg.bench;
            let cal = BudgetCalibration::measure(&ctx.model, &net, &scenario, b.nu_surrogate, b.calibration_reps)?;
            let n = ctx.cfg.budget.max_iterations;
            Some(BudgetOut {
                calibration: cal,
                ratio: cal.ratio(),
                full_iterations: n,
                iterations_at_1pct: cal.iterations(0.01, n),
                iterations_at_5pct: cal.iterations(0.05, n),
            })
        }
        None => None,
    };
    let out = CalibrationOut {
        params_hash: io::hash_json(ctx.model.params())?,
        nominal_power: nom.power.clone(),
        nominal_xenon: nom.xenon.clone(),
        nominal_boron: nom.boron,
        nominal_t_in: nom.t_in,
        steady_states,
        budget,
    };
    io::write_json(&ctx.path("calibration.json")?, &out)?;
    println!("{}", serde_json::to_string_pretty(&out).map_err(SdoError::from)?);
    Ok(())
}

/// JSON items plus a manifest listing them.
fn save_items<T: Serialize>(dir: &Path, prefix: &str, items: &[T], manifest: &mut DatasetManifest) -> CliResult {
    manifest.files.clear();
    for (i, it) in items.iter().enumerate() {
        let name = format!("{prefix}_{i:05}.json");
        io::write_json(&dir.join(&name), it)?;
        manifest.files.push(name);
    }
    manifest.count = items.len();
    io::write_json(&dir.join(io::MANIFEST), manifest)?;
    Ok(())
}

fn load_items<T: serde::de::DeserializeOwned>(dir: &Path) -> CliResult<(Vec<T>, DatasetManifest)> {
    let m = io::load_manifest(dir)?;
    let items = m.files.iter().map(|f| io::read_json(&dir.join(f))).collect::<Result<Vec<T>, _>>()?;
    Ok((items, m))
}

fn gen_data(ctx: &Ctx, a: &GenDataArgs) -> CliResult {
    let c = &ctx.cfg;
    let prov = ctx.prov()?;
    let (dir, manifest) = match a.kind {
        DataKind::Surrogate => {
            let dir = ctx.default_dir(&a.dir, "surrogate");
            let (trajs, mut m) = surrogate_dataset(&ctx.model, &c.datagen.surrogate, c.ocp.dt, c.seed)?;
            io::save_trajectories(&dir, &trajs, ctx.model.n_z(), &mut m, Some(&prov))?;
            (dir, m)
        }
        DataKind::Bc => {
            let dir = ctx.default_dir(&a.dir, "bc");
            let d = &c.datagen;
            let (ex, mut m) = bc_dataset(&ctx.model, &c.ocp, &d.scenarios, d.bc_count, d.bc_expert_iterations, c.seed)?;
            save_items(&dir, "example", &ex, &mut m)?;
            (dir, m)
        }
        DataKind::Bench => {
            let dir = ctx.default_dir(&a.dir, "bench");
            let (suite, mut m) = bench_dataset(&ctx.model, &c.ocp, &c.datagen.scenarios, c.datagen.bench_count, c.seed)?;
            save_items(&dir, "scenario", &suite, &mut m)?;
            (dir, m)
        }
    };
    println!(
        "{} items in {} ({} simulator calls, {:.0} per item)",
        manifest.count,
        dir.display(),
        manifest.simulator_calls,
        manifest.calls_per_item()
    );
    Ok(())
}

fn train_surrogate(ctx: &Ctx, a: &TrainSurrogateArgs) -> CliResult {
    let dir = ctx.default_dir(&a.data, "surrogate");
    let (trajs, manifest) = io::load_trajectories(&dir, ctx.model.n_z())?;
    let data: Vec<Sequence> = trajs.iter().map(Sequence::from).collect();
    let sc = &ctx.cfg.surrogate;
    let prior = prior_for(&data, sc, ctx.model.params(), manifest.dt)?;
    let (net, record) = train(&data, sc, prior.as_ref())?;
    net.save(&ctx.path("surrogate.json")?)?;
    record.write_csv(&ctx.path("train_record.csv")?, Some(&ctx.prov()?))?;
    let best = record.best().ok_or_else(|| Failure::Runtime("training produced no epochs".into()))?;
    let summary = serde_json::json!({
        "best_epoch": record.best_epoch,
        "best_val_rollout_mse": best.best_val_rollout_mse,
        "epochs": record.epochs.len() - 1,
        "train_sequences": record.train_sequences,
        "val_sequences": record.val_sequences,
        "dataset_simulator_calls": manifest.simulator_calls,
    });
    io::write_json(&ctx.path("train_summary.json")?, &summary)?;
    println!("{summary}");
    Ok(())
}

fn train_bc(ctx: &Ctx, a: &TrainBcArgs) -> CliResult {
    let dir = ctx.default_dir(&a.data, "bc");
    let (examples, manifest): (Vec<BcExample>, _) = load_items(&dir)?;
    let bx = ControlBox::from_params(ctx.model.params());
    let net = bc_train(&examples, &ctx.cfg.bc, bx, manifest.simulator_calls)?;
    io::write_json(&ctx.path("bc.json")?, &net)?;
    println!(
        "bc net: train loss {:.3e}, val loss {:.3e}, dataset calls {}",
        net.train_loss, net.val_loss, net.dataset_calls
    );
    Ok(())
}

/// Loads the artifacts the strategies need, defaulting to `<out>/*.json`.
fn load_artifacts(
    ctx: &Ctx,
    strategies: &[Strategy],
    surrogate: &Option<PathBuf>,
    bc: &Option<PathBuf>,
) -> CliResult<(Option<SurrogateNet>, Option<BcNet>)> {
    let need_sdo = strategies.iter().any(|s| matches!(s, Strategy::Sdo { .. }));
    let need_bc = strategies.contains(&Strategy::Bc);
    let pick = |given: &Option<PathBuf>, name: &str, flag: &str| -> CliResult<PathBuf> {
        let p = given.clone().unwrap_or_else(|| ctx.out.join(name));
        if p.exists() {
            Ok(p)
        } else {
            Err(usage(format!("{} not found; pass {flag} or train it first", p.display())))
        }
    };
    let net = if need_sdo {
        Some(SurrogateNet::load(&pick(surrogate, "surrogate.json", "--surrogate")?)?)
    } else {
        None
    };
    let bcn = if need_bc {
        Some(io::read_json::<BcNet>(&pick(bc, "bc.json", "--bc")?)?)
    } else {
        None
    };
    Ok((net, bcn))
}

#[derive(Serialize)]
struct SolveSummary {
    scenario: usize,
    strategy: String,
    surrogate_iterations: usize,
    full_iterations: usize,
    j_pen_initial: f64,
    j_pen_final: f64,
    cost_final: f64,
    violation_final: f64,
    simulator_calls: u64,
    init_wall_s: f64,
    refine_wall_s: f64,
}

fn solve_strategy(ctx: &Ctx, a: &SolveArgs) -> CliResult<Strategy> {
    match (a.strategy.as_str(), a.sdo_fraction) {
        ("sdo", f) => {
            let fraction = f.unwrap_or(ctx.cfg.budget.surrogate_fraction);
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(usage(format!("--sdo-fraction must lie in (0, 1) (got {fraction})")));
            }
            Ok(Strategy::Sdo { fraction })
        }
        (other, None) => Ok(other.parse()?),
        (_, Some(_)) => Err(usage("--sdo-fraction applies to --strategy sdo only")),
    }
}

fn solve(ctx: &Ctx, a: &SolveArgs) -> CliResult {
    let strategy = solve_strategy(ctx, a)?;
    let scenario = load_scenario(ctx, &a.scenario)?;
    let (net, bcn) = load_artifacts(ctx, &[strategy], &a.surrogate, &a.bc)?;
    let artifacts = Artifacts {
        surrogate: net.as_ref(),
        bc: bcn.as_ref(),
    };
    let mut bench = ctx.cfg.bench_config();
    bench.strategies = vec![Strategy::Cold, strategy];
    let sdo_iters = match (strategy, a.sdo_iterations) {
        (Strategy::Sdo { .. }, Some(n)) => n,
        (Strategy::Sdo { .. }, None) => {
            let (m, _) = resolve_sdo_iterations(&ctx.model, std::slice::from_ref(&scenario), artifacts, &bench)?;
            m.get(&strategy.to_string()).copied().unwrap_or(0)
        }
        _ => 0,
    };
    let model = ctx.model.detached();
    let bx = ControlBox::from_params(model.params());
    let t = Instant::now();
    let u0 = warm_start(strategy, &scenario, bx, artifacts, sdo_iters, &bench, model.n_z())?;
    let init_wall_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let refined = refine_full(
        &model,
        &u0,
        scenario.x0(),
        &scenario.w,
        &scenario.spec,
        bench.iterations,
        &bench.full_rule,
        bench.threads,
    )?;
    let refine_wall_s = t.elapsed().as_secs_f64();
    let prov = ctx.prov()?;
    io::write_rows(&ctx.path("solve_trace.csv")?, &refined.trace.rows, Some(&prov))?;
    let traj = model.simulate(scenario.x0(), &refined.u.0, &scenario.w, scenario.spec.dt)?;
    io::write_trajectory_csv(&ctx.path("solve_trajectory.csv")?, &traj, model.n_z(), Some(&prov))?;
    let rows = &refined.trace.rows;
    let (first, last) = (rows.first(), rows.last());
    let summary = SolveSummary {
        scenario: scenario.id,
        strategy: strategy.to_string(),
        surrogate_iterations: sdo_iters,
        full_iterations: bench.iterations,
        j_pen_initial: first.map_or(f64::NAN, |r| r.penalized),
        j_pen_final: last.map_or(f64::NAN, |r| r.penalized),
        cost_final: last.map_or(f64::NAN, |r| r.cost),
        violation_final: last.map_or(f64::NAN, |r| r.violation),
        simulator_calls: model.counter().get(),
        init_wall_s,
        refine_wall_s,
    };
    io::write_json(&ctx.path("solve.json")?, &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(SdoError::from)?);
    Ok(())
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> CliResult {
    let dir = ctx.default_dir(&a.suite, "bench");
    let (suite, _): (Vec<Scenario>, _) = load_items(&dir)?;
    let cfg = ctx.cfg.bench_config();
    let (net, bcn) = load_artifacts(ctx, &cfg.strategies, &a.surrogate, &a.bc)?;
    let report = run_benchmark(
        &ctx.model,
        &suite,
        Artifacts {
            surrogate: net.as_ref(),
            bc: bcn.as_ref(),
        },
        &cfg,
    )?;
    let prov = ctx.prov()?;
    let ns: Vec<usize> = cfg.record_at.iter().copied().filter(|&n| n > 0).collect();
    report.write_deltas_csv(&ctx.path("deltas.csv")?, Some(&prov))?;
    report.write_aggregate_csv(&ctx.path("aggregate.csv")?, &ns, Some(&prov))?;
    report.write_violations_csv(&ctx.path("violations.csv")?, Some(&prov))?;
    report.write_timing_csv(&ctx.path("timing.csv")?, Some(&prov))?;
    let summary = serde_json::json!({
        "scenarios": suite.len(),
        "sdo_iterations": report.sdo_iterations,
        "calibration": report.calibration,
        "dropped": report.dropped,
    });
    io::write_json(&ctx.path("bench.json")?, &summary)?;
    for r in report.aggregates.iter().filter(|r| Some(&r.n) == ns.iter().max()) {
        println!(
            "{:10} {:?} n={:2}: median {:+.3} [{:+.3}, {:+.3}] worst {:+.3}",
            r.strategy, r.perturbation, r.n, r.median, r.q25, r.q75, r.worst
        );
    }
    if !report.dropped.is_empty() {
        log::warn!("{} scenario(s) dropped: {:?}", report.dropped.len(), report.dropped);
    }
    Ok(())
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> CliResult {
    let (trajs, manifest) = io::load_trajectories(&ctx.default_dir(&a.data, "surrogate"), ctx.model.n_z())?;
    let data: Vec<Sequence> = trajs.iter().map(Sequence::from).collect();
    let (suite, _): (Vec<Scenario>, _) = load_items(&ctx.default_dir(&a.suite, "bench"))?;
    let c = &ctx.cfg;
    let bench = c.bench_config();
    let iters = match a.sdo_iterations {
        Some(n) => n,
        None => {
            // timing depends on the architecture only; a zero output layer keeps the
            // untrained predictions physical
            let dim = trajs
                .first()
                .map(|t| t.states[0].dim())
                .ok_or_else(|| Failure::Runtime("empty surrogate dataset".into()))?;
            let untrained = sdo_core::SurrogateConfig {
                init_output_scale: 0.0,
                ..c.surrogate.clone()
            };
            let net = SurrogateNet::new(untrained, dim, Normalization::identity(dim))?;
            let first = suite.first().ok_or_else(|| usage("empty benchmark suite"))?;
            let cal = BudgetCalibration::measure(&ctx.model, &net, first, bench.nu_surrogate, bench.calibration_reps)?;
            cal.iterations(c.sweep.sdo_fraction, c.budget.max_iterations)
        }
    };
    let prior = prior_for(&data, &c.surrogate, ctx.model.params(), manifest.dt)?;
    let report = data_efficiency_sweep(&ctx.model, &data, &c.surrogate, prior.as_ref(), &suite, &bench, &c.sweep, iters)?;
    report.write_csv(&ctx.path("sweep.csv")?, Some(&ctx.prov()?))?;
    let per_fraction: Vec<_> = c
        .sweep
        .fractions
        .iter()
        .map(|&f| {
            serde_json::json!({
                "fraction": f,
                "final": report.final_row(f),
                "spearman_mse_vs_delta": report.spearman(f),
            })
        })
        .collect();
    let summary = serde_json::json!({ "sdo_iterations": iters, "fractions": per_fraction });
    io::write_json(&ctx.path("sweep.json")?, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(SdoError::from)?);
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    index: usize,
    dims: usize,
    m: f64,
    mu: f64,
    k_j: f64,
    /// `‖u* - û‖` and its bound.
    lhs: f64,
    rhs: f64,
    margin: f64,
    objective_gap: f64,
    objective_bound: f64,
    passed: bool,
}

fn verify_bound(ctx: &Ctx, a: &VerifyBoundArgs) -> CliResult {
    if a.count == 0 || a.max_dims == 0 || !(a.m_max >= 0.0) {
        return Err(usage("--count and --max-dims must be positive and --m-max non-negative"));
    }
    let checks = run_checks(&mut ctx.rng(), a.count, a.max_dims, a.m_max, a.zero_every)?;
    let rows: Vec<BoundRow> = checks
        .iter()
        .enumerate()
        .map(|(index, c)| BoundRow {
            index,
            dims: c.dims,
            m: c.m,
            mu: c.mu,
            k_j: c.k_j,
            lhs: c.distance,
            rhs: c.distance_bound,
            margin: c.distance_margin(),
            objective_gap: c.objective_gap,
            objective_bound: c.objective_bound,
            passed: c.passed(),
        })
        .collect();
    io::write_rows(&ctx.path("bound_checks.csv")?, &rows, Some(&ctx.prov()?))?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    let worst = checks.iter().map(|c| c.distance_ratio()).fold(0.0, f64::max);
    println!("{} instances, {failed} violations, largest distance/bound ratio {worst:.3}", rows.len());
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} instances violate the bound", rows.len())));
    }
    Ok(())
}
