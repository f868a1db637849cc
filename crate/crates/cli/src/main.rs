mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use opfenv::env::OpfEnv;
use opfenv::eval::{
    evaluate_policy, export_results, run_experiment, run_single, scatter_diagnostic, select_test_rows,
    Controller, ExperimentPlan, OracleCache, OracleController, RandomController, Variant, EVAL_ENV_SEED,
};
use opfenv::grid::{load_grid, GridModel};
use opfenv::par::{self, Execution};
use opfenv::powerflow::{solve_power_flow, InjectionSet, SolverSettings};
use opfenv::rl::Policy;
use opfenv::scenarios::{self, Dataset, Scenario, ScenarioKind};
use opfenv::{Error, Result};
use serde::{Deserialize, Serialize};

use config::{CliConfig, ControllerKind};

#[derive(Parser, Debug)]
#[command(name = "opfenv", version, about = "OPF reinforcement-learning environments: data, training, evaluation")]
struct Cli {
    /// TOML config file; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set train.steps=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Zero wall-clock fields so repeated runs write identical files.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Output root.
    #[arg(long, global = true, env = "OPFENV_OUT", default_value = "opfenv-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ScenarioArg {
    VoltageControl,
    EcoDispatch,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with its train/test split.
    GenData,
    /// Solve one AC power flow and print the result.
    Powerflow(PowerflowArgs),
    /// Solve and cache reference optima for test states.
    Oracle(OracleArgs),
    /// Train one DDPG agent and evaluate it on the test split.
    Train,
    /// Evaluate a saved policy or a baseline controller.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every (variant, seed) pair of the design grid.
    Sweep(SweepArgs),
    /// Objective against violation for random state-action pairs.
    Scatter,
}

#[derive(Args, Debug)]
struct PowerflowArgs {
    /// Grid file, or one of `two_bus`, `lv_desk`, `hv_desk`. Defaults to
    /// the scenario grid.
    #[arg(long)]
    grid: Option<String>,
    /// TOML file with `p_mw` and `q_mvar` arrays (per bus, generation
    /// positive). Defaults to the injections stored in the grid.
    #[arg(long, conflicts_with = "zero")]
    injections: Option<PathBuf>,
    /// Solve with all injections zero.
    #[arg(long)]
    zero: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Dataset row ids; defaults to the evaluation test states.
    #[arg(long, value_delimiter = ',')]
    rows: Vec<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ControllerArg {
    Policy,
    Random,
    Oracle,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Worker threads for parallel runs.
    #[arg(long)]
    jobs: Option<usize>,
}

struct Ctx {
    config: CliConfig,
    out: PathBuf,
}

impl Ctx {
    fn execution(&self) -> Execution {
        Execution::Parallel
    }

    fn oracle_cache(&self) -> OracleCache {
        let dir = self.config.eval.oracle_dir.clone().unwrap_or_else(|| self.out.join("oracle"));
        OracleCache::on_disk(dir, self.config.oracle)
    }

    fn scenario(&self) -> Result<Scenario> {
        let section = &self.config.scenario;
        let grid = match &section.grid {
            Some(p) => load_grid(p)?,
            None => bundled_grid(section.kind),
        };
        let dataset = match &section.dataset {
            Some(p) => Dataset::load(p)?,
            None => scenarios::bundled_dataset(section.kind),
        };
        match section.kind {
            ScenarioKind::VoltageControl => scenarios::make_voltage_control(grid, dataset),
            ScenarioKind::EcoDispatch => scenarios::make_eco_dispatch(grid, dataset),
        }
    }
}

fn bundled_grid(kind: ScenarioKind) -> GridModel {
    match kind {
        ScenarioKind::VoltageControl => scenarios::lv_desk_grid(),
        ScenarioKind::EcoDispatch => scenarios::hv_desk_grid(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}%"))
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let c = &ctx.config;
    let mut profile = match c.scenario.kind {
        ScenarioKind::VoltageControl => scenarios::lv_desk_profiles(c.seed),
        ScenarioKind::EcoDispatch => scenarios::hv_desk_profiles(c.seed),
    };
    if let Some(h) = c.gen_data.horizon {
        profile.horizon = h;
    }
    if let Some(n) = c.gen_data.noise {
        profile.noise = n;
    }
    let dataset = scenarios::split_dataset(scenarios::generate_profiles(&profile)?, c.gen_data.test_fraction)?;
    let path = ctx.out.join(format!("{}.csv", c.scenario.kind.name()));
    dataset.save(&path)?;
    println!(
        "wrote {} ({} rows, {} columns, test split from row {})",
        path.display(),
        dataset.n_rows(),
        dataset.columns.len(),
        dataset.split_index
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionFile {
    p_mw: Vec<f64>,
    q_mvar: Vec<f64>,
}

#[derive(Serialize)]
struct PowerflowSummary {
    converged: bool,
    iterations: usize,
    max_mismatch_pu: f64,
    vm_pu: Vec<f64>,
    va_deg: Vec<f64>,
    loading_percent: Vec<f64>,
    total_losses_mw: f64,
    ext_p_mw: f64,
    ext_q_mvar: f64,
}

fn powerflow(ctx: &Ctx, args: &PowerflowArgs) -> Result<()> {
    let grid = match args.grid.as_deref() {
        None => bundled_grid(ctx.config.scenario.kind),
        Some("two_bus") => scenarios::two_bus_grid(),
        Some("lv_desk") => scenarios::lv_desk_grid(),
        Some("hv_desk") => scenarios::hv_desk_grid(),
        Some(path) => load_grid(path)?,
    };
    let violations = grid.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(format!("{violations:?}")));
    }
    let n = grid.buses.len();
    let injections = if args.zero {
        InjectionSet::zeros(n)
    } else if let Some(path) = &args.injections {
        let text = std::fs::read_to_string(path)?;
        let f: InjectionFile = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if f.p_mw.len() != n || f.q_mvar.len() != n {
            return Err(Error::Parse(format!("injection file must list {n} buses")));
        }
        InjectionSet {
            p_mw: f.p_mw,
            q_mvar: f.q_mvar,
        }
    } else {
        InjectionSet::from_grid(&grid)
    };
    let res = solve_power_flow(&grid, &injections, SolverSettings::default())?;
    println!(
        "converged {} after {} iterations, mismatch {:.2e} p.u.",
        res.converged, res.iterations, res.max_mismatch_pu
    );
    println!("{:>6} {:>10} {:>10}", "bus", "vm_pu", "va_deg");
    for (i, b) in grid.buses.iter().enumerate() {
        println!("{:>6} {:>10.6} {:>10.4}", b.id, res.vm_pu[i], res.va_rad[i].to_degrees());
    }
    println!(
        "losses {:.6} MW, external grid {:.6} MW / {:.6} Mvar",
        res.total_losses_mw, res.ext_p_mw, res.ext_q_mvar
    );
    let summary = PowerflowSummary {
        converged: res.converged,
        iterations: res.iterations,
        max_mismatch_pu: res.max_mismatch_pu,
        va_deg: res.va_rad.iter().map(|a| a.to_degrees()).collect(),
        vm_pu: res.vm_pu,
        loading_percent: res.loading_percent,
        total_losses_mw: res.total_losses_mw,
        ext_p_mw: res.ext_p_mw,
        ext_q_mvar: res.ext_q_mvar,
    };
    write_json(&ctx.out.join("powerflow.json"), &summary)
}

fn test_rows(ctx: &Ctx, scenario: &Scenario) -> Result<Vec<usize>> {
    let rows = select_test_rows(&scenario.dataset, ctx.config.eval.samples);
    if rows.is_empty() {
        return Err(Error::Config("eval.samples must be positive".into()));
    }
    Ok(rows)
}

fn oracle(ctx: &Ctx, args: &OracleArgs) -> Result<()> {
    let scenario = ctx.scenario()?;
    let rows = if args.rows.is_empty() {
        test_rows(ctx, &scenario)?
    } else {
        args.rows.clone()
    };
    if let Some(&r) = rows.iter().find(|&&r| r >= scenario.dataset.n_rows()) {
        return Err(Error::Config(format!("row {r} outside the dataset")));
    }
    let cache = ctx.oracle_cache();
    let solved = cache.ensure(&scenario, &rows, ctx.execution())?;
    let mut n_valid = 0;
    for &r in &rows {
        let sol = cache.require(&scenario, r)?;
        n_valid += sol.valid as usize;
        if rows.len() <= 20 {
            println!(
                "row {r}: objective {:.6} valid {} violation {:.3e}",
                sol.objective, sol.valid, sol.total_violation
            );
        }
    }
    println!(
        "{} states: {solved} solved, {} from cache, {n_valid} valid",
        rows.len(),
        rows.len() - solved
    );
    Ok(())
}

fn train(ctx: &Ctx) -> Result<()> {
    let c = &ctx.config;
    let scenario = Arc::new(ctx.scenario()?);
    let rows = test_rows(ctx, &scenario)?;
    let cache = ctx.oracle_cache();
    cache.ensure(&scenario, &rows, ctx.execution())?;
    let variant = Variant {
        id: "train".into(),
        design: c.env.clone(),
        gamma: Some(c.train.gamma),
    };
    let plan = ExperimentPlan {
        variants: vec![variant.clone()],
        seeds: vec![c.seed],
        steps: c.train.steps,
        eval_samples: c.eval.samples,
        ddpg: c.ddpg.clone(),
        deterministic: c.deterministic,
    };
    plan.validate()?;
    let (result, policy) = run_single(&scenario, &variant, c.seed, &plan, &rows, &cache)?;
    policy.save(ctx.out.join("policy.json"))?;
    write_json(&ctx.out.join("train_result.json"), &result)?;
    for cp in &result.log.checkpoints {
        println!(
            "step {:>8}: MAPE {:>9} invalid {:>7.2}% mean reward {:.4}",
            cp.step,
            fmt_pct(cp.mape_percent),
            cp.invalid_share_percent,
            cp.mean_reward
        );
    }
    if let Some(step) = result.log.diverged_at {
        return Err(Error::DivergenceDetected { step });
    }
    if !c.deterministic {
        println!("trained {} steps in {:.1} s", result.steps, result.wall_clock_s);
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let c = &ctx.config;
    let scenario = Arc::new(ctx.scenario()?);
    let rows = test_rows(ctx, &scenario)?;
    let cache = ctx.oracle_cache();
    cache.ensure(&scenario, &rows, ctx.execution())?;
    let kind = match args.controller {
        Some(ControllerArg::Policy) => ControllerKind::Policy,
        Some(ControllerArg::Random) => ControllerKind::Random,
        Some(ControllerArg::Oracle) => ControllerKind::Oracle,
        None => c.evaluate.controller,
    };
    let mut env = OpfEnv::new(Arc::clone(&scenario), c.env.clone(), EVAL_ENV_SEED)?;
    let mut controller: Box<dyn Controller + '_> = match kind {
        ControllerKind::Policy => {
            let path = args
                .policy
                .clone()
                .or_else(|| c.evaluate.policy.clone())
                .ok_or_else(|| Error::Config("evaluating a policy needs --policy".into()))?;
            let policy = Policy::load(path)?;
            if policy.action_box != env.action_box() {
                return Err(Error::Config("policy action box does not match the scenario".into()));
            }
            Box::new(policy)
        }
        ControllerKind::Random => Box::new(RandomController::new(c.seed)),
        ControllerKind::Oracle => Box::new(OracleController { cache: &cache }),
    };
    let report = evaluate_policy(controller.as_mut(), &mut env, &rows, &cache)?;
    println!(
        "{} states: MAPE {} invalid {:.2}%",
        report.n_samples,
        fmt_pct(report.mape_percent),
        report.invalid_share_percent
    );
    write_json(&ctx.out.join("evaluation.json"), &report)
}

fn sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let c = &ctx.config;
    let scenario = Arc::new(ctx.scenario()?);
    let all = opfenv::eval::design_variants(scenario.spec.default_penalty);
    let variants = if c.sweep.variants.is_empty() {
        all
    } else {
        c.sweep
            .variants
            .iter()
            .map(|id| {
                all.iter()
                    .find(|v| &v.id == id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown variant {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let plan = ExperimentPlan {
        variants,
        seeds: c.sweep.seeds.clone(),
        steps: c.sweep.steps,
        eval_samples: c.eval.samples,
        ddpg: c.ddpg.clone(),
        deterministic: c.deterministic,
    };
    plan.validate()?;
    let cache = ctx.oracle_cache();
    let dir = ctx.out.join("sweep");
    let run = || run_experiment(&scenario, &plan, &cache, Some(&dir), Execution::Parallel);
    let results = match args.jobs {
        Some(n) => par::with_threads(n, run)?,
        None => run()?,
    };
    let csv = export_results(&results, &dir)?;
    for r in &results {
        let (mape, invalid) = r
            .report
            .as_ref()
            .map_or((None, f64::NAN), |rep| (rep.mape_percent, rep.invalid_share_percent));
        println!(
            "{:<18} seed {:<4} MAPE {:>9} invalid {:>7.2}%{}",
            r.variant,
            r.seed,
            fmt_pct(mape),
            invalid,
            if r.diverged { "  DIVERGED" } else { "" }
        );
    }
    println!("wrote {}", csv.display());
    if let Some(r) = results.iter().find(|r| r.diverged) {
        return Err(Error::DivergenceDetected {
            step: r.log.diverged_at.unwrap_or(r.steps),
        });
    }
    Ok(())
}

fn scatter(ctx: &Ctx) -> Result<()> {
    let c = &ctx.config;
    let scenario = Arc::new(ctx.scenario()?);
    let kind = scenario.kind();
    let env = OpfEnv::new(scenario, c.env.clone(), c.seed)?;
    let report = scatter_diagnostic(&env, c.scatter.samples, c.seed, ctx.execution())?;
    match report.pearson_r {
        Some(r) => println!("{}: pearson r = {r:+.3} over {} samples", kind.name(), report.points.len()),
        None => println!("{}: correlation undefined (constant series)", kind.name()),
    }
    write_json(&ctx.out.join(format!("scatter_{}.json", kind.name())), &report)
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.deterministic |= cli.deterministic;
    if let Some(s) = cli.scenario {
        config.scenario.kind = match s {
            ScenarioArg::VoltageControl => ScenarioKind::VoltageControl,
            ScenarioArg::EcoDispatch => ScenarioKind::EcoDispatch,
        };
    }
    let ctx = Ctx {
        config,
        out: cli.out.clone(),
    };
    std::fs::create_dir_all(&ctx.out)?;
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Powerflow(a) => powerflow(&ctx, a),
        Command::Oracle(a) => oracle(&ctx, a),
        Command::Train => train(&ctx),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Scatter => scatter(&ctx),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::DivergenceDetected { .. } => 3,
        e if e.is_config_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
