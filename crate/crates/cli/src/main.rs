use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use spregret_core::conic::ToleranceConfig;
use spregret_core::evaluation::{
    chain_benchmark, run_mass_count_experiment, run_win_experiment, BenchmarkConfig, ControllerSet, Coordinates,
    ExperimentConfig, ExperimentReport, Extent, MassLayout,
};
use spregret_core::model::{build_block_lift, chain_sparsity, spring_mass_chain, ChainParams};
use spregret_core::sls::{causal_pattern, closed_loop_from_controller, Restriction};
use spregret_core::sparsity::is_qi;
use spregret_core::synthesis::{
    pipeline, synthesize_h2, synthesize_hinf, synthesize_oracle, synthesize_spregret, Objective, OracleChoice,
    OracleObjective, PipelineConfig, SynthesisSpec,
};
use spregret_core::{Controller, CostWeights, Discretization, Error, HorizonSystem, SparsityPattern};

/// Sparse finite-horizon controller synthesis: spatial regret, H2, H-infinity.
#[derive(Parser, Debug)]
#[command(name = "spregret", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a discretized spring-mass chain as a model JSON file.
    GenModel(GenModelArgs),
    /// Write a sparsity pattern (text rows of 0/1, or JSON with --json).
    GenPattern(GenPatternArgs),
    /// Synthesize a controller and write it with a report.
    Synth(SynthArgs),
    /// Run a Monte-Carlo win-rate experiment; writes CSV, JSON and SVG.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct ChainArgs {
    /// Number of masses in the chain.
    #[arg(long, default_value_t = 10)]
    masses: usize,
    /// Spring constant.
    #[arg(long, default_value_t = 0.5)]
    k: f64,
    /// Damping constant.
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    /// Mass of every cart.
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    /// Sampling time.
    #[arg(long, default_value_t = 0.5)]
    ts: f64,
    /// Horizon T.
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long, value_enum, default_value_t = DiscretizationArg::Zoh)]
    discretization: DiscretizationArg,
}

impl ChainArgs {
    fn params(&self) -> ChainParams {
        ChainParams {
            masses: self.masses,
            k: self.k,
            c: self.c,
            mass: self.mass,
            ts: self.ts,
            horizon: self.horizon,
            discretization: match self.discretization {
                DiscretizationArg::Zoh => Discretization::Zoh,
                DiscretizationArg::Euler => Discretization::Euler,
            },
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum DiscretizationArg {
    Zoh,
    Euler,
}

#[derive(Args, Debug)]
struct GenModelArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Output path.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PatternKind {
    /// Causal chain pattern `Tril(T) ⊗ S_spatial`.
    Chain,
    /// Spatial chain pattern only (`N × 2N`).
    ChainSpatial,
    /// Every causal entry.
    Causal,
}

#[derive(Args, Debug)]
struct GenPatternArgs {
    #[arg(long, value_enum, default_value_t = PatternKind::Chain)]
    kind: PatternKind,
    #[arg(long, default_value_t = 10)]
    masses: usize,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    /// Write JSON instead of text rows.
    #[arg(long)]
    json: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    H2,
    Hinf,
    Spregret,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OracleArg {
    NearestQi,
    Centralized,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum OracleObjectiveArg {
    H2,
    Hinf,
}

impl From<OracleObjectiveArg> for OracleObjective {
    fn from(o: OracleObjectiveArg) -> Self {
        match o {
            OracleObjectiveArg::H2 => OracleObjective::H2,
            OracleObjectiveArg::Hinf => OracleObjective::Hinf,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ToleranceArgs {
    /// Equality residual tolerance.
    #[arg(long)]
    tol_eq: Option<f64>,
    /// PSD eigenvalue tolerance.
    #[arg(long)]
    tol_psd: Option<f64>,
    /// Relative duality-gap tolerance.
    #[arg(long)]
    tol_gap: Option<f64>,
    /// Interior-point iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
}

impl ToleranceArgs {
    fn config(&self) -> Result<ToleranceConfig, Error> {
        let d = ToleranceConfig::default();
        let t = ToleranceConfig {
            tol_eq: self.tol_eq.unwrap_or(d.tol_eq),
            tol_psd: self.tol_psd.unwrap_or(d.tol_psd),
            tol_gap: self.tol_gap.unwrap_or(d.tol_gap),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(t.tol_eq) && positive(t.tol_psd) && positive(t.tol_gap) && t.max_iter > 0) {
            return Err(Error::Validation("tolerances must be positive and finite".into()));
        }
        Ok(t)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Model JSON written by gen-model (or any horizon system file).
    #[arg(long)]
    model: PathBuf,
    /// Controller pattern: a file (text rows or JSON), `chain` or `all-ones`.
    #[arg(long, default_value = "chain")]
    pattern: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Spregret)]
    method: MethodArg,
    /// Oracle pattern for the regret method.
    #[arg(long, value_enum, default_value_t = OracleArg::NearestQi)]
    oracle: OracleArg,
    /// Explicit oracle pattern file; overrides --oracle and must be QI.
    #[arg(long)]
    oracle_pattern: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OracleObjectiveArg::Hinf)]
    oracle_objective: OracleObjectiveArg,
    /// Restrict the maps to be block Toeplitz.
    #[arg(long)]
    toeplitz: bool,
    #[command(flatten)]
    tolerances: ToleranceArgs,
    /// Controller output path.
    #[arg(long, short)]
    out: PathBuf,
    /// Report path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ExperimentMode {
    /// Sweep the maximum number of affected masses on one plant.
    AffectedMasses,
    /// Sweep the chain length, re-synthesizing every controller.
    MassCount,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ExtentArg {
    FullHorizon,
    InitialState,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CoordinatesArg {
    FullState,
    Positions,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(value_enum)]
    mode: ExperimentMode,
    #[command(flatten)]
    chain: ChainArgs,
    /// Model file for precomputed controllers (affected-masses only).
    #[arg(long, requires = "controller")]
    model: Option<PathBuf>,
    /// Precomputed controller as NAME=PATH; repeat for each controller.
    #[arg(long, requires = "model")]
    controller: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disturbance interval `lo hi`.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-0.5, 1.0])]
    interval: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ExtentArg::FullHorizon)]
    extent: ExtentArg,
    #[arg(long, value_enum, default_value_t = CoordinatesArg::FullState)]
    coordinates: CoordinatesArg,
    /// Sweep start (mass-count).
    #[arg(long, default_value_t = 3)]
    from: usize,
    /// Sweep end, inclusive (mass-count).
    #[arg(long, default_value_t = 10)]
    to: usize,
    /// Largest affected-mass maximum to sweep (defaults to the mass count).
    #[arg(long)]
    max_affected: Option<usize>,
    /// Controller against which relative cost increases are reported.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, value_enum, default_value_t = OracleObjectiveArg::Hinf)]
    oracle_objective: OracleObjectiveArg,
    /// Synthesize with block-Toeplitz maps.
    #[arg(long)]
    toeplitz: bool,
    #[command(flatten)]
    tolerances: ToleranceArgs,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "SPREGRET_THREADS")]
    threads: Option<usize>,
    /// Output prefix; writes `<prefix>.csv`, `<prefix>.json`, `<prefix>.svg`.
    #[arg(long, short)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::NotQuadraticallyInvariant { .. } => 3,
        Error::Solver { .. } | Error::InvariantViolation(_) | Error::NotAchievable { .. } => 4,
        _ => 2,
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Validation(format!("cannot write {}: {e}", path.display())))
}

fn read_pattern(path: &Path) -> Result<SparsityPattern, Error> {
    let text = read(path)?;
    if text.trim_start().starts_with('{') {
        SparsityPattern::from_json(&text)
    } else {
        SparsityPattern::from_text(&text)
    }
}

fn chain_masses(sys: &HorizonSystem) -> Result<usize, Error> {
    match &sys.meta.chain {
        Some(c) => Ok(c.masses),
        None => Err(Error::Validation("model carries no chain parameters; pass a pattern file".into())),
    }
}

fn gen_model(args: &GenModelArgs) -> Result<(), Error> {
    let sys = spring_mass_chain(&args.chain.params())?;
    write(&args.out, &sys.to_json()?)?;
    eprintln!("wrote {} (n = {}, m = {}, T = {})", args.out.display(), sys.state_dim, sys.input_dim, sys.horizon);
    Ok(())
}

fn gen_pattern(args: &GenPatternArgs) -> Result<(), Error> {
    let p = match args.kind {
        PatternKind::Chain => chain_sparsity(args.masses, args.horizon)?,
        PatternKind::ChainSpatial => spregret_core::model::chain_spatial_pattern(args.masses)?,
        PatternKind::Causal => {
            if args.masses < 1 || args.horizon < 1 {
                return Err(Error::Validation("masses and horizon must be positive".into()));
            }
            SparsityPattern::tril_kron(args.horizon, &SparsityPattern::ones(args.masses, 2 * args.masses))
        }
    };
    write(&args.out, &if args.json { p.to_json()? } else { p.to_text() })?;
    eprintln!("wrote {} ({}x{}, {} ones)", args.out.display(), p.rows(), p.cols(), p.card());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Error> {
    let tol = args.tolerances.config()?;
    let sys = HorizonSystem::from_json(&read(&args.model)?)?;
    let lift = build_block_lift(&sys)?;
    let cost = CostWeights::identity(lift.stacked_rows());
    let s = match args.pattern.as_str() {
        "chain" => chain_sparsity(chain_masses(&sys)?, sys.horizon)?,
        "all-ones" | "causal" => causal_pattern(&lift),
        path => read_pattern(Path::new(path))?,
    };
    let restriction = if args.toeplitz { Restriction::Toeplitz } else { Restriction::None };
    let echo = json!({
        "command": "synth",
        "model": args.model.display().to_string(),
        "pattern": args.pattern,
        "method": args.method,
        "oracle": args.oracle,
        "oracle_pattern": args.oracle_pattern.as_ref().map(|p| p.display().to_string()),
        "oracle_objective": args.oracle_objective,
        "restriction": restriction,
        "tolerances": tol,
    });
    let spec = |objective| -> Result<SynthesisSpec, Error> {
        Ok(SynthesisSpec::new(lift.clone(), cost.clone(), s.clone(), objective)?
            .with_restriction(restriction)
            .with_tolerances(tol))
    };
    let (controller, report) = match args.method {
        MethodArg::H2 | MethodArg::Hinf => {
            let r = if args.method == MethodArg::H2 {
                synthesize_h2(&spec(Objective::H2 { sigma: None })?)?
            } else {
                synthesize_hinf(&spec(Objective::Hinf)?)?
            };
            let report = json!({
                "config": echo,
                "value": r.value,
                "num_variables": r.num_variables,
                "free_variables": r.free_variables,
                "stats": r.stats,
            });
            eprintln!("value {:.10}", r.value);
            (r.controller, report)
        }
        MethodArg::Spregret => match &args.oracle_pattern {
            Some(path) => {
                let s_hat = read_pattern(path)?;
                let oracle = synthesize_oracle(&lift, &cost, &s_hat, args.oracle_objective.into(), restriction, tol)?;
                let r = synthesize_spregret(&spec(Objective::SpRegret {
                    oracle: oracle.result.phi.clone(),
                    expect_nonnegative: s.is_subset_of(&s_hat),
                })?)?;
                let report = json!({
                    "config": echo,
                    "s_hat": s_hat.to_text(),
                    "s_is_qi": is_qi(&s, &lift.delta)?,
                    "oracle_cost": oracle.result.value,
                    "lambda_star": r.value,
                    "num_variables": r.num_variables,
                    "free_variables": r.free_variables,
                    "oracle_stats": oracle.result.stats,
                    "spregret_stats": r.stats,
                });
                eprintln!("lambda* {:.10}", r.value);
                (r.controller, report)
            }
            None => {
                let cfg = PipelineConfig {
                    oracle: match args.oracle {
                        OracleArg::NearestQi => OracleChoice::NearestQi,
                        OracleArg::Centralized => OracleChoice::Centralized,
                    },
                    oracle_objective: args.oracle_objective.into(),
                    restriction,
                    tolerances: tol,
                };
                let out = pipeline(&s, &lift, &cost, &cfg)?;
                eprintln!("lambda* {:.10} (|S| = {}, |S_hat| = {})", out.report.lambda_star, out.report.card_s, out.report.card_s_hat);
                (out.controller, json!({ "config": echo, "report": out.report }))
            }
        },
    };
    write(&args.out, &controller.to_json()?)?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write(&report_path, &serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn loaded_set(args: &ExperimentArgs) -> Result<ControllerSet, Error> {
    let model = args.model.as_ref().expect("clap enforces --model");
    let sys = HorizonSystem::from_json(&read(model)?)?;
    let lift = build_block_lift(&sys)?;
    let masses = match &sys.meta.chain {
        Some(c) => c.masses,
        None if sys.state_dim % 2 == 0 => sys.state_dim / 2,
        None => return Err(Error::Validation("model state dimension must be twice the mass count".into())),
    };
    let mut names = Vec::new();
    let mut maps = Vec::new();
    for item in &args.controller {
        let (name, path) = item
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("controller '{item}' must be NAME=PATH")))?;
        let k = Controller::from_json(&read(Path::new(path))?)?;
        let map = closed_loop_from_controller(&k, &lift)
            .map_err(|e| Error::Validation(format!("controller '{name}' does not match the model: {e}")))?;
        names.push(name.to_string());
        maps.push(map);
    }
    ControllerSet::new(names, maps, CostWeights::identity(lift.stacked_rows()), MassLayout::new(masses, sys.horizon))
}

fn experiment(args: &ExperimentArgs) -> Result<(), Error> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    let tol = args.tolerances.config()?;
    let cfg = ExperimentConfig {
        draws: args.draws,
        iterations: args.iterations,
        seed: args.seed,
        lo: args.interval[0],
        hi: args.interval[1],
        extent: match args.extent {
            ExtentArg::FullHorizon => Extent::FullHorizon,
            ExtentArg::InitialState => Extent::InitialState,
        },
        coordinates: match args.coordinates {
            CoordinatesArg::FullState => Coordinates::FullState,
            CoordinatesArg::Positions => Coordinates::Positions,
        },
        baseline: args.baseline.clone(),
    };
    cfg.validate()?;
    let bench = BenchmarkConfig {
        oracle_objective: args.oracle_objective.into(),
        restriction: if args.toeplitz { Restriction::Toeplitz } else { Restriction::None },
        tolerances: tol,
    };
    let mut report: ExperimentReport = match args.mode {
        ExperimentMode::AffectedMasses => {
            let set = if args.model.is_some() {
                loaded_set(args)?
            } else {
                eprintln!("synthesizing benchmark controllers for {} masses", args.chain.masses);
                chain_benchmark(&args.chain.params(), &bench)?.set
            };
            let max = args.max_affected.unwrap_or(set.layout.masses);
            if max == 0 || max > set.layout.masses {
                return Err(Error::Validation(format!("--max-affected must lie in 1..={}", set.layout.masses)));
            }
            let sweep: Vec<usize> = (1..=max).collect();
            run_win_experiment(&set, &sweep, &cfg)?
        }
        ExperimentMode::MassCount => {
            if args.model.is_some() {
                return Err(Error::Validation("mass-count re-synthesizes its controllers; drop --model".into()));
            }
            if args.from < 2 || args.from > args.to {
                return Err(Error::Validation("need 2 <= --from <= --to".into()));
            }
            let counts: Vec<usize> = (args.from..=args.to).collect();
            run_mass_count_experiment(
                &counts,
                |n| {
                    eprintln!("synthesizing benchmark controllers for {n} masses");
                    let params = ChainParams { masses: n, ..args.chain.params() };
                    Ok(chain_benchmark(&params, &bench)?.set)
                },
                &cfg,
            )?
        }
    };
    report.echo = json!({
        "command": "experiment",
        "mode": args.mode,
        "chain": args.model.is_none().then(|| json!(args.chain)),
        "model": args.model.as_ref().map(|p| p.display().to_string()),
        "controllers": args.controller,
        "sweep": match args.mode {
            ExperimentMode::MassCount => json!({ "from": args.from, "to": args.to }),
            ExperimentMode::AffectedMasses => json!({ "max_affected": args.max_affected }),
        },
        "oracle_objective": args.oracle_objective,
        "toeplitz": args.toeplitz,
        "tolerances": tol,
    });
    let with_ext = |ext: &str| {
        let mut p = args.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let echo = serde_json::to_string(&json!({ "config": report.config, "echo": report.echo }))?;
    write(&with_ext(".json"), &report.to_json()?)?;
    write(&with_ext(".csv"), &format!("# {echo}\n{}", report.to_csv()))?;
    write(&with_ext(".svg"), &format!("<!-- {} -->\n{}", echo.replace("--", "- -"), report.to_svg()))?;
    for p in &report.points {
        let wins: Vec<String> = p.controllers.iter().map(|c| format!("{} {:.3}", c.name, c.win_mean)).collect();
        eprintln!("point {}: {}", p.sweep_point, wins.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenModel(a) => gen_model(a),
        Command::GenPattern(a) => gen_pattern(a),
        Command::Synth(a) => synth(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
