//! Command-line front end: parse problem specs, dispatch the solvers, and
//! emit designs, certificates, and study reports.
//!
//! Results go to stdout (or `--out`); diagnostics go to stderr. Exit codes:
//! 0 success, 2 schema or validation error, 3 infeasible problem,
//! 4 no convergence, 1 anything else.

mod schema;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use aopt_core::error::Error as CoreError;
use aopt_core::evaluation::{
    proportional_allocation, run_study, uniform_allocation, SamplerKind, SamplerSpec,
};
use aopt_core::forlion::{forlion_optimize, verify_design, ForlionConfig};
use aopt_core::liftone::{liftone_optimize_with_seed, LiftOneInit, SolveMethod};
use aopt_core::rounding::round_allocation;
use aopt_core::{ApproximateDesign, GlmModel};

use schema::{
    build_model, build_space, DesignDocument, ExactDocument, ProblemSpec, SamplerJson, StudySpec,
    VerifyDocument,
};

#[derive(Debug)]
pub enum CliError {
    Schema(String),
    Io(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        CliError::Core(err)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(msg) => write!(f, "{msg}"),
            CliError::Io(msg) => write!(f, "{msg}"),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Io(_) => 2,
            CliError::Core(err) => match err {
                CoreError::Infeasible(_) | CoreError::Singular(_) => 3,
                CoreError::NonConvergence(_) => 4,
                CoreError::Invalid(_)
                | CoreError::Domain(_)
                | CoreError::Weight(_)
                | CoreError::Rank(_)
                | CoreError::Allocation(_)
                | CoreError::MissingHook
                | CoreError::NonDifferentiable(_) => 2,
                _ => 1,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "aopt", about = "Locally A-optimal designs under GLMs", version)]
struct Cli {
    /// Worker threads for parallel sections (default: hardware count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// A-optimal weights on a finite candidate set (lift-one algorithm).
    Liftone(LiftoneArgs),
    /// A-optimal design over a mixed continuous/discrete space (ForLion).
    Forlion(ForlionArgs),
    /// Round an approximate design to an exact n-unit allocation.
    Round(RoundArgs),
    /// Check the equivalence-theorem certificate of a design on a dense grid.
    Verify(VerifyArgs),
    /// Stratified-sampling simulation study with GLM refitting.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct LiftoneArgs {
    /// Problem spec JSON (finite-candidate mode).
    #[arg(long)]
    spec: PathBuf,
    /// Write the design JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative per-sweep improvement threshold.
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    /// Initial allocation: uniform or random (exponential weights).
    #[arg(long, default_value = "uniform")]
    init: String,
    /// Seed for the sweep order and random initializer (falls back to AOPT_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ForlionArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Merge threshold for nearby support points.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Lift-one convergence threshold inside the loop.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Random starts per discrete combination in the new-point search.
    #[arg(long, default_value_t = 5)]
    multistart: usize,
    #[arg(long, default_value_t = 500)]
    max_outer: usize,
}

#[derive(Args)]
struct RoundArgs {
    /// Design JSON emitted by liftone or forlion.
    #[arg(long)]
    design: PathBuf,
    /// Total number of experimental units.
    #[arg(long)]
    n: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    design: PathBuf,
    /// Problem spec providing the design space.
    #[arg(long)]
    spec: PathBuf,
    /// Grid points per continuous factor.
    #[arg(long, default_value_t = 101)]
    grid: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    study: PathBuf,
    /// Override the replication count in the study file.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the per-replication CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the pool may already be initialized in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Liftone(args) => cmd_liftone(args),
        Command::Forlion(args) => cmd_forlion(args),
        Command::Round(args) => cmd_round(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::Io(format!("cannot read {}: {err}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|err| CliError::Schema(format!("{}: {err}", path.display())))
}

fn emit(out: &Option<PathBuf>, payload: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, payload)
            .map_err(|err| CliError::Io(format!("cannot write {}: {err}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(payload.as_bytes())
                .and_then(|()| stdout.write_all(b"\n"))
                .map_err(|err| CliError::Io(err.to_string()))
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("AOPT_SEED")
            .ok()
            .and_then(|value| value.parse().ok())
    })
    .unwrap_or(0)
}

/// Candidate points for the finite-set solver: explicit candidates, or the
/// full combination grid when every factor is discrete.
fn candidate_points(spec: &ProblemSpec) -> Result<Vec<Vec<f64>>, CliError> {
    if let Some(candidates) = &spec.candidates {
        return Ok(candidates.clone());
    }
    if let Some(space_spec) = &spec.space {
        let space = build_space(space_spec)?;
        if space.s() == 0 {
            return Ok(space.discrete_combinations());
        }
        return Err(CliError::Schema(
            "liftone needs 'candidates' (or an all-discrete 'space'); for continuous factors use the forlion command".into(),
        ));
    }
    Err(CliError::Schema(
        "spec provides neither 'candidates' nor 'space'".into(),
    ))
}

fn cmd_liftone(args: LiftoneArgs) -> Result<(), CliError> {
    let spec: ProblemSpec = read_json(&args.spec)?;
    let model = build_model(&spec.model, &spec.predictor)?;
    let points = candidate_points(&spec)?;
    if let Some(space_spec) = &spec.space {
        let space = build_space(space_spec)?;
        for x in &points {
            if !space.contains(x) {
                return Err(CliError::Schema(format!(
                    "candidate {x:?} lies outside the design space"
                )));
            }
        }
    }
    let seed = resolve_seed(args.seed);
    let init = match args.init.as_str() {
        "uniform" => LiftOneInit::Uniform,
        "random" => LiftOneInit::RandomExponential(seed),
        other => {
            return Err(CliError::Schema(format!(
                "--init '{other}' is not 'uniform' or 'random'"
            )))
        }
    };
    let result = liftone_optimize_with_seed(&model, &points, init, args.epsilon, seed)?;
    let document = DesignDocument {
        model: spec.model,
        predictor: spec.predictor,
        points: result.design.points().to_vec(),
        weights: result.design.weights().to_vec(),
        h: result.h,
        certified: result.certified,
        iterations: result.sweeps,
        seed: result.seed,
        method: match result.method {
            SolveMethod::LiftOne => "liftone",
            SolveMethod::Saturated => "saturated",
            SolveMethod::ArgmaxPoint => "argmax_point",
        }
        .to_string(),
    };
    emit(&args.out, &to_json(&document)?)
}

fn cmd_forlion(args: ForlionArgs) -> Result<(), CliError> {
    let spec: ProblemSpec = read_json(&args.spec)?;
    let model = build_model(&spec.model, &spec.predictor)?;
    let space_spec = spec
        .space
        .as_ref()
        .ok_or_else(|| CliError::Schema("forlion requires a 'space' section".into()))?;
    let space = build_space(space_spec)?;
    let config = ForlionConfig {
        delta: args.delta,
        epsilon: args.epsilon,
        multistart: args.multistart,
        max_outer: args.max_outer,
        seed: resolve_seed(args.seed),
        ..ForlionConfig::default()
    };
    let result = forlion_optimize(&model, &space, &config)?;
    if result.support_warning {
        eprintln!(
            "warning: {} support points exceed the p(p+1)/2 bound satisfied by some optimum",
            result.design.m()
        );
    }
    if result.large_grid_warning {
        eprintln!("warning: discrete grid has more than 10000 combinations; the search is exhaustive");
    }
    if let Some(path) = &args.trace {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|err| CliError::Io(format!("cannot write {}: {err}", path.display())))?;
        writer
            .write_record(["iter", "h", "m_t", "phi_star", "alpha_t"])
            .and_then(|()| {
                result.trace.iter().try_for_each(|row| {
                    writer.write_record([
                        row.iter.to_string(),
                        row.h.to_string(),
                        row.m.to_string(),
                        row.phi_star.to_string(),
                        row.alpha.map(|a| a.to_string()).unwrap_or_default(),
                    ])
                })
            })
            .map_err(|err| CliError::Io(err.to_string()))?;
    }
    let document = DesignDocument {
        model: spec.model.clone(),
        predictor: spec.predictor.clone(),
        points: result.design.points().to_vec(),
        weights: result.design.weights().to_vec(),
        h: result.h,
        certified: result.certified,
        iterations: result.outer_iterations,
        seed: result.seed,
        method: "forlion".to_string(),
    };
    emit(&args.out, &to_json(&document)?)
}

fn design_from_document(document: &DesignDocument) -> Result<(GlmModel, ApproximateDesign), CliError> {
    let model = build_model(&document.model, &document.predictor)?;
    let design = ApproximateDesign::new(document.points.clone(), document.weights.clone())?;
    Ok((model, design))
}

fn cmd_round(args: RoundArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Schema("--n must be a positive integer".into()));
    }
    let document: DesignDocument = read_json(&args.design)?;
    let (model, design) = design_from_document(&document)?;
    let result = round_allocation(&model, &design, args.n)?;
    let exact = ExactDocument {
        model: document.model,
        predictor: document.predictor,
        points: result.design.points().to_vec(),
        counts: result.design.counts().to_vec(),
        n: result.design.n(),
    };
    emit(&args.out, &to_json(&exact)?)
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let document: DesignDocument = read_json(&args.design)?;
    let spec: ProblemSpec = read_json(&args.spec)?;
    let space_spec = spec
        .space
        .as_ref()
        .ok_or_else(|| CliError::Schema("verify requires a spec with a 'space' section".into()))?;
    let space = build_space(space_spec)?;
    let (model, design) = design_from_document(&document)?;
    let report = verify_design(&model, &design, &space, args.grid, true)?;
    let document = VerifyDocument {
        max_phi: report.max_phi,
        argmax: report.argmax,
        trace_inverse: report.trace_inverse,
        slack: report.slack,
        certified: report.certified,
    };
    emit(&None, &to_json(&document)?)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec: StudySpec = read_json(&args.study)?;
    let model = build_model(&spec.model, &spec.predictor)?;
    if spec.population.points.len() != spec.population.sizes.len() {
        return Err(CliError::Schema(
            "population.points and population.sizes differ in length".into(),
        ));
    }
    let strata: Vec<(Vec<f64>, u64)> = spec
        .population
        .points
        .iter()
        .cloned()
        .zip(spec.population.sizes.iter().cloned())
        .collect();
    let reps = args.reps.or(spec.reps).unwrap_or(100);
    let seed = args.seed.or(spec.seed).unwrap_or_else(|| resolve_seed(None));

    let mut samplers = Vec::new();
    for sampler in &spec.samplers {
        let (name, kind) = match sampler {
            SamplerJson::Srswor { name } => (
                name.clone().unwrap_or_else(|| "srswor".into()),
                SamplerKind::Srswor,
            ),
            SamplerJson::Proportional { name } => (
                name.clone().unwrap_or_else(|| "proportional".into()),
                SamplerKind::Stratified(proportional_allocation(
                    &spec.population.sizes,
                    spec.n,
                )),
            ),
            SamplerJson::Uniform { name } => (
                name.clone().unwrap_or_else(|| "uniform".into()),
                SamplerKind::Stratified(uniform_allocation(
                    spec.population.sizes.len(),
                    spec.n,
                )),
            ),
            SamplerJson::Stratified { name, counts } => (
                name.clone().unwrap_or_else(|| "stratified".into()),
                SamplerKind::Stratified(counts.clone()),
            ),
            SamplerJson::AOptimal { name } => {
                let lifted = liftone_optimize_with_seed(
                    &model,
                    &spec.population.points,
                    LiftOneInit::Uniform,
                    1e-10,
                    seed,
                )?;
                let rounded = round_allocation(&model, &lifted.design, spec.n)?;
                (
                    name.clone().unwrap_or_else(|| "a_optimal".into()),
                    SamplerKind::Stratified(rounded.design.counts().to_vec()),
                )
            }
        };
        samplers.push(SamplerSpec { name, kind });
    }

    let records = run_study(&model, &strata, &samplers, spec.n, reps, seed)?;
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer
            .write_record(["replication", "sampler", "rmse_b0", "rmse_rest", "ce"])
            .and_then(|()| {
                records.iter().try_for_each(|record| {
                    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    writer.write_record([
                        record.replication.to_string(),
                        record.sampler.clone(),
                        opt(record.rmse_b0),
                        opt(record.rmse_rest),
                        opt(record.ce),
                    ])
                })
            })
            .and_then(|()| writer.flush().map_err(csv::Error::from))
            .map_err(|err| CliError::Io(err.to_string()))?;
    }
    let csv_text = String::from_utf8(buffer).expect("csv output is utf-8");
    match &args.out {
        Some(path) => fs::write(path, csv_text)
            .map_err(|err| CliError::Io(format!("cannot write {}: {err}", path.display()))),
        None => {
            print!("{csv_text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|err| CliError::Io(err.to_string()))
}
