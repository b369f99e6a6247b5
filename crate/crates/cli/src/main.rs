//! `trman`: generate synthetic tensor ring instances, complete them from
//! samples, and sweep recovery phase diagrams.
//!
//! Every numerical default below (stepsize rule, iteration budget, tolerances,
//! success threshold) is a choice of this tool and is printed in `--help`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use trman_core::completion::{objective, relative_error, CompletionProblem, Reference, RingModel};
use trman_core::experiment::{
    generate_instance, init_tr, init_utr, phase_sweep, write_phase_csv, InstanceSpec, Mode, PhaseConfig, SampleSize,
    Truth, DEFAULT_HOLDOUT, FULL_ERROR_MAX_N,
};
use trman_core::io;
use trman_core::optim::{minimize, BetaRule, Method, OptimConfig, OptimResult, StopReason};
use trman_core::{CoreDistribution, Error, SampleSet, Shape, TrRank};

/// Process exit status with a message for stderr.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

const EXIT_ARGUMENT: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_OPTIMIZER: u8 = 4;
const EXIT_OUTPUT: u8 = 1;

impl Failure {
    fn argument(msg: impl Into<String>) -> Self {
        Self { code: EXIT_ARGUMENT, msg: msg.into() }
    }

    fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_INPUT, msg: format!("{}: {e}", path.display()) }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_OUTPUT, msg: format!("{}: {e}", path.display()) }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) | Error::Resource(_) => EXIT_ARGUMENT,
            Error::Parse { .. } => EXIT_INPUT,
            Error::Io(_) | Error::Csv(_) => EXIT_OUTPUT,
        };
        Self { code, msg: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(
    name = "trman",
    version,
    about = "Tensor ring completion on the quotient manifold",
    after_help = "Stepsizes come from Armijo backtracking (factor 0.5, c1 = 1e-4, at most 40 halvings) \
                  seeded by the exact step of the linearized residual. All numerical defaults are \
                  choices of this tool. TRMAN_THREADS caps the worker pool of `phase`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random ground truth and a uniform sample set from it.
    Generate(GenerateArgs),
    /// Complete a tensor from a sample file.
    Complete(CompleteArgs),
    /// Sweep success rates over a grid of mode sizes and sample counts.
    Phase(PhaseArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Tr,
    Utr,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tr => Mode::Tr,
            ModeArg::Utr => Mode::Utr,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum OptimizerArg {
    Rgd,
    Rcg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
enum BetaArg {
    #[value(name = "pr+")]
    #[serde(rename = "pr+")]
    PrPlus,
    #[value(name = "fr")]
    #[serde(rename = "fr")]
    Fr,
    #[value(name = "none")]
    #[serde(rename = "none")]
    None,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum DistributionArg {
    Uniform,
    Gaussian,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum InitArg {
    Random,
    Truth,
}

/// Optimizer settings shared by `complete` and `phase`.
#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "rcg")]
    optimizer: OptimizerArg,
    /// Conjugate-gradient weight rule (ignored by rgd).
    #[arg(long, value_enum, default_value = "pr+")]
    beta: BetaArg,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Stop when ||grad|| / max(1, ||grad_0||) falls below this.
    #[arg(long, default_value = "1e-8")]
    grad_tol: f64,
    /// Stop when the objective improves by less than this relative amount over 5 iterations.
    #[arg(long, default_value = "1e-14")]
    rel_change_tol: f64,
    /// Weight of the ridge term (lambda/2)||U||^2.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Relative recovery error counted as success.
    #[arg(long, default_value = "1e-4")]
    success_tol: f64,
}

impl SolverArgs {
    fn method(&self) -> Method {
        match self.optimizer {
            OptimizerArg::Rgd => Method::Rgd,
            OptimizerArg::Rcg => Method::Rcg,
        }
    }

    fn optim_config(&self) -> CliResult<OptimConfig> {
        let beta_rule = match self.beta {
            BetaArg::PrPlus => BetaRule::PolakRibierePlus,
            BetaArg::Fr => BetaRule::FletcherReeves,
            BetaArg::None => BetaRule::None,
        };
        let cfg = OptimConfig {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            rel_change_tol: self.rel_change_tol,
            beta_rule,
            ..OptimConfig::default()
        };
        cfg.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Failure::argument(format!("--lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        if !(self.success_tol > 0.0) {
            return Err(Failure::argument("--success-tol must be positive"));
        }
        Ok(cfg)
    }

    fn record(&self) -> SolverRecord {
        SolverRecord {
            optimizer: self.optimizer,
            beta: self.beta,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            rel_change_tol: self.rel_change_tol,
            lambda: self.lambda,
            success_tol: self.success_tol,
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "tr")]
    mode: ModeArg,
    /// Mode sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    /// Bond dimensions, comma separated and cyclic (r_{d+1} = r_1).
    #[arg(long, value_delimiter = ',', required = true)]
    rank: Vec<usize>,
    /// Fraction of entries to sample.
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    rate: Option<f64>,
    /// Number of entries to sample.
    #[arg(long)]
    samples: Option<usize>,
    /// Holdout entries drawn disjointly from the samples (capped by what remains).
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    holdout: usize,
    /// Entry distribution of the truth cores: uniform on [0, 1] or standard normal.
    #[arg(long, value_enum, default_value = "uniform")]
    distribution: DistributionArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[arg(long, value_enum, default_value = "tr")]
    mode: ModeArg,
    /// Observed entries in coordinate format.
    #[arg(long)]
    sample_file: PathBuf,
    /// Held-out entries in coordinate format, used for the holdout error column.
    #[arg(long)]
    holdout_file: Option<PathBuf>,
    /// Ground-truth cores, for the recovery error and `--init truth`.
    #[arg(long)]
    truth_file: Option<PathBuf>,
    /// Bond dimensions of the model (taken from the truth file when omitted).
    #[arg(long, value_delimiter = ',')]
    rank: Option<Vec<usize>>,
    /// Random cores are uniform on [0, 1], scaled to the RMS of the samples.
    #[arg(long, value_enum, default_value = "random")]
    init: InitArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write 0 in the timing column so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PhaseArgs {
    /// Model fitted by the solver.
    #[arg(long, value_enum, default_value = "tr")]
    mode: ModeArg,
    /// Model of the ground truth (defaults to --mode).
    #[arg(long, value_enum)]
    truth_mode: Option<ModeArg>,
    /// Uniform bond dimensions; the number of entries sets the tensor order.
    #[arg(long, value_delimiter = ',', default_value = "2,2,2")]
    rank: Vec<usize>,
    /// Mode sizes n, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n_grid: Vec<usize>,
    /// Sample counts |Omega|, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    omega_grid: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Holdout entries per trial, used only when some mode size is at least 150.
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    holdout: usize,
    /// Base seed; cell c uses seed + c.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write 0 in the timing column so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SolverRecord {
    optimizer: OptimizerArg,
    beta: BetaArg,
    max_iters: usize,
    grad_tol: f64,
    rel_change_tol: f64,
    lambda: f64,
    success_tol: f64,
}

#[derive(Serialize)]
struct GenerateManifest {
    command: &'static str,
    mode: ModeArg,
    dims: Vec<usize>,
    rank: Vec<usize>,
    rate: Option<f64>,
    samples: usize,
    holdout: usize,
    distribution: DistributionArg,
    seed: u64,
    truth_file: &'static str,
    sample_file: &'static str,
    holdout_file: Option<&'static str>,
}

#[derive(Serialize)]
struct CompleteSummary {
    command: &'static str,
    mode: ModeArg,
    init: InitArg,
    seed: u64,
    solver: SolverRecord,
    iterations: usize,
    stop_reason: String,
    objective: f64,
    train_rel_err: f64,
    holdout_rel_err: Option<f64>,
    recovery_rel_err: Option<f64>,
    success: Option<bool>,
    injective_at_start: bool,
    injective_at_end: bool,
    deficient_projections: usize,
}

#[derive(Serialize)]
struct PhaseManifest {
    command: &'static str,
    mode: ModeArg,
    truth_mode: ModeArg,
    rank: Vec<usize>,
    n_grid: Vec<usize>,
    omega_grid: Vec<usize>,
    trials: usize,
    holdout: usize,
    seed: u64,
    solver: SolverRecord,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Complete(a) => cmd_complete(&a),
        Command::Phase(a) => cmd_phase(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("trman: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn create_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::output(dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> trman_core::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Failure::output(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| match e {
        Error::Io(_) | Error::Csv(_) => Failure::output(path, e),
        other => other.into(),
    })?;
    w.flush().map_err(|e| Failure::output(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    })
}

fn read_file<T>(path: &Path, parse: impl FnOnce(BufReader<File>) -> trman_core::Result<T>) -> CliResult<T> {
    let file = File::open(path).map_err(|e| Failure::input(path, e))?;
    parse(BufReader::new(file)).map_err(|e| match e {
        Error::Argument(_) | Error::Resource(_) => e.into(),
        other => Failure::input(path, other),
    })
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let shape = Shape::new(a.dims.clone())?;
    let rank = TrRank::new(a.rank.clone())?;
    let samples = match (a.rate, a.samples) {
        (Some(r), None) => SampleSize::Rate(r),
        (None, Some(m)) => SampleSize::Count(m),
        _ => return Err(Failure::argument("exactly one of --rate and --samples is required")),
    };
    let distribution = match a.distribution {
        DistributionArg::Uniform => CoreDistribution::Uniform,
        DistributionArg::Gaussian => CoreDistribution::Gaussian,
    };
    let spec = InstanceSpec { mode: a.mode.into(), shape, rank, samples, holdout: a.holdout, distribution };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let inst = generate_instance(&spec, &mut rng)?;

    create_out_dir(&a.out)?;
    write_file(&a.out.join("truth.txt"), |w| match &inst.truth {
        Truth::Tr(u) => io::write_cores(w, u),
        Truth::Utr(c) => io::write_utr_core(w, c),
    })?;
    write_file(&a.out.join("samples.txt"), |w| io::write_sample_set(w, &inst.samples))?;
    let holdout_file = match &inst.holdout {
        Some(h) => {
            write_file(&a.out.join("holdout.txt"), |w| io::write_sample_set(w, h))?;
            Some("holdout.txt")
        }
        None => None,
    };
    let manifest = GenerateManifest {
        command: "generate",
        mode: a.mode,
        dims: a.dims.clone(),
        rank: a.rank.clone(),
        rate: a.rate,
        samples: inst.samples.len(),
        holdout: inst.holdout.as_ref().map_or(0, SampleSet::len),
        distribution: a.distribution,
        seed: a.seed,
        truth_file: "truth.txt",
        sample_file: "samples.txt",
        holdout_file,
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "generated {} samples and {} holdout entries in {}",
        manifest.samples,
        manifest.holdout,
        a.out.display()
    );
    Ok(())
}

/// Loaded inputs of a completion run.
struct CompleteInputs {
    problem: CompletionProblem,
    truth: Option<Truth>,
}

fn load_complete_inputs(a: &CompleteArgs) -> CliResult<CompleteInputs> {
    let samples = read_file(&a.sample_file, io::read_sample_set)?;
    let shape = samples.shape().clone();
    let mut problem = CompletionProblem::new(samples);
    if let Some(path) = &a.holdout_file {
        let holdout = read_file(path, io::read_sample_set)?;
        if holdout.shape() != &shape {
            return Err(Failure::input(path, "holdout shape differs from the sample shape"));
        }
        problem = problem.with_holdout(holdout)?;
    }
    let problem = problem.with_lambda(a.solver.lambda)?;
    let truth = match &a.truth_file {
        None => None,
        Some(path) => {
            let truth = match a.mode {
                ModeArg::Tr => Truth::Tr(read_file(path, io::read_cores)?),
                ModeArg::Utr => Truth::Utr(read_file(path, |r| io::read_utr_core(r, shape.order()))?),
            };
            if truth.shape() != shape {
                return Err(Failure::input(path, "truth shape differs from the sample shape"));
            }
            Some(truth)
        }
    };
    Ok(CompleteInputs { problem, truth })
}

fn model_rank(a: &CompleteArgs, truth: Option<&Truth>, order: usize) -> CliResult<TrRank> {
    let rank = match (&a.rank, truth) {
        (Some(r), _) => TrRank::new(r.clone())?,
        (None, Some(Truth::Tr(u))) => u.rank(),
        (None, Some(Truth::Utr(c))) => TrRank::uniform(c.bond(), order)?,
        (None, None) => return Err(Failure::argument("--rank is required without --truth-file")),
    };
    if a.mode == ModeArg::Utr && rank.len() == 1 {
        return Ok(TrRank::uniform(rank.get(0), order)?);
    }
    if rank.len() != order {
        return Err(Failure::argument(format!("--rank has {} entries but the samples have order {order}", rank.len())));
    }
    if a.mode == ModeArg::Utr && rank.as_slice().iter().any(|&q| q != rank.get(0)) {
        return Err(Failure::argument("uniform tensor rings need equal bond dimensions"));
    }
    Ok(rank)
}

/// Relative error against the truth: full tensor when every mode size is
/// below the full-error cutoff, holdout otherwise.
fn recovery_error<M: RingModel>(model: &M, truth: Option<&Truth>, p: &CompletionProblem) -> CliResult<Option<f64>> {
    let small = p.shape().dims().iter().all(|&n| n < FULL_ERROR_MAX_N);
    match (truth, &p.holdout) {
        (Some(t), _) if small => Ok(Some(relative_error(model, Reference::Full(&t.full_tensor()?))?)),
        (_, Some(h)) => Ok(Some(relative_error(model, Reference::Samples(h))?)),
        _ => Ok(None),
    }
}

fn cmd_complete(a: &CompleteArgs) -> CliResult<()> {
    let cfg = a.solver.optim_config()?;
    let inputs = load_complete_inputs(a)?;
    let shape = inputs.problem.shape().clone();
    let rank = model_rank(a, inputs.truth.as_ref(), shape.order())?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let p = &inputs.problem;
    let method = a.solver.method();
    create_out_dir(&a.out)?;

    let (summary_fields, trace) = match a.mode {
        ModeArg::Tr => {
            let u0 = match (a.init, &inputs.truth) {
                (InitArg::Random, _) => init_tr(&shape, &rank, &p.samples, &mut rng)?,
                (InitArg::Truth, Some(Truth::Tr(u))) => u.clone(),
                _ => return Err(Failure::argument("--init truth needs --truth-file")),
            };
            if u0.rank() != rank {
                return Err(Failure::argument("--rank differs from the truth file's ranks"));
            }
            let out = minimize(u0, p, &cfg, method, |_, _| {})?;
            write_file(&a.out.join("cores.txt"), |w| io::write_cores(w, &out.model))?;
            finish(&out, inputs.truth.as_ref(), p)?
        }
        ModeArg::Utr => {
            let r = rank.get(0);
            let c0 = match (a.init, &inputs.truth) {
                (InitArg::Random, _) => init_utr(r, &shape, &p.samples, &mut rng)?,
                (InitArg::Truth, Some(Truth::Utr(c))) => c.clone(),
                _ => return Err(Failure::argument("--init truth needs --truth-file")),
            };
            if c0.bond() != r {
                return Err(Failure::argument("--rank differs from the truth file's bond dimension"));
            }
            let out = minimize(c0, p, &cfg, method, |_, _| {})?;
            write_file(&a.out.join("cores.txt"), |w| io::write_utr_core(w, &out.model))?;
            finish(&out, inputs.truth.as_ref(), p)?
        }
    };
    write_file(&a.out.join("trace.csv"), |w| trace.write_csv(w, a.deterministic))?;

    let (objective, recovery_rel_err) = summary_fields;
    let last = trace.last();
    let summary = CompleteSummary {
        command: "complete",
        mode: a.mode,
        init: a.init,
        seed: a.seed,
        solver: a.solver.record(),
        iterations: trace.iterations(),
        stop_reason: format!("{:?}", trace.stop_reason),
        objective,
        train_rel_err: last.train_rel_err,
        holdout_rel_err: last.holdout_rel_err,
        recovery_rel_err,
        success: recovery_rel_err.map(|e| e <= a.solver.success_tol),
        injective_at_start: trace.injective_at_start,
        injective_at_end: trace.injective_at_end,
        deficient_projections: trace.deficient_projections,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "{} iterations, stop: {}, train error {:.3e}{}",
        summary.iterations,
        summary.stop_reason,
        summary.train_rel_err,
        recovery_rel_err.map(|e| format!(", recovery error {e:.3e}")).unwrap_or_default()
    );
    if trace.stop_reason == StopReason::LineSearchFailed || !objective.is_finite() {
        return Err(Failure {
            code: EXIT_OPTIMIZER,
            msg: format!("optimizer failed after {} iterations ({})", summary.iterations, summary.stop_reason),
        });
    }
    Ok(())
}

type Finish = ((f64, Option<f64>), trman_core::optim::TraceRecord);

fn finish<M: RingModel>(out: &OptimResult<M>, truth: Option<&Truth>, p: &CompletionProblem) -> CliResult<Finish> {
    let err = recovery_error(&out.model, truth, p)?;
    Ok(((objective(p, &out.model), err), out.trace.clone()))
}

fn cmd_phase(a: &PhaseArgs) -> CliResult<()> {
    let optim = a.solver.optim_config()?;
    let r = *a.rank.first().ok_or_else(|| Failure::argument("--rank is empty"))?;
    if a.rank.iter().any(|&q| q != r) {
        return Err(Failure::argument("phase sweeps use equal bond dimensions"));
    }
    if a.trials == 0 {
        return Err(Failure::argument("--trials must be at least 1"));
    }
    if a.n_grid.is_empty() || a.omega_grid.is_empty() {
        return Err(Failure::argument("grids must be non-empty"));
    }
    let truth_mode = a.truth_mode.unwrap_or(a.mode);
    let cfg = PhaseConfig {
        truth_mode: truth_mode.into(),
        solver_mode: a.mode.into(),
        order: a.rank.len(),
        rank: r,
        n_grid: a.n_grid.clone(),
        omega_grid: a.omega_grid.clone(),
        trials: a.trials,
        seed: a.seed,
        method: a.solver.method(),
        optim,
        lambda: a.solver.lambda,
        success_tol: a.solver.success_tol,
        holdout: a.holdout,
    };
    let cells = phase_sweep(&cfg)?;
    create_out_dir(&a.out)?;
    write_file(&a.out.join("phase.csv"), |w| write_phase_csv(&cells, w, a.deterministic))?;
    let manifest = PhaseManifest {
        command: "phase",
        mode: a.mode,
        truth_mode,
        rank: a.rank.clone(),
        n_grid: a.n_grid.clone(),
        omega_grid: a.omega_grid.clone(),
        trials: a.trials,
        holdout: a.holdout,
        seed: a.seed,
        solver: a.solver.record(),
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    println!("{} cells written to {}", cells.len(), a.out.join("phase.csv").display());
    Ok(())
}
