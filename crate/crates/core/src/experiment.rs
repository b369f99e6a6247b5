//! Synthetic completion experiments: instance generation, seeded trials and
//! `(n, |Omega|)` phase sweeps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::completion::{relative_error, CompletionProblem, Reference, RingModel, SampleSet};
use crate::error::{arg_err, Error, Result};
use crate::optim::{minimize, Method, OptimConfig, StopReason, TraceRecord};
use crate::tensor::{DenseTensor, Shape};
use crate::tr::{tr_full_capped, utr_full, CoreDistribution, TrCores, TrRank, UtrCore, DEFAULT_FULL_CAP};

/// Mode sizes below this use the full tensor for the recovery error; larger
/// ones use the holdout samples.
pub const FULL_ERROR_MAX_N: usize = 150;

/// Default success threshold on the relative recovery error.
pub const DEFAULT_SUCCESS_TOL: f64 = 1e-4;

/// Default number of holdout entries drawn alongside the samples.
pub const DEFAULT_HOLDOUT: usize = 1000;

pub const THREADS_ENV: &str = "TRMAN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Tr,
    Utr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Count(usize),
    Rate(f64),
}

impl SampleSize {
    pub fn resolve(self, numel: usize) -> Result<usize> {
        let m = match self {
            SampleSize::Count(m) => m,
            SampleSize::Rate(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return arg_err(format!("sampling rate must lie in (0, 1], got {r}"));
                }
                (r * numel as f64).round() as usize
            }
        };
        if m == 0 {
            return arg_err("at least one sample is required");
        }
        if m > numel {
            return arg_err(format!("{m} samples requested but the tensor has {numel} entries"));
        }
        Ok(m)
    }
}

/// Ground truth of an instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Tr(TrCores),
    Utr(UtrCore),
}

impl Truth {
    pub fn shape(&self) -> Shape {
        match self {
            Truth::Tr(u) => u.shape(),
            Truth::Utr(c) => c.shape(),
        }
    }

    pub fn full_tensor(&self) -> Result<DenseTensor> {
        match self {
            Truth::Tr(u) => tr_full_capped(u, DEFAULT_FULL_CAP),
            Truth::Utr(c) => utr_full(c),
        }
    }

    /// Values at the given indices.
    fn values(&self, indices: &[Vec<usize>]) -> Result<Vec<f64>> {
        let shape = self.shape();
        let set = SampleSet::new(shape, indices.to_vec(), vec![0.0; indices.len()])?;
        let vals = match self {
            Truth::Tr(u) => u.sampled_values(&set),
            Truth::Utr(c) => c.sampled_values(&set),
        };
        // `set` is sorted; map back to the caller's order
        let mut out = vec![0.0; indices.len()];
        let mut order: Vec<usize> = (0..indices.len()).collect();
        order.sort_by(|&a, &b| indices[a].cmp(&indices[b]));
        for (pos, &orig) in order.iter().enumerate() {
            out[orig] = vals[pos];
        }
        Ok(out)
    }
}

/// Parameters of a synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub mode: Mode,
    pub shape: Shape,
    /// For uTR all entries must be equal.
    pub rank: TrRank,
    pub samples: SampleSize,
    pub holdout: usize,
    /// Entry distribution of the ground-truth cores.
    pub distribution: CoreDistribution,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.order() != self.rank.len() {
            return arg_err(format!("shape has order {} but rank has {} entries", self.shape.order(), self.rank.len()));
        }
        if self.mode == Mode::Utr {
            let n = self.shape.dim(0);
            if self.shape.dims().iter().any(|&m| m != n) {
                return arg_err("uniform tensor rings need equal mode sizes");
            }
            let r = self.rank.get(0);
            if self.rank.as_slice().iter().any(|&q| q != r) {
                return arg_err("uniform tensor rings need equal bond dimensions");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub truth: Truth,
    pub samples: SampleSet,
    pub holdout: Option<SampleSet>,
}

impl Instance {
    /// The completion problem on the training samples with ridge weight `lambda`.
    pub fn problem(&self, lambda: f64) -> Result<CompletionProblem> {
        let problem = CompletionProblem { samples: self.samples.clone(), holdout: self.holdout.clone(), lambda: 0.0 };
        problem.with_lambda(lambda)
    }
}

/// Ground truth with random cores, and samples plus holdout drawn
/// uniformly without replacement from the full index grid.
pub fn generate_instance(spec: &InstanceSpec, rng: &mut impl Rng) -> Result<Instance> {
    spec.validate()?;
    let numel = spec.shape.numel();
    let m = spec.samples.resolve(numel)?;
    let truth = match spec.mode {
        Mode::Tr => Truth::Tr(TrCores::random_with(&spec.shape, &spec.rank, rng, spec.distribution)?),
        Mode::Utr => Truth::Utr(UtrCore::random_with(
            spec.rank.get(0),
            spec.shape.dim(0),
            spec.shape.order(),
            rng,
            spec.distribution,
        )?),
    };
    let h = spec.holdout.min(numel - m);
    let picks: Vec<Vec<usize>> =
        rand::seq::index::sample(rng, numel, m + h).into_iter().map(|o| spec.shape.multi_index(o)).collect();
    let (train, rest) = picks.split_at(m);
    let samples = SampleSet::new(spec.shape.clone(), train.to_vec(), truth.values(train)?)?;
    let holdout = if h > 0 {
        Some(SampleSet::new(spec.shape.clone(), rest.to_vec(), truth.values(rest)?)?)
    } else {
        None
    };
    Ok(Instance { truth, samples, holdout })
}

/// `model` rescaled so that its sampled values have the RMS of the
/// observed data; each of the `d` cores takes the factor `c^{1/d}`.
fn rms_match<M: RingModel>(model: &M, samples: &SampleSet, scale: impl FnOnce(f64) -> M) -> M {
    let vals = model.sampled_values(samples);
    let model_sq: f64 = vals.iter().map(|v| v * v).sum();
    let data_sq = samples.sq_norm();
    if model_sq > 0.0 && data_sq > 0.0 {
        let c = (data_sq / model_sq).sqrt();
        scale(c.powf(1.0 / samples.shape().order() as f64))
    } else {
        model.clone()
    }
}

/// Uniform `[0, 1]` TR cores scaled to the data's RMS.
pub fn init_tr(shape: &Shape, rank: &TrRank, samples: &SampleSet, rng: &mut impl Rng) -> Result<TrCores> {
    let u = TrCores::random_with(shape, rank, rng, CoreDistribution::Uniform)?;
    Ok(rms_match(&u, samples, |f| {
        let mut v = u.clone();
        v.scale_cores(f);
        v
    }))
}

/// Uniform `[0, 1]` uTR core scaled to the data's RMS.
pub fn init_utr(r: usize, shape: &Shape, samples: &SampleSet, rng: &mut impl Rng) -> Result<UtrCore> {
    let c = UtrCore::random_with(r, shape.dim(0), shape.order(), rng, CoreDistribution::Uniform)?;
    Ok(rms_match(&c, samples, |f| {
        let mut v = c.clone();
        for x in v.core_mut().data_mut() {
            *x *= f;
        }
        v
    }))
}

/// Result of one seeded completion run.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub final_err: f64,
    pub success: bool,
    pub iterations: usize,
    pub time_s: f64,
    pub stop_reason: StopReason,
    pub trace: TraceRecord,
}

/// Recovery error of a model: full tensor when the mode sizes are small,
/// holdout otherwise.
pub fn recovery_error<M: RingModel>(model: &M, instance: &Instance, full: Option<&DenseTensor>) -> Result<f64> {
    match (full, &instance.holdout) {
        (Some(a), _) => relative_error(model, Reference::Full(a)),
        (None, Some(h)) => relative_error(model, Reference::Samples(h)),
        (None, None) => arg_err("no reference for the recovery error"),
    }
}

fn uses_full_error(shape: &Shape) -> bool {
    shape.dims().iter().all(|&n| n < FULL_ERROR_MAX_N)
}

/// Solver settings shared by the trials of an experiment.
#[derive(Debug, Clone)]
pub struct SolverSpec {
    pub mode: Mode,
    pub rank: TrRank,
    pub method: Method,
    pub optim: OptimConfig,
    pub lambda: f64,
    pub success_tol: f64,
}

/// Solves `instance` from a seeded RMS-matched random start.
pub fn run_trial(instance: &Instance, solver: &SolverSpec, rng: &mut impl Rng) -> Result<TrialOutcome> {
    let shape = instance.samples.shape().clone();
    let full = if uses_full_error(&shape) { Some(instance.truth.full_tensor()?) } else { None };
    let problem = instance.problem(solver.lambda)?;
    let (rank, method, cfg, success_tol) = (&solver.rank, solver.method, &solver.optim, solver.success_tol);
    let start = Instant::now();
    let (final_err, trace) = match solver.mode {
        Mode::Tr => {
            let u0 = init_tr(&shape, rank, &instance.samples, rng)?;
            let out = minimize(u0, &problem, cfg, method, |_, _| {})?;
            (recovery_error(&out.model, instance, full.as_ref())?, out.trace)
        }
        Mode::Utr => {
            let r = rank.get(0);
            if rank.as_slice().iter().any(|&q| q != r) {
                return arg_err("uTR solver needs equal bond dimensions");
            }
            let c0 = init_utr(r, &shape, &instance.samples, rng)?;
            let out = minimize(c0, &problem, cfg, method, |_, _| {})?;
            (recovery_error(&out.model, instance, full.as_ref())?, out.trace)
        }
    };
    Ok(TrialOutcome {
        final_err,
        success: final_err <= success_tol,
        iterations: trace.iterations(),
        time_s: start.elapsed().as_secs_f64(),
        stop_reason: trace.stop_reason,
        trace,
    })
}

/// An `(n, |Omega|)` phase sweep.
#[derive(Debug, Clone)]
pub struct PhaseConfig {
    pub truth_mode: Mode,
    pub solver_mode: Mode,
    pub order: usize,
    pub rank: usize,
    pub n_grid: Vec<usize>,
    pub omega_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub method: Method,
    pub optim: OptimConfig,
    pub lambda: f64,
    pub success_tol: f64,
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCell {
    pub n: usize,
    pub omega: usize,
    pub success_rate: f64,
    pub mean_final_err: f64,
    pub mean_iters: f64,
    pub mean_time_s: f64,
}

pub const PHASE_HEADER: [&str; 6] = ["n", "omega", "success_rate", "mean_final_err", "mean_iters", "mean_time_s"];

/// Writes phase rows as CSV; `zero_time` writes the timing column as 0.
pub fn write_phase_csv<W: std::io::Write>(cells: &[PhaseCell], out: W, zero_time: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PHASE_HEADER)?;
    for c in cells {
        let time = if zero_time { 0.0 } else { c.mean_time_s };
        w.write_record([
            c.n.to_string(),
            c.omega.to_string(),
            c.success_rate.to_string(),
            c.mean_final_err.to_string(),
            c.mean_iters.to_string(),
            time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Thread pool sized by `TRMAN_THREADS` when set, else rayon's default.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::Argument(format!("{THREADS_ENV}={v} is not a count")))?;
        if n == 0 {
            return arg_err(format!("{THREADS_ENV} must be positive"));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Resource(e.to_string()))
}

/// Runs every cell of the grid (n-major, then |Omega|). Cell `c` draws its
/// trial seeds from `seed + c`, so results do not depend on scheduling.
pub fn phase_sweep(cfg: &PhaseConfig) -> Result<Vec<PhaseCell>> {
    if cfg.n_grid.is_empty() || cfg.omega_grid.is_empty() {
        return arg_err("phase grids must be non-empty");
    }
    if cfg.trials == 0 {
        return arg_err("at least one trial per cell is required");
    }
    cfg.optim.validate()?;
    let rank = TrRank::uniform(cfg.rank, cfg.order)?;
    let solver = SolverSpec {
        mode: cfg.solver_mode,
        rank: rank.clone(),
        method: cfg.method,
        optim: cfg.optim.clone(),
        lambda: cfg.lambda,
        success_tol: cfg.success_tol,
    };
    let cells: Vec<(usize, usize)> =
        cfg.n_grid.iter().flat_map(|&n| cfg.omega_grid.iter().map(move |&m| (n, m))).collect();
    for &(n, m) in &cells {
        let numel = Shape::cube(n, cfg.order)?.numel();
        if m > numel {
            return arg_err(format!("|Omega| = {m} exceeds the {numel} entries at n = {n}"));
        }
    }
    let jobs: Vec<(usize, usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, _)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(c as u64));
            (0..cfg.trials).map(move |t| (c, t, rng.random::<u64>())).collect::<Vec<_>>()
        })
        .collect();

    let pool = worker_pool()?;
    let outcomes: Vec<Result<TrialOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, _, trial_seed)| {
                let (n, m) = cells[c];
                let spec = InstanceSpec {
                    mode: cfg.truth_mode,
                    shape: Shape::cube(n, cfg.order)?,
                    rank: rank.clone(),
                    samples: SampleSize::Count(m),
                    holdout: cfg.holdout,
                    distribution: CoreDistribution::Uniform,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                let instance = generate_instance(&spec, &mut rng)?;
                run_trial(&instance, &solver, &mut rng)
            })
            .collect()
    });

    let mut out = Vec::with_capacity(cells.len());
    let mut it = outcomes.into_iter();
    for &(n, m) in &cells {
        let trials = (0..cfg.trials).map(|_| it.next().unwrap()).collect::<Result<Vec<_>>>()?;
        let k = trials.len() as f64;
        out.push(PhaseCell {
            n,
            omega: m,
            success_rate: trials.iter().filter(|t| t.success).count() as f64 / k,
            mean_final_err: trials.iter().map(|t| t.final_err).sum::<f64>() / k,
            mean_iters: trials.iter().map(|t| t.iterations as f64).sum::<f64>() / k,
            mean_time_s: trials.iter().map(|t| t.time_s).sum::<f64>() / k,
        });
    }
    Ok(out)
}

/// Smallest |Omega| in each n-row whose success rate reaches `level`.
pub fn success_frontier(cells: &[PhaseCell], level: f64) -> Vec<(usize, Option<usize>)> {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let m = cells.iter().filter(|c| c.n == n && c.success_rate >= level).map(|c| c.omega).min();
            (n, m)
        })
        .collect()
}

/// Number of adjacent decreases of the success rate along each n-row.
pub fn monotonicity_violations(cells: &[PhaseCell]) -> Vec<(usize, usize)> {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let mut row: Vec<&PhaseCell> = cells.iter().filter(|c| c.n == n).collect();
            row.sort_by_key(|c| c.omega);
            (n, row.windows(2).filter(|w| w[1].success_rate < w[0].success_rate).count())
        })
        .collect()
}
