//! Riemannian gradient descent and conjugate gradients for ring models.
//!
//! One loop serves both methods; RGD is RCG with the conjugacy weight fixed to
//! zero. In [`Geometry::Quotient`] the search direction and the vector
//! transport live in the horizontal space (transport is the horizontal
//! projection at the new point); [`Geometry::Total`] runs the same iteration
//! on the total space with the Euclidean gradient and identity transport.

use std::io::Write;
use std::time::Instant;

use crate::completion::{gradient_from_residuals, objective_from_residuals, CompletionProblem, Reference, RingModel};
use crate::error::{arg_err, Result};
use crate::geometry::TangentVector;
use crate::tensor::dot;
use crate::tr::DEFAULT_INJECTIVITY_TOL;

/// Restart threshold for the descent test `<eta, -g> > tol ||eta|| ||g||`.
const DESCENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaRule {
    #[default]
    PolakRibierePlus,
    FletcherReeves,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Geometry {
    #[default]
    Quotient,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rgd,
    Rcg,
}

/// How the stepsize of each iteration is chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum StepRule {
    #[default]
    Armijo,
    /// Fixed stepsizes, one per iteration (e.g. replayed from another run).
    /// The run stops with [`StopReason::MaxIterations`] when they run out.
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams {
    /// Multiplies the linearized exact step before backtracking.
    pub initial_scale: f64,
    pub backtrack: f64,
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self { initial_scale: 1.0, backtrack: 0.5, c1: 1e-4, max_backtracks: 40 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub max_iters: usize,
    /// Stop when `||g|| / max(1, ||g_0||) <= grad_tol`.
    pub grad_tol: f64,
    /// Stop when `f_{t-w} - f_t <= rel_change_tol * f_{t-w}` with `w = stall_window`.
    pub rel_change_tol: f64,
    pub stall_window: usize,
    pub beta_rule: BetaRule,
    pub armijo: ArmijoParams,
    pub geometry: Geometry,
    pub step_rule: StepRule,
    pub injectivity_tol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-8,
            rel_change_tol: 1e-14,
            stall_window: 5,
            beta_rule: BetaRule::default(),
            armijo: ArmijoParams::default(),
            geometry: Geometry::default(),
            step_rule: StepRule::default(),
            injectivity_tol: DEFAULT_INJECTIVITY_TOL,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        if !(self.grad_tol > 0.0) || !(self.rel_change_tol > 0.0) {
            return arg_err("tolerances must be positive");
        }
        if self.stall_window == 0 {
            return arg_err("stall window must be positive");
        }
        if !(a.backtrack > 0.0 && a.backtrack < 1.0) {
            return arg_err(format!("backtrack factor must lie in (0, 1), got {}", a.backtrack));
        }
        if !(a.c1 > 0.0 && a.c1 < 1.0) {
            return arg_err(format!("sufficient-decrease constant must lie in (0, 1), got {}", a.c1));
        }
        if !(a.initial_scale > 0.0) || !a.initial_scale.is_finite() {
            return arg_err("initial step scale must be positive");
        }
        if let StepRule::Schedule(s) = &self.step_rule {
            if s.iter().any(|v| !v.is_finite()) {
                return arg_err("scheduled stepsizes must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveStalled,
    MaxIterations,
    LineSearchFailed,
}

/// One accepted iterate. Row 0 describes the starting point (stepsize 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub stepsize: f64,
    pub backtracks: usize,
    pub train_rel_err: f64,
    pub holdout_rel_err: Option<f64>,
    pub wall_time_s: f64,
}

pub const TRACE_HEADER: [&str; 8] =
    ["iter", "objective", "grad_norm", "stepsize", "backtracks", "train_rel_err", "holdout_rel_err", "wall_time_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub rows: Vec<TraceRow>,
    pub stop_reason: StopReason,
    pub injective_at_start: bool,
    pub injective_at_end: bool,
    /// Number of horizontal projections whose linear system was rank deficient.
    pub deficient_projections: usize,
}

impl TraceRecord {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace has at least the initial row")
    }

    pub fn iterations(&self) -> usize {
        self.last().iter
    }

    /// Writes the rows as CSV. With `zero_time` the wall-clock column is
    /// written as 0 so that reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, out: W, zero_time: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.rows {
            let time = if zero_time { 0.0 } else { r.wall_time_s };
            w.write_record([
                r.iter.to_string(),
                r.objective.to_string(),
                r.grad_norm.to_string(),
                r.stepsize.to_string(),
                r.backtracks.to_string(),
                r.train_rel_err.to_string(),
                r.holdout_rel_err.map(|v| v.to_string()).unwrap_or_default(),
                time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult<M> {
    pub model: M,
    pub trace: TraceRecord,
}

/// Gradient of the completion objective under the Euclidean metric of the
/// total space. For gauge-invariant objectives it is horizontal, and it is
/// the horizontal lift of the quotient gradient.
pub fn riemannian_gradient<M: RingModel>(u: &M, p: &CompletionProblem) -> M::Tangent {
    let res = crate::completion::residuals(p, u);
    gradient_from_residuals(p, u, &res)
}

/// Outcome of one line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub stepsize: f64,
    pub backtracks: usize,
    pub success: bool,
}

/// Linearized exact step `-<g, eta> / (||J eta||^2 + lambda ||eta||^2)` where
/// `J` is the sampled differential; `None` when the denominator vanishes.
fn linearized_step<M: RingModel>(u: &M, p: &CompletionProblem, slope: f64, dir: &M::Tangent) -> Option<f64> {
    let jd = u.sampled_differential(&p.samples, dir);
    let mut denom = dot(&jd, &jd);
    if p.lambda > 0.0 {
        denom += p.lambda * dir.inner(dir);
    }
    (denom > 0.0 && denom.is_finite()).then(|| -slope / denom)
}

/// Armijo backtracking from `s_init`. Returns the accepted step, the
/// objective there and the residuals at the new point.
fn backtrack<M: RingModel>(
    u: &M,
    p: &CompletionProblem,
    f0: f64,
    slope: f64,
    dir: &M::Tangent,
    s_init: f64,
    params: &ArmijoParams,
) -> Result<(LineSearch, Option<(M, f64, Vec<f64>)>)> {
    let mut s = s_init;
    for j in 0..=params.max_backtracks {
        let cand = u.retract(dir, s)?;
        let res = crate::completion::residuals(p, &cand);
        let f = objective_from_residuals(p, &cand, &res);
        if f.is_finite() && f <= f0 + params.c1 * s * slope {
            return Ok((LineSearch { stepsize: s, backtracks: j, success: true }, Some((cand, f, res))));
        }
        s *= params.backtrack;
    }
    Ok((LineSearch { stepsize: 0.0, backtracks: params.max_backtracks, success: false }, None))
}

/// Armijo backtracking along `dir` from `u`, seeded by the linearized exact
/// step (or `previous` when that is unavailable).
pub fn armijo_linesearch<M: RingModel>(
    u: &M,
    dir: &M::Tangent,
    p: &CompletionProblem,
    params: &ArmijoParams,
    previous: f64,
) -> Result<LineSearch> {
    let res = crate::completion::residuals(p, u);
    let f0 = objective_from_residuals(p, u, &res);
    let g = gradient_from_residuals(p, u, &res);
    let slope = g.inner(dir);
    if !(slope < 0.0) {
        return arg_err("line search direction is not a descent direction");
    }
    let s_init = linearized_step(u, p, slope, dir).unwrap_or(previous) * params.initial_scale;
    Ok(backtrack(u, p, f0, slope, dir, s_init, params)?.0)
}

fn train_error(p: &CompletionProblem, res: &[f64]) -> f64 {
    let norm = p.samples.sq_norm().sqrt();
    if norm > 0.0 {
        dot(res, res).sqrt() / norm
    } else {
        dot(res, res).sqrt()
    }
}

fn holdout_error<M: RingModel>(p: &CompletionProblem, u: &M) -> Result<Option<f64>> {
    match &p.holdout {
        Some(h) if !h.is_empty() => Ok(Some(crate::completion::relative_error(u, Reference::Samples(h))?)),
        _ => Ok(None),
    }
}

/// `beta` for the configured rule given the current gradient and the
/// transported previous gradient; `None` disables conjugacy.
fn beta_weight<T: TangentVector>(rule: BetaRule, grad: &T, prev_grad: &T, prev_transported: &T) -> f64 {
    let denom = prev_grad.inner(prev_grad);
    if denom <= 0.0 {
        return 0.0;
    }
    match rule {
        BetaRule::None => 0.0,
        BetaRule::FletcherReeves => grad.inner(grad) / denom,
        BetaRule::PolakRibierePlus => ((grad.inner(grad) - grad.inner(prev_transported)) / denom).max(0.0),
    }
}

/// Runs RGD or RCG from `u0`, calling `observer(t, u_t)` on every accepted
/// iterate including the start.
pub fn minimize<M: RingModel>(
    u0: M,
    p: &CompletionProblem,
    cfg: &OptimConfig,
    method: Method,
    mut observer: impl FnMut(usize, &M),
) -> Result<OptimResult<M>> {
    cfg.validate()?;
    if u0.tensor_shape() != *p.shape() {
        return arg_err("initial model shape differs from the problem shape");
    }
    let start = Instant::now();
    let quotient = cfg.geometry == Geometry::Quotient;
    let beta_rule = if method == Method::Rgd { BetaRule::None } else { cfg.beta_rule };
    let mut deficient = 0usize;
    let mut horizontal = |u: &M, v: &M::Tangent| -> Result<M::Tangent> {
        if quotient {
            let (h, flag) = u.project_horizontal(v)?;
            deficient += flag as usize;
            Ok(h)
        } else {
            Ok(v.clone())
        }
    };

    let injective_at_start = u0.is_injective(cfg.injectivity_tol);
    let mut u = u0;
    let mut res = crate::completion::residuals(p, &u);
    let mut f = objective_from_residuals(p, &u, &res);
    let mut egrad = gradient_from_residuals(p, &u, &res);
    let mut grad = horizontal(&u, &egrad)?;
    let mut grad_norm = grad.norm();
    let grad_scale = grad_norm.max(1.0);

    let mut rows = vec![TraceRow {
        iter: 0,
        objective: f,
        grad_norm,
        stepsize: 0.0,
        backtracks: 0,
        train_rel_err: train_error(p, &res),
        holdout_rel_err: holdout_error(p, &u)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    }];
    observer(0, &u);

    // previous direction and gradient, both living at the previous iterate
    let mut previous: Option<(M::Tangent, M::Tangent)> = None;
    let mut prev_step = 1.0;
    let stop_reason = loop {
        let t = rows.len() - 1;
        if grad_norm / grad_scale <= cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        if t >= cfg.stall_window {
            let old = rows[t - cfg.stall_window].objective;
            if old - f <= cfg.rel_change_tol * old {
                break StopReason::ObjectiveStalled;
            }
        }
        if t >= cfg.max_iters {
            break StopReason::MaxIterations;
        }

        let mut eta = grad.scaled(-1.0);
        if let (Some((prev_dir, prev_grad)), true) = (&previous, beta_rule != BetaRule::None) {
            let prev_grad_t = match beta_rule {
                BetaRule::PolakRibierePlus => horizontal(&u, prev_grad)?,
                _ => prev_grad.clone(),
            };
            let beta = beta_weight(beta_rule, &grad, prev_grad, &prev_grad_t);
            if beta > 0.0 {
                eta.axpy(beta, &horizontal(&u, prev_dir)?);
                if -eta.inner(&grad) <= DESCENT_TOL * eta.norm() * grad_norm {
                    eta = grad.scaled(-1.0);
                }
            }
        }

        let slope = egrad.inner(&eta);
        let (step, next) = match &cfg.step_rule {
            StepRule::Armijo => {
                let s_init = linearized_step(&u, p, slope, &eta).unwrap_or(prev_step) * cfg.armijo.initial_scale;
                backtrack(&u, p, f, slope, &eta, s_init, &cfg.armijo)?
            }
            StepRule::Schedule(steps) => {
                let Some(&s) = steps.get(t) else { break StopReason::MaxIterations };
                let cand = u.retract(&eta, s)?;
                let r = crate::completion::residuals(p, &cand);
                let fc = objective_from_residuals(p, &cand, &r);
                (LineSearch { stepsize: s, backtracks: 0, success: true }, Some((cand, fc, r)))
            }
        };
        let Some((next_u, next_f, next_res)) = next else { break StopReason::LineSearchFailed };
        prev_step = step.stepsize;
        u = next_u;
        f = next_f;
        res = next_res;
        egrad = gradient_from_residuals(p, &u, &res);
        let new_grad = horizontal(&u, &egrad)?;
        previous = Some((eta, std::mem::replace(&mut grad, new_grad)));
        grad_norm = grad.norm();

        rows.push(TraceRow {
            iter: t + 1,
            objective: f,
            grad_norm,
            stepsize: step.stepsize,
            backtracks: step.backtracks,
            train_rel_err: train_error(p, &res),
            holdout_rel_err: holdout_error(p, &u)?,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        observer(t + 1, &u);
    };

    let injective_at_end = u.is_injective(cfg.injectivity_tol);
    Ok(OptimResult {
        model: u,
        trace: TraceRecord { rows, stop_reason, injective_at_start, injective_at_end, deficient_projections: deficient },
    })
}

/// Riemannian gradient descent.
pub fn rgd<M: RingModel>(u0: M, p: &CompletionProblem, cfg: &OptimConfig) -> Result<OptimResult<M>> {
    minimize(u0, p, cfg, Method::Rgd, |_, _| {})
}

/// Riemannian conjugate gradients with horizontal-projection transport.
pub fn rcg<M: RingModel>(u0: M, p: &CompletionProblem, cfg: &OptimConfig) -> Result<OptimResult<M>> {
    minimize(u0, p, cfg, Method::Rcg, |_, _| {})
}
