//! Quasi-Newton minimization with a fixed stepsize.
//!
//! Classic BFGS keeps an inverse-Hessian estimate `X` and moves along
//! `−ηX∇f`. The accelerated variant replaces the update point `X_k` by the
//! extrapolation `Y_k = αV_k + (1−α)X_k` and carries the companion `V_k`
//! exactly as the accelerated inverter does.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_part, DenseMatrix, SymMatrix, Vector};
use crate::params::AccelParams;
use crate::record::{should_record, Clock, ConvergenceRecord, RunOptions, Trajectory};

/// Relative curvature threshold: updates need `δᵀζ > CURVATURE_EPS·‖δ‖‖ζ‖`.
pub const CURVATURE_EPS: f64 = 1e-10;
/// Probe iterations per stepsize in [`grid_search_stepsize`].
pub const DEFAULT_PROBE_ITERS: usize = 50;

/// `{2^k : k = −10, …, 2}`.
pub fn default_stepsize_grid() -> Vec<f64> {
    (-10..=2).map(|k| 2f64.powi(k)).collect()
}

/// A smooth function with an analytic gradient.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value_grad(&self, w: &Vector) -> (f64, Vector);
    fn value(&self, w: &Vector) -> f64 {
        self.value_grad(w).0
    }
}

/// `log(1 + e^{−t})` without overflow.
fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// `1/(1 + e^{t})`, the derivative of the above up to sign.
fn sigmoid_neg(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// `(1/m)Σ log(1 + exp(−yᵢ⟨aᵢ, w⟩)) + (λ/2)‖w‖²` and its gradient.
pub fn logistic_value_grad(data: &DenseMatrix, labels: &Vector, lambda: f64, w: &Vector) -> (f64, Vector) {
    let m = data.nrows() as f64;
    let margins = (data * w).component_mul(labels);
    let loss: f64 = margins.iter().map(|&t| log1p_exp_neg(t)).sum::<f64>() / m;
    let coef = Vector::from_iterator(labels.len(), margins.iter().zip(labels.iter()).map(|(&t, &y)| -y * sigmoid_neg(t) / m));
    let grad = data.tr_mul(&coef) + w * lambda;
    (loss + 0.5 * lambda * w.norm_squared(), grad)
}

#[derive(Debug, Clone)]
pub struct Logistic {
    pub data: DenseMatrix,
    pub labels: Vector,
    pub lambda: f64,
}

impl Logistic {
    pub fn new(data: DenseMatrix, labels: Vector, lambda: f64) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!("{} rows but {} labels", data.nrows(), labels.len())));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidParameter(format!("label {} at row {i} is not ±1", labels[i])));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("regularization must be nonnegative, got {lambda}")));
        }
        Ok(Logistic { data, labels, lambda })
    }

    /// Regularization defaults to `1/m`.
    pub fn from_dataset(ds: &Dataset, lambda: Option<f64>) -> Result<Self> {
        let lambda = lambda.unwrap_or(1.0 / ds.n_samples().max(1) as f64);
        Self::new(ds.features.clone(), ds.labels.clone(), lambda)
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn value_grad(&self, w: &Vector) -> (f64, Vector) {
        logistic_value_grad(&self.data, &self.labels, self.lambda, w)
    }
}

/// `½‖Aw − b‖² + (λ/2)‖w‖²`.
#[derive(Debug, Clone)]
pub struct Ridge {
    pub data: DenseMatrix,
    pub targets: Vector,
    pub lambda: f64,
}

impl Objective for Ridge {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn value_grad(&self, w: &Vector) -> (f64, Vector) {
        let r = &self.data * w - &self.targets;
        let value = 0.5 * r.norm_squared() + 0.5 * self.lambda * w.norm_squared();
        (value, self.data.tr_mul(&r) + w * self.lambda)
    }
}

/// `AᵀA + λI`.
pub fn ridge_hessian(data: &DenseMatrix, lambda: f64) -> Result<SymMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("regularization must be nonnegative, got {lambda}")));
    }
    let n = data.ncols();
    SymMatrix::symmetrize(data.tr_mul(data) + DenseMatrix::identity(n, n) * lambda)
}

/// `½wᵀQw − cᵀw`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub q: SymMatrix,
    pub c: Vector,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value_grad(&self, w: &Vector) -> (f64, Vector) {
        let qw = self.q.as_matrix() * w;
        (0.5 * w.dot(&qw) - self.c.dot(w), qw - &self.c)
    }
}

/// `X⁺ = ρδδᵀ + (I − ρδζᵀ) Y (I − ρζδᵀ)` with `ρ = 1/δᵀζ`, in the rank-two form
/// `Y − ρ(δhᵀ + hδᵀ) + (ρ²ζᵀh + ρ)δδᵀ`, `h = Yζ`.
///
/// Fails with [`Error::SkipUpdate`] (carrying `δᵀζ`) when the curvature test fails.
pub fn classic_bfgs_update(y: &SymMatrix, delta: &Vector, zeta: &Vector) -> Result<SymMatrix> {
    let n = y.n();
    if delta.len() != n || zeta.len() != n {
        return Err(Error::DimensionMismatch(format!("X is {n}x{n}, δ has {}, ζ has {}", delta.len(), zeta.len())));
    }
    let curv = delta.dot(zeta);
    if !(curv > CURVATURE_EPS * delta.norm() * zeta.norm()) || curv == 0.0 {
        return Err(Error::SkipUpdate(curv));
    }
    let rho = 1.0 / curv;
    let h = y.as_matrix() * zeta;
    let mut x = y.as_matrix().clone();
    x.ger(-rho, delta, &h, 1.0);
    x.ger(-rho, &h, delta, 1.0);
    x.ger(rho * rho * zeta.dot(&h) + rho, delta, delta, 1.0);
    Ok(SymMatrix::from_trusted(sym_part(&x)))
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub w: Vector,
    pub x: SymMatrix,
    pub v: SymMatrix,
    pub iteration: usize,
    /// `f(w)` and `∇f(w)` at the current iterate, kept to avoid re-evaluation.
    pub value: f64,
    pub grad: Vector,
}

impl OptimState {
    /// Starts at `w0` with `X₀ = V₀ = x0`.
    pub fn new(obj: &dyn Objective, w0: Vector, x0: SymMatrix) -> Result<Self> {
        if w0.len() != obj.dim() || x0.n() != obj.dim() {
            return Err(Error::DimensionMismatch(format!(
                "objective has dimension {}, w0 has {}, X0 is {}x{}",
                obj.dim(),
                w0.len(),
                x0.n(),
                x0.n()
            )));
        }
        let (value, grad) = obj.value_grad(&w0);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: 0, reason: "non-finite objective at the starting point".into() });
        }
        Ok(OptimState { w: w0, v: x0.clone(), x: x0, iteration: 0, value, grad })
    }

    /// `w0` with `X₀ = V₀ = I`.
    pub fn identity_start(obj: &dyn Objective, w0: Vector) -> Result<Self> {
        let n = w0.len();
        Self::new(obj, w0, SymMatrix::identity(n))
    }
}

/// `w⁺ = w − ηX∇f(w)` with the new value and gradient, plus `δ`, `ζ`.
fn gradient_step(state: &OptimState, obj: &dyn Objective, eta: f64) -> Result<(Vector, f64, Vector, Vector, Vector)> {
    let w = &state.w - (state.x.as_matrix() * &state.grad) * eta;
    let (value, grad) = obj.value_grad(&w);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) || w.iter().any(|c| !c.is_finite()) {
        return Err(Error::Diverged {
            iteration: state.iteration + 1,
            reason: format!("non-finite objective or gradient (f = {value})"),
        });
    }
    let delta = &w - &state.w;
    let zeta = &grad - &state.grad;
    Ok((w, value, grad, delta, zeta))
}

fn update_or_keep(y: &SymMatrix, delta: &Vector, zeta: &Vector) -> Result<SymMatrix> {
    match classic_bfgs_update(y, delta, zeta) {
        Err(Error::SkipUpdate(_)) => Ok(y.clone()),
        other => other,
    }
}

/// One step of BFGS with the accelerated update: `Y = αV + (1−α)X`,
/// `X⁺ = BFGS(Y; δ, ζ)` (or `Y` on curvature failure), `V⁺ = βV + (1−β)Y − γ(Y − X⁺)`.
pub fn accel_bfgs_step(state: &OptimState, obj: &dyn Objective, p: &AccelParams, eta: f64) -> Result<OptimState> {
    let (w, value, grad, delta, zeta) = gradient_step(state, obj, eta)?;
    let y = SymMatrix::from_trusted(state.v.as_matrix() * p.alpha + state.x.as_matrix() * (1.0 - p.alpha));
    let x = update_or_keep(&y, &delta, &zeta)?;
    let v = state.v.as_matrix() * p.beta + y.as_matrix() * (1.0 - p.beta) - (y.as_matrix() - x.as_matrix()) * p.gamma;
    Ok(OptimState { w, x, v: SymMatrix::from_trusted(sym_part(&v)), iteration: state.iteration + 1, value, grad })
}

/// One classic BFGS step; `V` mirrors `X`.
pub fn classic_bfgs_step(state: &OptimState, obj: &dyn Objective, eta: f64) -> Result<OptimState> {
    let (w, value, grad, delta, zeta) = gradient_step(state, obj, eta)?;
    let x = update_or_keep(&state.x, &delta, &zeta)?;
    Ok(OptimState { w, v: x.clone(), x, iteration: state.iteration + 1, value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimMethod {
    Classic,
    Accelerated(AccelParams),
}

impl OptimMethod {
    /// `bfgs`, or `bfgs-a-<μ>-<ν>` for the accelerated variant.
    pub fn tag(&self) -> String {
        match self {
            OptimMethod::Classic => "bfgs".into(),
            OptimMethod::Accelerated(p) => format!("bfgs-a-{}-{}", p.mu, p.nu),
        }
    }

    pub fn step(&self, state: &OptimState, obj: &dyn Objective, eta: f64) -> Result<OptimState> {
        match self {
            OptimMethod::Classic => classic_bfgs_step(state, obj, eta),
            OptimMethod::Accelerated(p) => accel_bfgs_step(state, obj, p, eta),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimConfig {
    pub method: OptimMethod,
    pub eta: f64,
    pub options: RunOptions,
    /// Stop once `‖∇f‖ ≤ grad_tol`.
    pub grad_tol: Option<f64>,
    /// Reference optimum; the residual column is `f − f*` (plain `f` when absent).
    pub f_star: Option<f64>,
}

/// A run that may have stopped on divergence; records cover every iterate reached.
#[derive(Debug, Clone)]
pub struct OptimRun {
    pub trajectory: Trajectory<OptimState>,
    pub failure: Option<Error>,
}

impl OptimRun {
    /// First recorded iteration with `‖∇f‖ ≤ tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        let tag = format!("{}/grad_norm", self.method_tag());
        self.trajectory.records.iter().find(|r| r.method == tag && r.residual <= tol).map(|r| r.iteration)
    }

    fn method_tag(&self) -> &str {
        self.trajectory.records.first().map(|r| r.method.as_str()).unwrap_or("")
    }
}

/// Runs from `start`, recording `f − f*` under the method tag and `‖∇f‖` under `<tag>/grad_norm`.
pub fn optimize(obj: &dyn Objective, start: OptimState, cfg: &OptimConfig, seed: u64) -> Result<OptimRun> {
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return Err(Error::InvalidStepsize(cfg.eta));
    }
    let opts = &cfg.options;
    let clock = Clock::start(opts.time_budget);
    let tag = cfg.method.tag();
    let grad_tag = format!("{tag}/grad_norm");
    let f_star = cfg.f_star.unwrap_or(0.0);
    let mut records = Vec::new();
    let mut push = |st: &OptimState| {
        let elapsed = clock.elapsed();
        let rec = |method: &str, residual: f64| ConvergenceRecord {
            method: method.to_string(),
            seed,
            iteration: st.iteration,
            elapsed_s: elapsed,
            residual,
            lyapunov: None,
            lambda_min_x: None,
        };
        records.push(rec(&tag, st.value - f_star));
        records.push(rec(&grad_tag, st.grad.norm()));
    };

    let mut state = start;
    let mut truncated = false;
    let mut failure = None;
    push(&state);
    let mut last_recorded = state.iteration;
    let converged = |st: &OptimState| cfg.grad_tol.is_some_and(|t| st.grad.norm() <= t);
    if !converged(&state) {
        for k in 1..=opts.max_iter {
            if clock.expired() {
                truncated = true;
                break;
            }
            match cfg.method.step(&state, obj, cfg.eta) {
                Ok(next) => state = next,
                Err(e @ Error::Diverged { .. }) => {
                    failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
            let done = converged(&state);
            if done || should_record(k, opts.record_every, opts.max_iter) {
                push(&state);
                last_recorded = state.iteration;
            }
            if done {
                break;
            }
        }
    }
    if last_recorded != state.iteration {
        push(&state);
    }
    Ok(OptimRun { trajectory: Trajectory { records, state, truncated }, failure })
}

/// The grid entry with the smallest `f(w_K)` after `probe_iters` steps from `start`.
///
/// Entries whose probe diverges or ends non-finite are skipped; ties go to the earlier entry.
pub fn grid_search_stepsize(
    obj: &dyn Objective,
    method: &OptimMethod,
    start: &OptimState,
    grid: &[f64],
    probe_iters: usize,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty stepsize grid".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidStepsize(bad));
    }
    let mut best: Option<(f64, f64)> = None;
    for &eta in grid {
        let mut st = start.clone();
        let mut ok = true;
        for _ in 0..probe_iters {
            match method.step(&st, obj, eta) {
                Ok(next) => st = next,
                Err(Error::Diverged { .. }) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if ok && st.value.is_finite() && best.is_none_or(|(_, f)| st.value < f) {
            best = Some((eta, st.value));
        }
    }
    best.map(|(eta, _)| eta).ok_or(Error::NoViableStepsize)
}

/// `f*` from a long classic run: the smallest value seen within `max_iter` steps or until `‖∇f‖ ≤ tol`.
pub fn reference_optimum(obj: &dyn Objective, start: OptimState, eta: f64, max_iter: usize, tol: f64) -> Result<f64> {
    let mut st = start;
    let mut best = st.value;
    for _ in 0..max_iter {
        if st.grad.norm() <= tol {
            break;
        }
        st = classic_bfgs_step(&st, obj, eta)?;
        best = best.min(st.value);
    }
    Ok(best)
}
