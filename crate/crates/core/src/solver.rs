//! Sketch-and-project for `Ax = b` and its accelerated variant.
//!
//! Every step works with the explicit correction
//! `g = B⁻¹AᵀS (SᵀAB⁻¹AᵀS)⁻¹ Sᵀ(Ay − b)`, never forming the projection `Z`.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, inv_sqrt_pd, pinv_small, DenseMatrix, SymMatrix, Vector};
use crate::params::AccelParams;
use crate::record::{should_record, Clock, ConvergenceRecord, RunOptions, Trajectory};
use crate::sketch::{gram_inverse, SketchSample, Sketcher, SketchSpec};

/// Attempts per step before a run aborts on degenerate sketches.
pub const MAX_RESAMPLES: usize = 100;

/// Inner product the projections are taken in.
#[derive(Debug, Clone)]
pub enum Metric {
    /// `B = I`.
    Euclidean,
    /// `B = A` (requires symmetric positive definite `A`).
    SystemMatrix,
    /// General `B`, stored as its lower Cholesky factor.
    Weighted(DenseMatrix),
}

impl Metric {
    pub fn weighted(b: &SymMatrix) -> Result<Self> {
        Ok(Metric::Weighted(cholesky(b)?))
    }

    /// `‖e‖_B`.
    pub fn norm(&self, a: &DenseMatrix, e: &Vector) -> f64 {
        match self {
            Metric::Euclidean => e.norm(),
            Metric::SystemMatrix => e.dot(&(a * e)).max(0.0).sqrt(),
            Metric::Weighted(l) => (l.transpose() * e).norm(),
        }
    }

    /// The matrix `B` itself.
    pub fn matrix(&self, a: &DenseMatrix) -> DenseMatrix {
        match self {
            Metric::Euclidean => DenseMatrix::identity(a.ncols(), a.ncols()),
            Metric::SystemMatrix => a.clone(),
            Metric::Weighted(l) => l * l.transpose(),
        }
    }

    fn solve(&self, a: &DenseMatrix, rhs: &DenseMatrix) -> DenseMatrix {
        match self {
            Metric::Euclidean => rhs.clone(),
            Metric::SystemMatrix => a.clone().cholesky().map(|c| c.solve(rhs)).unwrap_or_else(|| rhs.clone()),
            Metric::Weighted(l) => cholesky_solve(l, rhs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveMode {
    Plain,
    Accelerated,
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMode::Plain => "plain",
            SolveMode::Accelerated => "accel",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vector,
    pub v: Vector,
    pub iteration: usize,
}

impl SolverState {
    pub fn new(x0: Vector) -> Self {
        SolverState { v: x0.clone(), x: x0, iteration: 0 }
    }
}

/// The sketch-and-project correction at `y` for a (possibly nonsymmetric) system matrix.
fn correction(a: &DenseMatrix, b: &Vector, y: &Vector, s: &SketchSample, metric: &Metric) -> Result<Vector> {
    // rows of A picked out by the sketch: SᵀA
    let sa = s.project_rows(a);
    let sb = s.project_rows(&DenseMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    let res = &sa * y - sb.column(0);
    match metric {
        Metric::SystemMatrix => {
            let ginv = gram_inverse(&s.gram(a))?;
            let coef = ginv * res;
            Ok(match &s.coords {
                Some(c) => {
                    let mut g = Vector::zeros(y.len());
                    for (j, &i) in c.iter().enumerate() {
                        g[i] += coef[j];
                    }
                    g
                }
                None => &s.s * coef,
            })
        }
        _ => {
            let at_s = sa.transpose();
            let w = metric.solve(a, &at_s);
            let ginv = gram_inverse(&(at_s.transpose() * &w))?;
            Ok(w * (ginv * res))
        }
    }
}

/// One sketch-and-project step `x⁺ = argmin ‖x − x_k‖_B  s.t.  SᵀAx = Sᵀb`.
pub fn sap_step(a: &SymMatrix, b: &Vector, x: &Vector, s: &SketchSample, metric: &Metric) -> Result<Vector> {
    check_dims(a, b, x)?;
    Ok(x - correction(a, b, x, s, metric)?)
}

/// One accelerated step:
/// `y = αv + (1−α)x`, `x⁺ = y − ωg`, `v⁺ = βv + (1−β)y − γg`.
pub fn accel_step(
    a: &SymMatrix,
    b: &Vector,
    state: &SolverState,
    s: &SketchSample,
    p: &AccelParams,
    metric: &Metric,
) -> Result<SolverState> {
    check_dims(a, b, &state.x)?;
    accel_step_raw(a, b, state, s, p, metric)
}

fn accel_step_raw(
    a: &DenseMatrix,
    b: &Vector,
    state: &SolverState,
    s: &SketchSample,
    p: &AccelParams,
    metric: &Metric,
) -> Result<SolverState> {
    let y = &state.v * p.alpha + &state.x * (1.0 - p.alpha);
    let g = correction(a, b, &y, s, metric)?;
    let x = &y - &g * p.omega;
    let v = &state.v * p.beta + &y * (1.0 - p.beta) - &g * p.gamma;
    Ok(SolverState { x, v, iteration: state.iteration + 1 })
}

fn plain_step_raw(a: &DenseMatrix, b: &Vector, state: &SolverState, s: &SketchSample, omega: f64, metric: &Metric) -> Result<SolverState> {
    let g = correction(a, b, &state.x, s, metric)?;
    let x = &state.x - g * omega;
    Ok(SolverState { v: x.clone(), x, iteration: state.iteration + 1 })
}

fn check_dims(a: &SymMatrix, b: &Vector, x: &Vector) -> Result<()> {
    if b.len() != a.n() || x.len() != a.n() {
        return Err(Error::DimensionMismatch(format!("A is {}x{}, b has {}, x has {}", a.n(), a.n(), b.len(), x.len())));
    }
    Ok(())
}

/// Draws sketches until `step` accepts one, up to [`MAX_RESAMPLES`] attempts.
pub fn with_resample<T>(sketcher: &mut Sketcher, mut step: impl FnMut(&SketchSample) -> Result<T>) -> Result<T> {
    for _ in 0..MAX_RESAMPLES {
        let s = sketcher.sample();
        match step(&s) {
            Err(Error::DegenerateSketch) => continue,
            other => return other,
        }
    }
    Err(Error::TooManyDegenerateSketches(MAX_RESAMPLES))
}

/// Minimum-`B`-norm-distance solution `x₀ − B⁻¹Aᵀ(AB⁻¹Aᵀ)†(Ax₀ − b)` by a dense direct solve.
pub fn reference_solution(a: &DenseMatrix, b: &Vector, x0: &Vector, metric: &Metric) -> Result<Vector> {
    let binv_at = metric.solve(a, &a.transpose());
    let gram = a * &binv_at;
    let r = a * x0 - b;
    Ok(x0 - binv_at * (pinv_small(&gram, None)? * r))
}

/// Inputs shared by [`solve`] and [`solve_weighted`].
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub spec: SketchSpec,
    pub params: AccelParams,
    pub mode: SolveMode,
    pub options: RunOptions,
}

/// Optional per-record Lyapunov evaluation on the iterate pair.
pub type LyapunovFn<'a> = &'a dyn Fn(&SolverState) -> f64;

/// Runs the plain or accelerated method from `x₀ = v₀ = 0`, recording `‖x_k − x*‖_B`.
pub fn solve(
    a: &SymMatrix,
    b: &Vector,
    metric: &Metric,
    cfg: &SolveConfig,
    lyapunov: Option<LyapunovFn<'_>>,
) -> Result<Trajectory<SolverState>> {
    check_dims(a, b, b)?;
    let x0 = Vector::zeros(a.n());
    let x_star = reference_solution(a, b, &x0, metric)?;
    let mut sketcher = Sketcher::new(cfg.spec, a)?;
    run_loop(a, b, metric, cfg, &mut sketcher, x0, |st| metric.norm(a, &(&st.x - &x_star)), |st| st.clone(), lyapunov)
}

/// [`solve`] in the `B`-norm through the change of variables `x = B^{-1/2}z`.
///
/// The transformed system `AB^{-1/2}z = b` is solved in the Euclidean norm
/// with sketches drawn from the original `A`; iterates are mapped back before
/// recording. `B = I` (exactly) defers to [`solve`].
pub fn solve_weighted(
    a: &SymMatrix,
    b: &Vector,
    bmat: &SymMatrix,
    cfg: &SolveConfig,
    lyapunov: Option<LyapunovFn<'_>>,
) -> Result<Trajectory<SolverState>> {
    if bmat.n() != a.n() {
        return Err(Error::DimensionMismatch("B must match A".into()));
    }
    if bmat.is_identity() {
        return solve(a, b, &Metric::Euclidean, cfg, lyapunov);
    }
    cholesky(bmat)?;
    let b_inv_half = inv_sqrt_pd(bmat)?;
    let transformed = a.as_matrix() * b_inv_half.as_matrix();
    let z0 = Vector::zeros(a.n());
    let z_star = reference_solution(&transformed, b, &z0, &Metric::Euclidean)?;
    let mut sketcher = Sketcher::new(cfg.spec, a)?;
    let back = |st: &SolverState| SolverState {
        x: b_inv_half.as_matrix() * &st.x,
        v: b_inv_half.as_matrix() * &st.v,
        iteration: st.iteration,
    };
    run_loop(&transformed, b, &Metric::Euclidean, cfg, &mut sketcher, z0, |st| (&st.x - &z_star).norm(), back, lyapunov)
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    a: &DenseMatrix,
    b: &Vector,
    metric: &Metric,
    cfg: &SolveConfig,
    sketcher: &mut Sketcher,
    x0: Vector,
    residual: impl Fn(&SolverState) -> f64,
    to_user: impl Fn(&SolverState) -> SolverState,
    lyapunov: Option<LyapunovFn<'_>>,
) -> Result<Trajectory<SolverState>> {
    let opts = &cfg.options;
    let method = cfg.mode.to_string();
    let seed = cfg.spec.seed;
    let clock = Clock::start(opts.time_budget);
    let mut state = SolverState::new(x0);
    let mut records = Vec::new();
    let push = |st: &SolverState, records: &mut Vec<ConvergenceRecord>| {
        let user = to_user(st);
        records.push(ConvergenceRecord {
            method: method.clone(),
            seed,
            iteration: st.iteration,
            elapsed_s: clock.elapsed(),
            residual: residual(st),
            lyapunov: lyapunov.map(|f| f(&user)),
            lambda_min_x: None,
        });
    };
    push(&state, &mut records);
    let mut truncated = false;
    for k in 1..=opts.max_iter {
        if clock.expired() {
            truncated = true;
            break;
        }
        state = with_resample(sketcher, |s| match cfg.mode {
            SolveMode::Plain => plain_step_raw(a, b, &state, s, cfg.params.omega, metric),
            SolveMode::Accelerated => accel_step_raw(a, b, &state, s, &cfg.params, metric),
        })?;
        if !state.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { iteration: k, reason: "non-finite iterate".into() });
        }
        if should_record(k, opts.record_every, opts.max_iter) {
            push(&state, &mut records);
        }
    }
    if truncated && records.last().map(|r| r.iteration) != Some(state.iteration) {
        push(&state, &mut records);
    }
    Ok(Trajectory { records, state: to_user(&state), truncated })
}
