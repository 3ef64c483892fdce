//! Subcommand implementations. Each returns the CSV text and the number of failed runs.

use std::time::Duration;

use accel_sketch::bfgs::{
    default_stepsize_grid, grid_search_stepsize, optimize, reference_optimum, Logistic, Objective, OptimConfig,
    OptimMethod, OptimState, DEFAULT_PROBE_ITERS,
};
use accel_sketch::data::{
    gen_alpha_beta, gen_spectrum, parse_libsvm, preprocess, spectrum_one_outlier, spectrum_uniform_grid, ParseOptions,
    Preprocess,
};
use accel_sketch::inverter::{estimate_params_convenient, heuristic_mu, invert, InvertConfig, InvertMode};
use accel_sketch::oracle::{matrix_moments, mu_nu_bruteforce, vector_moments, MATRIX_ORACLE_CAP, VECTOR_ORACLE_CAP};
use accel_sketch::record::{fmt_num, ConvergenceRecord, RunOptions, CSV_HEADER};
use accel_sketch::solver::{solve, Metric, SolveConfig, SolveMode};
use accel_sketch::{derive_params, AccelParams, SketchSpec, SketchStrategy, SymMatrix, Vector};
use anyhow::{anyhow, bail, Context, Result};
use log::{error, info, warn};
use rayon::prelude::*;

use crate::config::{MetricKind, ParamSource, ProblemKind, Settings, SketchKind};

pub struct Output {
    pub csv: String,
    pub failures: usize,
}

pub fn build_matrix(s: &Settings) -> Result<SymMatrix> {
    let p = &s.problem;
    let n = p.n.unwrap_or(100);
    if n == 0 {
        bail!("problem size must be positive");
    }
    let seed = p.matrix_seed.unwrap_or(0);
    let small = p.small.unwrap_or(1.0);
    let large = p.large.unwrap_or(1e3);
    let a = match p.kind.unwrap_or(ProblemKind::Outlier) {
        ProblemKind::AlphaBeta => gen_alpha_beta(p.alpha.unwrap_or(1.1), p.beta.unwrap_or(-0.01), n)?,
        ProblemKind::UniformGrid => gen_spectrum(&spectrum_uniform_grid(n), seed)?,
        ProblemKind::Outlier => gen_spectrum(&spectrum_one_outlier(n, small, large), seed)?,
        ProblemKind::OutlierLarge => gen_spectrum(&spectrum_one_outlier(n, large, small), seed)?,
        ProblemKind::Diagonal => SymMatrix::from_diagonal(&spectrum_uniform_grid(n))?,
    };
    Ok(a)
}

fn sketch_spec(s: &Settings, seed: u64) -> SketchSpec {
    let strategy = match s.sketch.strategy.unwrap_or(SketchKind::Convenient) {
        SketchKind::Convenient => SketchStrategy::CoordinateConvenient,
        SketchKind::Uniform => SketchStrategy::CoordinateUniform,
        SketchKind::Gaussian => SketchStrategy::Gaussian,
    };
    SketchSpec::new(strategy, s.sketch.sketch_rank.unwrap_or(1), seed)
}

/// Which oracle a parameter request refers to.
#[derive(Clone, Copy)]
enum Target {
    Inversion,
    System(MetricKind),
}

fn resolve_mu_nu(s: &Settings, a: &SymMatrix, target: Target) -> Result<(f64, f64)> {
    let samples = s.params.oracle_samples.unwrap_or(20_000);
    match s.params.source.unwrap_or(ParamSource::Analytic) {
        ParamSource::Analytic => {
            let est = estimate_params_convenient(a)?;
            Ok((est.mu_p, est.nu_p))
        }
        ParamSource::Heuristic => {
            let est = estimate_params_convenient(a)?;
            Ok((heuristic_mu(est.nu_p, s.params.divisor.unwrap_or(100.0)), est.nu_p))
        }
        ParamSource::Explicit => match (s.params.mu, s.params.nu) {
            (Some(mu), Some(nu)) => Ok((mu, nu)),
            _ => bail!("explicit parameters need both --mu and --nu"),
        },
        ParamSource::Oracle => {
            let spec = sketch_spec(s, 0);
            let m = match target {
                Target::Inversion => matrix_moments(a, &spec, samples)?,
                Target::System(MetricKind::System) => vector_moments(a, Some(a), &spec, samples)?,
                Target::System(MetricKind::Euclidean) => vector_moments(a, None, &spec, samples)?,
            };
            Ok(mu_nu_bruteforce(&m)?)
        }
    }
}

fn params_for(s: &Settings, a: &SymMatrix, target: Target) -> Result<AccelParams> {
    let (mu, nu) = resolve_mu_nu(s, a, target)?;
    info!("using mu = {mu:e}, nu = {nu:e}");
    Ok(derive_params(mu, nu, s.params.omega.unwrap_or(1.0))?)
}

fn run_options(s: &Settings, default_iter: usize) -> Result<RunOptions> {
    let opts = RunOptions::iterations(s.run.max_iter.unwrap_or(default_iter), s.run.record_every.unwrap_or(1));
    Ok(match s.time_budget()? {
        Some(b) => opts.with_budget(b),
        None => opts,
    })
}

fn trajectory_csv(runs: &[Vec<ConvergenceRecord>]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for rec in runs.iter().flatten() {
        out.push_str(&rec.csv_row());
        out.push('\n');
    }
    out
}

/// Collects per-task results in task order, logging and counting failures.
fn gather(results: Vec<(String, Result<Vec<ConvergenceRecord>>)>) -> Output {
    let mut runs = Vec::new();
    let mut failures = 0;
    for (label, r) in results {
        match r {
            Ok(recs) => runs.push(recs),
            Err(e) => {
                error!("{label}: {e:#}");
                failures += 1;
            }
        }
    }
    Output { csv: trajectory_csv(&runs), failures }
}

pub fn cmd_estimate(s: &Settings) -> Result<Output> {
    let a = build_matrix(s)?;
    let n = a.n();
    let est = estimate_params_convenient(&a).context("estimating analytic parameters")?;
    let mut rows = vec![("mu_p", est.mu_p, "analytic"), ("nu_p", est.nu_p, "analytic")];
    let spec = sketch_spec(s, 0);
    let samples = s.params.oracle_samples.unwrap_or(20_000);
    if n <= VECTOR_ORACLE_CAP {
        let (mu, nu) = mu_nu_bruteforce(&vector_moments(&a, Some(&a), &spec, samples)?)?;
        rows.push(("mu_vector", mu, "oracle"));
        rows.push(("nu_vector", nu, "oracle"));
    } else {
        warn!("n = {n} exceeds the vector oracle cap {VECTOR_ORACLE_CAP}; oracle skipped");
    }
    if n <= MATRIX_ORACLE_CAP {
        let (mu, nu) = mu_nu_bruteforce(&matrix_moments(&a, &spec, samples)?)?;
        rows.push(("mu_matrix", mu, "oracle"));
        rows.push(("nu_matrix", nu, "oracle"));
    } else {
        warn!("n = {n} exceeds the matrix oracle cap {MATRIX_ORACLE_CAP}; matrix oracle skipped");
    }
    let mut csv = String::from("quantity,value,source\n");
    for (q, v, src) in rows {
        csv.push_str(&format!("{q},{},{src}\n", fmt_num(v)));
    }
    Ok(Output { csv, failures: 0 })
}

pub fn cmd_invert(s: &Settings) -> Result<Output> {
    let a = build_matrix(s)?;
    let modes: Vec<InvertMode> = s
        .modes(&["plain", "accel"])?
        .iter()
        .map(|m| m.parse().map_err(|e: String| anyhow!(e)))
        .collect::<Result<_>>()?;
    let seeds = s.seeds()?;
    let params = params_for(s, &a, Target::Inversion)?;
    let options = run_options(s, 1000)?;
    let track = s.run.track_lambda_min.unwrap_or(false);
    let tasks: Vec<(InvertMode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&sd| (m, sd))).collect();
    let results = tasks
        .par_iter()
        .map(|&(mode, seed)| {
            let cfg = InvertConfig { spec: sketch_spec(s, seed), params, mode, options, track_lambda_min: track };
            let r = invert(&a, &cfg, None).map(|t| t.records).map_err(anyhow::Error::from);
            (format!("invert {mode} seed {seed}"), r)
        })
        .collect();
    Ok(gather(results))
}

pub fn cmd_solve(s: &Settings) -> Result<Output> {
    let a = build_matrix(s)?;
    let modes: Vec<SolveMode> = s
        .modes(&["plain", "accel"])?
        .iter()
        .map(|m| match m.as_str() {
            "plain" => Ok(SolveMode::Plain),
            "accel" => Ok(SolveMode::Accelerated),
            other => Err(anyhow!("unknown solve mode `{other}`")),
        })
        .collect::<Result<_>>()?;
    let seeds = s.seeds()?;
    let metric_kind = s.run.metric.unwrap_or(MetricKind::System);
    let metric = match metric_kind {
        MetricKind::System => Metric::SystemMatrix,
        MetricKind::Euclidean => Metric::Euclidean,
    };
    let params = params_for(s, &a, Target::System(metric_kind))?;
    let options = run_options(s, 1000)?;
    // x* = (1, …, 1)
    let b = a.as_matrix() * Vector::from_element(a.n(), 1.0);
    let tasks: Vec<(SolveMode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&sd| (m, sd))).collect();
    let results = tasks
        .par_iter()
        .map(|&(mode, seed)| {
            let cfg = SolveConfig { spec: sketch_spec(s, seed), params, mode, options };
            let r = solve(&a, &b, &metric, &cfg, None).map(|t| t.records).map_err(anyhow::Error::from);
            (format!("solve {mode} seed {seed}"), r)
        })
        .collect();
    Ok(gather(results))
}

/// Candidate `(μ, ν)` pairs probed when none are given.
const PROBE_PAIRS: [(f64, f64); 12] = [
    (0.5, 2.0),
    (0.5, 5.0),
    (0.1, 2.0),
    (0.1, 5.0),
    (0.1, 10.0),
    (0.01, 2.0),
    (0.01, 10.0),
    (0.01, 100.0),
    (1e-3, 10.0),
    (1e-3, 100.0),
    (1e-4, 100.0),
    (1e-4, 1000.0),
];

pub fn cmd_optimize(s: &Settings) -> Result<Output> {
    let o = &s.optimize;
    let path = o.data.as_ref().ok_or_else(|| anyhow!("optimize needs a dataset (--data PATH)"))?;
    let raw = parse_libsvm(path, ParseOptions { n_features: None, positive_class: o.positive_class })
        .with_context(|| format!("loading {}", path.display()))?;
    let flags = Preprocess {
        center: o.center.unwrap_or(true),
        normalize_rows: o.normalize.unwrap_or(true),
        add_bias: o.bias.unwrap_or(true),
    };
    let ds = preprocess(&raw, flags);
    let obj = Logistic::from_dataset(&ds, o.lambda)?;
    let start = OptimState::identity_start(&obj, Vector::zeros(obj.dim()))?;
    let searched = grid_search_stepsize(&obj, &OptimMethod::Classic, &start, &default_stepsize_grid(), DEFAULT_PROBE_ITERS)?;
    info!("grid-searched stepsize {searched}");
    let eta = o.eta.unwrap_or(searched);
    // the reference run always uses the searched stepsize so a poor --eta cannot spoil f*
    let f_star = reference_optimum(&obj, start.clone(), searched, o.reference_iters.unwrap_or(5000), 1e-12)?;
    info!("reference optimum f* = {f_star:e}");

    let mut methods = Vec::new();
    for mode in s.modes(&["classic", "accel"])? {
        match mode.as_str() {
            "classic" => methods.push(OptimMethod::Classic),
            "accel" => {
                let omega = s.params.omega.unwrap_or(1.0);
                let p = match (s.params.mu, s.params.nu) {
                    (Some(mu), Some(nu)) => derive_params(mu, nu, omega)?,
                    _ => probe_pair(&obj, &start, eta, omega)?,
                };
                methods.push(OptimMethod::Accelerated(p));
            }
            other => bail!("unknown optimize mode `{other}`"),
        }
    }
    let seeds = s.seeds()?;
    let options = run_options(s, 300)?;
    let grad_tol = o.grad_tol;
    let tasks: Vec<(OptimMethod, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&sd| (m, sd))).collect();
    let results = tasks
        .par_iter()
        .map(|&(method, seed)| {
            let cfg = OptimConfig { method, eta, options, grad_tol, f_star: Some(f_star) };
            let label = format!("optimize {} seed {seed}", method.tag());
            let r = optimize(&obj, start.clone(), &cfg, seed).map_err(anyhow::Error::from).map(|run| match run.failure {
                // keep the rows reached before divergence, but count the run as failed
                Some(e) => {
                    error!("{label}: {e}");
                    (run.trajectory.records, true)
                }
                None => (run.trajectory.records, false),
            });
            (label, r)
        })
        .collect::<Vec<_>>();
    let mut failures = 0;
    let mut plain = Vec::new();
    for (label, r) in results {
        match r {
            Ok((recs, failed)) => {
                failures += usize::from(failed);
                plain.push((label, Ok(recs)));
            }
            Err(e) => plain.push((label, Err(e))),
        }
    }
    let mut out = gather(plain);
    out.failures += failures;
    Ok(out)
}

/// The built-in pair with the smallest objective after the probe iterations.
fn probe_pair(obj: &dyn Objective, start: &OptimState, eta: f64, omega: f64) -> Result<AccelParams> {
    let mut best: Option<(AccelParams, f64)> = None;
    for (mu, nu) in PROBE_PAIRS {
        let p = derive_params(mu, nu, omega)?;
        let method = OptimMethod::Accelerated(p);
        let mut st = start.clone();
        let mut ok = true;
        for _ in 0..DEFAULT_PROBE_ITERS {
            match method.step(&st, obj, eta) {
                Ok(next) => st = next,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && best.as_ref().is_none_or(|(_, f)| st.value < *f) {
            best = Some((p, st.value));
        }
    }
    let (p, f) = best.ok_or_else(|| anyhow!("every probed (mu, nu) pair diverged"))?;
    info!("probed mu = {}, nu = {} (f = {f:e} after {DEFAULT_PROBE_ITERS} steps)", p.mu, p.nu);
    Ok(p)
}

/// Per-iteration residual factor `(r_K/r_0)^{1/K}` of one run.
fn per_iteration_factor(records: &[ConvergenceRecord], method: &str) -> Option<f64> {
    let mut rows = records.iter().filter(|r| r.method == method);
    let first = rows.next()?;
    let last = rows.next_back()?;
    let k = last.iteration.checked_sub(first.iteration)?;
    if k == 0 || first.residual.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !last.residual.is_finite() {
        return None;
    }
    Some((last.residual / first.residual).powf(1.0 / k as f64))
}

fn geometric_mean(v: &[f64]) -> f64 {
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

pub fn cmd_grid(s: &Settings) -> Result<Output> {
    let a = build_matrix(s)?;
    let (mu, nu) = resolve_mu_nu(s, &a, Target::Inversion)?;
    let seeds = s.seeds()?;
    let budget = s.grid.cell_budget_s.unwrap_or(2.0);
    if !(budget > 0.0 && budget.is_finite()) {
        bail!("cell budget must be positive, got {budget}");
    }
    let max_iter = s.run.max_iter.unwrap_or(usize::MAX / 2);
    let options = RunOptions::iterations(max_iter, max_iter).with_budget(Duration::from_secs_f64(budget));
    let omega = s.params.omega.unwrap_or(1.0);

    let plain: Vec<Option<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let params = derive_params(mu, nu, omega).ok()?;
            let cfg = InvertConfig { spec: sketch_spec(s, seed), params, mode: InvertMode::Plain, options, track_lambda_min: false };
            per_iteration_factor(&invert(&a, &cfg, None).ok()?.records, "plain")
        })
        .collect();
    let plain: Vec<f64> = plain.into_iter().collect::<Option<_>>().ok_or_else(|| anyhow!("plain baseline failed"))?;
    let base = geometric_mean(&plain);

    let cells: Vec<(usize, usize)> = (1..=7).flat_map(|i| (1..=7).map(move |j| (i, j))).collect();
    let ratios: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let mu_i = 2f64.powi(i as i32 - 4) * mu;
            let nu_j = 5f64.powi(j as i32 - 4) * nu;
            let factors: Option<Vec<f64>> = derive_params(mu_i, nu_j, omega).ok().and_then(|params| {
                seeds
                    .iter()
                    .map(|&seed| {
                        let cfg = InvertConfig { spec: sketch_spec(s, seed), params, mode: InvertMode::Accel, options, track_lambda_min: false };
                        per_iteration_factor(&invert(&a, &cfg, None).ok()?.records, "accel")
                    })
                    .collect()
            });
            let ratio = match factors {
                Some(f) if f.iter().all(|q| *q < 1.0 && q.is_finite()) => geometric_mean(&f) / base,
                _ => f64::INFINITY,
            };
            (mu_i, nu_j, ratio)
        })
        .collect();
    let mut csv = String::from("mu,nu,i,j,ratio\n");
    for (&(i, j), (m, n, r)) in cells.iter().zip(ratios) {
        csv.push_str(&format!("{},{},{i},{j},{}\n", fmt_num(m), fmt_num(n), fmt_num(r)));
    }
    Ok(Output { csv, failures: 0 })
}
