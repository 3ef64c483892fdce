//! Randomized inversion of symmetric positive definite matrices.
//!
//! The symmetric update is the sketched BFGS projection
//! `X⁺ = SKSᵀ + (I − SKSᵀA) X (I − ASKSᵀ)` with `K = (SᵀAS)⁻¹`; the
//! non-symmetric baseline drops the `X = Xᵀ` constraint. Both have
//! accelerated counterparts sharing the `(α, β, γ)` schedule of the vector solver.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, fa_residual, lambda_min, sqrt_psd, sym_part, DenseMatrix, SymMatrix};
use crate::params::AccelParams;
use crate::record::{should_record, Clock, ConvergenceRecord, RunOptions, Trajectory};
use crate::sketch::{gram_inverse, SketchSample, SketchSpec, Sketcher};
use crate::solver::with_resample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMethod {
    AnalyticConvenient,
    Oracle,
    Heuristic,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamEstimate {
    pub mu_p: f64,
    pub nu_p: f64,
    pub method: ParamMethod,
}

/// `μᴾ = λ_min(A)/Tr(A)` and `νᴾ = Tr(A)/min_i A_ii`, exact for single-coordinate
/// sketches drawn with probabilities `A_ii/Tr(A)`.
pub fn estimate_params_convenient(a: &SymMatrix) -> Result<ParamEstimate> {
    cholesky(a)?;
    let tr = a.trace();
    let min_diag = a.diagonal().iter().copied().fold(f64::INFINITY, f64::min);
    let lmin = lambda_min(a)?;
    if !(lmin > 0.0) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: lmin });
    }
    // summing ratios keeps νᴾ = n exact for a constant diagonal
    let nu_p = a.diagonal().iter().map(|&d| d / min_diag).sum();
    Ok(ParamEstimate { mu_p: lmin / tr, nu_p, method: ParamMethod::AnalyticConvenient })
}

/// `μ = 1/(divisor·ν)`, the guess used when `λ_min(A)` is unavailable.
pub fn heuristic_mu(nu: f64, divisor: f64) -> f64 {
    1.0 / (divisor * nu)
}

fn add_s_left(out: &mut DenseMatrix, s: &SketchSample, m: &DenseMatrix) {
    match &s.coords {
        Some(c) => {
            for (j, &i) in c.iter().enumerate() {
                let mut row = out.row_mut(i);
                row += m.row(j);
            }
        }
        None => out.gemm(1.0, &s.s, m, 1.0),
    }
}

fn add_s_right(out: &mut DenseMatrix, m: &DenseMatrix, s: &SketchSample) {
    match &s.coords {
        Some(c) => {
            for (j, &i) in c.iter().enumerate() {
                let mut col = out.column_mut(i);
                col += m.column(j);
            }
        }
        None => out.gemm(1.0, m, &s.s.transpose(), 1.0),
    }
}

/// The symmetric sketched update before re-symmetrization.
pub fn sap_inverse_update_raw(a: &SymMatrix, x: &DenseMatrix, s: &SketchSample) -> Result<DenseMatrix> {
    let k = gram_inverse(&s.gram(a))?;
    let a_s = s.apply_left(a);
    let u = x.transpose() * &a_s; // XᵀAS
    let w = x * &a_s; // XAS
    let g = a_s.transpose() * &w; // SᵀAXAS
    let mut out = x.clone();
    add_s_left(&mut out, s, &(-(&k * u.transpose())));
    add_s_right(&mut out, &(-(&w * &k)), s);
    let core = &k * g * &k + &k;
    add_s_left(&mut out, s, &(core * s.s.transpose()));
    Ok(out)
}

/// `X⁺ = SKSᵀ + (I − SKSᵀA) X (I − ASKSᵀ)`, re-symmetrized.
pub fn sap_inverse_step(a: &SymMatrix, x: &SymMatrix, s: &SketchSample) -> Result<SymMatrix> {
    let raw = sap_inverse_update_raw(a, x.as_matrix(), s)?;
    Ok(SymMatrix::from_trusted(sym_part(&raw)))
}

/// `X⁺ = X + SK(Sᵀ − SᵀAX)`: projection onto `SᵀAX = Sᵀ` without the symmetry constraint.
pub fn sap_inverse_step_nosym(a: &SymMatrix, x: &DenseMatrix, s: &SketchSample) -> Result<DenseMatrix> {
    let k = gram_inverse(&s.gram(a))?;
    let a_s = s.apply_left(a);
    let rhs = s.s.transpose() - a_s.transpose() * x;
    let mut out = x.clone();
    add_s_left(&mut out, s, &(k * rhs));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvertMode {
    Plain,
    Accel,
    PlainNosym,
    AccelNosym,
}

impl InvertMode {
    pub const ALL: [InvertMode; 4] = [InvertMode::Plain, InvertMode::Accel, InvertMode::PlainNosym, InvertMode::AccelNosym];

    pub fn is_accelerated(self) -> bool {
        matches!(self, InvertMode::Accel | InvertMode::AccelNosym)
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, InvertMode::Plain | InvertMode::Accel)
    }

    pub fn name(self) -> &'static str {
        match self {
            InvertMode::Plain => "plain",
            InvertMode::Accel => "accel",
            InvertMode::PlainNosym => "plain-nosym",
            InvertMode::AccelNosym => "accel-nosym",
        }
    }
}

impl fmt::Display for InvertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InvertMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        InvertMode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown inversion mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverterState {
    pub x: DenseMatrix,
    pub v: DenseMatrix,
    pub iteration: usize,
}

impl InverterState {
    pub fn new(x0: DenseMatrix) -> Self {
        InverterState { v: x0.clone(), x: x0, iteration: 0 }
    }
}

fn project(a: &SymMatrix, x: &DenseMatrix, s: &SketchSample, symmetric: bool) -> Result<DenseMatrix> {
    if symmetric {
        Ok(sym_part(&sap_inverse_update_raw(a, x, s)?))
    } else {
        sap_inverse_step_nosym(a, x, s)
    }
}

/// `Y = αV + (1−α)X`, `X⁺ = project(Y)`, `V⁺ = βV + (1−β)Y − γ(Y − X⁺)`.
pub fn accel_inverse_step(
    a: &SymMatrix,
    state: &InverterState,
    s: &SketchSample,
    p: &AccelParams,
    symmetric: bool,
) -> Result<InverterState> {
    let y = &state.v * p.alpha + &state.x * (1.0 - p.alpha);
    let x = project(a, &y, s, symmetric)?;
    let mut v = &state.v * p.beta + &y * (1.0 - p.beta) - (&y - &x) * p.gamma;
    if symmetric {
        v = sym_part(&v);
    }
    Ok(InverterState { x, v, iteration: state.iteration + 1 })
}

fn plain_inverse_step(a: &SymMatrix, state: &InverterState, s: &SketchSample, symmetric: bool) -> Result<InverterState> {
    let x = project(a, &state.x, s, symmetric)?;
    Ok(InverterState { v: x.clone(), x, iteration: state.iteration + 1 })
}

#[derive(Debug, Clone)]
pub struct InvertConfig {
    pub spec: SketchSpec,
    pub params: AccelParams,
    pub mode: InvertMode,
    pub options: RunOptions,
    /// Record `λ_min` of (the symmetric part of) `X_k`; costs an eigendecomposition per record.
    pub track_lambda_min: bool,
}

pub type MatrixLyapunovFn<'a> = &'a dyn Fn(&InverterState) -> f64;

/// Runs one inversion from `X₀ = V₀ = 0`, recording `‖X_k − A⁻¹‖_{F(A)}`.
///
/// Accelerated modes also emit `‖V_k − A⁻¹‖_{F(A)}` under the method tag `<mode>/V`.
pub fn invert(a: &SymMatrix, cfg: &InvertConfig, lyapunov: Option<MatrixLyapunovFn<'_>>) -> Result<Trajectory<InverterState>> {
    let n = a.n();
    let a_half = sqrt_psd(a)?;
    let mut sketcher = Sketcher::new(cfg.spec, a)?;
    let opts = &cfg.options;
    let clock = Clock::start(opts.time_budget);
    let method = cfg.mode.name();
    let v_method = format!("{method}/V");
    let symmetric = cfg.mode.is_symmetric();
    let mut state = InverterState::new(DenseMatrix::zeros(n, n));
    let mut records = Vec::new();

    let push = |st: &InverterState, records: &mut Vec<ConvergenceRecord>| -> Result<()> {
        let elapsed = clock.elapsed();
        let lmin = if cfg.track_lambda_min { Some(lambda_min(&SymMatrix::from_trusted(sym_part(&st.x)))?) } else { None };
        records.push(ConvergenceRecord {
            method: method.to_string(),
            seed: cfg.spec.seed,
            iteration: st.iteration,
            elapsed_s: elapsed,
            residual: fa_residual(&st.x, &a_half)?,
            lyapunov: lyapunov.map(|f| f(st)),
            lambda_min_x: lmin,
        });
        if cfg.mode.is_accelerated() {
            let lmin_v = if cfg.track_lambda_min { Some(lambda_min(&SymMatrix::from_trusted(sym_part(&st.v)))?) } else { None };
            records.push(ConvergenceRecord {
                method: v_method.clone(),
                seed: cfg.spec.seed,
                iteration: st.iteration,
                elapsed_s: elapsed,
                residual: fa_residual(&st.v, &a_half)?,
                lyapunov: None,
                lambda_min_x: lmin_v,
            });
        }
        Ok(())
    };

    push(&state, &mut records)?;
    let mut truncated = false;
    for k in 1..=opts.max_iter {
        if clock.expired() {
            truncated = true;
            break;
        }
        state = with_resample(&mut sketcher, |s| {
            if cfg.mode.is_accelerated() {
                accel_inverse_step(a, &state, s, &cfg.params, symmetric)
            } else {
                plain_inverse_step(a, &state, s, symmetric)
            }
        })?;
        if !state.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { iteration: k, reason: "non-finite inverse estimate".into() });
        }
        if should_record(k, opts.record_every, opts.max_iter) {
            push(&state, &mut records)?;
        }
    }
    if truncated && records.last().map(|r| r.iteration) != Some(state.iteration) {
        push(&state, &mut records)?;
    }
    Ok(Trajectory { records, state, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_diff;
    use crate::params::derive_params;
    use crate::sketch::SketchStrategy;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn spd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&m * m.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
    }

    fn inverse(a: &SymMatrix) -> DenseMatrix {
        sym_part(&a.as_matrix().clone().try_inverse().unwrap())
    }

    /// Update expanded term by term: `Y + (I − YA)SKSᵀ − SKSᵀAY + SKSᵀAYASKSᵀ`.
    fn literal_update(a: &DenseMatrix, y: &DenseMatrix, s: &DenseMatrix) -> DenseMatrix {
        let n = a.nrows();
        let k = (s.transpose() * a * s).try_inverse().unwrap();
        let sks = s * k * s.transpose();
        let i = DMatrix::identity(n, n);
        y + (i - y * a) * &sks - &sks * a * y + &sks * a * y * a * &sks
    }

    #[test]
    fn convenient_estimates() {
        let e = estimate_params_convenient(&SymMatrix::identity(5)).unwrap();
        assert!((e.mu_p - 0.2).abs() < 1e-15 && (e.nu_p - 5.0).abs() < 1e-15);
        let e = estimate_params_convenient(&SymMatrix::from_diagonal(&[1.0, 2.0]).unwrap()).unwrap();
        assert!((e.mu_p - 1.0 / 3.0).abs() < 1e-15 && (e.nu_p - 3.0).abs() < 1e-15);
        assert!(e.mu_p * e.nu_p <= 1.0 + 1e-15);
        let bad = SymMatrix::from_diagonal(&[1.0, -2.0]).unwrap();
        assert!(matches!(estimate_params_convenient(&bad), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn heuristic_values() {
        assert!((heuristic_mu(100.0, 100.0) - 1e-4).abs() < 1e-19);
        assert!((heuristic_mu(100.0, 10000.0) - 1e-6).abs() < 1e-21);
        for nu in [1.0, 3.0, 1e4] {
            assert!(heuristic_mu(nu, 100.0) <= 1.0 / nu);
        }
    }

    #[test]
    fn fixed_point_all_modes() {
        let a = spd(5, 1);
        let inv = inverse(&a);
        let s = SketchSample::coordinates(5, vec![3]);
        let p = derive_params(0.01, 10.0, 1.0).unwrap();
        let st = InverterState::new(inv.clone());
        for mode in InvertMode::ALL {
            let next = if mode.is_accelerated() {
                accel_inverse_step(&a, &st, &s, &p, mode.is_symmetric()).unwrap()
            } else {
                plain_inverse_step(&a, &st, &s, mode.is_symmetric()).unwrap()
            };
            assert!(rel_diff(&next.x, &inv) <= 1e-12, "{mode}");
            assert!(rel_diff(&next.v, &inv) <= 1e-12, "{mode}");
        }
    }

    #[test]
    fn full_sketch_inverts_in_one_step() {
        let a = spd(4, 2);
        let inv = inverse(&a);
        let s = SketchSample::dense(DMatrix::from_fn(4, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 + if i == j { 4.0 } else { 0.0 }));
        let x = sap_inverse_step(&a, &SymMatrix::identity(4), &s).unwrap();
        assert!(rel_diff(&x, &inv) < 1e-10);
        let x = sap_inverse_step_nosym(&a, &DMatrix::identity(4, 4), &s).unwrap();
        assert!(rel_diff(&x, &inv) < 1e-10);
    }

    #[test]
    fn scalar_case() {
        let a = SymMatrix::from_diagonal(&[4.0]).unwrap();
        let s = SketchSample::coordinates(1, vec![0]);
        for x0 in [-3.0, 0.0, 7.5] {
            let x = sap_inverse_step(&a, &SymMatrix::from_diagonal(&[x0]).unwrap(), &s).unwrap();
            assert!((x[(0, 0)] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn nosym_diagonal_example() {
        let a = SymMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let x = sap_inverse_step_nosym(&a, &DMatrix::zeros(2, 2), &SketchSample::coordinates(2, vec![0])).unwrap();
        let mut e = DMatrix::zeros(2, 2);
        e[(0, 0)] = 1.0;
        assert_eq!(x, e);
    }

    #[test]
    fn matches_literal_update_at_y() {
        let a = spd(6, 4);
        let mut sk = Sketcher::new(SketchSpec::new(SketchStrategy::Gaussian, 2, 3), &a).unwrap();
        let p = derive_params(0.02, 9.0, 1.0).unwrap();
        let mut st = InverterState { x: spd(6, 5).into_inner(), v: spd(6, 6).into_inner(), iteration: 0 };
        for _ in 0..10 {
            let s = sk.sample();
            let y = &st.v * p.alpha + &st.x * (1.0 - p.alpha);
            let lit = literal_update(&a, &y, &s.s);
            let next = accel_inverse_step(&a, &st, &s, &p, true).unwrap();
            assert!(rel_diff(&next.x, &lit) <= 1e-10);
            assert!(rel_diff(&next.x, sap_inverse_step(&a, &SymMatrix::symmetrize(y).unwrap(), &s).unwrap().as_matrix()) <= 1e-10);
            st = next;
        }
    }

    #[test]
    fn symmetry_and_constraint_hold() {
        let a = spd(7, 8);
        for strategy in [SketchStrategy::CoordinateConvenient, SketchStrategy::Gaussian] {
            let mut sk = Sketcher::new(SketchSpec::new(strategy, 2, 1), &a).unwrap();
            let mut x = spd(7, 9).into_inner();
            for _ in 0..30 {
                let s = sk.sample();
                let raw = sap_inverse_update_raw(&a, &x, &s).unwrap();
                assert!((&raw - raw.transpose()).norm() <= 1e-10 * raw.norm());
                let viol = (s.s.transpose() * (a.as_matrix() * &raw - DMatrix::identity(7, 7))).norm();
                assert!(viol <= 1e-9 * (2f64).sqrt(), "constraint {viol}");
                let ns = sap_inverse_step_nosym(&a, &x, &s).unwrap();
                let viol = (s.s.transpose() * (a.as_matrix() * &ns - DMatrix::identity(7, 7))).norm();
                assert!(viol <= 1e-9 * (2f64).sqrt());
                x = sym_part(&raw);
            }
        }
    }

    #[test]
    fn psd_preserved_by_plain_update() {
        let a = spd(6, 10);
        let mut sk = Sketcher::new(SketchSpec::new(SketchStrategy::CoordinateUniform, 1, 2), &a).unwrap();
        let mut x = SymMatrix::identity(6);
        for _ in 0..100 {
            x = sap_inverse_step(&a, &x, &sk.sample()).unwrap();
            let s = crate::linalg::sym_eig(&x).unwrap();
            assert!(s.min() >= -1e-10 * s.max().max(1.0));
        }
    }

    #[test]
    fn degenerate_parameters() {
        let a = spd(4, 11);
        let s = SketchSample::coordinates(4, vec![2]);
        let st = InverterState { x: spd(4, 12).into_inner(), v: spd(4, 13).into_inner(), iteration: 0 };
        // α = 1, β = 1, γ = 0: X⁺ projects V and V stays put
        let q = AccelParams::explicit(1.0, 1.0, 0.0).unwrap();
        let next = accel_inverse_step(&a, &st, &s, &q, true).unwrap();
        assert_eq!(next.v, st.v);
        let direct = sap_inverse_step(&a, &SymMatrix::symmetrize(st.v.clone()).unwrap(), &s).unwrap();
        assert!(rel_diff(&next.x, &direct) < 1e-14);
        // β = 0, γ = 1 collapses V onto X
        let q = AccelParams::explicit(0.4, 0.0, 1.0).unwrap();
        let next = accel_inverse_step(&a, &st, &s, &q, true).unwrap();
        assert!(rel_diff(&next.v, &next.x) < 1e-13);
        // X₀ = V₀ gives Y₀ = X₀
        let eq = InverterState::new(st.x.clone());
        let p = derive_params(0.1, 4.0, 1.0).unwrap();
        let next = accel_inverse_step(&a, &eq, &s, &p, true).unwrap();
        assert!(rel_diff(&next.x, &sym_part(&sap_inverse_update_raw(&a, &st.x, &s).unwrap())) < 1e-14);
    }

    #[test]
    fn plain_on_identity_converges_after_all_coordinates() {
        let a = SymMatrix::identity(4);
        let cfg = InvertConfig {
            spec: SketchSpec::new(SketchStrategy::CoordinateConvenient, 1, 5),
            params: derive_params(0.25, 4.0, 1.0).unwrap(),
            mode: InvertMode::Plain,
            options: RunOptions::iterations(100, 10),
            track_lambda_min: true,
        };
        let t = invert(&a, &cfg, None).unwrap();
        assert!(t.records.last().unwrap().residual < 1e-15);
        assert!((t.records[0].residual - 2.0).abs() < 1e-15);
        assert!(t.records.iter().all(|r| r.lambda_min_x.is_some()));
    }

    #[test]
    fn zero_iterations_and_v_records() {
        let a = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let mut cfg = InvertConfig {
            spec: SketchSpec::new(SketchStrategy::CoordinateConvenient, 1, 5),
            params: derive_params(0.1, 6.0, 1.0).unwrap(),
            mode: InvertMode::Accel,
            options: RunOptions::iterations(0, 1),
            track_lambda_min: false,
        };
        let t = invert(&a, &cfg, None).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[1].method, "accel/V");
        cfg.options = RunOptions::iterations(10, 5);
        let t = invert(&a, &cfg, None).unwrap();
        let iters: Vec<usize> = t.records.iter().filter(|r| r.method == "accel").map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 5, 10]);
    }

    #[test]
    fn converges_on_random_matrix() {
        let a = spd(6, 14);
        let est = estimate_params_convenient(&a).unwrap();
        for mode in InvertMode::ALL {
            let cfg = InvertConfig {
                spec: SketchSpec::new(SketchStrategy::CoordinateConvenient, 1, 7),
                params: derive_params(est.mu_p, est.nu_p, 1.0).unwrap(),
                mode,
                options: RunOptions::iterations(20_000, 20_000),
                track_lambda_min: false,
            };
            let t = invert(&a, &cfg, None).unwrap();
            let last = t.last_residual(mode.name()).unwrap();
            assert!(last < 1e-6, "{mode}: {last}");
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in InvertMode::ALL {
            assert_eq!(m.name().parse::<InvertMode>().unwrap(), m);
        }
        assert!("sym".parse::<InvertMode>().is_err());
    }
}
