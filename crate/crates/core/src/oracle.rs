//! Brute-force spectral constants on small instances.
//!
//! For finite-support (coordinate) sketch distributions every projection `Z`
//! is enumerated with its probability and the moments `E[Z]`, `E[Z]†` and
//! `E[Z E[Z]† Z]` are assembled exactly. Matrix inversion is handled through
//! its vectorization, where each draw acts on `vec(X)` as
//! `Z̄ = I⊗I − (I−P)⊗(I−P)`. Continuous distributions fall back to a
//! Monte-Carlo estimate flagged as approximate.

use crate::error::{Error, Result};
use crate::inverter::InverterState;
use crate::linalg::{inv_sqrt_pd, kron, pinv_small, quad_form, rank, sym_eig, sym_part, vec_of, DenseMatrix, SymMatrix, Vector};
use crate::sketch::{projector_p, SketchSample, SketchSpec, Sketcher};
use crate::solver::SolverState;

/// Largest `n` accepted for vector-case enumeration.
pub const VECTOR_ORACLE_CAP: usize = 64;
/// Largest `n` accepted for the `n² × n²` matrix-case oracle.
pub const MATRIX_ORACLE_CAP: usize = 24;

const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OperatorMoments {
    pub ez: DenseMatrix,
    pub ez_pinv: DenseMatrix,
    /// `E[Z E[Z]† Z]`.
    pub n_moment: DenseMatrix,
    /// Orthogonal projector onto `Range(E[Z])`.
    pub support_projector: DenseMatrix,
    /// Monte-Carlo estimate rather than exact enumeration.
    pub approximate: bool,
    /// `E[rank Z]`.
    pub expected_rank: f64,
}

/// Draws as `(probability, operator)` pairs.
pub type Enumeration = Vec<(f64, DenseMatrix)>;

fn range_basis(ez: &DenseMatrix) -> Result<(Vector, DenseMatrix)> {
    let spec = sym_eig(&SymMatrix::symmetrize(ez.clone())?)?;
    let n = ez.nrows();
    let lmax = spec.max();
    if !(lmax > 0.0) {
        return Err(Error::DegenerateDistribution);
    }
    let floor = n as f64 * 1e-12 * lmax;
    let keep: Vec<usize> = (0..n).filter(|&i| spec.eigenvalues[i] > floor).collect();
    let vals = Vector::from_iterator(keep.len(), keep.iter().map(|&i| spec.eigenvalues[i]));
    let vecs = spec.eigenvectors.select_columns(keep.iter());
    Ok((vals, vecs))
}

/// Exact moments of a finite enumeration.
pub fn moments_from(draws: &[(f64, DenseMatrix)]) -> Result<OperatorMoments> {
    let dim = draws.first().map(|(_, z)| z.nrows()).ok_or(Error::DegenerateDistribution)?;
    let mut ez = DenseMatrix::zeros(dim, dim);
    let mut expected_rank = 0.0;
    for (p, z) in draws {
        ez += z * *p;
        expected_rank += p * rank(z, RANK_TOL) as f64;
    }
    let ez = sym_part(&ez);
    let (vals, vecs) = range_basis(&ez)?;
    let mut scaled = vecs.clone();
    for (j, l) in vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / l);
    }
    let ez_pinv = sym_part(&(&scaled * vecs.transpose()));
    let mut n_moment = DenseMatrix::zeros(dim, dim);
    for (p, z) in draws {
        n_moment += (z * &ez_pinv * z) * *p;
    }
    Ok(OperatorMoments {
        support_projector: &vecs * vecs.transpose(),
        ez,
        ez_pinv,
        n_moment: sym_part(&n_moment),
        approximate: false,
        expected_rank,
    })
}

/// `Z = MᵀS (SᵀMMᵀS)† SᵀM` for the system matrix `M` (already including any `B^{-1/2}`).
fn z_of(m: &DenseMatrix, s: &SketchSample) -> Result<DenseMatrix> {
    let st_m = s.s.transpose() * m;
    let gram = &st_m * st_m.transpose();
    Ok(sym_part(&(st_m.transpose() * pinv_small(&gram, None)? * &st_m)))
}

/// The system operator seen in the `B`-geometry, `A B^{-1/2}`.
pub fn weighted_operator(a: &SymMatrix, b: Option<&SymMatrix>) -> Result<DenseMatrix> {
    match b {
        None => Ok(a.as_matrix().clone()),
        Some(b) => Ok(a.as_matrix() * inv_sqrt_pd(b)?.as_matrix()),
    }
}

/// Enumerates the vector-case projections `Z_i` over an explicit sketch support.
pub fn z_vector_from_support(a: &SymMatrix, b: Option<&SymMatrix>, support: &[(f64, SketchSample)]) -> Result<Enumeration> {
    if a.n() > VECTOR_ORACLE_CAP {
        return Err(Error::OracleUnavailable(format!("n = {} exceeds {VECTOR_ORACLE_CAP}", a.n())));
    }
    let m = weighted_operator(a, b)?;
    support.iter().map(|(p, s)| Ok((*p, z_of(&m, s)?))).collect()
}

/// `(p_i, Z_i)` for `Ax = b` with projections in the `B`-norm (`None` is `B = I`).
pub fn enumerate_z_vector(a: &SymMatrix, b: Option<&SymMatrix>, spec: &SketchSpec) -> Result<Enumeration> {
    z_vector_from_support(a, b, &spec.finite_support(a)?)
}

/// `(p_i, Z̄_i)` with `Z̄ = I⊗I − (I−P)⊗(I−P)` over an explicit sketch support.
pub fn zbar_from_support(a: &SymMatrix, support: &[(f64, SketchSample)]) -> Result<Enumeration> {
    let n = a.n();
    if n > MATRIX_ORACLE_CAP {
        return Err(Error::OracleUnavailable(format!("n = {n} exceeds {MATRIX_ORACLE_CAP}")));
    }
    let a_half = crate::linalg::sqrt_psd(a)?;
    let id = DenseMatrix::identity(n, n);
    let big_id = DenseMatrix::identity(n * n, n * n);
    support
        .iter()
        .map(|(p, s)| {
            let q = &id - projector_p(a, &a_half, s)?.into_inner();
            Ok((*p, &big_id - kron(&q, &q)?))
        })
        .collect()
}

pub fn enumerate_zbar_matrix(a: &SymMatrix, spec: &SketchSpec) -> Result<Enumeration> {
    zbar_from_support(a, &spec.finite_support(a)?)
}

/// `E[P]` over the support of `spec`.
pub fn expected_projector(a: &SymMatrix, spec: &SketchSpec) -> Result<DenseMatrix> {
    let a_half = crate::linalg::sqrt_psd(a)?;
    let mut out = DenseMatrix::zeros(a.n(), a.n());
    for (p, s) in spec.finite_support(a)? {
        out += projector_p(a, &a_half, &s)?.into_inner() * p;
    }
    Ok(sym_part(&out))
}

/// Monte-Carlo moments for continuous distributions.
///
/// Two passes over the same seeded stream: the first estimates `E[Z]`, the
/// second `E[Z E[Z]† Z]` with the pseudoinverse from the first.
pub fn monte_carlo_moments(
    a: &SymMatrix,
    spec: &SketchSpec,
    samples: usize,
    mut op: impl FnMut(&SketchSample) -> Result<DenseMatrix>,
) -> Result<OperatorMoments> {
    if samples == 0 {
        return Err(Error::DegenerateDistribution);
    }
    let mut sk = Sketcher::new(*spec, a)?;
    let first = op(&sk.sample())?;
    let dim = first.nrows();
    let mut ez = first.clone();
    let mut expected_rank = rank(&first, RANK_TOL) as f64;
    for _ in 1..samples {
        let z = op(&sk.sample())?;
        expected_rank += rank(&z, RANK_TOL) as f64;
        ez += z;
    }
    let ez = sym_part(&(ez / samples as f64));
    let (vals, vecs) = range_basis(&ez)?;
    let mut scaled = vecs.clone();
    for (j, l) in vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / l);
    }
    let ez_pinv = sym_part(&(&scaled * vecs.transpose()));
    let mut sk = Sketcher::new(*spec, a)?;
    let mut n_moment = DenseMatrix::zeros(dim, dim);
    for _ in 0..samples {
        let z = op(&sk.sample())?;
        n_moment += &z * &ez_pinv * &z;
    }
    Ok(OperatorMoments {
        support_projector: &vecs * vecs.transpose(),
        ez,
        ez_pinv,
        n_moment: sym_part(&(n_moment / samples as f64)),
        approximate: true,
        expected_rank: expected_rank / samples as f64,
    })
}

/// Vector-case moments for any strategy; Gaussian sketches use `samples` Monte-Carlo draws.
pub fn vector_moments(a: &SymMatrix, b: Option<&SymMatrix>, spec: &SketchSpec, samples: usize) -> Result<OperatorMoments> {
    if spec.strategy.is_coordinate() {
        moments_from(&enumerate_z_vector(a, b, spec)?)
    } else {
        let m = weighted_operator(a, b)?;
        monte_carlo_moments(a, spec, samples, |s| z_of(&m, s))
    }
}

/// Matrix-case (`Z̄`) moments for any strategy.
pub fn matrix_moments(a: &SymMatrix, spec: &SketchSpec, samples: usize) -> Result<OperatorMoments> {
    if spec.strategy.is_coordinate() {
        return moments_from(&enumerate_zbar_matrix(a, spec)?);
    }
    let n = a.n();
    if n > MATRIX_ORACLE_CAP {
        return Err(Error::OracleUnavailable(format!("n = {n} exceeds {MATRIX_ORACLE_CAP}")));
    }
    let a_half = crate::linalg::sqrt_psd(a)?;
    let id = DenseMatrix::identity(n, n);
    let big_id = DenseMatrix::identity(n * n, n * n);
    monte_carlo_moments(a, spec, samples, |s| {
        let q = &id - projector_p(a, &a_half, s)?.into_inner();
        Ok(&big_id - kron(&q, &q)?)
    })
}

/// `μ` = smallest eigenvalue of `E[Z]` on its range; `ν` = largest eigenvalue of
/// `E[Z]^{-1/2} E[Z E[Z]† Z] E[Z]^{-1/2}` on the same range.
pub fn mu_nu_bruteforce(m: &OperatorMoments) -> Result<(f64, f64)> {
    let (vals, vecs) = range_basis(&m.ez)?;
    let mu = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w = vecs.clone();
    for (j, l) in vals.iter().enumerate() {
        w.column_mut(j).scale_mut(1.0 / l.sqrt());
    }
    let c = SymMatrix::symmetrize(w.transpose() * &m.n_moment * &w)?;
    let nu = sym_eig(&c)?.max();
    Ok((mu, nu))
}

/// `Null(A) = Null(E[Z])`, compared through ranks of the two operators and their stack.
pub fn check_exactness(m: &OperatorMoments, a_op: &DenseMatrix) -> bool {
    if a_op.ncols() != m.ez.ncols() {
        return false;
    }
    let ra = rank(a_op, RANK_TOL);
    let rz = rank(&m.ez, RANK_TOL);
    let scale_a = a_op.norm().max(f64::MIN_POSITIVE);
    let scale_z = m.ez.norm().max(f64::MIN_POSITIVE);
    let mut stacked = DenseMatrix::zeros(a_op.nrows() + m.ez.nrows(), a_op.ncols());
    stacked.rows_mut(0, a_op.nrows()).copy_from(&(a_op / scale_a));
    stacked.rows_mut(a_op.nrows(), m.ez.nrows()).copy_from(&(&m.ez / scale_z));
    let rs = rank(&stacked, RANK_TOL);
    ra == rz && rz == rs
}

/// `rank(A*)/E[rank Z] ≤ ν`; `None` when `Range(A*)` is not the whole space.
pub fn rank_bound_check(m: &OperatorMoments, a_op: &DenseMatrix, nu: f64) -> Option<bool> {
    let r = rank(a_op, RANK_TOL);
    if r != a_op.ncols() {
        return None;
    }
    Some(r as f64 / m.expected_rank <= nu + 1e-9)
}

/// `‖v − x*‖²_{E[Z]†} + (1/μ)‖x − x*‖²`, measured after mapping through `B^{1/2}` when given.
pub fn lyapunov_vector(state: &SolverState, x_star: &Vector, m: &OperatorMoments, mu: f64, b_half: Option<&SymMatrix>) -> f64 {
    let map = |e: Vector| match b_half {
        Some(h) => h.as_matrix() * e,
        None => e,
    };
    let ev = map(&state.v - x_star);
    let ex = map(&state.x - x_star);
    quad_form(&ev, &m.ez_pinv) + ex.norm_squared() / mu
}

/// `‖V − A⁻¹‖²_M + (1/μ)‖X − A⁻¹‖²_{F(A)}` with the `M`-norm taken as
/// `vec(A^{1/2}VA^{1/2} − I)ᵀ E[Z̄]† vec(A^{1/2}VA^{1/2} − I)`.
pub fn lyapunov_matrix(state: &InverterState, a_half: &SymMatrix, m: &OperatorMoments, mu: f64) -> Result<f64> {
    let n = a_half.n();
    if m.ez.nrows() != n * n {
        return Err(Error::OracleUnavailable(format!("moments are {0}x{0}, need n² = {1}", m.ez.nrows(), n * n)));
    }
    let shifted = |x: &DenseMatrix| {
        let mut w = a_half.as_matrix() * x * a_half.as_matrix();
        for i in 0..n {
            w[(i, i)] -= 1.0;
        }
        w
    };
    let wv = vec_of(&shifted(&state.v));
    let wx = shifted(&state.x);
    Ok(quad_form(&wv, &m.ez_pinv) + wx.norm_squared() / mu)
}
