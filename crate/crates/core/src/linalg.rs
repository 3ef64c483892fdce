//! Dense symmetric linear algebra used by every solver in the crate.
//!
//! Storage is column-major `nalgebra` matrices. [`SymMatrix`] is a checked
//! wrapper that guarantees symmetry and finiteness at construction, so
//! downstream code can rely on both without rechecking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default cap on the side of a Kronecker product (n ≤ 64 for n² × n² oracles).
pub const KRON_DIM_CAP: usize = 64 * 64;

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DenseMatrix);

impl SymMatrix {
    /// Checks squareness, finiteness and `|a_ij - a_ji| <= 1e-12 * max(1, |a_ij|)`.
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > 1e-12 * m[(i, j)].abs().max(1.0) {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`.
    pub fn symmetrize(m: DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        Ok(SymMatrix(sym_part(&m)))
    }

    pub(crate) fn from_trusted(m: DenseMatrix) -> Self {
        debug_assert!(m.is_square());
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DenseMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DenseMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DenseMatrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> Vector {
        self.0.diagonal()
    }

    pub fn is_identity(&self) -> bool {
        let n = self.n();
        (0..n).all(|j| (0..n).all(|i| self.0[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DenseMatrix;
    fn deref(&self) -> &DenseMatrix {
        &self.0
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vector,
    pub eigenvectors: DenseMatrix,
}

impl Spectrum {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `U f(Λ) Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let s = f(lam);
            scaled.column_mut(j).scale_mut(s);
        }
        sym_part(&(scaled * u.transpose()))
    }
}

pub fn check_finite(m: &DenseMatrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn sym_part(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

pub fn sym_eig(a: &SymMatrix) -> Result<Spectrum> {
    check_finite(a)?;
    let n = a.n();
    if n == 0 {
        return Ok(Spectrum { eigenvalues: Vector::zeros(0), eigenvectors: DenseMatrix::zeros(0, 0) });
    }
    let eig = a.as_matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(a: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(a)?.min())
}

/// Lower-triangular Cholesky factor.
///
/// A pivot at or below `n * 1e-14 * max_i a_ii` is reported as
/// [`Error::NotPositiveDefinite`].
pub fn cholesky(a: &SymMatrix) -> Result<DenseMatrix> {
    let n = a.n();
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = n as f64 * 1e-14 * max_diag;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = rhs` given the lower Cholesky factor `L`.
pub fn cholesky_solve(l: &DenseMatrix, rhs: &DenseMatrix) -> DenseMatrix {
    let n = l.nrows();
    let mut x = rhs.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

fn psd_floor(spec: &Spectrum) -> f64 {
    let n = spec.eigenvalues.len() as f64;
    let scale = spec.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    n * 1e-12 * scale
}

/// Unique symmetric PSD square root. Eigenvalues in `[-n·1e-12·λ_max, 0)` are clamped to zero.
pub fn sqrt_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let spec = sym_eig(a)?;
    if spec.eigenvalues.is_empty() {
        return Ok(SymMatrix::zeros(0));
    }
    if spec.min() < -psd_floor(&spec) {
        return Err(Error::NotPsd(spec.min()));
    }
    Ok(SymMatrix(spec.reconstruct_with(|l| l.max(0.0).sqrt())))
}

/// Inverse of the PSD square root, `A^{-1/2}`, for positive definite `A`.
pub fn inv_sqrt_pd(a: &SymMatrix) -> Result<SymMatrix> {
    let spec = sym_eig(a)?;
    if spec.eigenvalues.is_empty() {
        return Ok(SymMatrix::zeros(0));
    }
    if spec.min() <= psd_floor(&spec) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: spec.min() });
    }
    Ok(SymMatrix(spec.reconstruct_with(|l| 1.0 / l.sqrt())))
}

/// Default truncation used by [`pinv_small`]: `max(rows, cols) · 1e-12 · σ_max`.
pub fn default_pinv_tol(m: &DenseMatrix) -> f64 {
    let smax = m.clone().singular_values().iter().fold(0.0f64, |a, &b| a.max(b));
    m.nrows().max(m.ncols()) as f64 * 1e-12 * smax
}

/// Moore–Penrose pseudoinverse via the SVD. `tol = None` picks [`default_pinv_tol`].
pub fn pinv_small(m: &DenseMatrix, tol: Option<f64>) -> Result<DenseMatrix> {
    check_finite(m)?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DenseMatrix::zeros(c, r));
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = tol.unwrap_or(r.max(c) as f64 * 1e-12 * smax);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DenseMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    Ok(out)
}

/// Pseudoinverse of a symmetric PSD matrix through its spectrum, truncating
/// eigenvalues at or below `n · 1e-12 · λ_max`.
pub fn pinv_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let spec = sym_eig(a)?;
    if spec.eigenvalues.is_empty() {
        return Ok(SymMatrix::zeros(0));
    }
    let floor = psd_floor(&spec);
    Ok(SymMatrix(spec.reconstruct_with(|l| if l > floor { 1.0 / l } else { 0.0 })))
}

/// Numerical rank with relative tolerance `tol · σ_max`.
pub fn rank(m: &DenseMatrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    kron_capped(a, b, KRON_DIM_CAP)
}

/// Kronecker product with block `(i, j)` equal to `a[(i, j)] · b`.
pub fn kron_capped(a: &DenseMatrix, b: &DenseMatrix, cap: usize) -> Result<DenseMatrix> {
    check_finite(a)?;
    check_finite(b)?;
    let rows = a.nrows() * b.nrows();
    let cols = a.ncols() * b.ncols();
    let dim = rows.max(cols);
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    Ok(a.kronecker(b))
}

/// Column-stacking vectorization.
pub fn vec_of(m: &DenseMatrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// `‖X − A⁻¹‖_{F(A)} = ‖A^{1/2} X A^{1/2} − I‖_F`, evaluated without forming `A⁻¹`.
pub fn fa_residual(x: &DenseMatrix, a_half: &SymMatrix) -> Result<f64> {
    let n = a_half.n();
    if x.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, A is {n}x{n}",
            x.nrows(),
            x.ncols()
        )));
    }
    let mut w = a_half.as_matrix() * x * a_half.as_matrix();
    for i in 0..n {
        w[(i, i)] -= 1.0;
    }
    Ok(w.norm())
}

/// `vᵀ G v`.
pub fn quad_form(v: &Vector, g: &DenseMatrix) -> f64 {
    v.dot(&(g * v))
}

/// Relative Frobenius distance `‖a − b‖ / max(1, ‖b‖)`.
pub fn rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormal(n: usize, seed: u64) -> DenseMatrix {
        random(n, n, seed).qr().q()
    }

    #[test]
    fn eig_small_cases() {
        let s = sym_eig(&SymMatrix::from_diagonal(&[2.0, 1.0]).unwrap()).unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[1.0, 2.0]);
        let s = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert!(s.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let a = SymMatrix::new(DenseMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let s = sym_eig(&a).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_and_is_orthonormal() {
        let m = random(6, 6, 3);
        let a = SymMatrix::symmetrize(m).unwrap();
        let s = sym_eig(&a).unwrap();
        let rec = s.reconstruct_with(|l| l);
        assert!(rel_diff(&rec, &a) < 1e-10);
        let utu = s.eigenvectors.transpose() * &s.eigenvectors;
        assert!((utu - DenseMatrix::identity(6, 6)).norm() < 1e-10);
        assert!(s.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_non_finite_and_asymmetric() {
        let mut m = DenseMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert_eq!(SymMatrix::new(m), Err(Error::NonFinite));
        let m = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn cholesky_cases() {
        let l = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(l, DenseMatrix::identity(3, 3));
        let l = cholesky(&SymMatrix::from_diagonal(&[4.0, 9.0]).unwrap()).unwrap();
        assert_eq!(l, DenseMatrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0])));
        let err = cholesky(&SymMatrix::from_diagonal(&[1.0, -1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn cholesky_reconstructs_and_solves() {
        let m = random(5, 5, 11);
        let a = SymMatrix::new(&m * m.transpose() + DenseMatrix::identity(5, 5)).unwrap();
        let l = cholesky(&a).unwrap();
        assert!(rel_diff(&(&l * l.transpose()), &a) < 1e-10);
        let rhs = random(5, 2, 12);
        let x = cholesky_solve(&l, &rhs);
        assert!(((a.as_matrix() * x) - rhs).norm() < 1e-10);
    }

    #[test]
    fn sqrt_cases() {
        assert!(rel_diff(&sqrt_psd(&SymMatrix::identity(3)).unwrap(), &DenseMatrix::identity(3, 3)) < 1e-14);
        let r = sqrt_psd(&SymMatrix::from_diagonal(&[4.0, 16.0]).unwrap()).unwrap();
        assert!(rel_diff(&r, &DenseMatrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]))) < 1e-14);

        // A = U diag(1, 9) Uᵀ from a known rotation
        let u = orthonormal(2, 5);
        let a = SymMatrix::symmetrize(&u * DenseMatrix::from_diagonal(&Vector::from_vec(vec![1.0, 9.0])) * u.transpose()).unwrap();
        let r = sqrt_psd(&a).unwrap();
        assert!(rel_diff(&(r.as_matrix() * r.as_matrix()), &a) < 1e-9);
        let expected = &u * DenseMatrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0])) * u.transpose();
        assert!(rel_diff(&r, &expected) < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let a = SymMatrix::from_diagonal(&[1.0, -0.5]).unwrap();
        assert!(matches!(sqrt_psd(&a), Err(Error::NotPsd(_))));
        // tiny negative eigenvalue is clamped
        let a = SymMatrix::from_diagonal(&[1.0, -1e-15]).unwrap();
        let r = sqrt_psd(&a).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn pinv_cases() {
        let p = pinv_small(&DenseMatrix::identity(3, 3), None).unwrap();
        assert!(rel_diff(&p, &DenseMatrix::identity(3, 3)) < 1e-14);
        let d = DenseMatrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        let p = pinv_small(&d, None).unwrap();
        assert!(rel_diff(&p, &DenseMatrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]))) < 1e-14);

        // full column rank: M† = (MᵀM)⁻¹Mᵀ
        let m = random(4, 2, 9);
        let normal = (m.transpose() * &m).try_inverse().unwrap() * m.transpose();
        assert!(rel_diff(&pinv_small(&m, None).unwrap(), &normal) < 1e-10);
    }

    #[test]
    fn kron_cases() {
        let i2 = DenseMatrix::identity(2, 2);
        assert_eq!(kron(&i2, &i2).unwrap(), DenseMatrix::identity(4, 4));
        let a = DenseMatrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let b = DenseMatrix::from_diagonal(&Vector::from_vec(vec![3.0, 4.0]));
        let k = kron(&a, &b).unwrap();
        assert_eq!(k.diagonal().as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        assert!(matches!(kron_capped(&i2, &i2, 3), Err(Error::DimensionCap { dim: 4, cap: 3 })));
    }

    #[test]
    fn kron_vec_identity() {
        let a = random(3, 3, 21);
        let b = random(3, 3, 22);
        let x = random(3, 3, 23);
        let lhs = kron(&a, &b).unwrap() * vec_of(&x);
        let rhs = vec_of(&(&b * &x * a.transpose()));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn fa_residual_cases() {
        // X = A⁻¹
        let a = SymMatrix::from_diagonal(&[2.0, 5.0]).unwrap();
        let half = sqrt_psd(&a).unwrap();
        let inv = a.as_matrix().clone().try_inverse().unwrap();
        assert!(fa_residual(&inv, &half).unwrap() < 1e-14);
        // A = I, X = 0 gives sqrt(n)
        let r = fa_residual(&DenseMatrix::zeros(4, 4), &SymMatrix::identity(4)).unwrap();
        assert!((r - 2.0).abs() < 1e-14);
        // A = diag(1, 4), X = I: A^{1/2} I A^{1/2} - I = diag(0, 3)
        let half = sqrt_psd(&SymMatrix::from_diagonal(&[1.0, 4.0]).unwrap()).unwrap();
        let r = fa_residual(&DenseMatrix::identity(2, 2), &half).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        assert!(fa_residual(&DenseMatrix::zeros(3, 3), &half).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn sqrt_squares_back(seed in 0u64..10_000, n in 1usize..7) {
                let u = orthonormal(n, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
                let d: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..10.0)).collect();
                let a = SymMatrix::symmetrize(&u * DenseMatrix::from_diagonal(&Vector::from_vec(d)) * u.transpose()).unwrap();
                let r = sqrt_psd(&a).unwrap();
                prop_assert!((r.as_matrix() * r.as_matrix() - a.as_matrix()).norm() <= 1e-9 * a.norm().max(1.0));
            }

            #[test]
            fn pinv_moore_penrose(seed in 0u64..10_000, m in 1usize..6, n in 1usize..6, rk in 0usize..6) {
                let rk = rk.min(m).min(n);
                let mat = random(m, rk, seed) * random(rk, n, seed + 1);
                let p = pinv_small(&mat, None).unwrap();
                let scale = mat.norm().max(1.0);
                prop_assert!((&mat * &p * &mat - &mat).norm() <= 1e-9 * scale);
                prop_assert!((&p * &mat * &p - &p).norm() <= 1e-9 * p.norm().max(1.0));
                let mp = &mat * &p;
                let pm = &p * &mat;
                prop_assert!((&mp - mp.transpose()).norm() <= 1e-10 * mp.norm().max(1.0));
                prop_assert!((&pm - pm.transpose()).norm() <= 1e-10 * pm.norm().max(1.0));
            }

            #[test]
            fn kron_matches_vec_identity(seed in 0u64..10_000, p in 1usize..4, q in 1usize..4) {
                let a = random(p, p, seed);
                let b = random(q, q, seed + 7);
                let x = random(q, p, seed + 13);
                let lhs = kron(&a, &b).unwrap() * vec_of(&x);
                let rhs = vec_of(&(&b * &x * a.transpose()));
                prop_assert!((lhs - rhs).norm() <= 1e-12);
            }

            #[test]
            fn fa_residual_matches_explicit_inverse(seed in 0u64..10_000, n in 1usize..6) {
                let m = random(n, n, seed);
                let a = SymMatrix::symmetrize(&m * m.transpose() + DenseMatrix::identity(n, n) * 0.5).unwrap();
                let half = sqrt_psd(&a).unwrap();
                let x = random(n, n, seed + 3);
                let inv = a.as_matrix().clone().try_inverse().unwrap();
                let direct = (half.as_matrix() * (&x - inv) * half.as_matrix()).norm();
                let r = fa_residual(&x, &half).unwrap();
                prop_assert!((r - direct).abs() <= 1e-8 * direct.max(1.0));
            }
        }
    }
}
