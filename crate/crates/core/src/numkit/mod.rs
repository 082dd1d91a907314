//! Numerical kernels shared by the bounds and the estimators: low-rank-plus-white
//! covariance algebra, projections, Schur complements, guarded inversion of
//! information matrices and a central-difference Jacobian.

pub mod identities;

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector, Complex64, RMatrix};

/// Condition number above which information matrices and Gram matrices are refused.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative eigenvalue floor used when factoring a PSD matrix.
pub const PSD_FLOOR: f64 = 1e-12;
/// Largest negative eigenvalue (relative to the trace) tolerated before a matrix is rejected as non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-8;

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    (0..a.nrows()).all(|i| (0..=i).all(|j| (a[(i, j)] - a[(j, i)].conj()).norm() <= tol * scale))
}

/// Returns a factor `L` with `L L^H` equal to `a` after flooring its eigenvalues at
/// `PSD_FLOOR * trace`. Negative eigenvalues beyond `PSD_TOLERANCE * trace` are rejected.
pub fn psd_factor(a: &CMatrix) -> Result<CMatrix> {
    if !is_hermitian(a, 1e-10) {
        return Err(Error::NotPsd("matrix is not Hermitian".into()));
    }
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
    if trace == 0.0 && a.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Ok(CMatrix::zeros(n, n));
    }
    if !(trace > 0.0) {
        return Err(Error::NotPsd(format!("trace {trace} is not positive")));
    }
    let sym = hermitian_part(a);
    let eig = SymmetricEigen::new(sym);
    let floor = PSD_FLOOR * trace;
    let mut clipped = false;
    for &l in eig.eigenvalues.iter() {
        if l < -PSD_TOLERANCE * trace {
            return Err(Error::NotPsd(format!(
                "eigenvalue {l:.3e} below tolerance (trace {trace:.3e})"
            )));
        }
        clipped |= l < floor;
    }
    if !clipped {
        if let Some(ch) = sym_chol(&hermitian_part(a)) {
            return Ok(ch);
        }
    }
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * CMatrix::from_diagonal(&vals.map(|l| Complex64::new(l, 0.0))) * v.adjoint();
    if let Some(ch) = sym_chol(&rebuilt) {
        return Ok(ch);
    }
    let mut f = v.clone();
    for (j, l) in vals.iter().enumerate() {
        let s = l.sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

fn sym_chol(a: &CMatrix) -> Option<CMatrix> {
    a.clone().cholesky().map(|c| c.l())
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Real symmetric part of a real matrix.
pub fn symmetrize(a: &RMatrix) -> RMatrix {
    (a + a.transpose()).scale(0.5)
}

/// The covariance `H A H^H + noise * I`, never formed explicitly.
#[derive(Debug, Clone)]
pub struct LowRankCovariance {
    pub basis: CMatrix,
    pub core: CMatrix,
    pub noise: f64,
    factor: CMatrix,
    /// Cholesky factor of `noise * I + L^H G L` where `A = L L^H`, `G = H^H H`.
    capacitance: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
    /// `L^H G L`
    inner: CMatrix,
}

impl LowRankCovariance {
    pub fn new(basis: CMatrix, core: CMatrix, noise: f64) -> Result<Self> {
        if core.nrows() != basis.ncols() || !core.is_square() {
            return Err(Error::InvalidArgument(format!(
                "core is {}x{} but basis has {} columns",
                core.nrows(),
                core.ncols(),
                basis.ncols()
            )));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise power must be positive, got {noise}"
            )));
        }
        let factor = psd_factor(&core)?;
        let gram = basis.adjoint() * &basis;
        Self::from_parts(basis, core, noise, factor, &gram)
    }

    /// Builds the covariance from a precomputed Gram matrix `H^H H` and a factor of the core.
    pub(crate) fn from_parts(
        basis: CMatrix,
        core: CMatrix,
        noise: f64,
        factor: CMatrix,
        gram: &CMatrix,
    ) -> Result<Self> {
        let inner = hermitian_part(&(factor.adjoint() * gram * &factor));
        let q = inner.nrows();
        let cap = &inner + CMatrix::identity(q, q).scale(noise);
        let capacitance = cap
            .cholesky()
            .ok_or_else(|| Error::numerical("capacitance system is not positive definite", f64::INFINITY))?;
        Ok(Self {
            basis,
            core,
            noise,
            factor,
            capacitance,
            inner,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `K = A (noise I + G A)^{-1}`, the kernel with `R^{-1} = (I - H K H^H) / noise`.
    pub fn kernel(&self) -> CMatrix {
        let lh = self.factor.adjoint();
        &self.factor * self.capacitance.solve(&lh)
    }

    /// `R^{-1} x`.
    pub fn solve(&self, x: &CMatrix) -> Result<CMatrix> {
        if x.nrows() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has {} rows, covariance is {}",
                x.nrows(),
                self.dim()
            )));
        }
        let proj = self.basis.adjoint() * x;
        let t = self.factor.adjoint() * proj;
        let t = self.capacitance.solve(&t);
        let corr = &self.basis * (&self.factor * t);
        Ok((x - corr).unscale(self.noise))
    }

    pub fn solve_vec(&self, x: &CVector) -> Result<CVector> {
        let m = CMatrix::from_column_slice(x.len(), 1, x.as_slice());
        Ok(self.solve(&m)?.column(0).into_owned())
    }

    /// `log det R`.
    pub fn logdet(&self) -> f64 {
        let q = self.inner.nrows();
        let l = self.capacitance.l();
        let chol_logdet: f64 = (0..q).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
        // det(noise I + L^H G L) = noise^q det(I + L^H G L / noise)
        self.dim() as f64 * self.noise.ln() + chol_logdet - q as f64 * self.noise.ln()
    }

    /// Dense `R`, for tests and small oracles only.
    pub fn dense(&self) -> CMatrix {
        let n = self.dim();
        &self.basis * &self.core * self.basis.adjoint() + CMatrix::identity(n, n).scale(self.noise)
    }
}

/// Hermitian eigen-decomposition based condition number of a Hermitian PSD matrix.
pub fn hermitian_condition(a: &CMatrix) -> f64 {
    let eig = SymmetricEigen::new(hermitian_part(a));
    condition_from(eig.eigenvalues.iter().copied())
}

fn condition_from(vals: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = vals.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v.abs())));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `G x = b` for a Hermitian positive definite Gram matrix, refusing when
/// the condition number exceeds [`MAX_CONDITION`].
pub fn gram_solve(gram: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let cond = hermitian_condition(gram);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::numerical("steering matrix is rank deficient", cond));
    }
    let ch = hermitian_part(gram)
        .cholesky()
        .ok_or_else(|| Error::numerical("Gram matrix is not positive definite", cond))?;
    Ok(ch.solve(rhs))
}

/// `x - H (H^H H)^{-1} H^H x`.
pub fn orth_projection_apply(h: &CMatrix, x: &CVector) -> Result<CVector> {
    let g = h.adjoint() * h;
    let z = h.adjoint() * x;
    let coef = gram_solve(&g, &CMatrix::from_column_slice(z.len(), 1, z.as_slice()))?;
    Ok(x - h * coef.column(0))
}

/// Inverse of a real symmetric positive definite matrix.
///
/// The matrix is first equilibrated by its diagonal; the reported condition number
/// is that of the equilibrated matrix. Refuses above [`MAX_CONDITION`].
pub fn invert_spd(f: &RMatrix) -> Result<(RMatrix, f64)> {
    let n = f.nrows();
    if n == 0 {
        return Ok((RMatrix::zeros(0, 0), 1.0));
    }
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical(
            "information matrix has non-finite entries",
            f64::INFINITY,
        ));
    }
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = f[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if d.contains(&0.0) {
        return Err(Error::numerical(
            "information matrix has a non-positive diagonal",
            f64::INFINITY,
        ));
    }
    let scaled = RMatrix::from_fn(n, n, |i, j| 0.5 * (f[(i, j)] + f[(j, i)]) * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled);
    let cond = condition_from(eig.eigenvalues.iter().copied());
    if !(cond <= MAX_CONDITION) {
        return Err(Error::numerical(
            "information matrix is too ill-conditioned to invert",
            cond,
        ));
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let v = &eig.eigenvectors;
    let inner = v * RMatrix::from_diagonal(&inv_vals) * v.transpose();
    let out = RMatrix::from_fn(n, n, |i, j| inner[(i, j)] * d[i] * d[j]);
    Ok((symmetrize(&out), cond))
}

/// Moore-Penrose pseudo-inverse of a real symmetric matrix.
pub fn pinv_symmetric(f: &RMatrix) -> RMatrix {
    let n = f.nrows();
    let eig = SymmetricEigen::new(symmetrize(f));
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = top * n as f64 * f64::EPSILON * 16.0;
    let inv = eig.eigenvalues.map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    symmetrize(&(v * RMatrix::from_diagonal(&inv) * v.transpose()))
}

#[derive(Debug, Clone)]
pub struct SchurResult {
    pub matrix: RMatrix,
    /// Set when the trailing block had to be pseudo-inverted.
    pub pseudo_inverse_used: bool,
    /// Condition number of the (equilibrated) trailing block.
    pub condition: f64,
}

/// `F11 - F12 F22^{-1} F21` with `F11` the leading `block_size` square block.
pub fn schur_complement(f: &RMatrix, block_size: usize) -> Result<SchurResult> {
    let n = f.nrows();
    if !f.is_square() || block_size > n {
        return Err(Error::InvalidArgument(format!(
            "cannot take a {block_size}-block Schur complement of a {}x{} matrix",
            f.nrows(),
            f.ncols()
        )));
    }
    let m = n - block_size;
    let f11 = f.view((0, 0), (block_size, block_size)).into_owned();
    if m == 0 {
        return Ok(SchurResult {
            matrix: symmetrize(&f11),
            pseudo_inverse_used: false,
            condition: 1.0,
        });
    }
    let f12 = f.view((0, block_size), (block_size, m)).into_owned();
    let f22 = f.view((block_size, block_size), (m, m)).into_owned();
    let (inv22, condition, pseudo) = match invert_spd(&f22) {
        Ok((inv, cond)) => (inv, cond, false),
        Err(Error::Numerical { condition, .. }) => (pinv_symmetric(&f22), condition, true),
        Err(e) => return Err(e),
    };
    let out = f11 - &f12 * inv22 * f12.transpose();
    Ok(SchurResult {
        matrix: symmetrize(&out),
        pseudo_inverse_used: pseudo,
        condition,
    })
}

/// Central-difference Jacobian: column `p` is `(f(x0 + h_p e_p) - f(x0 - h_p e_p)) / (2 h_p)`.
///
/// `steps` holds one step per coordinate, or a single step shared by all.
pub fn finite_difference_jacobian<T, F>(mut f: F, x0: &[f64], steps: &[f64]) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(&[f64]) -> DVector<T>,
{
    if steps.len() != 1 && steps.len() != x0.len() {
        return Err(Error::InvalidArgument(format!(
            "expected 1 or {} steps, got {}",
            x0.len(),
            steps.len()
        )));
    }
    let mut cols = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    for p in 0..x0.len() {
        let h = if steps.len() == 1 { steps[0] } else { steps[p] };
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step {p} must be positive")));
        }
        x[p] = x0[p] + h;
        let plus = f(&x);
        x[p] = x0[p] - h;
        let minus = f(&x);
        x[p] = x0[p];
        if plus.len() != minus.len() || plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("function not finite near coordinate {p}"),
                f64::NAN,
            ));
        }
        let scale = T::from_real(0.5 / h);
        cols.push((plus - minus).map(|v| v * scale));
    }
    if cols.is_empty() {
        let m = f(x0).len();
        return Ok(DMatrix::zeros(m, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Kronecker product of two column vectors with the first as the slow index:
/// entry `i * b.len() + j` is `a[i] * b[j]`.
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let nb = b.len();
    CVector::from_fn(a.len() * nb, |idx, _| a[idx / nb] * b[idx % nb])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_cmatrix(seed: u64, rows: usize, cols: usize) -> CMatrix {
        let mut rng = stream(seed, &[rows as u64, cols as u64]);
        CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, 1.0))
    }

    fn random_psd(seed: u64, n: usize) -> CMatrix {
        let b = random_cmatrix(seed, n, n);
        &b * b.adjoint() + CMatrix::identity(n, n).scale(0.1)
    }

    fn random_spd(seed: u64, n: usize) -> RMatrix {
        let b = random_cmatrix(seed, n, n).map(|v| v.re);
        &b * b.transpose() + RMatrix::identity(n, n).scale(0.5)
    }

    fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn solve_with_zero_core_is_scaled_identity() {
        let h = random_cmatrix(1, 32, 2);
        let cov = LowRankCovariance::new(h, CMatrix::zeros(2, 2), 2.5).unwrap();
        let x = random_cmatrix(2, 32, 3);
        let got = cov.solve(&x).unwrap();
        assert!(rel(&got, &x.unscale(2.5)) < 1e-14);
        assert_relative_eq!(cov.logdet(), 32.0 * 2.5f64.ln(), max_relative = 1e-13);
    }

    #[test]
    fn solve_matches_dense_inverse() {
        let h = random_cmatrix(3, 32, 3);
        let a = random_psd(4, 3);
        let cov = LowRankCovariance::new(h, a, 0.7).unwrap();
        let dense = cov.dense();
        let x = random_cmatrix(5, 32, 2);
        let got = cov.solve(&x).unwrap();
        let resid = &dense * &got - &x;
        assert!(resid.norm() <= 1e-10 * x.norm());
        let oracle = dense.clone().lu().solve(&x).unwrap();
        assert!(rel(&got, &oracle) < 1e-10);
    }

    #[test]
    fn solve_range_vector_closed_form() {
        // R^{-1} H a = H (A G + noise I)^{-1} a
        let h = random_cmatrix(6, 24, 2);
        let a_core = random_psd(7, 2);
        let cov = LowRankCovariance::new(h.clone(), a_core.clone(), 1.3).unwrap();
        let coef = random_cmatrix(8, 2, 1);
        let x = &h * &coef;
        let g = h.adjoint() * &h;
        let small = (&a_core * &g + CMatrix::identity(2, 2).scale(1.3))
            .lu()
            .solve(&coef)
            .unwrap();
        let expect = &h * small;
        assert!(rel(&cov.solve(&x).unwrap(), &expect) < 1e-10);
    }

    #[test]
    fn logdet_matches_dense() {
        let h = random_cmatrix(9, 32, 2);
        let a = random_psd(10, 2);
        let cov = LowRankCovariance::new(h, a, 0.4).unwrap();
        let dense = cov.dense();
        let chol = dense.cholesky().unwrap();
        let oracle: f64 = (0..32).map(|i| 2.0 * chol.l()[(i, i)].re.ln()).sum();
        assert!((cov.logdet() - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
    }

    #[test]
    fn logdet_identity_scaling() {
        let h = random_cmatrix(11, 20, 1);
        let a = CMatrix::zeros(1, 1);
        let c1 = LowRankCovariance::new(h.clone(), a.clone(), 1.0).unwrap();
        let c2 = LowRankCovariance::new(h, a, 3.0).unwrap();
        assert_relative_eq!(c2.logdet() - c1.logdet(), 20.0 * 3f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn singular_core_is_supported() {
        let h = random_cmatrix(12, 16, 2);
        let v = random_cmatrix(13, 2, 1);
        let a = &v * v.adjoint();
        let cov = LowRankCovariance::new(h, a, 0.9).unwrap();
        let x = random_cmatrix(14, 16, 1);
        let got = cov.solve(&x).unwrap();
        assert!((cov.dense() * got - &x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn non_psd_core_is_rejected() {
        let h = random_cmatrix(15, 8, 2);
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(-0.5, 0.0),
        ]));
        assert!(matches!(LowRankCovariance::new(h, a, 1.0), Err(Error::NotPsd(_))));
    }

    #[test]
    fn projection_properties() {
        let h = random_cmatrix(16, 20, 3);
        let coef = random_cmatrix(17, 3, 1);
        let inside = (&h * coef).column(0).into_owned();
        assert!(orth_projection_apply(&h, &inside).unwrap().norm() <= 1e-10 * inside.norm());

        let x = random_cmatrix(18, 20, 1).column(0).into_owned();
        let perp = orth_projection_apply(&h, &x).unwrap();
        let again = orth_projection_apply(&h, &perp).unwrap();
        assert!((&again - &perp).norm() <= 1e-12 * perp.norm());
        assert!((h.adjoint() * &perp).norm() <= 1e-10 * perp.norm());
    }

    #[test]
    fn projection_rank_deficient_reports_condition() {
        let col = random_cmatrix(19, 10, 1);
        let h = CMatrix::from_columns(&[col.column(0), col.column(0)]);
        let x = random_cmatrix(20, 10, 1).column(0).into_owned();
        match orth_projection_apply(&h, &x) {
            Err(Error::Numerical { condition, .. }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn schur_block_diagonal() {
        let a = random_spd(21, 3);
        let b = random_spd(22, 2);
        let mut f = RMatrix::zeros(5, 5);
        f.view_mut((0, 0), (3, 3)).copy_from(&a);
        f.view_mut((3, 3), (2, 2)).copy_from(&b);
        let s = schur_complement(&f, 3).unwrap();
        assert!((s.matrix - &a).norm() < 1e-14 * a.norm());
        assert!(!s.pseudo_inverse_used);
    }

    #[test]
    fn schur_scalar_case() {
        let f = RMatrix::from_row_slice(2, 2, &[4.0, 1.5, 1.5, 2.0]);
        let s = schur_complement(&f, 1).unwrap();
        assert_relative_eq!(s.matrix[(0, 0)], 4.0 - 1.5 * 1.5 / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn schur_inverse_is_leading_block_of_inverse() {
        let f = random_spd(23, 8);
        let s = schur_complement(&f, 3).unwrap();
        let (inv_s, _) = invert_spd(&s.matrix).unwrap();
        let finv = f.clone().try_inverse().unwrap();
        let lead = finv.view((0, 0), (3, 3)).into_owned();
        assert!((inv_s - &lead).norm() <= 1e-10 * lead.norm());
    }

    #[test]
    fn schur_singular_trailing_block_falls_back() {
        let f = RMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.5, 0.5, 1.0, 1.0, 0.5, 1.0, 1.0 + 1e-15]);
        let s = schur_complement(&f, 1).unwrap();
        assert!(s.pseudo_inverse_used);
    }

    #[test]
    fn invert_refuses_ill_conditioned() {
        let f = RMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
        assert!(matches!(invert_spd(&f), Err(Error::Numerical { .. })));
    }

    #[test]
    fn fd_linear_is_exact() {
        let m = RMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let f = |x: &[f64]| &m * DVector::from_column_slice(x);
        for h in [1e-6, 1e-2, 1.0] {
            let j = finite_difference_jacobian(f, &[0.3, -0.7, 2.0], &[h]).unwrap();
            assert!((j - &m).norm() < 1e-9);
        }
    }

    #[test]
    fn fd_quadratic() {
        let j = finite_difference_jacobian(|x: &[f64]| DVector::from_element(1, x[0] * x[0]), &[1.0], &[1e-4]).unwrap();
        assert!((j[(0, 0)] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn fd_chirp_phase_derivative() {
        // phase(t) = pi * k * (t - t0/2)^2, d/dt = 2 pi k (t - t0/2)
        let (k, t0, t) = (5e10, 20e-6, 3.7e-6);
        let f = |x: &[f64]| DVector::from_element(1, std::f64::consts::PI * k * (x[0] - 0.5 * t0).powi(2));
        let j = finite_difference_jacobian(f, &[t], &[1e-10]).unwrap();
        let analytic = 2.0 * std::f64::consts::PI * k * (t - 0.5 * t0);
        assert!((j[(0, 0)] - analytic).abs() <= 1e-6 * analytic.abs());
    }

    #[test]
    fn fd_rejects_non_finite() {
        let r = finite_difference_jacobian(|x: &[f64]| DVector::from_element(1, 1.0 / x[0]), &[0.0], &[1e-3]);
        assert!(r.is_ok());
        let r = finite_difference_jacobian(
            |x: &[f64]| DVector::from_element(1, (x[0] - 1e-3).ln()),
            &[0.0],
            &[1e-3],
        );
        assert!(matches!(r, Err(Error::Numerical { .. })));
    }

    #[test]
    fn psd_factor_reconstructs() {
        let a = random_psd(24, 4);
        let l = psd_factor(&a).unwrap();
        assert!(rel(&(&l * l.adjoint()), &a) < 1e-12);
        let zero = psd_factor(&CMatrix::zeros(3, 3)).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    proptest! {
        #[test]
        fn solve_residual_small(seed in 0u64..1000, q in 1usize..4, noise in 0.05f64..5.0) {
            let h = random_cmatrix(seed, 24, q);
            let a = random_psd(seed + 1, q);
            let cov = LowRankCovariance::new(h, a, noise).unwrap();
            let x = random_cmatrix(seed + 2, 24, 1);
            let y = cov.solve(&x).unwrap();
            prop_assert!((cov.dense() * y - &x).norm() <= 1e-10 * x.norm());
        }
    }
}
