//! Matrix identities and inequalities used in the bound and consistency
//! derivations, packaged as checkable functions plus a randomized self-test.

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::rng::{complex_normal, stream, StreamRng};
use crate::{CMatrix, CVector, Complex64, RMatrix};

/// Column-stacking vectorization.
pub fn vec(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Kronecker product.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().sum()
}

/// `Tr{A B}` evaluated as `vec(A^H)^H vec(B)`.
pub fn trace_via_vec(a: &CMatrix, b: &CMatrix) -> Complex64 {
    vec(&a.adjoint()).dotc(&vec(b))
}

/// Real embedding `[[Re A, -Im A], [Im A, Re A]]`.
pub fn real_embedding(a: &CMatrix) -> RMatrix {
    let (r, c) = a.shape();
    RMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let v = a[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    })
}

/// `[Re A, -Im A] embed(B) [Re C; Im C]`, which equals `Re{A B C}`.
pub fn real_triple_product(a: &CMatrix, b: &CMatrix, c: &CMatrix) -> RMatrix {
    let (ar, ac) = a.shape();
    let left = RMatrix::from_fn(
        ar,
        2 * ac,
        |i, j| if j < ac { a[(i, j)].re } else { -a[(i, j - ac)].im },
    );
    let (cr, cc) = c.shape();
    let right = RMatrix::from_fn(2 * cr, cc, |i, j| if i < cr { c[(i, j)].re } else { c[(i - cr, j)].im });
    left * real_embedding(b) * right
}

/// Mean of `x^H A x` for `x ~ CN(mu, sigma)` and Hermitian `A`.
pub fn quadratic_form_mean(a: &CMatrix, mu: &CVector, sigma: &CMatrix) -> f64 {
    (trace(&(a * sigma)) + mu.dotc(&(a * mu))).re
}

/// Variance of `x^H A x` for `x ~ CN(mu, sigma)` (circular) and Hermitian `A`.
pub fn quadratic_form_variance(a: &CMatrix, mu: &CVector, sigma: &CMatrix) -> f64 {
    let asig = a * sigma;
    (trace(&(&asig * &asig)) + mu.dotc(&(&asig * a * mu)).scale(2.0)).re
}

fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    SymmetricEigen::new((a + a.adjoint()).scale(0.5))
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

pub fn logdet_pd(a: &CMatrix) -> f64 {
    hermitian_eigenvalues(a).iter().map(|v| v.ln()).sum()
}

fn singular_values_desc(a: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Sum of products of ordered singular values, the upper bound in Von Neumann's inequality.
pub fn von_neumann_bound(a: &CMatrix, b: &CMatrix) -> f64 {
    singular_values_desc(a)
        .iter()
        .zip(singular_values_desc(b))
        .map(|(x, y)| x * y)
        .sum()
}

/// `ln det B + Tr{B^{-1} A} - n - ln det A`, nonnegative for positive definite `A`, `B`
/// and zero at `B = A`.
pub fn stoica_gap(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows() as f64;
    let binv_a = b.clone().cholesky().expect("B must be positive definite").solve(a);
    logdet_pd(b) + trace(&binv_a).re - n - logdet_pd(a)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub instances: usize,
    /// Worst relative error for identities; worst violation (positive means failure) for inequalities;
    /// worst z-score for statistical checks.
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn random_matrix(rng: &mut StreamRng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| complex_normal(rng, 1.0))
}

fn random_pd(rng: &mut StreamRng, n: usize) -> CMatrix {
    let b = random_matrix(rng, n, n);
    let mut a = &b * b.adjoint();
    for i in 0..n {
        a[(i, i)] += Complex64::new(0.05, 0.0);
    }
    a
}

fn random_hermitian(rng: &mut StreamRng, n: usize) -> CMatrix {
    let b = random_matrix(rng, n, n);
    (&b + b.adjoint()).scale(0.5)
}

fn check(name: &'static str, instances: usize, worst: f64, tolerance: f64) -> IdentityCheck {
    IdentityCheck {
        name,
        instances,
        worst,
        tolerance,
        pass: worst <= tolerance,
    }
}

/// Runs every identity and inequality on `instances` random draws. `draws` is the
/// Monte-Carlo sample size for the quadratic-form moment checks.
pub fn run_identity_suite(instances: usize, draws: usize, seed: u64) -> Vec<IdentityCheck> {
    let mut trace_vec: f64 = 0.0;
    let mut vec_kron: f64 = 0.0;
    let mut inverse_embed: f64 = 0.0;
    let mut triple: f64 = 0.0;
    let mut mean_z: f64 = 0.0;
    let mut var_z: f64 = 0.0;
    let mut trace_cs: f64 = f64::NEG_INFINITY;
    let mut trace_prod: f64 = f64::NEG_INFINITY;
    let mut von_neumann: f64 = f64::NEG_INFINITY;
    let mut von_neumann_top: f64 = f64::NEG_INFINITY;
    let mut stoica_min: f64 = f64::INFINITY;
    let mut stoica_eq: f64 = 0.0;

    for i in 0..instances {
        let mut rng = stream(seed, &[i as u64]);
        let n = 2 + i % 4;
        let a = random_matrix(&mut rng, n, n + 1);
        let b = random_matrix(&mut rng, n + 1, n);
        let c = random_matrix(&mut rng, n, 3);

        let tr = trace(&(&a * &b));
        trace_vec = trace_vec.max((trace_via_vec(&a, &b) - tr).norm() / tr.norm().max(1e-300));

        let abc = &a * &b * &c;
        let lhs = vec(&abc);
        let rhs = kron(&c.transpose(), &a) * vec(&b);
        vec_kron = vec_kron.max((lhs - &rhs).norm() / rhs.norm());

        let sq = random_matrix(&mut rng, n, n);
        let inv = sq.clone().try_inverse().expect("random square matrix is invertible");
        let emb_inv = real_embedding(&sq).try_inverse().expect("embedding is invertible");
        let target = real_embedding(&inv);
        inverse_embed = inverse_embed.max((emb_inv - &target).norm() / target.norm());

        let sq2 = random_matrix(&mut rng, n + 1, n + 1);
        let re = real_triple_product(&a, &sq2, &b);
        let direct = (&a * &sq2 * &b).map(|v| v.re);
        triple = triple.max((re - &direct).norm() / direct.norm());

        // quadratic form moments with a nonzero mean
        let qa = random_hermitian(&mut rng, n);
        let sigma = random_pd(&mut rng, n);
        let mu = random_matrix(&mut rng, n, 1).column(0).scale(0.7);
        let (z_mean, z_var) = quadratic_form_z_scores(&mut rng, &qa, &mu, &sigma, draws);
        mean_z = mean_z.max(z_mean.abs());
        var_z = var_z.max(z_var.abs());

        let pa = random_pd(&mut rng, n);
        let pb = random_pd(&mut rng, n);
        let tab = trace(&(&pa * &pb)).re;
        let cs = (trace(&(&pa * &pa)).re * trace(&(&pb * &pb)).re).sqrt();
        trace_cs = trace_cs.max((tab - cs) / cs);
        let prod = trace(&pa).re * trace(&pb).re;
        trace_prod = trace_prod.max((tab - prod) / prod);

        let ga = random_matrix(&mut rng, n, n);
        let gb = random_matrix(&mut rng, n, n);
        let tgab = trace(&(&ga * &gb)).norm();
        let vn = von_neumann_bound(&ga, &gb);
        von_neumann = von_neumann.max((tgab - vn) / vn);
        let top = n as f64 * singular_values_desc(&ga)[0] * singular_values_desc(&gb)[0];
        von_neumann_top = von_neumann_top.max((vn - top) / top);

        stoica_min = stoica_min.min(stoica_gap(&pa, &pb));
        stoica_eq = stoica_eq.max(stoica_gap(&pa, &pa).abs());
    }

    vec![
        check("trace_as_vec_inner_product", instances, trace_vec, 1e-12),
        check("vec_of_triple_product", instances, vec_kron, 1e-12),
        check("real_embedding_inverse", instances, inverse_embed, 1e-10),
        check("real_embedding_triple_product", instances, triple, 1e-12),
        check("quadratic_form_mean_zscore", instances, mean_z, 5.0),
        check("quadratic_form_variance_zscore", instances, var_z, 5.0),
        check("trace_inequality_frobenius", instances, trace_cs, 1e-12),
        check("trace_inequality_trace_product", instances, trace_prod, 1e-12),
        check("von_neumann_singular_sum", instances, von_neumann, 1e-12),
        check("von_neumann_top_singular", instances, von_neumann_top, 1e-12),
        check(
            "logdet_trace_inequality_nonnegative",
            instances,
            (-stoica_min).max(0.0),
            1e-12,
        ),
        check("logdet_trace_inequality_equality", instances, stoica_eq, 1e-10),
    ]
}

/// z-scores of the empirical mean and variance of `x^H A x` against the closed forms.
fn quadratic_form_z_scores(
    rng: &mut StreamRng,
    a: &CMatrix,
    mu: &CVector,
    sigma: &CMatrix,
    draws: usize,
) -> (f64, f64) {
    let n = a.nrows();
    let l = sigma.clone().cholesky().expect("covariance is positive definite").l();
    let mut samples = Vec::with_capacity(draws);
    let mut w = CVector::zeros(n);
    for _ in 0..draws {
        for v in w.iter_mut() {
            *v = complex_normal(rng, 1.0);
        }
        let x = mu + &l * &w;
        samples.push(x.dotc(&(a * &x)).re);
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let c2 = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / m;
    let c4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / m;
    let var = c2 * m / (m - 1.0);
    let mean_z = (mean - quadratic_form_mean(a, mu, sigma)) / (c2 / m).sqrt();
    let var_se = ((c4 - c2 * c2) / m).sqrt();
    let var_z = (var - quadratic_form_variance(a, mu, sigma)) / var_se;
    (mean_z, var_z)
}
