//! Stochastic-model likelihood on per-path sufficient statistics and the inner
//! fit of the reflectivity covariance and noise power.

use crate::error::{Error, Result};
use crate::numkit::{gram_solve, hermitian_part, psd_factor};
use crate::{CMatrix, CVector, Complex64, RMatrix, RVector};

use super::PathStats;

/// Floor on the noise power relative to the mean per-sample snapshot energy.
const NOISE_FLOOR: f64 = 1e-14;

/// Per-path quantities derived from `(A, noise)`.
struct PathKernel {
    /// `K = L (noise I + L^H G L)^{-1} L^H`
    kernel: CMatrix,
    logdet: f64,
}

fn path_kernel(stats: &PathStats, factor: &CMatrix, noise: f64, n: usize) -> Result<PathKernel> {
    let q = factor.ncols();
    let inner = hermitian_part(&(factor.adjoint() * &stats.gram * factor));
    let cap = inner + CMatrix::identity(q, q).scale(noise);
    let chol = cap
        .cholesky()
        .ok_or_else(|| Error::numerical("capacitance system is not positive definite", f64::INFINITY))?;
    let l = chol.l();
    let cap_logdet: f64 = (0..q).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    let kernel = factor * chol.solve(&factor.adjoint());
    Ok(PathKernel {
        kernel,
        logdet: n as f64 * noise.ln() + cap_logdet - q as f64 * noise.ln(),
    })
}

/// `sum_kl [log det R_kl + r_kl^H R_kl^{-1} r_kl]` divided by `norm`.
pub(crate) fn nll_from_stats(stats: &[PathStats], a: &CMatrix, noise: f64, n: usize, norm: f64) -> Result<f64> {
    let factor = psd_factor(a)?;
    let mut acc = 0.0;
    for st in stats {
        let pk = path_kernel(st, &factor, noise, n)?;
        let quad = (st.energy - st.proj.dotc(&(&pk.kernel * &st.proj)).re) / noise;
        acc += pk.logdet + quad;
    }
    Ok(acc / norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub covariance: CMatrix,
    pub noise_power: f64,
    /// Normalized negative log-likelihood at the fitted values.
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// EM iterations before switching to quasi-Newton steps on the Cholesky factor.
const EM_WARMUP: usize = 20;
/// Gradient tolerance (relative to `1 + |nll|`) for the quasi-Newton stage.
const GRAD_TOL: f64 = 1e-8;

/// Normalized NLL with its gradients: `d/dA` as a Hermitian matrix and `d/d noise`.
pub(crate) fn nll_and_gradient(
    stats: &[PathStats],
    factor: &CMatrix,
    noise: f64,
    n: usize,
    norm: f64,
) -> Result<(f64, CMatrix, f64)> {
    let q = factor.ncols();
    let mut value = 0.0;
    let mut grad_a = CMatrix::zeros(q, q);
    let mut grad_noise = 0.0;
    for st in stats {
        let pk = path_kernel(st, factor, noise, n)?;
        let g = &st.gram;
        let z = &st.proj;
        let kz = &pk.kernel * z;
        let zkz = z.dotc(&kz).re;
        value += pk.logdet + (st.energy - zkz) / noise;
        // H^H R^{-1} H and H^H R^{-1} r
        let gk = g * &pk.kernel;
        let hrh = (g - &gk * g).unscale(noise);
        let hrr: CVector = (z - g * &kz).unscale(noise);
        grad_a += hrh - &hrr * hrr.adjoint();
        let tr_rinv = (n as f64 - gk.trace().re) / noise;
        let rinv_r = (st.energy - 2.0 * zkz + kz.dotc(&(g * &kz)).re) / (noise * noise);
        grad_noise += tr_rinv - rinv_r;
    }
    Ok((value / norm, hermitian_part(&grad_a.unscale(norm)), grad_noise / norm))
}

/// `[diag L, (Re, Im) of L[i][j] for i > j, ln noise]`.
fn pack(l: &CMatrix, noise: f64) -> Vec<f64> {
    let q = l.nrows();
    let mut x: Vec<f64> = (0..q).map(|i| l[(i, i)].re).collect();
    for i in 0..q {
        for j in 0..i {
            x.push(l[(i, j)].re);
            x.push(l[(i, j)].im);
        }
    }
    x.push(noise.ln());
    x
}

fn unpack(x: &[f64], q: usize) -> (CMatrix, f64) {
    let mut l = CMatrix::zeros(q, q);
    for i in 0..q {
        l[(i, i)] = Complex64::new(x[i], 0.0);
    }
    let mut idx = q;
    for i in 0..q {
        for j in 0..i {
            l[(i, j)] = Complex64::new(x[idx], x[idx + 1]);
            idx += 2;
        }
    }
    (l, x[idx].exp())
}

/// Chain rule from `(A, noise)` to the packed coordinates, with `A = L L^H`.
fn packed_gradient(l: &CMatrix, grad_a: &CMatrix, grad_noise: f64, noise: f64) -> Vec<f64> {
    let q = l.nrows();
    let w = grad_a * l;
    let mut g: Vec<f64> = (0..q).map(|i| 2.0 * w[(i, i)].re).collect();
    for i in 0..q {
        for j in 0..i {
            g.push(2.0 * w[(i, j)].re);
            g.push(2.0 * w[(i, j)].im);
        }
    }
    g.push(noise * grad_noise);
    g
}

fn lower_factor(a: &CMatrix) -> Result<CMatrix> {
    let a = hermitian_part(a);
    let q = a.nrows();
    let trace: f64 = (0..q).map(|i| a[(i, i)].re).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let shifted = &a + CMatrix::identity(q, q).scale(ridge);
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.l());
        }
        ridge = if ridge == 0.0 { 1e-14 * trace } else { ridge * 100.0 };
    }
    Err(Error::NotPsd("covariance iterate has no Cholesky factor".into()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct QuasiNewton {
    covariance: CMatrix,
    noise_power: f64,
    nll: f64,
    iterations: usize,
    converged: bool,
}

/// BFGS with backtracking on the packed Cholesky coordinates.
#[allow(clippy::too_many_arguments)]
fn quasi_newton(
    stats: &[PathStats],
    n: usize,
    norm: f64,
    floor: f64,
    l0: &CMatrix,
    noise0: f64,
    max_iters: usize,
    tol: f64,
) -> Result<QuasiNewton> {
    let q = l0.nrows();
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (l, noise) = unpack(x, q);
        if !(noise >= floor && noise.is_finite()) {
            return None;
        }
        let (f, ga, gn) = nll_and_gradient(stats, &l, noise, n, norm).ok()?;
        let g = packed_gradient(&l, &ga, gn, noise);
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
    };
    let mut x = pack(l0, noise0.max(floor));
    let d = x.len();
    let (mut f, mut g) =
        eval(&x).ok_or_else(|| Error::numerical("likelihood is not finite at the starting point", f64::INFINITY))?;
    let mut h = RMatrix::identity(d, d);
    let mut scaled = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= GRAD_TOL * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let gv = RVector::from_column_slice(&g);
        let mut p: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            h = RMatrix::identity(d, d);
            scaled = false;
            p = g.iter().map(|v| -v).collect();
            slope = dot(&g, &p);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + step * b).collect();
            if let Some((fn_, gn)) = eval(&xn) {
                if fn_ <= f + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no decrease along a descent direction: stationary to working precision
            converged = true;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                h = RMatrix::identity(d, d).scale(sy / dot(&y, &y));
                scaled = true;
            }
            let sv = RVector::from_column_slice(&s);
            let yv = RVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let left = RMatrix::identity(d, d) - (&sv * yv.transpose()).scale(rho);
            h = &left * &h * left.transpose() + (&sv * sv.transpose()).scale(rho);
        }
        if decrease <= tol * (1.0 + f.abs())
            && s.iter()
                .all(|v| v.abs() <= 1e-10 * (1.0 + x.iter().fold(0.0f64, |m, a| m.max(a.abs()))))
        {
            converged = true;
            break;
        }
    }
    let (l, noise) = unpack(&x, q);
    Ok(QuasiNewton {
        covariance: hermitian_part(&(&l * l.adjoint())),
        noise_power: noise,
        nll: f,
        iterations,
        converged,
    })
}

/// Maximizes the stochastic likelihood over `(A, noise)` for fixed steering matrices.
///
/// Starts from the least-squares reflectivities, runs a few EM iterations, then finishes with
/// quasi-Newton steps on the Cholesky factor of `A` and `ln noise`. The Cholesky coordinates keep
/// rank-deficient optima (common at low SNR) in the interior, where EM alone crawls.
pub(crate) fn fit_nuisance(
    stats: &[PathStats],
    n: usize,
    norm: f64,
    max_iters: usize,
    tol: f64,
) -> Result<NuisanceFit> {
    let m = stats.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no paths to fit".into()));
    }
    let q = stats[0].proj.len();
    let mean_energy = stats.iter().map(|s| s.energy).sum::<f64>() / (m * n) as f64;
    let floor = (NOISE_FLOOR * mean_energy).max(f64::MIN_POSITIVE);

    // least-squares start
    let mut a = CMatrix::zeros(q, q);
    let mut resid = 0.0;
    for st in stats {
        let rhs = CMatrix::from_column_slice(q, 1, st.proj.as_slice());
        let alpha = gram_solve(&st.gram, &rhs)?.column(0).into_owned();
        resid += (st.energy - st.proj.dotc(&alpha).re).max(0.0);
        a += &alpha * alpha.adjoint();
    }
    let dof = (m * n.saturating_sub(q)).max(1) as f64;
    let mut noise = (resid / dof).max(floor);
    a = hermitian_part(&a.unscale(m as f64));

    let mut nll = nll_from_stats(stats, &a, noise, n, norm)?;
    let mut iterations = 0;
    while iterations < max_iters.min(EM_WARMUP) {
        iterations += 1;
        let (next_a, next_noise) = em_step(stats, &a, noise, n, floor)?;
        a = next_a;
        noise = next_noise;
        let next = nll_from_stats(stats, &a, noise, n, norm)?;
        let delta = nll - next;
        nll = next;
        if delta.abs() <= tol * (1.0 + nll.abs()) {
            return Ok(NuisanceFit {
                covariance: a,
                noise_power: noise,
                nll,
                iterations,
                converged: true,
            });
        }
    }
    if iterations >= max_iters {
        return Ok(NuisanceFit {
            covariance: a,
            noise_power: noise,
            nll,
            iterations,
            converged: false,
        });
    }
    let qn = quasi_newton(
        stats,
        n,
        norm,
        floor,
        &lower_factor(&a)?,
        noise,
        max_iters - iterations,
        tol,
    )?;
    if qn.nll > nll {
        return Ok(NuisanceFit {
            covariance: a,
            noise_power: noise,
            nll,
            iterations: iterations + qn.iterations,
            converged: false,
        });
    }
    Ok(NuisanceFit {
        covariance: qn.covariance,
        noise_power: qn.noise_power,
        nll: qn.nll,
        iterations: iterations + qn.iterations,
        converged: qn.converged,
    })
}

/// One EM update of `(A, noise)` with the reflectivities as missing data.
fn em_step(stats: &[PathStats], a: &CMatrix, noise: f64, n: usize, floor: f64) -> Result<(CMatrix, f64)> {
    let m = stats.len();
    let q = a.nrows();
    let factor = psd_factor(a)?;
    let mut a_acc = CMatrix::zeros(q, q);
    let mut noise_acc = 0.0;
    for st in stats {
        let pk = path_kernel(st, &factor, noise, n)?;
        let g = &st.gram;
        // H^H R^{-1} H and H^H R^{-1} r
        let gkg = g * &pk.kernel * g;
        let hrh = (g - &gkg).unscale(noise);
        let hrr: CVector = (&st.proj - g * (&pk.kernel * &st.proj)).unscale(noise);
        let mu = a * hrr;
        let post = hermitian_part(&(a - a * hrh * a));
        a_acc += &mu * mu.adjoint() + &post;
        let fit = st.energy - 2.0 * st.proj.dotc(&mu).re + mu.dotc(&(g * &mu)).re;
        let spread: Complex64 = (g * &post).trace();
        noise_acc += fit + spread.re;
    }
    Ok((
        hermitian_part(&a_acc.unscale(m as f64)),
        (noise_acc / (m * n) as f64).max(floor),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, stream};

    fn random_stats(seed: u64, paths: usize, n: usize, q: usize, signal: f64) -> Vec<PathStats> {
        let mut rng = stream(seed, &[]);
        (0..paths)
            .map(|_| {
                let h = CMatrix::from_fn(n, q, |_, _| complex_normal(&mut rng, 1.0));
                let alpha = CVector::from_fn(q, |_, _| complex_normal(&mut rng, signal));
                let r = &h * alpha + CVector::from_fn(n, |_, _| complex_normal(&mut rng, 1.0));
                PathStats {
                    gram: h.adjoint() * &h,
                    proj: h.adjoint() * &r,
                    energy: r.norm_squared(),
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let stats = random_stats(1, 4, 12, 2, 2.0);
        let x0 = vec![1.1, 0.7, 0.3, -0.4, 0.2_f64.ln()];
        let f = |x: &[f64]| {
            let (l, noise) = unpack(x, 2);
            nll_from_stats(&stats, &(&l * l.adjoint()), noise, 12, 3.0).unwrap()
        };
        let (l, noise) = unpack(&x0, 2);
        let (value, ga, gn) = nll_and_gradient(&stats, &l, noise, 12, 3.0).unwrap();
        assert!((value - f(&x0)).abs() < 1e-10 * value.abs());
        let g = packed_gradient(&l, &ga, gn, noise);
        for i in 0..x0.len() {
            let h = 1e-6;
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "coordinate {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn pack_round_trip() {
        let l = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.5, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.2, -0.7),
                Complex64::new(0.4, 0.0),
            ],
        );
        let (back, noise) = unpack(&pack(&l, 0.3), 2);
        assert_eq!(back, l);
        assert!((noise - 0.3).abs() < 1e-15);
    }

    #[test]
    fn matches_long_em_on_rank_deficient_optimum() {
        // weak signal and few paths: the likelihood peaks at a singular covariance
        let stats = random_stats(5, 6, 40, 2, 0.05);
        let fit = fit_nuisance(&stats, 40, 1.0, 500, 1e-11).unwrap();
        assert!(fit.converged);
        let start = fit_nuisance(&stats, 40, 1.0, 0, 1e-11).unwrap();
        let (mut a, mut noise) = (start.covariance, start.noise_power);
        for _ in 0..20_000 {
            (a, noise) = em_step(&stats, &a, noise, 40, 1e-14).unwrap();
        }
        let em_nll = nll_from_stats(&stats, &a, noise, 40, 1.0).unwrap();
        let smallest = fit.covariance.clone().symmetric_eigenvalues().min();
        assert!(
            smallest < 1e-3 * fit.covariance.trace().re,
            "optimum is not rank deficient"
        );
        assert!(fit.nll <= em_nll + 1e-9, "{} vs {}", fit.nll, em_nll);
        // EM is still crawling toward the boundary after 20k steps
        assert!(em_nll - fit.nll < 1e-3);
        let (big_fit, big_em) = (
            fit.covariance.clone().symmetric_eigenvalues().max(),
            a.symmetric_eigenvalues().max(),
        );
        assert!((big_fit - big_em).abs() < 1e-3 * big_fit);
        assert!((fit.noise_power - noise).abs() < 1e-3 * noise);
    }
}
