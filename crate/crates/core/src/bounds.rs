//! Cramér-Rao bounds on the target parameters.
//!
//! - Stochastic model: reflectivities `alpha_kl ~ CN(0, A)`, nuisance `[A, noise]`.
//! - Deterministic model: reflectivities fixed per path, nuisance `[alpha_kl, noise]`.
//! - EMCB: deterministic bound averaged over `alpha_kl ~ CN(0, A)`.
//!
//! Parameters of interest are ordered target-major: flat index `q * P + p` with
//! components `x, y, v_x, v_y` (only `x, y` when `P = 2`). Paths are ordered
//! transmitter-major, then receiver.
//!
//! Per-path information terms are reduced with trace identities over the span of
//! `[H, D]`, so cost grows with the number of targets rather than with `(L_r N)^2`.
//! The dense `*_fim_full` functions exist as oracles for small problems.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::{gram_solve, hermitian_part, invert_spd, kron_vec, psd_factor, schur_complement, symmetrize};
use crate::rng::{complex_normal, stream};
use crate::scenario::{geometry_partials, Scenario, TargetState};
use crate::signal::{ColumnModel, SteeringContext};
use crate::waveform::LfmWaveformSet;
use crate::{CMatrix, CVector, Complex64, RMatrix};

/// Largest snapshot length for which dense oracles will run.
pub const DENSE_ORACLE_LIMIT: usize = 64;
/// EMCB draws may fail at most this fraction before the bound is refused.
pub const EMCB_MAX_REJECTION: f64 = 0.01;

const COMPONENT_NAMES: [&str; 4] = ["x", "y", "vx", "vy"];

/// Mapping between `(target, component)` and the flat parameter index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    pub per_target: usize,
    pub targets: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamIndex {
    pub target: usize,
    pub component: usize,
    pub flat: usize,
}

impl ParamLayout {
    pub fn new(per_target: usize, targets: usize) -> Result<Self> {
        if per_target != 2 && per_target != 4 {
            return Err(Error::InvalidArgument(format!(
                "params_per_target must be 2 or 4, got {per_target}"
            )));
        }
        if targets == 0 {
            return Err(Error::InvalidArgument("at least one target is required".into()));
        }
        Ok(Self { per_target, targets })
    }

    pub fn len(&self) -> usize {
        self.per_target * self.targets
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, target: usize, component: usize) -> usize {
        target * self.per_target + component
    }

    pub fn index(&self, flat: usize) -> ParamIndex {
        ParamIndex {
            target: flat / self.per_target,
            component: flat % self.per_target,
            flat,
        }
    }

    /// Parameter names `x1, y1, x2, ...` (1-based target numbers).
    pub fn names(&self) -> Vec<String> {
        (0..self.len())
            .map(|m| {
                let i = self.index(m);
                format!("{}{}", COMPONENT_NAMES[i.component], i.target + 1)
            })
            .collect()
    }

    /// Extracts the parameter vector from target states.
    pub fn extract(&self, targets: &[TargetState]) -> Vec<f64> {
        targets
            .iter()
            .flat_map(|t| {
                let all = [t.position[0], t.position[1], t.velocity[0], t.velocity[1]];
                all[..self.per_target].to_vec()
            })
            .collect()
    }

    /// Writes `psi` into a copy of `base` (components outside the layout keep their values).
    pub fn apply(&self, base: &[TargetState], psi: &[f64]) -> Vec<TargetState> {
        base.iter()
            .enumerate()
            .map(|(q, t)| {
                let mut out = *t;
                for p in 0..self.per_target {
                    let v = psi[self.flat(q, p)];
                    match p {
                        0 => out.position[0] = v,
                        1 => out.position[1] = v,
                        2 => out.velocity[0] = v,
                        _ => out.velocity[1] = v,
                    }
                }
                out
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub matrix: RMatrix,
    pub per_param_variance: Vec<f64>,
    /// Condition number of the inverted (diagonally equilibrated) information matrix.
    pub conditioning: f64,
}

impl BoundResult {
    fn from_information(info: &RMatrix) -> Result<Self> {
        let (matrix, conditioning) = invert_spd(info)?;
        Ok(Self {
            per_param_variance: matrix.diagonal().iter().copied().collect(),
            matrix,
            conditioning,
        })
    }

    pub fn to_json_value(&self, layout: &ParamLayout) -> serde_json::Value {
        serde_json::json!({
            "parameters": layout.names(),
            "matrix": rows(&self.matrix),
            "diagonal": self.per_param_variance,
            "conditioning": self.conditioning,
        })
    }
}

fn rows(m: &RMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmcbResult {
    pub bound: BoundResult,
    /// Number of draws that entered the average.
    pub trials: usize,
    pub rejected: usize,
    /// Per-entry standard error of the Monte-Carlo mean.
    pub standard_errors: RMatrix,
}

impl EmcbResult {
    pub fn to_json_value(&self, layout: &ParamLayout) -> serde_json::Value {
        let mut v = self.bound.to_json_value(layout);
        let obj = v.as_object_mut().expect("bound serializes to an object");
        obj.insert("trials".into(), self.trials.into());
        obj.insert("rejected".into(), self.rejected.into());
        obj.insert("standard_errors".into(), serde_json::json!(rows(&self.standard_errors)));
        obj.insert(
            "diagonal_standard_errors".into(),
            serde_json::json!(self.standard_errors.diagonal().iter().copied().collect::<Vec<_>>()),
        );
        v
    }
}

/// Steering matrix and its parameter derivatives on one path.
#[derive(Debug, Clone)]
pub struct PathDerivatives {
    pub k: usize,
    pub l: usize,
    /// `L_r N x Q`
    pub h: CMatrix,
    /// `L_r N x PQ`, column `q * P + p` is the derivative of column `q` of `h` with respect to `(psi^q)_p`.
    pub d: CMatrix,
}

#[derive(Debug, Clone)]
pub struct SteeringDerivatives {
    pub layout: ParamLayout,
    pub paths: Vec<PathDerivatives>,
}

fn column_derivative(col: &ColumnModel, partial: &crate::scenario::GeometryPartials, samples: usize) -> CVector {
    let b = col.temporal.to_dense(samples);
    let db = col.temporal.d_delay_dense(samples) * Complex64::new(partial.delay_samples, 0.0)
        + col.temporal.d_doppler_dense(samples) * Complex64::new(partial.doppler_per_sample, 0.0);
    let zeta = col.geometry.path_loss;
    let scale = col.scale();
    let outer = Complex64::new(partial.path_loss, 0.0) * col.tx_gain + col.d_tx_gain * (zeta * partial.tx_bearing);
    kron_vec(&col.spatial, &b) * outer
        + kron_vec(&(&col.d_spatial * Complex64::new(partial.rx_bearing, 0.0)), &b) * scale
        + kron_vec(&col.spatial, &db) * scale
}

/// `H_kl` and `D_kl` for the given target states.
pub fn path_derivatives(
    ctx: &SteeringContext<'_>,
    layout: &ParamLayout,
    k: usize,
    l: usize,
    targets: &[TargetState],
) -> Result<PathDerivatives> {
    let n = ctx.samples();
    let len = ctx.snapshot_len();
    let mut h = CMatrix::zeros(len, targets.len());
    let mut d = CMatrix::zeros(len, layout.len());
    for (q, t) in targets.iter().enumerate() {
        let col = ctx.column(k, l, t, true)?;
        h.set_column(q, &col.dense(n));
        let partials = geometry_partials(ctx.scenario, k, l, t)?;
        for (p, partial) in partials.iter().enumerate().take(layout.per_target) {
            d.set_column(layout.flat(q, p), &column_derivative(&col, partial, n));
        }
    }
    Ok(PathDerivatives { k, l, h, d })
}

/// Derivative of `h_kl^q` with respect to component `p` of target `q`.
pub fn steering_derivative(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    k: usize,
    q: usize,
    l: usize,
    p: usize,
) -> Result<CVector> {
    if p >= 4 {
        return Err(Error::InvalidArgument(format!("component {p} out of range")));
    }
    let target = scenario
        .targets
        .get(q)
        .ok_or_else(|| Error::InvalidArgument(format!("target index {q} out of range")))?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let col = ctx.column(k, l, target, true)?;
    let partials = geometry_partials(scenario, k, l, target)?;
    Ok(column_derivative(&col, &partials[p], scenario.samples))
}

/// `D_kl` for every path at the scenario's targets.
pub fn steering_derivatives(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    layout: &ParamLayout,
) -> Result<SteeringDerivatives> {
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let paths = all_path_derivatives(&ctx, layout, &scenario.targets)?;
    Ok(SteeringDerivatives { layout: *layout, paths })
}

fn all_path_derivatives(
    ctx: &SteeringContext<'_>,
    layout: &ParamLayout,
    targets: &[TargetState],
) -> Result<Vec<PathDerivatives>> {
    let paths: Vec<(usize, usize)> = ctx.scenario.paths().collect();
    paths
        .par_iter()
        .map(|&(k, l)| path_derivatives(ctx, layout, k, l, targets))
        .collect()
}

fn check_layout(scenario: &Scenario, layout: &ParamLayout) -> Result<()> {
    if layout.targets != scenario.target_count() {
        return Err(Error::InvalidArgument(format!(
            "layout has {} targets, scenario has {}",
            layout.targets,
            scenario.target_count()
        )));
    }
    Ok(())
}

fn check_noise(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive, got {sigma2}"
        )));
    }
    Ok(())
}

/// Hermitian basis for the real parameterization of a `Q x Q` covariance:
/// diagonal entries, then real and imaginary parts of each upper off-diagonal entry.
pub fn hermitian_basis(q: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(q * q);
    for i in 0..q {
        let mut e = CMatrix::zeros(q, q);
        e[(i, i)] = Complex64::new(1.0, 0.0);
        out.push(e);
    }
    for i in 0..q {
        for j in (i + 1)..q {
            let mut re = CMatrix::zeros(q, q);
            re[(i, j)] = Complex64::new(1.0, 0.0);
            re[(j, i)] = Complex64::new(1.0, 0.0);
            out.push(re);
            let mut im = CMatrix::zeros(q, q);
            im[(i, j)] = Complex64::new(0.0, 1.0);
            im[(j, i)] = Complex64::new(0.0, -1.0);
            out.push(im);
        }
    }
    out
}

fn sum_ordered(mats: Vec<RMatrix>, n: usize) -> RMatrix {
    mats.into_iter().fold(RMatrix::zeros(n, n), |acc, m| acc + m)
}

fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    // Tr{A B} without forming the product
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Stochastic-model information over `[psi, covariance parameters, noise]` for one path.
fn stochastic_path_information(
    pd: &PathDerivatives,
    a: &CMatrix,
    a_factor: &CMatrix,
    sigma2: f64,
    basis: &[CMatrix],
) -> Result<RMatrix> {
    let q = pd.h.ncols();
    let pq = pd.d.ncols();
    let s = q + pq;
    let n = pd.h.nrows() as f64;
    let mut u = CMatrix::zeros(pd.h.nrows(), s);
    u.columns_mut(0, q).copy_from(&pd.h);
    u.columns_mut(q, pq).copy_from(&pd.d);
    let uu = hermitian_part(&(u.adjoint() * &u));
    let g = uu.view((0, 0), (q, q)).into_owned();
    let htu = uu.rows(0, q).into_owned();

    let cov = crate::numkit::LowRankCovariance::from_parts(pd.h.clone(), a.clone(), sigma2, a_factor.clone(), &g)?;
    let kern = cov.kernel();
    let khtu = &kern * &htu;
    let w = hermitian_part(&(&uu - htu.adjoint() * &khtu).unscale(sigma2));
    let kg = &kern * &g;
    let v = hermitian_part(&(&uu - htu.adjoint() * &khtu * Complex64::new(2.0, 0.0) + khtu.adjoint() * &g * &khtu))
        .unscale(sigma2 * sigma2);
    let tr_r2 = (n - 2.0 * kg.trace().re + trace_product(&kg, &kg).re) / (sigma2 * sigma2);

    // each derivative of R is U M U^H; collect M W
    let total = pq + basis.len() + 1;
    let mut mw: Vec<CMatrix> = Vec::with_capacity(total - 1);
    for m in 0..pq {
        let tq = m / (pq / q);
        let c = a.column(tq).into_owned();
        let mut mm = CMatrix::zeros(s, s);
        for i in 0..q {
            mm[(q + m, i)] = c[i].conj();
            mm[(i, q + m)] = c[i];
        }
        mw.push(mm);
    }
    for e in basis {
        let mut mm = CMatrix::zeros(s, s);
        mm.view_mut((0, 0), (q, q)).copy_from(e);
        mw.push(mm);
    }
    let ms: Vec<CMatrix> = mw.iter().map(|m| m * &w).collect();
    let mut info = RMatrix::zeros(total, total);
    for i in 0..ms.len() {
        for j in i..ms.len() {
            let val = trace_product(&ms[i], &ms[j]).re;
            info[(i, j)] = val;
            info[(j, i)] = val;
        }
        let val = trace_product(&mw[i], &v).re;
        info[(i, total - 1)] = val;
        info[(total - 1, i)] = val;
    }
    info[(total - 1, total - 1)] = tr_r2;
    Ok(info)
}

type PathList = [(usize, usize)];

/// Maps `f` over the paths, computing each path's derivatives on the fly; results stay in path order.
fn map_paths<T, F>(
    ctx: &SteeringContext<'_>,
    layout: &ParamLayout,
    targets: &[TargetState],
    paths: &PathList,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&PathDerivatives) -> Result<T> + Sync,
{
    paths
        .par_iter()
        .map(|&(k, l)| f(&path_derivatives(ctx, layout, k, l, targets)?))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn stochastic_information_full(
    ctx: &SteeringContext<'_>,
    layout: &ParamLayout,
    targets: &[TargetState],
    paths: &PathList,
    a: &CMatrix,
    sigma2: f64,
    basis: &[CMatrix],
) -> Result<RMatrix> {
    let a_factor = psd_factor(a)?;
    let total = layout.len() + basis.len() + 1;
    let per_path = map_paths(ctx, layout, targets, paths, |pd| {
        stochastic_path_information(pd, a, &a_factor, sigma2, basis)
    })?;
    Ok(sum_ordered(per_path, total))
}

fn stochastic_checks(scenario: &Scenario, a: &CMatrix, sigma2: f64, layout: &ParamLayout) -> Result<()> {
    check_noise(sigma2)?;
    check_layout(scenario, layout)?;
    if a.shape() != (layout.targets, layout.targets) {
        return Err(Error::InvalidArgument(
            "covariance size does not match the number of targets".into(),
        ));
    }
    Ok(())
}

/// Stochastic CRLB on the target parameters.
pub fn stochastic_crlb(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    a: &CMatrix,
    sigma2: f64,
    layout: &ParamLayout,
) -> Result<BoundResult> {
    stochastic_crlb_with_basis(scenario, waveforms, a, sigma2, layout, &hermitian_basis(layout.targets))
}

/// [`stochastic_crlb`] with a caller-chosen real parameterization of the covariance.
pub fn stochastic_crlb_with_basis(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    a: &CMatrix,
    sigma2: f64,
    layout: &ParamLayout,
    basis: &[CMatrix],
) -> Result<BoundResult> {
    stochastic_checks(scenario, a, sigma2, layout)?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let paths: Vec<_> = scenario.paths().collect();
    let full = stochastic_information_full(&ctx, layout, &scenario.targets, &paths, a, sigma2, basis)?;
    let schur = schur_complement(&full, layout.len())?;
    if schur.pseudo_inverse_used {
        log::warn!(
            "nuisance block is singular (condition {:.3e}); pseudo-inverse used",
            schur.condition
        );
    }
    BoundResult::from_information(&schur.matrix)
}

/// Dense Fisher information over `[psi, covariance parameters, noise]`: entry
/// `(i, j)` is `sum_kl Tr{R^{-1} dR_i R^{-1} dR_j}`. Small problems only.
pub fn stochastic_fim_full(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    a: &CMatrix,
    sigma2: f64,
    layout: &ParamLayout,
) -> Result<RMatrix> {
    stochastic_fim_full_with_basis(scenario, waveforms, a, sigma2, layout, &hermitian_basis(layout.targets))
}

pub fn stochastic_fim_full_with_basis(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    a: &CMatrix,
    sigma2: f64,
    layout: &ParamLayout,
    basis: &[CMatrix],
) -> Result<RMatrix> {
    stochastic_checks(scenario, a, sigma2, layout)?;
    guard_dense(scenario)?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let paths = all_path_derivatives(&ctx, layout, &scenario.targets)?;
    let pq = layout.len();
    let total = pq + basis.len() + 1;
    let n = scenario.snapshot_len();
    let mut info = RMatrix::zeros(total, total);
    for pd in &paths {
        let r = &pd.h * a * pd.h.adjoint() + CMatrix::identity(n, n).scale(sigma2);
        let rinv = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("dense covariance is not positive definite", f64::INFINITY))?
            .inverse();
        let mut dr: Vec<CMatrix> = Vec::with_capacity(total);
        for m in 0..pq {
            let q = layout.index(m).target;
            let mut dh = CMatrix::zeros(n, layout.targets);
            dh.set_column(q, &pd.d.column(m));
            let t = &dh * a * pd.h.adjoint();
            dr.push(&t + t.adjoint());
        }
        for e in basis {
            dr.push(&pd.h * e * pd.h.adjoint());
        }
        dr.push(CMatrix::identity(n, n));
        let prod: Vec<CMatrix> = dr.iter().map(|d| &rinv * d).collect();
        for i in 0..total {
            for j in 0..total {
                info[(i, j)] += trace_product(&prod[i], &prod[j]).re;
            }
        }
    }
    Ok(symmetrize(&info))
}

fn guard_dense(scenario: &Scenario) -> Result<()> {
    let n = scenario.snapshot_len();
    if n > DENSE_ORACLE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "dense oracle needs L_r*N <= {DENSE_ORACLE_LIMIT}, got {n}"
        )));
    }
    Ok(())
}

fn deterministic_kernel(pd: &PathDerivatives) -> Result<CMatrix> {
    let g = pd.h.adjoint() * &pd.h;
    let htd = pd.h.adjoint() * &pd.d;
    let coef = gram_solve(&g, &htd)?;
    Ok(hermitian_part(&(pd.d.adjoint() * &pd.d - htd.adjoint() * coef)))
}

/// Per-path `D^H Pi_perp D` (complex `PQ x PQ`), the alpha-independent part of the
/// deterministic information, in path order.
pub fn deterministic_kernels(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    layout: &ParamLayout,
) -> Result<Vec<CMatrix>> {
    check_layout(scenario, layout)?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let paths: Vec<_> = scenario.paths().collect();
    map_paths(&ctx, layout, &scenario.targets, &paths, deterministic_kernel)
}

/// Deterministic information on `psi` from precomputed kernels and per-path reflectivities.
pub fn deterministic_information_from_kernels(
    kernels: &[CMatrix],
    alphas: &[CVector],
    sigma2: f64,
    layout: &ParamLayout,
) -> Result<RMatrix> {
    check_noise(sigma2)?;
    if alphas.len() != kernels.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} reflectivity vectors, got {}",
            kernels.len(),
            alphas.len()
        )));
    }
    let pq = layout.len();
    let mut info = RMatrix::zeros(pq, pq);
    for (x, alpha) in kernels.iter().zip(alphas) {
        if alpha.len() != layout.targets {
            return Err(Error::InvalidArgument(
                "reflectivity vector length does not match targets".into(),
            ));
        }
        for i in 0..pq {
            let ai = alpha[layout.index(i).target].conj();
            for j in 0..pq {
                let aj = alpha[layout.index(j).target];
                info[(i, j)] += (x[(i, j)] * ai * aj).re;
            }
        }
    }
    Ok(symmetrize(&info).scale(2.0 / sigma2))
}

/// Deterministic CRLB for given per-path reflectivities (path order).
pub fn deterministic_crlb(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    alphas: &[CVector],
    sigma2: f64,
    layout: &ParamLayout,
) -> Result<BoundResult> {
    let kernels = deterministic_kernels(scenario, waveforms, layout)?;
    let info = deterministic_information_from_kernels(&kernels, alphas, sigma2, layout)?;
    BoundResult::from_information(&info)
}

/// Dense deterministic Fisher information over `[psi, (Re alpha_kl, Im alpha_kl) per path, noise]`.
pub fn deterministic_fim_full(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    alphas: &[CVector],
    sigma2: f64,
    layout: &ParamLayout,
) -> Result<RMatrix> {
    check_noise(sigma2)?;
    check_layout(scenario, layout)?;
    guard_dense(scenario)?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let paths = all_path_derivatives(&ctx, layout, &scenario.targets)?;
    if alphas.len() != paths.len() {
        return Err(Error::InvalidArgument(
            "one reflectivity vector per path is required".into(),
        ));
    }
    let pq = layout.len();
    let q = layout.targets;
    let total = pq + 2 * q * paths.len() + 1;
    let n = scenario.snapshot_len();
    let mut info = RMatrix::zeros(total, total);
    for (idx, (pd, alpha)) in paths.iter().zip(alphas).enumerate() {
        // mean derivatives, zero outside this path's own reflectivity block
        let mut dmu = CMatrix::zeros(n, total);
        for m in 0..pq {
            let tq = layout.index(m).target;
            dmu.set_column(m, &(pd.d.column(m) * alpha[tq]));
        }
        let off = pq + 2 * q * idx;
        for t in 0..q {
            dmu.set_column(off + t, &pd.h.column(t));
            dmu.set_column(off + q + t, &(pd.h.column(t) * Complex64::new(0.0, 1.0)));
        }
        let gram = dmu.adjoint() * &dmu;
        info += gram.map(|v| 2.0 * v.re / sigma2);
        info[(total - 1, total - 1)] += n as f64 / (sigma2 * sigma2);
    }
    Ok(symmetrize(&info))
}

/// Draws per-path reflectivities `alpha_kl ~ CN(0, A)` for EMCB trial `trial`.
pub fn draw_reflectivities(factor: &CMatrix, paths: usize, seed: u64, trial: u64) -> Vec<CVector> {
    let mut rng = stream(seed, &[0x454d_4342, trial]);
    let q = factor.ncols();
    (0..paths)
        .map(|_| {
            let w = CVector::from_fn(q, |_, _| complex_normal(&mut rng, 1.0));
            factor * w
        })
        .collect()
}

/// Deterministic CRLB averaged over `trials` reflectivity draws from `CN(0, A)`.
pub fn emcb(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    a: &CMatrix,
    sigma2: f64,
    trials: usize,
    seed: u64,
    layout: &ParamLayout,
) -> Result<EmcbResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("EMCB needs at least one trial".into()));
    }
    check_noise(sigma2)?;
    let factor = psd_factor(a)?;
    let kernels = deterministic_kernels(scenario, waveforms, layout)?;
    emcb_from_kernels(&kernels, &factor, sigma2, trials, seed, layout)
}

/// EMCB from precomputed deterministic kernels and a factor of the reflectivity covariance.
pub fn emcb_from_kernels(
    kernels: &[CMatrix],
    factor: &CMatrix,
    sigma2: f64,
    trials: usize,
    seed: u64,
    layout: &ParamLayout,
) -> Result<EmcbResult> {
    let draws: Vec<Option<RMatrix>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let alphas = draw_reflectivities(factor, kernels.len(), seed, t);
            deterministic_information_from_kernels(kernels, &alphas, sigma2, layout)
                .and_then(|info| invert_spd(&info))
                .map(|(c, _)| c)
                .ok()
        })
        .collect();
    let pq = layout.len();
    let mut sum = RMatrix::zeros(pq, pq);
    let mut sum_sq = RMatrix::zeros(pq, pq);
    let mut accepted = 0usize;
    for c in draws.iter().flatten() {
        sum += c;
        sum_sq += c.component_mul(c);
        accepted += 1;
    }
    let rejected = trials - accepted;
    if rejected as f64 > EMCB_MAX_REJECTION * trials as f64 || accepted == 0 {
        return Err(Error::numerical(
            format!("{rejected} of {trials} EMCB draws gave a singular information matrix"),
            f64::INFINITY,
        ));
    }
    let m = accepted as f64;
    let mean = sum.unscale(m);
    let se = if accepted > 1 {
        let var = (sum_sq - mean.component_mul(&mean) * m).unscale(m - 1.0);
        var.map(|v| (v.max(0.0) / m).sqrt())
    } else {
        RMatrix::zeros(pq, pq)
    };
    let matrix = symmetrize(&mean);
    // conditioning of the averaged bound, as seen through its inverse
    let conditioning = invert_spd(&matrix).map(|(_, c)| c).unwrap_or(f64::INFINITY);
    Ok(EmcbResult {
        bound: BoundResult {
            per_param_variance: matrix.diagonal().iter().copied().collect(),
            matrix,
            conditioning,
        },
        trials: accepted,
        rejected,
        standard_errors: se,
    })
}
