//! Maximum-likelihood estimation of the target parameters.
//!
//! Both models share one search: a coarse grid stage on the deterministic concentrated
//! objective (single-target scan, peak combinations and a greedy sequential pass), then
//! Nelder-Mead refinement of the model's own objective from the best few candidate sets.
//! The stochastic objective is profiled over `(A, noise)` by an inner EM fit.

pub mod grid;
pub mod optim;
mod stochastic;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::ParamLayout;
use crate::error::{Error, Result};
use crate::numkit::gram_solve;
use crate::scenario::{Scenario, TargetState};
use crate::signal::{ColumnModel, SnapshotSet, SteeringContext, SteeringMatrix};
use crate::waveform::LfmWaveformSet;
use crate::{CMatrix, CVector, Complex64, Model};

pub use optim::{nelder_mead, SimplexOptions, SimplexOutcome};
pub use stochastic::NuisanceFit;

/// Iteration cap and relative tolerance of the inner stochastic nuisance fit.
pub const NUISANCE_MAX_ITERS: usize = 500;
pub const NUISANCE_TOL: f64 = 1e-11;
/// Initial simplex edge for velocity components, m/s.
const VELOCITY_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub center: [f64; 2],
    pub half_width: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            half_width: 200.0,
            step: 10.0,
        }
    }
}

impl GridSpec {
    /// Grid coordinates along one axis.
    pub fn axis(&self, dim: usize) -> Vec<f64> {
        let count = (2.0 * self.half_width / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.center[dim] - self.half_width + i as f64 * self.step)
            .collect()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|d| (p[d] - self.center[d]).abs() <= self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub grid: GridSpec,
    /// Number of candidate target sets refined by the simplex stage.
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Simplex size (meters, m/s for velocities) at which refinement stops.
    #[serde(default = "default_refine_tol")]
    pub refine_tol: f64,
    /// Objective-evaluation budget per refinement.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Single-target scan peaks combined into candidate target sets.
    #[serde(default = "default_peaks")]
    pub peaks: usize,
}

fn default_starts() -> usize {
    3
}
fn default_refine_tol() -> f64 {
    1e-3
}
fn default_max_iters() -> usize {
    600
}
fn default_peaks() -> usize {
    6
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            starts: default_starts(),
            refine_tol: default_refine_tol(),
            max_iters: default_max_iters(),
            peaks: default_peaks(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, _params_per_target: usize) -> Result<()> {
        let g = &self.grid;
        if !(g.step > 0.0 && g.half_width > 0.0 && g.step.is_finite() && g.half_width.is_finite()) {
            return Err(Error::Config("search.grid step and half_width must be positive".into()));
        }
        if !g.center.iter().all(|c| c.is_finite()) {
            return Err(Error::Config("search.grid.center must be finite".into()));
        }
        if self.starts == 0 || self.max_iters == 0 || self.peaks == 0 {
            return Err(Error::Config("search.starts, max_iters and peaks must be >= 1".into()));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::Config("search.refine_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Nuisance {
    Stochastic { covariance: CMatrix, noise_power: f64 },
    Deterministic { alphas: Vec<CVector>, noise_power: f64 },
}

impl Nuisance {
    pub fn noise_power(&self) -> f64 {
        match self {
            Self::Stochastic { noise_power, .. } | Self::Deterministic { noise_power, .. } => *noise_power,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub psi_hat: Vec<f64>,
    pub targets: Vec<TargetState>,
    pub objective: f64,
    pub nuisance: Nuisance,
    /// Objective evaluations spent by the winning refinement.
    pub iterations: usize,
    pub converged: bool,
}

fn complex_json(v: &Complex64) -> serde_json::Value {
    serde_json::json!([v.re, v.im])
}

impl EstimateResult {
    pub fn to_json_value(&self, layout: &ParamLayout) -> serde_json::Value {
        let nuisance = match &self.nuisance {
            Nuisance::Stochastic {
                covariance,
                noise_power,
            } => serde_json::json!({
                "model": "stochastic",
                "noise_power": noise_power,
                "covariance": (0..covariance.nrows())
                    .map(|i| (0..covariance.ncols()).map(|j| complex_json(&covariance[(i, j)])).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            }),
            Nuisance::Deterministic { alphas, noise_power } => serde_json::json!({
                "model": "deterministic",
                "noise_power": noise_power,
                "alphas": alphas.iter().map(|a| a.iter().map(complex_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
            }),
        };
        serde_json::json!({
            "parameters": layout.names(),
            "psi_hat": self.psi_hat,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "nuisance": nuisance,
        })
    }
}

/// One path's snapshot reference with its energy.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Observation<'a> {
    pub k: usize,
    pub l: usize,
    pub r: &'a [Complex64],
    pub energy: f64,
}

pub(crate) fn observations<'a>(scenario: &Scenario, snapshots: &'a SnapshotSet) -> Result<Vec<Observation<'a>>> {
    if snapshots.paths.len() != scenario.path_count() {
        return Err(Error::InvalidArgument(format!(
            "snapshot set has {} paths, scenario has {}",
            snapshots.paths.len(),
            scenario.path_count()
        )));
    }
    let len = scenario.snapshot_len();
    snapshots
        .paths
        .iter()
        .map(|p| {
            if p.r.len() != len {
                return Err(Error::InvalidArgument(format!(
                    "snapshot ({}, {}) has length {}, expected {len}",
                    p.k,
                    p.l,
                    p.r.len()
                )));
            }
            Ok(Observation {
                k: p.k,
                l: p.l,
                r: p.r.as_slice(),
                energy: p.r.norm_squared(),
            })
        })
        .collect()
}

/// `H^H H`, `H^H r` and `||r||^2` of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStats {
    pub gram: CMatrix,
    pub proj: CVector,
    pub energy: f64,
}

pub(crate) fn stats_from_columns(obs: &Observation<'_>, cols: &[ColumnModel], samples: usize) -> PathStats {
    let q = cols.len();
    let proj = CVector::from_iterator(q, cols.iter().map(|c| c.project(obs.r, samples)));
    let mut gram = CMatrix::zeros(q, q);
    for i in 0..q {
        for j in i..q {
            let v = cols[i].inner(&cols[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v.conj();
        }
        gram[(i, i)] = Complex64::new(gram[(i, i)].re, 0.0);
    }
    PathStats {
        gram,
        proj,
        energy: obs.energy,
    }
}

pub(crate) fn path_stats(
    ctx: &SteeringContext<'_>,
    obs: &[Observation<'_>],
    targets: &[TargetState],
) -> Result<Vec<PathStats>> {
    let n = ctx.samples();
    obs.iter()
        .map(|o| Ok(stats_from_columns(o, &ctx.columns(o.k, o.l, targets, false)?, n)))
        .collect()
}

/// `||Pi_perp r||^2` from path statistics; columns with zero energy are dropped.
pub(crate) fn residual(stats: &PathStats) -> Result<f64> {
    let keep: Vec<usize> = (0..stats.proj.len()).filter(|&i| stats.gram[(i, i)].re > 0.0).collect();
    if keep.is_empty() {
        return Ok(stats.energy);
    }
    let g = stats.gram.select_rows(&keep).select_columns(&keep);
    let z = stats.proj.select_rows(&keep);
    let coef = gram_solve(&g, &CMatrix::from_column_slice(z.len(), 1, z.as_slice()))?;
    Ok((stats.energy - z.dotc(&coef.column(0)).re).max(0.0))
}

pub(crate) fn sigma2_from_stats(stats: &[PathStats], n: usize) -> Result<f64> {
    let mut acc = 0.0;
    for st in stats {
        acc += residual(st)?;
    }
    Ok(acc / (n * stats.len()) as f64)
}

/// Least-squares reflectivities `(H^H H)^{-1} H^H r`.
pub fn det_alpha_hat(h: &SteeringMatrix, r: &CVector) -> Result<CVector> {
    if r.len() != h.columns.nrows() {
        return Err(Error::InvalidArgument(
            "snapshot length does not match the steering matrix".into(),
        ));
    }
    let g = h.columns.adjoint() * &h.columns;
    let z = h.columns.adjoint() * r;
    Ok(gram_solve(&g, &CMatrix::from_column_slice(z.len(), 1, z.as_slice()))?
        .column(0)
        .into_owned())
}

/// Mean squared projection residual over all paths and snapshot entries.
pub fn det_sigma2_hat(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    snapshots: &SnapshotSet,
    targets: &[TargetState],
) -> Result<f64> {
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let obs = observations(scenario, snapshots)?;
    sigma2_from_stats(&path_stats(&ctx, &obs, targets)?, scenario.snapshot_len())
}

/// The deterministic concentrated objective; equal to [`det_sigma2_hat`].
pub fn det_concentrated_objective(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    snapshots: &SnapshotSet,
    targets: &[TargetState],
) -> Result<f64> {
    det_sigma2_hat(scenario, waveforms, snapshots, targets)
}

fn nll_norm(scenario: &Scenario) -> f64 {
    (scenario.path_count() * scenario.l_r()) as f64
}

/// Stochastic negative log-likelihood `(1/(M_t M_r L_r)) sum_kl [log det R + r^H R^{-1} r]`.
pub fn stochastic_nll(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    snapshots: &SnapshotSet,
    targets: &[TargetState],
    a: &CMatrix,
    noise: f64,
) -> Result<f64> {
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive, got {noise}"
        )));
    }
    if a.shape() != (targets.len(), targets.len()) {
        return Err(Error::InvalidArgument(
            "covariance size does not match the number of targets".into(),
        ));
    }
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let obs = observations(scenario, snapshots)?;
    let stats = path_stats(&ctx, &obs, targets)?;
    stochastic::nll_from_stats(&stats, a, noise, scenario.snapshot_len(), nll_norm(scenario))
}

/// Fits `(A, noise)` for fixed target states by maximizing the stochastic likelihood.
pub fn fit_stochastic_nuisance(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    snapshots: &SnapshotSet,
    targets: &[TargetState],
) -> Result<NuisanceFit> {
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let obs = observations(scenario, snapshots)?;
    let stats = path_stats(&ctx, &obs, targets)?;
    stochastic::fit_nuisance(
        &stats,
        scenario.snapshot_len(),
        nll_norm(scenario),
        NUISANCE_MAX_ITERS,
        NUISANCE_TOL,
    )
}

/// Assignment of estimated to true targets minimizing the total position distance:
/// `result[q]` is the estimate matched to true target `q`.
pub fn match_targets(estimated: &[TargetState], truth: &[TargetState]) -> Vec<usize> {
    let q = truth.len().min(estimated.len());
    let dist = |a: &TargetState, b: &TargetState| (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1]);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..estimated.len()).permutations(q) {
        let cost: f64 = perm
            .iter()
            .enumerate()
            .map(|(t, &e)| dist(&estimated[e], &truth[t]))
            .sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, perm));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Estimated parameter vector reordered to the true targets' labels.
pub fn matched_psi(result: &EstimateResult, truth: &[TargetState], layout: &ParamLayout) -> Vec<f64> {
    let perm = match_targets(&result.targets, truth);
    let ordered: Vec<TargetState> = perm.iter().map(|&e| result.targets[e]).collect();
    layout.extract(&ordered)
}

struct Objective<'a> {
    ctx: SteeringContext<'a>,
    obs: Vec<Observation<'a>>,
    layout: ParamLayout,
    base: Vec<TargetState>,
    n: usize,
    norm: f64,
}

impl Objective<'_> {
    fn stats(&self, psi: &[f64]) -> Result<Vec<PathStats>> {
        path_stats(&self.ctx, &self.obs, &self.layout.apply(&self.base, psi))
    }

    fn concentrated(&self, psi: &[f64]) -> f64 {
        self.stats(psi)
            .and_then(|s| sigma2_from_stats(&s, self.n))
            .unwrap_or(f64::INFINITY)
    }

    fn value(&self, model: Model, psi: &[f64]) -> f64 {
        match model {
            Model::Deterministic => self.concentrated(psi),
            Model::Stochastic => self
                .stats(psi)
                .and_then(|s| stochastic::fit_nuisance(&s, self.n, self.norm, NUISANCE_MAX_ITERS, NUISANCE_TOL))
                .map(|f| f.nll)
                .unwrap_or(f64::INFINITY),
        }
    }
}

/// Runs the two-stage search for the model's ML estimate.
///
/// Parameters outside the layout (velocities when `P = 2`) are taken from `scenario.targets`;
/// the positions there are not used.
///
/// The stochastic refinement also starts from the refined deterministic estimate.
pub fn estimate(
    model: Model,
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    snapshots: &SnapshotSet,
    search: &SearchConfig,
    layout: &ParamLayout,
) -> Result<EstimateResult> {
    search.validate(layout.per_target)?;
    if layout.targets != scenario.target_count() {
        return Err(Error::InvalidArgument(
            "layout and scenario disagree on the number of targets".into(),
        ));
    }
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let obs = observations(scenario, snapshots)?;
    let mut base = scenario.targets.clone();
    if layout.per_target == 4 {
        for t in &mut base {
            t.velocity = [0.0, 0.0];
        }
    }
    let objective = Objective {
        ctx,
        obs,
        layout: *layout,
        base: base.clone(),
        n: scenario.snapshot_len(),
        norm: nll_norm(scenario),
    };

    let candidates = grid::candidate_sets(&objective.ctx, &objective.obs, &search.grid, &base, search.peaks)?;
    let mut ranked: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .map(|positions| {
            let mut start = base.clone();
            for (t, p) in start.iter_mut().zip(&positions) {
                t.position = *p;
            }
            let psi = layout.extract(&start);
            (objective.concentrated(&psi), psi)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    ranked.dedup_by(|a, b| a.1 == b.1);
    ranked.truncate(search.starts);
    if ranked.is_empty() || !ranked[0].0.is_finite() {
        return Err(Error::numerical(
            "no feasible candidate target set on the search grid",
            f64::INFINITY,
        ));
    }

    let steps: Vec<f64> = (0..layout.len())
        .map(|m| {
            if layout.index(m).component < 2 {
                0.5 * search.grid.step
            } else {
                VELOCITY_STEP
            }
        })
        .collect();
    let opts = SimplexOptions {
        x_tol: search.refine_tol,
        f_tol: 0.0,
        max_evals: search.max_iters,
        restarts: 1,
    };
    let refine = |model: Model, starts: &[Vec<f64>]| {
        let refined: Vec<SimplexOutcome> = starts
            .par_iter()
            .map(|psi| nelder_mead(|x| objective.value(model, x), psi, &steps, &opts))
            .collect();
        refined
            .into_iter()
            .enumerate()
            .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
            .map(|(_, o)| o)
            .expect("at least one start")
    };
    let mut starts: Vec<Vec<f64>> = ranked.into_iter().map(|(_, psi)| psi).collect();
    let best = match model {
        Model::Deterministic => refine(model, &starts),
        Model::Stochastic => {
            let det = refine(Model::Deterministic, &starts);
            if det.value.is_finite() {
                starts.truncate(search.starts - 1);
                starts.insert(0, det.x);
            }
            let mut out = refine(model, &starts);
            out.evaluations += det.evaluations;
            out
        }
    };
    if !best.value.is_finite() {
        return Err(Error::numerical("refinement found no feasible point", f64::INFINITY));
    }

    let targets = layout.apply(&base, &best.x);
    let stats = path_stats(&objective.ctx, &objective.obs, &targets)?;
    let (nuisance, objective_value, inner_ok) = match model {
        Model::Deterministic => {
            let sigma2 = sigma2_from_stats(&stats, objective.n)?;
            let alphas = stats
                .iter()
                .map(|st| {
                    let rhs = CMatrix::from_column_slice(st.proj.len(), 1, st.proj.as_slice());
                    Ok(gram_solve(&st.gram, &rhs)?.column(0).into_owned())
                })
                .collect::<Result<Vec<_>>>()?;
            (
                Nuisance::Deterministic {
                    alphas,
                    noise_power: sigma2,
                },
                sigma2,
                true,
            )
        }
        Model::Stochastic => {
            let fit = stochastic::fit_nuisance(&stats, objective.n, objective.norm, NUISANCE_MAX_ITERS, NUISANCE_TOL)?;
            (
                Nuisance::Stochastic {
                    covariance: fit.covariance.clone(),
                    noise_power: fit.noise_power,
                },
                fit.nll,
                fit.converged,
            )
        }
    };
    Ok(EstimateResult {
        psi_hat: best.x,
        targets,
        objective: objective_value,
        nuisance,
        iterations: best.evaluations,
        converged: best.converged && inner_ok,
    })
}
