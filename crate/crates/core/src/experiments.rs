//! Monte-Carlo sweeps: estimator MSE against the matching bound over SNR, and
//! consistency sweeps over the number of paths or the receive-array size.
//!
//! Snapshots are always synthesized with reflectivities drawn from `CN(0, A)`; the model
//! selects the estimator and the bound (stochastic CRLB, or EMCB for the deterministic model).
//! Trial `t` at SNR index `i` uses the seed derived from `(seed, i, t)`, so results do not
//! depend on how trials are scheduled.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{emcb, stochastic_crlb, ParamLayout};
use crate::config::{AsymptoticAxis, ExperimentConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate, matched_psi, SearchConfig};
use crate::rng::derive_seed;
use crate::scenario::{place_ring_with, Scenario};
use crate::signal::{calibrate_noise, db_to_linear, synthesize_with, ReflectivityModel, SteeringContext};
use crate::waveform::LfmWaveformSet;
use crate::{CMatrix, Model};

pub const MIN_SWEEP_TRIALS: usize = 10;
/// Largest `paths * L_r * N` an asymptotic sweep point may reach.
pub const MAX_SWEEP_ENTRIES: usize = 20_000_000;

pub const CSV_HEADER: &str = "config,snr_db,trials,param,mse,bound,sigma2_hat_mean,converged_fraction";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub config_label: String,
    pub snr_db: f64,
    pub trials: usize,
    pub params: Vec<String>,
    /// Per-parameter mean squared error over the trials that produced an estimate.
    pub mse: Vec<f64>,
    pub bound_diag: Vec<f64>,
    /// Noise power used to synthesize the data.
    pub sigma2: f64,
    pub sigma2_hat_mean: f64,
    pub converged_fraction: f64,
    /// Trials whose estimate failed outright (excluded from the MSE).
    pub failed: usize,
    /// Size of the swept dimension (asymptotic sweeps only).
    pub axis_size: Option<usize>,
    /// `(L_r N - Q) / (L_r N)`, the expected noise-power shrinkage at the true parameters.
    pub predicted_bias: f64,
}

impl SweepRecord {
    pub fn bias_factor(&self) -> f64 {
        self.sigma2_hat_mean / self.sigma2
    }

    /// MSE over bound, per parameter.
    pub fn efficiency(&self) -> Vec<f64> {
        self.mse.iter().zip(&self.bound_diag).map(|(m, b)| m / b).collect()
    }
}

struct TrialOutcome {
    sq_err: Vec<f64>,
    sigma2_hat: f64,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_point(
    label: &str,
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    a: &CMatrix,
    layout: &ParamLayout,
    model: Model,
    snr_db: f64,
    trials: usize,
    emcb_trials: usize,
    search: &SearchConfig,
    seed: u64,
    point: u64,
) -> Result<SweepRecord> {
    let reflect = ReflectivityModel::stochastic(a.clone());
    let sigma2 = calibrate_noise(scenario, &reflect, db_to_linear(snr_db))?;
    let mut sc = scenario.clone();
    sc.noise_power = sigma2;
    let ctx = SteeringContext::new(&sc, waveforms)?;
    let steering = ctx.all_steering(&sc.targets)?;
    let truth = layout.extract(&sc.targets);

    let outcomes: Vec<Option<TrialOutcome>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let data = synthesize_with(&steering, &reflect, sigma2, derive_seed(seed, &[point, t])).ok()?;
            match estimate(model, &sc, waveforms, &data, search, layout) {
                Ok(res) => {
                    let psi = matched_psi(&res, &sc.targets, layout);
                    Some(TrialOutcome {
                        sq_err: psi.iter().zip(&truth).map(|(e, v)| (e - v).powi(2)).collect(),
                        sigma2_hat: res.nuisance.noise_power(),
                        converged: res.converged,
                    })
                }
                Err(e) => {
                    log::warn!("{label}: trial {t} at {snr_db} dB failed: {e}");
                    None
                }
            }
        })
        .collect();

    let pq = layout.len();
    let mut sum = vec![0.0; pq];
    let mut sigma_sum = 0.0;
    let mut ok = 0usize;
    let mut converged = 0usize;
    for o in outcomes.iter().flatten() {
        for (s, e) in sum.iter_mut().zip(&o.sq_err) {
            *s += e;
        }
        sigma_sum += o.sigma2_hat;
        ok += 1;
        converged += usize::from(o.converged);
    }
    let denom = ok.max(1) as f64;
    let bound = match model {
        Model::Stochastic => stochastic_crlb(&sc, waveforms, a, sigma2, layout).map(|b| b.per_param_variance),
        Model::Deterministic => emcb(
            &sc,
            waveforms,
            a,
            sigma2,
            emcb_trials,
            derive_seed(seed, &[point, u64::MAX]),
            layout,
        )
        .map(|e| e.bound.per_param_variance),
    };
    let bound_diag = bound.unwrap_or_else(|e| {
        log::warn!("{label}: bound at {snr_db} dB failed: {e}");
        vec![f64::NAN; pq]
    });
    let n = sc.snapshot_len() as f64;
    let q = sc.target_count() as f64;
    Ok(SweepRecord {
        config_label: label.to_string(),
        snr_db,
        trials,
        params: layout.names(),
        mse: sum.iter().map(|s| if ok > 0 { s / denom } else { f64::NAN }).collect(),
        bound_diag,
        sigma2,
        sigma2_hat_mean: if ok > 0 { sigma_sum / denom } else { f64::NAN },
        converged_fraction: converged as f64 / trials as f64,
        failed: trials - ok,
        axis_size: None,
        predicted_bias: (n - q) / n,
    })
}

/// MSE of the model's estimator against its bound at each SNR (dB).
pub fn run_mse_sweep(
    cfg: &ExperimentConfig,
    model: Model,
    snr_grid: &[f64],
    trials: usize,
    search: &SearchConfig,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    if trials < MIN_SWEEP_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "sweeps need at least {MIN_SWEEP_TRIALS} trials, got {trials}"
        )));
    }
    snr_grid
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            log::info!("{}: {snr} dB ({trials} trials)", cfg.label);
            run_point(
                &cfg.label,
                &cfg.scenario,
                &cfg.waveforms,
                &cfg.reflectivity,
                &cfg.layout,
                model,
                snr,
                trials,
                cfg.emcb_trials,
                search,
                seed,
                i as u64,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticReport {
    pub records: Vec<SweepRecord>,
    /// Set when the sweep stopped early at a size exceeding [`MAX_SWEEP_ENTRIES`].
    pub truncated: bool,
}

fn ring_radius(s: &Scenario) -> f64 {
    let c = s.rx_arrays[0].center;
    c[0].hypot(c[1])
}

/// Scenario with the swept dimension set to `size`.
pub fn resize_scenario(base: &Scenario, axis: AsymptoticAxis, size: usize) -> Result<Scenario> {
    let mut s = base.clone();
    match axis {
        AsymptoticAxis::Paths => {
            let (tx, rx) = place_ring_with(base.m_t(), size, ring_radius(base), base.l_t(), base.l_r())?;
            s.tx_arrays = tx;
            s.rx_arrays = rx;
        }
        AsymptoticAxis::ArraySize => {
            for a in &mut s.rx_arrays {
                a.element_count = size;
            }
        }
    }
    s.validate()?;
    Ok(s)
}

/// Grows the receive side along `axis` at a fixed SNR and reports MSE and noise-power bias per size.
#[allow(clippy::too_many_arguments)]
pub fn run_asymptotic_sweep(
    cfg: &ExperimentConfig,
    model: Model,
    axis: AsymptoticAxis,
    sizes: &[usize],
    snr_db: f64,
    trials: usize,
    search: &SearchConfig,
    seed: u64,
) -> Result<AsymptoticReport> {
    if trials < MIN_SWEEP_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "sweeps need at least {MIN_SWEEP_TRIALS} trials, got {trials}"
        )));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidArgument(
            "sizes must be positive and strictly increasing".into(),
        ));
    }
    let tag = match axis {
        AsymptoticAxis::Paths => "m_r",
        AsymptoticAxis::ArraySize => "l_r",
    };
    let mut records = Vec::with_capacity(sizes.len());
    let mut truncated = false;
    for (i, &size) in sizes.iter().enumerate() {
        let sc = resize_scenario(&cfg.scenario, axis, size)?;
        if sc.path_count() * sc.snapshot_len() > MAX_SWEEP_ENTRIES {
            log::warn!("{}: size {size} exceeds the memory guard; sweep truncated", cfg.label);
            truncated = true;
            break;
        }
        let waveforms = &cfg.waveforms;
        let label = format!("{}/{tag}={size}", cfg.label);
        log::info!("{label}: {snr_db} dB ({trials} trials)");
        let mut rec = run_point(
            &label,
            &sc,
            waveforms,
            &cfg.reflectivity,
            &cfg.layout,
            model,
            snr_db,
            trials,
            cfg.emcb_trials,
            search,
            seed,
            i as u64,
        )?;
        rec.axis_size = Some(size);
        records.push(rec);
    }
    Ok(AsymptoticReport { records, truncated })
}

/// CSV with one row per (record, parameter); numbers use the shortest round-trip form.
pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        for (i, p) in r.params.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&r.config_label),
                format_number(r.snr_db),
                r.trials,
                p,
                format_number(r.mse[i]),
                format_number(r.bound_diag[i]),
                format_number(r.sigma2_hat_mean),
                format_number(r.converged_fraction)
            );
        }
    }
    out
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn records_to_json(records: &[SweepRecord]) -> serde_json::Value {
    serde_json::Value::Array(
        records
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("records serialize");
                let obj = v.as_object_mut().expect("record is an object");
                obj.insert("bias_factor".into(), serde_json::json!(r.bias_factor()));
                obj.insert("efficiency".into(), serde_json::json!(r.efficiency()));
                v
            })
            .collect(),
    )
}
