//! Spatial and spatio-temporal steering structures and snapshot synthesis.
//!
//! A path snapshot has length `L_r * N` with element-major layout: entry
//! `m * N + n` is receive element `m` at time sample `n + 1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{kron_vec, psd_factor};
use crate::rng::{complex_normal, stream};
use crate::scenario::{check_path, target_path_geometry, ArraySpec, PathGeometry, Scenario, TargetState};
use crate::waveform::{steering_amplitude, temporal_window_scaled, LfmWaveformSet, TemporalWindow};
use crate::{CMatrix, CVector, Complex64, Model};

fn ula_phase(array: &ArraySpec, m: usize) -> f64 {
    2.0 * PI * array.element_spacing * (m as f64 - 0.5 * (array.element_count as f64 - 1.0))
}

/// ULA response of `array` toward `bearing` (radians from boresight).
pub fn rx_steering(array: &ArraySpec, bearing: f64) -> CVector {
    let s = bearing.sin();
    CVector::from_fn(array.element_count, |m, _| {
        Complex64::from_polar(1.0, ula_phase(array, m) * s)
    })
}

/// Derivative of [`rx_steering`] with respect to the bearing.
pub fn rx_steering_derivative(array: &ArraySpec, bearing: f64) -> CVector {
    let (s, c) = bearing.sin_cos();
    CVector::from_fn(array.element_count, |m, _| {
        let ph = ula_phase(array, m);
        Complex64::new(0.0, ph * c) * Complex64::from_polar(1.0, ph * s)
    })
}

/// Transmit gain `w^H a_t(bearing)` of a conventional unit-norm beamformer steered
/// to `array.steer`, and its derivative with respect to the bearing.
pub fn tx_gain(array: &ArraySpec, bearing: f64) -> (Complex64, Complex64) {
    if array.element_count == 1 {
        return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let w = rx_steering(array, array.steer).unscale((array.element_count as f64).sqrt());
    let a = rx_steering(array, bearing);
    let da = rx_steering_derivative(array, bearing);
    (w.dotc(&a), w.dotc(&da))
}

/// Factored spatio-temporal steering vector of one target on one path,
/// `path_loss * tx_gain * spatial (x) temporal`, with the pieces needed for derivatives.
#[derive(Debug, Clone)]
pub struct ColumnModel {
    pub geometry: PathGeometry,
    pub tx_gain: Complex64,
    pub d_tx_gain: Complex64,
    pub spatial: CVector,
    pub d_spatial: CVector,
    pub temporal: TemporalWindow,
}

impl ColumnModel {
    pub fn scale(&self) -> Complex64 {
        self.tx_gain * self.geometry.path_loss
    }

    pub fn dense(&self, samples: usize) -> CVector {
        kron_vec(&self.spatial, &self.temporal.to_dense(samples)) * self.scale()
    }

    /// `h^H r` without forming `h`.
    pub fn project(&self, r: &[Complex64], samples: usize) -> Complex64 {
        let t = &self.temporal;
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, a) in self.spatial.iter().enumerate() {
            let row = &r[m * samples + t.start..m * samples + t.end()];
            let inner: Complex64 = t.values.iter().zip(row).map(|(b, x)| b.conj() * x).sum();
            acc += a.conj() * inner;
        }
        self.scale().conj() * acc
    }

    /// `h^H h'`.
    pub fn inner(&self, other: &ColumnModel) -> Complex64 {
        self.scale().conj() * other.scale() * self.spatial.dotc(&other.spatial) * self.temporal.inner(&other.temporal)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.inner(self).re
    }
}

/// Scenario plus waveform with the waveform amplitude precomputed.
#[derive(Debug, Clone, Copy)]
pub struct SteeringContext<'a> {
    pub scenario: &'a Scenario,
    pub waveforms: &'a LfmWaveformSet,
    amplitude: f64,
}

impl<'a> SteeringContext<'a> {
    pub fn new(scenario: &'a Scenario, waveforms: &'a LfmWaveformSet) -> Result<Self> {
        waveforms.validate(scenario.m_t())?;
        Ok(Self {
            scenario,
            waveforms,
            amplitude: steering_amplitude(waveforms, scenario),
        })
    }

    pub fn samples(&self) -> usize {
        self.scenario.samples
    }

    pub fn snapshot_len(&self) -> usize {
        self.scenario.snapshot_len()
    }

    /// Column model for an arbitrary target state on path `(k, l)`.
    pub fn column(&self, k: usize, l: usize, target: &TargetState, with_derivatives: bool) -> Result<ColumnModel> {
        check_path(self.scenario, k, l)?;
        let geometry = target_path_geometry(self.scenario, k, l, target)?;
        let rx = &self.scenario.rx_arrays[l];
        let tx = &self.scenario.tx_arrays[k];
        let (g, dg) = tx_gain(tx, geometry.tx_bearing);
        let temporal = temporal_window_scaled(
            self.waveforms,
            self.scenario,
            k,
            geometry.delay_samples,
            geometry.doppler_per_sample,
            self.amplitude,
            with_derivatives,
        );
        Ok(ColumnModel {
            geometry,
            tx_gain: g,
            d_tx_gain: dg,
            spatial: rx_steering(rx, geometry.rx_bearing),
            d_spatial: if with_derivatives {
                rx_steering_derivative(rx, geometry.rx_bearing)
            } else {
                CVector::zeros(0)
            },
            temporal,
        })
    }

    pub fn columns(
        &self,
        k: usize,
        l: usize,
        targets: &[TargetState],
        with_derivatives: bool,
    ) -> Result<Vec<ColumnModel>> {
        targets.iter().map(|t| self.column(k, l, t, with_derivatives)).collect()
    }

    pub fn steering_matrix_for(&self, k: usize, l: usize, targets: &[TargetState]) -> Result<SteeringMatrix> {
        let n = self.samples();
        let cols: Vec<CVector> = self.columns(k, l, targets, false)?.iter().map(|c| c.dense(n)).collect();
        let columns = if cols.is_empty() {
            CMatrix::zeros(self.snapshot_len(), 0)
        } else {
            CMatrix::from_columns(&cols)
        };
        Ok(SteeringMatrix { columns, k, l })
    }

    /// Steering matrices of every path, in path order.
    pub fn all_steering(&self, targets: &[TargetState]) -> Result<Vec<SteeringMatrix>> {
        self.scenario
            .paths()
            .map(|(k, l)| self.steering_matrix_for(k, l, targets))
            .collect()
    }
}

/// `h_kl^q` for target `q` of the scenario.
pub fn spatio_temporal_steering(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    k: usize,
    q: usize,
    l: usize,
) -> Result<CVector> {
    let target = scenario
        .targets
        .get(q)
        .ok_or_else(|| Error::InvalidArgument(format!("target index {q} out of range")))?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    Ok(ctx.column(k, l, target, false)?.dense(scenario.samples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    pub columns: CMatrix,
    pub k: usize,
    pub l: usize,
}

/// Stacks the steering vectors of all scenario targets on path `(k, l)`.
pub fn build_steering_matrix(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    k: usize,
    l: usize,
) -> Result<SteeringMatrix> {
    SteeringContext::new(scenario, waveforms)?.steering_matrix_for(k, l, &scenario.targets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityModel {
    pub mode: Model,
    /// Target reflectivity covariance (stochastic mode; also the draw distribution for Monte-Carlo bounds).
    pub covariance: Option<CMatrix>,
    /// Fixed reflectivities per path, in path order (deterministic mode).
    pub fixed_values: Option<Vec<CVector>>,
}

impl ReflectivityModel {
    pub fn stochastic(covariance: CMatrix) -> Self {
        Self {
            mode: Model::Stochastic,
            covariance: Some(covariance),
            fixed_values: None,
        }
    }

    /// Independent targets with equal reflectivity power.
    pub fn iid(targets: usize, power: f64) -> Self {
        Self::stochastic(CMatrix::identity(targets, targets).scale(power))
    }

    pub fn deterministic(values: Vec<CVector>) -> Self {
        Self {
            mode: Model::Deterministic,
            covariance: None,
            fixed_values: Some(values),
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let q = scenario.target_count();
        if let Some(a) = &self.covariance {
            if a.shape() != (q, q) {
                return Err(Error::InvalidArgument(format!(
                    "reflectivity covariance is {}x{}, expected {q}x{q}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            psd_factor(a)?;
        }
        match self.mode {
            Model::Stochastic if self.covariance.is_none() => Err(Error::InvalidArgument(
                "stochastic reflectivity needs a covariance".into(),
            )),
            Model::Deterministic => {
                let vals = self
                    .fixed_values
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("deterministic reflectivity needs fixed_values".into()))?;
                if vals.len() != scenario.path_count() || vals.iter().any(|v| v.len() != q) {
                    return Err(Error::InvalidArgument(format!(
                        "fixed_values must hold {} vectors of length {q}",
                        scenario.path_count()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Average reflectivity power of each target.
    fn target_powers(&self, scenario: &Scenario) -> Vec<Vec<f64>> {
        let paths = scenario.path_count();
        let q = scenario.target_count();
        match (&self.fixed_values, &self.covariance, self.mode) {
            (Some(vals), _, Model::Deterministic) => {
                vals.iter().map(|v| v.iter().map(|a| a.norm_sqr()).collect()).collect()
            }
            (_, Some(a), _) => vec![(0..q).map(|i| a[(i, i)].re).collect(); paths],
            _ => vec![vec![0.0; q]; paths],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSnapshot {
    pub k: usize,
    pub l: usize,
    pub r: CVector,
    pub alpha: CVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub paths: Vec<PathSnapshot>,
    pub noise_power: f64,
}

#[derive(Serialize, Deserialize)]
struct PathDump {
    k: usize,
    l: usize,
    r: Vec<f64>,
    alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotDump {
    noise_power: f64,
    paths: Vec<PathDump>,
}

fn interleave(v: &CVector) -> Vec<f64> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

fn deinterleave(v: &[f64]) -> Result<CVector> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::Config("interleaved complex array has odd length".into()));
    }
    Ok(CVector::from_iterator(
        v.len() / 2,
        v.chunks(2).map(|c| Complex64::new(c[0], c[1])),
    ))
}

impl SnapshotSet {
    /// JSON debug dump with complex vectors as interleaved `[re, im, re, im, ...]` arrays.
    pub fn to_debug_json(&self) -> Result<String> {
        let dump = SnapshotDump {
            noise_power: self.noise_power,
            paths: self
                .paths
                .iter()
                .map(|p| PathDump {
                    k: p.k,
                    l: p.l,
                    r: interleave(&p.r),
                    alpha: interleave(&p.alpha),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_debug_json(text: &str) -> Result<Self> {
        let dump: SnapshotDump = serde_json::from_str(text)?;
        let paths = dump
            .paths
            .into_iter()
            .map(|p| {
                Ok(PathSnapshot {
                    k: p.k,
                    l: p.l,
                    r: deinterleave(&p.r)?,
                    alpha: deinterleave(&p.alpha)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            paths,
            noise_power: dump.noise_power,
        })
    }
}

/// Draws snapshots `r_kl = H_kl alpha_kl + e_kl` for every path.
///
/// Each path uses its own substream derived from `(seed, k, l)`; reflectivities are
/// drawn before the noise.
pub fn synthesize(
    scenario: &Scenario,
    waveforms: &LfmWaveformSet,
    model: &ReflectivityModel,
    seed: u64,
) -> Result<SnapshotSet> {
    model.validate(scenario)?;
    let ctx = SteeringContext::new(scenario, waveforms)?;
    let steering = ctx.all_steering(&scenario.targets)?;
    synthesize_with(&steering, model, scenario.noise_power, seed)
}

/// [`synthesize`] with precomputed steering matrices (in path order).
pub fn synthesize_with(
    steering: &[SteeringMatrix],
    model: &ReflectivityModel,
    noise_power: f64,
    seed: u64,
) -> Result<SnapshotSet> {
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise power must be >= 0, got {noise_power}"
        )));
    }
    let factor = match (model.mode, &model.covariance) {
        (Model::Stochastic, Some(a)) => Some(psd_factor(a)?),
        (Model::Stochastic, None) => {
            return Err(Error::InvalidArgument(
                "stochastic reflectivity needs a covariance".into(),
            ))
        }
        (Model::Deterministic, _) => None,
    };
    let paths = steering
        .iter()
        .enumerate()
        .map(|(idx, h)| {
            let mut rng = stream(seed, &[h.k as u64, h.l as u64]);
            let q = h.columns.ncols();
            let alpha = match &factor {
                Some(f) => {
                    let w = CVector::from_fn(q, |_, _| complex_normal(&mut rng, 1.0));
                    f * w
                }
                None => model
                    .fixed_values
                    .as_ref()
                    .and_then(|v| v.get(idx))
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument("deterministic reflectivity needs fixed_values".into()))?,
            };
            let mut r = &h.columns * &alpha;
            if noise_power > 0.0 {
                for v in r.iter_mut() {
                    *v += complex_normal(&mut rng, noise_power);
                }
            }
            Ok(PathSnapshot {
                k: h.k,
                l: h.l,
                r,
                alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SnapshotSet { paths, noise_power })
}

/// Noise power giving the requested average per-path, per-target SNR (linear).
pub fn calibrate_noise(scenario: &Scenario, model: &ReflectivityModel, target_snr: f64) -> Result<f64> {
    if !(target_snr > 0.0 && target_snr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target SNR must be positive, got {target_snr}"
        )));
    }
    model.validate(scenario)?;
    let powers = model.target_powers(scenario);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (idx, (k, l)) in scenario.paths().enumerate() {
        for (t, power) in scenario.targets.iter().zip(&powers[idx]) {
            let g = target_path_geometry(scenario, k, l, t)?;
            acc += power * g.path_loss * g.path_loss;
            count += 1;
        }
    }
    let mean = scenario.total_energy * acc / count as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidScenario("average received signal power is zero".into()));
    }
    Ok(mean / target_snr)
}

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{place_ring_with, ArrayKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scenario(l_r: usize, samples: usize, targets: Vec<TargetState>) -> Scenario {
        let (tx, rx) = place_ring_with(2, 2, 1100.0, 1, l_r).unwrap();
        Scenario {
            tx_arrays: tx,
            rx_arrays: rx,
            targets,
            carrier_freq: 1e9,
            sample_interval: 1e-6,
            samples,
            total_energy: 2.0,
            noise_power: 1e-14,
            wave_speed: 3e8,
        }
    }

    fn two_targets() -> Vec<TargetState> {
        vec![TargetState::at(-40.0, -50.0), TargetState::at(60.0, 50.0)]
    }

    #[test]
    fn rx_steering_examples() {
        let arr = ArraySpec::new([0.0, 0.0], 2, 0.0, ArrayKind::Receive);
        let a0 = rx_steering(&arr, 0.0);
        assert!(a0.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let a = rx_steering(&arr, PI / 2.0);
        assert!((a[0] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_norm_identity() {
        let s = scenario(4, 400, two_targets());
        let set = LfmWaveformSet::desk_default(2);
        for (k, l) in s.paths() {
            for q in 0..2 {
                let h = spatio_temporal_steering(&s, &set, k, q, l).unwrap();
                let g = path_geometry_of(&s, k, q, l);
                let expect = 4.0 * s.total_energy / 2.0 * g.path_loss * g.path_loss;
                assert_relative_eq!(h.norm_squared(), expect, max_relative = 1e-9);
            }
        }
    }

    fn path_geometry_of(s: &Scenario, k: usize, q: usize, l: usize) -> PathGeometry {
        crate::scenario::path_geometry(s, k, q, l).unwrap()
    }

    #[test]
    fn single_element_reduces_to_temporal() {
        let s = scenario(1, 400, two_targets());
        let set = LfmWaveformSet::desk_default(2);
        let h = spatio_temporal_steering(&s, &set, 1, 0, 1).unwrap();
        let g = path_geometry_of(&s, 1, 0, 1);
        let b = crate::waveform::temporal_steering(&set, &s, 1, &g).values;
        assert!((h - b * Complex64::new(g.path_loss, 0.0)).norm() < 1e-20);
    }

    #[test]
    fn separated_targets_are_weakly_correlated() {
        let s = scenario(
            2,
            600,
            vec![TargetState::at(-40.0, -50.0), TargetState::at(410.0, 320.0)],
        );
        let set = LfmWaveformSet::desk_default(2);
        let h0 = spatio_temporal_steering(&s, &set, 0, 0, 0).unwrap();
        let h1 = spatio_temporal_steering(&s, &set, 0, 1, 0).unwrap();
        let c = h0.dotc(&h1).norm() / (h0.norm() * h1.norm());
        // several range cells apart: only chirp sidelobes remain
        assert!(c < 0.05, "correlation {c}");
    }

    #[test]
    fn single_target_matrix_is_the_vector() {
        let s = scenario(2, 400, vec![TargetState::at(10.0, 20.0)]);
        let set = LfmWaveformSet::desk_default(2);
        let h = build_steering_matrix(&s, &set, 1, 0).unwrap();
        assert_eq!(h.columns.ncols(), 1);
        let v = spatio_temporal_steering(&s, &set, 1, 0, 0).unwrap();
        assert_eq!(h.columns.column(0).into_owned(), v);
    }

    #[test]
    fn permuting_targets_permutes_columns() {
        let t = two_targets();
        let s = scenario(2, 400, t.clone());
        let sw = s.with_targets(vec![t[1], t[0]]);
        let set = LfmWaveformSet::desk_default(2);
        let a = build_steering_matrix(&s, &set, 0, 1).unwrap().columns;
        let b = build_steering_matrix(&sw, &set, 0, 1).unwrap().columns;
        assert_eq!(a.column(0), b.column(1));
        assert_eq!(a.column(1), b.column(0));
    }

    #[test]
    fn well_separated_gram_is_diagonally_dominant() {
        let s = scenario(
            4,
            700,
            vec![TargetState::at(-40.0, -50.0), TargetState::at(410.0, 320.0)],
        );
        let set = LfmWaveformSet::desk_default(2);
        for (k, l) in s.paths() {
            let h = build_steering_matrix(&s, &set, k, l).unwrap().columns;
            let g = h.adjoint() * &h;
            for q in 0..2 {
                let geo = path_geometry_of(&s, k, q, l);
                let diag = 4.0 * s.total_energy / 2.0 * geo.path_loss * geo.path_loss;
                assert_relative_eq!(g[(q, q)].re, diag, max_relative = 1e-9);
            }
            let c = g[(0, 1)].norm() / (g[(0, 0)].re * g[(1, 1)].re).sqrt();
            assert!(c < 0.5, "path ({k},{l}) correlation {c}");
        }
    }

    #[test]
    fn project_matches_dense() {
        let s = scenario(3, 400, two_targets());
        let set = LfmWaveformSet::desk_default(2);
        let ctx = SteeringContext::new(&s, &set).unwrap();
        let mut rng = stream(3, &[]);
        let r = CVector::from_fn(s.snapshot_len(), |_, _| complex_normal(&mut rng, 1.0));
        let cols = ctx.columns(1, 1, &s.targets, false).unwrap();
        for c in &cols {
            let dense = c.dense(s.samples);
            assert!((c.project(r.as_slice(), s.samples) - dense.dotc(&r)).norm() < 1e-12 * dense.norm() * r.norm());
        }
        let d0 = cols[0].dense(s.samples);
        let d1 = cols[1].dense(s.samples);
        assert!((cols[0].inner(&cols[1]) - d0.dotc(&d1)).norm() <= 1e-12 * d0.norm() * d1.norm());
    }

    #[test]
    fn noiseless_fixed_alpha_is_exact() {
        let mut s = scenario(2, 400, two_targets());
        s.noise_power = 1.0;
        let set = LfmWaveformSet::desk_default(2);
        let vals: Vec<CVector> = (0..4)
            .map(|i| CVector::from_vec(vec![Complex64::new(1.0 + i as f64, 0.5), Complex64::new(-0.3, 2.0)]))
            .collect();
        let model = ReflectivityModel::deterministic(vals.clone());
        let ctx = SteeringContext::new(&s, &set).unwrap();
        let steering = ctx.all_steering(&s.targets).unwrap();
        let snaps = synthesize_with(&steering, &model, 0.0, 7).unwrap();
        for (p, h) in snaps.paths.iter().zip(&steering) {
            assert_eq!(p.r, &h.columns * &vals[h.k * 2 + h.l]);
        }
    }

    #[test]
    fn missing_fixed_values_is_invalid() {
        let s = scenario(2, 400, two_targets());
        let set = LfmWaveformSet::desk_default(2);
        let model = ReflectivityModel {
            mode: Model::Deterministic,
            covariance: None,
            fixed_values: None,
        };
        assert!(matches!(
            synthesize(&s, &set, &model, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn synthesis_is_reproducible() {
        let s = scenario(2, 400, two_targets());
        let set = LfmWaveformSet::desk_default(2);
        let m = ReflectivityModel::iid(2, 1.0);
        let a = synthesize(&s, &set, &m, 11).unwrap();
        let b = synthesize(&s, &set, &m, 11).unwrap();
        let c = synthesize(&s, &set, &m, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn debug_json_round_trip() {
        let s = scenario(1, 300, two_targets());
        let set = LfmWaveformSet::desk_default(2);
        let a = synthesize(&s, &set, &ReflectivityModel::iid(2, 1.0), 5).unwrap();
        let text = a.to_debug_json().unwrap();
        assert_eq!(SnapshotSet::from_debug_json(&text).unwrap(), a);
    }

    #[test]
    fn calibrate_equal_losses() {
        // single path, single target: average reduces to one term
        let mut s = scenario(1, 300, vec![TargetState::at(0.0, 0.0)]);
        s.tx_arrays.truncate(1);
        s.rx_arrays.truncate(1);
        let m = ReflectivityModel::iid(1, 0.7);
        let g = path_geometry_of(&s, 0, 0, 0);
        let sig2 = calibrate_noise(&s, &m, 1.0).unwrap();
        assert_relative_eq!(
            sig2,
            s.total_energy * 0.7 * g.path_loss * g.path_loss,
            max_relative = 1e-14
        );
        let half = calibrate_noise(&s, &m, 2.0).unwrap();
        assert_relative_eq!(half, sig2 / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn calibrate_ring_mean() {
        let s = scenario(1, 300, two_targets());
        let m = ReflectivityModel::iid(2, 1.0);
        let mut acc = 0.0;
        for (k, l) in s.paths() {
            for q in 0..2 {
                let tx = s.tx_arrays[k].center;
                let rx = s.rx_arrays[l].center;
                let p = s.targets[q].position;
                let d = (p[0] - tx[0]).hypot(p[1] - tx[1]) + (p[0] - rx[0]).hypot(p[1] - rx[1]);
                acc += d.powi(-4);
            }
        }
        let expect = s.total_energy * acc / 8.0;
        assert_relative_eq!(
            calibrate_noise(&s, &m, db_to_linear(0.0)).unwrap(),
            expect,
            max_relative = 1e-12
        );
    }

    #[test]
    fn alpha_sample_covariance_matches() {
        let s = scenario(1, 80, two_targets());
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.4),
                Complex64::new(0.5, -0.4),
                Complex64::new(1.0, 0.0),
            ],
        );
        let model = ReflectivityModel::stochastic(a.clone());
        let h = vec![SteeringMatrix {
            columns: CMatrix::zeros(s.snapshot_len(), 2),
            k: 0,
            l: 0,
        }];
        let trials = 100_000;
        let mut acc = CMatrix::zeros(2, 2);
        let mut acc_sq = nalgebra::DMatrix::<f64>::zeros(2, 2);
        for t in 0..trials {
            let snap = synthesize_with(&h, &model, 0.0, t).unwrap();
            let al = &snap.paths[0].alpha;
            let outer = al * al.adjoint();
            acc += &outer;
            acc_sq += outer.map(|v| v.norm_sqr());
        }
        let n = trials as f64;
        let mean = acc.unscale(n);
        for i in 0..2 {
            for j in 0..2 {
                let var = acc_sq[(i, j)] / n - mean[(i, j)].norm_sqr();
                let se = (var / n).sqrt();
                assert!(
                    (mean[(i, j)] - a[(i, j)]).norm() < 3.0 * se * 2f64.sqrt(),
                    "entry ({i},{j})"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn rx_steering_is_unit_modulus(bearing in -PI..PI, l in 1usize..16, d in 0.1f64..2.0) {
            let mut arr = ArraySpec::new([0.0, 0.0], l, 0.0, ArrayKind::Receive);
            arr.element_spacing = d;
            let a = rx_steering(&arr, bearing);
            prop_assert!((a.norm_squared() - l as f64).abs() < 1e-10);
            prop_assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }

        #[test]
        fn paths_are_independent_streams(seed in 0u64..1000) {
            let s = scenario(1, 120, two_targets());
            let set = LfmWaveformSet::desk_default(2);
            let snap = synthesize(&s, &set, &ReflectivityModel::iid(2, 1.0), seed).unwrap();
            for i in 0..snap.paths.len() {
                for j in (i + 1)..snap.paths.len() {
                    prop_assert_ne!(&snap.paths[i].alpha, &snap.paths[j].alpha);
                }
            }
        }
    }
}
