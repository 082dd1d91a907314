//! LFM pulse trains, temporal steering vectors and the transmit orthogonality check.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{PathGeometry, Scenario, TargetState};
use crate::{CVector, Complex64};

/// Guard interval between consecutive transmitters' pulse trains in the default offsets.
pub const DEFAULT_GUARD_S: f64 = 20e-6;
pub const DEFAULT_ORTHOGONALITY_THRESHOLD: f64 = 1e-3;

/// One LFM chirp pulse train per transmitter, staggered in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmWaveformSet {
    pub pulse_count: usize,
    /// Pulse repetition interval, seconds.
    pub pri: f64,
    /// Chirp bandwidth, Hz.
    pub bandwidth: f64,
    /// Pulse duration, seconds.
    pub pulse_duration: f64,
    /// Start time of each transmitter's train, seconds.
    pub tx_offsets: Vec<f64>,
}

impl LfmWaveformSet {
    /// Three 20 us, 1 MHz chirps every 60 us, trains staggered by the train length plus a guard.
    pub fn desk_default(m_t: usize) -> Self {
        Self::staggered(3, 60e-6, 1e6, 20e-6, m_t, DEFAULT_GUARD_S)
    }

    pub fn staggered(
        pulse_count: usize,
        pri: f64,
        bandwidth: f64,
        pulse_duration: f64,
        m_t: usize,
        guard: f64,
    ) -> Self {
        let step = pulse_count as f64 * pri + guard;
        Self {
            pulse_count,
            pri,
            bandwidth,
            pulse_duration,
            tx_offsets: (0..m_t).map(|k| k as f64 * step).collect(),
        }
    }

    pub fn validate(&self, m_t: usize) -> Result<()> {
        if self.pulse_count == 0 {
            return Err(Error::InvalidScenario("pulse_count must be >= 1".into()));
        }
        for (name, v) in [
            ("pri_s", self.pri),
            ("bandwidth_hz", self.bandwidth),
            ("pulse_duration_s", self.pulse_duration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pulse_duration > self.pri {
            return Err(Error::InvalidScenario("pulse_duration_s must not exceed pri_s".into()));
        }
        if self.tx_offsets.len() != m_t {
            return Err(Error::InvalidScenario(format!(
                "expected {m_t} transmitter offsets, got {}",
                self.tx_offsets.len()
            )));
        }
        if self.tx_offsets.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidScenario("tx_offsets_s must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn chirp_rate(&self) -> f64 {
        self.bandwidth / self.pulse_duration
    }

    /// Time from the start of the first pulse to the end of the last.
    pub fn train_span(&self) -> f64 {
        (self.pulse_count - 1) as f64 * self.pri + self.pulse_duration
    }

    /// Rounding tolerance at pulse edges so sample-aligned times land consistently
    /// inside `[0, T_0)`.
    fn edge_tol(&self) -> f64 {
        1e-9 * self.pulse_duration
    }

    fn pulse(&self, t: f64) -> Complex64 {
        let u = t - 0.5 * self.pulse_duration;
        Complex64::from_polar(1.0, PI * self.chirp_rate() * u * u)
    }

    fn pulse_rate(&self, t: f64) -> Complex64 {
        let u = t - 0.5 * self.pulse_duration;
        self.pulse(t) * Complex64::new(0.0, 2.0 * PI * self.chirp_rate() * u)
    }

    /// Pulse train relative to its own start time.
    fn train(&self, t: f64) -> Complex64 {
        match self.local_time(t) {
            Some(u) => self.pulse(u),
            None => Complex64::new(0.0, 0.0),
        }
    }

    fn train_rate(&self, t: f64) -> Complex64 {
        match self.local_time(t) {
            Some(u) => self.pulse_rate(u),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Time since the start of the pulse active at `t`, if any.
    fn local_time(&self, t: f64) -> Option<f64> {
        let tol = self.edge_tol();
        if !(t >= -tol) {
            return None;
        }
        let z = ((t + tol) / self.pri).floor();
        if z >= self.pulse_count as f64 {
            return None;
        }
        let local = t - z * self.pri;
        (local >= -tol && local < self.pulse_duration - tol).then_some(local.max(0.0))
    }

    /// Energy of the undelayed train sampled at `t = j * dt`, `j >= 0`.
    pub fn sampled_energy(&self, dt: f64) -> f64 {
        let last = (self.train_span() / dt).ceil() as usize + 1;
        (0..=last).map(|j| self.train(j as f64 * dt).norm_sqr()).sum()
    }
}

/// Value of transmitter `k`'s pulse train at absolute time `t`.
///
/// # Panics
/// Panics if `k` is not a valid transmitter index of `set`.
pub fn sample_waveform(set: &LfmWaveformSet, k: usize, t: f64) -> Complex64 {
    set.train(t - set.tx_offsets[k])
}

/// Time derivative of [`sample_waveform`] (zero outside the pulses).
pub fn sample_waveform_derivative(set: &LfmWaveformSet, k: usize, t: f64) -> Complex64 {
    set.train_rate(t - set.tx_offsets[k])
}

/// Range resolution `c / (2 f_B)` of a chirp with bandwidth `bandwidth`.
pub fn range_resolution(wave_speed: f64, bandwidth: f64) -> f64 {
    wave_speed / (2.0 * bandwidth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSteering {
    pub values: CVector,
    pub delay_samples: f64,
    pub doppler_per_sample: f64,
    /// Set when no part of the delayed train falls inside the observation window.
    pub empty_support: bool,
}

/// Nonzero stretch of a temporal steering vector, optionally with its delay and
/// Doppler derivatives. `start` is the zero-based position of `values[0]` in the
/// full N-vector (sample index `start + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWindow {
    pub start: usize,
    pub values: Vec<Complex64>,
    pub d_delay: Vec<Complex64>,
    pub d_doppler: Vec<Complex64>,
}

impl TemporalWindow {
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn to_dense(&self, n: usize) -> CVector {
        scatter(self.start, &self.values, n)
    }

    pub fn d_delay_dense(&self, n: usize) -> CVector {
        scatter(self.start, &self.d_delay, n)
    }

    pub fn d_doppler_dense(&self, n: usize) -> CVector {
        scatter(self.start, &self.d_doppler, n)
    }

    /// `self^H other` over the overlap of two windows.
    pub fn inner(&self, other: &TemporalWindow) -> Complex64 {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        (lo..hi)
            .map(|i| self.values[i - self.start].conj() * other.values[i - other.start])
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

fn scatter(start: usize, values: &[Complex64], n: usize) -> CVector {
    let mut out = DVector::zeros(n);
    for (i, v) in values.iter().enumerate() {
        out[start + i] = *v;
    }
    out
}

/// Amplitude applied to the unit-modulus train so that a fully observed,
/// sample-aligned train has energy `E / (M_t L_t)`.
pub fn steering_amplitude(set: &LfmWaveformSet, scenario: &Scenario) -> f64 {
    let per_array = scenario.total_energy / (scenario.m_t() * scenario.l_t()) as f64;
    (per_array / set.sampled_energy(scenario.sample_interval)).sqrt()
}

/// Builds the nonzero window of transmitter `k`'s temporal steering vector for the
/// given fractional delay and per-sample Doppler phase.
pub fn temporal_window(
    set: &LfmWaveformSet,
    scenario: &Scenario,
    k: usize,
    delay_samples: f64,
    doppler_per_sample: f64,
    with_derivatives: bool,
) -> TemporalWindow {
    let amp = steering_amplitude(set, scenario);
    temporal_window_scaled(
        set,
        scenario,
        k,
        delay_samples,
        doppler_per_sample,
        amp,
        with_derivatives,
    )
}

pub(crate) fn temporal_window_scaled(
    set: &LfmWaveformSet,
    scenario: &Scenario,
    k: usize,
    delay_samples: f64,
    doppler_per_sample: f64,
    amp: f64,
    with_derivatives: bool,
) -> TemporalWindow {
    let n = scenario.samples;
    let dt = scenario.sample_interval;
    let offset = set.tx_offsets[k] / dt;
    let first = (delay_samples + offset).floor().max(1.0);
    let last = (delay_samples + offset + set.train_span() / dt).ceil().min(n as f64);
    let mut win = TemporalWindow {
        start: 0,
        values: Vec::new(),
        d_delay: Vec::new(),
        d_doppler: Vec::new(),
    };
    if !(first <= last) {
        return win;
    }
    let (first, last) = (first as usize, last as usize);
    let mut lo = usize::MAX;
    let mut hi = 0;
    let mut vals = Vec::with_capacity(last - first + 1);
    for i in first..=last {
        let t = (i as f64 - delay_samples) * dt;
        let s = sample_waveform(set, k, t);
        if s != Complex64::new(0.0, 0.0) {
            lo = lo.min(i);
            hi = hi.max(i);
        }
        vals.push((i, t, s));
    }
    if lo > hi {
        return win;
    }
    win.start = lo - 1;
    for &(i, t, s) in vals.iter().filter(|(i, _, _)| (lo..=hi).contains(i)) {
        let rot = Complex64::from_polar(amp, i as f64 * doppler_per_sample);
        let v = s * rot;
        win.values.push(v);
        if with_derivatives {
            win.d_delay.push(-dt * sample_waveform_derivative(set, k, t) * rot);
            win.d_doppler.push(Complex64::new(0.0, i as f64) * v);
        }
    }
    win
}

/// Temporal steering vector of transmitter `k` for a path with the given geometry.
pub fn temporal_steering(
    set: &LfmWaveformSet,
    scenario: &Scenario,
    k: usize,
    geometry: &PathGeometry,
) -> TemporalSteering {
    let win = temporal_window(
        set,
        scenario,
        k,
        geometry.delay_samples,
        geometry.doppler_per_sample,
        false,
    );
    TemporalSteering {
        values: win.to_dense(scenario.samples),
        delay_samples: geometry.delay_samples,
        doppler_per_sample: geometry.doppler_per_sample,
        empty_support: win.is_empty(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub max_cross_correlation: f64,
    pub threshold: f64,
    pub pass: bool,
    pub pairs_checked: usize,
    /// Paths whose delayed train misses the observation window entirely.
    pub empty_support_paths: usize,
}

/// Worst normalized cross-correlation between temporal steering vectors of
/// distinct transmitters seen by the same receiver, over all target pairs.
pub fn orthogonality_report(set: &LfmWaveformSet, scenario: &Scenario) -> Result<OrthogonalityReport> {
    orthogonality_report_for(set, scenario, &scenario.targets, DEFAULT_ORTHOGONALITY_THRESHOLD)
}

/// [`orthogonality_report`] over an arbitrary list of target states.
pub fn orthogonality_report_for(
    set: &LfmWaveformSet,
    scenario: &Scenario,
    targets: &[TargetState],
    threshold: f64,
) -> Result<OrthogonalityReport> {
    set.validate(scenario.m_t())?;
    let amp = steering_amplitude(set, scenario);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let mut empty = 0;
    for l in 0..scenario.m_r() {
        // windows[k][q]
        let mut windows = Vec::with_capacity(scenario.m_t());
        for k in 0..scenario.m_t() {
            let mut per_target = Vec::with_capacity(targets.len());
            for t in targets {
                let g = crate::scenario::target_path_geometry(scenario, k, l, t)?;
                let w = temporal_window_scaled(set, scenario, k, g.delay_samples, g.doppler_per_sample, amp, false);
                if w.is_empty() {
                    empty += 1;
                }
                per_target.push(w);
            }
            windows.push(per_target);
        }
        for k in 0..scenario.m_t() {
            for kk in (k + 1)..scenario.m_t() {
                for a in &windows[k] {
                    for b in &windows[kk] {
                        if a.is_empty() || b.is_empty() {
                            continue;
                        }
                        pairs += 1;
                        let c = a.inner(b).norm() / (a.norm_sqr() * b.norm_sqr()).sqrt();
                        worst = worst.max(c);
                    }
                }
            }
        }
    }
    Ok(OrthogonalityReport {
        max_cross_correlation: worst,
        threshold,
        pass: worst < threshold,
        pairs_checked: pairs,
        empty_support_paths: empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{place_ring, ArrayKind, ArraySpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scenario(m_t: usize, samples: usize) -> Scenario {
        let (tx, rx) = place_ring(m_t, 2, 1100.0).unwrap();
        Scenario {
            tx_arrays: tx,
            rx_arrays: rx,
            targets: vec![TargetState::at(-40.0, -50.0), TargetState::at(60.0, 50.0)],
            carrier_freq: 1e9,
            sample_interval: 1e-6,
            samples,
            total_energy: 3.0,
            noise_power: 1.0,
            wave_speed: 3e8,
        }
    }

    #[test]
    fn pulse_center_is_unity() {
        let set = LfmWaveformSet::desk_default(2);
        let t = set.tx_offsets[1] + 0.5 * set.pulse_duration;
        let v = sample_waveform(&set, 1, t);
        assert_relative_eq!(v.re, 1.0, epsilon = 1e-15);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn pulse_start_phase() {
        let set = LfmWaveformSet::desk_default(1);
        let v = sample_waveform(&set, 0, 0.0);
        let expect = Complex64::from_polar(1.0, 5.0 * PI);
        assert!((v - expect).norm() < 1e-12);
        assert!((v - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_between_pulses() {
        let set = LfmWaveformSet::desk_default(1);
        for t in [21e-6, 30e-6, 59.9e-6, 200e-6, -1e-6] {
            assert_eq!(sample_waveform(&set, 0, t), Complex64::new(0.0, 0.0), "t = {t}");
        }
    }

    #[test]
    fn range_resolution_one_megahertz() {
        assert_eq!(range_resolution(3e8, 1e6), 150.0);
    }

    #[test]
    fn energy_identity_full_support() {
        let s = scenario(2, 600);
        let set = LfmWaveformSet::desk_default(2);
        // sample index 1 is t = 0 when the delay is exactly one sample
        for k in 0..2 {
            for delay in [1.0, 7.0, 42.0] {
                let w = temporal_window(&set, &s, k, delay, 0.0, false);
                let e = w.norm_sqr();
                assert_relative_eq!(e, s.total_energy / 2.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn energy_doubling_scales_entries() {
        let mut s = scenario(1, 300);
        let set = LfmWaveformSet::desk_default(1);
        let a = temporal_window(&set, &s, 0, 3.3, 0.01, false);
        s.total_energy *= 2.0;
        let b = temporal_window(&set, &s, 0, 3.3, 0.01, false);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x * 2f64.sqrt() - y).norm() < 1e-14);
        }
    }

    #[test]
    fn disjoint_delays_are_orthogonal() {
        let s = scenario(1, 600);
        let set = LfmWaveformSet::desk_default(1);
        let a = temporal_window(&set, &s, 0, 10.0, 0.0, false);
        let b = temporal_window(&set, &s, 0, 210.0, 0.0, false);
        let c = a.inner(&b).norm() / (a.norm_sqr() * b.norm_sqr()).sqrt();
        assert!(c < 1e-3);
    }

    #[test]
    fn window_outside_observation_is_flagged() {
        let s = scenario(1, 50);
        let set = LfmWaveformSet::desk_default(1);
        let g = PathGeometry {
            delay_samples: 500.0,
            doppler_per_sample: 0.0,
            tx_bearing: 0.0,
            rx_bearing: 0.0,
            path_loss: 1.0,
            tx_range: 1.0,
            rx_range: 1.0,
            tx_direction: 0.0,
            rx_direction: 0.0,
        };
        let ts = temporal_steering(&set, &s, 0, &g);
        assert!(ts.empty_support);
        assert!(ts.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn single_transmitter_report_is_zero() {
        let s = scenario(1, 400);
        let set = LfmWaveformSet::desk_default(1);
        let r = orthogonality_report(&set, &s).unwrap();
        assert_eq!(r.max_cross_correlation, 0.0);
        assert_eq!(r.pairs_checked, 0);
        assert!(r.pass);
    }

    #[test]
    fn staggered_offsets_pass() {
        let s = scenario(2, 600);
        let set = LfmWaveformSet::desk_default(2);
        let r = orthogonality_report(&set, &s).unwrap();
        assert_eq!(r.max_cross_correlation, 0.0);
        assert!(r.pass);
        assert_eq!(r.pairs_checked, 2 * 2 * 2);
    }

    #[test]
    fn overlapping_offsets_fail() {
        // two transmitters mirrored about the x axis see a target on the axis at equal delay
        let tx = vec![
            ArraySpec::new([0.0, 1100.0], 1, -PI / 2.0, ArrayKind::Transmit),
            ArraySpec::new([0.0, -1100.0], 1, PI / 2.0, ArrayKind::Transmit),
        ];
        let rx = vec![ArraySpec::new([1100.0, 0.0], 1, PI, ArrayKind::Receive)];
        let mut s = scenario(2, 400);
        s.tx_arrays = tx;
        s.rx_arrays = rx;
        s.targets = vec![TargetState::at(10.0, 0.0)];
        let mut set = LfmWaveformSet::desk_default(2);
        set.tx_offsets = vec![0.0, 0.0];
        let r = orthogonality_report(&set, &s).unwrap();
        assert!(r.max_cross_correlation > 0.999);
        assert!(!r.pass);
    }

    #[test]
    fn delay_derivative_matches_finite_difference() {
        let s = scenario(1, 300);
        let set = LfmWaveformSet::desk_default(1);
        let (d, w) = (17.3, 0.02);
        let base = temporal_window(&set, &s, 0, d, w, true);
        let h = 1e-5;
        let p = temporal_window(&set, &s, 0, d + h, w, false).to_dense(300);
        let m = temporal_window(&set, &s, 0, d - h, w, false).to_dense(300);
        let fd = (p - m) / Complex64::new(2.0 * h, 0.0);
        let an = base.d_delay_dense(300);
        assert!((fd - &an).norm() <= 1e-6 * an.norm());
    }

    proptest! {
        #[test]
        fn doppler_preserves_norm(delay in 1.0f64..200.0, w in -1.0f64..1.0) {
            let s = scenario(1, 400);
            let set = LfmWaveformSet::desk_default(1);
            let a = temporal_window(&set, &s, 0, delay, 0.0, false).norm_sqr();
            let b = temporal_window(&set, &s, 0, delay, w, false).norm_sqr();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn train_is_periodic(frac in 0.0f64..1.0) {
            let set = LfmWaveformSet::desk_default(1);
            let t = frac * set.pulse_duration * 0.999;
            for z in 0..(set.pulse_count - 1) {
                let a = sample_waveform(&set, 0, t + z as f64 * set.pri);
                let b = sample_waveform(&set, 0, t + (z + 1) as f64 * set.pri);
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn unit_modulus_inside_pulses(t in 0.0f64..200e-6) {
            let set = LfmWaveformSet::desk_default(1);
            let v = sample_waveform(&set, 0, t).norm();
            prop_assert!(v == 0.0 || (v - 1.0).abs() < 1e-12);
        }
    }
}
