//! JSON experiment configuration.
//!
//! Arrays are given either as a `ring` shorthand or as explicit `tx_arrays` / `rx_arrays`.
//! `samples` may be omitted (or `"auto"`), in which case it is sized to hold every
//! transmitter's pulse train delayed by the largest path length over the search box.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::ParamLayout;
use crate::error::{Error, Result};
use crate::estimator::SearchConfig;
use crate::numkit::psd_factor;
use crate::scenario::{place_ring_with, ArraySpec, Scenario, TargetState, DEFAULT_CARRIER_FREQ, DEFAULT_WAVE_SPEED};
use crate::waveform::{LfmWaveformSet, DEFAULT_GUARD_S};
use crate::{CMatrix, Complex64, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingConfig {
    pub m_t: usize,
    pub m_r: usize,
    pub radius: f64,
    #[serde(default = "one")]
    pub tx_elements: usize,
    #[serde(default = "one")]
    pub rx_elements: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    pub pulse_count: usize,
    pub pri_s: f64,
    pub bandwidth_hz: f64,
    pub pulse_duration_s: f64,
    /// Explicit train start per transmitter; staggered by train length plus `guard_s` when absent.
    #[serde(default)]
    pub tx_offsets_s: Option<Vec<f64>>,
    #[serde(default = "default_guard")]
    pub guard_s: f64,
}

fn default_guard() -> f64 {
    DEFAULT_GUARD_S
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            pulse_count: 3,
            pri_s: 60e-6,
            bandwidth_hz: 1e6,
            pulse_duration_s: 20e-6,
            tx_offsets_s: None,
            guard_s: DEFAULT_GUARD_S,
        }
    }
}

impl WaveformConfig {
    pub fn build(&self, m_t: usize) -> LfmWaveformSet {
        let mut set = LfmWaveformSet::staggered(
            self.pulse_count,
            self.pri_s,
            self.bandwidth_hz,
            self.pulse_duration_s,
            m_t,
            self.guard_s,
        );
        if let Some(offsets) = &self.tx_offsets_s {
            set.tx_offsets = offsets.clone();
        }
        set
    }
}

/// Reflectivity covariance as separate real and imaginary parts, or per-target powers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectivityConfig {
    #[serde(default)]
    pub powers: Option<Vec<f64>>,
    #[serde(default)]
    pub covariance_re: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub covariance_im: Option<Vec<Vec<f64>>>,
}

impl ReflectivityConfig {
    pub fn covariance(&self, targets: usize) -> Result<CMatrix> {
        match (&self.powers, &self.covariance_re) {
            (Some(_), Some(_)) => Err(Error::Config(
                "reflectivity: give either powers or covariance_re, not both".into(),
            )),
            (Some(p), None) => {
                if p.len() != targets {
                    return Err(Error::Config(format!(
                        "reflectivity.powers has {} entries, expected {targets}",
                        p.len()
                    )));
                }
                if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::Config("reflectivity powers must be finite and >= 0".into()));
                }
                Ok(CMatrix::from_diagonal(&crate::CVector::from_iterator(
                    targets,
                    p.iter().map(|v| Complex64::new(*v, 0.0)),
                )))
            }
            (None, Some(re)) => {
                let im = self
                    .covariance_im
                    .clone()
                    .unwrap_or_else(|| vec![vec![0.0; targets]; targets]);
                let square = |m: &Vec<Vec<f64>>| m.len() == targets && m.iter().all(|r| r.len() == targets);
                if !square(re) || !square(&im) {
                    return Err(Error::Config(format!(
                        "reflectivity covariance must be {targets}x{targets}"
                    )));
                }
                let a = CMatrix::from_fn(targets, targets, |i, j| Complex64::new(re[i][j], im[i][j]));
                psd_factor(&a).map_err(|e| Error::Config(format!("reflectivity covariance: {e}")))?;
                Ok(a)
            }
            (None, None) => Ok(CMatrix::identity(targets, targets)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticAxis {
    /// Grow the number of receive arrays.
    Paths,
    /// Grow the number of elements per receive array.
    ArraySize,
}

impl std::str::FromStr for AsymptoticAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paths" => Ok(Self::Paths),
            "array_size" | "array-size" => Ok(Self::ArraySize),
            other => Err(Error::InvalidArgument(format!("unknown asymptotic axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticConfig {
    pub axis: AsymptoticAxis,
    pub sizes: Vec<usize>,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplesSpec {
    Fixed(usize),
    Keyword(String),
}

/// The on-disk configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub ring: Option<RingConfig>,
    #[serde(default)]
    pub tx_arrays: Option<Vec<ArraySpec>>,
    #[serde(default)]
    pub rx_arrays: Option<Vec<ArraySpec>>,
    pub targets: Vec<TargetState>,
    #[serde(default = "default_carrier")]
    pub carrier_freq_hz: f64,
    pub sample_interval_s: f64,
    #[serde(default)]
    pub samples: Option<SamplesSpec>,
    #[serde(default = "default_energy")]
    pub total_energy: f64,
    /// Noise power used when no SNR is requested.
    #[serde(default)]
    pub noise_power: Option<f64>,
    #[serde(default = "default_speed")]
    pub wave_speed: f64,
    #[serde(default)]
    pub waveform: WaveformConfig,
    #[serde(default)]
    pub reflectivity: ReflectivityConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "default_params")]
    pub params_per_target: usize,
    #[serde(default)]
    pub model: Option<Model>,
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub emcb_trials: Option<usize>,
    #[serde(default)]
    pub asymptotic: Option<AsymptoticConfig>,
}

fn default_carrier() -> f64 {
    DEFAULT_CARRIER_FREQ
}
fn default_energy() -> f64 {
    1.0
}
fn default_speed() -> f64 {
    DEFAULT_WAVE_SPEED
}
fn default_params() -> usize {
    2
}

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_EMCB_TRIALS: usize = 200;
pub const DEFAULT_NOISE_POWER: f64 = 1.0;

pub fn default_snr_grid() -> Vec<f64> {
    (0..=10).map(|i| -20.0 + 5.0 * i as f64).collect()
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub scenario: Scenario,
    pub waveforms: LfmWaveformSet,
    pub reflectivity: CMatrix,
    pub search: SearchConfig,
    pub layout: ParamLayout,
    pub model: Model,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub emcb_trials: usize,
    pub asymptotic: Option<AsymptoticConfig>,
    /// Set when `samples` was derived rather than given.
    pub auto_samples: bool,
}

impl ConfigFile {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let (tx, rx) = match (&self.ring, &self.tx_arrays, &self.rx_arrays) {
            (Some(r), None, None) => place_ring_with(r.m_t, r.m_r, r.radius, r.tx_elements, r.rx_elements)
                .map_err(|e| Error::Config(format!("ring: {e}")))?,
            (None, Some(t), Some(r)) => (t.clone(), r.clone()),
            _ => {
                return Err(Error::Config(
                    "give either `ring` or both `tx_arrays` and `rx_arrays`".into(),
                ))
            }
        };
        let q = self.targets.len();
        if q == 0 {
            return Err(Error::Config("at least one target is required".into()));
        }
        let waveforms = self.waveform.build(tx.len());
        let mut scenario = Scenario {
            tx_arrays: tx,
            rx_arrays: rx,
            targets: self.targets.clone(),
            carrier_freq: self.carrier_freq_hz,
            sample_interval: self.sample_interval_s,
            samples: 1,
            total_energy: self.total_energy,
            noise_power: self.noise_power.unwrap_or(DEFAULT_NOISE_POWER),
            wave_speed: self.wave_speed,
        };
        let (samples, auto_samples) = match &self.samples {
            Some(SamplesSpec::Fixed(n)) => (*n, false),
            Some(SamplesSpec::Keyword(k)) if k == "auto" => (auto_samples(&scenario, &waveforms, &self.search), true),
            Some(SamplesSpec::Keyword(k)) => {
                return Err(Error::Config(format!(
                    "samples must be an integer or \"auto\", got {k:?}"
                )))
            }
            None => (auto_samples(&scenario, &waveforms, &self.search), true),
        };
        scenario.samples = samples;
        scenario.validate()?;
        waveforms.validate(scenario.m_t())?;
        self.search.validate(self.params_per_target)?;
        let layout = ParamLayout::new(self.params_per_target, q).map_err(|e| Error::Config(e.to_string()))?;
        let reflectivity = self.reflectivity.covariance(q)?;
        let trials = self.trials.unwrap_or(DEFAULT_TRIALS);
        let emcb_trials = self.emcb_trials.unwrap_or(DEFAULT_EMCB_TRIALS);
        if trials == 0 || emcb_trials == 0 {
            return Err(Error::Config("trials and emcb_trials must be >= 1".into()));
        }
        if let Some(a) = &self.asymptotic {
            if a.sizes.is_empty() || a.sizes.windows(2).any(|w| w[0] >= w[1]) || a.sizes[0] == 0 {
                return Err(Error::Config(
                    "asymptotic.sizes must be positive and strictly increasing".into(),
                ));
            }
        }
        Ok(ExperimentConfig {
            label: self.label.clone().unwrap_or_else(|| "config".into()),
            scenario,
            waveforms,
            reflectivity,
            search: self.search.clone(),
            layout,
            model: self.model.unwrap_or(Model::Deterministic),
            snr_db: self.snr_db.clone().unwrap_or_else(default_snr_grid),
            trials,
            emcb_trials,
            asymptotic: self.asymptotic.clone(),
            auto_samples,
        })
    }
}

/// Samples covering every transmitter's train delayed by the longest two-way path that
/// any target in the search box (or any configured target) can produce.
pub fn auto_samples(scenario: &Scenario, waveforms: &LfmWaveformSet, search: &SearchConfig) -> usize {
    let c = search.grid.center;
    let hw = search.grid.half_width;
    let mut points: Vec<[f64; 2]> = scenario.targets.iter().map(|t| t.position).collect();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            points.push([c[0] + sx * hw, c[1] + sy * hw]);
        }
    }
    let far = |arrays: &[ArraySpec]| {
        arrays
            .iter()
            .flat_map(|a| {
                points
                    .iter()
                    .map(move |p| (p[0] - a.center[0]).hypot(p[1] - a.center[1]))
            })
            .fold(0.0f64, f64::max)
    };
    let max_delay = (far(&scenario.tx_arrays) + far(&scenario.rx_arrays)) / scenario.wave_speed;
    let last_offset = waveforms.tx_offsets.iter().copied().fold(0.0f64, f64::max);
    let span = last_offset + waveforms.train_span() + max_delay;
    (span / scenario.sample_interval).ceil() as usize + 1
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = r#"{
        "label": "unit",
        "ring": {"m_t": 2, "m_r": 3, "radius": 1100, "rx_elements": 4},
        "targets": [{"position": [-40, -50]}, {"position": [60, 50]}],
        "sample_interval_s": 0.5e-6,
        "reflectivity": {"powers": [1.0, 2.0]}
    }"#;

    #[test]
    fn ring_shorthand_resolves() {
        let cfg = parse_config(DESK).unwrap();
        assert_eq!(cfg.scenario.m_t(), 2);
        assert_eq!(cfg.scenario.m_r(), 3);
        assert_eq!(cfg.scenario.l_r(), 4);
        assert!(cfg.auto_samples);
        assert_eq!(cfg.layout.per_target, 2);
        assert_eq!(cfg.reflectivity[(1, 1)].re, 2.0);
        assert_eq!(cfg.model, Model::Deterministic);
        assert_eq!(cfg.snr_db.len(), 11);
    }

    #[test]
    fn auto_samples_cover_latest_train() {
        let cfg = parse_config(DESK).unwrap();
        let s = &cfg.scenario;
        let last = cfg.waveforms.tx_offsets[1] + cfg.waveforms.train_span();
        assert!(s.samples as f64 * s.sample_interval > last + 2.0 * 1100.0 / s.wave_speed);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_shapes() {
        let bad = DESK.replace("\"label\"", "\"lable\"");
        assert!(matches!(parse_config(&bad), Err(Error::Config(_))));
        let bad = DESK.replace("[1.0, 2.0]", "[1.0]");
        assert!(matches!(parse_config(&bad), Err(Error::Config(_))));
        let bad = DESK.replace("\"sample_interval_s\": 0.5e-6", "\"sample_interval_s\": -1");
        assert!(matches!(parse_config(&bad), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn covariance_must_be_psd() {
        let bad = DESK.replace("\"powers\": [1.0, 2.0]", "\"covariance_re\": [[1, 2], [2, 1]]");
        assert!(matches!(parse_config(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn explicit_samples() {
        let text = DESK.replace("\"sample_interval_s\"", "\"samples\": 700, \"sample_interval_s\"");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.scenario.samples, 700);
        assert!(!cfg.auto_samples);
    }
}
