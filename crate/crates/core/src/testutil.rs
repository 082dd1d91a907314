//! Small scenarios shared by unit tests.

use crate::scenario::{place_ring_with, Scenario, TargetState};
use crate::waveform::LfmWaveformSet;

/// 300 m ring, 16 samples at 0.5 us, one 3 us chirp per transmitter.
pub(crate) fn small_scenario(
    targets: Vec<TargetState>,
    l_r: usize,
    m_t: usize,
    m_r: usize,
) -> (Scenario, LfmWaveformSet) {
    let (tx, rx) = place_ring_with(m_t, m_r, 300.0, 1, l_r).unwrap();
    let s = Scenario {
        tx_arrays: tx,
        rx_arrays: rx,
        targets,
        carrier_freq: 1e9,
        sample_interval: 0.5e-6,
        samples: 16,
        total_energy: 1.0,
        noise_power: 1e-12,
        wave_speed: 3e8,
    };
    let w = LfmWaveformSet {
        pulse_count: 1,
        pri: 4e-6,
        bandwidth: 2e6,
        pulse_duration: 3e-6,
        tx_offsets: vec![0.0; m_t],
    };
    (s, w)
}
