//! Experiment geometry: array placement, target states and the per-path
//! quantities (delay, Doppler, bearings, propagation loss) derived from them.
//!
//! Conventions:
//! - bearings are measured from the array boresight, positive counterclockwise,
//!   wrapped into (-pi, pi];
//! - path `(k, l)` joins transmit array `k` to receive array `l`, both zero-based;
//! - time samples are indexed `n = 1..=N`, so a delay of `n0` samples shifts the
//!   waveform to start at sample `n0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WAVE_SPEED: f64 = 2.9979e8;
pub const DEFAULT_CARRIER_FREQ: f64 = 1.0e9;
pub const DEFAULT_ELEMENT_SPACING: f64 = 0.5;

/// Minimum target-to-array distance (meters) before the geometry is treated as degenerate.
const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Transmit,
    Receive,
}

/// A uniform linear array with its phase center at `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub center: [f64; 2],
    pub element_count: usize,
    /// Inter-element spacing in wavelengths.
    pub element_spacing: f64,
    /// Boresight direction, radians from the +x axis.
    pub orientation: f64,
    pub kind: ArrayKind,
    /// Transmit beam steering angle relative to boresight (ignored for receive arrays).
    pub steer: f64,
}

impl ArraySpec {
    pub fn new(center: [f64; 2], element_count: usize, orientation: f64, kind: ArrayKind) -> Self {
        Self {
            center,
            element_count,
            element_spacing: DEFAULT_ELEMENT_SPACING,
            orientation: wrap_angle(orientation),
            kind,
            steer: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count < 1 {
            return Err(Error::InvalidScenario("array element_count must be >= 1".into()));
        }
        if !(self.element_spacing > 0.0 && self.element_spacing.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "element_spacing must be positive, got {}",
                self.element_spacing
            )));
        }
        if !(self.orientation > -PI && self.orientation <= PI) {
            return Err(Error::InvalidScenario(format!(
                "orientation {} outside (-pi, pi]",
                self.orientation
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidScenario("array center must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub position: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl TargetState {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            position: [x, y],
            velocity: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tx_arrays: Vec<ArraySpec>,
    pub rx_arrays: Vec<ArraySpec>,
    pub targets: Vec<TargetState>,
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
    /// Sampling interval in seconds.
    pub sample_interval: f64,
    pub samples: usize,
    pub total_energy: f64,
    pub noise_power: f64,
    pub wave_speed: f64,
}

/// Geometric quantities of one transmit-target-receive path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathGeometry {
    pub delay_samples: f64,
    pub doppler_per_sample: f64,
    pub tx_bearing: f64,
    pub rx_bearing: f64,
    pub path_loss: f64,
    pub tx_range: f64,
    pub rx_range: f64,
    /// Direction from the target toward the transmitter, radians from +x.
    pub tx_direction: f64,
    /// Direction from the target toward the receiver, radians from +x.
    pub rx_direction: f64,
}

/// Partial derivatives of the path quantities with respect to one target parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeometryPartials {
    pub delay_samples: f64,
    pub doppler_per_sample: f64,
    pub tx_bearing: f64,
    pub rx_bearing: f64,
    pub path_loss: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Ring placement: transmitters at odd multiples of pi/M_t, receivers at even
/// multiples of pi/M_r, every array looking at the origin.
pub fn place_ring(m_t: usize, m_r: usize, radius: f64) -> Result<(Vec<ArraySpec>, Vec<ArraySpec>)> {
    place_ring_with(m_t, m_r, radius, 1, 1)
}

/// [`place_ring`] with explicit element counts per transmit and receive array.
pub fn place_ring_with(
    m_t: usize,
    m_r: usize,
    radius: f64,
    tx_elements: usize,
    rx_elements: usize,
) -> Result<(Vec<ArraySpec>, Vec<ArraySpec>)> {
    if m_t == 0 || m_r == 0 {
        return Err(Error::InvalidArgument(format!(
            "ring needs at least one array of each kind (m_t={m_t}, m_r={m_r})"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ring radius must be positive, got {radius}"
        )));
    }
    if tx_elements == 0 || rx_elements == 0 {
        return Err(Error::InvalidArgument("element counts must be >= 1".into()));
    }
    let facing_origin = |x: f64, y: f64| wrap_angle((-y).atan2(-x));
    let tx = (1..=m_t)
        .map(|k| {
            let ang = (2 * k - 1) as f64 * PI / m_t as f64;
            let (x, y) = (radius * ang.cos(), radius * ang.sin());
            ArraySpec::new([x, y], tx_elements, facing_origin(x, y), ArrayKind::Transmit)
        })
        .collect();
    let rx = (1..=m_r)
        .map(|l| {
            let ang = 2.0 * (l - 1) as f64 * PI / m_r as f64;
            let (x, y) = (radius * ang.cos(), radius * ang.sin());
            ArraySpec::new([x, y], rx_elements, facing_origin(x, y), ArrayKind::Receive)
        })
        .collect();
    Ok((tx, rx))
}

impl Scenario {
    pub fn m_t(&self) -> usize {
        self.tx_arrays.len()
    }

    pub fn m_r(&self) -> usize {
        self.rx_arrays.len()
    }

    pub fn target_count(&self) -> usize {
        self.targets.len()
    }

    /// Elements per transmit array (all transmit arrays share one size).
    pub fn l_t(&self) -> usize {
        self.tx_arrays.first().map_or(1, |a| a.element_count)
    }

    /// Elements per receive array (all receive arrays share one size).
    pub fn l_r(&self) -> usize {
        self.rx_arrays.first().map_or(1, |a| a.element_count)
    }

    /// Length of one path snapshot, `L_r * N`.
    pub fn snapshot_len(&self) -> usize {
        self.l_r() * self.samples
    }

    pub fn path_count(&self) -> usize {
        self.m_t() * self.m_r()
    }

    /// Iterates `(k, l)` in the fixed path order used everywhere (transmitter-major).
    pub fn paths(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m_r = self.m_r();
        (0..self.m_t()).flat_map(move |k| (0..m_r).map(move |l| (k, l)))
    }

    /// Angular carrier frequency Omega in rad/s.
    pub fn carrier_omega(&self) -> f64 {
        2.0 * PI * self.carrier_freq
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_arrays.is_empty() || self.rx_arrays.is_empty() || self.targets.is_empty() {
            return Err(Error::InvalidScenario(
                "scenario needs at least one transmit array, receive array and target".into(),
            ));
        }
        for (name, v) in [
            ("carrier_freq", self.carrier_freq),
            ("sample_interval", self.sample_interval),
            ("total_energy", self.total_energy),
            ("noise_power", self.noise_power),
            ("wave_speed", self.wave_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!("{name} must be positive, got {v}")));
            }
        }
        if self.samples == 0 {
            return Err(Error::InvalidScenario("samples must be >= 1".into()));
        }
        for (arrays, kind) in [
            (&self.tx_arrays, ArrayKind::Transmit),
            (&self.rx_arrays, ArrayKind::Receive),
        ] {
            let size = arrays[0].element_count;
            for a in arrays.iter() {
                a.validate()?;
                if a.kind != kind {
                    return Err(Error::InvalidScenario(format!(
                        "array kind mismatch: expected {kind:?}"
                    )));
                }
                if a.element_count != size {
                    return Err(Error::InvalidScenario(format!(
                        "all {kind:?} arrays must have the same element count"
                    )));
                }
            }
        }
        let speed_cap = 1e-3 * self.wave_speed;
        for (q, t) in self.targets.iter().enumerate() {
            if !t.position.iter().chain(t.velocity.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidScenario(format!("target {q} has non-finite state")));
            }
            if t.velocity[0].hypot(t.velocity[1]) >= speed_cap {
                return Err(Error::InvalidScenario(format!(
                    "target {q} speed must stay below 1e-3 of the wave speed"
                )));
            }
            for a in self.tx_arrays.iter().chain(self.rx_arrays.iter()) {
                let r = (t.position[0] - a.center[0]).hypot(t.position[1] - a.center[1]);
                if r < MIN_RANGE {
                    return Err(Error::DegenerateGeometry(format!(
                        "target {q} coincides with an array center"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy of the scenario with the targets replaced.
    pub fn with_targets(&self, targets: Vec<TargetState>) -> Self {
        Self {
            targets,
            ..self.clone()
        }
    }
}

/// Geometry of path `(k, l)` through target `q`.
pub fn path_geometry(scenario: &Scenario, k: usize, q: usize, l: usize) -> Result<PathGeometry> {
    let target = scenario
        .targets
        .get(q)
        .ok_or_else(|| Error::InvalidArgument(format!("target index {q} out of range")))?;
    check_path(scenario, k, l)?;
    target_path_geometry(scenario, k, l, target)
}

pub(crate) fn check_path(scenario: &Scenario, k: usize, l: usize) -> Result<()> {
    if k >= scenario.m_t() || l >= scenario.m_r() {
        return Err(Error::InvalidArgument(format!(
            "path ({k}, {l}) out of range for {}x{} arrays",
            scenario.m_t(),
            scenario.m_r()
        )));
    }
    Ok(())
}

/// Geometry of path `(k, l)` for an arbitrary target state (not necessarily one of
/// the scenario's targets). Indices are assumed valid.
pub fn target_path_geometry(scenario: &Scenario, k: usize, l: usize, target: &TargetState) -> Result<PathGeometry> {
    let tx = &scenario.tx_arrays[k];
    let rx = &scenario.rx_arrays[l];
    let [x, y] = target.position;
    let (dxt, dyt) = (tx.center[0] - x, tx.center[1] - y);
    let (dxr, dyr) = (rx.center[0] - x, rx.center[1] - y);
    let tx_range = dxt.hypot(dyt);
    let rx_range = dxr.hypot(dyr);
    if tx_range < MIN_RANGE || rx_range < MIN_RANGE {
        return Err(Error::DegenerateGeometry(format!(
            "target at ({x}, {y}) coincides with an array center on path ({k}, {l})"
        )));
    }
    let c = scenario.wave_speed;
    let dt = scenario.sample_interval;
    let total = tx_range + rx_range;
    let tx_direction = dyt.atan2(dxt);
    let rx_direction = dyr.atan2(dxr);

    let [vx, vy] = target.velocity;
    let omega = scenario.carrier_omega();
    let doppler_rad_s =
        vx * omega * (dxt / tx_range + dxr / rx_range) / c + vy * omega * (dyt / tx_range + dyr / rx_range) / c;

    Ok(PathGeometry {
        delay_samples: total / c / dt,
        doppler_per_sample: doppler_rad_s * dt,
        // bearing of the target as seen from the array: opposite of the target-to-array direction
        tx_bearing: wrap_angle((-dyt).atan2(-dxt) - tx.orientation),
        rx_bearing: wrap_angle((-dyr).atan2(-dxr) - rx.orientation),
        path_loss: 1.0 / (total * total),
        tx_range,
        rx_range,
        tx_direction,
        rx_direction,
    })
}

/// Partials of the path quantities with respect to `[x, y, v_x, v_y]` of the target.
pub fn geometry_partials(
    scenario: &Scenario,
    k: usize,
    l: usize,
    target: &TargetState,
) -> Result<[GeometryPartials; 4]> {
    let g = target_path_geometry(scenario, k, l, target)?;
    let c = scenario.wave_speed;
    let dt = scenario.sample_interval;
    let (ct, st) = (g.tx_direction.cos(), g.tx_direction.sin());
    let (cr, sr) = (g.rx_direction.cos(), g.rx_direction.sin());
    let (rt, rr) = (g.tx_range, g.rx_range);
    let total = rt + rr;

    // d(R_t + R_r)/dx and /dy
    let dtotal = [-(ct + cr), -(st + sr)];
    // d(bearing)/dx, /dy: the bearing from the array to the target is atan2(y - y_a, x - x_a)
    let dtheta_t = [st / rt, -ct / rt];
    let dtheta_r = [sr / rr, -cr / rr];

    let [vx, vy] = target.velocity;
    let scale = scenario.carrier_omega() * dt / c;
    // derivatives of the direction cosines/sines with respect to x and y
    let dcos_t = [-st * st / rt, ct * st / rt];
    let dsin_t = [ct * st / rt, -ct * ct / rt];
    let dcos_r = [-sr * sr / rr, cr * sr / rr];
    let dsin_r = [cr * sr / rr, -cr * cr / rr];

    let mut out = [GeometryPartials::default(); 4];
    for i in 0..2 {
        out[i] = GeometryPartials {
            delay_samples: dtotal[i] / c / dt,
            doppler_per_sample: scale * (vx * (dcos_t[i] + dcos_r[i]) + vy * (dsin_t[i] + dsin_r[i])),
            tx_bearing: dtheta_t[i],
            rx_bearing: dtheta_r[i],
            path_loss: -2.0 * dtotal[i] / (total * total * total),
        };
    }
    out[2].doppler_per_sample = scale * (ct + cr);
    out[3].doppler_per_sample = scale * (st + sr);
    Ok(out)
}
