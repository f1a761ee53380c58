//! Desired position trajectories `p_d(t)` with analytic derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::Vec3;

/// Reference sample at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
}

/// Move to `target`, starting at `start` and taking `duration` seconds along a
/// minimum-jerk profile. A zero duration is a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Leg {
    pub start: f64,
    pub duration: f64,
    pub target: [f64; 3],
}

/// One sinusoid added to a reference axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub axis: usize,
    /// m
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    pub phase: f64,
}

/// Sum of sinusoids, faded in and out with smooth ramps over `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    pub tones: Vec<Tone>,
    pub start: f64,
    pub end: f64,
    /// Ramp length, s.
    pub ramp: f64,
}

impl Excitation {
    /// Band-limited excitation: `per_axis` tones per axis with log-uniform
    /// frequencies in `band` (Hz) and the given RMS amplitude per axis (m).
    pub fn band_limited(
        rms: [f64; 3],
        band: (f64, f64),
        per_axis: usize,
        start: f64,
        end: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tones = Vec::new();
        for (axis, &r) in rms.iter().enumerate() {
            if r <= 0.0 || per_axis == 0 {
                continue;
            }
            // each tone carries an equal share of the variance
            let amplitude = r * (2.0 / per_axis as f64).sqrt();
            for _ in 0..per_axis {
                let f = (rng.gen_range(band.0.ln()..=band.1.ln())).exp();
                tones.push(Tone {
                    axis,
                    amplitude,
                    frequency: f,
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                });
            }
        }
        Self {
            tones,
            start,
            end,
            ramp: 1.0,
        }
    }

    /// Envelope value and its first two derivatives.
    fn envelope(&self, t: f64) -> (f64, f64, f64) {
        if t <= self.start || t >= self.end {
            return (0.0, 0.0, 0.0);
        }
        let ramp = self.ramp.min(0.5 * (self.end - self.start));
        if ramp <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        if t < self.start + ramp {
            let (s, ds, dds) = min_jerk((t - self.start) / ramp);
            (s, ds / ramp, dds / (ramp * ramp))
        } else if t > self.end - ramp {
            let (s, ds, dds) = min_jerk((self.end - t) / ramp);
            (s, -ds / ramp, dds / (ramp * ramp))
        } else {
            (1.0, 0.0, 0.0)
        }
    }

    fn eval(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let (e, de, dde) = self.envelope(t);
        let mut p = Vec3::zeros();
        let mut v = Vec3::zeros();
        let mut a = Vec3::zeros();
        if e == 0.0 && de == 0.0 {
            return (p, v, a);
        }
        for tone in &self.tones {
            let w = std::f64::consts::TAU * tone.frequency;
            let arg = w * t + tone.phase;
            let s = tone.amplitude * arg.sin();
            let ds = tone.amplitude * w * arg.cos();
            let dds = -tone.amplitude * w * w * arg.sin();
            p[tone.axis] += e * s;
            v[tone.axis] += de * s + e * ds;
            a[tone.axis] += dde * s + 2.0 * de * ds + e * dds;
        }
        (p, v, a)
    }
}

/// `(s, ds/dτ, d²s/dτ²)` of the minimum-jerk blend `10τ³ − 15τ⁴ + 6τ⁵`.
pub fn min_jerk(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    (
        10.0 * t3 - 15.0 * t3 * t + 6.0 * t3 * t2,
        30.0 * t2 - 60.0 * t3 + 30.0 * t3 * t,
        60.0 * t - 180.0 * t2 + 120.0 * t3,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceTrajectory {
    /// Piecewise moves between setpoints.
    Legs {
        start: [f64; 3],
        legs: Vec<Leg>,
        #[serde(default)]
        yaw: f64,
        /// Excitation windows added on top of the legs.
        #[serde(default)]
        excitation: Vec<Excitation>,
    },
    /// `center + [a cos(ωt + φ), b sin(ωt + φ), 0]`.
    Ellipse {
        center: [f64; 3],
        semi_axes: [f64; 2],
        /// s
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        yaw: f64,
    },
}

impl ReferenceTrajectory {
    pub fn hold(position: Vec3) -> Self {
        ReferenceTrajectory::Legs {
            start: position.into(),
            legs: Vec::new(),
            yaw: 0.0,
            excitation: Vec::new(),
        }
    }

    /// Setpoint sequence: at each `(time, target)` the reference moves to the
    /// target over `transition` seconds.
    pub fn setpoints(start: Vec3, points: &[(f64, Vec3)], transition: f64) -> Self {
        ReferenceTrajectory::Legs {
            start: start.into(),
            legs: points
                .iter()
                .map(|&(t, p)| Leg {
                    start: t,
                    duration: transition,
                    target: p.into(),
                })
                .collect(),
            yaw: 0.0,
            excitation: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceTrajectory::Legs {
                start, legs, yaw, ..
            } => {
                if start.iter().chain(std::iter::once(yaw)).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("reference must be finite".into()));
                }
                let mut end = f64::NEG_INFINITY;
                for leg in legs {
                    if !(leg.duration >= 0.0) || !leg.start.is_finite() {
                        return Err(Error::InvalidParameter(
                            "legs need finite start times and non-negative durations".into(),
                        ));
                    }
                    if leg.start < end {
                        return Err(Error::InvalidParameter(format!(
                            "leg starting at {} s overlaps the previous leg",
                            leg.start
                        )));
                    }
                    end = leg.start + leg.duration;
                }
                Ok(())
            }
            ReferenceTrajectory::Ellipse {
                semi_axes, period, ..
            } => {
                if !(*period > 0.0) || semi_axes.iter().any(|a| !(*a >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "ellipse needs a positive period and non-negative semi-axes".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, t: f64) -> RefPoint {
        match self {
            ReferenceTrajectory::Legs {
                start,
                legs,
                yaw,
                excitation,
            } => {
                let mut from = Vec3::from(*start);
                let mut position = from;
                let mut velocity = Vec3::zeros();
                let mut acceleration = Vec3::zeros();
                for leg in legs {
                    if t < leg.start {
                        break;
                    }
                    let to = Vec3::from(leg.target);
                    let elapsed = t - leg.start;
                    if leg.duration <= 0.0 || elapsed >= leg.duration {
                        position = to;
                        velocity = Vec3::zeros();
                        acceleration = Vec3::zeros();
                    } else {
                        let (s, ds, dds) = min_jerk(elapsed / leg.duration);
                        let d = to - from;
                        position = from + d * s;
                        velocity = d * (ds / leg.duration);
                        acceleration = d * (dds / (leg.duration * leg.duration));
                    }
                    from = to;
                }
                for ex in excitation {
                    let (p, v, a) = ex.eval(t);
                    position += p;
                    velocity += v;
                    acceleration += a;
                }
                RefPoint {
                    position,
                    velocity,
                    acceleration,
                    yaw: *yaw,
                }
            }
            ReferenceTrajectory::Ellipse {
                center,
                semi_axes,
                period,
                phase,
                yaw,
            } => {
                let w = std::f64::consts::TAU / period;
                let arg = w * t + phase;
                let (s, c) = arg.sin_cos();
                let [a, b] = *semi_axes;
                RefPoint {
                    position: Vec3::from(*center) + Vec3::new(a * c, b * s, 0.0),
                    velocity: Vec3::new(-a * w * s, b * w * c, 0.0),
                    acceleration: Vec3::new(-a * w * w * c, -b * w * w * s, 0.0),
                    yaw: *yaw,
                }
            }
        }
    }

    /// Times at which the reference jumps (zero-duration legs).
    pub fn discontinuities(&self) -> Vec<f64> {
        match self {
            ReferenceTrajectory::Legs { legs, .. } => legs
                .iter()
                .filter(|l| l.duration <= 0.0)
                .map(|l| l.start)
                .collect(),
            ReferenceTrajectory::Ellipse { .. } => Vec::new(),
        }
    }

    /// Largest ‖p_d‖, ‖ṗ_d‖, ‖p̈_d‖ sampled at 1 kHz over `[0, horizon]`.
    pub fn bounds(&self, horizon: f64) -> (f64, f64, f64) {
        let steps = (horizon * 1000.0).ceil() as usize;
        let mut out = (0.0_f64, 0.0_f64, 0.0_f64);
        for i in 0..=steps {
            let r = self.sample(i as f64 * 1e-3);
            out.0 = out.0.max(r.position.norm());
            out.1 = out.1.max(r.velocity.norm());
            out.2 = out.2.max(r.acceleration.norm());
        }
        out
    }
}
