//! Scenario library: hover, landing, cross-table ellipse, and scripted
//! data-collection programs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aero::DisturbanceField;
use crate::control::{Excitation, Leg, ReferenceTrajectory, Tone};
use crate::error::{Error, Result};
use crate::vehicle::Vec3;

/// Named time window used by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub name: String,
    pub start: f64,
    pub end: f64,
}

impl Phase {
    pub fn new(name: &str, start: f64, end: f64) -> Self {
        Self {
            name: name.into(),
            start,
            end,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Gaussian state-estimate noise, resampled at the estimator rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub enabled: bool,
    /// m
    pub position_sigma: f64,
    /// m/s
    pub velocity_sigma: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            position_sigma: 1e-3,
            velocity_sigma: 1e-2,
        }
    }
}

/// Loop periods in physics steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopRates {
    /// s
    pub physics_dt: f64,
    pub position_every: usize,
    pub attitude_every: usize,
    pub motor_every: usize,
    /// Logging and state-estimate period.
    pub log_every: usize,
}

impl Default for LoopRates {
    fn default() -> Self {
        Self {
            physics_dt: 1e-3,
            position_every: 100,
            attitude_every: 10,
            motor_every: 2,
            log_every: 10,
        }
    }
}

impl LoopRates {
    pub fn validate(&self) -> Result<()> {
        if !(self.physics_dt > 0.0 && self.physics_dt.is_finite()) {
            return Err(Error::InvalidParameter("physics_dt must be positive".into()));
        }
        let periods = [self.position_every, self.attitude_every, self.motor_every, self.log_every];
        if periods.contains(&0) {
            return Err(Error::InvalidParameter("loop periods must be at least one step".into()));
        }
        if !self.position_every.is_multiple_of(self.log_every) {
            return Err(Error::InvalidParameter(
                "position_every must be a multiple of log_every".into(),
            ));
        }
        Ok(())
    }

    pub fn log_rate(&self) -> f64 {
        1.0 / (self.physics_dt * self.log_every as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub reference: ReferenceTrajectory,
    pub field: DisturbanceField,
    /// s
    pub duration: f64,
    /// Start position; the vehicle starts at the reference (position and
    /// velocity) when absent.
    #[serde(default)]
    pub initial_position: Option<[f64; 3]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub rates: LoopRates,
    /// Divergence threshold on ‖p‖, m.
    #[serde(default = "default_domain_bound")]
    pub domain_bound: f64,
    #[serde(default)]
    pub phases: Vec<Phase>,
}

fn default_domain_bound() -> f64 {
    50.0
}

impl Scenario {
    fn base(name: &str, reference: ReferenceTrajectory, field: DisturbanceField, duration: f64) -> Self {
        Self {
            name: name.into(),
            reference,
            field,
            duration,
            initial_position: None,
            seed: 0,
            noise: NoiseSettings::default(),
            rates: LoopRates::default(),
            domain_bound: default_domain_bound(),
            phases: Vec::new(),
        }
    }

    /// Hold a fixed point.
    pub fn hover(position: Vec3, duration: f64, field: DisturbanceField) -> Self {
        let mut s = Self::base("hover", ReferenceTrajectory::hold(position), field, duration);
        s.phases = vec![Phase::new("hold", 0.0, duration), Phase::new("tail", duration * 2.0 / 3.0, duration)];
        s
    }

    /// Take-off from rest on the ground to 1 m, hover, and land back at the
    /// origin; the vehicle then holds the ground setpoint.
    pub fn landing(field: DisturbanceField) -> Self {
        let height = 1.0;
        let reference = ReferenceTrajectory::setpoints(
            Vec3::zeros(),
            &[(1.0, Vec3::new(0.0, 0.0, height)), (8.0, Vec3::zeros())],
            3.0,
        );
        let mut s = Self::base("landing", reference, field, 15.0);
        s.initial_position = Some([0.0; 3]);
        s.phases = vec![
            Phase::new("takeoff", 1.0, 4.0),
            Phase::new("hover", 4.0, 8.0),
            Phase::new("descent", 8.0, 11.0),
            Phase::new("terminal", 14.0, 15.0),
        ];
        s
    }

    /// Three periods of an ellipse crossing the table edge. The rotor plane
    /// clears the table top by `clearance`.
    pub fn cross_table(field: DisturbanceField, clearance: f64) -> Result<Self> {
        let (table, ge) = match (&field.table, &field.ground_effect) {
            (Some(t), Some(g)) => (*t, *g),
            _ => {
                return Err(Error::InvalidParameter(
                    "cross-table scenario needs ground effect and a table".into(),
                ))
            }
        };
        let z = table.height + clearance - ge.rotor_offset;
        let period = 10.0;
        let reference = ReferenceTrajectory::Ellipse {
            center: [table.center[0], table.center[1] - 0.4, z],
            semi_axes: [1.2, 0.6],
            period,
            phase: 0.0,
            yaw: 0.0,
        };
        let mut s = Self::base("cross-table", reference, field, 3.0 * period);
        s.phases = vec![Phase::new("ellipse", 0.0, 3.0 * period)];
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scenario duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.domain_bound > 0.0) {
            return Err(Error::InvalidParameter("domain_bound must be positive".into()));
        }
        self.rates.validate()?;
        self.field.validate()?;
        self.reference.validate()?;
        let (p, v, a) = self.reference.bounds(self.duration);
        if ![p, v, a].iter().all(|x| x.is_finite()) || p >= self.domain_bound {
            return Err(Error::InvalidParameter(
                "reference must stay bounded inside the domain".into(),
            ));
        }
        self.check_clearance()
    }

    /// Reference never dips below the lowest height at which the field is defined.
    fn check_clearance(&self) -> Result<()> {
        let steps = (self.duration / 0.01).ceil() as usize;
        for i in 0..=steps {
            let t = i as f64 * 0.01;
            let p = self.reference.sample(t).position;
            let floor = self.field.min_height_over(p.x, p.y);
            if floor > 0.0 && p.z <= floor {
                return Err(Error::InvalidParameter(format!(
                    "reference at t = {t:.2} s is {:.3} m high, below the {floor:.3} m singularity clearance",
                    p.z
                )));
            }
        }
        Ok(())
    }

    pub fn phase(&self, name: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.name == name)
    }
}

/// Scripted pilot for data collection.
///
/// Part I repeatedly takes off from `base` to a height, hovers with excitation,
/// lands, and rests. Part II flies random waypoints inside `box_xy` between
/// `part2_heights`, with excitation throughout. The optional circuits section
/// flies closed elliptical laps at sustained speed, which stop-and-go
/// waypoints rarely reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionProgram {
    /// s
    pub part1_duration: f64,
    /// s
    pub part2_duration: f64,
    /// Number of distinct Part I hover heights.
    pub heights: usize,
    /// m
    pub min_height: f64,
    /// m
    pub max_height: f64,
    /// Peak vertical speed of Part I legs, m/s.
    pub max_vertical_speed: f64,
    /// Peak speed of Part II legs, m/s.
    pub max_speed: f64,
    /// Part I take-off point (x, y), m.
    pub base: [f64; 2],
    /// Part II waypoint box `[x_min, x_max, y_min, y_max]`, m.
    pub box_xy: [f64; 4],
    /// Part II waypoint heights, m.
    pub part2_heights: [f64; 2],
    /// Excitation RMS per axis, m.
    pub excitation_rms: [f64; 3],
    /// Excitation band, Hz.
    pub excitation_band: [f64; 2],
    /// Rest on the ground between Part I cycles, s.
    pub rest: f64,
    /// Length of the circuits section after Part II, s.
    pub circuit_duration: f64,
    /// Lap period range, s.
    pub circuit_period: [f64; 2],
    /// Semi-axis range of the laps, m.
    pub circuit_axes: [f64; 2],
    /// Laps per circuit at full radius.
    pub circuit_laps: f64,
    pub seed: u64,
}

impl Default for CollectionProgram {
    fn default() -> Self {
        Self {
            part1_duration: 250.0,
            part2_duration: 100.0,
            heights: 24,
            min_height: 0.05,
            max_height: 1.5,
            max_vertical_speed: 1.0,
            max_speed: 1.0,
            base: [0.0, 0.0],
            box_xy: [-1.0, 1.0, -1.0, 1.0],
            part2_heights: [0.1, 1.5],
            excitation_rms: [0.03, 0.03, 0.02],
            excitation_band: [0.1, 0.6],
            rest: 1.0,
            circuit_duration: 0.0,
            circuit_period: [7.0, 14.0],
            circuit_axes: [0.4, 1.3],
            circuit_laps: 2.0,
            seed: 0,
        }
    }
}

/// Time a min-jerk move of length `d` needs to peak at speed `v`.
fn min_jerk_time(d: f64, v: f64) -> f64 {
    1.875 * d / v
}

impl CollectionProgram {
    /// Survey around the default table: floor data away from it and random
    /// crossings of its edges at ellipse altitude.
    pub fn table_survey() -> Self {
        Self {
            part1_duration: 0.0,
            part2_duration: 350.0,
            circuit_duration: 700.0,
            base: [0.0, -1.6],
            box_xy: [-1.5, 1.5, -1.3, 0.7],
            part2_heights: [0.45, 0.6],
            excitation_rms: [0.03, 0.03, 0.02],
            ..Self::default()
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.part1_duration + self.part2_duration + self.circuit_duration
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v >= 0.0;
        if ![self.part1_duration, self.part2_duration, self.circuit_duration]
            .iter()
            .all(|&d| finite_pos(d))
            || self.total_duration() <= 0.0
        {
            return Err(Error::InvalidParameter("program durations must be non-negative with a positive sum".into()));
        }
        if self.part1_duration > 0.0 && self.heights == 0 {
            return Err(Error::InvalidParameter("Part I needs at least one height".into()));
        }
        if !(self.min_height > 0.0 && self.max_height >= self.min_height) {
            return Err(Error::InvalidParameter("need 0 < min_height <= max_height".into()));
        }
        if !(self.max_vertical_speed > 0.0 && self.max_speed > 0.0) {
            return Err(Error::InvalidParameter("speeds must be positive".into()));
        }
        if !(self.part2_heights[0] > 0.0 && self.part2_heights[1] >= self.part2_heights[0]) {
            return Err(Error::InvalidParameter("part2_heights must be increasing and positive".into()));
        }
        if !(self.box_xy[1] >= self.box_xy[0] && self.box_xy[3] >= self.box_xy[2]) {
            return Err(Error::InvalidParameter("box_xy must be [x_min, x_max, y_min, y_max]".into()));
        }
        if !(self.excitation_band[0] > 0.0 && self.excitation_band[1] >= self.excitation_band[0]) {
            return Err(Error::InvalidParameter("excitation band must be positive and increasing".into()));
        }
        if !(self.circuit_period[0] > 0.0 && self.circuit_period[1] >= self.circuit_period[0])
            || !(self.circuit_axes[0] >= 0.0 && self.circuit_axes[1] >= self.circuit_axes[0])
            || !(self.circuit_laps > 0.0)
        {
            return Err(Error::InvalidParameter(
                "circuit periods and axes must be increasing ranges with positive laps".into(),
            ));
        }
        if self.excitation_rms.iter().any(|r| !(*r >= 0.0)) || !(self.rest >= 0.0) {
            return Err(Error::InvalidParameter("excitation and rest must be non-negative".into()));
        }
        Ok(())
    }

    /// Part I hover heights in flight order.
    pub fn part1_heights(&self) -> Vec<f64> {
        let n = self.heights.max(1);
        let mut heights: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    self.min_height
                } else {
                    self.min_height + (self.max_height - self.min_height) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0005_eed1);
        for i in (1..heights.len()).rev() {
            heights.swap(i, rng.gen_range(0..=i));
        }
        heights
    }

    /// Reference trajectory and phases of the whole program.
    pub fn reference(&self) -> Result<(ReferenceTrajectory, Vec<Phase>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let base = Vec3::new(self.base[0], self.base[1], 0.0);
        let mut legs = Vec::new();
        let mut excitation = Vec::new();
        let mut phases = Vec::new();
        let band = (self.excitation_band[0], self.excitation_band[1]);

        if self.part1_duration > 0.0 {
            let heights = self.part1_heights();
            let cycle = self.part1_duration / heights.len() as f64;
            for (i, &h) in heights.iter().enumerate() {
                let t0 = i as f64 * cycle + 0.5;
                let budget = 0.3 * cycle;
                let leg_time = |rng: &mut ChaCha8Rng| {
                    let v_lo = (0.4_f64).max(min_jerk_time(h, 1.0) / budget).min(self.max_vertical_speed);
                    let v = rng.gen_range(v_lo..=self.max_vertical_speed);
                    min_jerk_time(h, v).max(0.5)
                };
                let up = leg_time(&mut rng);
                let down = leg_time(&mut rng);
                let hover_start = t0 + up;
                let hover_end = (i + 1) as f64 * cycle - self.rest - down;
                if hover_end <= hover_start {
                    return Err(Error::InvalidParameter(format!(
                        "Part I cycle of {cycle:.2} s is too short for height {h:.2} m"
                    )));
                }
                let top = base + Vec3::new(0.0, 0.0, h);
                legs.push(Leg {
                    start: t0,
                    duration: up,
                    target: top.into(),
                });
                legs.push(Leg {
                    start: hover_end,
                    duration: down,
                    target: base.into(),
                });
                let mut rms = self.excitation_rms;
                // keep excitation well clear of the ground at low hover heights
                rms[2] = rms[2].min(0.2 * h);
                excitation.push(Excitation::band_limited(
                    rms,
                    band,
                    3,
                    hover_start,
                    hover_end,
                    rng.gen(),
                ));
                phases.push(Phase::new(&format!("part1-h{h:.3}"), hover_start, hover_end));
            }
        }

        let mut from = base;
        if self.part2_duration > 0.0 {
            let start = self.part1_duration + 0.5;
            let end = self.part1_duration + self.part2_duration;
            let mut t = start;
            loop {
                let to = Vec3::new(
                    rng.gen_range(self.box_xy[0]..=self.box_xy[1]),
                    rng.gen_range(self.box_xy[2]..=self.box_xy[3]),
                    rng.gen_range(self.part2_heights[0]..=self.part2_heights[1]),
                );
                let v = rng.gen_range((0.3_f64).min(self.max_speed)..=self.max_speed);
                let duration = min_jerk_time((to - from).norm(), v).max(1.0);
                if t + duration > end {
                    break;
                }
                legs.push(Leg {
                    start: t,
                    duration,
                    target: to.into(),
                });
                t += duration + rng.gen_range(0.0..1.5);
                from = to;
            }
            excitation.push(Excitation::band_limited(
                self.excitation_rms,
                band,
                3,
                start + 1.0,
                end,
                rng.gen(),
            ));
            phases.push(Phase::new("part2", start, end));
        }

        if self.circuit_duration > 0.0 {
            let start = self.part1_duration + self.part2_duration + 0.5;
            let end = self.total_duration();
            let mut t = start;
            let [bx0, bx1, by0, by1] = self.box_xy;
            loop {
                let period = rng.gen_range(self.circuit_period[0]..=self.circuit_period[1]);
                let a = rng.gen_range(self.circuit_axes[0]..=self.circuit_axes[1]).min(0.5 * (bx1 - bx0));
                let b = rng.gen_range(self.circuit_axes[0]..=self.circuit_axes[1]).min(0.5 * (by1 - by0));
                let centre = Vec3::new(
                    rng.gen_range(bx0 + a..=bx1 - a),
                    rng.gen_range(by0 + b..=by1 - b),
                    rng.gen_range(self.part2_heights[0]..=self.part2_heights[1]),
                );
                let sense = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let v = rng.gen_range((0.3_f64).min(self.max_speed)..=self.max_speed);
                let approach = min_jerk_time((centre - from).norm(), v).max(1.0);
                // the orbit fades in and out over half a lap each
                let ramp = 0.5 * period;
                let orbit = approach + self.circuit_laps * period + 2.0 * ramp;
                if t + orbit > end {
                    break;
                }
                legs.push(Leg {
                    start: t,
                    duration: approach,
                    target: centre.into(),
                });
                let f = 1.0 / period;
                excitation.push(Excitation {
                    tones: vec![
                        Tone {
                            axis: 0,
                            amplitude: a,
                            frequency: f,
                            phase: phase + std::f64::consts::FRAC_PI_2,
                        },
                        Tone {
                            axis: 1,
                            amplitude: sense * b,
                            frequency: f,
                            phase,
                        },
                    ],
                    start: t + approach,
                    end: t + orbit,
                    ramp,
                });
                t += orbit;
                from = centre;
            }
            excitation.push(Excitation::band_limited(
                self.excitation_rms,
                band,
                3,
                start + 1.0,
                end,
                rng.gen(),
            ));
            phases.push(Phase::new("circuits", start, end));
        }

        Ok((
            ReferenceTrajectory::Legs {
                start: base.into(),
                legs,
                yaw: 0.0,
                excitation,
            },
            phases,
        ))
    }

    /// The program as a scenario, optionally truncated to `duration`.
    pub fn scenario(&self, field: DisturbanceField, duration: Option<f64>) -> Result<Scenario> {
        let (reference, phases) = self.reference()?;
        let total = self.total_duration();
        let duration = duration.map_or(total, |d| d.min(total));
        let mut s = Scenario::base("collect", reference, field, duration);
        s.initial_position = Some([self.base[0], self.base[1], 0.0]);
        s.seed = self.seed;
        s.phases = phases;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn part1_covers_heights() {
        let p = CollectionProgram::default();
        let h = p.part1_heights();
        assert!(h.len() >= 20);
        let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 0.05).abs() < 1e-12 && (hi - 1.5).abs() < 1e-12);
    }

    #[test]
    fn program_reference_is_valid_and_bounded() {
        let p = CollectionProgram::default();
        let s = p.scenario(DisturbanceField::default(), None).unwrap();
        s.validate().unwrap();
        assert_eq!(s.duration, 350.0);
        let mut vz_min = 0.0_f64;
        let mut vz_max = 0.0_f64;
        for i in 0..35_000 {
            let r = s.reference.sample(i as f64 * 0.01);
            vz_min = vz_min.min(r.velocity.z);
            vz_max = vz_max.max(r.velocity.z);
            assert!(r.position.z >= -0.05);
        }
        assert!(vz_min < -0.8 && vz_min > -1.2, "{vz_min}");
        assert!(vz_max > 0.8 && vz_max < 1.2, "{vz_max}");
    }

    #[test]
    fn table_survey_circuits_sustain_cruise_speed() {
        let p = CollectionProgram::table_survey();
        let s = p.scenario(DisturbanceField::default(), None).unwrap();
        assert_eq!(s.duration, 1050.0);
        let circuits = s.phase("circuits").expect("circuits phase");
        let (mut n, mut fast) = (0, 0);
        let mut t = circuits.start;
        while t < circuits.end {
            let r = s.reference.sample(t);
            assert!((-1.6..=1.6).contains(&r.position.x) && (-1.4..=0.8).contains(&r.position.y), "{t}");
            n += 1;
            if r.velocity.xy().norm() > 0.4 {
                fast += 1;
            }
            t += 0.05;
        }
        assert!(fast * 4 > n, "{fast} of {n} samples above 0.4 m/s");
    }

    #[test]
    fn truncation_and_validation() {
        let p = CollectionProgram::default();
        let s = p.scenario(DisturbanceField::default(), Some(10.0)).unwrap();
        assert_eq!(s.duration, 10.0);
        let bad = CollectionProgram {
            heights: 0,
            ..Default::default()
        };
        assert!(bad.reference().is_err());
    }

    #[test]
    fn cross_table_geometry() {
        let field = DisturbanceField::default().with_default_table();
        let s = Scenario::cross_table(field, 0.2).unwrap();
        s.validate().unwrap();
        let r = s.reference.sample(0.0);
        assert!((r.position.z - 0.5).abs() < 1e-12);
        assert!(Scenario::cross_table(DisturbanceField::none(), 0.2).is_err());
    }

    #[test]
    fn clearance_is_checked() {
        let field = DisturbanceField::default().with_default_table();
        let s = Scenario::hover(Vec3::new(0.0, 0.0, 0.3), 1.0, field);
        assert!(s.validate().is_err());
    }
}
