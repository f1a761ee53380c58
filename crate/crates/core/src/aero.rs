//! Synthetic ground-truth aerodynamics: steady ground effect, drag, a table-edge
//! field for the cross-table scenario, and a bounded torque disturbance.
//!
//! These fields play the role of the real-world disturbance. Because the truth is
//! known exactly, learning error can be measured rather than estimated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{Disturbance, RotorCommand, Vec3, VehicleState};

/// Rotor thrust coefficient as a function of rotor speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThrustCurve {
    Constant {
        /// N/RPM²
        c_t: f64,
    },
    /// `c_T(n) = c_t_ref · (1 + slope · (n − n_ref) / n_ref)`
    Affine {
        c_t_ref: f64,
        n_ref: f64,
        slope: f64,
    },
}

impl ThrustCurve {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            ThrustCurve::Constant { c_t } => c_t,
            ThrustCurve::Affine {
                c_t_ref,
                n_ref,
                slope,
            } => c_t_ref * (1.0 + slope * (n - n_ref) / n_ref),
        }
    }
}

/// Parameters of the 1-D steady ground-effect model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundEffectParams {
    /// Propeller-arrangement coefficient μ (1 for a single rotor).
    pub mu: f64,
    /// Rotor diameter D, m.
    pub rotor_diameter: f64,
    /// Speed n₀ at which the nominal thrust coefficient holds, RPM.
    pub n0: f64,
    pub thrust_curve: ThrustCurve,
    /// Height of the rotor plane above the vehicle's reference point, m. The
    /// vehicle rests on the ground with its reference point at z = 0.
    pub rotor_offset: f64,
}

impl GroundEffectParams {
    /// Height at or below which `μ (D / 8z)² ≥ 1`.
    pub fn singular_height(&self) -> f64 {
        self.rotor_diameter / 8.0 * self.mu.sqrt()
    }

    /// `1 / (1 − μ (D / 8z)²)`
    pub fn amplification(&self, z: f64) -> Result<f64> {
        let limit = self.singular_height();
        if !(z > limit) {
            return Err(Error::GroundEffectSingularity { height: z, limit });
        }
        let r = self.rotor_diameter / (8.0 * z);
        Ok(1.0 / (1.0 - self.mu * r * r))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.rotor_diameter > 0.0 && self.n0 > 0.0) {
            return Err(Error::InvalidParameter(
                "ground effect needs mu, rotor_diameter, n0 > 0".into(),
            ));
        }
        if self.rotor_offset <= self.singular_height() {
            return Err(Error::InvalidParameter(format!(
                "rotor_offset {} m must exceed the singular height {:.4} m so the vehicle can rest on the ground",
                self.rotor_offset,
                self.singular_height()
            )));
        }
        Ok(())
    }
}

/// Extra thrust of one rotor at speed `n` (RPM) with its disk at height `z` (m)
/// over a surface, relative to the nominal model `n² c_T(n₀)`:
/// `f̄ = n² c_T(n) / (1 − μ (D / 8z)²) − n² c_T(n₀)`.
pub fn ground_effect_force(n: f64, z: f64, params: &GroundEffectParams) -> Result<f64> {
    let amp = params.amplification(z)?;
    let n2 = n * n;
    Ok(n2 * params.thrust_curve.eval(n) * amp - n2 * params.thrust_curve.eval(params.n0))
}

/// Summed extra thrust of all four rotors with the rotor plane at height `z`.
pub fn rotor_lift(u: &RotorCommand, z: f64, params: &GroundEffectParams) -> Result<f64> {
    u.speeds()
        .iter()
        .try_fold(0.0, |acc, &n| Ok(acc + ground_effect_force(n, z, params)?))
}

/// Linear-plus-quadratic drag coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragParams {
    /// N·s²/m²
    pub quadratic: f64,
    /// N·s/m
    pub linear: f64,
}

/// `f = −(c₁‖v‖ + c₂) v`
pub fn drag_force(v: &Vec3, coeffs: &DragParams) -> Vec3 {
    -(coeffs.quadratic * v.norm() + coeffs.linear) * v
}

/// Axis-aligned rectangular table top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    /// Table centre (x, y), m.
    pub center: [f64; 2],
    /// Full side lengths (x, y), m.
    pub size: [f64; 2],
    /// Height of the table top, m.
    pub height: f64,
    /// Width of the smooth transition across the edge, m. Zero gives a hard edge.
    pub edge_width: f64,
}

impl TableParams {
    /// Fraction in `[0, 1]` of "over the table" at horizontal position (x, y).
    pub fn coverage(&self, x: f64, y: f64) -> f64 {
        let inside_x = self.size[0] / 2.0 - (x - self.center[0]).abs();
        let inside_y = self.size[1] / 2.0 - (y - self.center[1]).abs();
        edge_step(inside_x, self.edge_width) * edge_step(inside_y, self.edge_width)
    }

    /// Signed horizontal distance to the nearest edge (positive inside).
    pub fn edge_distance(&self, x: f64, y: f64) -> f64 {
        let inside_x = self.size[0] / 2.0 - (x - self.center[0]).abs();
        let inside_y = self.size[1] / 2.0 - (y - self.center[1]).abs();
        if inside_x >= 0.0 && inside_y >= 0.0 {
            inside_x.min(inside_y)
        } else {
            -((inside_x.min(0.0)).powi(2) + (inside_y.min(0.0)).powi(2)).sqrt()
        }
    }
}

/// C¹ smoothstep from 0 (d ≤ −w/2) to 1 (d ≥ w/2).
fn edge_step(d: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return if d >= 0.0 { 1.0 } else { 0.0 };
    }
    let t = (d / width + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Ground-effect lift at position `p` with a table present: the effective height
/// is measured from the table top over the table and from the floor elsewhere,
/// blended across the edge.
pub fn table_field(
    p: &Vec3,
    u: &RotorCommand,
    ground: &GroundEffectParams,
    table: &TableParams,
) -> Result<f64> {
    let rotor_z = p.z.max(0.0) + ground.rotor_offset;
    let w = table.coverage(p.x, p.y);
    let floor = if w < 1.0 {
        rotor_lift(u, rotor_z, ground)?
    } else {
        0.0
    };
    let top = if w > 0.0 {
        rotor_lift(u, rotor_z - table.height, ground)?
    } else {
        0.0
    };
    Ok(w * top + (1.0 - w) * floor)
}

/// Bounded torque disturbance `τ_i = A_i sin(k · p + φ_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueDisturbance {
    /// N·m per body axis
    pub amplitude: [f64; 3],
    /// Spatial wavenumber, rad/m
    pub wavenumber: f64,
    /// Seeds the phases.
    pub seed: u64,
}

impl TorqueDisturbance {
    fn phases(&self) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        [0; 3].map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
    }

    pub fn eval(&self, p: &Vec3) -> Vec3 {
        let phases = self.phases();
        let arg = self.wavenumber * (p.x + p.y + p.z);
        Vec3::from_fn(|i, _| self.amplitude[i] * (arg + phases[i]).sin())
    }

    pub fn bound(&self) -> f64 {
        Vec3::from(self.amplitude).norm()
    }
}

/// The full synthetic disturbance: every component is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceField {
    pub ground_effect: Option<GroundEffectParams>,
    pub drag: Option<DragParams>,
    /// Only used together with `ground_effect`.
    pub table: Option<TableParams>,
    pub torque: Option<TorqueDisturbance>,
    /// Declared bound on ‖f_a‖ over the flight envelope, N.
    pub force_bound: f64,
}

impl Default for DisturbanceField {
    fn default() -> Self {
        Self::ground_effect_default(&crate::vehicle::VehicleParams::default())
    }
}

impl DisturbanceField {
    pub fn none() -> Self {
        Self {
            ground_effect: None,
            drag: None,
            table: None,
            torque: None,
            force_bound: 20.0,
        }
    }

    /// Ground effect plus drag, matched to the given airframe's nominal thrust coefficient.
    pub fn ground_effect_default(vehicle: &crate::vehicle::VehicleParams) -> Self {
        Self {
            ground_effect: Some(GroundEffectParams {
                mu: 2.0,
                rotor_diameter: vehicle.rotor_diameter,
                n0: crate::vehicle::NOMINAL_HOVER_RPM,
                thrust_curve: ThrustCurve::Affine {
                    c_t_ref: vehicle.thrust_coeff,
                    n_ref: crate::vehicle::NOMINAL_HOVER_RPM,
                    slope: 0.1,
                },
                rotor_offset: 0.1,
            }),
            drag: Some(DragParams {
                quadratic: 0.08,
                linear: 0.15,
            }),
            table: None,
            torque: None,
            force_bound: 20.0,
        }
    }

    /// Adds the default table used by the cross-table scenario.
    pub fn with_default_table(mut self) -> Self {
        self.table = Some(TableParams {
            center: [0.0, 0.0],
            size: [1.0, 1.0],
            height: 0.4,
            edge_width: 0.05,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(ge) = &self.ground_effect {
            ge.validate()?;
        }
        if let Some(t) = &self.table {
            if t.size[0] <= 0.0 || t.size[1] <= 0.0 || t.edge_width < 0.0 {
                return Err(Error::InvalidParameter("table size must be positive".into()));
            }
        }
        if !(self.force_bound > 0.0) {
            return Err(Error::InvalidParameter("force_bound must be positive".into()));
        }
        Ok(())
    }

    /// Lowest vehicle height at which the field is defined.
    pub fn min_height_over(&self, x: f64, y: f64) -> f64 {
        match (&self.ground_effect, &self.table) {
            (Some(ge), Some(t)) if t.coverage(x, y) > 0.0 => {
                t.height + ge.singular_height() - ge.rotor_offset
            }
            _ => 0.0,
        }
    }
}

/// Sum of all enabled disturbance components at the given state and command.
pub fn total_disturbance(
    state: &VehicleState,
    u: &RotorCommand,
    field: &DisturbanceField,
) -> Result<Disturbance> {
    let mut force = Vec3::zeros();
    if let Some(ge) = &field.ground_effect {
        let lift = match &field.table {
            Some(table) => table_field(&state.position, u, ge, table)?,
            None => rotor_lift(u, state.position.z.max(0.0) + ge.rotor_offset, ge)?,
        };
        force += state.thrust_axis() * lift;
    }
    if let Some(drag) = &field.drag {
        force += drag_force(&state.velocity, drag);
    }
    let torque = field
        .torque
        .map(|t| t.eval(&state.position))
        .unwrap_or_else(Vec3::zeros);
    Ok(Disturbance { force, torque })
}

/// Region of states and commands over which the declared bound is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightEnvelope {
    pub horizontal: f64,
    pub z_max: f64,
    pub speed_max: f64,
    pub u_min: f64,
    pub u_max: f64,
}

/// Largest ‖f_a‖ found by random sampling of the envelope, with the sample count.
pub fn sampled_force_sup(
    field: &DisturbanceField,
    envelope: &FlightEnvelope,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup = 0.0_f64;
    for _ in 0..samples {
        let x = rng.gen_range(-envelope.horizontal..=envelope.horizontal);
        let y = rng.gen_range(-envelope.horizontal..=envelope.horizontal);
        let z_lo = field.min_height_over(x, y).max(0.0);
        let z = rng.gen_range(z_lo..=envelope.z_max.max(z_lo));
        let dir = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let speed = rng.gen_range(0.0..=envelope.speed_max);
        let velocity = if dir.norm() > 0.0 {
            dir.normalize() * speed
        } else {
            Vec3::zeros()
        };
        let u = RotorCommand([0; 4].map(|_| rng.gen_range(envelope.u_min..=envelope.u_max)));
        let mut state = VehicleState::at_rest(Vec3::new(x, y, z));
        state.velocity = velocity;
        let d = total_disturbance(&state, &u, field)?;
        sup = sup.max(d.force.norm());
    }
    Ok(sup)
}
