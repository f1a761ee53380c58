//! Rigid-body quadrotor dynamics, rotor-to-wrench allocation, and RK4 integration.
//!
//! Frames: world z points up, gravity is `[0, 0, -g]`. The attitude `R` maps body
//! vectors to world vectors and thrust acts along the body z axis. Motors are
//! numbered 1 (+x), 2 (+y), 3 (-x), 4 (-y); motors 1 and 3 spin so that their
//! reaction torque is negative about body z.
//!
//! Control inputs are squared rotor speeds in RPM², thrust and torque coefficients
//! are in N/RPM² and N·m/RPM².

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rotor speed at which the default thrust coefficient puts hover.
pub const NOMINAL_HOVER_RPM: f64 = 2000.0;
/// Per-motor speed limit used for the default saturation bound.
pub const DEFAULT_MAX_RPM: f64 = 6400.0;

/// Physical constants of the airframe.
///
/// Only the mass is a measured value for the reference vehicle; inertia, arm
/// length, rotor diameter, and the rotor coefficients are plausible placeholders
/// for a 1.5 kg quadrotor and should be overridden for a real airframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg·m², row-major, symmetric positive definite
    pub inertia: [[f64; 3]; 3],
    /// m/s²
    pub gravity: f64,
    /// N/RPM²
    pub thrust_coeff: f64,
    /// N·m/RPM²
    pub torque_coeff: f64,
    /// m
    pub arm_length: f64,
    /// m
    pub rotor_diameter: f64,
    /// kg/m³
    pub air_density: f64,
    /// Per-motor saturation in RPM; `u_max = max_rpm²`.
    pub max_rpm: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let mass = 1.47;
        let gravity = 9.81;
        let thrust_coeff = mass * gravity / (4.0 * NOMINAL_HOVER_RPM * NOMINAL_HOVER_RPM);
        Self {
            mass,
            inertia: [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.02]],
            gravity,
            thrust_coeff,
            torque_coeff: 0.016 * thrust_coeff,
            arm_length: 0.115,
            rotor_diameter: 0.23,
            air_density: 1.225,
            max_rpm: DEFAULT_MAX_RPM,
        }
    }
}

impl VehicleParams {
    pub fn inertia_matrix(&self) -> Mat3 {
        let j = &self.inertia;
        Mat3::new(
            j[0][0], j[0][1], j[0][2], j[1][0], j[1][1], j[1][2], j[2][0], j[2][1], j[2][2],
        )
    }

    pub fn gravity_vector(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.gravity)
    }

    /// Saturation bound on each squared motor speed, RPM².
    pub fn u_max(&self) -> f64 {
        self.max_rpm * self.max_rpm
    }

    /// Squared speed per motor that balances gravity with the nominal model.
    pub fn hover_u(&self) -> f64 {
        self.mass * self.gravity / (4.0 * self.thrust_coeff)
    }

    /// Dimensionless thrust coefficient `C_T = c_T / (ρ D⁴)` with `c_T` in N/(rev/s)².
    pub fn thrust_coefficient_nondim(&self) -> f64 {
        // c_T is per RPM²; convert to per (rev/s)².
        let c_t_rps = self.thrust_coeff * 3600.0;
        c_t_rps / (self.air_density * self.rotor_diameter.powi(4))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("thrust_coeff", self.thrust_coeff),
            ("torque_coeff", self.torque_coeff),
            ("arm_length", self.arm_length),
            ("rotor_diameter", self.rotor_diameter),
            ("air_density", self.air_density),
            ("max_rpm", self.max_rpm),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).amax() > 1e-12 * j.amax() {
            return Err(Error::InvalidParameter("inertia must be symmetric".into()));
        }
        if j.cholesky().is_none() {
            return Err(Error::InvalidParameter(
                "inertia must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// Position, velocity, attitude, and body rate of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// m, world frame
    pub position: Vec3,
    /// m/s, world frame
    pub velocity: Vec3,
    /// body-to-world rotation
    pub attitude: Mat3,
    /// rad/s, body frame
    pub omega: Vec3,
}

impl Default for VehicleState {
    fn default() -> Self {
        Self::at_rest(Vec3::zeros())
    }
}

impl VehicleState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            attitude: Mat3::identity(),
            omega: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.attitude.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }

    /// Body z axis expressed in the world frame.
    pub fn thrust_axis(&self) -> Vec3 {
        self.attitude.column(2).into_owned()
    }

    /// ‖RᵀR − I‖ (Frobenius).
    pub fn orthonormality_error(&self) -> f64 {
        (self.attitude.transpose() * self.attitude - Mat3::identity()).norm()
    }

    fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            position: self.position + d.position * h,
            velocity: self.velocity + d.velocity * h,
            attitude: self.attitude + d.attitude * h,
            omega: self.omega + d.omega * h,
        }
    }
}

/// Squared motor speeds `u = [n₁², n₂², n₃², n₄²]`, RPM².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorCommand(pub [f64; 4]);

impl RotorCommand {
    pub fn zero() -> Self {
        Self([0.0; 4])
    }

    pub fn uniform(u: f64) -> Self {
        Self([u; 4])
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::from(self.0)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self([v[0], v[1], v[2], v[3]])
    }

    /// Rotor speeds in RPM.
    pub fn speeds(&self) -> [f64; 4] {
        self.0.map(|u| u.max(0.0).sqrt())
    }

    /// Clamps every motor to `[0, u_max]`; the flag reports whether any clamp was active.
    pub fn clamped(&self, u_max: f64) -> (Self, bool) {
        let mut saturated = false;
        let out = self.0.map(|u| {
            let c = u.clamp(0.0, u_max);
            if c != u {
                saturated = true;
            }
            c
        });
        (Self(out), saturated)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.as_vector() - other.as_vector()).norm()
    }
}

/// Collective thrust and body torques produced by the rotors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    /// N along body z
    pub thrust: f64,
    /// N·m, body frame
    pub torque: Vec3,
}

impl Wrench {
    pub fn zero() -> Self {
        Self {
            thrust: 0.0,
            torque: Vec3::zeros(),
        }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(eta: &Vector4<f64>) -> Self {
        Self {
            thrust: eta[0],
            torque: Vec3::new(eta[1], eta[2], eta[3]),
        }
    }
}

/// Unmodeled aerodynamic force (world frame, N) and torque (body frame, N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Disturbance {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// The rotor mixing matrix `B0` (η = B0·u) together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    forward: Matrix4<f64>,
    inverse: Matrix4<f64>,
}

impl AllocationMatrix {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.forward
    }

    pub fn inverse(&self) -> &Matrix4<f64> {
        &self.inverse
    }

    /// Largest singular value of `B0⁻¹`, in RPM² per unit wrench.
    pub fn inverse_spectral_norm(&self) -> f64 {
        SVD::new(self.inverse, false, false)
            .singular_values
            .max()
    }

    /// Norm of the column of `B0⁻¹` that maps collective thrust to motor commands.
    pub fn thrust_column_norm(&self) -> f64 {
        self.inverse.column(0).norm()
    }

    pub fn solve(&self, wrench: &Wrench) -> RotorCommand {
        RotorCommand::from_vector(&(self.inverse * wrench.as_vector()))
    }
}

/// Builds `B0` from the rotor coefficients and arm length.
pub fn build_allocation_matrix(params: &VehicleParams) -> Result<AllocationMatrix> {
    let (ct, cq, l) = (params.thrust_coeff, params.torque_coeff, params.arm_length);
    for (name, v) in [("thrust_coeff", ct), ("torque_coeff", cq), ("arm_length", l)] {
        if v == 0.0 || !v.is_finite() {
            return Err(Error::SingularAllocation(format!("{name} = {v}")));
        }
    }
    let ctl = ct * l;
    #[rustfmt::skip]
    let forward = Matrix4::new(
        ct,   ct,  ct,   ct,
        0.0,  ctl, 0.0,  -ctl,
        -ctl, 0.0, ctl,  0.0,
        -cq,  cq,  -cq,  cq,
    );
    let inverse = forward
        .try_inverse()
        .ok_or_else(|| Error::SingularAllocation("B0 is not invertible".into()))?;
    Ok(AllocationMatrix { forward, inverse })
}

/// η = B0·u.
pub fn wrench_from_command(b0: &AllocationMatrix, u: &RotorCommand) -> Wrench {
    Wrench::from_vector(&(b0.forward * u.as_vector()))
}

/// Skew-symmetric matrix `S(a)` such that `S(a)·b = a × b`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`skew`]; reads the axial vector of the skew part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Time derivative of a [`VehicleState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Mat3,
    pub omega: Vec3,
}

/// Right-hand side of the rigid-body equations:
/// `ṗ = v`, `m v̇ = m g + R f_u + f_a`, `Ṙ = R S(ω)`, `J ω̇ = Jω × ω + τ_u + τ_a`.
pub fn dynamics_derivative(
    state: &VehicleState,
    wrench: &Wrench,
    disturbance: &Disturbance,
    params: &VehicleParams,
) -> StateDerivative {
    let j = params.inertia_matrix();
    let f_u = Vec3::new(0.0, 0.0, wrench.thrust);
    let accel = params.gravity_vector() + (state.attitude * f_u + disturbance.force) / params.mass;
    let j_omega = j * state.omega;
    let moment = j_omega.cross(&state.omega) + wrench.torque + disturbance.torque;
    let omega_dot = j
        .lu()
        .solve(&moment)
        .expect("inertia is validated positive definite");
    StateDerivative {
        position: state.velocity,
        velocity: accel,
        attitude: state.attitude * skew(&state.omega),
        omega: omega_dot,
    }
}

/// Nearest rotation to `m` in the Frobenius sense (polar factor with det = +1).
pub fn project_to_rotation(m: &Mat3) -> Mat3 {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    r
}

/// One RK4 step with a disturbance that is re-evaluated at every stage.
///
/// The wrench is held constant across the step (zero-order hold on the motor
/// command). The attitude is projected back onto SO(3) afterwards.
pub fn integrate_step_with<F>(
    state: &VehicleState,
    wrench: &Wrench,
    params: &VehicleParams,
    dt: f64,
    mut disturbance: F,
) -> Result<VehicleState>
where
    F: FnMut(&VehicleState) -> Disturbance,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let f = |s: &VehicleState, d: &Disturbance| dynamics_derivative(s, wrench, d, params);

    let k1 = f(state, &disturbance(state));
    let s2 = state.advanced(&k1, 0.5 * dt);
    let k2 = f(&s2, &disturbance(&s2));
    let s3 = state.advanced(&k2, 0.5 * dt);
    let k3 = f(&s3, &disturbance(&s3));
    let s4 = state.advanced(&k3, dt);
    let k4 = f(&s4, &disturbance(&s4));

    let w = dt / 6.0;
    let mut next = VehicleState {
        position: state.position + (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * w,
        velocity: state.velocity + (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity) * w,
        attitude: state.attitude + (k1.attitude + 2.0 * k2.attitude + 2.0 * k3.attitude + k4.attitude) * w,
        omega: state.omega + (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega) * w,
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState { t: f64::NAN });
    }
    next.attitude = project_to_rotation(&next.attitude);
    Ok(next)
}

/// One RK4 step with the disturbance held constant over the step.
pub fn integrate_step(
    state: &VehicleState,
    wrench: &Wrench,
    disturbance: &Disturbance,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    integrate_step_with(state, wrench, params, dt, |_| *disturbance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_params() -> VehicleParams {
        VehicleParams {
            thrust_coeff: 1.0,
            torque_coeff: 1.0,
            arm_length: 1.0,
            ..VehicleParams::default()
        }
    }

    #[test]
    fn allocation_matrix_structure() {
        let b0 = build_allocation_matrix(&unit_params()).unwrap();
        let m = b0.matrix();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 4]);
        assert_eq!(
            m.row(3).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 1.0, -1.0, 1.0]
        );
    }

    #[test]
    fn equal_speeds_give_pure_thrust() {
        let p = VehicleParams::default();
        let b0 = build_allocation_matrix(&p).unwrap();
        let eta = b0.matrix() * Vector4::repeat(1.0);
        assert!((eta[0] - 4.0 * p.thrust_coeff).abs() < 1e-20);
        assert_eq!(eta[1], 0.0);
        assert_eq!(eta[2], 0.0);
        assert_eq!(eta[3], 0.0);
    }

    #[test]
    fn inverse_multiplies_back_to_identity() {
        let p = VehicleParams {
            thrust_coeff: 2.0,
            torque_coeff: 0.1,
            arm_length: 0.5,
            ..VehicleParams::default()
        };
        let b0 = build_allocation_matrix(&p).unwrap();
        let err = (b0.matrix() * b0.inverse() - Matrix4::identity()).amax();
        assert!(err < 1e-12, "{err}");
        let err = (b0.inverse() * b0.matrix() - Matrix4::identity()).amax();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn zero_coefficient_is_singular() {
        let p = VehicleParams {
            torque_coeff: 0.0,
            ..VehicleParams::default()
        };
        assert!(matches!(
            build_allocation_matrix(&p),
            Err(Error::SingularAllocation(_))
        ));
    }

    #[test]
    fn wrench_zero_and_symmetric_commands() {
        let p = VehicleParams::default();
        let b0 = build_allocation_matrix(&p).unwrap();
        assert_eq!(wrench_from_command(&b0, &RotorCommand::zero()), Wrench::zero());
        let w = wrench_from_command(&b0, &RotorCommand::uniform(3.0e6));
        assert_eq!(w.torque, Vec3::zeros());
        assert!((w.thrust - 4.0 * p.thrust_coeff * 3.0e6).abs() < 1e-12);
    }

    #[test]
    fn wrench_matches_hand_expansion() {
        let p = VehicleParams::default();
        let b0 = build_allocation_matrix(&p).unwrap();
        let u = RotorCommand([3.1e6, 4.2e6, 3.9e6, 5.0e6]);
        let [u1, u2, u3, u4] = u.0;
        let (ct, cq, l) = (p.thrust_coeff, p.torque_coeff, p.arm_length);
        let w = wrench_from_command(&b0, &u);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        assert!(rel(w.thrust, ct * (u1 + u2 + u3 + u4)) < 1e-14);
        assert!(rel(w.torque.x, ct * l * (u2 - u4)) < 1e-12);
        assert!(rel(w.torque.y, ct * l * (u3 - u1)) < 1e-12);
        assert!(rel(w.torque.z, cq * (-u1 + u2 - u3 + u4)) < 1e-12);
    }

    #[test]
    fn hover_equilibrium_derivative() {
        let p = VehicleParams::default();
        let s = VehicleState::at_rest(Vec3::new(0.0, 0.0, 1.0));
        let w = Wrench {
            thrust: p.mass * p.gravity,
            torque: Vec3::zeros(),
        };
        let d = dynamics_derivative(&s, &w, &Disturbance::zero(), &p);
        assert!(d.velocity.norm() < 1e-14);
        assert_eq!(d.omega, Vec3::zeros());
    }

    #[test]
    fn free_fall_derivative() {
        let p = VehicleParams::default();
        let s = VehicleState::at_rest(Vec3::zeros());
        let d = dynamics_derivative(&s, &Wrench::zero(), &Disturbance::zero(), &p);
        assert_eq!(d.velocity, Vec3::new(0.0, 0.0, -p.gravity));
    }

    #[test]
    fn hover_step_leaves_state_unchanged() {
        let p = VehicleParams::default();
        let s = VehicleState::at_rest(Vec3::new(0.3, -0.2, 1.0));
        let w = Wrench {
            thrust: p.mass * p.gravity,
            torque: Vec3::zeros(),
        };
        let next = integrate_step(&s, &w, &Disturbance::zero(), &p, 1e-3).unwrap();
        assert!((next.position - s.position).norm() < 1e-12);
        assert!(next.velocity.norm() < 1e-12);
        assert!((next.attitude - s.attitude).norm() < 1e-12);
    }

    #[test]
    fn ballistic_fall_for_one_second() {
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(Vec3::new(0.0, 0.0, 10.0));
        for _ in 0..1000 {
            s = integrate_step(&s, &Wrench::zero(), &Disturbance::zero(), &p, 1e-3).unwrap();
        }
        assert!((s.velocity.z + p.gravity).abs() < 1e-6);
        assert!((s.position.z - 10.0 + p.gravity / 2.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let p = VehicleParams::default();
        let s = VehicleState::default();
        assert!(integrate_step(&s, &Wrench::zero(), &Disturbance::zero(), &p, 0.0).is_err());
    }

    #[test]
    fn diverging_state_is_reported() {
        let p = VehicleParams::default();
        let s = VehicleState::default();
        let w = Wrench {
            thrust: f64::INFINITY,
            torque: Vec3::zeros(),
        };
        assert!(matches!(
            integrate_step(&s, &w, &Disturbance::zero(), &p, 1e-3),
            Err(Error::NonFiniteState { .. })
        ));
    }

    #[test]
    fn default_params_validate_and_hover_near_2000_rpm() {
        let p = VehicleParams::default();
        p.validate().unwrap();
        assert!((p.hover_u().sqrt() - NOMINAL_HOVER_RPM).abs() < 1e-9);
        assert_eq!(p.u_max(), 6400.0 * 6400.0);
    }

    #[test]
    fn invalid_inertia_is_rejected() {
        let mut p = VehicleParams::default();
        p.inertia[0][1] = 0.5;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.inertia[2][2] = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn skew_and_vee_are_inverse() {
        let a = Vec3::new(0.3, -1.2, 2.0);
        let b = Vec3::new(-0.7, 0.1, 0.4);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
        assert_eq!(vee(&skew(&a)), a);
    }

    fn arb_vec(scale: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-scale..scale).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn wrench_is_linear(
            u1 in prop::array::uniform4(0.0..4e7f64),
            u2 in prop::array::uniform4(0.0..4e7f64),
            a in -3.0..3.0f64,
            b in -3.0..3.0f64,
        ) {
            let b0 = build_allocation_matrix(&VehicleParams::default()).unwrap();
            let combo = RotorCommand::from_vector(&(a * Vector4::from(u1) + b * Vector4::from(u2)));
            let lhs = wrench_from_command(&b0, &combo).as_vector();
            let rhs = a * wrench_from_command(&b0, &RotorCommand(u1)).as_vector()
                + b * wrench_from_command(&b0, &RotorCommand(u2)).as_vector();
            prop_assert!((lhs - rhs).amax() <= 1e-12 * rhs.amax().max(1.0));
        }

        #[test]
        fn step_keeps_attitude_on_so3(
            w in arb_vec(8.0),
            tau in arb_vec(0.05),
            thrust in 0.0..40.0f64,
        ) {
            let p = VehicleParams::default();
            let mut s = VehicleState::default();
            s.omega = w;
            let wrench = Wrench { thrust, torque: tau };
            for _ in 0..50 {
                s = integrate_step(&s, &wrench, &Disturbance::zero(), &p, 1e-3).unwrap();
                prop_assert!(s.orthonormality_error() <= 1e-9);
                prop_assert!((s.attitude.determinant() - 1.0).abs() <= 1e-9);
            }
        }
    }
}
