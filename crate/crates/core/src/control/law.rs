//! Position and attitude control laws as pure functions.

use crate::control::gains::ControllerGains;
use crate::control::reference::RefPoint;
use crate::error::{Error, Result};
use crate::vehicle::{skew, vee, Mat3, Vec3, VehicleParams, VehicleState};

/// Output of [`composite_variable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeTerms {
    /// s = v − v_r
    pub s: Vec3,
    pub v_r: Vec3,
    pub v_r_dot: Vec3,
    /// p̃ = p − p_d
    pub p_err: Vec3,
}

/// `p̃ = p − p_d`, `v_r = ṗ_d − Λp̃`, `s = v − v_r`, `v̇_r = p̈_d − Λ(v − ṗ_d)`.
///
/// With `gains.integral` the reference velocity is `ṗ_d − 2Λp̃ − Λ²∫p̃` and
/// `v̇_r = p̈_d − 2Λ(v − ṗ_d) − Λ²p̃`; `integral` holds ∫p̃.
pub fn composite_variable(
    state: &VehicleState,
    reference: &RefPoint,
    gains: &ControllerGains,
    integral: &Vec3,
) -> CompositeTerms {
    let lambda = gains.lambda_matrix();
    let p_err = state.position - reference.position;
    let v_err = state.velocity - reference.velocity;
    let (v_r, v_r_dot) = if gains.integral {
        let l2 = lambda * lambda;
        (
            reference.velocity - 2.0 * lambda * p_err - l2 * integral,
            reference.acceleration - 2.0 * lambda * v_err - l2 * p_err,
        )
    } else {
        (
            reference.velocity - lambda * p_err,
            reference.acceleration - lambda * v_err,
        )
    };
    CompositeTerms {
        s: state.velocity - v_r,
        v_r,
        v_r_dot,
        p_err,
    }
}

/// `f̄_d = m v̇_r − K_v s − m g`.
pub fn nominal_force(s: &Vec3, v_r_dot: &Vec3, params: &VehicleParams, gains: &ControllerGains) -> Vec3 {
    params.mass * v_r_dot - gains.kv_matrix() * s - params.mass * params.gravity_vector()
}

/// `f_d = f̄_d − f̂_a`.
pub fn desired_force(
    s: &Vec3,
    v_r_dot: &Vec3,
    f_hat: &Vec3,
    params: &VehicleParams,
    gains: &ControllerGains,
) -> Vec3 {
    nominal_force(s, v_r_dot, params, gains) - f_hat
}

/// Collective thrust `T_d = f_d · k̂` and the attitude whose body z axis points
/// along `f_d` with heading `yaw`.
pub fn thrust_attitude_from_force(f_d: &Vec3, attitude: &Mat3, yaw: f64) -> Result<(f64, Mat3)> {
    let norm = f_d.norm();
    if !(norm >= 1e-6) {
        return Err(Error::DegenerateForce(norm));
    }
    let k_hat = attitude.column(2).into_owned();
    let thrust = f_d.dot(&k_hat);
    let k_d = f_d / norm;
    let (sy, cy) = yaw.sin_cos();
    let heading = Vec3::new(cy, sy, 0.0);
    let cross = k_d.cross(&heading);
    let (i_d, j_d) = if cross.norm() > 1e-6 {
        let j_d = cross.normalize();
        (j_d.cross(&k_d), j_d)
    } else {
        // thrust axis along the heading: build from the lateral axis instead
        let lateral = Vec3::new(-sy, cy, 0.0);
        let i_d = lateral.cross(&k_d).normalize();
        (i_d, k_d.cross(&i_d))
    };
    Ok((thrust, Mat3::from_columns(&[i_d, j_d, k_d])))
}

/// Desired attitude with its body rate and angular acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeReference {
    pub attitude: Mat3,
    pub omega: Vec3,
    pub omega_dot: Vec3,
}

impl AttitudeReference {
    pub fn still(attitude: Mat3) -> Self {
        Self {
            attitude,
            omega: Vec3::zeros(),
            omega_dot: Vec3::zeros(),
        }
    }
}

/// `e_R = ½ (R_dᵀR − RᵀR_d)^∨`.
pub fn attitude_error(attitude: &Mat3, desired: &Mat3) -> Vec3 {
    0.5 * vee(&(desired.transpose() * attitude - attitude.transpose() * desired))
}

/// `ė_R = ½ (tr(RᵀR_d) I − RᵀR_d) e_Ω` with `e_Ω = ω − RᵀR_d ω_d`.
pub fn attitude_error_rate(state: &VehicleState, reference: &AttitudeReference) -> Vec3 {
    let rt_rd = state.attitude.transpose() * reference.attitude;
    let e_omega = state.omega - rt_rd * reference.omega;
    0.5 * (Mat3::identity() * rt_rd.trace() - rt_rd) * e_omega
}

/// Reference body rate `ω_r = RᵀR_d ω_d − Λ_R e_R` and its time derivative.
pub fn reference_rate(
    state: &VehicleState,
    reference: &AttitudeReference,
    gains: &ControllerGains,
) -> (Vec3, Vec3) {
    let rt_rd = state.attitude.transpose() * reference.attitude;
    let lambda_r = gains.lambda_r_matrix();
    let e_r = attitude_error(&state.attitude, &reference.attitude);
    let feed = rt_rd * reference.omega;
    let omega_r = feed - lambda_r * e_r;
    // d/dt (RᵀR_d ω_d) = −ω × (RᵀR_d ω_d) + RᵀR_d ω̇_d
    let feed_dot = -skew(&state.omega) * feed + rt_rd * reference.omega_dot;
    let omega_r_dot = feed_dot - lambda_r * attitude_error_rate(state, reference);
    (omega_r, omega_r_dot)
}

/// `τ_d = J ω̇_r − (Jω) × ω_r − K_ω (ω − ω_r)`.
pub fn attitude_torque(
    state: &VehicleState,
    reference: &AttitudeReference,
    params: &VehicleParams,
    gains: &ControllerGains,
) -> Vec3 {
    let j = params.inertia_matrix();
    let (omega_r, omega_r_dot) = reference_rate(state, reference, gains);
    j * omega_r_dot - (j * state.omega).cross(&omega_r) - gains.k_omega_matrix() * (state.omega - omega_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn on_trajectory_composite_is_zero() {
        let mut state = VehicleState::at_rest(Vec3::new(1.0, 2.0, 3.0));
        state.velocity = Vec3::new(0.1, 0.0, -0.2);
        let r = RefPoint {
            position: state.position,
            velocity: state.velocity,
            acceleration: Vec3::zeros(),
            yaw: 0.0,
        };
        let c = composite_variable(&state, &r, &ControllerGains::default(), &Vec3::zeros());
        assert_eq!(c.s, Vec3::zeros());
        assert_eq!(c.p_err, Vec3::zeros());
    }

    #[test]
    fn composite_hand_value() {
        let state = VehicleState::at_rest(Vec3::new(1.0, 0.0, 0.0));
        let r = RefPoint {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw: 0.0,
        };
        let c = composite_variable(&state, &r, &ControllerGains::default(), &Vec3::zeros());
        assert_eq!(c.s, Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn integral_variant_uses_doubled_gain() {
        let gains = ControllerGains {
            integral: true,
            ..Default::default()
        };
        let state = VehicleState::at_rest(Vec3::new(1.0, 0.0, 0.0));
        let r = RefPoint {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw: 0.0,
        };
        let c = composite_variable(&state, &r, &gains, &Vec3::new(0.5, 0.0, 0.0));
        // s = 2Λp̃ + Λ²∫p̃ = 4 + 4·0.5
        assert!((c.s.x - 6.0).abs() < 1e-12);
        assert!((c.v_r_dot.x + 4.0).abs() < 1e-12);
    }

    #[test]
    fn hover_force_is_gravity_compensation() {
        let p = params();
        let f = desired_force(&Vec3::zeros(), &Vec3::zeros(), &Vec3::zeros(), &p, &ControllerGains::default());
        assert_eq!(f, Vec3::new(0.0, 0.0, p.mass * p.gravity));
        let f = desired_force(
            &Vec3::zeros(),
            &Vec3::zeros(),
            &Vec3::new(0.0, 0.0, 2.0),
            &p,
            &ControllerGains::default(),
        );
        assert!((f.z - (p.mass * p.gravity - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn thrust_attitude_hover() {
        let p = params();
        let (t, r_d) =
            thrust_attitude_from_force(&Vec3::new(0.0, 0.0, p.mass * p.gravity), &Mat3::identity(), 0.0).unwrap();
        assert!((t - p.mass * p.gravity).abs() < 1e-12);
        assert!((r_d - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn thrust_attitude_tilted() {
        let mg = 1.47 * 9.81;
        let f = Vec3::new(1.0, 0.0, 1.0) * mg / 2f64.sqrt();
        let (_, r_d) = thrust_attitude_from_force(&f, &Mat3::identity(), 0.0).unwrap();
        let k = Vec3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        assert!((r_d.column(2) - k).norm() < 1e-12);
    }

    #[test]
    fn thrust_attitude_degenerate_and_fallback() {
        assert!(matches!(
            thrust_attitude_from_force(&Vec3::new(0.0, 0.0, 1e-9), &Mat3::identity(), 0.0),
            Err(Error::DegenerateForce(_))
        ));
        let (_, r_d) = thrust_attitude_from_force(&Vec3::new(3.0, 0.0, 0.0), &Mat3::identity(), 0.0).unwrap();
        assert!((r_d.transpose() * r_d - Mat3::identity()).norm() < 1e-12);
        assert!((r_d.determinant() - 1.0).abs() < 1e-12);
        assert!((r_d.column(2) - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn aligned_attitude_gives_zero_torque() {
        let p = params();
        let state = VehicleState::default();
        let tau = attitude_torque(&state, &AttitudeReference::still(Mat3::identity()), &p, &ControllerGains::default());
        assert_eq!(tau, Vec3::zeros());
    }

    #[test]
    fn roll_error_torque_restores() {
        let p = params();
        let mut state = VehicleState::default();
        state.attitude = Rotation3::from_euler_angles(0.1, 0.0, 0.0).into_inner();
        let tau = attitude_torque(&state, &AttitudeReference::still(Mat3::identity()), &p, &ControllerGains::default());
        assert!(tau.x < 0.0);
    }

    #[test]
    fn error_rate_matches_finite_difference() {
        let mut state = VehicleState::default();
        state.attitude = Rotation3::from_euler_angles(0.3, -0.2, 0.9).into_inner();
        state.omega = Vec3::new(0.4, -0.7, 0.2);
        let reference = AttitudeReference {
            attitude: Rotation3::from_euler_angles(-0.1, 0.25, 0.4).into_inner(),
            omega: Vec3::new(0.1, 0.3, -0.5),
            omega_dot: Vec3::zeros(),
        };
        let h = 1e-6;
        let at = |dt: f64| {
            let r = state.attitude * Rotation3::new(state.omega * dt).into_inner();
            let rd = reference.attitude * Rotation3::new(reference.omega * dt).into_inner();
            attitude_error(&r, &rd)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let analytic = attitude_error_rate(&state, &reference);
        assert!((fd - analytic).norm() < 1e-8, "{fd} vs {analytic}");
    }
}
