//! Composite-variable tracking controller with learned-disturbance
//! cancellation and fixed-point control allocation.

pub mod allocation;
pub mod gains;
pub mod law;
pub mod reference;

pub use allocation::{AllocationOutcome, Allocator, ForceModel, OracleModel, SharedModel, ZeroModel};
pub use gains::ControllerGains;
pub use law::{
    attitude_error, attitude_error_rate, attitude_torque, composite_variable, desired_force, nominal_force,
    reference_rate, thrust_attitude_from_force, AttitudeReference, CompositeTerms,
};
pub use reference::{Excitation, Leg, RefPoint, ReferenceTrajectory, Tone};

use crate::error::Result;
use crate::vehicle::{Mat3, RotorCommand, Vec3, VehicleParams, VehicleState};

/// Diagnostics of the most recent position-control step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepDiagnostics {
    pub fp_iterations: usize,
    /// Last fixed-point residual ‖u_{j+1} − u_j‖, RPM².
    pub fp_residual: f64,
    pub fp_max_ratio: Option<f64>,
    pub saturated: bool,
    /// The vertical desired force was raised to the configured floor.
    pub lift_clamped: bool,
    /// ‖u_k − u_{k−1}‖, RPM².
    pub du_norm: f64,
    /// ‖s‖ seen by the controller, m/s.
    pub s_norm: f64,
}

/// Mutable controller memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Command chosen at the previous position step (fixed-point warm start).
    pub u_prev: RotorCommand,
    /// ∫p̃ dt, m·s
    pub integral: Vec3,
    pub terms: CompositeTerms,
    pub f_bar_d: Vec3,
    /// Disturbance prediction held between position steps.
    pub f_hat: Vec3,
    /// Desired force held between position steps.
    pub f_d: Vec3,
    pub attitude_ref: AttitudeReference,
    pub tau_d: Vec3,
    /// Command currently applied to the motors.
    pub command: RotorCommand,
    pub allocation_saturated: bool,
    pub last: StepDiagnostics,
    pub position_steps: usize,
}

impl ControllerState {
    fn new(initial: RotorCommand) -> Self {
        Self {
            u_prev: initial,
            integral: Vec3::zeros(),
            terms: CompositeTerms {
                s: Vec3::zeros(),
                v_r: Vec3::zeros(),
                v_r_dot: Vec3::zeros(),
                p_err: Vec3::zeros(),
            },
            f_bar_d: Vec3::zeros(),
            f_hat: Vec3::zeros(),
            f_d: Vec3::zeros(),
            attitude_ref: AttitudeReference::still(Mat3::identity()),
            tau_d: Vec3::zeros(),
            command: initial,
            allocation_saturated: false,
            last: StepDiagnostics::default(),
            position_steps: 0,
        }
    }
}

/// Position loop, attitude loop, and motor allocation sharing one state.
///
/// The caller decides the rates: [`Controller::position_step`] (outer loop),
/// [`Controller::attitude_step`] and [`Controller::allocate`].
#[derive(Clone)]
pub struct Controller {
    pub params: VehicleParams,
    pub gains: ControllerGains,
    pub allocator: Allocator,
    model: Option<SharedModel>,
    /// σ(B0⁻¹) · L_a_u for a certified model.
    pub contraction_ratio: Option<f64>,
    /// Certified L_a_u of the attached model.
    pub l_a: Option<f64>,
    pub state: ControllerState,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller")
            .field("gains", &self.gains)
            .field("model", &self.model.as_ref().map(|m| m.label()))
            .field("contraction_ratio", &self.contraction_ratio)
            .field("state", &self.state)
            .finish()
    }
}

impl Controller {
    /// Validates the gains, certifies the contraction of the allocation for the
    /// attached model, and checks `λ_min(K_v) > L_a ρ_assumed`.
    pub fn new(params: &VehicleParams, gains: &ControllerGains, model: Option<SharedModel>) -> Result<Self> {
        params.validate()?;
        gains.validate()?;
        let allocator = Allocator::new(params)?;
        let (contraction_ratio, l_a) = match &model {
            Some(m) => {
                let ratio = allocator.certify(m.as_ref())?;
                let l_a = m.command_lipschitz();
                if let Some(l) = l_a {
                    gains.check_gain_condition(l, gains.rho_assumed)?;
                }
                (ratio, l_a)
            }
            None => (None, Some(0.0)),
        };
        let hover = RotorCommand::uniform(params.hover_u());
        Ok(Self {
            params: params.clone(),
            gains: gains.clone(),
            allocator,
            model,
            contraction_ratio,
            l_a,
            state: ControllerState::new(hover),
        })
    }

    pub fn model(&self) -> Option<&SharedModel> {
        self.model.as_ref()
    }

    pub fn model_label(&self) -> String {
        self.model.as_ref().map_or_else(|| "baseline".into(), |m| m.label())
    }

    /// Resets the memory with `initial` as the previous command.
    pub fn reset(&mut self, initial: RotorCommand) {
        self.state = ControllerState::new(initial);
    }

    /// Outer loop: composite variable, desired force with `f̂_a(ζ_k, u_{k−1})`,
    /// desired attitude, attitude torque, and fixed-point allocation.
    pub fn position_step(&mut self, measured: &VehicleState, reference: &RefPoint, dt: f64) -> Result<StepDiagnostics> {
        let gains = &self.gains;
        let st = &mut self.state;
        if gains.integral {
            let p_err = measured.position - reference.position;
            st.integral += p_err * dt;
            let lim = gains.integral_limit;
            st.integral.apply(|v| *v = v.clamp(-lim, lim));
        }
        let terms = composite_variable(measured, reference, gains, &st.integral);
        let f_bar_d = nominal_force(&terms.s, &terms.v_r_dot, &self.params, gains);
        let f_hat0 = match &self.model {
            Some(m) => m.predict(measured, &st.u_prev)?,
            None => Vec3::zeros(),
        };
        let mut f_d = f_bar_d - f_hat0;
        let floor = gains.min_lift_fraction * self.params.mass * self.params.gravity;
        let lift_clamped = f_d.z < floor;
        if lift_clamped {
            f_d.z = floor;
        }
        // the floor is carried into f̄_d so the allocation sees the same force
        let f_bar_eff = f_d + f_hat0;
        let (_, r_d) = thrust_attitude_from_force(&f_d, &measured.attitude, reference.yaw)?;
        st.attitude_ref = AttitudeReference::still(r_d);
        st.tau_d = attitude_torque(measured, &st.attitude_ref, &self.params, gains);
        let outcome = self.allocator.iterate(
            &f_bar_eff,
            &st.tau_d,
            measured,
            self.model.as_deref(),
            &st.u_prev,
            gains.fp_iters,
            gains.fp_tol,
        )?;
        let diag = StepDiagnostics {
            fp_iterations: outcome.iterations,
            fp_residual: outcome.residuals.last().copied().unwrap_or(0.0),
            fp_max_ratio: outcome.max_ratio,
            saturated: outcome.saturated,
            lift_clamped,
            du_norm: outcome.command.distance(&st.u_prev),
            s_norm: terms.s.norm(),
        };
        st.terms = terms;
        st.f_bar_d = f_bar_eff;
        st.f_hat = outcome.f_hat;
        st.f_d = f_bar_eff - outcome.f_hat;
        st.u_prev = outcome.command;
        st.command = outcome.command;
        st.allocation_saturated = outcome.saturated;
        st.last = diag.clone();
        st.position_steps += 1;
        Ok(diag)
    }

    /// Inner loop: torque toward the held desired attitude.
    pub fn attitude_step(&mut self, measured: &VehicleState) {
        self.state.tau_d = attitude_torque(measured, &self.state.attitude_ref, &self.params, &self.gains);
    }

    /// Motor loop: held desired force projected on the current thrust axis,
    /// combined with the latest torque.
    pub fn allocate(&mut self, measured: &VehicleState) -> RotorCommand {
        let thrust = self.state.f_d.dot(&measured.thrust_axis());
        let (u, saturated) = self.allocator.command(thrust, &self.state.tau_d);
        self.state.command = u;
        self.state.allocation_saturated = saturated;
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn hover_ref() -> RefPoint {
        RefPoint {
            position: Vec3::new(0.0, 0.0, 1.0),
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw: 0.0,
        }
    }

    #[test]
    fn hover_holds_hover_thrust() {
        let p = VehicleParams::default();
        let mut c = Controller::new(&p, &ControllerGains::default(), None).unwrap();
        let state = VehicleState::at_rest(Vec3::new(0.0, 0.0, 1.0));
        c.position_step(&state, &hover_ref(), 0.1).unwrap();
        assert_eq!(c.state.tau_d, Vec3::zeros());
        for u in c.state.command.0 {
            assert!((u - p.hover_u()).abs() < 1e-6 * p.hover_u());
        }
    }

    #[test]
    fn zero_model_matches_baseline_bitwise() {
        let p = VehicleParams::default();
        let g = ControllerGains::default();
        let mut a = Controller::new(&p, &g, None).unwrap();
        let mut b = Controller::new(&p, &g, Some(Arc::new(ZeroModel))).unwrap();
        let mut state = VehicleState::at_rest(Vec3::new(0.1, -0.2, 0.7));
        state.velocity = Vec3::new(0.3, 0.1, -0.4);
        state.omega = Vec3::new(0.1, 0.0, -0.2);
        for _ in 0..3 {
            a.position_step(&state, &hover_ref(), 0.1).unwrap();
            b.position_step(&state, &hover_ref(), 0.1).unwrap();
            assert_eq!(a.allocate(&state), b.allocate(&state));
        }
    }

    #[test]
    fn lift_floor_is_applied() {
        let p = VehicleParams::default();
        let mut c = Controller::new(&p, &ControllerGains::default(), None).unwrap();
        let mut state = VehicleState::at_rest(Vec3::new(0.0, 0.0, 5.0));
        state.velocity = Vec3::new(0.0, 0.0, 3.0);
        let d = c.position_step(&state, &hover_ref(), 0.1).unwrap();
        assert!(d.lift_clamped);
        assert!(c.state.f_d.z >= 0.1 * p.mass * p.gravity - 1e-12);
    }
}
