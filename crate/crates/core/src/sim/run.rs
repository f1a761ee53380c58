//! Multi-rate closed-loop simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::aero::{total_disturbance, DisturbanceField};
use crate::control::{composite_variable, Controller, ControllerGains, SharedModel};
use crate::error::{Error, Result};
use crate::sim::log::{FlightLog, FlightRecord, LogMeta, LOG_SCHEMA, LOG_SCHEMA_VERSION};
use crate::sim::scenario::{CollectionProgram, Scenario};
use crate::vehicle::{
    integrate_step_with, wrench_from_command, Disturbance, RotorCommand, Vec3, VehicleParams, VehicleState,
};

/// Settles a state that penetrated the floor: zero height, no downward or
/// horizontal velocity, level attitude with the current heading.
fn ground_contact(state: &mut VehicleState) -> bool {
    if state.position.z > 0.0 {
        return false;
    }
    state.position.z = 0.0;
    state.velocity = Vec3::new(0.0, 0.0, state.velocity.z.max(0.0));
    state.omega = Vec3::zeros();
    let yaw = state.attitude[(1, 0)].atan2(state.attitude[(0, 0)]);
    state.attitude = *nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), yaw).matrix();
    true
}

fn initial_state(scenario: &Scenario) -> VehicleState {
    let r = scenario.reference.sample(0.0);
    match scenario.initial_position {
        Some(p) => VehicleState::at_rest(Vec3::from(p)),
        None => {
            let mut s = VehicleState::at_rest(r.position);
            s.velocity = r.velocity;
            s
        }
    }
}

fn diverged(t: f64, reason: String, log: FlightLog) -> Error {
    Error::Divergence {
        t,
        reason,
        partial: Box::new(log),
    }
}

/// Simulates `scenario` in closed loop with the composite controller and an
/// optional learned model.
///
/// Physics is integrated with RK4 at `rates.physics_dt`; the position loop,
/// attitude loop, motor allocation, state estimate, and log run every
/// `position_every`, `attitude_every`, `motor_every`, and `log_every` steps.
/// Records hold the state at `t` before the step taken from `t`.
pub fn run_scenario(
    scenario: &Scenario,
    params: &VehicleParams,
    gains: &ControllerGains,
    model: Option<SharedModel>,
) -> Result<FlightLog> {
    scenario.validate()?;
    let mut controller = Controller::new(params, gains, model)?;
    let rates = scenario.rates;
    let dt = rates.physics_dt;
    let steps = (scenario.duration / dt).round() as usize;
    let field: &DisturbanceField = &scenario.field;

    let meta = LogMeta {
        schema: LOG_SCHEMA.into(),
        schema_version: LOG_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        controller: controller.model_label(),
        seed: scenario.seed,
        rate_hz: rates.log_rate(),
        inverse_allocation_norm: controller.allocator.inverse_norm,
        l_a: controller.l_a,
        contraction_ratio: controller.contraction_ratio,
        min_reference_height: {
            let n = (scenario.duration / 0.01).ceil() as usize;
            (0..=n)
                .map(|i| scenario.reference.sample(i as f64 * 0.01).position.z)
                .fold(f64::INFINITY, f64::min)
        },
        mass: params.mass,
        phases: scenario.phases.clone(),
        discontinuities: scenario.reference.discontinuities(),
        table: scenario.field.table,
        config: serde_json::json!({
            "scenario": scenario,
            "vehicle": params,
            "gains": gains,
        }),
    };
    let mut log = FlightLog::new(rates.log_rate(), meta);
    log.records.reserve(steps / rates.log_every + 1);

    let mut state = initial_state(scenario);
    let mut contact = ground_contact(&mut state);
    controller.reset(RotorCommand::uniform(params.hover_u()));
    let b0 = controller.allocator.b0.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let pos_noise = Normal::new(0.0, scenario.noise.position_sigma)
        .map_err(|e| Error::InvalidParameter(format!("position noise: {e}")))?;
    let vel_noise = Normal::new(0.0, scenario.noise.velocity_sigma)
        .map_err(|e| Error::InvalidParameter(format!("velocity noise: {e}")))?;
    let mut noise = (Vec3::zeros(), Vec3::zeros());

    let thrust_of = |s: &VehicleState, u: &RotorCommand| s.thrust_axis() * wrench_from_command(&b0, u).thrust;
    let mut thrust_acc = Vec3::zeros();
    let mut thrust_steps = 0usize;
    let mut last_thrust = thrust_of(&state, &controller.state.command);
    let position_dt = dt * rates.position_every as f64;

    for k in 0..=steps {
        let t = k as f64 * dt;
        if k % rates.log_every == 0 && scenario.noise.enabled {
            noise = (
                Vec3::from_fn(|_, _| pos_noise.sample(&mut rng)),
                Vec3::from_fn(|_, _| vel_noise.sample(&mut rng)),
            );
        }
        let measured = VehicleState {
            position: state.position + noise.0,
            velocity: state.velocity + noise.1,
            ..state
        };
        let control_update = k % rates.position_every == 0;
        if control_update {
            let reference = scenario.reference.sample(t);
            controller.position_step(&measured, &reference, position_dt)?;
        } else if k % rates.attitude_every == 0 {
            controller.attitude_step(&measured);
        }
        if k % rates.motor_every == 0 {
            controller.allocate(&measured);
        }
        let u = controller.state.command;

        if k % rates.log_every == 0 {
            let reference = scenario.reference.sample(t);
            let truth = match total_disturbance(&state, &u, field) {
                Ok(d) => d,
                Err(e) => return Err(diverged(t, e.to_string(), log)),
            };
            let f_pred = match controller.model() {
                Some(m) => m.predict(&state, &u)?,
                None => Vec3::zeros(),
            };
            let terms = composite_variable(&state, &reference, gains, &controller.state.integral);
            let thrust_world = if thrust_steps == 0 {
                last_thrust
            } else {
                thrust_acc / thrust_steps as f64
            };
            let last = &controller.state.last;
            log.records.push(FlightRecord {
                t,
                position: state.position,
                velocity: state.velocity,
                attitude: state.attitude,
                omega: state.omega,
                u,
                f_true: truth.force,
                tau_true: truth.torque,
                f_pred,
                f_ctrl: controller.state.f_hat,
                s: terms.s,
                p_err: terms.p_err,
                p_des: reference.position,
                measured_position: measured.position,
                measured_velocity: measured.velocity,
                thrust_world,
                fp_iterations: last.fp_iterations,
                fp_residual: last.fp_residual,
                fp_ratio: last.fp_max_ratio.unwrap_or(f64::NAN),
                du_norm: last.du_norm,
                s_ctrl: last.s_norm,
                control_update,
                saturated: controller.state.allocation_saturated || last.saturated,
                lift_clamped: last.lift_clamped,
                contact,
            });
            thrust_acc = Vec3::zeros();
            thrust_steps = 0;
        }
        if k == steps {
            break;
        }

        let wrench = wrench_from_command(&b0, &u);
        let mut field_error = None;
        let next = integrate_step_with(&state, &wrench, params, dt, |s| match total_disturbance(s, &u, field) {
            Ok(d) => d,
            Err(e) => {
                field_error.get_or_insert(e);
                Disturbance::zero()
            }
        });
        if let Some(e) = field_error {
            return Err(diverged(t, e.to_string(), log));
        }
        let mut next = match next {
            Ok(s) => s,
            Err(_) => return Err(diverged(t + dt, "non-finite state".into(), log)),
        };
        contact = ground_contact(&mut next);
        let thrust_next = thrust_of(&next, &u);
        thrust_acc += 0.5 * (thrust_of(&state, &u) + thrust_next);
        thrust_steps += 1;
        last_thrust = thrust_next;
        state = next;
        if !state.is_finite() || state.position.norm() > scenario.domain_bound {
            return Err(diverged(
                t + dt,
                format!("|p| = {:.3} m left the {:.1} m domain", state.position.norm(), scenario.domain_bound),
                log,
            ));
        }
    }
    Ok(log)
}

/// Flies a data-collection program under the baseline controller.
pub fn collect_training_flight(
    program: &CollectionProgram,
    field: &DisturbanceField,
    params: &VehicleParams,
    gains: &ControllerGains,
    duration: Option<f64>,
    noise: bool,
) -> Result<FlightLog> {
    let mut scenario = program.scenario(field.clone(), duration)?;
    scenario.noise.enabled = noise;
    run_scenario(&scenario, params, gains, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ZeroModel;
    use std::sync::Arc;

    #[test]
    fn zero_disturbance_hover_is_exact() {
        let s = Scenario::hover(Vec3::new(0.0, 0.0, 1.0), 10.0, DisturbanceField::none());
        let log = run_scenario(&s, &VehicleParams::default(), &ControllerGains::default(), None).unwrap();
        assert_eq!(log.records.len(), 1001);
        let max = log.records.iter().map(|r| r.p_err.norm()).fold(0.0, f64::max);
        assert!(max < 1e-3, "{max}");
        assert!((log.records[1].t - 0.01).abs() < 1e-12);
    }

    #[test]
    fn rerun_is_bitwise_identical() {
        let mut s = Scenario::landing(DisturbanceField::default());
        s.duration = 3.0;
        s.noise.enabled = true;
        let p = VehicleParams::default();
        let g = ControllerGains::default();
        let a = run_scenario(&s, &p, &g, None).unwrap();
        let b = run_scenario(&s, &p, &g, None).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn zero_model_matches_baseline() {
        let mut s = Scenario::landing(DisturbanceField::default());
        s.duration = 5.0;
        let p = VehicleParams::default();
        let g = ControllerGains::default();
        let a = run_scenario(&s, &p, &g, None).unwrap();
        let b = run_scenario(&s, &p, &g, Some(Arc::new(ZeroModel))).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.position, y.position);
        }
    }

    #[test]
    fn starts_in_contact_and_takes_off() {
        let s = Scenario::landing(DisturbanceField::default());
        let log = run_scenario(&s, &VehicleParams::default(), &ControllerGains::default(), None).unwrap();
        assert!(log.records[0].contact);
        let mid = log.records.iter().find(|r| (r.t - 6.0).abs() < 1e-9).unwrap();
        assert!(!mid.contact && (mid.position.z - 1.0).abs() < 0.05);
    }

    #[test]
    fn divergence_returns_partial_log() {
        let mut s = Scenario::hover(Vec3::new(0.0, 0.0, 1.0), 5.0, DisturbanceField::none());
        s.domain_bound = 2.0;
        s.initial_position = Some([0.0, 0.0, 2.5]);
        let gains = ControllerGains::default();
        match run_scenario(&s, &VehicleParams::default(), &gains, None) {
            Err(Error::Divergence { t, partial, .. }) => {
                assert_eq!(partial.records.len(), 1);
                assert!(t > 0.0 && t < 0.01);
            }
            other => panic!("expected divergence, got {:?}", other.map(|l| l.records.len())),
        }
    }
}
