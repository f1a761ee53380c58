use std::sync::Arc;

use lander_core::aero::DisturbanceField;
use lander_core::learn::{Architecture, FeatureLayout};
use lander_core::sim::{EvaluationInputs, Scenario};
use lander_core::vehicle::Vec3;
use lander_core::{
    evaluate, run_scenario, ControllerGains, FlightLog, OracleModel, SharedModel, SpecNormNet,
    VehicleParams,
};

fn field() -> DisturbanceField {
    DisturbanceField::ground_effect_default(&VehicleParams::default())
}

fn oracle() -> SharedModel {
    Arc::new(OracleModel { field: field() })
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("lander-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn oracle_hover_in_ground_effect_converges_to_the_setpoint() {
    let target = Vec3::new(0.2, -0.1, 0.12);
    let scenario = Scenario::hover(target, 20.0, field());
    let params = VehicleParams::default();
    let gains = ControllerGains::default();
    let log = run_scenario(&scenario, &params, &gains, Some(oracle())).unwrap();
    let tail = &log.records[log.records.len() - 100..];
    let worst = tail.iter().map(|r| (r.position - target).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");

    let baseline = run_scenario(&scenario, &params, &gains, None).unwrap();
    let last = baseline.records.last().unwrap();
    assert!((last.position - target).norm() > 10.0 * worst.max(1e-6));
}

#[test]
fn oracle_landing_beats_baseline() {
    let params = VehicleParams::default();
    let gains = ControllerGains::default();
    let scenario = Scenario::landing(field());
    let inputs = EvaluationInputs::default();
    let base = evaluate(&run_scenario(&scenario, &params, &gains, None).unwrap(), &gains, &inputs).unwrap();
    let ideal = evaluate(&run_scenario(&scenario, &params, &gains, Some(oracle())).unwrap(), &gains, &inputs).unwrap();
    assert!(ideal.terminal_z_error < 0.2 * base.terminal_z_error, "{} vs {}", ideal.terminal_z_error, base.terminal_z_error);
    assert!(ideal.rms_z_error < base.rms_z_error);
}

#[test]
fn saved_log_re_evaluates_identically() {
    let params = VehicleParams::default();
    let gains = ControllerGains::default();
    let mut scenario = Scenario::landing(field());
    scenario.noise.enabled = true;
    let net = SpecNormNet::zeros(&Architecture::Bias, FeatureLayout::default(), 3, None);
    let log = run_scenario(&scenario, &params, &gains, Some(Arc::new(net))).unwrap();
    let inputs = EvaluationInputs::default();
    let metrics = evaluate(&log, &gains, &inputs).unwrap();

    let dir = scratch("reeval");
    let base = dir.join("flight.v1");
    log.save(&base, Some(&serde_json::to_value(&metrics).unwrap())).unwrap();
    let back = FlightLog::load(&dir.join("flight.v1.csv")).unwrap();
    std::fs::remove_dir_all(&dir).ok();

    assert_eq!(back.digest().unwrap(), log.digest().unwrap());
    assert_eq!(back.meta.scenario, "landing");
    assert_eq!(back.meta.controller, log.meta.controller);
    let again = evaluate(&back, &gains, &inputs).unwrap();
    assert_eq!(
        serde_json::to_string(&again).unwrap(),
        serde_json::to_string(&metrics).unwrap()
    );
}

#[test]
fn noisy_runs_are_reproducible_per_seed() {
    let params = VehicleParams::default();
    let gains = ControllerGains::default();
    let mut scenario = Scenario::hover(Vec3::new(0.0, 0.0, 0.5), 3.0, field());
    scenario.noise.enabled = true;
    let a = run_scenario(&scenario, &params, &gains, None).unwrap();
    let b = run_scenario(&scenario, &params, &gains, None).unwrap();
    assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    scenario.seed += 1;
    let c = run_scenario(&scenario, &params, &gains, None).unwrap();
    assert_ne!(a.digest().unwrap(), c.digest().unwrap());
}
