//! The collect → train → fly → evaluate pipeline as library calls.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lander_core::aero::DisturbanceField;
use lander_core::config::{ProgramKind, RunConfig};
use lander_core::control::{OracleModel, SharedModel};
use lander_core::error::{Error, Result};
use lander_core::learn::labels::{extract_labeled_states, LabeledState};
use lander_core::learn::train::{rmse, write_curve_csv, Split};
use lander_core::learn::{
    audit_lipschitz, fit_ground_effect_model, train, LipschitzAudit, SampleDomain, SpecNormNet, TrainOutcome,
    TrainingSet,
};
use lander_core::sim::{collect_training_flight, epsilon_estimate, evaluate, run_scenario, EvaluationInputs};
use lander_core::{FlightLog, Metrics, Scenario};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Force model used by `fly`.
#[derive(Debug, Clone)]
pub enum ModelChoice {
    Baseline,
    /// Exact disturbance force of the configured field.
    Oracle,
    Net(Box<SpecNormNet>),
}

impl ModelChoice {
    /// The oracle reproduces `field`, which must be the flown scenario's field.
    pub fn shared(&self, field: &DisturbanceField) -> Option<SharedModel> {
        match self {
            ModelChoice::Baseline => None,
            ModelChoice::Oracle => Some(Arc::new(OracleModel { field: field.clone() })),
            ModelChoice::Net(net) => Some(Arc::new((**net).clone())),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelChoice::Baseline => "baseline".into(),
            ModelChoice::Oracle => "oracle".into(),
            ModelChoice::Net(net) => net.architecture.label(),
        }
    }
}

/// Flies the configured collection program.
pub fn collect(cfg: &RunConfig, kind: ProgramKind, duration: Option<f64>) -> Result<FlightLog> {
    cfg.validate()?;
    let program = cfg.collection_program(kind);
    let mut field = cfg.field.clone();
    if kind == ProgramKind::TableSurvey && field.table.is_none() {
        field = field.with_default_table();
    }
    collect_training_flight(&program, &field, &cfg.vehicle, &cfg.gains, duration, cfg.collect.noise)
}

/// Name prefix of the steady hover windows of the collection program.
pub const HOVER_PHASE_PREFIX: &str = "part1-";

/// Labelled samples from one or more logs, split into train and validation
/// blocks. `states[i]` is the vehicle state behind `set.samples[i]`, and
/// `hover[i]` marks samples inside a hover window.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub set: TrainingSet,
    pub states: Vec<LabeledState>,
    pub hover: Vec<bool>,
}

impl Dataset {
    pub fn from_logs(cfg: &RunConfig, logs: &[FlightLog]) -> Result<Self> {
        let mut set = TrainingSet::new(cfg.inputs);
        let mut states = Vec::new();
        let mut hover = Vec::new();
        for log in logs {
            let labeled = extract_labeled_states(log, &cfg.vehicle, &cfg.labels)?;
            let windows: Vec<_> = log
                .meta
                .phases
                .iter()
                .filter(|p| p.name.starts_with(HOVER_PHASE_PREFIX))
                .collect();
            hover.extend(labeled.iter().map(|s| windows.iter().any(|p| p.contains(s.t))));
            let mut part = TrainingSet::new(cfg.inputs);
            for s in &labeled {
                part.push(s.t, cfg.inputs.encode(&s.state, &s.u)?, s.label.iter().copied().collect())?;
            }
            set.extend(part)?;
            states.extend(labeled);
        }
        if set.is_empty() {
            return Err(Error::EmptyData);
        }
        set.split_blocks(cfg.split_block, cfg.validation_fraction, cfg.seed)?;
        Ok(Self { set, states, hover })
    }

    /// States of one split, optionally restricted to hover windows.
    pub fn split_states(&self, split: Split, hover_only: bool) -> Vec<LabeledState> {
        self.set
            .samples
            .iter()
            .zip(&self.states)
            .zip(&self.hover)
            .filter(|((s, _), &h)| s.split == split && (h || !hover_only))
            .map(|((_, st), _)| st.clone())
            .collect()
    }
}

/// Vertical-force RMSE of the best-fit steady ground-effect model and of the
/// network on the same validation samples, N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryComparison {
    /// Fitted μ and thrust-curve slope.
    pub mu: f64,
    pub slope: f64,
    pub samples: usize,
    pub theory_rmse_z: f64,
    pub net_rmse_z: f64,
}

fn compare_theory(
    net: &SpecNormNet,
    data: &Dataset,
    template: &lander_core::aero::GroundEffectParams,
    hover_only: bool,
) -> Result<Option<TheoryComparison>> {
    let train_states = data.split_states(Split::Train, hover_only);
    let val_states = data.split_states(Split::Validation, hover_only);
    if train_states.is_empty() || val_states.is_empty() {
        return Ok(None);
    }
    let fit = fit_ground_effect_model(&train_states, template)?;
    let slope = match fit.params.thrust_curve {
        lander_core::aero::ThrustCurve::Affine { slope, .. } => slope,
        lander_core::aero::ThrustCurve::Constant { .. } => 0.0,
    };
    Ok(Some(TheoryComparison {
        mu: fit.params.mu,
        slope,
        samples: val_states.len(),
        theory_rmse_z: fit.rmse_z(&val_states)?,
        net_rmse_z: net_rmse_z(net, &val_states)?,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub architecture: String,
    pub spectral_normalization: bool,
    pub gamma: Option<f64>,
    pub audit: LipschitzAudit,
    /// σ(B0⁻¹)·L_a_u.
    pub contraction_ratio: Option<f64>,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub train_rmse: f64,
    /// `None` when no block landed in the validation split.
    pub validation_rmse: Option<f64>,
    pub max_train_error: f64,
    pub max_validation_error: Option<f64>,
    /// Estimated bound on the prediction error, N.
    pub epsilon_m: f64,
    /// Fitted on the train split, compared on the validation split.
    pub theory: Option<TheoryComparison>,
    /// Both restricted to hover windows.
    pub theory_hover: Option<TheoryComparison>,
    pub provenance: Option<String>,
}

fn max_error<'a>(net: &SpecNormNet, rows: impl Iterator<Item = &'a lander_core::learn::train::Sample>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in rows {
        let y = net.forward(&s.features)?;
        let e = (y - DVector::from_column_slice(&s.target)).norm();
        worst = worst.max(e);
    }
    Ok(worst)
}

fn net_rmse_z(net: &SpecNormNet, states: &[LabeledState]) -> Result<f64> {
    let mut sum = 0.0;
    for s in states {
        let e = net.predict_force(&s.state, &s.u)?.z - s.label.z;
        sum += e * e;
    }
    Ok((sum / states.len().max(1) as f64).sqrt())
}

/// Trains the configured network and audits it.
pub fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<(TrainOutcome, TrainReport)> {
    cfg.validate()?;
    let inv = cfg.inverse_allocation_norm()?;
    let outcome = train(&data.set, &cfg.training, Some(inv))?;
    let net = &outcome.net;

    let points: Vec<DVector<f64>> = data
        .set
        .rows(Split::Train)
        .step_by(7)
        .map(|s| net.input.normalize(&s.features).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let domain = SampleDomain::Points { points, jitter: 0.5 };
    let audit = audit_lipschitz(net, &domain, 10_000, cfg.seed);

    let max_train_error = max_error(net, data.set.rows(Split::Train))?;
    let validation_samples = data.set.count(Split::Validation);
    let (validation_rmse, max_validation_error) = if validation_samples > 0 {
        (
            Some(rmse(net, data.set.rows(Split::Validation))?),
            Some(max_error(net, data.set.rows(Split::Validation))?),
        )
    } else {
        (None, None)
    };
    let epsilon_m = match max_validation_error {
        Some(v) => epsilon_estimate(max_train_error, v),
        None => max_train_error,
    };

    let (theory, theory_hover) = match &cfg.field.ground_effect {
        Some(ge) => (compare_theory(net, data, ge, false)?, compare_theory(net, data, ge, true)?),
        None => (None, None),
    };

    let report = TrainReport {
        architecture: net.architecture.label(),
        spectral_normalization: cfg.training.spectral_normalization,
        gamma: net.gamma,
        contraction_ratio: net.gamma.map(|_| inv * net.command_lipschitz()),
        audit,
        train_samples: data.set.count(Split::Train),
        validation_samples,
        train_rmse: rmse(net, data.set.rows(Split::Train))?,
        validation_rmse,
        max_train_error,
        max_validation_error,
        epsilon_m,
        theory,
        theory_hover,
        provenance: net.provenance.clone(),
    };
    Ok((outcome, report))
}

/// Path of the training report written next to a model file.
pub fn report_path(model: &Path) -> PathBuf {
    model.with_extension("report.json")
}

pub fn save_model(dir: &Path, name: &str, outcome: &TrainOutcome, report: &TrainReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let model = dir.join(format!("{name}.json"));
    outcome.net.save(&model)?;
    std::fs::write(report_path(&model), serde_json::to_string_pretty(report)?)?;
    let curve = std::fs::File::create(dir.join(format!("{name}_loss.csv")))?;
    write_curve_csv(&outcome.curve, curve)?;
    Ok(model)
}

/// Loads a model and, when present, its training report.
pub fn load_model(path: &Path) -> Result<(SpecNormNet, Option<TrainReport>)> {
    let net = SpecNormNet::load(path)?;
    let report = match std::fs::read_to_string(report_path(path)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((net, report))
}

/// Builds the configured scenario.
pub fn scenario(cfg: &RunConfig) -> Result<Scenario> {
    cfg.scenario.build(&cfg.field, cfg.seed)
}

/// Flies the configured scenario. The contraction certificate of a learned
/// model and the gain condition are checked before the first step.
pub fn fly(cfg: &RunConfig, model: &ModelChoice) -> Result<FlightLog> {
    cfg.validate()?;
    if let ModelChoice::Net(net) = model {
        cfg.gains.check_gain_condition(net.command_lipschitz(), cfg.gains.rho_assumed)?;
    }
    let scenario = scenario(cfg)?;
    run_scenario(&scenario, &cfg.vehicle, &cfg.gains, model.shared(&scenario.field))
}

pub fn evaluate_log(cfg: &RunConfig, log: &FlightLog, epsilon_train: Option<f64>) -> Result<Metrics> {
    let inputs = EvaluationInputs {
        epsilon_train,
        ..EvaluationInputs::default()
    };
    evaluate(log, &cfg.gains, &inputs)
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Writes the fully resolved config into `dir`.
pub fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}
