//! Declarative run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aero::DisturbanceField;
use crate::control::ControllerGains;
use crate::error::{Error, Result};
use crate::learn::{FeatureLayout, LabelOptions, TrainConfig};
use crate::sim::scenario::{CollectionProgram, NoiseSettings, Scenario};
use crate::vehicle::{build_allocation_matrix, Vec3, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    #[default]
    Landing,
    Hover,
    CrossTable,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Landing => "landing",
            Self::Hover => "hover",
            Self::CrossTable => "cross-table",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "landing" => Ok(Self::Landing),
            "hover" => Ok(Self::Hover),
            "cross-table" => Ok(Self::CrossTable),
            other => Err(Error::Config(format!(
                "unknown scenario {other:?} (expected landing, hover, cross-table)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Hover setpoint, m.
    pub hover_position: [f64; 3],
    /// Overrides the scenario's duration, s.
    pub duration: Option<f64>,
    /// Rotor-plane clearance above the table top for the cross-table ellipse, m.
    pub table_clearance: f64,
    pub noise: NoiseSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Landing,
            hover_position: [0.0, 0.0, 0.1],
            duration: None,
            table_clearance: 0.2,
            noise: NoiseSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn build(&self, field: &DisturbanceField, seed: u64) -> Result<Scenario> {
        let mut s = match self.kind {
            ScenarioKind::Landing => Scenario::landing(field.clone()),
            ScenarioKind::Hover => Scenario::hover(Vec3::from(self.hover_position), 30.0, field.clone()),
            ScenarioKind::CrossTable => {
                let mut field = field.clone();
                if field.table.is_none() {
                    field = field.with_default_table();
                }
                Scenario::cross_table(field, self.table_clearance)?
            }
        };
        if let Some(d) = self.duration {
            s.duration = d;
            if self.kind == ScenarioKind::Hover {
                s.phases = Scenario::hover(Vec3::zeros(), d, DisturbanceField::none()).phases;
            }
        }
        s.noise = self.noise;
        s.seed = seed;
        s.validate()?;
        Ok(s)
    }
}

/// Which collection program `collect` flies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProgramKind {
    /// Part I height sweeps plus Part II random excursions.
    #[default]
    Standard,
    /// Random crossings of the default table.
    TableSurvey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub program: CollectionProgram,
    /// Emulated state-estimate noise during collection.
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub vehicle: VehicleParams,
    pub field: DisturbanceField,
    pub gains: ControllerGains,
    pub collect: CollectConfig,
    pub labels: LabelOptions,
    /// Network input layout used when labelling logs for training.
    pub inputs: FeatureLayout,
    pub training: TrainConfig,
    /// Block length of the train/validation split, s.
    pub split_block: f64,
    /// Fraction of blocks held out for validation.
    pub validation_fraction: f64,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vehicle = VehicleParams::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            field: DisturbanceField::ground_effect_default(&vehicle),
            vehicle,
            gains: ControllerGains::default(),
            collect: CollectConfig::default(),
            labels: LabelOptions::default(),
            inputs: FeatureLayout::default(),
            training: TrainConfig::default(),
            split_block: 2.0,
            validation_fraction: 0.2,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// σ(B0⁻¹) of the configured airframe.
    pub fn inverse_allocation_norm(&self) -> Result<f64> {
        Ok(build_allocation_matrix(&self.vehicle)?.inverse_spectral_norm())
    }

    /// Certified L_a_u implied by the training configuration (zero without SN
    /// means unbounded and is reported as infinity).
    pub fn planned_command_lipschitz(&self) -> Result<f64> {
        let inv = self.inverse_allocation_norm()?;
        Ok(match self.training.resolved_gamma(inv) {
            Some(g) => self.training.features.output_scale * g / self.training.features.u_scale,
            None => f64::INFINITY,
        })
    }

    /// Checks every precondition before any simulation or training starts:
    /// parameter ranges, the contraction certificate, the gain condition, and
    /// singularity clearance of the scenario.
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.field.validate()?;
        self.gains.validate()?;
        self.collect.program.validate()?;
        let inv = self.inverse_allocation_norm()?;
        self.training.validate(Some(inv))?;
        if !(self.split_block > 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "split_block must be positive and validation_fraction in [0, 1)".into(),
            ));
        }
        if self.training.spectral_normalization {
            let l_a = self.planned_command_lipschitz()?;
            self.gains.check_gain_condition(l_a, self.gains.rho_assumed)?;
        }
        self.scenario.build(&self.field, self.seed)?;
        Ok(())
    }

    pub fn collection_program(&self, kind: ProgramKind) -> CollectionProgram {
        let mut p = match kind {
            ProgramKind::Standard => self.collect.program.clone(),
            ProgramKind::TableSurvey => CollectionProgram {
                seed: self.collect.program.seed,
                ..CollectionProgram::table_survey()
            },
        };
        p.seed ^= self.seed;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[gains]\nkv = [1.0]").is_err());
    }

    #[test]
    fn oversized_gamma_fails_contraction() {
        let mut c = RunConfig::default();
        c.training.gamma = Some(1e12);
        assert!(matches!(c.validate(), Err(Error::ContractionViolation { .. })));
    }

    #[test]
    fn gain_condition_is_enforced() {
        let mut c = RunConfig::default();
        c.gains.rho_assumed = 1e12;
        assert!(matches!(c.validate(), Err(Error::GainCondition { .. })));
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c = RunConfig::from_toml("seed = 7\n[scenario]\nkind = \"cross-table\"\n").unwrap();
        assert_eq!(c.seed, 7);
        let s = c.scenario.build(&c.field, c.seed).unwrap();
        assert_eq!(s.name, "cross-table");
    }
}
