//! Network input features and their normalization.

use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{RotorCommand, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeEncoding {
    /// Unit quaternion with non-negative scalar part (4 features).
    #[default]
    Quaternion,
    /// All nine rotation-matrix entries, row-major (9 features).
    RotationMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Position,
    Height,
    Velocity,
    Attitude,
    Command,
    Other,
}

/// Ordered list of input features.
///
/// The vehicle layout is `[x, y]? z, vx, vy, vz, attitude…, u1..u4`, giving 12
/// inputs with a quaternion, 17 with a rotation matrix, and two more with x-y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum FeatureLayout {
    Vehicle {
        attitude: AttitudeEncoding,
        include_xy: bool,
    },
    /// Arbitrary pre-computed features, used for synthetic regression problems.
    Raw { dim: usize },
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self::vehicle(AttitudeEncoding::Quaternion, false)
    }
}

impl FeatureLayout {
    pub fn vehicle(attitude: AttitudeEncoding, include_xy: bool) -> Self {
        Self::Vehicle {
            attitude,
            include_xy,
        }
    }

    pub fn raw(dim: usize) -> Self {
        Self::Raw { dim }
    }

    pub fn features(&self) -> Vec<(String, FeatureKind)> {
        match *self {
            FeatureLayout::Raw { dim } => (0..dim)
                .map(|i| (format!("x{i}"), FeatureKind::Other))
                .collect(),
            FeatureLayout::Vehicle {
                attitude,
                include_xy,
            } => {
                let mut out = Vec::new();
                if include_xy {
                    out.push(("x".to_string(), FeatureKind::Position));
                    out.push(("y".to_string(), FeatureKind::Position));
                }
                out.push(("z".to_string(), FeatureKind::Height));
                for n in ["vx", "vy", "vz"] {
                    out.push((n.to_string(), FeatureKind::Velocity));
                }
                let att: Vec<&str> = match attitude {
                    AttitudeEncoding::Quaternion => vec!["qw", "qx", "qy", "qz"],
                    AttitudeEncoding::RotationMatrix => {
                        vec!["r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33"]
                    }
                };
                out.extend(att.into_iter().map(|n| (n.to_string(), FeatureKind::Attitude)));
                for n in ["u1", "u2", "u3", "u4"] {
                    out.push((n.to_string(), FeatureKind::Command));
                }
                out
            }
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            FeatureLayout::Raw { dim } => dim,
            FeatureLayout::Vehicle {
                attitude,
                include_xy,
            } => {
                let att = match attitude {
                    AttitudeEncoding::Quaternion => 4,
                    AttitudeEncoding::RotationMatrix => 9,
                };
                (if include_xy { 2 } else { 0 }) + 1 + 3 + att + 4
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features().iter().position(|(n, _)| n == name)
    }

    /// Raw (unnormalized) feature vector for a state and rotor command.
    pub fn encode(&self, state: &VehicleState, u: &RotorCommand) -> Result<Vec<f64>> {
        let FeatureLayout::Vehicle {
            attitude,
            include_xy,
        } = *self
        else {
            return Err(Error::InvalidParameter(
                "raw feature layouts cannot encode vehicle states".into(),
            ));
        };
        let mut out = Vec::with_capacity(self.dim());
        let p = &state.position;
        if include_xy {
            out.push(p.x);
            out.push(p.y);
        }
        out.push(p.z);
        out.extend(state.velocity.iter());
        match attitude {
            AttitudeEncoding::Quaternion => {
                let rot = Rotation3::from_matrix_unchecked(state.attitude);
                let q = UnitQuaternion::from_rotation_matrix(&rot);
                let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
                out.extend([q.w, q.i, q.j, q.k].map(|c| sign * c));
            }
            AttitudeEncoding::RotationMatrix => {
                for r in 0..3 {
                    for c in 0..3 {
                        out.push(state.attitude[(r, c)]);
                    }
                }
            }
        }
        out.extend(u.0);
        Ok(out)
    }
}

/// Normalization of one input feature: `(x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub name: String,
    pub kind: FeatureKind,
    pub mean: f64,
    pub scale: f64,
    /// Range seen in training data.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub layout: FeatureLayout,
    pub features: Vec<FeatureNorm>,
}

impl InputSpec {
    /// Identity normalization (mean 0, scale 1).
    pub fn identity(layout: FeatureLayout) -> Self {
        let features = layout
            .features()
            .into_iter()
            .map(|(name, kind)| FeatureNorm {
                name,
                kind,
                mean: 0.0,
                scale: 1.0,
                min: f64::MIN,
                max: f64::MAX,
            })
            .collect();
        Self { layout, features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                expected: self.features.len(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(&self.features)
            .map(|(x, f)| (x - f.mean) / f.scale)
            .collect())
    }

    /// Smallest scale among features of the given kind.
    pub fn min_scale(&self, kind: FeatureKind) -> Option<f64> {
        self.features
            .iter()
            .filter(|f| f.kind == kind)
            .map(|f| f.scale)
            .reduce(f64::min)
    }

    pub fn in_training_range(&self, index: usize, value: f64) -> bool {
        let f = &self.features[index];
        value >= f.min && value <= f.max
    }
}

/// How input and output scales are chosen from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    /// Fixed divisor for squared-speed features, RPM². Together with γ it sets the
    /// model's certified sensitivity to the motor command, which the control
    /// allocation's contraction certificate bounds.
    pub u_scale: f64,
    /// Force units per normalized output unit, N.
    pub output_scale: f64,
    /// Lower limits on the data-derived spread of each feature kind.
    pub min_height_scale: f64,
    pub min_position_scale: f64,
    pub min_velocity_scale: f64,
    pub min_attitude_scale: f64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            u_scale: 4.0e9,
            output_scale: 1.0,
            min_height_scale: 0.05,
            min_position_scale: 0.05,
            min_velocity_scale: 0.05,
            min_attitude_scale: 0.05,
        }
    }
}

impl NormalizationConfig {
    /// Builds the input spec from the rows of a feature matrix.
    pub fn fit<'a>(
        &self,
        layout: FeatureLayout,
        rows: impl Iterator<Item = &'a [f64]> + Clone,
    ) -> Result<InputSpec> {
        let names = layout.features();
        let dim = names.len();
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for row in rows.clone() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            count += 1;
            for i in 0..dim {
                sum[i] += row[i];
                min[i] = min[i].min(row[i]);
                max[i] = max[i].max(row[i]);
            }
        }
        if count == 0 {
            return Err(Error::EmptyData);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; dim];
        for row in rows {
            for i in 0..dim {
                var[i] += (row[i] - mean[i]).powi(2);
            }
        }
        let features = names
            .into_iter()
            .enumerate()
            .map(|(i, (name, kind))| {
                let std = (var[i] / count as f64).sqrt();
                let scale = match kind {
                    FeatureKind::Command => self.u_scale,
                    FeatureKind::Height => std.max(self.min_height_scale),
                    FeatureKind::Position => std.max(self.min_position_scale),
                    FeatureKind::Velocity => std.max(self.min_velocity_scale),
                    FeatureKind::Attitude => std.max(self.min_attitude_scale),
                    FeatureKind::Other => std.max(1e-9),
                };
                FeatureNorm {
                    name,
                    kind,
                    mean: mean[i],
                    scale,
                    min: min[i],
                    max: max[i],
                }
            })
            .collect();
        Ok(InputSpec { layout, features })
    }
}
