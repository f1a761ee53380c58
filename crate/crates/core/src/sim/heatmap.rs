//! Dense evaluation of a network over a two-feature slice.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::net::SpecNormNet;
use crate::vehicle::{RotorCommand, Vec3, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapAxis {
    /// Input feature name, e.g. `z` or `vz`.
    pub feature: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl HeatmapAxis {
    pub fn new(feature: &str, min: f64, max: f64, points: usize) -> Self {
        Self {
            feature: feature.into(),
            min,
            max,
            points,
        }
    }

    fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        (0..self.points)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSpec {
    pub x: HeatmapAxis,
    pub y: HeatmapAxis,
    /// Raw feature vector holding the fixed features.
    pub base: Vec<f64>,
    /// Output component to map (2 is the vertical force).
    pub output: usize,
}

impl HeatmapSpec {
    /// `(z, v_z)` slice at rest, level, with every rotor at `rpm`.
    pub fn height_vertical_speed(net: &SpecNormNet, z: (f64, f64), vz: (f64, f64), rpm: f64, points: usize) -> Result<Self> {
        let state = VehicleState::at_rest(Vec3::zeros());
        let base = net.input.layout.encode(&state, &RotorCommand::uniform(rpm * rpm))?;
        Ok(Self {
            x: HeatmapAxis::new("z", z.0, z.1, points),
            y: HeatmapAxis::new("vz", vz.0, vz.1, points),
            base,
            output: 2,
        })
    }
}

/// `values[j][i]` is the output at `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub x_feature: String,
    pub y_feature: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Both sliced features lie inside the range seen in training.
    pub in_domain: Vec<Vec<bool>>,
    /// Certified bound on |∂f/∂x| and |∂f/∂y| in physical units.
    pub gradient_bound: (f64, f64),
}

pub fn heatmap_slice(net: &SpecNormNet, spec: &HeatmapSpec) -> Result<HeatmapGrid> {
    let layout = &net.input.layout;
    let index = |name: &str| {
        layout
            .index_of(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown feature {name:?}")))
    };
    let (ix, iy) = (index(&spec.x.feature)?, index(&spec.y.feature)?);
    if ix == iy || spec.x.points == 0 || spec.y.points == 0 {
        return Err(Error::InvalidParameter(
            "heatmap needs two distinct features and at least one point per axis".into(),
        ));
    }
    if spec.base.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: spec.base.len(),
        });
    }
    if spec.output >= net.output_dim() {
        return Err(Error::InvalidParameter(format!("output {} out of range", spec.output)));
    }
    let xs = spec.x.values();
    let ys = spec.y.values();
    let mut values = Vec::with_capacity(ys.len());
    let mut in_domain = Vec::with_capacity(ys.len());
    let mut raw = spec.base.clone();
    for &y in &ys {
        let mut row = Vec::with_capacity(xs.len());
        let mut mask = Vec::with_capacity(xs.len());
        for &x in &xs {
            raw[ix] = x;
            raw[iy] = y;
            row.push(net.forward(&raw)?[spec.output]);
            mask.push(net.input.in_training_range(ix, x) && net.input.in_training_range(iy, y));
        }
        values.push(row);
        in_domain.push(mask);
    }
    let lip = net.output_scale * net.certified_lipschitz();
    Ok(HeatmapGrid {
        x_feature: spec.x.feature.clone(),
        y_feature: spec.y.feature.clone(),
        xs,
        ys,
        values,
        in_domain,
        gradient_bound: (
            lip / net.input.features[ix].scale,
            lip / net.input.features[iy].scale,
        ),
    })
}

impl HeatmapGrid {
    /// Largest |finite difference| along x and along y, over cells whose
    /// corners satisfy `keep(x, y)`.
    pub fn max_gradient_where(&self, keep: impl Fn(f64, f64) -> bool) -> (f64, f64) {
        let mut gx = 0.0_f64;
        let mut gy = 0.0_f64;
        for j in 0..self.ys.len() {
            for i in 0..self.xs.len() {
                if !keep(self.xs[i], self.ys[j]) {
                    continue;
                }
                if i + 1 < self.xs.len() && keep(self.xs[i + 1], self.ys[j]) {
                    let d = (self.values[j][i + 1] - self.values[j][i]) / (self.xs[i + 1] - self.xs[i]);
                    gx = gx.max(d.abs());
                }
                if j + 1 < self.ys.len() && keep(self.xs[i], self.ys[j + 1]) {
                    let d = (self.values[j + 1][i] - self.values[j][i]) / (self.ys[j + 1] - self.ys[j]);
                    gy = gy.max(d.abs());
                }
            }
        }
        (gx, gy)
    }

    pub fn max_gradient(&self) -> (f64, f64) {
        self.max_gradient_where(|_, _| true)
    }

    /// Long-format CSV: one row per grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.x_feature.as_str(), self.y_feature.as_str(), "f", "in_domain"])?;
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                w.write_record([
                    format!("{x:?}"),
                    format!("{y:?}"),
                    format!("{:?}", self.values[j][i]),
                    u8::from(self.in_domain[j][i]).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
