//! Least-squares fit of the steady 1-D ground-effect model to labelled data,
//! the physics-based comparison model for a learned predictor.

use serde::{Deserialize, Serialize};

use crate::aero::{rotor_lift, GroundEffectParams, ThrustCurve};
use crate::error::{Error, Result};
use crate::learn::labels::LabeledState;
use crate::vehicle::Vec3;

/// Ground-effect model with fitted `μ` and thrust-curve slope. Rotor diameter,
/// reference thrust coefficient, `n₀`, and rotor offset are taken as known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundEffectFit {
    pub params: GroundEffectParams,
    /// RMS error of the vertical force component on the fitting data, N.
    pub rmse_z: f64,
}

impl GroundEffectFit {
    /// Predicted disturbance force (lift along the thrust axis).
    pub fn predict(&self, sample: &LabeledState) -> Result<Vec3> {
        let z = sample.state.position.z.max(0.0) + self.params.rotor_offset;
        Ok(sample.state.thrust_axis() * rotor_lift(&sample.u, z, &self.params)?)
    }

    /// RMS error of the vertical component over `samples`, N.
    pub fn rmse_z<'a>(&self, samples: impl IntoIterator<Item = &'a LabeledState>) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in samples {
            let e = self.predict(s)?.z - s.label.z;
            sum += e * e;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyData);
        }
        Ok((sum / n as f64).sqrt())
    }
}

/// For fixed μ the lift is affine in the thrust-curve slope `s`:
/// `lift = a(μ) + s · b(μ)`. Returns the optimal `s` and the residual sum of squares.
fn fit_slope(samples: &[LabeledState], template: &GroundEffectParams, mu: f64) -> Option<(f64, f64)> {
    let (c_ref, n_ref) = match template.thrust_curve {
        ThrustCurve::Affine { c_t_ref, n_ref, .. } => (c_t_ref, n_ref),
        ThrustCurve::Constant { c_t } => (c_t, template.n0),
    };
    let shifted = (template.n0 - n_ref) / n_ref;
    let r = template.rotor_diameter / 8.0;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let z = s.state.position.z.max(0.0) + template.rotor_offset;
        let denom = 1.0 - mu * (r / z).powi(2);
        if denom <= 0.0 {
            return None;
        }
        let amp = 1.0 / denom;
        let kz = s.state.thrust_axis().z;
        let (mut a, mut b) = (0.0, 0.0);
        for n in s.u.speeds() {
            let n2 = n * n;
            a += n2 * c_ref * (amp - 1.0);
            b += n2 * c_ref * (amp * (n - n_ref) / n_ref - shifted);
        }
        rows.push((a * kz, b * kz, s.label.z));
    }
    let (sbb, sby) = rows
        .iter()
        .fold((0.0, 0.0), |(bb, by), (a, b, y)| (bb + b * b, by + b * (y - a)));
    let slope = if sbb > 0.0 { sby / sbb } else { 0.0 };
    let rss = rows
        .iter()
        .map(|(a, b, y)| (a + slope * b - y).powi(2))
        .sum();
    Some((slope, rss))
}

/// Best-fit ground-effect model over `samples` by a grid search in μ followed by
/// golden-section refinement, with the slope solved in closed form for each μ.
pub fn fit_ground_effect_model(
    samples: &[LabeledState],
    template: &GroundEffectParams,
) -> Result<GroundEffectFit> {
    if samples.is_empty() {
        return Err(Error::EmptyData);
    }
    let z_min = samples
        .iter()
        .map(|s| s.state.position.z.max(0.0) + template.rotor_offset)
        .fold(f64::INFINITY, f64::min);
    // μ must keep every sample above the singular height
    let mu_max = (8.0 * z_min / template.rotor_diameter).powi(2) * (1.0 - 1e-9);
    let cost = |mu: f64| fit_slope(samples, template, mu).map_or(f64::INFINITY, |(_, rss)| rss);
    let grid = 400;
    let mut best = (0.0, cost(0.0));
    for i in 1..=grid {
        let mu = mu_max * i as f64 / grid as f64;
        let c = cost(mu);
        if c < best.1 {
            best = (mu, c);
        }
    }
    let step = mu_max / grid as f64;
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(mu_max));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if cost(m1) <= cost(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mu = if cost(0.5 * (lo + hi)) < best.1 {
        0.5 * (lo + hi)
    } else {
        best.0
    };
    let (slope, rss) = fit_slope(samples, template, mu).ok_or_else(|| {
        Error::InvalidParameter("ground-effect fit reached the singularity".into())
    })?;
    let (c_t_ref, n_ref) = match template.thrust_curve {
        ThrustCurve::Affine { c_t_ref, n_ref, .. } => (c_t_ref, n_ref),
        ThrustCurve::Constant { c_t } => (c_t, template.n0),
    };
    let params = GroundEffectParams {
        mu,
        thrust_curve: ThrustCurve::Affine {
            c_t_ref,
            n_ref,
            slope,
        },
        ..*template
    };
    Ok(GroundEffectFit {
        params,
        rmse_z: (rss / samples.len() as f64).sqrt(),
    })
}
