//! Disturbance labels from logged flights: `f_a = m v̇ − m g − R f_u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::features::FeatureLayout;
use crate::learn::train::TrainingSet;
use crate::sim::log::FlightLog;
use crate::vehicle::{RotorCommand, Vec3, VehicleParams, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelOptions {
    /// Zero-phase 2nd-order Butterworth cutoff applied to velocity before
    /// differencing, Hz. `None` disables filtering.
    pub lowpass_hz: Option<f64>,
    /// Skip samples whose difference window touches ground contact.
    pub exclude_contact: bool,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            lowpass_hz: None,
            exclude_contact: true,
        }
    }
}

/// Second-order low-pass biquad coefficients `(b0, b1, b2, a1, a2)` by the
/// bilinear transform.
fn butterworth(cutoff: f64, rate: f64) -> Result<[f64; 5]> {
    if !(cutoff > 0.0) || cutoff >= rate / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "low-pass cutoff {cutoff} Hz must lie in (0, {}) Hz",
            rate / 2.0
        )));
    }
    let k = (std::f64::consts::PI * cutoff / rate).tan();
    let q = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + q * k + k * k);
    let b0 = k * k * norm;
    Ok([
        b0,
        2.0 * b0,
        b0,
        2.0 * (k * k - 1.0) * norm,
        (1.0 - q * k + k * k) * norm,
    ])
}

fn biquad(c: &[f64; 5], x: &[f64]) -> Vec<f64> {
    let [b0, b1, b2, a1, a2] = *c;
    // start in steady state at the first sample
    let (mut x1, mut x2) = (x[0], x[0]);
    let (mut y1, mut y2) = (x[0], x[0]);
    x.iter()
        .map(|&xn| {
            let yn = b0 * xn + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = xn;
            y2 = y1;
            y1 = yn;
            yn
        })
        .collect()
}

/// Zero-phase filtering (forward then backward pass) with odd reflection padding.
pub fn filtfilt(cutoff: f64, rate: f64, x: &[f64]) -> Result<Vec<f64>> {
    let c = butterworth(cutoff, rate)?;
    if x.len() < 2 {
        return Ok(x.to_vec());
    }
    let pad = (3 * 6).min(x.len() - 1);
    let first = x[0];
    let last = x[x.len() - 1];
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));
    let mut y = biquad(&c, &ext);
    y.reverse();
    let mut y = biquad(&c, &y);
    y.reverse();
    Ok(y[pad..pad + x.len()].to_vec())
}

/// One labelled log sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub t: f64,
    /// Measured state (velocity filtered when a cutoff is set).
    pub state: VehicleState,
    pub u: RotorCommand,
    /// Observed disturbance force, N.
    pub label: Vec3,
}

/// Labels every interior sample of a fixed-rate flight log.
///
/// `v̇` is the central difference of the measured velocity, and the rotor force
/// term is the logged world-frame thrust averaged over the same two intervals,
/// so every label is the window average of `f_a`.
pub fn extract_labeled_states(
    log: &FlightLog,
    params: &VehicleParams,
    options: &LabelOptions,
) -> Result<Vec<LabeledState>> {
    let records = &log.records;
    if records.len() < 3 {
        return Err(Error::LogTooShort(records.len()));
    }
    let dt = 1.0 / log.rate_hz;
    for pair in records.windows(2) {
        let step = pair[1].t - pair[0].t;
        if (step - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(Error::Format(format!(
                "log is not sampled at {} Hz near t = {}",
                log.rate_hz, pair[0].t
            )));
        }
    }
    let mut vel: [Vec<f64>; 3] = [0, 1, 2].map(|i| {
        records
            .iter()
            .map(|r| r.measured_velocity[i])
            .collect::<Vec<_>>()
    });
    if let Some(cutoff) = options.lowpass_hz {
        for channel in &mut vel {
            *channel = filtfilt(cutoff, log.rate_hz, channel)?;
        }
    }
    let m = params.mass;
    let g = params.gravity_vector();
    let mut out = Vec::with_capacity(records.len());
    for k in 1..records.len() - 1 {
        if options.exclude_contact
            && (records[k - 1].contact || records[k].contact || records[k + 1].contact)
        {
            continue;
        }
        let accel = Vec3::from_fn(|i, _| (vel[i][k + 1] - vel[i][k - 1]) / (2.0 * dt));
        let thrust = (records[k].thrust_world + records[k + 1].thrust_world) * 0.5;
        let r = &records[k];
        out.push(LabeledState {
            t: r.t,
            state: VehicleState {
                position: r.measured_position,
                velocity: Vec3::new(vel[0][k], vel[1][k], vel[2][k]),
                attitude: r.attitude,
                omega: r.omega,
            },
            u: r.u,
            label: accel * m - g * m - thrust,
        });
    }
    Ok(out)
}

/// Builds a training set from a fixed-rate flight log (see [`extract_labeled_states`]).
pub fn extract_labels(
    log: &FlightLog,
    params: &VehicleParams,
    layout: FeatureLayout,
    options: &LabelOptions,
) -> Result<TrainingSet> {
    let mut set = TrainingSet::new(layout);
    for s in extract_labeled_states(log, params, options)? {
        let features = layout.encode(&s.state, &s.u)?;
        set.push(s.t, features, s.label.iter().copied().collect())?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_passes_constant_and_rejects_high_frequency() {
        let x = vec![2.5; 200];
        let y = filtfilt(10.0, 100.0, &x).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let noise: Vec<f64> = (0..400)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let y = filtfilt(10.0, 100.0, &noise).unwrap();
        let mid = &y[50..350];
        assert!(mid.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn filter_has_no_phase_lag() {
        let rate = 100.0;
        let x: Vec<f64> = (0..1000)
            .map(|i| (2.0 * std::f64::consts::PI * 1.0 * i as f64 / rate).sin())
            .collect();
        let y = filtfilt(10.0, rate, &x).unwrap();
        for i in 100..900 {
            assert!((x[i] - y[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_cutoff() {
        assert!(filtfilt(60.0, 100.0, &[1.0, 2.0]).is_err());
        assert!(filtfilt(0.0, 100.0, &[1.0, 2.0]).is_err());
    }
}
