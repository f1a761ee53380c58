//! Flight metrics and the tracking-error bounds, computed from logs only.

use serde::{Deserialize, Serialize};

use crate::control::ControllerGains;
use crate::error::{Error, Result};
use crate::sim::log::{FlightLog, FlightRecord};

/// Constants entering the exponential envelope and the steady-state ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// kg
    pub mass: f64,
    pub kv_min: f64,
    pub lambda_min: f64,
    /// N/RPM²
    pub l_a: f64,
    /// RPM²·s/m
    pub rho: f64,
    /// N
    pub epsilon_m: f64,
}

impl BoundInputs {
    /// `λ_min(K_v) − L_a ρ`; errors when not positive.
    pub fn margin(&self) -> Result<f64> {
        let la_rho = self.l_a * self.rho;
        let margin = self.kv_min - la_rho;
        if !(margin > 0.0) {
            return Err(Error::GainCondition {
                kv_min: self.kv_min,
                la_rho,
            });
        }
        Ok(margin)
    }

    /// Exponential rate of ‖s‖, 1/s.
    pub fn rate(&self) -> Result<f64> {
        Ok(self.margin()? / self.mass)
    }

    /// Ultimate bound on ‖s‖, m/s.
    pub fn ultimate_s(&self) -> Result<f64> {
        Ok(self.epsilon_m / self.margin()?)
    }

    /// Ultimate bound on ‖p̃‖, m.
    pub fn steady_state_position(&self) -> Result<f64> {
        steady_state_bound(self.epsilon_m, self.lambda_min, self.kv_min, self.l_a * self.rho)
    }

    /// `‖s(t₀)‖ e^{−rate (t − t₀)} + ε_m / margin`
    pub fn envelope(&self, s0: f64, elapsed: f64) -> Result<f64> {
        Ok(s0 * (-self.rate()? * elapsed).exp() + self.ultimate_s()?)
    }
}

/// `ε_m / (λ_min(Λ) (λ_min(K_v) − L_a ρ))`
pub fn steady_state_bound(epsilon_m: f64, lambda_min: f64, kv_min: f64, la_rho: f64) -> Result<f64> {
    let margin = kv_min - la_rho;
    if !(margin > 0.0) {
        return Err(Error::GainCondition { kv_min, la_rho });
    }
    if !(lambda_min > 0.0) {
        return Err(Error::InvalidParameter("lambda_min must be positive".into()));
    }
    Ok(epsilon_m / (lambda_min * margin))
}

/// Learning-error estimate from training and validation residual maxima: the
/// validation maximum plus the train/validation gap as a margin.
pub fn epsilon_estimate(max_train: f64, max_validation: f64) -> f64 {
    max_validation + (max_validation - max_train).abs()
}

/// Extra inputs of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationInputs {
    /// Certified L_a_u; defaults to the value recorded in the log.
    pub l_a: Option<f64>,
    /// ε_m estimated from training data; combined with the flown estimate.
    pub epsilon_train: Option<f64>,
    /// Overrides the measured ρ.
    pub rho: Option<f64>,
    /// Window at the end of the log for the terminal error, s.
    pub terminal_window: f64,
    /// Fraction of the log (from the end) used for the steady-state check.
    pub steady_tail_fraction: f64,
    /// Position steps with ‖s‖ below this are skipped when measuring ρ, m/s.
    pub rho_s_floor: f64,
    /// Half-width of the band around the table edge, m.
    pub edge_band: f64,
}

impl Default for EvaluationInputs {
    fn default() -> Self {
        Self {
            l_a: None,
            epsilon_train: None,
            rho: None,
            terminal_window: 1.0,
            steady_tail_fraction: 1.0 / 3.0,
            rho_s_floor: 1e-3,
            edge_band: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest ‖s‖ / envelope.
    pub max_ratio: f64,
    pub restarts: usize,
    pub rate: f64,
    pub ultimate: f64,
    /// Violations if the envelope decayed twice as fast.
    pub violations_double_rate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub tail_start: f64,
    pub max_p_err: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub name: String,
    pub samples: usize,
    pub rms_z_error: f64,
    pub rms_p_err: f64,
    pub z_error_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub band: f64,
    pub samples: usize,
    pub rms_z_error: f64,
    pub z_error_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointMetrics {
    pub allocations: usize,
    pub measured_max_ratio: Option<f64>,
    pub certified_ratio: Option<f64>,
    pub ratio_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub controller: String,
    pub duration: f64,
    pub records: usize,
    /// Mean |z − z_d| over the terminal window, m.
    pub terminal_z_error: f64,
    /// Mean z − z_d over the terminal window, m.
    pub terminal_z_offset: f64,
    pub rms_p_err: [f64; 3],
    pub rms_z_error: f64,
    pub max_p_err: f64,
    pub max_s: f64,
    /// max ‖u_k − u_{k−1}‖ / ‖s‖ over position steps.
    pub rho_measured: f64,
    /// max ‖f_a − f̂_a‖ at logged states and commands, N.
    pub epsilon_flown: f64,
    /// max ‖f_a − held f̂_a‖, N.
    pub epsilon_control: f64,
    pub epsilon_train: Option<f64>,
    /// ε_m used in the bounds.
    pub epsilon_m: f64,
    pub l_a: f64,
    pub bounds: Option<BoundInputs>,
    pub envelope: Option<EnvelopeReport>,
    pub steady_state: Option<SteadyStateReport>,
    pub fixed_point: FixedPointMetrics,
    pub saturated_fraction: f64,
    pub contact_fraction: f64,
    /// Largest descent speed at a touchdown, m/s.
    pub touchdown_speed: f64,
    pub phases: Vec<PhaseMetrics>,
    pub table_edge: Option<EdgeMetrics>,
}

fn rms(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        ((sum / n as f64).sqrt(), n)
    }
}

fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn z_error(r: &FlightRecord) -> f64 {
    r.position.z - r.p_des.z
}

fn excluded(r: &FlightRecord) -> bool {
    r.saturated || r.contact || r.lift_clamped
}

fn check_envelope(log: &FlightLog, b: &BoundInputs) -> Result<EnvelopeReport> {
    let rate = b.rate()?;
    let ultimate = b.ultimate_s()?;
    let tol = 1e-9;
    let mut report = EnvelopeReport {
        checked: 0,
        violations: 0,
        max_ratio: 0.0,
        restarts: 0,
        rate,
        ultimate,
        violations_double_rate: 0,
    };
    let mut discontinuities = log.meta.discontinuities.clone();
    discontinuities.sort_by(f64::total_cmp);
    let mut next_jump = 0usize;
    let mut anchor: Option<(f64, f64)> = None;
    for r in &log.records {
        while next_jump < discontinuities.len() && discontinuities[next_jump] <= r.t {
            next_jump += 1;
            anchor = None;
        }
        if excluded(r) {
            anchor = None;
            continue;
        }
        let s = r.s.norm();
        let (t0, s0) = *anchor.get_or_insert_with(|| {
            report.restarts += 1;
            (r.t, s)
        });
        let elapsed = r.t - t0;
        let bound = s0 * (-rate * elapsed).exp() + ultimate;
        report.checked += 1;
        report.max_ratio = report.max_ratio.max(s / bound);
        if s > bound * (1.0 + tol) + tol {
            report.violations += 1;
        }
        if s > s0 * (-2.0 * rate * elapsed).exp() + ultimate + tol {
            report.violations_double_rate += 1;
        }
    }
    Ok(report)
}

/// Computes every metric from a log. Deterministic: re-evaluating a stored log
/// reproduces the result bitwise.
pub fn evaluate(log: &FlightLog, gains: &ControllerGains, inputs: &EvaluationInputs) -> Result<Metrics> {
    let records = &log.records;
    if records.is_empty() {
        return Err(Error::LogTooShort(0));
    }
    let t_end = records.last().map_or(0.0, |r| r.t);
    let t_start = records[0].t;

    let terminal: Vec<&FlightRecord> = records
        .iter()
        .filter(|r| r.t >= t_end - inputs.terminal_window - 1e-9)
        .collect();
    let terminal_z_error = terminal.iter().map(|r| z_error(r).abs()).sum::<f64>() / terminal.len() as f64;
    let terminal_z_offset = terminal.iter().map(|r| z_error(r)).sum::<f64>() / terminal.len() as f64;

    let rms_p_err = [0, 1, 2].map(|i| rms(records.iter().map(|r| r.p_err[i])).0);
    let (rms_z_error, _) = rms(records.iter().map(z_error));
    let max_p_err = records.iter().map(|r| r.p_err.norm()).fold(0.0, f64::max);
    let max_s = records.iter().map(|r| r.s.norm()).fold(0.0, f64::max);

    let rho_measured = records
        .iter()
        .filter(|r| r.control_update && !excluded(r) && r.s_ctrl >= inputs.rho_s_floor)
        .map(|r| r.du_norm / r.s_ctrl)
        .fold(0.0, f64::max);
    let airborne = || records.iter().filter(|r| !r.contact);
    let epsilon_flown = airborne().map(|r| (r.f_true - r.f_pred).norm()).fold(0.0, f64::max);
    let epsilon_control = airborne().map(|r| (r.f_true - r.f_ctrl).norm()).fold(0.0, f64::max);
    let epsilon_m = epsilon_flown.max(inputs.epsilon_train.unwrap_or(0.0));
    let l_a = inputs.l_a.or(log.meta.l_a).unwrap_or(0.0);

    let bounds = BoundInputs {
        mass: log.meta.mass,
        kv_min: gains.kv_min(),
        lambda_min: gains.lambda_min(),
        l_a,
        rho: inputs.rho.unwrap_or(rho_measured),
        epsilon_m,
    };
    let valid = bounds.margin().is_ok() && bounds.mass > 0.0;
    let envelope = if valid { Some(check_envelope(log, &bounds)?) } else { None };
    let steady_state = if valid {
        let tail_start = t_end - (t_end - t_start) * inputs.steady_tail_fraction;
        let max_p_err = records
            .iter()
            .filter(|r| r.t >= tail_start)
            .map(|r| r.p_err.norm())
            .fold(0.0, f64::max);
        let bound = bounds.steady_state_position()?;
        Some(SteadyStateReport {
            tail_start,
            max_p_err,
            bound,
            holds: max_p_err <= bound,
        })
    } else {
        None
    };

    let certified_ratio = log.meta.contraction_ratio;
    let ratios: Vec<f64> = records
        .iter()
        .filter(|r| r.control_update && r.fp_ratio.is_finite())
        .map(|r| r.fp_ratio)
        .collect();
    let fixed_point = FixedPointMetrics {
        allocations: records.iter().filter(|r| r.control_update).count(),
        measured_max_ratio: ratios.iter().copied().reduce(f64::max),
        certified_ratio,
        ratio_violations: match certified_ratio {
            Some(c) => ratios.iter().filter(|&&r| r > c + 1e-9).count(),
            None => 0,
        },
    };

    let n = records.len() as f64;
    let saturated_fraction = records.iter().filter(|r| r.saturated).count() as f64 / n;
    let contact_fraction = records.iter().filter(|r| r.contact).count() as f64 / n;
    let touchdown_speed = records
        .windows(2)
        .filter(|w| !w[0].contact && w[1].contact)
        .map(|w| (-w[0].velocity.z).max(0.0))
        .fold(0.0, f64::max);

    let phases = log
        .meta
        .phases
        .iter()
        .map(|p| {
            let errs: Vec<f64> = records.iter().filter(|r| p.contains(r.t)).map(z_error).collect();
            let (rms_p, samples) = rms(records.iter().filter(|r| p.contains(r.t)).map(|r| r.p_err.norm()));
            PhaseMetrics {
                name: p.name.clone(),
                samples,
                rms_z_error: rms(errs.iter().copied()).0,
                rms_p_err: rms_p,
                z_error_variance: variance(&errs),
            }
        })
        .collect();

    let table_edge = log.meta.table.map(|table| {
        let errs: Vec<f64> = records
            .iter()
            .filter(|r| table.edge_distance(r.position.x, r.position.y).abs() <= inputs.edge_band)
            .map(z_error)
            .collect();
        EdgeMetrics {
            band: inputs.edge_band,
            samples: errs.len(),
            rms_z_error: rms(errs.iter().copied()).0,
            z_error_variance: variance(&errs),
        }
    });

    Ok(Metrics {
        scenario: log.meta.scenario.clone(),
        controller: log.meta.controller.clone(),
        duration: t_end - t_start,
        records: records.len(),
        terminal_z_error,
        terminal_z_offset,
        rms_p_err,
        rms_z_error,
        max_p_err,
        max_s,
        rho_measured,
        epsilon_flown,
        epsilon_control,
        epsilon_train: inputs.epsilon_train,
        epsilon_m,
        l_a,
        bounds: valid.then_some(bounds),
        envelope,
        steady_state,
        fixed_point,
        saturated_fraction,
        contact_fraction,
        touchdown_speed,
        phases,
        table_edge,
    })
}

impl Metrics {
    pub fn phase(&self, name: &str) -> Option<&PhaseMetrics> {
        self.phases.iter().find(|p| p.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_state_bound_hand_value() {
        let b = steady_state_bound(0.1, 2.0, 8.0, 1.0).unwrap();
        assert!((b - 0.1 / 14.0).abs() < 1e-15);
        assert!((b - 0.00714).abs() < 5e-6);
        assert!(matches!(
            steady_state_bound(0.1, 2.0, 8.0, 8.0),
            Err(Error::GainCondition { .. })
        ));
    }

    #[test]
    fn envelope_decays_to_ball() {
        let b = BoundInputs {
            mass: 1.5,
            kv_min: 8.0,
            lambda_min: 2.0,
            l_a: 1e-8,
            rho: 1e8,
            epsilon_m: 0.7,
        };
        assert!((b.envelope(1.0, 0.0).unwrap() - 1.1).abs() < 1e-12);
        assert!((b.envelope(1.0, 100.0).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn epsilon_adds_gap() {
        assert_eq!(epsilon_estimate(0.3, 0.4), 0.5);
        assert_eq!(epsilon_estimate(0.5, 0.4), 0.5);
    }
}
