use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::Mat3;

/// Diagonal controller gains and the fixed-point allocation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Λ, 1/s
    pub lambda: [f64; 3],
    /// K_v, N·s/m
    pub kv: [f64; 3],
    /// K_ω, N·m·s/rad
    pub k_omega: [f64; 3],
    /// Λ_R, 1/s
    pub lambda_r: [f64; 3],
    /// Use `v_r = ṗ_d − 2Λp̃ − Λ²∫p̃` instead of `v_r = ṗ_d − Λp̃`.
    pub integral: bool,
    /// Anti-windup limit on each component of ∫p̃, m·s.
    pub integral_limit: f64,
    /// Fixed-point iterations per position-control step.
    pub fp_iters: usize,
    /// Early-exit tolerance on ‖u_{j+1} − u_j‖, RPM².
    pub fp_tol: f64,
    /// ρ assumed when checking the gain condition before flight, RPM²·s/m.
    pub rho_assumed: f64,
    /// Lower limit on the vertical component of the desired force, as a
    /// fraction of the weight.
    pub min_lift_fraction: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            lambda: [2.0; 3],
            kv: [8.0; 3],
            k_omega: [0.4; 3],
            lambda_r: [10.0; 3],
            integral: false,
            integral_limit: 1.0,
            fp_iters: 1,
            fp_tol: 1e-3,
            rho_assumed: 1e8,
            min_lift_fraction: 0.1,
        }
    }
}

fn diag(v: &[f64; 3]) -> Mat3 {
    Mat3::from_diagonal(&(*v).into())
}

fn min3(v: &[f64; 3]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl ControllerGains {
    pub fn lambda_matrix(&self) -> Mat3 {
        diag(&self.lambda)
    }

    pub fn kv_matrix(&self) -> Mat3 {
        diag(&self.kv)
    }

    pub fn k_omega_matrix(&self) -> Mat3 {
        diag(&self.k_omega)
    }

    pub fn lambda_r_matrix(&self) -> Mat3 {
        diag(&self.lambda_r)
    }

    pub fn lambda_min(&self) -> f64 {
        min3(&self.lambda)
    }

    pub fn kv_min(&self) -> f64 {
        min3(&self.kv)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", &self.lambda),
            ("kv", &self.kv),
            ("k_omega", &self.k_omega),
            ("lambda_r", &self.lambda_r),
        ] {
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive definite, got {v:?}"
                )));
            }
        }
        if self.fp_iters == 0 {
            return Err(Error::InvalidParameter("fp_iters must be at least 1".into()));
        }
        if !(self.fp_tol >= 0.0) {
            return Err(Error::InvalidParameter("fp_tol must be non-negative".into()));
        }
        if !(self.integral_limit > 0.0) {
            return Err(Error::InvalidParameter("integral_limit must be positive".into()));
        }
        if !(self.rho_assumed >= 0.0) {
            return Err(Error::InvalidParameter("rho_assumed must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.min_lift_fraction) {
            return Err(Error::InvalidParameter(
                "min_lift_fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Stability margin `λ_min(K_v) − L_a ρ`; errors when it is not positive.
    pub fn check_gain_condition(&self, l_a: f64, rho: f64) -> Result<f64> {
        let la_rho = l_a * rho;
        let margin = self.kv_min() - la_rho;
        if !(margin > 0.0) {
            return Err(Error::GainCondition {
                kv_min: self.kv_min(),
                la_rho,
            });
        }
        Ok(margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ControllerGains::default().validate().unwrap();
    }

    #[test]
    fn rejects_non_positive_gains() {
        let g = ControllerGains {
            kv: [8.0, 0.0, 8.0],
            ..Default::default()
        };
        assert!(g.validate().is_err());
        let g = ControllerGains {
            fp_iters: 0,
            ..Default::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn gain_condition() {
        let g = ControllerGains::default();
        assert!((g.check_gain_condition(1e-8, 1e8).unwrap() - 7.0).abs() < 1e-12);
        assert!(matches!(
            g.check_gain_condition(1e-7, 1e8),
            Err(Error::GainCondition { .. })
        ));
    }
}
