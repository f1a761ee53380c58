//! Disturbance models and fixed-point control allocation.

use std::sync::Arc;

use crate::aero::{total_disturbance, DisturbanceField};
use crate::error::{Error, Result};
use crate::learn::net::SpecNormNet;
use crate::vehicle::{
    build_allocation_matrix, AllocationMatrix, RotorCommand, Vec3, VehicleParams, VehicleState, Wrench,
};

/// Predictor `f̂_a(ζ, u)` of the disturbance force.
pub trait ForceModel: Send + Sync {
    fn predict(&self, state: &VehicleState, u: &RotorCommand) -> Result<Vec3>;

    /// Certified Lipschitz constant with respect to `u`, N/RPM². `None` marks an
    /// uncertified model, which is exempt from the contraction check.
    fn command_lipschitz(&self) -> Option<f64>;

    fn label(&self) -> String;
}

/// `f̂_a ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl ForceModel for ZeroModel {
    fn predict(&self, _: &VehicleState, _: &RotorCommand) -> Result<Vec3> {
        Ok(Vec3::zeros())
    }

    fn command_lipschitz(&self) -> Option<f64> {
        Some(0.0)
    }

    fn label(&self) -> String {
        "zero".into()
    }
}

/// The true force field, for experiments with zero learning error.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub field: DisturbanceField,
}

impl ForceModel for OracleModel {
    fn predict(&self, state: &VehicleState, u: &RotorCommand) -> Result<Vec3> {
        Ok(total_disturbance(state, u, &self.field)?.force)
    }

    fn command_lipschitz(&self) -> Option<f64> {
        None
    }

    fn label(&self) -> String {
        "oracle".into()
    }
}

impl ForceModel for SpecNormNet {
    fn predict(&self, state: &VehicleState, u: &RotorCommand) -> Result<Vec3> {
        self.predict_force(state, u)
    }

    fn command_lipschitz(&self) -> Option<f64> {
        Some(SpecNormNet::command_lipschitz(self))
    }

    fn label(&self) -> String {
        format!("net-{}", self.architecture)
    }
}

pub type SharedModel = Arc<dyn ForceModel>;

/// Result of one fixed-point allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOutcome {
    pub command: RotorCommand,
    /// Disturbance prediction that produced `command`.
    pub f_hat: Vec3,
    pub iterations: usize,
    /// ‖u_{j+1} − u_j‖ for each iteration, RPM².
    pub residuals: Vec<f64>,
    /// Largest residual ratio `r_{j+1} / r_j` above the round-off floor.
    pub max_ratio: Option<f64>,
    pub converged: bool,
    pub saturated: bool,
}

/// Maps a desired wrench to clamped motor commands and runs the fixed-point
/// iteration `u ← clamp(B0⁻¹ [(f̄_d − f̂_a(ζ, u)) · k̂; τ_d])`.
#[derive(Debug, Clone)]
pub struct Allocator {
    pub b0: AllocationMatrix,
    /// σ(B0⁻¹)
    pub inverse_norm: f64,
    pub u_max: f64,
}

impl Allocator {
    pub fn new(params: &VehicleParams) -> Result<Self> {
        let b0 = build_allocation_matrix(params)?;
        Ok(Self {
            inverse_norm: b0.inverse_spectral_norm(),
            b0,
            u_max: params.u_max(),
        })
    }

    /// Certified contraction ratio `σ(B0⁻¹) · L_a_u` for `model`; errors when it
    /// is not below one. `None` for uncertified models.
    pub fn certify(&self, model: &dyn ForceModel) -> Result<Option<f64>> {
        match model.command_lipschitz() {
            None => Ok(None),
            Some(l) => {
                let ratio = self.inverse_norm * l;
                if !(ratio < 1.0) {
                    return Err(Error::ContractionViolation { ratio });
                }
                Ok(Some(ratio))
            }
        }
    }

    /// `clamp(B0⁻¹ [T; τ])` and whether the clamp was active.
    pub fn command(&self, thrust: f64, torque: &Vec3) -> (RotorCommand, bool) {
        self.b0
            .solve(&Wrench {
                thrust,
                torque: *torque,
            })
            .clamped(self.u_max)
    }

    /// Runs up to `iters` fixed-point iterations from `u_prev`, stopping early
    /// once ‖Δu‖ < `tol`.
    #[allow(clippy::too_many_arguments)]
    pub fn fixed_point(
        &self,
        f_bar_d: &Vec3,
        tau_d: &Vec3,
        state: &VehicleState,
        model: Option<&dyn ForceModel>,
        u_prev: &RotorCommand,
        iters: usize,
        tol: f64,
    ) -> Result<AllocationOutcome> {
        if let Some(m) = model {
            self.certify(m)?;
        }
        self.iterate(f_bar_d, tau_d, state, model, u_prev, iters, tol)
    }

    /// [`Allocator::fixed_point`] without the certificate check, for callers
    /// that certified the model once up front.
    #[allow(clippy::too_many_arguments)]
    pub fn iterate(
        &self,
        f_bar_d: &Vec3,
        tau_d: &Vec3,
        state: &VehicleState,
        model: Option<&dyn ForceModel>,
        u_prev: &RotorCommand,
        iters: usize,
        tol: f64,
    ) -> Result<AllocationOutcome> {
        let k_hat = state.thrust_axis();
        let mut u = *u_prev;
        let mut residuals = Vec::with_capacity(iters);
        let mut f_hat = Vec3::zeros();
        let mut saturated = false;
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..iters.max(1) {
            f_hat = match model {
                Some(m) => m.predict(state, &u)?,
                None => Vec3::zeros(),
            };
            let thrust = (f_bar_d - f_hat).dot(&k_hat);
            let (next, sat) = self.command(thrust, tau_d);
            let r = next.distance(&u);
            residuals.push(r);
            saturated = sat;
            u = next;
            iterations += 1;
            if r < tol || model.is_none() {
                converged = r < tol || model.is_none();
                break;
            }
        }
        // ratios below the round-off floor of u are meaningless
        let floor = 1e-9 * u.as_vector().norm().max(1.0);
        let max_ratio = residuals
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
        Ok(AllocationOutcome {
            command: u,
            f_hat,
            iterations,
            residuals,
            max_ratio,
            converged,
            saturated,
        })
    }
}
