//! Power-iteration spectral norms and layer-wise spectral normalization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::net::SpecNormNet;

/// Stopping policy for [`spectral_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    pub max_iters: usize,
    /// Relative tolerance on the extrapolated remaining error of σ.
    pub tol: f64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

impl PowerIteration {
    /// Tight policy used when normalizing weights, where the estimate feeds a certificate.
    pub fn certify() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// σ estimate after each iteration.
    pub history: Vec<f64>,
    /// Right singular vector estimate, reusable as a warm start.
    pub right_vector: DVector<f64>,
}

/// Deterministic, generic start vector (avoids accidental orthogonality to the
/// top singular vector that a constant vector can have).
fn default_start(n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 1.618_033_988_749_895).sin());
    let norm = v.norm();
    v / norm
}

/// Largest singular value of `w` by power iteration on `WᵀW`.
///
/// The estimate `‖W v_k‖` is non-decreasing in `k`. Iteration stops when the
/// geometric extrapolation of the remaining error falls below `tol · σ`, or when
/// successive estimates agree to machine precision.
pub fn spectral_norm(
    w: &DMatrix<f64>,
    warm_start: Option<&DVector<f64>>,
    policy: &PowerIteration,
) -> SpectralEstimate {
    let n = w.ncols();
    if n == 0 || w.nrows() == 0 {
        return SpectralEstimate {
            sigma: 0.0,
            iterations: 0,
            converged: true,
            history: Vec::new(),
            right_vector: DVector::zeros(n),
        };
    }
    let mut v = match warm_start {
        Some(v0) if v0.len() == n && v0.norm() > 0.0 && v0.iter().all(|x| x.is_finite()) => {
            v0 / v0.norm()
        }
        _ => default_start(n),
    };
    let mut history = Vec::new();
    let mut wv = w * &v;
    let mut sigma = wv.norm();
    history.push(sigma);
    if sigma == 0.0 {
        // v may sit in the null space of a nonzero matrix; retry from the generic start.
        v = default_start(n);
        wv = w * &v;
        sigma = wv.norm();
        history[0] = sigma;
        if sigma == 0.0 && w.amax() == 0.0 {
            return SpectralEstimate {
                sigma: 0.0,
                iterations: 0,
                converged: true,
                history,
                right_vector: v,
            };
        }
    }

    let mut prev_delta = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < policy.max_iters {
        iterations += 1;
        let wt_wv = w.transpose() * &wv;
        let norm = wt_wv.norm();
        if norm == 0.0 {
            break;
        }
        v = wt_wv / norm;
        wv = w * &v;
        let next = wv.norm();
        history.push(next);
        let delta = (next - sigma).max(0.0);
        sigma = next;
        if delta <= 4.0 * f64::EPSILON * sigma {
            converged = true;
            break;
        }
        let rate = delta / prev_delta;
        if prev_delta.is_finite() && rate < 1.0 {
            let remaining = delta * rate / (1.0 - rate);
            if remaining <= policy.tol * sigma {
                converged = true;
                break;
            }
        }
        prev_delta = delta;
    }
    SpectralEstimate {
        sigma,
        iterations,
        converged,
        history,
        right_vector: v,
    }
}

/// How weights are brought under the per-layer budget `c = γ^{1/(L+1)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `W̄ = W / σ(W) · c`: every layer ends at exactly `c`.
    Rescale,
    /// `W̄ = W / max(1, σ(W) / c)`: layers already under budget are untouched.
    #[default]
    Clip,
}

/// Per-layer spectral norm target `γ^{1/(L+1)}` for `layers` trainable layers.
pub fn layer_budget(gamma: f64, layers: usize) -> f64 {
    gamma.powf(1.0 / layers as f64)
}

/// Spectrally normalizes every trainable layer of `net` to the budget implied by
/// its `gamma`. A network without `gamma` is left untouched.
pub fn normalize_layers(net: &mut SpecNormNet, mode: NormalizationMode) -> Result<()> {
    let Some(gamma) = net.gamma else {
        return Ok(());
    };
    let trainable = net.trainable_layer_count();
    if trainable == 0 {
        return Ok(());
    }
    let budget = layer_budget(gamma, trainable);
    let policy = PowerIteration::certify();
    for (index, layer) in net.layers.iter_mut().enumerate() {
        if layer.frozen_weight {
            continue;
        }
        let est = spectral_norm(&layer.weight, Some(&layer.power_vector), &policy);
        if est.sigma == 0.0 {
            return Err(Error::ZeroLayer { layer: index });
        }
        let scale = match mode {
            NormalizationMode::Rescale => budget / est.sigma,
            NormalizationMode::Clip => (budget / est.sigma).min(1.0),
        };
        if scale != 1.0 {
            layer.weight *= scale;
        }
        layer.sigma = est.sigma * scale;
        layer.power_vector = est.right_vector;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::features::FeatureLayout;
    use crate::learn::net::{Architecture, SpecNormNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_has_unit_norm() {
        let est = spectral_norm(&DMatrix::identity(3, 3), None, &PowerIteration::default());
        assert!((est.sigma - 1.0).abs() < 1e-12);
        assert!(est.converged);
    }

    #[test]
    fn diagonal_norm_is_largest_entry() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.5]));
        let est = spectral_norm(&w, None, &PowerIteration::default());
        assert!((est.sigma - 3.0).abs() < 1e-6 * 3.0);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let est = spectral_norm(&DMatrix::zeros(4, 3), None, &PowerIteration::default());
        assert_eq!(est.sigma, 0.0);
    }

    #[test]
    fn estimates_are_monotone() {
        for seed in 0..20 {
            let w = random_matrix(17, 9, seed);
            let est = spectral_norm(&w, None, &PowerIteration { max_iters: 200, tol: 0.0 });
            for pair in est.history.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12, "{pair:?}");
            }
        }
    }

    #[test]
    fn warm_start_converges_faster() {
        let w = random_matrix(32, 32, 3);
        let cold = spectral_norm(&w, None, &PowerIteration::certify());
        let mut perturbed = w.clone();
        perturbed[(0, 0)] += 1e-4;
        let warm = spectral_norm(&perturbed, Some(&cold.right_vector), &PowerIteration::certify());
        assert!(warm.iterations < cold.iterations / 2, "{} vs {}", warm.iterations, cold.iterations);
    }

    fn single_layer_net(w: DMatrix<f64>, gamma: f64) -> SpecNormNet {
        let layout = FeatureLayout::raw(w.ncols());
        let mut net = SpecNormNet::zeros(&Architecture::Affine, layout, w.nrows(), Some(gamma));
        net.layers[0].weight = w;
        net
    }

    #[test]
    fn unit_budget_divides_by_sigma() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 2.0, 1.0]));
        let mut net = single_layer_net(w.clone(), 1.0);
        normalize_layers(&mut net, NormalizationMode::Rescale).unwrap();
        assert!((&net.layers[0].weight - w / 5.0).amax() < 1e-12);
        let sigma = spectral_norm(&net.layers[0].weight, None, &PowerIteration::certify()).sigma;
        assert!((sigma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn five_layers_share_the_budget() {
        let layout = FeatureLayout::raw(6);
        let arch = Architecture::Deep {
            hidden: vec![8, 8, 8, 8],
        };
        let mut net = SpecNormNet::initialize(&arch, layout, 3, Some(32.0), 11);
        normalize_layers(&mut net, NormalizationMode::Rescale).unwrap();
        let mut product = 1.0;
        for layer in &net.layers {
            let s = spectral_norm(&layer.weight, None, &PowerIteration::certify()).sigma;
            assert!((s - 2.0).abs() < 1e-6, "{s}");
            product *= s;
        }
        assert!(product <= 32.0 + 1e-6);
    }

    #[test]
    fn clip_leaves_small_layers_alone() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.2]));
        let mut net = single_layer_net(w.clone(), 1.0);
        normalize_layers(&mut net, NormalizationMode::Clip).unwrap();
        assert_eq!(net.layers[0].weight, w);
    }

    #[test]
    fn zero_layer_is_rejected() {
        let mut net = single_layer_net(DMatrix::zeros(3, 3), 1.0);
        assert!(matches!(
            normalize_layers(&mut net, NormalizationMode::Rescale),
            Err(Error::ZeroLayer { layer: 0 })
        ));
    }
}
