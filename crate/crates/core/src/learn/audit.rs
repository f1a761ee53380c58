//! Certified and empirical Lipschitz constants of a trained network.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::learn::net::SpecNormNet;
use crate::learn::spectral::{spectral_norm, PowerIteration};

/// Where audit inputs are drawn from, in normalized feature units.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleDomain {
    /// Uniform in `[-half_width, half_width]^d`.
    Box { half_width: f64 },
    /// Uniformly chosen points from a set (e.g. normalized training inputs),
    /// jittered by up to `jitter` per coordinate.
    Points { points: Vec<DVector<f64>>, jitter: f64 },
}

impl Default for SampleDomain {
    fn default() -> Self {
        SampleDomain::Box { half_width: 3.0 }
    }
}

impl SampleDomain {
    fn draw(&self, dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            SampleDomain::Box { half_width } => {
                DVector::from_fn(dim, |_, _| rng.gen_range(-*half_width..=*half_width))
            }
            SampleDomain::Points { points, jitter } => {
                let base = &points[rng.gen_range(0..points.len())];
                DVector::from_fn(dim, |i, _| {
                    base[i] + if *jitter > 0.0 { rng.gen_range(-*jitter..=*jitter) } else { 0.0 }
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzAudit {
    /// ∏σ(W̄ˡ) over normalized units.
    pub certified_bound: f64,
    pub layer_sigmas: Vec<f64>,
    pub gamma: Option<f64>,
    /// Largest ‖f(x) − f(x′)‖ / ‖x − x′‖ over sampled pairs.
    pub pair_estimate: f64,
    /// Largest Jacobian spectral norm over sampled points.
    pub gradient_estimate: f64,
    /// max(pair_estimate, gradient_estimate).
    pub empirical_estimate: f64,
    /// Certified Lipschitz constant of the physical output with respect to the
    /// physical rotor command, N/RPM².
    pub l_a_u: f64,
    pub pairs: usize,
}

/// Audits `net` with `n_pairs` random input pairs and as many Jacobian samples.
///
/// Half the pairs are independent draws; the other half are local pairs
/// `x′ = x + δ` with ‖δ‖ spread log-uniformly over [1e-4, 1], which probe the
/// steepest directions far better than distant pairs do.
pub fn audit_lipschitz(
    net: &SpecNormNet,
    domain: &SampleDomain,
    n_pairs: usize,
    seed: u64,
) -> LipschitzAudit {
    let dim = net.input_dim();
    let policy = PowerIteration::certify();
    let layer_sigmas: Vec<f64> = net
        .layers
        .iter()
        .map(|l| spectral_norm(&l.weight, Some(&l.power_vector), &policy).sigma)
        .collect();
    let certified_bound = layer_sigmas.iter().product();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pair_estimate: f64 = 0.0;
    for i in 0..n_pairs {
        let x = domain.draw(dim, &mut rng);
        let x2 = if i % 2 == 0 {
            domain.draw(dim, &mut rng)
        } else {
            let dir = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let len = 10f64.powf(rng.gen_range(-4.0..0.0));
            let n = dir.norm();
            if n == 0.0 {
                continue;
            }
            &x + dir * (len / n)
        };
        let dx = (&x - &x2).norm();
        if dx == 0.0 {
            continue;
        }
        let df = (net.forward_normalized(&x) - net.forward_normalized(&x2)).norm();
        pair_estimate = pair_estimate.max(df / dx);
    }
    let mut gradient_estimate: f64 = 0.0;
    for _ in 0..n_pairs {
        let x = domain.draw(dim, &mut rng);
        let jac = net.jacobian_normalized(&x);
        let s = spectral_norm(&jac, None, &policy).sigma;
        gradient_estimate = gradient_estimate.max(s);
    }
    LipschitzAudit {
        certified_bound,
        layer_sigmas,
        gamma: net.gamma,
        pair_estimate,
        gradient_estimate,
        empirical_estimate: pair_estimate.max(gradient_estimate),
        l_a_u: net.command_lipschitz(),
        pairs: n_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::features::FeatureLayout;
    use crate::learn::net::Architecture;
    use crate::learn::spectral::{normalize_layers, NormalizationMode};
    use nalgebra::DMatrix;

    #[test]
    fn identity_net_has_unit_constants() {
        let mut net = SpecNormNet::zeros(&Architecture::Affine, FeatureLayout::raw(3), 3, None);
        net.layers[0].weight = DMatrix::identity(3, 3);
        let audit = audit_lipschitz(&net, &SampleDomain::default(), 200, 0);
        assert!((audit.certified_bound - 1.0).abs() < 1e-12);
        assert!((audit.empirical_estimate - 1.0).abs() < 1e-9);
        assert_eq!(audit.l_a_u, 0.0);
    }

    #[test]
    fn empirical_never_exceeds_certified() {
        for seed in 0..5 {
            let mut net = SpecNormNet::initialize(
                &Architecture::Deep { hidden: vec![16, 16] },
                FeatureLayout::raw(5),
                3,
                Some(3.0),
                seed,
            );
            normalize_layers(&mut net, NormalizationMode::Rescale).unwrap();
            let audit = audit_lipschitz(&net, &SampleDomain::default(), 500, seed);
            assert!(audit.empirical_estimate <= audit.certified_bound * (1.0 + 1e-9));
            assert!(audit.certified_bound <= 3.0 + 1e-6);
        }
    }

    #[test]
    fn point_domain_samples_near_points() {
        let net = SpecNormNet::zeros(&Architecture::Affine, FeatureLayout::raw(2), 1, None);
        let domain = SampleDomain::Points {
            points: vec![DVector::from_vec(vec![10.0, 10.0])],
            jitter: 0.0,
        };
        let audit = audit_lipschitz(&net, &domain, 10, 1);
        assert_eq!(audit.pair_estimate, 0.0);
    }
}
