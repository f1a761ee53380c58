use lander_core::aero::DisturbanceField;
use lander_core::learn::labels::extract_labeled_states;
use lander_core::learn::{
    normalize_layers, spectral_norm, Architecture, FeatureLayout, LabelOptions, Loss,
    NormalizationMode, PowerIteration, SpecNormNet,
};
use lander_core::sim::Scenario;
use lander_core::{run_scenario, ControllerGains, VehicleParams};
use nalgebra::{DMatrix, DVector, SVD};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_net(inputs: usize, hidden: Vec<usize>, gamma: Option<f64>, seed: u64) -> SpecNormNet {
    let arch = Architecture::Deep { hidden };
    let mut net = SpecNormNet::initialize(&arch, FeatureLayout::raw(inputs), 3, gamma, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for layer in &mut net.layers {
        layer.bias = DVector::from_fn(layer.bias.len(), |_, _| rng.gen_range(-0.5..0.5));
    }
    net
}

fn largest_singular_value(w: &DMatrix<f64>) -> f64 {
    SVD::new(w.clone(), false, false).singular_values.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_iteration_agrees_with_svd(rows in 1usize..16, cols in 1usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(rows, cols, &mut rng) * rng.gen_range(0.01..100.0);
        let exact = largest_singular_value(&w);
        let est = spectral_norm(&w, None, &PowerIteration::certify());
        prop_assert!(est.sigma <= exact * (1.0 + 1e-12));
        prop_assert!((est.sigma - exact).abs() <= 1e-6 * exact, "{} vs {}", est.sigma, exact);
        prop_assert!(est.history.windows(2).all(|h| h[1] >= h[0] * (1.0 - 1e-14)));
    }

    #[test]
    fn normalized_net_is_gamma_lipschitz(gamma in 0.1..60.0f64, seed in any::<u64>()) {
        let mut net = random_net(6, vec![16, 16], Some(gamma), seed);
        for layer in &mut net.layers {
            layer.weight *= 5.0;
        }
        normalize_layers(&mut net, NormalizationMode::Clip).unwrap();
        let product: f64 = net.layers.iter().map(|l| largest_singular_value(&l.weight)).product();
        prop_assert!(product <= gamma * (1.0 + 1e-9), "{product} > {gamma}");
        prop_assert!(net.certified_lipschitz() <= gamma * (1.0 + 1e-9));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x = DVector::from_fn(6, |_, _| rng.gen_range(-3.0..3.0));
            let y = &x + DVector::from_fn(6, |_, _| rng.gen_range(-0.5..0.5));
            let dy = (net.forward_normalized(&x) - net.forward_normalized(&y)).norm();
            prop_assert!(dy <= gamma * (x - y).norm() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn rescale_hits_the_budget_exactly(gamma in 0.5..20.0f64, seed in any::<u64>()) {
        let mut net = random_net(4, vec![8, 8, 8], Some(gamma), seed);
        normalize_layers(&mut net, NormalizationMode::Rescale).unwrap();
        let product: f64 = net.layers.iter().map(|l| largest_singular_value(&l.weight)).product();
        prop_assert!((product - gamma).abs() <= 1e-9 * gamma);
    }
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    for case in 0..20 {
        let net = random_net(5, vec![12, 9], None, case);
        let x = gaussian(5, 4, &mut rng);
        let y = gaussian(3, 4, &mut rng);
        for loss in [Loss::Squared, Loss::L2] {
            let (_, grads) = net.loss_and_gradient(&x, &y, loss);
            for (l, layer) in net.layers.iter().enumerate() {
                for idx in 0..layer.weight.len() {
                    let mut plus = net.clone();
                    plus.layers[l].weight[idx] += h;
                    let mut minus = net.clone();
                    minus.layers[l].weight[idx] -= h;
                    let fd = (plus.loss_and_gradient(&x, &y, loss).0 - minus.loss_and_gradient(&x, &y, loss).0)
                        / (2.0 * h);
                    let g = grads.weights[l][idx];
                    assert!((fd - g).abs() <= 1e-5 * (1.0 + g.abs()), "case {case} layer {l}: {fd} vs {g}");
                }
                for idx in 0..layer.bias.len() {
                    let mut plus = net.clone();
                    plus.layers[l].bias[idx] += h;
                    let mut minus = net.clone();
                    minus.layers[l].bias[idx] -= h;
                    let fd = (plus.loss_and_gradient(&x, &y, loss).0 - minus.loss_and_gradient(&x, &y, loss).0)
                        / (2.0 * h);
                    let g = grads.biases[l][idx];
                    assert!((fd - g).abs() <= 1e-5 * (1.0 + g.abs()), "case {case} bias {l}: {fd} vs {g}");
                }
            }
        }
    }
}

#[test]
fn model_file_round_trips_through_disk() {
    let net = random_net(7, vec![10, 10], Some(3.0), 11);
    let path = std::env::temp_dir().join(format!("lander-model-{}.json", std::process::id()));
    net.save(&path).unwrap();
    let back = SpecNormNet::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let x = DVector::from_fn(7, |i, _| i as f64 * 0.3 - 1.0);
    assert_eq!(net.forward_normalized(&x), back.forward_normalized(&x));
    assert_eq!(net.gamma, back.gamma);
}

#[test]
fn labels_recover_the_true_disturbance() {
    let params = VehicleParams::default();
    let field = DisturbanceField::ground_effect_default(&params);
    let scenario = Scenario::landing(field);
    let log = run_scenario(&scenario, &params, &ControllerGains::default(), None).unwrap();
    let options = LabelOptions {
        lowpass_hz: None,
        ..LabelOptions::default()
    };
    let labeled = extract_labeled_states(&log, &params, &options).unwrap();
    assert!(labeled.len() > 700);
    let index: std::collections::HashMap<u64, usize> =
        log.records.iter().enumerate().map(|(i, r)| (r.t.to_bits(), i)).collect();
    let (mut worst, mut scale, mut sq, mut n) = (0.0_f64, 0.0_f64, 0.0, 0);
    // airborne only; take-off starts at 1 s
    for s in labeled.iter().filter(|s| s.t > 1.5) {
        let k = index[&s.t.to_bits()];
        let r = &log.records;
        // trapezoid average of the true force over the differencing window
        let f = (r[k - 1].f_true + r[k].f_true * 2.0 + r[k + 1].f_true) / 4.0;
        let e = (s.label - f).norm();
        worst = worst.max(e);
        scale = scale.max(f.norm());
        sq += e * e;
        n += 1;
    }
    let rms = (sq / n as f64).sqrt();
    assert!(scale > 0.5, "ground effect should be visible near the ground, got {scale} N");
    assert!(worst < 0.02 * scale, "label error {worst} N against {scale} N");
    assert!(rms < 0.002 * scale, "label RMS {rms} N against {scale} N");
}
