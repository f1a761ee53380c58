//! Mini-batch training under a spectral-norm constraint.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learn::features::{FeatureLayout, InputSpec, NormalizationConfig};
use crate::learn::net::{Architecture, Gradients, Loss, SpecNormNet};
use crate::learn::spectral::{normalize_layers, NormalizationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// Split of the time block containing `t`: a pure function of the block index
/// and seed, so any sample list cut from the same log agrees on it.
pub fn block_split(t: f64, block: f64, fraction: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((t / block).floor() as i64 as u64);
    if rand::Rng::gen::<f64>(&mut rng) < fraction {
        Split::Validation
    } else {
        Split::Train
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Log time, s; used for block-wise train/validation splitting.
    pub t: f64,
    /// Raw features in layout order.
    pub features: Vec<f64>,
    /// Observed disturbance force, N.
    pub target: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub layout: FeatureLayout,
    pub samples: Vec<Sample>,
}

impl TrainingSet {
    pub fn new(layout: FeatureLayout) -> Self {
        Self {
            layout,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, features: Vec<f64>, target: Vec<f64>) -> Result<()> {
        if features.len() != self.layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim(),
                got: features.len(),
            });
        }
        if features.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite training sample at t = {t}"
            )));
        }
        self.samples.push(Sample {
            t,
            features,
            target,
            split: Split::Train,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends another set, shifting its times so blocks never straddle sets.
    pub fn extend(&mut self, other: TrainingSet) -> Result<()> {
        if other.layout != self.layout {
            return Err(Error::InvalidParameter(
                "cannot merge training sets with different feature layouts".into(),
            ));
        }
        let offset = self
            .samples
            .iter()
            .map(|s| s.t)
            .fold(f64::NEG_INFINITY, f64::max);
        let offset = if offset.is_finite() { offset + 1.0 } else { 0.0 };
        self.samples.extend(other.samples.into_iter().map(|mut s| {
            s.t += offset;
            s
        }));
        Ok(())
    }

    /// Assigns contiguous time blocks of `block` seconds to validation with
    /// probability `fraction`. Blocks keep highly correlated neighbouring samples
    /// on the same side of the split.
    pub fn split_blocks(&mut self, block: f64, fraction: f64, seed: u64) -> Result<()> {
        if !(block > 0.0) || !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidParameter(
                "split needs block > 0 and 0 <= fraction < 1".into(),
            ));
        }
        for s in &mut self.samples {
            s.split = block_split(s.t, block, fraction, seed);
        }
        Ok(())
    }

    pub fn rows(&self, split: Split) -> impl Iterator<Item = &Sample> + Clone {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows(split).count()
    }

    /// Largest target norm, N.
    pub fn max_target_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.target.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// SHA-256 over layout, times, features, targets, and split tags.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.layout).unwrap_or_default());
        for s in &self.samples {
            h.update(s.t.to_le_bytes());
            for v in s.features.iter().chain(&s.target) {
                h.update(v.to_le_bytes());
            }
            h.update([s.split as u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// Heavy-ball SGD.
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    /// Lipschitz budget over normalized units; `None` derives it from the
    /// contraction certificate.
    pub gamma: Option<f64>,
    /// Disable to train an unconstrained twin.
    pub spectral_normalization: bool,
    pub normalization_mode: NormalizationMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub seed: u64,
    pub features: NormalizationConfig,
    /// Target margin: the derived γ puts σ(B0⁻¹)·L_a_u at this value.
    pub contraction_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            gamma: None,
            spectral_normalization: true,
            normalization_mode: NormalizationMode::Clip,
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            momentum: 0.9,
            optimizer: Optimizer::Sgd,
            loss: Loss::L2,
            seed: 0,
            features: NormalizationConfig::default(),
            contraction_margin: 0.5,
        }
    }
}

impl TrainConfig {
    /// γ such that `σ(B0⁻¹) · output_scale · γ / u_scale = contraction_margin`.
    pub fn derived_gamma(&self, inverse_allocation_norm: f64) -> f64 {
        self.contraction_margin * self.features.u_scale
            / (self.features.output_scale * inverse_allocation_norm)
    }

    /// Resolved γ (`None` for an unconstrained network).
    pub fn resolved_gamma(&self, inverse_allocation_norm: f64) -> Option<f64> {
        if !self.spectral_normalization {
            return None;
        }
        Some(
            self.gamma
                .unwrap_or_else(|| self.derived_gamma(inverse_allocation_norm)),
        )
    }

    /// Contraction ratio `σ(B0⁻¹)·L_a_u` certified by the configured γ.
    pub fn contraction_ratio(&self, inverse_allocation_norm: f64) -> Option<f64> {
        self.resolved_gamma(inverse_allocation_norm).map(|g| {
            inverse_allocation_norm * self.features.output_scale * g / self.features.u_scale
        })
    }

    pub fn validate(&self, inverse_allocation_norm: Option<f64>) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return bad("gamma must be positive");
            }
        }
        if !(self.features.u_scale > 0.0) || !(self.features.output_scale > 0.0) {
            return bad("feature scales must be positive");
        }
        if !(self.contraction_margin > 0.0 && self.contraction_margin < 1.0) {
            return bad("contraction_margin must be in (0, 1)");
        }
        if let Some(norm) = inverse_allocation_norm {
            if let Some(ratio) = self.contraction_ratio(norm) {
                if ratio >= 1.0 {
                    return Err(Error::ContractionViolation { ratio });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Loss on the validation split, NaN when the split is empty.
    pub validation_loss: f64,
    /// Root mean squared error norm on the validation split, N.
    pub validation_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SpecNormNet,
    pub curve: Vec<EpochRecord>,
}

fn columns<'a>(
    rows: impl Iterator<Item = &'a Sample>,
    spec: &InputSpec,
    offset: &DVector<f64>,
    output_scale: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rows: Vec<&Sample> = rows.collect();
    let d = spec.dim();
    let o = offset.len();
    let mut x = DMatrix::zeros(d, rows.len());
    let mut y = DMatrix::zeros(o, rows.len());
    for (c, s) in rows.iter().enumerate() {
        let xn = spec.normalize(&s.features)?;
        x.column_mut(c).copy_from_slice(&xn);
        if s.target.len() != o {
            return Err(Error::DimensionMismatch {
                expected: o,
                got: s.target.len(),
            });
        }
        for r in 0..o {
            y[(r, c)] = (s.target[r] - offset[r]) / output_scale;
        }
    }
    Ok((x, y))
}

/// Root mean squared error norm of `net` over `rows`, N.
pub fn rmse<'a>(net: &SpecNormNet, rows: impl Iterator<Item = &'a Sample>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in rows {
        let y = net.forward(&s.features)?;
        total += y
            .iter()
            .zip(&s.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        n += 1;
    }
    if n == 0 {
        return Ok(f64::NAN);
    }
    Ok((total / n as f64).sqrt())
}

struct OptimizerState {
    first: Gradients,
    second: Gradients,
    steps: i32,
}

/// Trains a network on the train split of `data`.
///
/// `inverse_allocation_norm` is σ(B0⁻¹); when given, a γ that would break the
/// control-allocation contraction certificate is rejected before training.
/// Spectral normalization is applied at initialization and after every
/// optimizer step. Identical inputs give a bitwise-identical loss curve.
pub fn train(
    data: &TrainingSet,
    config: &TrainConfig,
    inverse_allocation_norm: Option<f64>,
) -> Result<TrainOutcome> {
    config.validate(inverse_allocation_norm)?;
    let train_count = data.count(Split::Train);
    if train_count == 0 {
        return Err(Error::EmptyData);
    }
    let spec = config.features.fit(
        data.layout,
        data.rows(Split::Train).map(|s| s.features.as_slice()),
    )?;
    let outputs = data.samples[0].target.len();
    let mut offset = DVector::zeros(outputs);
    for s in data.rows(Split::Train) {
        for r in 0..outputs {
            offset[r] += s.target[r];
        }
    }
    offset /= train_count as f64;

    let gamma = match inverse_allocation_norm {
        Some(norm) => config.resolved_gamma(norm),
        None if config.spectral_normalization => Some(config.gamma.ok_or_else(|| {
            Error::InvalidParameter(
                "gamma must be given when no allocation matrix is available".into(),
            )
        })?),
        None => None,
    };
    let mut net = SpecNormNet::initialize(
        &config.architecture,
        data.layout,
        outputs,
        gamma,
        config.seed,
    );
    net.input = spec;
    net.output_offset = offset;
    net.output_scale = config.features.output_scale;
    normalize_layers(&mut net, config.normalization_mode)?;

    let (x, y) = columns(
        data.rows(Split::Train),
        &net.input,
        &net.output_offset,
        net.output_scale,
    )?;
    let (xv, yv) = columns(
        data.rows(Split::Validation),
        &net.input,
        &net.output_offset,
        net.output_scale,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_count).collect();
    let mut state = OptimizerState {
        first: Gradients::zeros_like(&net),
        second: Gradients::zeros_like(&net),
        steps: 0,
    };
    let mut lr = config.learning_rate;
    let mut curve = Vec::with_capacity(config.epochs);
    let batch = config.batch_size.min(train_count);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let xb = x.select_columns(chunk.iter());
            let yb = y.select_columns(chunk.iter());
            let (loss, grads) = net.loss_and_gradient(&xb, &yb, config.loss);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    max_weight: net.max_abs_weight(),
                });
            }
            apply_step(&mut net, &grads, &mut state, config, lr);
            if !net.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    max_weight: net.max_abs_weight(),
                });
            }
            normalize_layers(&mut net, config.normalization_mode)?;
            epoch_loss += loss;
            batches += 1;
        }
        let (validation_loss, validation_rmse) = if xv.ncols() > 0 {
            let pred = net.predict_batch(&xv);
            let residual = pred - &yv;
            let (loss, _) = config.loss.evaluate(&residual);
            let rmse = (residual.norm_squared() / xv.ncols() as f64).sqrt() * net.output_scale;
            (loss / xv.ncols() as f64, rmse)
        } else {
            (f64::NAN, f64::NAN)
        };
        curve.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: epoch_loss / batches as f64,
            validation_loss,
            validation_rmse,
        });
        lr *= config.lr_decay;
    }
    net.provenance = Some(provenance(data, config, gamma));
    Ok(TrainOutcome { net, curve })
}

fn provenance(data: &TrainingSet, config: &TrainConfig, gamma: Option<f64>) -> String {
    let mut h = Sha256::new();
    h.update(data.digest().as_bytes());
    h.update(serde_json::to_vec(config).unwrap_or_default());
    h.update(serde_json::to_vec(&gamma).unwrap_or_default());
    hex::encode(h.finalize())
}

fn apply_step(
    net: &mut SpecNormNet,
    grads: &Gradients,
    state: &mut OptimizerState,
    config: &TrainConfig,
    lr: f64,
) {
    state.steps += 1;
    match config.optimizer {
        Optimizer::Sgd => {
            let mu = config.momentum;
            for (i, layer) in net.layers.iter_mut().enumerate() {
                let vw = &mut state.first.weights[i];
                *vw *= mu;
                *vw += &grads.weights[i];
                let vb = &mut state.first.biases[i];
                *vb *= mu;
                *vb += &grads.biases[i];
                if !layer.frozen_weight {
                    layer.weight -= &*vw * lr;
                }
                layer.bias -= &*vb * lr;
            }
        }
        Optimizer::Adam => {
            let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
            let c1 = 1.0 - b1.powi(state.steps);
            let c2 = 1.0 - b2.powi(state.steps);
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for k in 0..p.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            };
            for (i, layer) in net.layers.iter_mut().enumerate() {
                if !layer.frozen_weight {
                    update(
                        layer.weight.as_mut_slice(),
                        grads.weights[i].as_slice(),
                        state.first.weights[i].as_mut_slice(),
                        state.second.weights[i].as_mut_slice(),
                    );
                }
                update(
                    layer.bias.as_mut_slice(),
                    grads.biases[i].as_slice(),
                    state.first.biases[i].as_mut_slice(),
                    state.second.biases[i].as_mut_slice(),
                );
            }
        }
    }
}

/// Writes the loss curve as CSV.
pub fn write_curve_csv<W: std::io::Write>(curve: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in curve {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_set(n: usize) -> TrainingSet {
        let mut set = TrainingSet::new(FeatureLayout::raw(3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            let y = vec![
                0.5 * x[0] - 0.2 * x[1] + 0.1,
                0.3 * x[2],
                -0.4 * x[0] + 0.25 * x[1] + 0.1 * x[2] - 0.3,
            ];
            set.push(i as f64 * 0.01, x, y).unwrap();
        }
        set
    }

    #[test]
    fn affine_fits_realizable_linear_target() {
        let mut data = linear_set(2000);
        data.split_blocks(1.0, 0.2, 3).unwrap();
        let cfg = TrainConfig {
            architecture: Architecture::Affine,
            gamma: Some(10.0),
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.02,
            lr_decay: 0.93,
            ..Default::default()
        };
        let out = train(&data, &cfg, None).unwrap();
        let rmse = rmse(&out.net, data.rows(Split::Validation)).unwrap();
        assert!(rmse < 1e-3, "validation rmse {rmse}");
    }

    #[test]
    fn bias_only_learns_mean_of_constant_data() {
        let mut data = TrainingSet::new(FeatureLayout::raw(2));
        for i in 0..100 {
            data.push(i as f64, vec![i as f64, 1.0], vec![0.3, -1.2, 2.5]).unwrap();
        }
        let cfg = TrainConfig {
            architecture: Architecture::Bias,
            gamma: Some(1.0),
            epochs: 5,
            ..Default::default()
        };
        let out = train(&data, &cfg, None).unwrap();
        let y = out.net.forward(&[3.0, 1.0]).unwrap();
        for (a, b) in y.iter().zip([0.3, -1.2, 2.5]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_data_is_rejected() {
        let data = TrainingSet::new(FeatureLayout::raw(2));
        let cfg = TrainConfig {
            gamma: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(train(&data, &cfg, None), Err(Error::EmptyData)));
    }

    #[test]
    fn large_gamma_violates_contraction() {
        let cfg = TrainConfig {
            gamma: Some(1e6),
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(Some(3.0e7)),
            Err(Error::ContractionViolation { .. })
        ));
        let derived = TrainConfig::default();
        let ratio = derived.contraction_ratio(3.0e7).unwrap();
        assert!((ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diverging_learning_rate_reports_non_finite_loss() {
        let data = linear_set(200);
        let cfg = TrainConfig {
            architecture: Architecture::Deep { hidden: vec![8] },
            spectral_normalization: false,
            learning_rate: 1e200,
            lr_decay: 1.0,
            loss: Loss::Squared,
            epochs: 50,
            ..Default::default()
        };
        assert!(matches!(
            train(&data, &cfg, None),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut data = linear_set(500);
        data.split_blocks(0.5, 0.3, 2).unwrap();
        let cfg = TrainConfig {
            architecture: Architecture::Deep { hidden: vec![8, 8] },
            gamma: Some(4.0),
            epochs: 5,
            batch_size: 64,
            ..Default::default()
        };
        let a = train(&data, &cfg, None).unwrap();
        let b = train(&data, &cfg, None).unwrap();
        let bits = |c: &[EpochRecord]| {
            c.iter()
                .map(|r| (r.train_loss.to_bits(), r.validation_loss.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a.curve), bits(&b.curve));
        assert_eq!(a.net.provenance, b.net.provenance);
    }

    #[test]
    fn block_split_keeps_blocks_together() {
        let mut data = linear_set(1000);
        data.split_blocks(1.0, 0.5, 7).unwrap();
        for pair in data.samples.windows(2) {
            if (pair[0].t / 1.0).floor() == (pair[1].t / 1.0).floor() {
                assert_eq!(pair[0].split, pair[1].split);
            }
        }
        assert!(data.count(Split::Validation) > 0);
        assert!(data.count(Split::Train) > 0);
    }
}
