//! Fully connected ReLU network with spectrally normalized layers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::features::{FeatureKind, FeatureLayout, InputSpec};
use crate::learn::spectral::{spectral_norm, PowerIteration};
use crate::vehicle::{RotorCommand, Vec3, VehicleState};

/// Network capacity variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// ReLU hidden layers of the given widths followed by a linear output layer.
    Deep { hidden: Vec<usize> },
    /// `f(x) = A x + b`.
    Affine,
    /// `f(x) = b`.
    Bias,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Deep {
            hidden: vec![32; 4],
        }
    }
}

impl Architecture {
    pub fn label(&self) -> String {
        match self {
            Architecture::Deep { hidden } => format!("{}layer", hidden.len()),
            Architecture::Affine => "1layer".into(),
            Architecture::Bias => "0layer".into(),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Accepts `0layer`, `1layer`, `Nlayer` (N hidden layers of width 32) and
    /// explicit widths such as `64,64`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "0layer" | "bias" => return Ok(Architecture::Bias),
            "1layer" | "affine" => return Ok(Architecture::Affine),
            _ => {}
        }
        if let Some(n) = s.strip_suffix("layer") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("unknown architecture {s:?}")))?;
            return Ok(Architecture::Deep {
                hidden: vec![32; n],
            });
        }
        let hidden = s
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidParameter(format!("unknown architecture {s:?}")))?;
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!("unknown architecture {s:?}")));
        }
        Ok(Architecture::Deep { hidden })
    }
}

/// One affine layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Weight is fixed at its current value (the zero matrix of the bias-only model).
    pub frozen_weight: bool,
    /// Warm-start vector for power iteration.
    pub power_vector: DVector<f64>,
    /// Cached spectral norm of `weight`.
    pub sigma: f64,
}

impl Dense {
    fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
            frozen_weight: false,
            power_vector: DVector::zeros(inputs),
            sigma: 0.0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// `f(x) = offset + output_scale · (W^{L+1} φ(… φ(W¹ x̄ + b¹) …) + b^{L+1})` with
/// `x̄` the normalized input and `φ` the element-wise ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecNormNet {
    pub architecture: Architecture,
    pub layers: Vec<Dense>,
    /// Lipschitz budget over normalized inputs and outputs; `None` for an
    /// unconstrained network.
    pub gamma: Option<f64>,
    pub input: InputSpec,
    /// Force units per normalized output unit.
    pub output_scale: f64,
    pub output_offset: DVector<f64>,
    /// Hash of the training data and configuration.
    pub provenance: Option<String>,
}

/// Gradients of a scalar loss with respect to every layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &SpecNormNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.outputs(), l.inputs()))
                .collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.outputs())).collect(),
        }
    }

    /// Parameters flattened in layer order (weight column-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn layer_dims(arch: &Architecture, inputs: usize, outputs: usize) -> Vec<(usize, usize)> {
    match arch {
        Architecture::Bias | Architecture::Affine => vec![(outputs, inputs)],
        Architecture::Deep { hidden } => {
            let mut dims = Vec::with_capacity(hidden.len() + 1);
            let mut prev = inputs;
            for &h in hidden {
                dims.push((h, prev));
                prev = h;
            }
            dims.push((outputs, prev));
            dims
        }
    }
}

impl SpecNormNet {
    /// All-zero network with identity input normalization.
    pub fn zeros(
        arch: &Architecture,
        layout: FeatureLayout,
        outputs: usize,
        gamma: Option<f64>,
    ) -> Self {
        let input = InputSpec::identity(layout);
        let layers = layer_dims(arch, input.dim(), outputs)
            .into_iter()
            .map(|(o, i)| {
                let mut layer = Dense::zeros(o, i);
                layer.frozen_weight = *arch == Architecture::Bias;
                layer
            })
            .collect();
        Self {
            architecture: arch.clone(),
            layers,
            gamma,
            input,
            output_scale: 1.0,
            output_offset: DVector::zeros(outputs),
            provenance: None,
        }
    }

    /// He-initialized network (biases zero), deterministic in `seed`.
    pub fn initialize(
        arch: &Architecture,
        layout: FeatureLayout,
        outputs: usize,
        gamma: Option<f64>,
        seed: u64,
    ) -> Self {
        let mut net = Self::zeros(arch, layout, outputs, gamma);
        if *arch == Architecture::Bias {
            return net;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layers.len() - 1;
        for (index, layer) in net.layers.iter_mut().enumerate() {
            let fan_in = layer.inputs() as f64;
            let gain = if index == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            layer.weight = DMatrix::from_fn(layer.outputs(), layer.inputs(), |_, _| {
                normal.sample(&mut rng)
            });
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn trainable_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| !l.frozen_weight).count()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Network map on normalized inputs, in normalized output units.
    pub fn forward_normalized(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a + &layer.bias;
            if index != last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Prediction in physical units from raw features.
    pub fn forward(&self, raw: &[f64]) -> Result<DVector<f64>> {
        let x = DVector::from_vec(self.input.normalize(raw)?);
        Ok(self.output_offset.clone() + self.forward_normalized(&x) * self.output_scale)
    }

    /// Predicted disturbance force for a vehicle state and rotor command.
    pub fn predict_force(&self, state: &VehicleState, u: &RotorCommand) -> Result<Vec3> {
        if self.output_dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: self.output_dim(),
            });
        }
        let raw = self.input.layout.encode(state, u)?;
        let y = self.forward(&raw)?;
        Ok(Vec3::new(y[0], y[1], y[2]))
    }

    /// Batched forward pass keeping every post-activation (columns are samples).
    fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (index, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * acts.last().expect("nonempty");
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if index != last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Batch predictions in normalized output units.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_batch(x).pop().expect("nonempty")
    }

    /// Loss over a batch (columns are samples) and its gradient.
    pub fn loss_and_gradient(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        loss: Loss,
    ) -> (f64, Gradients) {
        let batch = x.ncols() as f64;
        let acts = self.forward_batch(x);
        let residual = acts.last().expect("nonempty") - y;
        let (value, mut delta) = loss.evaluate(&residual);
        delta /= batch;
        let mut grads = Gradients::zeros_like(self);
        for index in (0..self.layers.len()).rev() {
            let input = &acts[index];
            grads.weights[index] = &delta * input.transpose();
            grads.biases[index] = delta.column_sum();
            if index > 0 {
                let mut back = self.layers[index].weight.transpose() * &delta;
                back.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        for (index, layer) in self.layers.iter().enumerate() {
            if layer.frozen_weight {
                grads.weights[index].fill(0.0);
            }
        }
        (value / batch, grads)
    }

    /// Jacobian of the normalized map at `x` (exact for the active ReLU pattern).
    pub fn jacobian_normalized(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        let mut jac = DMatrix::identity(x.len(), x.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let z = &layer.weight * &a + &layer.bias;
            jac = &layer.weight * jac;
            if index != last {
                for (r, &zr) in z.iter().enumerate() {
                    if zr <= 0.0 {
                        jac.row_mut(r).fill(0.0);
                    }
                }
                a = z.map(|v| v.max(0.0));
            } else {
                a = z;
            }
        }
        jac
    }

    /// Product of layer spectral norms: the Lipschitz bound of the normalized map.
    pub fn certified_lipschitz(&self) -> f64 {
        let policy = PowerIteration::certify();
        self.layers
            .iter()
            .map(|l| spectral_norm(&l.weight, Some(&l.power_vector), &policy).sigma)
            .product()
    }

    /// Certified Lipschitz constant of the physical output with respect to the
    /// physical rotor command, N per RPM².
    pub fn command_lipschitz(&self) -> f64 {
        match self.input.min_scale(FeatureKind::Command) {
            Some(scale) => self.output_scale * self.certified_lipschitz() / scale,
            None => 0.0,
        }
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            architecture: self.architecture.clone(),
            gamma: self.gamma,
            input: self.input.clone(),
            output_scale: self.output_scale,
            output_offset: self.output_offset.iter().copied().collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    frozen_weight: l.frozen_weight,
                    weight: (0..l.outputs())
                        .map(|r| l.weight.row(r).iter().copied().collect())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
            certified_lipschitz: self.certified_lipschitz(),
            command_lipschitz: self.command_lipschitz(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {})",
                file.format_version, MODEL_FORMAT_VERSION
            )));
        }
        let expected = layer_dims(
            &file.architecture,
            file.input.dim(),
            file.output_offset.len(),
        );
        if expected.len() != file.layers.len() {
            return Err(Error::Format("layer count does not match architecture".into()));
        }
        if file.input.dim() != file.input.layout.dim() {
            return Err(Error::Format("input spec does not match its layout".into()));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (l, (o, i)) in file.layers.into_iter().zip(expected) {
            if l.outputs != o
                || l.inputs != i
                || l.weight.len() != o
                || l.weight.iter().any(|r| r.len() != i)
                || l.bias.len() != o
            {
                return Err(Error::Format(format!(
                    "layer shape mismatch: expected {o}x{i}"
                )));
            }
            let weight = DMatrix::from_fn(o, i, |r, c| l.weight[r][c]);
            layers.push(Dense {
                weight,
                bias: DVector::from_vec(l.bias),
                frozen_weight: l.frozen_weight,
                power_vector: DVector::zeros(i),
                sigma: 0.0,
            });
        }
        let net = Self {
            architecture: file.architecture,
            layers,
            gamma: file.gamma,
            input: file.input,
            output_scale: file.output_scale,
            output_offset: DVector::from_vec(file.output_offset),
            provenance: file.provenance,
        };
        if !net.is_finite() {
            return Err(Error::Format("model contains non-finite parameters".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_model_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_model_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized layer; `weight` is row-major (`outputs` rows of `inputs` entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub inputs: usize,
    pub outputs: usize,
    pub frozen_weight: bool,
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// On-disk model format. Fields appear in this order in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub architecture: Architecture,
    pub gamma: Option<f64>,
    pub input: InputSpec,
    pub output_scale: f64,
    pub output_offset: Vec<f64>,
    pub layers: Vec<LayerFile>,
    /// Informational; recomputed from the weights on load.
    pub certified_lipschitz: f64,
    pub command_lipschitz: f64,
    pub provenance: Option<String>,
}

/// Training objective on the per-sample residual `r = f̂ − y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `‖r‖₂`; residuals at round-off level get a zero subgradient.
    #[default]
    L2,
    /// `‖r‖₂²`.
    Squared,
}

impl Loss {
    /// Summed loss over columns of `residual`, and its gradient.
    pub fn evaluate(self, residual: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        match self {
            Loss::Squared => (residual.norm_squared(), residual * 2.0),
            Loss::L2 => {
                let mut total = 0.0;
                let mut grad = residual.clone();
                for mut col in grad.column_iter_mut() {
                    let n = col.norm();
                    total += n;
                    if n > 1e-12 {
                        col /= n;
                    } else {
                        col.fill(0.0);
                    }
                }
                (total, grad)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::features::AttitudeEncoding;

    #[test]
    fn layer_shapes() {
        let layout = FeatureLayout::vehicle(AttitudeEncoding::Quaternion, false);
        let net = SpecNormNet::initialize(&Architecture::default(), layout, 3, Some(4.0), 0);
        let shapes: Vec<_> = net.layers.iter().map(|l| (l.outputs(), l.inputs())).collect();
        assert_eq!(shapes, vec![(32, 12), (32, 32), (32, 32), (32, 32), (3, 32)]);
        assert_eq!(net.trainable_layer_count(), 5);
        let bias = SpecNormNet::initialize(&Architecture::Bias, layout, 3, None, 0);
        assert_eq!(bias.trainable_layer_count(), 0);
        assert_eq!(bias.layers[0].weight, DMatrix::zeros(3, 12));
    }

    #[test]
    fn zero_network_outputs_bias() {
        let mut net = SpecNormNet::zeros(&Architecture::Affine, FeatureLayout::raw(4), 3, None);
        net.layers[0].bias = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = net.forward(&[3.0, 1.0, 4.0, 1.0]).unwrap();
        assert_eq!(y.as_slice(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut net = SpecNormNet::zeros(&Architecture::Affine, FeatureLayout::raw(3), 3, None);
        net.layers[0].weight = DMatrix::identity(3, 3);
        let y = net.forward(&[0.3, -1.2, 7.0]).unwrap();
        assert_eq!(y.as_slice(), &[0.3, -1.2, 7.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = SpecNormNet::zeros(&Architecture::Affine, FeatureLayout::raw(3), 3, None);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = SpecNormNet::initialize(
            &Architecture::Deep { hidden: vec![7, 5] },
            FeatureLayout::raw(4),
            3,
            None,
            5,
        );
        let x = DVector::from_vec(vec![0.3, -0.2, 0.9, 0.1]);
        let jac = net.jacobian_normalized(&x);
        let h = 1e-6;
        for c in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (net.forward_normalized(&xp) - net.forward_normalized(&xm)) / (2.0 * h);
            for r in 0..3 {
                assert!((fd[r] - jac[(r, c)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn model_file_round_trip() {
        let mut net = SpecNormNet::initialize(
            &Architecture::default(),
            FeatureLayout::default(),
            3,
            Some(10.0),
            9,
        );
        net.output_offset = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        net.provenance = Some("abc".into());
        let back = SpecNormNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back.layers.len(), net.layers.len());
        for (a, b) in back.layers.iter().zip(&net.layers) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
        }
        assert_eq!(back.input, net.input);
        assert_eq!(back.output_offset, net.output_offset);
    }

    #[test]
    fn model_file_rejects_bad_version_and_shape() {
        let net = SpecNormNet::zeros(&Architecture::Affine, FeatureLayout::raw(2), 3, None);
        let mut file = net.to_model_file();
        file.format_version = 99;
        assert!(matches!(SpecNormNet::from_model_file(file), Err(Error::Format(_))));
        let mut file = net.to_model_file();
        file.layers[0].bias.pop();
        assert!(matches!(SpecNormNet::from_model_file(file), Err(Error::Format(_))));
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!("0layer".parse::<Architecture>().unwrap(), Architecture::Bias);
        assert_eq!("1layer".parse::<Architecture>().unwrap(), Architecture::Affine);
        assert_eq!("4layer".parse::<Architecture>().unwrap(), Architecture::default());
        assert_eq!(
            "16,8".parse::<Architecture>().unwrap(),
            Architecture::Deep { hidden: vec![16, 8] }
        );
        assert!("deep".parse::<Architecture>().is_err());
        assert!("0,4".parse::<Architecture>().is_err());
    }

    #[test]
    fn l2_loss_gradient_is_zero_at_zero_residual() {
        let (v, g) = Loss::L2.evaluate(&DMatrix::zeros(3, 2));
        assert_eq!(v, 0.0);
        assert_eq!(g, DMatrix::zeros(3, 2));
    }
}
