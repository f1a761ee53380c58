//! Disturbance-force learning: features, spectrally normalized network,
//! training, label extraction, and Lipschitz auditing.

pub mod audit;
pub mod features;
pub mod labels;
pub mod net;
pub mod spectral;
pub mod theory;
pub mod train;

pub use audit::{audit_lipschitz, LipschitzAudit, SampleDomain};
pub use features::{AttitudeEncoding, FeatureKind, FeatureLayout, InputSpec, NormalizationConfig};
pub use labels::{extract_labels, LabelOptions};
pub use net::{Architecture, Loss, SpecNormNet};
pub use spectral::{normalize_layers, spectral_norm, NormalizationMode, PowerIteration};
pub use theory::{fit_ground_effect_model, GroundEffectFit};
pub use train::{train, Split, TrainConfig, TrainOutcome, TrainingSet};
