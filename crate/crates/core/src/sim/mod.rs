//! Closed-loop simulation harness, scenario library, flight logs, and metrics.

pub mod heatmap;
pub mod log;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use heatmap::{heatmap_slice, HeatmapAxis, HeatmapGrid, HeatmapSpec};
pub use log::{FlightLog, FlightRecord, LogMeta};
pub use metrics::{
    epsilon_estimate, evaluate, steady_state_bound, BoundInputs, EvaluationInputs, Metrics,
};
pub use run::{collect_training_flight, run_scenario};
pub use scenario::{CollectionProgram, LoopRates, NoiseSettings, Phase, Scenario};
