use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lander_cli::pipeline::{
    collect, evaluate_log, fly, load_model, save_model, train_model, write_json, write_resolved_config, Dataset,
    ModelChoice,
};
use lander_cli::sweep::{run_sweep, write_table, SweepAxis, SweepRequest};
use lander_cli::{exit_code, CliArch};
use lander_core::config::{ProgramKind, RunConfig, ScenarioKind};
use lander_core::error::{Error, Result};
use lander_core::sim::log::with_suffix;
use lander_core::sim::{heatmap_slice, HeatmapSpec};
use lander_core::FlightLog;

/// Learning-based quadrotor landing control: data collection, spectrally
/// normalized disturbance learning, and closed-loop evaluation.
#[derive(Parser, Debug)]
#[command(name = "lander", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fly the scripted data-collection program and write its log.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Collection program.
        #[arg(long, value_enum, default_value = "standard")]
        program: ProgramArg,
        /// Truncate the flight, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Emulate state-estimate noise.
        #[arg(long)]
        noise: bool,
        /// Base name of the log files.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train a disturbance model on one or more logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Flight logs (CSV with JSON sidecar).
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        arch: Option<CliArch>,
        /// Lipschitz budget in normalized units.
        #[arg(long)]
        gamma: Option<f64>,
        /// Train without spectral normalization.
        #[arg(long)]
        no_sn: bool,
        #[arg(long)]
        epochs: Option<usize>,
        /// Use the x-y position as two extra inputs.
        #[arg(long)]
        xy: bool,
        /// Base name of the model files.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Fly a scenario with the baseline, the oracle, or a trained model.
    Fly {
        #[command(flatten)]
        common: Common,
        /// Model file; omit for the baseline controller.
        #[arg(long, conflicts_with = "oracle")]
        model: Option<PathBuf>,
        /// Use the exact disturbance force as the model.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        scenario: Option<String>,
        /// Flight duration, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Integral variant of the composite variable.
        #[arg(long)]
        integral: bool,
        #[arg(long)]
        noise: bool,
        #[arg(long)]
        name: Option<String>,
    },
    /// Recompute metrics from a stored log.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
        /// Model whose training report supplies ε_m.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training-error bound, N (overrides the model report).
        #[arg(long)]
        epsilon_train: Option<f64>,
        /// Metrics JSON path; defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare settings along one axis and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Training logs (arch and gamma sweeps).
        #[arg(long = "log")]
        logs: Vec<PathBuf>,
        /// γ values or gain scale factors.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Fixed model for the gains sweep.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Parallel tasks.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a model over a height / vertical-speed grid.
    Heatmap {
        #[arg(long)]
        model: PathBuf,
        /// Height range, m.
        #[arg(long, num_args = 2, allow_negative_numbers = true, default_values_t = [0.0, 1.5])]
        z: Vec<f64>,
        /// Vertical speed range, m/s.
        #[arg(long, num_args = 2, allow_negative_numbers = true, default_values_t = [-2.0, 1.0])]
        vz: Vec<f64>,
        /// Rotor speed of every motor, RPM.
        #[arg(long, default_value_t = lander_core::vehicle::NOMINAL_HOVER_RPM)]
        rpm: f64,
        #[arg(long, default_value_t = 61)]
        points: usize,
        /// Output CSV.
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum ProgramArg {
    Standard,
    TableSurvey,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed reader (`| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

/// Keeps the log of a diverged flight next to where the full log would go.
fn save_partial(err: Error, base: &Path) -> Error {
    if let Error::Divergence { partial, .. } = &err {
        if let Err(io) = partial.save(base, None) {
            eprintln!("could not save the partial log: {io}");
        }
    }
    err
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<FlightLog>> {
    paths.iter().map(|p| FlightLog::load(p)).collect()
}

fn model_choice(path: Option<&Path>) -> Result<(ModelChoice, Option<f64>)> {
    match path {
        None => Ok((ModelChoice::Baseline, None)),
        Some(p) => {
            let (net, report) = load_model(p)?;
            Ok((ModelChoice::Net(Box::new(net)), report.map(|r| r.epsilon_m)))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect {
            common,
            program,
            duration,
            noise,
            name,
        } => {
            let mut cfg = common.resolve()?;
            cfg.collect.noise |= noise;
            let kind = match program {
                ProgramArg::Standard => ProgramKind::Standard,
                ProgramArg::TableSurvey => ProgramKind::TableSurvey,
            };
            write_resolved_config(&cfg, &cfg.output_dir)?;
            let name = name.unwrap_or_else(|| match kind {
                ProgramKind::Standard => "collect".into(),
                ProgramKind::TableSurvey => "table_survey".into(),
            });
            let base = cfg.output_dir.join(name);
            let log = collect(&cfg, kind, duration).map_err(|e| save_partial(e, &base))?;
            log.save(&base, None)?;
            print_json(&serde_json::json!({
                "log": with_suffix(&base, "csv"),
                "records": log.records.len(),
                "duration": log.duration(),
                "sha256": log.digest()?,
            }))
        }
        Command::Train {
            common,
            logs,
            arch,
            gamma,
            no_sn,
            epochs,
            xy,
            name,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(a) = arch {
                cfg.training.architecture = a.architecture();
            }
            if gamma.is_some() {
                cfg.training.gamma = gamma;
            }
            if no_sn {
                cfg.training.spectral_normalization = false;
            }
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            if xy {
                cfg.inputs = lander_core::learn::FeatureLayout::vehicle(Default::default(), true);
            }
            cfg.training.seed ^= cfg.seed;
            cfg.validate()?;
            write_resolved_config(&cfg, &cfg.output_dir)?;
            let data = Dataset::from_logs(&cfg, &load_logs(&logs)?)?;
            let (outcome, report) = train_model(&cfg, &data)?;
            let path = save_model(&cfg.output_dir, &name, &outcome, &report)?;
            eprintln!(
                "certified Lipschitz {:.6} (gamma {:?}), empirical {:.6}, contraction ratio {:?}",
                report.audit.certified_bound, report.gamma, report.audit.empirical_estimate, report.contraction_ratio
            );
            print_json(&serde_json::json!({ "model": path, "report": report }))
        }
        Command::Fly {
            common,
            model,
            oracle,
            scenario,
            duration,
            integral,
            noise,
            name,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = scenario {
                cfg.scenario.kind = s.parse::<ScenarioKind>()?;
            }
            if duration.is_some() {
                cfg.scenario.duration = duration;
            }
            cfg.gains.integral |= integral;
            cfg.scenario.noise.enabled |= noise;
            let (choice, epsilon_train) = if oracle {
                (ModelChoice::Oracle, Some(0.0))
            } else {
                model_choice(model.as_deref())?
            };
            cfg.validate()?;
            write_resolved_config(&cfg, &cfg.output_dir)?;
            let name = name.unwrap_or_else(|| format!("{}_{}", cfg.scenario.kind.name(), choice.label()));
            let base = cfg.output_dir.join(&name);
            let log = fly(&cfg, &choice).map_err(|e| save_partial(e, &base))?;
            let metrics = evaluate_log(&cfg, &log, epsilon_train)?;
            log.save(&base, Some(&serde_json::to_value(&metrics)?))?;
            write_json(&with_suffix(&base, "metrics.json"), &metrics)?;
            print_json(&metrics)
        }
        Command::Evaluate {
            common,
            log,
            model,
            epsilon_train,
            output,
        } => {
            let cfg = common.resolve()?;
            let flight = FlightLog::load(&log)?;
            let eps = match (epsilon_train, model) {
                (Some(e), _) => Some(e),
                (None, Some(m)) => model_choice(Some(&m))?.1,
                (None, None) => None,
            };
            let metrics = evaluate_log(&cfg, &flight, eps)?;
            match output {
                Some(p) => write_json(&p, &metrics),
                None => print_json(&metrics),
            }
        }
        Command::Sweep {
            common,
            axis,
            logs,
            values,
            model,
            epochs,
            workers,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            cfg.training.seed ^= cfg.seed;
            let out = cfg.output_dir.join(format!("sweep_{axis:?}").to_lowercase());
            write_resolved_config(&cfg, &out)?;
            let data = if logs.is_empty() {
                None
            } else {
                Some(Dataset::from_logs(&cfg, &load_logs(&logs)?)?)
            };
            let fixed = match model {
                Some(p) => Some(model_choice(Some(&p))?),
                None => None,
            };
            let rows = run_sweep(
                &cfg,
                SweepRequest {
                    axis,
                    values,
                    data: data.as_ref(),
                    model: fixed,
                    workers,
                    out: out.clone(),
                },
            )?;
            let table = out.join("sweep.csv");
            write_table(&rows, &table)?;
            print_json(&serde_json::json!({ "table": table, "rows": rows }))
        }
        Command::Heatmap {
            model,
            z,
            vz,
            rpm,
            points,
            output,
        } => {
            let (net, _) = load_model(&model)?;
            let spec = HeatmapSpec::height_vertical_speed(&net, (z[0], z[1]), (vz[0], vz[1]), rpm, points)?;
            let grid = heatmap_slice(&net, &spec)?;
            if let Some(dir) = output.parent() {
                std::fs::create_dir_all(dir)?;
            }
            grid.write_csv(std::fs::File::create(&output)?)?;
            let (gx, gy) = grid.max_gradient();
            print_json(&serde_json::json!({
                "grid": output,
                "max_gradient": [gx, gy],
                "gradient_bound": [grid.gradient_bound.0, grid.gradient_bound.1],
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
