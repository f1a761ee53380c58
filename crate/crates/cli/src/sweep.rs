//! Parameter sweeps: independent deterministic tasks run on a bounded pool.

use std::path::{Path, PathBuf};

use lander_core::config::RunConfig;
use lander_core::error::{Error, Result};
use lander_core::learn::Architecture;
use lander_core::sim::log::with_suffix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{evaluate_log, fly, save_model, train_model, write_json, Dataset, ModelChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Network capacity: 4-layer, 1-layer, 0-layer, and the baseline.
    Arch,
    /// Lipschitz budget γ.
    Gamma,
    /// Uniform scaling of Λ and K_v.
    Gains,
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub value: f64,
    /// `ok`, `refused` (validation or certificate failure), or `diverged`.
    pub status: String,
    pub detail: String,
    pub terminal_z_error: f64,
    pub rms_z_error: f64,
    pub takeoff_rms_z_error: f64,
    pub max_p_err: f64,
    pub epsilon_m: f64,
    pub contraction_ratio: f64,
    pub envelope_violations: f64,
    pub log: String,
}

impl SweepRow {
    fn failed(label: String, value: f64, err: &Error) -> Self {
        let status = match err {
            Error::Divergence { .. } => "diverged",
            e if e.is_validation() => "refused",
            _ => "error",
        };
        Self {
            label,
            value,
            status: status.into(),
            detail: err.to_string(),
            terminal_z_error: f64::NAN,
            rms_z_error: f64::NAN,
            takeoff_rms_z_error: f64::NAN,
            max_p_err: f64::NAN,
            epsilon_m: f64::NAN,
            contraction_ratio: f64::NAN,
            envelope_violations: f64::NAN,
            log: String::new(),
        }
    }
}

/// A fly-and-evaluate task.
struct Task {
    label: String,
    value: f64,
    cfg: RunConfig,
    model: Result<(ModelChoice, Option<f64>)>,
}

fn fly_task(task: Task, dir: &Path) -> SweepRow {
    let (model, epsilon_train) = match task.model {
        Ok(m) => m,
        Err(e) => return SweepRow::failed(task.label, task.value, &e),
    };
    let run = || -> Result<SweepRow> {
        let log = fly(&task.cfg, &model)?;
        let base = dir.join(&task.label);
        log.save(&base, None)?;
        let metrics = evaluate_log(&task.cfg, &log, epsilon_train)?;
        write_json(&with_suffix(&base, "metrics.json"), &metrics)?;
        Ok(SweepRow {
            label: task.label.clone(),
            value: task.value,
            status: "ok".into(),
            detail: String::new(),
            terminal_z_error: metrics.terminal_z_error,
            rms_z_error: metrics.rms_z_error,
            takeoff_rms_z_error: metrics.phase("takeoff").map_or(f64::NAN, |p| p.rms_z_error),
            max_p_err: metrics.max_p_err,
            epsilon_m: metrics.epsilon_m,
            contraction_ratio: metrics.fixed_point.certified_ratio.unwrap_or(f64::NAN),
            envelope_violations: metrics.envelope.map_or(f64::NAN, |e| e.violations as f64),
            log: with_suffix(&base, "csv").display().to_string(),
        })
    };
    run().unwrap_or_else(|e| SweepRow::failed(task.label, task.value, &e))
}

fn trained(cfg: &RunConfig, data: &Dataset, dir: &Path, name: &str) -> Result<(ModelChoice, Option<f64>)> {
    let (outcome, report) = train_model(cfg, data)?;
    // `<label>.json` is taken by the flight log's sidecar
    save_model(dir, &format!("{name}.model"), &outcome, &report)?;
    Ok((ModelChoice::Net(Box::new(outcome.net)), Some(report.epsilon_m)))
}

pub struct SweepRequest<'a> {
    pub axis: SweepAxis,
    /// γ values or gain scale factors; ignored by the capacity sweep.
    pub values: Vec<f64>,
    /// Training data for sweeps that train.
    pub data: Option<&'a Dataset>,
    /// Fixed model for the gains sweep.
    pub model: Option<(ModelChoice, Option<f64>)>,
    pub workers: usize,
    pub out: PathBuf,
}

/// Runs a sweep and returns one row per setting, in input order.
pub fn run_sweep(cfg: &RunConfig, req: SweepRequest<'_>) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(&req.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let need_data = || req.data.ok_or_else(|| Error::Config("this sweep needs training logs".into()));
    let dir = req.out.as_path();

    let tasks: Vec<Task> = match req.axis {
        SweepAxis::Arch => {
            let data = need_data()?;
            let archs = [
                Architecture::default(),
                Architecture::Affine,
                Architecture::Bias,
            ];
            let mut tasks: Vec<Task> = pool.install(|| {
                archs
                    .par_iter()
                    .enumerate()
                    .map(|(i, arch)| {
                        let mut c = cfg.clone();
                        c.training.architecture = arch.clone();
                        let label = arch.label();
                        Task {
                            model: trained(&c, data, dir, &label),
                            label,
                            value: i as f64,
                            cfg: c,
                        }
                    })
                    .collect()
            });
            tasks.push(Task {
                label: "baseline".into(),
                value: archs.len() as f64,
                cfg: cfg.clone(),
                model: Ok((ModelChoice::Baseline, None)),
            });
            tasks
        }
        SweepAxis::Gamma => {
            let data = need_data()?;
            pool.install(|| {
                req.values
                    .par_iter()
                    .map(|&g| {
                        let mut c = cfg.clone();
                        c.training.gamma = Some(g);
                        let label = format!("gamma_{g}");
                        Task {
                            model: trained(&c, data, dir, &label),
                            label,
                            value: g,
                            cfg: c,
                        }
                    })
                    .collect()
            })
        }
        SweepAxis::Gains => {
            let model = req.model.clone().unwrap_or((ModelChoice::Baseline, None));
            req.values
                .iter()
                .map(|&k| {
                    let mut c = cfg.clone();
                    c.gains.lambda = c.gains.lambda.map(|v| v * k);
                    c.gains.kv = c.gains.kv.map(|v| v * k);
                    Task {
                        label: format!("gains_{k}"),
                        value: k,
                        cfg: c,
                        model: Ok(model.clone()),
                    }
                })
                .collect()
        }
    };
    let rows = pool.install(|| tasks.into_par_iter().map(|t| fly_task(t, dir)).collect());
    Ok(rows)
}

pub fn write_table(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
