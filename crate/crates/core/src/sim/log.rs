//! Fixed-rate flight logs: CSV with a versioned header line plus a JSON sidecar.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aero::TableParams;
use crate::error::{Error, Result};
use crate::sim::scenario::Phase;
use crate::vehicle::{Mat3, RotorCommand, Vec3};

pub const LOG_SCHEMA: &str = "lander-flight-log";
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// One logged sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Mat3,
    pub omega: Vec3,
    /// Command applied from `t` on.
    pub u: RotorCommand,
    /// True disturbance at this state and command.
    pub f_true: Vec3,
    pub tau_true: Vec3,
    /// Model prediction at this state and command.
    pub f_pred: Vec3,
    /// Prediction held by the controller since its last position step.
    pub f_ctrl: Vec3,
    pub s: Vec3,
    pub p_err: Vec3,
    pub p_des: Vec3,
    pub measured_position: Vec3,
    pub measured_velocity: Vec3,
    /// World-frame rotor force averaged over the interval ending at `t`, N.
    pub thrust_world: Vec3,
    pub fp_iterations: usize,
    pub fp_residual: f64,
    /// Largest fixed-point residual ratio of the last position step; NaN if none.
    pub fp_ratio: f64,
    /// ‖u_k − u_{k−1}‖ of the last position step, RPM².
    pub du_norm: f64,
    /// ‖s‖ seen by the controller at its last position step.
    pub s_ctrl: f64,
    /// A position-control step happened at this sample.
    pub control_update: bool,
    pub saturated: bool,
    pub lift_clamped: bool,
    pub contact: bool,
}

fn vec_names(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

impl FlightRecord {
    pub fn header() -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(vec_names("p"));
        h.extend(vec_names("v"));
        for r in 1..=3 {
            for c in 1..=3 {
                h.push(format!("r{r}{c}"));
            }
        }
        h.extend(vec_names("w"));
        h.extend((1..=4).map(|i| format!("u{i}")));
        for p in [
            "fa", "ta", "fhat", "fctl", "s", "perr", "pd", "pm", "vm", "thrust",
        ] {
            h.extend(vec_names(p));
        }
        for n in [
            "fp_iters",
            "fp_residual",
            "fp_ratio",
            "du_norm",
            "s_ctrl",
            "control_update",
            "saturated",
            "lift_clamped",
            "contact",
        ] {
            h.push(n.to_string());
        }
        h
    }

    pub fn to_row(&self) -> Vec<String> {
        let mut row = Vec::with_capacity(64);
        let f = |v: f64| format!("{v:?}");
        row.push(f(self.t));
        let push3 = |row: &mut Vec<String>, v: &Vec3| row.extend(v.iter().map(|x| f(*x)));
        push3(&mut row, &self.position);
        push3(&mut row, &self.velocity);
        for r in 0..3 {
            for c in 0..3 {
                row.push(f(self.attitude[(r, c)]));
            }
        }
        push3(&mut row, &self.omega);
        row.extend(self.u.0.iter().map(|x| f(*x)));
        for v in [
            &self.f_true,
            &self.tau_true,
            &self.f_pred,
            &self.f_ctrl,
            &self.s,
            &self.p_err,
            &self.p_des,
            &self.measured_position,
            &self.measured_velocity,
            &self.thrust_world,
        ] {
            push3(&mut row, v);
        }
        row.push(self.fp_iterations.to_string());
        row.push(f(self.fp_residual));
        row.push(f(self.fp_ratio));
        row.push(f(self.du_norm));
        row.push(f(self.s_ctrl));
        for b in [self.control_update, self.saturated, self.lift_clamped, self.contact] {
            row.push(if b { "1" } else { "0" }.into());
        }
        row
    }

    pub fn from_row(row: &csv::StringRecord) -> Result<Self> {
        let expected = Self::header().len();
        if row.len() != expected {
            return Err(Error::Format(format!(
                "log row has {} fields, expected {expected}",
                row.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {:?} in column {i}", &row[i])))
        };
        let v3 = |i: usize| -> Result<Vec3> { Ok(Vec3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
        let flag = |i: usize| -> Result<bool> {
            match row[i].trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Format(format!("bad flag {other:?} in column {i}"))),
            }
        };
        let mut attitude = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                attitude[(r, c)] = num(7 + 3 * r + c)?;
            }
        }
        let base = 23;
        Ok(Self {
            t: num(0)?,
            position: v3(1)?,
            velocity: v3(4)?,
            attitude,
            omega: v3(16)?,
            u: RotorCommand([num(19)?, num(20)?, num(21)?, num(22)?]),
            f_true: v3(base)?,
            tau_true: v3(base + 3)?,
            f_pred: v3(base + 6)?,
            f_ctrl: v3(base + 9)?,
            s: v3(base + 12)?,
            p_err: v3(base + 15)?,
            p_des: v3(base + 18)?,
            measured_position: v3(base + 21)?,
            measured_velocity: v3(base + 24)?,
            thrust_world: v3(base + 27)?,
            fp_iterations: row[base + 30]
                .trim()
                .parse()
                .map_err(|_| Error::Format("bad fp_iters".into()))?,
            fp_residual: num(base + 31)?,
            fp_ratio: num(base + 32)?,
            du_norm: num(base + 33)?,
            s_ctrl: num(base + 34)?,
            control_update: flag(base + 35)?,
            saturated: flag(base + 36)?,
            lift_clamped: flag(base + 37)?,
            contact: flag(base + 38)?,
        })
    }
}

/// `base` with `.ext` appended.
pub fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Provenance and certificates stored next to a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LogMeta {
    pub schema: String,
    pub schema_version: u32,
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub rate_hz: f64,
    /// σ(B0⁻¹), RPM² per unit wrench.
    pub inverse_allocation_norm: f64,
    /// Certified L_a_u of the model, N/RPM² (0 for the baseline).
    pub l_a: Option<f64>,
    pub contraction_ratio: Option<f64>,
    /// Lowest height of the scenario's reference, m.
    pub min_reference_height: f64,
    /// kg
    pub mass: f64,
    pub phases: Vec<Phase>,
    /// Times at which the reference jumps, s.
    pub discontinuities: Vec<f64>,
    pub table: Option<TableParams>,
    /// Free-form configuration (scenario, vehicle, field, gains).
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub rate_hz: f64,
    pub records: Vec<FlightRecord>,
    pub meta: LogMeta,
}

impl FlightLog {
    pub fn new(rate_hz: f64, meta: LogMeta) -> Self {
        Self {
            rate_hz,
            records: Vec::new(),
            meta,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# {LOG_SCHEMA} v{LOG_SCHEMA_VERSION} rate_hz={:?}", self.rate_hz)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FlightRecord::header())?;
        for r in &self.records {
            w.write_record(r.to_row())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV form; `meta` is left at its default apart from the rate.
    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let first = first.trim();
        let prefix = format!("# {LOG_SCHEMA} v");
        let rest = first
            .strip_prefix(&prefix)
            .ok_or_else(|| Error::Format(format!("missing log header line, found {first:?}")))?;
        let (version, rate) = rest
            .split_once(" rate_hz=")
            .ok_or_else(|| Error::Format("header lacks rate_hz".into()))?;
        let version: u32 = version
            .parse()
            .map_err(|_| Error::Format(format!("bad schema version {version:?}")))?;
        if version != LOG_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "log schema version {version} is not supported (expected {LOG_SCHEMA_VERSION})"
            )));
        }
        let rate_hz: f64 = rate
            .parse()
            .map_err(|_| Error::Format(format!("bad rate {rate:?}")))?;
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != FlightRecord::header() {
            return Err(Error::Format("log column header does not match the schema".into()));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            records.push(FlightRecord::from_row(&row?)?);
        }
        Ok(Self {
            rate_hz,
            records,
            meta: LogMeta {
                rate_hz,
                ..Default::default()
            },
        })
    }

    /// Paths of the CSV and sidecar for a base path; the extensions are
    /// appended, so dots in the base name survive.
    pub fn paths(base: &Path) -> (PathBuf, PathBuf) {
        (with_suffix(base, "csv"), with_suffix(base, "json"))
    }

    /// Writes `<base>.csv` and `<base>.json`; `extra` is stored in the sidecar
    /// under `"extra"`.
    pub fn save(&self, base: &Path, extra: Option<&serde_json::Value>) -> Result<()> {
        let (csv_path, json_path) = Self::paths(base);
        let file = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        self.write_csv(file)?;
        let mut sidecar = serde_json::to_value(&self.meta)?;
        if let (Some(extra), Some(obj)) = (extra, sidecar.as_object_mut()) {
            obj.insert("extra".into(), extra.clone());
        }
        std::fs::write(json_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Reads a log from its CSV path; the sidecar is loaded when present.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(csv_path)?);
        let mut log = Self::read_csv(file)?;
        let json_path = csv_path.with_extension("json");
        if json_path.exists() {
            let text = std::fs::read_to_string(json_path)?;
            log.meta = serde_json::from_str(&text)?;
        }
        Ok(log)
    }

    /// SHA-256 of the CSV form.
    pub fn digest(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(hex::encode(Sha256::digest(&buf)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64) -> FlightRecord {
        FlightRecord {
            t,
            position: Vec3::new(0.1, 0.2, 1.0 / 3.0),
            velocity: Vec3::new(-1e-17, 2.0, 3.5),
            attitude: Mat3::identity(),
            omega: Vec3::zeros(),
            u: RotorCommand([4e6, 4.1e6, 3.9e6, 4e6]),
            f_true: Vec3::new(0.0, 0.0, 0.7),
            tau_true: Vec3::zeros(),
            f_pred: Vec3::zeros(),
            f_ctrl: Vec3::zeros(),
            s: Vec3::new(0.01, 0.0, 0.0),
            p_err: Vec3::zeros(),
            p_des: Vec3::zeros(),
            measured_position: Vec3::zeros(),
            measured_velocity: Vec3::zeros(),
            thrust_world: Vec3::new(0.0, 0.0, 14.4),
            fp_iterations: 1,
            fp_residual: 12.5,
            fp_ratio: f64::NAN,
            du_norm: 3.0,
            s_ctrl: 0.01,
            control_update: true,
            saturated: false,
            lift_clamped: false,
            contact: true,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = FlightLog::new(100.0, LogMeta::default());
        log.records = vec![record(0.0), record(0.01)];
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = FlightLog::read_csv(&buf[..]).unwrap();
        assert_eq!(back.records.len(), 2);
        let (a, b) = (&back.records[0], &log.records[0]);
        assert_eq!(a.position, b.position);
        assert_eq!(a.velocity, b.velocity);
        assert_eq!(a.u, b.u);
        assert!(a.fp_ratio.is_nan());
        assert!(a.contact && a.control_update);
        assert_eq!(back.rate_hz, 100.0);
    }

    #[test]
    fn rejects_unknown_version() {
        let text = "# lander-flight-log v9 rate_hz=100.0\nt\n";
        assert!(matches!(
            FlightLog::read_csv(text.as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(FlightLog::read_csv("t,p_x\n".as_bytes()).is_err());
    }
}
