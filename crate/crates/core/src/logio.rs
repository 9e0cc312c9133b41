//! Trajectory-log serialization.
//!
//! One run produces two files:
//!
//! * `<run_id>.csv` — rows `step,metric,module_id,value` in recording
//!   order. `module_id` is empty for run-level metrics. Values are written
//!   with 17 significant digits (`{:.16e}`), which round-trips every f64
//!   exactly, so re-reading a log reproduces it bit for bit.
//! * `<run_id>.json` — a sidecar with the run id, config fingerprint, the
//!   full config, divergence status, and final metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metric::ModuleId;
use crate::observers::{Metric, TrajectoryLog};
use crate::train::RunOutput;

pub const CSV_HEADER: &str = "step,metric,module_id,value";

/// Formats one value the way run CSVs store it.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(log: &TrajectoryLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for row in log.rows() {
            let module = row
                .module
                .map(|m| m.0.to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{}",
                row.step,
                row.metric.as_str(),
                module,
                format_value(row.value)
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(&display, e))
}

/// Reads a run CSV back into a log. The run id is taken from the file
/// stem; the fingerprint comes from the sidecar when the caller has one.
/// Malformed rows are reported with their 1-based line number.
pub fn read_csv(path: impl AsRef<Path>) -> Result<TrajectoryLog> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let run_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut log = TrajectoryLog::new(run_id, String::new());
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        let line_no = idx + 1;
        if !saw_header {
            if line.trim() != CSV_HEADER {
                return Err(parse_err(
                    line_no,
                    format!("expected header {CSV_HEADER:?}, found {line:?}"),
                ));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let step: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad step {:?}", fields[0])))?;
        let metric = Metric::parse(fields[1])
            .ok_or_else(|| parse_err(line_no, format!("unknown metric {:?}", fields[1])))?;
        let module = if fields[2].is_empty() {
            None
        } else {
            Some(ModuleId(fields[2].parse().map_err(|_| {
                parse_err(line_no, format!("bad module id {:?}", fields[2]))
            })?))
        };
        let value: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad value {:?}", fields[3])))?;
        log.push(step, metric, module, value)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
    }
    if !saw_header {
        return Err(parse_err(1, "file is empty".into()));
    }
    Ok(log)
}

/// Run metadata written next to each CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSidecar {
    pub schema_version: u32,
    pub run_id: String,
    pub fingerprint: String,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_reason: Option<String>,
    pub steps_run: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_val_loss: Option<f64>,
    pub final_val_acc: f64,
    /// Sign convention in effect when a controller ran: `eta` as
    /// configured (positive gain raises decay when the indicator exceeds
    /// its target).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller_eta: Option<f64>,
    pub config: RunConfig,
}

impl RunSidecar {
    pub fn from_output(cfg: &RunConfig, out: &RunOutput) -> Self {
        RunSidecar {
            schema_version: 1,
            run_id: out.log.run_id().to_string(),
            fingerprint: out.log.fingerprint().to_string(),
            diverged: out.diverged.is_some(),
            divergence_step: out.diverged.as_ref().map(|d| d.step),
            divergence_reason: out.diverged.as_ref().map(|d| d.reason.clone()),
            steps_run: out.steps_run,
            final_val_loss: out.final_val_loss,
            final_val_acc: out.final_val_acc,
            controller_eta: cfg.controller.as_ref().map(|c| c.eta),
            config: cfg.clone(),
        }
    }
}

pub fn write_sidecar(sidecar: &RunSidecar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::InvalidConfig(format!("sidecar serialization: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(&display, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<RunSidecar> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: display,
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Writes both run artifacts and returns their paths (csv, json).
pub fn write_run(
    cfg: &RunConfig,
    out: &RunOutput,
    dir: impl AsRef<Path>,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let csv_path = dir.join(format!("{}.csv", out.log.run_id()));
    let json_path = dir.join(format!("{}.json", out.log.run_id()));
    write_csv(&out.log, &csv_path)?;
    write_sidecar(&RunSidecar::from_output(cfg, out), &json_path)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> TrajectoryLog {
        let mut log = TrajectoryLog::new("sample", "fp");
        log.push(0, Metric::Oui, Some(ModuleId(0)), 0.912345678901234567)
            .unwrap();
        log.push(0, Metric::TrainLoss, None, 0.6931471805599453).unwrap();
        log.push(1, Metric::Oui, Some(ModuleId(0)), 1.0 / 3.0).unwrap();
        log.push(1, Metric::ValAcc, None, 0.75).unwrap();
        log
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        let log = sample_log();
        write_csv(&log, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.rows().len(), log.rows().len());
        for (a, b) in log.rows().iter().zip(back.rows()) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.metric, b.metric);
            assert_eq!(a.module, b.module);
            assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
        assert_eq!(back.run_id(), "sample");
    }

    #[test]
    fn value_formatting_has_17_significant_digits() {
        assert_eq!(format_value(1.0 / 3.0), "3.3333333333333331e-1");
        assert_eq!(format_value(0.75), "7.5000000000000000e-1");
    }

    #[test]
    fn corrupted_row_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            format!("{CSV_HEADER}\n0,train_loss,,1.0\n1,not_a_metric,,2.0\n"),
        )
        .unwrap();
        match read_csv(&path) {
            Err(Error::Parse { line: 3, path: p, .. }) => assert!(p.contains("bad.csv")),
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nohdr.csv");
        std::fs::write(&path, "0,train_loss,,1.0\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn sidecar_round_trip() {
        use crate::config::tests_support::sample_run_config;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let cfg = sample_run_config();
        let sidecar = RunSidecar {
            schema_version: 1,
            run_id: "run".into(),
            fingerprint: cfg.fingerprint(),
            diverged: false,
            divergence_step: None,
            divergence_reason: None,
            steps_run: 10,
            final_val_loss: Some(0.5),
            final_val_acc: 0.9,
            controller_eta: None,
            config: cfg.clone(),
        };
        write_sidecar(&sidecar, &path).unwrap();
        let back = read_sidecar(&path).unwrap();
        assert_eq!(back.fingerprint, sidecar.fingerprint);
        assert_eq!(back.config, cfg);
    }
}
