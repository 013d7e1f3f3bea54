//! On-disk layout for runs and sweeps.
//!
//! ```text
//! <dir>/summary.csv                 one row per run
//! <dir>/sweep.json                  sweep aggregates (sweeps only)
//! <dir>/<run_id>/summary.json       RunRecord without the trajectory
//! <dir>/<run_id>/trajectory.csv     logged points
//! <dir>/<run_id>/checkpoints.json   spectra, when logged
//! ```
//!
//! Floats in CSV use 17 significant digits so every value reads back exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::run::{RunRecord, SpectralCheckpoint, TrajectoryPoint};
use crate::harness::sweep::SweepResult;

pub const TRAJECTORY_HEADER: [&str; 7] = ["step", "train_loss", "val_loss", "train_acc", "val_acc", "v_sq_norm", "r_value"];

pub const SUMMARY_HEADER: [&str; 13] = [
    "axis_value",
    "seed",
    "grokked",
    "t_mem",
    "t_grok",
    "delay",
    "v_mem",
    "v_post_at_grok",
    "v_final",
    "rho",
    "gamma_fit",
    "fit_r2",
    "regime",
];

/// Bumped whenever a file layout above changes.
pub const SCHEMA_VERSION: &str = "1";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_trajectory(path: &Path, traj: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err(path))?;
    for p in traj {
        w.write_record([
            p.step.to_string(),
            fmt_f64(p.train_loss),
            fmt_f64(p.val_loss),
            fmt_f64(p.train_acc),
            fmt_f64(p.val_acc),
            fmt_f64(p.v_sq_norm),
            opt_f(p.r_value),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("unexpected header {header:?}"),
        });
    }
    let bad = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| bad(format!("bad float `{}` in column {i}", &rec[i])))
        };
        out.push(TrajectoryPoint {
            step: rec[0].parse().map_err(|_| bad(format!("bad step `{}`", &rec[0])))?,
            train_loss: f(1)?,
            val_loss: f(2)?,
            train_acc: f(3)?,
            val_acc: f(4)?,
            v_sq_norm: f(5)?,
            r_value: if rec[6].is_empty() { None } else { Some(f(6)?) },
        });
    }
    Ok(out)
}

/// One summary row; `regime` is filled in by sweeps.
fn summary_row(r: &RunRecord, regime: Option<&str>) -> [String; 13] {
    [
        r.axis_value.clone().unwrap_or_default(),
        r.config.seed.to_string(),
        r.grokked.to_string(),
        opt(r.t_mem),
        opt(r.t_grok),
        opt(r.delay),
        opt_f(r.v_mem),
        opt_f(r.v_post_at_grok),
        fmt_f64(r.v_final),
        opt_f(r.fit.map(|f| f.rho)),
        opt_f(r.fit.map(|f| f.gamma_fit)),
        opt_f(r.fit.map(|f| f.r2)),
        regime.unwrap_or_default().to_string(),
    ]
}

pub fn write_summary_csv(path: &Path, records: &[RunRecord], regime_of: impl Fn(&RunRecord) -> Option<String>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(path))?;
    for r in records {
        let regime = regime_of(r);
        w.write_record(summary_row(r, regime.as_deref())).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes each run's files plus a top-level `summary.csv`.
pub fn write_records(records: &[RunRecord], dir: &Path) -> Result<()> {
    write_records_with(records, dir, |_| None)
}

pub(crate) fn write_records_with(
    records: &[RunRecord],
    dir: &Path,
    regime_of: impl Fn(&RunRecord) -> Option<String>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        let run_dir = dir.join(&r.run_id);
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        write_json(&run_dir.join("summary.json"), r)?;
        write_trajectory(&run_dir.join("trajectory.csv"), &r.trajectory)?;
        if !r.checkpoints.is_empty() {
            write_json(&run_dir.join("checkpoints.json"), &r.checkpoints)?;
        }
    }
    write_summary_csv(&dir.join("summary.csv"), records, regime_of)
}

/// Reads one run directory written by [`write_records`].
pub fn read_run(run_dir: &Path) -> Result<RunRecord> {
    let summary = run_dir.join("summary.json");
    let mut r: RunRecord = read_json(&summary)?;
    let traj = run_dir.join("trajectory.csv");
    if !traj.is_file() {
        return Err(Error::MissingRunFile {
            run_id: r.run_id.clone(),
            path: traj,
        });
    }
    r.trajectory = read_trajectory(&traj)?;
    let cps = run_dir.join("checkpoints.json");
    if cps.is_file() {
        r.checkpoints = read_json::<Vec<SpectralCheckpoint>>(&cps)?;
    }
    Ok(r)
}

/// Every run under `dir`, ordered by directory name.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_run(d)).collect()
}

/// Writes a sweep's runs, `sweep.json`, and a summary CSV carrying regime labels.
pub fn write_sweep(result: &SweepResult, records: &[RunRecord], dir: &Path) -> Result<()> {
    write_records_with(records, dir, |r| {
        let v = r.axis_value.as_deref()?;
        result
            .points
            .iter()
            .find(|p| p.axis_value == v)
            .map(|p| p.regime.label.to_string())
    })?;
    write_json(&dir.join("sweep.json"), result)
}

pub fn read_sweep(dir: &Path) -> Result<SweepResult> {
    read_json(&dir.join("sweep.json"))
}

/// `(r_value, val_loss - val_loss_at_grok)` over the pre-grok points with
/// `r_value > 0.03`, pooled across grokked runs.
pub fn gap_regression_dataset(records: &[RunRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    const TRANSITION: f64 = 0.03;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in records {
        let Some(at_grok) = r.t_grok.and_then(|g| r.point_at(g)) else {
            continue;
        };
        for p in r.trajectory.iter().filter(|p| p.step < at_grok.step) {
            if let Some(rv) = p.r_value.filter(|&v| v > TRANSITION) {
                x.push(rv);
                y.push(p.val_loss - at_grok.val_loss);
            }
        }
    }
    if x.is_empty() {
        return Err(Error::NoPreGrokPoints);
    }
    Ok((x, y))
}
