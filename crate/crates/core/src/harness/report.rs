//! Post-hoc analysis of a results directory and the flat CSVs a plotting
//! front end reads.
//!
//! A results directory holds run directories directly, sweep directories
//! (run directories plus `sweep.json`), or both one level down. Each such
//! collection is a *group*.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{ols_with_ci, Regime};
use crate::error::{Error, Result};
use crate::harness::io::{
    fmt_f64, gap_regression_dataset, read_records, read_sweep, write_json, write_summary_csv, SCHEMA_VERSION,
    TRAJECTORY_HEADER,
};
use crate::harness::run::RunRecord;
use crate::harness::sweep::{axis_regressions, delay_prediction_r, NamedRegression, SweepAxis, SweepResult};

/// Gaps below this count as violations of the non-negative gap property.
pub const GAP_TOLERANCE: f64 = 1e-6;

pub struct Group {
    pub name: String,
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub sweep: Option<SweepResult>,
}

impl Group {
    pub fn regime_of(&self, r: &RunRecord) -> Option<Regime> {
        let sweep = self.sweep.as_ref()?;
        let v = r.axis_value.as_deref()?;
        sweep.points.iter().find(|p| p.axis_value == v).map(|p| p.regime.label)
    }
}

fn has_runs(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok()).any(|e| e.path().join("summary.json").is_file()))
        .unwrap_or(false)
}

fn load_group(name: String, dir: &Path) -> Result<Group> {
    let records = read_records(dir)?;
    let sweep_file = dir.join("sweep.json");
    let sweep = if sweep_file.is_file() { Some(read_sweep(dir)?) } else { None };
    Ok(Group {
        name,
        dir: dir.to_path_buf(),
        records,
        sweep,
    })
}

/// Every group under `dir`, the top level first, then subdirectories by name.
pub fn discover_groups(dir: &Path) -> Result<Vec<Group>> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")));
    }
    let mut groups = Vec::new();
    if has_runs(dir) {
        let name = dir.file_name().map_or("runs".into(), |n| n.to_string_lossy().into_owned());
        groups.push(load_group(name, dir)?);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && !p.join("summary.json").is_file() && has_runs(p))
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let name = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        groups.push(load_group(name, &sub)?);
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("results directory holds no runs"));
    }
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapAnalysis {
    pub regression: NamedRegression,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAnalysis {
    pub name: String,
    pub axis: Option<SweepAxis>,
    pub runs: usize,
    pub grokked: usize,
    pub regressions: Vec<NamedRegression>,
    pub delay_prediction_r: Option<f64>,
    pub gap: Option<GapAnalysis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub schema_version: String,
    pub groups: Vec<GroupAnalysis>,
}

/// Gap-versus-R regression plus the count of negative gaps.
pub fn gap_analysis(records: &[RunRecord]) -> Result<GapAnalysis> {
    let (x, y) = gap_regression_dataset(records)?;
    let violations = y.iter().filter(|&&g| g < -GAP_TOLERANCE).count();
    let result = ols_with_ci(&x, &y, 2000, 0.05, 0x5EED)?;
    Ok(GapAnalysis {
        regression: NamedRegression {
            name: "gap_vs_r".into(),
            x,
            y,
            result,
        },
        violations,
    })
}

pub fn analyze_group(g: &Group) -> GroupAnalysis {
    let axis = g.sweep.as_ref().map(|s| s.axis);
    let mut regressions = match axis {
        Some(a) => axis_regressions(a, &g.records, |r| g.regime_of(r)),
        None => Vec::new(),
    };
    if axis != Some(SweepAxis::P) {
        // the norm-ratio law applies to any pool of grokked runs
        regressions.extend(axis_regressions(SweepAxis::P, &g.records, |_| None));
    }
    GroupAnalysis {
        name: g.name.clone(),
        axis,
        runs: g.records.len(),
        grokked: g.records.iter().filter(|r| r.grokked).count(),
        regressions,
        delay_prediction_r: delay_prediction_r(&g.records),
        gap: gap_analysis(&g.records).ok(),
    }
}

pub fn analyze_dir(dir: &Path) -> Result<Analysis> {
    let groups = discover_groups(dir)?;
    Ok(Analysis {
        schema_version: SCHEMA_VERSION.to_string(),
        groups: groups.iter().map(analyze_group).collect(),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: &'a str,
    groups: Vec<&'a str>,
    files: Vec<String>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn put<W: std::io::Write, I, T>(w: &mut csv::Writer<W>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn o<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn of(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes the report files for every group under `input` into `out`.
///
/// * `<group>_summary.csv` with the sweep summary header
/// * `trajectories.csv`: `group,run_id,` then the trajectory columns
/// * `fits.csv`, `regimes.csv`, `regressions.csv`, `spectral.csv`
/// * `analysis.json` and `manifest.json`
///
/// Returns the file names written.
pub fn write_report(input: &Path, out: &Path) -> Result<Vec<String>> {
    let groups = discover_groups(input)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();

    for g in &groups {
        let name = format!("{}_summary.csv", g.name);
        write_summary_csv(&out.join(&name), &g.records, |r| g.regime_of(r).map(|x| x.to_string()))?;
        files.push(name);
    }

    let path = out.join("trajectories.csv");
    let mut w = csv_writer(&path)?;
    put(&mut w, &path, ["group", "run_id"].into_iter().chain(TRAJECTORY_HEADER))?;
    for g in &groups {
        for r in &g.records {
            for p in &r.trajectory {
                put(
                    &mut w,
                    &path,
                    [
                        g.name.clone(),
                        r.run_id.clone(),
                        p.step.to_string(),
                        fmt_f64(p.train_loss),
                        fmt_f64(p.val_loss),
                        fmt_f64(p.train_acc),
                        fmt_f64(p.val_acc),
                        fmt_f64(p.v_sq_norm),
                        of(p.r_value),
                    ],
                )?;
            }
        }
    }
    finish(w, &path)?;
    files.push("trajectories.csv".into());

    let path = out.join("fits.csv");
    let mut w = csv_writer(&path)?;
    put(
        &mut w,
        &path,
        [
            "group", "run_id", "axis_value", "seed", "t_mem", "t_grok", "delay", "v_mem", "v_post_at_grok", "a", "rho",
            "c", "fit_r2", "gamma_fit", "predicted_delay", "tau_detect",
        ],
    )?;
    for g in &groups {
        for r in &g.records {
            put(
                &mut w,
                &path,
                [
                    g.name.clone(),
                    r.run_id.clone(),
                    r.axis_value.clone().unwrap_or_default(),
                    r.config.seed.to_string(),
                    o(r.t_mem),
                    o(r.t_grok),
                    o(r.delay),
                    of(r.v_mem),
                    of(r.v_post_at_grok),
                    of(r.fit.map(|f| f.a)),
                    of(r.fit.map(|f| f.rho)),
                    of(r.fit.map(|f| f.c)),
                    of(r.fit.map(|f| f.r2)),
                    of(r.fit.map(|f| f.gamma_fit)),
                    of(r.predicted_delay()),
                    o(r.tau_detect),
                ],
            )?;
        }
    }
    finish(w, &path)?;
    files.push("fits.csv".into());

    let path = out.join("regimes.csv");
    let mut w = csv_writer(&path)?;
    put(
        &mut w,
        &path,
        ["group", "axis", "axis_value", "runs", "failed", "grok_fraction", "mean_delay", "mean_log_norm_ratio", "regime"],
    )?;
    for g in &groups {
        let Some(s) = &g.sweep else { continue };
        for p in &s.points {
            put(
                &mut w,
                &path,
                [
                    g.name.clone(),
                    s.axis.to_string(),
                    p.axis_value.clone(),
                    p.runs.len().to_string(),
                    p.failed.len().to_string(),
                    fmt_f64(p.grok_fraction),
                    of(p.mean_delay),
                    fmt_f64(p.mean_log_norm_ratio),
                    p.regime.label.to_string(),
                ],
            )?;
        }
    }
    finish(w, &path)?;
    files.push("regimes.csv".into());

    let analysis = Analysis {
        schema_version: SCHEMA_VERSION.to_string(),
        groups: groups.iter().map(analyze_group).collect(),
    };
    let path = out.join("regressions.csv");
    let mut w = csv_writer(&path)?;
    put(
        &mut w,
        &path,
        ["group", "name", "slope", "intercept", "r2", "n", "ci_low", "ci_high"],
    )?;
    for ga in &analysis.groups {
        let all = ga.regressions.iter().chain(ga.gap.as_ref().map(|g| &g.regression));
        for reg in all {
            let r = &reg.result;
            put(
                &mut w,
                &path,
                [
                    ga.name.clone(),
                    reg.name.clone(),
                    fmt_f64(r.slope),
                    fmt_f64(r.intercept),
                    fmt_f64(r.r2),
                    r.n.to_string(),
                    of(r.ci_low),
                    of(r.ci_high),
                ],
            )?;
        }
    }
    finish(w, &path)?;
    files.push("regressions.csv".into());

    let path = out.join("spectral.csv");
    let mut w = csv_writer(&path)?;
    put(&mut w, &path, ["group", "run_id", "step", "r_value", "total", "leak"])?;
    for g in &groups {
        for r in &g.records {
            for cp in &r.checkpoints {
                put(
                    &mut w,
                    &path,
                    [
                        g.name.clone(),
                        r.run_id.clone(),
                        cp.step.to_string(),
                        of(cp.spectrum.r_value),
                        fmt_f64(cp.spectrum.total),
                        fmt_f64(cp.spectrum.leak),
                    ],
                )?;
            }
        }
    }
    finish(w, &path)?;
    files.push("spectral.csv".into());

    write_json(&out.join("analysis.json"), &analysis)?;
    files.push("analysis.json".into());
    files.push("manifest.json".into());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        groups: groups.iter().map(|g| g.name.as_str()).collect(),
        files: files.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(files)
}
