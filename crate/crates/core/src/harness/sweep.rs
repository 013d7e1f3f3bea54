use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    classify_regime, ols_with_ci, pearson, RegimeEvidence, RegimeLabel, RegimeThresholds, RegressionResult, Regime,
};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::io::SCHEMA_VERSION;
use crate::harness::run::{run_training, RunRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    Eta,
    P,
    /// Values like `adamw` or `sgd:w_eq_2lambda`.
    Optimizer,
    Task,
    /// Values like `1e-3x0.5` (eta, lambda).
    EtaXLambda,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Eta => "eta",
            SweepAxis::P => "p",
            SweepAxis::Optimizer => "optimizer",
            SweepAxis::Task => "task",
            SweepAxis::EtaXLambda => "eta_x_lambda",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lambda" => SweepAxis::Lambda,
            "eta" => SweepAxis::Eta,
            "p" => SweepAxis::P,
            "optimizer" => SweepAxis::Optimizer,
            "task" => SweepAxis::Task,
            "eta_x_lambda" => SweepAxis::EtaXLambda,
            _ => return Err(Error::invalid("axis", format!("unknown axis `{s}`"))),
        })
    }
}

/// The config for one sweep cell.
pub fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, value: &str, seed: u64) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match axis {
        SweepAxis::Lambda => c.set("lambda", value)?,
        SweepAxis::Eta => c.set("eta", value)?,
        SweepAxis::P => c.set("p", value)?,
        SweepAxis::Task => c.set("task", value)?,
        SweepAxis::Optimizer => match value.split_once(':') {
            Some((opt, conv)) => {
                c.set("optimizer", opt)?;
                c.set("wd_convention", conv)?;
            }
            None => c.set("optimizer", value)?,
        },
        SweepAxis::EtaXLambda => {
            let (e, l) = value
                .split_once('x')
                .ok_or_else(|| Error::invalid("axis value", format!("`{value}` is not <eta>x<lambda>")))?;
            c.set("eta", e)?;
            c.set("lambda", l)?;
        }
    }
    c.seed = seed;
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub grokked: bool,
    pub t_mem: Option<usize>,
    pub t_grok: Option<usize>,
    pub delay: Option<i64>,
    pub v_init: f64,
    pub v_mem: Option<f64>,
    pub v_post_at_grok: Option<f64>,
    pub v_final: f64,
    pub gamma_fit: Option<f64>,
    pub fit_r2: Option<f64>,
    pub predicted_delay: Option<f64>,
    pub tau_detect: Option<usize>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            run_id: r.run_id.clone(),
            seed: r.config.seed,
            grokked: r.grokked,
            t_mem: r.t_mem,
            t_grok: r.t_grok,
            delay: r.delay,
            v_init: r.v_init,
            v_mem: r.v_mem,
            v_post_at_grok: r.v_post_at_grok,
            v_final: r.v_final,
            gamma_fit: r.fit.map(|f| f.gamma_fit),
            fit_r2: r.fit.map(|f| f.r2),
            predicted_delay: r.predicted_delay(),
            tau_detect: r.tau_detect,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: String,
    pub runs: Vec<RunSummary>,
    pub failed: Vec<FailedRun>,
    pub grok_fraction: f64,
    pub mean_delay: Option<f64>,
    pub mean_log_norm_ratio: f64,
    pub regime: RegimeLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedRegression {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub result: RegressionResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: String,
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub regressions: Vec<NamedRegression>,
    pub regimes: Vec<RegimeLabel>,
    /// Pearson r between measured delay and predicted escape time, pooled.
    pub delay_prediction_r: Option<f64>,
}

impl SweepResult {
    pub fn regression(&self, name: &str) -> Option<&NamedRegression> {
        self.regressions.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    /// Concurrent runs; 0 uses the rayon default.
    pub jobs: usize,
    pub thresholds: RegimeThresholds,
}

fn evidence(runs: &[RunRecord], attempted: usize) -> RegimeEvidence {
    let grokked = runs.iter().filter(|r| r.grokked).count();
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let log_ratio = mean(
        runs.iter()
            .map(|r| match (r.v_mem, r.v_post_at_grok) {
                (Some(m), Some(p)) => (m / p).ln(),
                (Some(m), None) => (m / r.v_final).ln(),
                _ => 0.0,
            })
            .collect(),
    );
    // failed cells count as collapsed: they retained nothing measurable
    let mut retention: Vec<f64> = runs
        .iter()
        .map(|r| r.v_final / r.v_init)
        .collect();
    retention.resize(attempted.max(runs.len()), 0.0);
    RegimeEvidence {
        grok_fraction: grokked as f64 / attempted.max(1) as f64,
        log_norm_ratio: log_ratio,
        norm_retention: mean(retention),
    }
}

fn regress(name: &str, x: Vec<f64>, y: Vec<f64>) -> Option<NamedRegression> {
    let result = ols_with_ci(&x, &y, 2000, 0.05, 0x5EED).ok()?;
    Some(NamedRegression {
        name: name.to_string(),
        x,
        y,
        result,
    })
}

fn unzip_filtered(records: &[RunRecord], f: impl Fn(&RunRecord) -> Option<(f64, f64)>) -> (Vec<f64>, Vec<f64>) {
    records.iter().filter_map(f).unzip()
}

/// The regression that goes with each axis.
///
/// * `lambda`: delay against `1/λ`, Regime II points only.
/// * `eta`: `T_grok` against `1/η`.
/// * `p`: delay against `ln(V_mem/V_post)`, pooled.
/// * `eta_x_lambda`: `T_grok` against `1/(ηλ)`.
///
/// Only grokked runs contribute. Axes without a law, or with fewer than
/// three usable runs, yield nothing.
pub fn axis_regressions(
    axis: SweepAxis,
    records: &[RunRecord],
    regime_of: impl Fn(&RunRecord) -> Option<Regime>,
) -> Vec<NamedRegression> {
    let delay = |r: &RunRecord| r.delay.filter(|_| r.grokked).map(|d| d as f64);
    let t_grok = |r: &RunRecord| r.t_grok.filter(|_| r.grokked).map(|t| t as f64);
    let (name, (x, y)) = match axis {
        SweepAxis::Lambda => (
            "delay_vs_inv_lambda",
            unzip_filtered(records, |r| {
                (regime_of(r) == Some(Regime::II)).then_some(())?;
                Some((1.0 / r.config.lambda, delay(r)?))
            }),
        ),
        SweepAxis::Eta => (
            "t_grok_vs_inv_eta",
            unzip_filtered(records, |r| Some((1.0 / r.config.eta, t_grok(r)?))),
        ),
        SweepAxis::P => (
            "delay_vs_log_norm_ratio",
            unzip_filtered(records, |r| Some((r.log_norm_ratio()?, delay(r)?))),
        ),
        SweepAxis::EtaXLambda => (
            "t_grok_vs_inv_eta_lambda",
            unzip_filtered(records, |r| Some((1.0 / (r.config.eta * r.config.lambda), t_grok(r)?))),
        ),
        SweepAxis::Optimizer | SweepAxis::Task => return Vec::new(),
    };
    regress(name, x, y).into_iter().collect()
}

/// Pearson r between measured delay and `predict_escape`, over grokked runs.
pub fn delay_prediction_r(records: &[RunRecord]) -> Option<f64> {
    let (measured, predicted) = unzip_filtered(records, |r| {
        r.grokked.then_some(())?;
        Some((r.delay? as f64, r.predicted_delay()?))
    });
    if measured.len() < 3 {
        return None;
    }
    pearson(&measured, &predicted).ok()
}

/// Runs every `(value, seed)` cell; a failing cell is recorded, not fatal.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<(SweepResult, Vec<RunRecord>)> {
    if spec.values.is_empty() {
        return Err(Error::EmptyInput("sweep values"));
    }
    if spec.seeds.is_empty() {
        return Err(Error::EmptyInput("sweep seeds"));
    }
    let cells: Vec<(usize, String, u64)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, v)| spec.seeds.iter().map(move |&s| (i, v.clone(), s)))
        .collect();
    let run_cell = |(_, value, seed): &(usize, String, u64)| -> Result<RunRecord> {
        let cfg = apply_axis(base, spec.axis, value, *seed)?;
        let mut r = run_training(&cfg)?;
        r.run_id = format!("{}={}_{}", spec.axis, value, r.run_id);
        r.axis_value = Some(value.clone());
        Ok(r)
    };
    let outcomes: Vec<Result<RunRecord>> = if spec.jobs == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if spec.jobs > 0 {
            builder = builder.num_threads(spec.jobs);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::invalid("jobs", e.to_string()))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };

    let mut records = Vec::new();
    let mut points = Vec::new();
    for (i, value) in spec.values.iter().enumerate() {
        let mut runs = Vec::new();
        let mut failed = Vec::new();
        for (cell, outcome) in cells.iter().zip(&outcomes) {
            if cell.0 != i {
                continue;
            }
            match outcome {
                Ok(r) => runs.push(r.clone()),
                Err(e) => failed.push(FailedRun {
                    seed: cell.2,
                    error: e.to_string(),
                }),
            }
        }
        let ev = evidence(&runs, runs.len() + failed.len());
        let delays: Vec<f64> = runs.iter().filter_map(|r| r.delay).map(|d| d as f64).collect();
        points.push(SweepPoint {
            axis_value: value.clone(),
            runs: runs.iter().map(RunSummary::from).collect(),
            failed,
            grok_fraction: ev.grok_fraction,
            mean_delay: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
            mean_log_norm_ratio: ev.log_norm_ratio,
            regime: classify_regime(ev, &spec.thresholds),
        });
        records.extend(runs);
    }

    let regime_of = |r: &RunRecord| {
        points
            .iter()
            .find(|p| Some(&p.axis_value) == r.axis_value.as_ref())
            .map(|p| p.regime.label)
    };
    let regressions = axis_regressions(spec.axis, &records, regime_of);
    let delay_prediction_r = delay_prediction_r(&records);

    Ok((
        SweepResult {
            schema_version: SCHEMA_VERSION.to_string(),
            axis: spec.axis,
            regimes: points.iter().map(|p| p.regime).collect(),
            points,
            regressions,
            delay_prediction_r,
        },
        records,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_application() {
        let base = ExperimentConfig::default();
        let c = apply_axis(&base, SweepAxis::Optimizer, "sgd:w_eq_2lambda", 3).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.decay_coefficient(), base.lambda);
        let c = apply_axis(&base, SweepAxis::EtaXLambda, "2e-3x0.5", 0).unwrap();
        assert_eq!((c.eta, c.lambda), (2e-3, 0.5));
        assert!(apply_axis(&base, SweepAxis::Lambda, "abc", 0).is_err());
    }

    #[test]
    fn failed_cells_are_kept() {
        let mut base = ExperimentConfig {
            p: 5,
            max_steps: 10,
            eval_every: 5,
            ..Default::default()
        };
        base.model.d_e = 2;
        base.model.hidden = 4;
        let spec = SweepSpec {
            axis: SweepAxis::P,
            values: vec!["5".into(), "6".into()],
            seeds: vec![0, 1],
            jobs: 1,
            thresholds: RegimeThresholds::default(),
        };
        let (res, recs) = run_sweep(&base, &spec).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(res.points[1].failed.len(), 2);
        assert!(res.points.iter().all(|p| p.runs.len() + p.failed.len() >= 1));
    }
}
