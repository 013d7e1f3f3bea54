use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_exponential_sampled, FitResult};
use crate::detection::gamma_threshold;
use crate::dynamics::{adamw_update_in_place, sgd_update_in_place, AdamWState, DIVERGENCE_LIMIT};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, OptimizerKind, Task};
use crate::models::{
    backward, evaluate, forward, gen_modular_dataset, gen_parity_dataset, Activation, Inputs, MlpModel, MlpShape,
};
use crate::rng;
use crate::spectral::{model_spectrum, select_support, SpectrumReport};

/// Minimum number of logged points in `[t_mem, t_grok]` for the norm fit.
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub v_sq_norm: f64,
    pub r_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCheckpoint {
    pub step: usize,
    pub spectrum: SpectrumReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Layout version of the files this record is written to.
    #[serde(default = "schema_version")]
    pub schema_version: String,
    pub run_id: String,
    /// Sweep coordinate that produced this run, if any.
    pub axis_value: Option<String>,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryPoint>,
    pub t_mem: Option<usize>,
    pub t_grok: Option<usize>,
    pub delay: Option<i64>,
    pub v_init: f64,
    pub v_mem: Option<f64>,
    pub v_post_at_grok: Option<f64>,
    pub v_final: f64,
    pub fit: Option<FitResult>,
    pub grokked: bool,
    pub tau_detect: Option<usize>,
    pub spectral_support: Option<Vec<usize>>,
    #[serde(skip)]
    pub checkpoints: Vec<SpectralCheckpoint>,
}

fn schema_version() -> String {
    crate::harness::io::SCHEMA_VERSION.to_string()
}

impl RunRecord {
    pub fn point_at(&self, step: usize) -> Option<&TrajectoryPoint> {
        self.trajectory
            .binary_search_by_key(&step, |p| p.step)
            .ok()
            .map(|i| &self.trajectory[i])
    }

    /// `predict_escape(γ_fit, V_mem, V_post)` when every input exists.
    pub fn predicted_delay(&self) -> Option<f64> {
        let fit = self.fit?;
        crate::analysis::predict_escape(fit.gamma_fit, self.v_mem?, self.v_post_at_grok?).ok()
    }

    pub fn log_norm_ratio(&self) -> Option<f64> {
        Some((self.v_mem? / self.v_post_at_grok?).ln())
    }
}

struct Split {
    train: Inputs<f64>,
    train_y: Vec<usize>,
    val: Inputs<f64>,
    val_y: Vec<usize>,
}

fn build_split(cfg: &ExperimentConfig) -> Result<(Split, MlpShape)> {
    let data_seed = rng::derive_seed(cfg.seed, 0);
    match cfg.task.mod_op() {
        Some(op) => {
            let d = gen_modular_dataset(cfg.p, op, cfg.train_frac, data_seed)?;
            let toks = |v: &[crate::models::ModExample]| {
                (
                    Inputs::Tokens(v.iter().map(|e| (e.a, e.b)).collect()),
                    v.iter().map(|e| e.label).collect(),
                )
            };
            let (train, train_y) = toks(&d.train);
            let (val, val_y) = toks(&d.val);
            let shape = MlpShape::modular(cfg.p, cfg.model.d_e, cfg.model.hidden, cfg.model.activation);
            Ok((
                Split {
                    train,
                    train_y,
                    val,
                    val_y,
                },
                shape,
            ))
        }
        None => {
            let d = gen_parity_dataset(cfg.n, cfg.parity.num_train, cfg.parity.num_val, data_seed)?;
            let n = cfg.n;
            let dense = |v: &[crate::models::ParityExample]| {
                let data = v
                    .iter()
                    .flat_map(|e| (0..n).map(move |i| if (e.bits >> i) & 1 == 1 { 1.0 } else { -1.0 }))
                    .collect();
                (
                    Inputs::Dense { data, width: n },
                    v.iter().map(|e| e.label as usize).collect(),
                )
            };
            let (train, train_y) = dense(&d.train);
            let (val, val_y) = dense(&d.val);
            // a quadratic unit cannot express a degree-3 parity, so parity uses relu
            let shape = MlpShape::dense(n, cfg.parity.hidden, 2, Activation::Relu);
            Ok((
                Split {
                    train,
                    train_y,
                    val,
                    val_y,
                },
                shape,
            ))
        }
    }
}

/// Trains one model and derives the run summary.
pub fn run_training(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let (split, shape) = build_split(cfg)?;
    let init_scale = if cfg.task == Task::Parity { cfg.parity.init_scale } else { cfg.model.init_scale };
    let mut model = MlpModel::<f64>::init_with(shape, rng::derive_seed(cfg.seed, 1), init_scale, cfg.model.embed_std)?;
    let mut batch_rng = rng::seeded(rng::derive_seed(cfg.seed, 2));
    let n_train = split.train_y.len();
    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= n_train;
    let decay = cfg.decay_coefficient();
    let mut adam = AdamWState::<f64>::with_betas(model.num_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let want_spectra = cfg.spectral_every > 0 && cfg.task != Task::Parity;

    let mut trajectory = Vec::new();
    let mut checkpoints = Vec::new();
    let (mut t_mem, mut t_grok) = (None, None);
    let mut step = 0usize;
    loop {
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let (train_loss, train_acc) = evaluate(&model, &split.train, &split.train_y)?;
            let (val_loss, val_acc) = evaluate(&model, &split.val, &split.val_y)?;
            trajectory.push(TrajectoryPoint {
                step,
                train_loss,
                val_loss,
                train_acc,
                val_acc,
                v_sq_norm: model.squared_norm(),
                r_value: None,
            });
            if want_spectra && step % cfg.spectral_every == 0 {
                // an all-zero logit grid has no spectrum; skip that checkpoint
                if let Ok(spectrum) = model_spectrum(&model) {
                    checkpoints.push(SpectralCheckpoint { step, spectrum });
                }
            }
            if t_mem.is_none() && train_acc >= cfg.acc_threshold {
                t_mem = Some(step);
            }
            if t_grok.is_none() && val_acc >= cfg.acc_threshold {
                t_grok = Some(step);
            }
        }
        if step >= cfg.max_steps || t_grok.is_some_and(|g| step >= g + cfg.post_grok_steps) {
            break;
        }

        let (_, cache, targets) = if full_batch {
            let (l, c) = forward(&model, &split.train)?;
            (l, c, split.train_y.clone())
        } else {
            let rows = index::sample(&mut batch_rng, n_train, cfg.batch_size).into_vec();
            let ys = rows.iter().map(|&i| split.train_y[i]).collect();
            let (l, c) = forward(&model, &split.train.select(&rows))?;
            (l, c, ys)
        };
        let (grads, _, _) = backward(&model, &cache, &targets)?;
        match cfg.optimizer {
            OptimizerKind::Sgd => sgd_update_in_place(model.params_mut(), &grads, cfg.eta, decay, None),
            OptimizerKind::Adamw => adamw_update_in_place(model.params_mut(), &grads, &mut adam, cfg.eta, decay)?,
        }
        step += 1;
        let v = model.squared_norm();
        if !(v <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                step: step as u64,
                value: v,
            });
        }
    }

    let mut record = summarise(cfg, trajectory, t_mem, t_grok);
    if !checkpoints.is_empty() {
        attach_spectra(&mut record, checkpoints, cfg.spectral_coverage)?;
    }
    Ok(record)
}

fn summarise(
    cfg: &ExperimentConfig,
    trajectory: Vec<TrajectoryPoint>,
    t_mem: Option<usize>,
    t_grok: Option<usize>,
) -> RunRecord {
    let at = |s: usize| trajectory.iter().find(|p| p.step == s).map(|p| p.v_sq_norm);
    let v_init = trajectory.first().map_or(0.0, |p| p.v_sq_norm);
    let v_final = trajectory.last().map_or(0.0, |p| p.v_sq_norm);
    let v_mem = t_mem.and_then(at);
    let v_post_at_grok = t_grok.and_then(at);
    let delay = match (t_mem, t_grok) {
        (Some(m), Some(g)) => Some(g as i64 - m as i64),
        _ => None,
    };
    let fit = match (t_mem, t_grok) {
        (Some(m), Some(g)) if g > m => {
            let window: Vec<&TrajectoryPoint> = trajectory.iter().filter(|p| p.step >= m && p.step <= g).collect();
            if window.len() >= MIN_FIT_POINTS {
                let t: Vec<f64> = window.iter().map(|p| (p.step - m) as f64).collect();
                let v: Vec<f64> = window.iter().map(|p| p.v_sq_norm).collect();
                fit_exponential_sampled(&t, &v).ok()
            } else {
                None
            }
        }
        _ => None,
    };
    let tau_detect = t_mem.and_then(|m| detect(cfg, &trajectory, m, t_grok));
    RunRecord {
        schema_version: schema_version(),
        run_id: cfg.run_id(),
        axis_value: None,
        config: cfg.clone(),
        t_mem,
        t_grok,
        delay,
        v_init,
        v_mem,
        v_post_at_grok,
        v_final,
        fit,
        grokked: t_grok.is_some(),
        tau_detect,
        spectral_support: None,
        checkpoints: Vec::new(),
        trajectory,
    }
}

/// First logged step after `t_mem` at which the accumulated validation-loss
/// excess over the final-window level reaches `ln(classes/δ)`.
///
/// The final window is the post-grok stretch when there is one, otherwise the
/// last tenth of the run.
fn detect(cfg: &ExperimentConfig, traj: &[TrajectoryPoint], t_mem: usize, t_grok: Option<usize>) -> Option<usize> {
    let tail: Vec<f64> = match t_grok {
        Some(g) => traj.iter().filter(|p| p.step >= g).map(|p| p.val_loss).collect(),
        None => {
            let k = (traj.len() / 10).max(1);
            traj[traj.len() - k..].iter().map(|p| p.val_loss).collect()
        }
    };
    let post = tail.iter().sum::<f64>() / tail.len() as f64;
    let threshold = gamma_threshold(cfg.num_classes(), cfg.delta);
    let mut s = 0.0;
    for p in traj.iter().filter(|p| p.step > t_mem) {
        s += (p.val_loss - post) * cfg.eval_every as f64;
        if s >= threshold {
            return Some(p.step);
        }
    }
    None
}

/// Chooses the support from post-grok spectra (or the last spectrum when the
/// run never groks) and fills `r_value` at every checkpoint.
pub fn attach_spectra(record: &mut RunRecord, checkpoints: Vec<SpectralCheckpoint>, coverage: f64) -> Result<()> {
    let basis: Vec<SpectrumReport> = match record.t_grok {
        Some(g) => checkpoints
            .iter()
            .filter(|c| c.step >= g)
            .map(|c| c.spectrum.clone())
            .collect(),
        None => Vec::new(),
    };
    let basis = if basis.is_empty() {
        checkpoints.last().map(|c| vec![c.spectrum.clone()]).unwrap_or_default()
    } else {
        basis
    };
    let support = select_support(&basis, coverage)?;
    let mut filled = Vec::with_capacity(checkpoints.len());
    for c in checkpoints {
        let spectrum = c.spectrum.with_support(support.clone());
        if let Ok(i) = record.trajectory.binary_search_by_key(&c.step, |p| p.step) {
            record.trajectory[i].r_value = spectrum.r_value;
        }
        filled.push(SpectralCheckpoint { step: c.step, spectrum });
    }
    record.spectral_support = Some(support);
    record.checkpoints = filled;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            p: 5,
            max_steps: 40,
            eval_every: 5,
            spectral_every: 10,
            post_grok_steps: 10,
            ..Default::default()
        };
        c.model.d_e = 4;
        c.model.hidden = 8;
        c
    }

    #[test]
    fn deterministic() {
        let a = run_training(&tiny()).unwrap();
        let b = run_training(&tiny()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory, b.trajectory);
        assert!(a.trajectory.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn spectra_fill_r_values() {
        let r = run_training(&tiny()).unwrap();
        assert!(r.spectral_support.is_some());
        let logged = r.trajectory.iter().filter(|p| p.r_value.is_some()).count();
        assert_eq!(logged, r.checkpoints.len());
        assert!(r.trajectory.iter().all(|p| p.r_value.is_none_or(|v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn invariants_of_summary() {
        let r = run_training(&tiny()).unwrap();
        assert_eq!(r.grokked, r.t_grok.is_some());
        assert_eq!(r.delay.is_some(), r.t_mem.is_some() && r.t_grok.is_some());
        if let Some(m) = r.t_mem {
            assert_eq!(r.v_mem, Some(r.point_at(m).unwrap().v_sq_norm));
        }
    }

    #[test]
    fn minibatch_and_parity_paths() {
        let mut c = tiny();
        c.batch_size = 4;
        run_training(&c).unwrap();
        let mut p = ExperimentConfig {
            task: Task::Parity,
            n: 6,
            max_steps: 10,
            eval_every: 5,
            ..Default::default()
        };
        p.parity.num_train = 20;
        p.parity.num_val = 20;
        p.parity.hidden = 8;
        let r = run_training(&p).unwrap();
        assert!(r.checkpoints.is_empty());
    }

    #[test]
    fn detection_threshold_on_constructed_trajectory() {
        let cfg = ExperimentConfig {
            p: 23,
            eval_every: 10,
            ..Default::default()
        };
        let mk = |step, val_loss| TrajectoryPoint {
            step,
            train_loss: 0.0,
            val_loss,
            train_acc: 1.0,
            val_acc: 0.0,
            v_sq_norm: 1.0,
            r_value: None,
        };
        // gap of 0.2 per logged point worth 10 steps each: 2.0 per point,
        // threshold ln(460) ≈ 6.13 is crossed at the fourth point after t_mem
        let traj: Vec<TrajectoryPoint> = (0..10).map(|i| mk(i * 10, if i < 8 { 0.3 } else { 0.1 })).collect();
        assert_eq!(detect(&cfg, &traj, 0, Some(80)), Some(40));
    }
}
