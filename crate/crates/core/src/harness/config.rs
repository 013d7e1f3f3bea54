use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::{Activation, ModOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ModAdd,
    ModMul,
    Parity,
}

impl Task {
    pub fn mod_op(self) -> Option<ModOp> {
        match self {
            Task::ModAdd => Some(ModOp::Add),
            Task::ModMul => Some(ModOp::Mul),
            Task::Parity => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

/// How the configured `lambda` maps onto the decay actually applied.
///
/// `w_eq_2lambda` treats `lambda` as the coefficient of `lambda·‖θ‖²`, so
/// each step shrinks `θ` by `2ηλ`; `w_eq_lambda` shrinks by `ηλ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WdConvention {
    WEqLambda,
    #[serde(rename = "w_eq_2lambda")]
    WEq2lambda,
}

macro_rules! snake_display {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match serde_json::to_value(self) {
                    Ok(Value::String(s)) => f.write_str(&s),
                    _ => Err(fmt::Error),
                }
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(Value::String(s.to_string()))
                    .map_err(|_| Error::invalid(stringify!($t), format!("unknown value `{s}`")))
            }
        }
    };
}

snake_display!(Task);
snake_display!(OptimizerKind);
snake_display!(WdConvention);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_e: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Multiplier on the `1/sqrt(fan_in)` initialisation.
    pub init_scale: f64,
    /// Std of the embedding tables before `init_scale`. A large value puts
    /// the starting point far from the low-norm solutions without inflating
    /// the dense layers.
    pub embed_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_e: 48,
            hidden: 256,
            activation: Activation::Quadratic,
            init_scale: 1.0,
            embed_std: 3.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParityConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub hidden: usize,
    /// Replaces `model.init_scale`. Starting below the solution norm lets
    /// the norm grow through memorisation.
    pub init_scale: f64,
}

impl Default for ParityConfig {
    fn default() -> Self {
        Self {
            num_train: 4096,
            num_val: 4096,
            hidden: 256,
            init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Modulus for the modular tasks.
    pub p: usize,
    /// Input bits for parity.
    pub n: usize,
    pub train_frac: f64,
    pub optimizer: OptimizerKind,
    pub wd_convention: WdConvention,
    pub eta: f64,
    pub lambda: f64,
    /// AdamW moment decay rates and denominator offset.
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Minibatch size; 0 means the full training set.
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Spectrum cadence in steps; 0 disables it. Must be a multiple of `eval_every`.
    pub spectral_every: usize,
    pub spectral_coverage: f64,
    pub acc_threshold: f64,
    pub post_grok_steps: usize,
    pub seed: u64,
    /// Confidence level in the detection threshold `ln(p/delta)`.
    pub delta: f64,
    pub model: ModelConfig,
    pub parity: ParityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::ModAdd,
            p: 23,
            n: 20,
            train_frac: 0.9,
            optimizer: OptimizerKind::Adamw,
            wd_convention: WdConvention::WEqLambda,
            eta: 1e-3,
            lambda: 1.0,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 5e-3,
            batch_size: 0,
            max_steps: 30_000,
            eval_every: 25,
            spectral_every: 0,
            spectral_coverage: 0.99,
            acc_threshold: 0.99,
            post_grok_steps: 500,
            seed: 0,
            delta: 0.05,
            model: ModelConfig::default(),
            parity: ParityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be positive and finite"))
            }
        };
        positive("eta", self.eta)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be ≥ 0 and finite"));
        }
        if !(self.acc_threshold > 0.5 && self.acc_threshold <= 1.0) {
            return Err(Error::invalid("acc_threshold", "must lie in (0.5, 1]"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        if self.max_steps == 0 || self.eval_every == 0 {
            return Err(Error::invalid("max_steps/eval_every", "must be ≥ 1"));
        }
        if self.spectral_every % self.eval_every != 0 {
            return Err(Error::invalid("spectral_every", "must be a multiple of eval_every"));
        }
        if !(self.spectral_coverage > 0.0 && self.spectral_coverage < 1.0) {
            return Err(Error::invalid("spectral_coverage", "must lie in (0, 1)"));
        }
        match self.task {
            Task::ModAdd | Task::ModMul => {
                if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
                    return Err(Error::invalid("train_frac", "must lie in (0, 1) so a validation split exists"));
                }
                if self.model.d_e == 0 || self.model.hidden == 0 {
                    return Err(Error::invalid("model", "d_e and hidden must be ≥ 1"));
                }
            }
            Task::Parity => {
                if self.parity.num_train == 0 || self.parity.num_val == 0 || self.parity.hidden == 0 {
                    return Err(Error::invalid("parity", "sizes must be ≥ 1"));
                }
            }
        }
        positive("model.init_scale", self.model.init_scale)?;
        positive("model.embed_std", self.model.embed_std)?;
        positive("parity.init_scale", self.parity.init_scale)?;
        positive("adam_eps", self.adam_eps)?;
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("beta1/beta2", "must lie in [0, 1)"));
        }
        if self.optimizer == OptimizerKind::Sgd && 2.0 * self.eta * self.decay_coefficient() >= 1.0 {
            return Err(Error::NonPositiveContraction(2.0 * self.eta * self.decay_coefficient()));
        }
        Ok(())
    }

    /// The `lambda` handed to the stepper, after the decay convention.
    ///
    /// The SGD stepper shrinks by `2ηλ` and AdamW by `ηλ`, so the convention
    /// halves or doubles accordingly.
    pub fn decay_coefficient(&self) -> f64 {
        match (self.optimizer, self.wd_convention) {
            (OptimizerKind::Sgd, WdConvention::WEq2lambda) => self.lambda,
            (OptimizerKind::Sgd, WdConvention::WEqLambda) => self.lambda / 2.0,
            (OptimizerKind::Adamw, WdConvention::WEqLambda) => self.lambda,
            (OptimizerKind::Adamw, WdConvention::WEq2lambda) => 2.0 * self.lambda,
        }
    }

    /// Number of output classes, which also sets the detection threshold.
    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::ModAdd | Task::ModMul => self.p,
            Task::Parity => 2,
        }
    }

    /// Applies `key=value` with a dotted key such as `model.hidden`.
    ///
    /// The value is read as JSON when it parses, and as a bare string
    /// otherwise. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::invalid("override", format!("unknown key `{key}`")))?;
        }
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *node = value;
        let next: ExperimentConfig = serde_json::from_value(tree)
            .map_err(|e| Error::invalid("override", format!("`{key}={raw}`: {e}")))?;
        *self = next;
        Ok(())
    }

    /// Applies a list of `key=value` strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid("override", format!("`{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<config>".into(),
            source: e,
        })
    }

    /// Short identifier used as the run directory name.
    pub fn run_id(&self) -> String {
        let size = match self.task {
            Task::Parity => format!("n{}", self.n),
            _ => format!("p{}", self.p),
        };
        let opt = match self.optimizer {
            OptimizerKind::Adamw => "adamw".to_string(),
            OptimizerKind::Sgd => format!("sgd-{}", self.wd_convention),
        };
        format!("{}_{}_{}_eta{}_lam{}_s{}", self.task, size, opt, self.eta, self.lambda, self.seed)
    }
}
