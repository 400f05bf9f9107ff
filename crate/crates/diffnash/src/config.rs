//! Run configuration: a single TOML document with explicit defaults,
//! strict unknown-key rejection, dotted-path overrides, and a resolved
//! echo so any run can be re-launched from its output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::Architecture;
use crate::losses::LossConfig;
use crate::oracles::{IntransitiveOracle, Oracle, ScoreOracle};
use crate::schedule::NoiseSchedule;
use crate::toydata::{MixtureSpec, PromptMixture};
use crate::Error;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub denoiser: DenoiserSection,
    pub mixture: MixtureSection,
    pub oracles: Vec<OracleSection>,
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out_dir() -> String {
    "runs/out".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { t_max: 100, beta_start: 1e-4, beta_end: 0.02 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSection {
    pub hidden: usize,
    pub depth: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        DenoiserSection { hidden: 64, depth: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub std: f64,
    pub prompts: Vec<PromptSection>,
    /// Prompt sampling weights; uniform when omitted.
    #[serde(default)]
    pub prompt_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum OracleSection {
    Score {
        /// One target point per prompt.
        targets: Vec<Vec<f64>>,
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
    Intransitive {
        /// One sector center per prompt.
        centers: Vec<Vec<f64>>,
        #[serde(default = "default_sectors")]
        sectors: usize,
    },
}

fn default_kappa() -> f64 {
    1.0
}

fn default_sectors() -> usize {
    3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Npo,
    Dpo,
    Selfplay,
    Sft,
    InpoSq,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub name: LossName,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_effective_weight")]
    pub effective_weight: f64,
    /// Target margin of the squared-distance variant; 1/(2 eta) when unset.
    #[serde(default)]
    pub target_margin: Option<f64>,
}

fn default_beta() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.5
}
fn default_eta() -> f64 {
    1.0
}
fn default_effective_weight() -> f64 {
    500.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub prompts_per_step: usize,
    pub candidates: usize,
    pub inference_steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: OptimizerName,
    pub inner_iters: usize,
    pub pretrain_epochs: usize,
    pub pretrain_samples_per_prompt: usize,
    pub pretrain_batch: usize,
    pub pretrain_learning_rate: f64,
    pub checkpoint_interval: usize,
    pub eval_interval: usize,
    /// Load the reference from this checkpoint instead of pretraining.
    #[serde(default)]
    pub ref_checkpoint: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 200,
            prompts_per_step: 16,
            candidates: 8,
            inference_steps: 10,
            learning_rate: 1e-6,
            momentum: 0.9,
            optimizer: OptimizerName::Sgd,
            inner_iters: 1,
            pretrain_epochs: 400,
            pretrain_samples_per_prompt: 512,
            pretrain_batch: 128,
            pretrain_learning_rate: 3e-3,
            checkpoint_interval: 100,
            eval_interval: 50,
            ref_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Paired comparisons per prompt in win-rate reports.
    pub n_per_prompt: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n_per_prompt: 64 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Parse with `key.path=value` overrides applied before validation.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, Error> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (path, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not path=value")))?;
            apply_override(&mut value, path.trim(), raw.trim())?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved document with all defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn n_prompts(&self) -> usize {
        self.mixture.prompts.len()
    }

    pub fn sample_dim(&self) -> usize {
        self.mixture.prompts[0].means[0].len()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let c = self.n_prompts();
        self.build_mixture()?;
        self.build_schedule()?;
        self.build_loss_config()?;
        if self.oracles.is_empty() {
            return Err(Error::Config("oracles: need at least one".into()));
        }
        for (i, o) in self.oracles.iter().enumerate() {
            match o {
                OracleSection::Score { targets, .. } => {
                    if targets.len() != c {
                        return Err(Error::Config(format!(
                            "oracles[{i}].targets: expected {c} entries (one per prompt), got {}",
                            targets.len()
                        )));
                    }
                    if targets.iter().any(|t| t.len() != self.sample_dim()) {
                        return Err(Error::Config(format!(
                            "oracles[{i}].targets: dimension mismatch with mixture"
                        )));
                    }
                }
                OracleSection::Intransitive { centers, sectors } => {
                    if centers.len() != c {
                        return Err(Error::Config(format!(
                            "oracles[{i}].centers: expected {c} entries, got {}",
                            centers.len()
                        )));
                    }
                    if *sectors < 3 {
                        return Err(Error::Config(format!(
                            "oracles[{i}].sectors: need at least 3"
                        )));
                    }
                }
            }
        }
        if let Some(w) = &self.mixture.prompt_weights {
            if w.len() != c {
                return Err(Error::Config(format!(
                    "mixture.prompt_weights: expected {c} entries, got {}",
                    w.len()
                )));
            }
        }
        let t = &self.train;
        if t.candidates < 2 {
            return Err(Error::Config("train.candidates: need at least 2".into()));
        }
        if t.inference_steps < 1 || t.inference_steps > self.schedule.t_max {
            return Err(Error::Config(format!(
                "train.inference_steps: must be in 1..={}",
                self.schedule.t_max
            )));
        }
        if !(t.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate: must be > 0".into()));
        }
        if t.inner_iters < 1 {
            return Err(Error::Config("train.inner_iters: must be >= 1".into()));
        }
        if self.eval.n_per_prompt < 1 {
            return Err(Error::Config("eval.n_per_prompt: must be >= 1".into()));
        }
        Ok(())
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule, Error> {
        NoiseSchedule::linear(
            self.schedule.t_max,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )
    }

    pub fn build_mixture(&self) -> Result<MixtureSpec, Error> {
        MixtureSpec::new(
            self.mixture
                .prompts
                .iter()
                .map(|p| PromptMixture { means: p.means.clone(), weights: p.weights.clone() })
                .collect(),
            self.mixture.std,
        )
    }

    pub fn build_oracles(&self) -> Result<Vec<Oracle>, Error> {
        self.oracles
            .iter()
            .map(|o| match o {
                OracleSection::Score { targets, kappa } => Ok(Oracle::Score(ScoreOracle {
                    targets: targets.clone(),
                    kappa: *kappa,
                })),
                OracleSection::Intransitive { centers, sectors } => Ok(Oracle::Intransitive(
                    IntransitiveOracle::new(centers.clone(), *sectors)?,
                )),
            })
            .collect()
    }

    pub fn build_loss_config(&self) -> Result<LossConfig, Error> {
        LossConfig::new(
            self.loss.beta,
            self.loss.tau,
            self.loss.eta,
            self.loss.effective_weight,
        )
    }

    pub fn target_margin(&self) -> f64 {
        self.loss.target_margin.unwrap_or(1.0 / (2.0 * self.loss.eta))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            sample_dim: self.sample_dim(),
            hidden: self.denoiser.hidden,
            depth: self.denoiser.depth,
            n_prompts: self.n_prompts(),
        }
    }

    pub fn prompt_weights(&self) -> Vec<f64> {
        match &self.mixture.prompt_weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.n_prompts() as f64; self.n_prompts()],
        }
    }
}

fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<(), Error> {
    let parsed: toml::Value = match raw.parse::<i64>() {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => match raw.parse::<f64>() {
            Ok(v) => toml::Value::Float(v),
            Err(_) => match raw {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                _ => {
                    // Accept both quoted and bare strings.
                    let s = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(raw);
                    toml::Value::String(s.to_string())
                }
            },
        },
    };
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}': not a table")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

/// The default toy experiment: four prompts, two-component mixtures, and a
/// score oracle whose target sits on one component of each mixture.
pub fn default_toy_toml() -> String {
    r#"seed = 1
out_dir = "runs/toy"

[schedule]
t_max = 100
beta_start = 1e-4
beta_end = 0.02

[denoiser]
hidden = 64
depth = 2

[mixture]
std = 0.25

[[mixture.prompts]]
means = [[1.5, 0.0], [-1.5, 0.0]]
weights = [0.5, 0.5]

[[mixture.prompts]]
means = [[0.0, 1.5], [0.0, -1.5]]
weights = [0.5, 0.5]

[[mixture.prompts]]
means = [[1.0, 1.0], [-1.0, -1.0]]
weights = [0.5, 0.5]

[[mixture.prompts]]
means = [[-1.0, 1.0], [1.0, -1.0]]
weights = [0.5, 0.5]

[[oracles]]
kind = "score"
targets = [[1.5, 0.0], [0.0, 1.5], [1.0, 1.0], [-1.0, 1.0]]
kappa = 1.0

[loss]
name = "npo"
beta = 1.0
tau = 0.5
eta = 1.0
effective_weight = 500.0

[train]
steps = 200
prompts_per_step = 16
candidates = 8
inference_steps = 10
learning_rate = 1e-6
momentum = 0.9
optimizer = "sgd"
inner_iters = 1
pretrain_epochs = 400
pretrain_samples_per_prompt = 512
pretrain_batch = 128
pretrain_learning_rate = 3e-3
checkpoint_interval = 100
eval_interval = 50

[eval]
n_per_prompt = 64
"#
    .to_string()
}
