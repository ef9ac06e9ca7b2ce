//! The run configuration document (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swwae::data::AugmentSpec;
use swwae::layers::{ConvSpec, PoolSpec};
use swwae::net::{HeadSpec, InitSpec, MacroLayerSpec, NetworkConfig, OutputNonlinearity, SwitchMode, Variant};
use swwae::train::{LrSchedule, SgdConfig, TrainPlan};
use swwae::Precision;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: String,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainSection,
}

fn default_precision() -> String {
    "f32".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Hold out the last `holdout` training images as the test split when no
    /// test files are given.
    #[serde(default)]
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSection {
    pub out: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSection {
    pub convs: Vec<ConvSection>,
    #[serde(default = "two")]
    pub pool: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gammas {
    Fixed(Vec<f64>),
    Auto(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub input: [usize; 3],
    pub classes: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub variant: Variant,
    #[serde(default = "known")]
    pub switches: SwitchMode,
    #[serde(default = "unit")]
    pub lambda: f64,
    /// Per-macro-layer weights, or `"auto"` to balance them on a probe batch.
    pub gammas: Gammas,
    #[serde(default = "unit")]
    pub gamma_target: f64,
    #[serde(default)]
    pub decoder_output: OutputNonlinearity,
    pub conv_std: Option<f64>,
    #[serde(default = "dense_std")]
    pub dense_std: f64,
    pub macro_layers: Vec<MacroSection>,
}

fn known() -> SwitchMode {
    SwitchMode::Known
}

fn unit() -> f64 {
    1.0
}

fn dense_std() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub lr: Option<f64>,
    #[serde(default = "momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: Option<usize>,
    pub iterations: Option<u64>,
    pub epochs: Option<f64>,
    #[serde(default = "constant")]
    pub schedule: LrSchedule,
    /// Step 2 only: per-macro-layer rate multipliers.
    #[serde(default)]
    pub layer_lr: Vec<f64>,
}

fn momentum() -> f64 {
    0.9
}

fn constant() -> LrSchedule {
    LrSchedule::Constant
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Checkpoint whose encoder and head initialise the network.
    pub init_from: Option<PathBuf>,
    pub augment: Option<AugmentSpec>,
    #[serde(default = "divergence")]
    pub divergence_factor: f64,
    #[serde(default)]
    pub validate_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    pub step2: Option<SgdSection>,
    pub step3: Option<SgdSection>,
    pub step4: Option<SgdSection>,
}

fn divergence() -> f64 {
    1e3
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    CliError::Config(msg.into()).into()
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.data.train_images);
        fix(&mut self.data.train_labels);
        for p in [&mut self.data.test_images, &mut self.data.test_labels, &mut self.train.init_from]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn check(&self) -> anyhow::Result<()> {
        let mut inputs = vec![&self.data.train_images, &self.data.train_labels];
        match (&self.data.test_images, &self.data.test_labels) {
            (Some(i), Some(l)) => inputs.extend([i, l]),
            (None, None) => {}
            _ => return Err(config_error("data.test_images and data.test_labels must be given together")),
        }
        for p in inputs {
            if !p.is_file() {
                return Err(config_error(format!("input file {} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.train.init_from {
            if !p.is_dir() {
                return Err(config_error(format!("train.init_from {} does not exist", p.display())));
            }
        }
        self.precision()?;
        if let Gammas::Auto(s) = &self.network.gammas {
            if s != "auto" {
                return Err(config_error(format!("network.gammas must be a list or \"auto\", got \"{s}\"")));
            }
        }
        self.network_config(None)?.validate()?;
        Ok(())
    }

    pub fn precision(&self) -> anyhow::Result<Precision> {
        match self.precision.as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(config_error(format!("precision must be \"f32\" or \"f64\", got \"{other}\""))),
        }
    }

    pub fn auto_gammas(&self) -> bool {
        matches!(self.network.gammas, Gammas::Auto(_))
    }

    /// The network description. With `"auto"` weights the placeholder is
    /// all ones unless resolved weights are supplied.
    pub fn network_config(&self, resolved: Option<&[f64]>) -> anyhow::Result<NetworkConfig> {
        let n = &self.network;
        let depth = n.macro_layers.len();
        let gammas = match (resolved, &n.gammas) {
            (Some(g), _) => g.to_vec(),
            (None, Gammas::Fixed(g)) => g.clone(),
            (None, Gammas::Auto(_)) => vec![1.0; depth],
        };
        let mut channels = n.input[0];
        let mut macro_layers = Vec::with_capacity(depth);
        for m in &n.macro_layers {
            let mut convs = Vec::with_capacity(m.convs.len());
            for c in &m.convs {
                convs.push(ConvSpec::new(channels, c.out, c.kernel, c.stride, c.pad));
                channels = c.out;
            }
            macro_layers.push(MacroLayerSpec {
                convs,
                pool: PoolSpec::square(m.pool),
            });
        }
        Ok(NetworkConfig {
            input: n.input,
            macro_layers,
            head: HeadSpec {
                hidden: n.hidden.clone(),
                classes: n.classes,
            },
            variant: n.variant,
            switch_mode: n.switches,
            lambda: n.lambda,
            gammas,
            decoder_output: n.decoder_output,
            init: InitSpec {
                conv_std: n.conv_std,
                dense_std: n.dense_std,
            },
        })
    }

    /// Hash of the network section as written (placeholder weights when
    /// `"auto"`), stored in checkpoints.
    pub fn config_hash(&self) -> anyhow::Result<String> {
        Ok(self.network_config(None)?.hash())
    }

    /// Optimiser settings; `train_len` turns epoch counts into iterations.
    pub fn plan(&self, train_len: usize) -> anyhow::Result<TrainPlan> {
        let t = &self.train;
        let section = |s: &Option<SgdSection>, name: &str, batch: usize, lr: Option<f64>| -> anyhow::Result<SgdConfig> {
            let Some(s) = s else {
                return Ok(SgdConfig::new(lr.unwrap_or(1e-3), batch, 0));
            };
            let batch_size = s.batch_size.unwrap_or(batch);
            let lr = s
                .lr
                .or(lr)
                .ok_or_else(|| config_error(format!("train.{name}.lr is required")))?;
            let iterations = match (s.iterations, s.epochs) {
                (Some(i), None) => i,
                (None, Some(e)) if e >= 0.0 => (e * train_len as f64 / batch_size.max(1) as f64).ceil() as u64,
                (None, None) => 0,
                _ => {
                    return Err(config_error(format!(
                        "train.{name}: give exactly one of iterations and a non-negative epochs"
                    )))
                }
            };
            if name != "step2" && !s.layer_lr.is_empty() {
                return Err(config_error(format!("train.{name}.layer_lr is only valid for step2")));
            }
            let sgd = SgdConfig {
                lr,
                momentum: s.momentum,
                weight_decay: s.weight_decay,
                batch_size,
                iterations,
                schedule: s.schedule,
            };
            sgd.validate().map_err(|e| config_error(format!("train.{name}: {e}")))?;
            Ok(sgd)
        };
        let step2 = section(&t.step2, "step2", 16, None)?;
        let step3 = section(&t.step3, "step3", 16, Some(step2.lr))?;
        let step4 = section(&t.step4, "step4", 64, Some(step2.lr * 0.1))?;
        let layer_lr = t.step2.as_ref().map(|s| s.layer_lr.clone()).unwrap_or_default();
        if !layer_lr.is_empty() && layer_lr.len() != self.network.macro_layers.len() {
            return Err(config_error(format!(
                "train.step2.layer_lr has {} entries for {} macro-layers",
                layer_lr.len(),
                self.network.macro_layers.len()
            )));
        }
        Ok(TrainPlan {
            step2,
            step2_layer_lr: layer_lr,
            step3,
            step4,
            seed: self.seed,
            augment: t.augment,
            divergence_factor: t.divergence_factor,
            validate_every: t.validate_every,
            checkpoint_every: t.checkpoint_every,
        })
    }
}
