//! Run configuration: one TOML document with data, model, training, sampling and eval sections.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synth::MotionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of original sequences before augmentation.
    pub sequences: usize,
    pub kinds: Vec<MotionKind>,
    pub min_frames: usize,
    pub max_frames: usize,
    pub mat_height: usize,
    pub mat_width: usize,
    pub meters_per_pixel: f64,
    pub footprint_sigma_px: f64,
    pub support_temperature: f64,
    /// Augmented copies added per training sequence.
    pub augment_copies: usize,
    pub contact_height: f64,
    pub contact_displacement: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sequences: 200,
            kinds: MotionKind::ALL.to_vec(),
            min_frames: 40,
            max_frames: 160,
            mat_height: 64,
            mat_width: 64,
            meters_per_pixel: 0.04,
            footprint_sigma_px: 2.0,
            support_temperature: 0.05,
            augment_copies: 1,
            contact_height: 0.05,
            contact_displacement: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub text_dim: usize,
    pub max_len: usize,
    pub diffusion_steps: usize,
    pub grid_channels: usize,
    pub shift_dim: usize,
    pub shift_channels: usize,
    /// Average-pool factor applied to pressure maps before the shift encoder.
    pub shift_pool: usize,
    pub traj_channels: usize,
    pub traj_hidden: usize,
    pub traj_pool: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 512,
            layers: 4,
            heads: 4,
            ff_dim: 1024,
            text_dim: 512,
            max_len: 196,
            diffusion_steps: 1000,
            grid_channels: 32,
            shift_dim: 256,
            shift_channels: 32,
            shift_pool: 2,
            traj_channels: 32,
            traj_hidden: 256,
            traj_pool: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub text_dropout: f64,
    pub lambda_diff: f64,
    pub lambda_cons: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub traj_lr: f64,
    pub traj_steps: usize,
    pub traj_batch_size: usize,
    pub backbone_lr: f64,
    pub backbone_steps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            weight_decay: 0.01,
            batch_size: 16,
            steps: 2000,
            text_dropout: 0.1,
            lambda_diff: 1.0,
            lambda_cons: 5.0,
            checkpoint_every: 500,
            log_every: 10,
            traj_lr: 1e-3,
            traj_steps: 1000,
            traj_batch_size: 8,
            backbone_lr: 1e-4,
            backbone_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub cfg_scale: f64,
    /// Multiply the control residual by the control strength at every sampling step.
    pub control_scaling: bool,
    pub batch_size: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            cfg_scale: 5.0,
            control_scaling: false,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cop_temperature: f64,
    pub skate_threshold: f64,
    pub traj_threshold: f64,
    pub r_precision_k: usize,
    pub r_precision_batch: usize,
    pub evaluator_dim: usize,
    pub evaluator_steps: usize,
    pub evaluator_lr: f64,
    pub evaluator_batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cop_temperature: 0.05,
            skate_threshold: 0.005,
            traj_threshold: 0.5,
            r_precision_k: 3,
            r_precision_batch: 32,
            evaluator_dim: 512,
            evaluator_steps: 600,
            evaluator_lr: 1e-3,
            evaluator_batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub sampling: SamplingConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let d = &self.data;
        if d.min_frames > d.max_frames || d.min_frames < 1 {
            return bad("data.min_frames must be in 1..=max_frames");
        }
        if d.kinds.is_empty() && d.sequences > 0 {
            return bad("data.kinds is empty");
        }
        if !(d.meters_per_pixel > 0.0) || d.mat_height == 0 || d.mat_width == 0 {
            return bad("mat size and scale must be positive");
        }
        let m = &self.model;
        if m.heads == 0 || m.latent_dim % m.heads != 0 {
            return bad("model.latent_dim must be divisible by model.heads");
        }
        if m.latent_dim % 2 != 0 || m.grid_channels % 2 != 0 || m.grid_channels < 2 {
            return bad("model.latent_dim and model.grid_channels must be even");
        }
        if m.diffusion_steps == 0 || m.layers == 0 || m.max_len == 0 {
            return bad("model.diffusion_steps, layers and max_len must be positive");
        }
        if m.shift_pool == 0 || m.traj_pool == 0 {
            return bad("pool factors must be positive");
        }
        if d.max_frames > m.max_len {
            return bad("data.max_frames exceeds model.max_len");
        }
        let t = &self.training;
        if !(0.0..=1.0).contains(&t.text_dropout) {
            return bad("training.text_dropout must be in [0, 1]");
        }
        if t.lambda_diff < 0.0 || t.lambda_cons < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if t.batch_size == 0 || t.traj_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.sampling.cfg_scale < 0.0 {
            return bad("sampling.cfg_scale must be non-negative");
        }
        if !(self.eval.cop_temperature > 0.0) {
            return bad("eval.cop_temperature must be positive");
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Dotted keys whose values differ between two configs.
    pub fn diff(&self, other: &RunConfig) -> Vec<String> {
        let a = flatten(&serde_json::to_value(self).expect("config serializes"));
        let b = flatten(&serde_json::to_value(other).expect("config serializes"));
        let mut keys: Vec<String> = a.keys().chain(b.keys()).cloned().collect();
        keys.sort();
        keys.dedup();
        keys.into_iter().filter(|k| a.get(k) != b.get(k)).collect()
    }

    pub fn ensure_same(&self, other: &RunConfig) -> Result<()> {
        let d = self.diff(other);
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(d))
        }
    }
}

fn flatten(v: &serde_json::Value) -> BTreeMap<String, serde_json::Value> {
    let mut out = BTreeMap::new();
    fn go(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, serde_json::Value>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    go(&key, x, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    go("", v, &mut out);
    out
}
