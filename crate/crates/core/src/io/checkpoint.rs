//! Checkpoint bundles: a directory holding `bundle.json` plus one safetensors file per component.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::write_atomic;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    pub frozen: bool,
    pub digest: String,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub config: RunConfig,
    pub config_digest: String,
    pub diffusion_steps: usize,
    pub step: usize,
    #[serde(default)]
    pub mode: Option<String>,
    pub components: BTreeMap<String, ComponentInfo>,
}

impl Bundle {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let b: Bundle = serde_json::from_str(&text).map_err(|e| Error::Meta {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if b.config.digest() != b.config_digest {
            return Err(Error::Checkpoint(format!("{}: config digest does not match stored config", path.display())));
        }
        Ok(b)
    }

    /// Rejects resuming under a different config, naming every differing key.
    pub fn ensure_config(&self, cfg: &RunConfig) -> Result<()> {
        self.config.ensure_same(cfg)
    }

    pub fn component(&self, name: &str) -> Result<&ComponentInfo> {
        self.components
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("bundle has no component {name}")))
    }

    /// Loads `name` into `set`, verifies its digest and restores the frozen flag.
    pub fn restore(&self, dir: &Path, name: &str, set: &mut ParamSet) -> Result<()> {
        let info = self.component(name)?;
        set.load(&dir.join(format!("{name}.safetensors")))?;
        let digest = set.digest()?;
        if digest != info.digest {
            return Err(Error::Checkpoint(format!("component {name}: digest {digest} does not match {}", info.digest)));
        }
        set.set_frozen(info.frozen);
        Ok(())
    }
}

/// Writes every component and then the bundle description, which is written last so a
/// partially written directory never looks complete.
pub fn save_bundle(
    dir: &Path,
    cfg: &RunConfig,
    step: usize,
    mode: Option<&str>,
    components: &[(&str, &ParamSet)],
) -> Result<Bundle> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut infos = BTreeMap::new();
    for (name, set) in components {
        let path = dir.join(format!("{name}.safetensors"));
        let tmp = dir.join(format!("{name}.safetensors.tmp"));
        set.save(&tmp)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        infos.insert(
            name.to_string(),
            ComponentInfo {
                frozen: set.is_frozen(),
                digest: set.digest()?,
                scalars: set.scalar_count(),
            },
        );
    }
    let bundle = Bundle {
        config: cfg.clone(),
        config_digest: cfg.digest(),
        diffusion_steps: cfg.model.diffusion_steps,
        step,
        mode: mode.map(str::to_string),
        components: infos,
    };
    write_atomic(&dir.join(BUNDLE_FILE), &serde_json::to_vec_pretty(&bundle)?)?;
    Ok(bundle)
}
