//! Pipeline configuration (TOML). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use moralchain::evalkit::ScoringMode;
use moralchain::{ClientPolicy, DecodingParams, EndpointConfig, Setting, TaskKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub grid: GridSection,
    /// Teacher endpoint for chain generation.
    pub teacher: Option<EndpointConfig>,
    /// Model under test. `model` may contain `{task}`, `{setting}`, `{size}`
    /// and `{seed}` placeholders, one fine-tuned model per grid cell.
    pub model: Option<EndpointConfig>,
    /// Name shown in report tables.
    #[serde(default = "default_label")]
    pub model_label: String,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default)]
    pub client: ClientPolicy,
    /// Regeneration attempts after a rejected teacher chain.
    #[serde(default = "default_regens")]
    pub max_regens: u32,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ppl: PplSection,
}

fn default_label() -> String {
    "model".into()
}

fn default_regens() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    /// Column-mapping TOML; the default headers are used when absent.
    pub schema: Option<PathBuf>,
    /// Held-out split; the main dataset is reused when absent.
    pub eval_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub tasks: Vec<TaskKind>,
    pub settings: Vec<Setting>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            tasks: TaskKind::ALL.to_vec(),
            settings: Setting::ALL.to_vec(),
            sizes: vec![5000, 10000, 23500],
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { cache_dir: "cache".into(), out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub scoring: ScoringMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PplSection {
    /// Held-out text files, one document per line. The evaluation
    /// situations are scored when empty.
    pub texts: Vec<PathBuf>,
    pub window: usize,
    pub stride: usize,
}

impl Default for PplSection {
    fn default() -> Self {
        Self { texts: Vec::new(), window: 512, stride: 512 }
    }
}

/// A loaded config with its digest and base directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub base: PathBuf,
    pub digest: String,
}

impl Loaded {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
        let config: PipelineConfig = toml::from_str(text).context("parsing config")?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let loaded = Self { config, base, digest: hex::encode(Sha256::digest(&bytes)) };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.out_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.cache_dir)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        let g = &c.grid;
        if g.tasks.is_empty() || g.settings.is_empty() {
            bail!("grid.tasks and grid.settings must be nonempty");
        }
        if g.seeds.is_empty() {
            bail!("grid.seeds must be nonempty");
        }
        if g.sizes.is_empty() || g.sizes.contains(&0) {
            bail!("grid.sizes must be nonempty and positive");
        }
        if c.ppl.window == 0 || c.ppl.stride == 0 || c.ppl.stride > c.ppl.window {
            bail!("ppl.stride must be in 1..=ppl.window");
        }
        if c.client.max_in_flight == 0 {
            bail!("client.max_in_flight must be at least 1");
        }
        let mut must_exist = vec![&c.dataset.path];
        must_exist.extend(&c.dataset.schema);
        must_exist.extend(&c.dataset.eval_path);
        must_exist.extend(&c.ppl.texts);
        for p in must_exist {
            let r = self.resolve(p);
            if !r.exists() {
                bail!("path does not exist: {}", r.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c: PipelineConfig = toml::from_str("[dataset]\npath = \"d.csv\"\n").unwrap();
        assert_eq!(c.grid.seeds, vec![1, 2, 3]);
        assert_eq!(c.grid.settings.len(), 3);
        assert_eq!(c.client.max_in_flight, 8);
        assert_eq!(c.ppl.window, 512);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[dataset]\npath = \"d\"\nbogus = 1\n").is_err());
    }
}
