use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::describe::Method;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::gateway::GatewayConfig;
use crate::index::IndexConfig;
use crate::revival::RevivalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    /// Model identifier written into every feature reference.
    pub id: String,
    pub weights: PathBuf,
    pub config: PathBuf,
    pub tokenizer: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizerPaths {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    /// Tokens kept per document, BOS included.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescribeConfig {
    pub t_vocabproj: usize,
    pub t_tokenchange: usize,
    pub k_prompts: usize,
    pub prompt_len: usize,
    /// KL target for the TokenChange clamp value.
    pub tokenchange_kl: f64,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        Self {
            t_vocabproj: 50,
            t_tokenchange: 20,
            k_prompts: 32,
            prompt_len: 32,
            tokenchange_kl: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Feature specs used when the command line gives none.
    #[serde(default)]
    pub features: Vec<String>,
    /// Methods used when the command line gives none; all five by default.
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub model: ModelPaths,
    pub featurizers: FeaturizerPaths,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub describe: DescribeConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub revival: RevivalConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.model.weights);
        fix(&mut self.model.config);
        fix(&mut self.model.tokenizer);
        fix(&mut self.featurizers.manifest);
        fix(&mut self.corpus.path);
        if let Some(d) = self.templates_dir.as_mut() {
            fix(d);
        }
        if let Some(d) = self.gateway.cache_dir.as_mut() {
            fix(d);
        }
    }

    /// Replace every component seed with the global one.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.index.seed = seed;
        self.eval.seed = seed;
        self.revival.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.describe;
        if d.t_vocabproj == 0 || d.t_tokenchange == 0 || d.k_prompts == 0 || d.prompt_len == 0 {
            return Err(Error::Config("describe parameters must be positive".into()));
        }
        if !(d.tokenchange_kl > 0.0) {
            return Err(Error::Config("tokenchange_kl must be positive".into()));
        }
        self.eval.validate()?;
        self.revival.validate()?;
        for (what, p) in [
            ("model weights", &self.model.weights),
            ("model config", &self.model.config),
            ("tokenizer", &self.model.tokenizer),
            ("featurizer manifest", &self.featurizers.manifest),
            ("corpus", &self.corpus.path),
        ] {
            if !p.is_file() {
                return Err(Error::Usage(format!("{what} file {} does not exist", p.display())));
            }
        }
        self.default_methods()?;
        Ok(())
    }

    pub fn default_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Ok(Method::all());
        }
        self.methods.iter().map(|m| m.parse()).collect()
    }

    /// Hex sha256 of the effective configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
