use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ActivationKind, FeaturizerParams, Sae};
use crate::error::{Error, Result};
use crate::model::{HookSite, ModelConfig};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FeaturizerKind {
    Neuron,
    Sae { sae_id: String },
}

impl From<FeaturizerKind> for String {
    fn from(k: FeaturizerKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for FeaturizerKind {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Err("empty featurizer name".into());
        }
        Ok(if s == "neuron" { Self::Neuron } else { Self::Sae { sae_id: s } })
    }
}

impl fmt::Display for FeaturizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Neuron => f.write_str("neuron"),
            Self::Sae { sae_id } => f.write_str(sae_id),
        }
    }
}

/// Identity of one feature: model, hook site, featurizer and index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureRef {
    #[serde(rename = "model")]
    pub model_id: String,
    pub site: HookSite,
    pub featurizer: FeaturizerKind,
    pub index: usize,
}

impl fmt::Display for FeatureRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}@{}/{}", self.model_id, self.featurizer, self.site, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub site: HookSite,
    pub activation: ActivationKind,
    pub k: usize,
}

/// JSON manifest: `sae_id → {file, site, activation, k}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SaeManifest {
    pub saes: BTreeMap<String, ManifestEntry>,
}

impl SaeManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
struct LoadedSae {
    site: HookSite,
    params: Arc<FeaturizerParams>,
}

/// Loaded featurizers for one model, plus on-demand neuron bases.
#[derive(Debug, Clone)]
pub struct FeaturizerSet {
    model_id: String,
    config: ModelConfig,
    saes: BTreeMap<String, LoadedSae>,
}

impl FeaturizerSet {
    pub fn new(model_id: impl Into<String>, config: ModelConfig) -> Self {
        Self {
            model_id: model_id.into(),
            config,
            saes: BTreeMap::new(),
        }
    }

    /// Load every SAE in the manifest; relative files resolve against `base_dir`.
    pub fn from_manifest(
        model_id: impl Into<String>,
        config: ModelConfig,
        manifest: &SaeManifest,
        base_dir: &Path,
    ) -> Result<Self> {
        let mut set = Self::new(model_id, config);
        for (id, entry) in &manifest.saes {
            let sae = Sae::load(base_dir.join(&entry.file), entry.activation)?;
            if sae.w_enc().ncols() != entry.k {
                return Err(Error::ShapeMismatch {
                    name: format!("{id}.W_enc"),
                    expected: vec![sae.w_enc().nrows(), entry.k],
                    actual: sae.w_enc().shape().to_vec(),
                });
            }
            set.insert_sae(id.clone(), entry.site, sae)?;
        }
        Ok(set)
    }

    pub fn insert_sae(&mut self, sae_id: impl Into<String>, site: HookSite, sae: Sae) -> Result<()> {
        self.config.check_site(site)?;
        let params = FeaturizerParams::Sae(sae);
        let dim = self.config.site_dim(site);
        if params.input_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: params.input_dim(),
            });
        }
        self.saes.insert(sae_id.into(), LoadedSae { site, params: Arc::new(params) });
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn sae_ids(&self) -> impl Iterator<Item = &str> {
        self.saes.keys().map(String::as_str)
    }

    pub fn sae_site(&self, sae_id: &str) -> Option<HookSite> {
        self.saes.get(sae_id).map(|s| s.site)
    }

    /// Resolve and validate a feature reference.
    pub fn params(&self, feature: &FeatureRef) -> Result<Arc<FeaturizerParams>> {
        if feature.model_id != self.model_id {
            return Err(Error::Precondition(format!(
                "feature {feature} belongs to another model than `{}`",
                self.model_id
            )));
        }
        self.config.check_site(feature.site)?;
        let params = match &feature.featurizer {
            FeaturizerKind::Neuron => Arc::new(FeaturizerParams::Neuron {
                dim: self.config.site_dim(feature.site),
            }),
            FeaturizerKind::Sae { sae_id } => {
                let loaded = self
                    .saes
                    .get(sae_id)
                    .ok_or_else(|| Error::Config(format!("unknown SAE `{sae_id}`")))?;
                if loaded.site != feature.site {
                    return Err(Error::UnknownSite(format!(
                        "{} (SAE `{sae_id}` reads {})",
                        feature.site, loaded.site
                    )));
                }
                loaded.params.clone()
            }
        };
        if feature.index >= params.width() {
            return Err(Error::IndexOutOfRange {
                index: feature.index,
                size: params.width(),
            });
        }
        Ok(params)
    }

    pub fn sae_feature(&self, sae_id: &str, index: usize) -> Result<FeatureRef> {
        let site = self
            .sae_site(sae_id)
            .ok_or_else(|| Error::Config(format!("unknown SAE `{sae_id}`")))?;
        let f = FeatureRef {
            model_id: self.model_id.clone(),
            site,
            featurizer: FeaturizerKind::Sae { sae_id: sae_id.to_string() },
            index,
        };
        self.params(&f)?;
        Ok(f)
    }

    pub fn neuron_feature(&self, site: HookSite, index: usize) -> Result<FeatureRef> {
        let f = FeatureRef {
            model_id: self.model_id.clone(),
            site,
            featurizer: FeaturizerKind::Neuron,
            index,
        };
        self.params(&f)?;
        Ok(f)
    }

    /// Width of the featurizer a feature belongs to.
    pub fn width_of(&self, feature: &FeatureRef) -> Result<usize> {
        Ok(self.params(feature)?.width())
    }

    /// Parse `<sae_id>/<spec>` or `neuron@<site>/<spec>`, where `<spec>` is an
    /// index, an inclusive range `a-b`, or `*`.
    pub fn parse_features(&self, spec: &str) -> Result<Vec<FeatureRef>> {
        let (featurizer, indices) = spec
            .rsplit_once('/')
            .ok_or_else(|| Error::Config(format!("bad feature spec `{spec}`")))?;
        let (kind, site) = match featurizer.split_once('@') {
            Some(("neuron", site)) => (FeaturizerKind::Neuron, site.parse::<HookSite>()?),
            Some(_) => return Err(Error::Config(format!("bad feature spec `{spec}`"))),
            None => {
                let site = self
                    .sae_site(featurizer)
                    .ok_or_else(|| Error::Config(format!("unknown SAE `{featurizer}`")))?;
                (FeaturizerKind::Sae { sae_id: featurizer.to_string() }, site)
            }
        };
        let template = FeatureRef {
            model_id: self.model_id.clone(),
            site,
            featurizer: kind,
            index: 0,
        };
        let width = self.width_of(&template)?;
        let bad = || Error::Config(format!("bad feature index spec `{indices}`"));
        let range = match indices {
            "*" => 0..width,
            s => match s.split_once('-') {
                Some((a, b)) => {
                    let a: usize = a.parse().map_err(|_| bad())?;
                    let b: usize = b.parse().map_err(|_| bad())?;
                    a..b + 1
                }
                None => {
                    let i: usize = s.parse().map_err(|_| bad())?;
                    i..i + 1
                }
            },
        };
        range
            .map(|index| {
                let f = FeatureRef { index, ..template.clone() };
                self.params(&f).map(|_| f)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_ref_json_shape() {
        let f = FeatureRef {
            model_id: "toy".into(),
            site: HookSite::resid_post(1),
            featurizer: FeaturizerKind::Sae { sae_id: "s".into() },
            index: 4,
        };
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"model": "toy", "site": {"kind": "ResidualPost", "layer": 1}, "featurizer": "s", "index": 4})
        );
        let back: FeatureRef = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
