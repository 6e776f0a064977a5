use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    #[default]
    Learned,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub context_length: usize,
    #[serde(default = "default_eps")]
    pub ln_eps: f32,
    #[serde(default)]
    pub positional: PositionalScheme,
    #[serde(default = "default_true")]
    pub layernorm_enabled: bool,
}

fn default_eps() -> f32 {
    1e-5
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidConfig("n_layers must be positive".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab_size must be at least 2".into()));
        }
        if self.context_length == 0 || self.d_mlp == 0 {
            return Err(Error::InvalidConfig("context_length and d_mlp must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn site_dim(&self, site: HookSite) -> usize {
        match site.kind {
            SiteKind::ResidualPost => self.d_model,
            SiteKind::MlpHidden => self.d_mlp,
        }
    }

    pub fn check_site(&self, site: HookSite) -> Result<()> {
        if site.layer >= self.n_layers {
            return Err(Error::UnknownSite(site.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SiteKind {
    ResidualPost,
    MlpHidden,
}

/// Location of a hidden vector: after a block's residual update, or the MLP
/// hidden layer after its nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HookSite {
    pub kind: SiteKind,
    pub layer: usize,
}

impl HookSite {
    pub fn resid_post(layer: usize) -> Self {
        Self { kind: SiteKind::ResidualPost, layer }
    }

    pub fn mlp_hidden(layer: usize) -> Self {
        Self { kind: SiteKind::MlpHidden, layer }
    }
}

impl fmt::Display for HookSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SiteKind::ResidualPost => "resid_post",
            SiteKind::MlpHidden => "mlp_hidden",
        };
        write!(f, "{kind}.{}", self.layer)
    }
}

impl FromStr for HookSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, layer) = s
            .split_once('.')
            .ok_or_else(|| Error::UnknownSite(s.to_string()))?;
        let layer = layer.parse().map_err(|_| Error::UnknownSite(s.to_string()))?;
        let kind = match kind {
            "resid_post" => SiteKind::ResidualPost,
            "mlp_hidden" | "mlp" => SiteKind::MlpHidden,
            _ => return Err(Error::UnknownSite(s.to_string())),
        };
        Ok(Self { kind, layer })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_parse_display() {
        for s in ["resid_post.0", "mlp_hidden.3"] {
            assert_eq!(s.parse::<HookSite>().unwrap().to_string(), s);
        }
        assert!("attn.0".parse::<HookSite>().is_err());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 10,
            d_mlp: 4,
            n_heads: 3,
            vocab_size: 8,
            context_length: 8,
            ln_eps: 1e-5,
            positional: PositionalScheme::Learned,
            layernorm_enabled: true,
        };
        assert!(cfg.validate().is_err());
    }
}
