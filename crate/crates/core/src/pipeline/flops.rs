//! Heuristic compute cost of each description method, using the common
//! `6·N` FLOPs-per-token rule for model passes.

use serde::{Deserialize, Serialize};

use crate::describe::{BaseMethod, Method};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub n_nonembed_params: f64,
    pub corpus_tokens: f64,
    pub feature_count: f64,
    pub d_model: f64,
    pub vocab_size: f64,
    pub k_prompts: f64,
    pub prompt_len: f64,
}

impl CostModel {
    /// Attention (4·d²) and MLP (2·d·d_mlp) weights per layer; biases and
    /// norms are ignored.
    pub fn nonembed_params(config: &ModelConfig) -> f64 {
        let d = config.d_model as f64;
        config.n_layers as f64 * (4.0 * d * d + 2.0 * d * config.d_mlp as f64)
    }

    pub fn for_model(config: &ModelConfig, corpus_tokens: usize, feature_count: usize, k_prompts: usize, prompt_len: usize) -> Self {
        Self {
            n_nonembed_params: Self::nonembed_params(config),
            corpus_tokens: corpus_tokens as f64,
            feature_count: feature_count as f64,
            d_model: config.d_model as f64,
            vocab_size: config.vocab_size as f64,
            k_prompts: k_prompts as f64,
            prompt_len: prompt_len as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.n_nonembed_params,
            self.corpus_tokens,
            self.feature_count,
            self.d_model,
            self.vocab_size,
            self.k_prompts,
            self.prompt_len,
        ];
        if fields.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Precondition("cost model fields must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn base_flops(cost: &CostModel, method: BaseMethod) -> f64 {
    match method {
        // one pass over the corpus, shared by every feature
        BaseMethod::MaxAct => 6.0 * cost.n_nonembed_params * cost.corpus_tokens,
        BaseMethod::VocabProj => 2.0 * cost.vocab_size * cost.d_model * cost.feature_count,
        // baseline and clamped pass over k prompts per feature
        BaseMethod::TokenChange => {
            6.0 * cost.n_nonembed_params * (2.0 * cost.k_prompts * cost.prompt_len) * cost.feature_count
        }
    }
}

/// Ensembles cost the sum of their members.
pub fn estimate_flops(cost: &CostModel, method: &Method) -> f64 {
    method.members().into_iter().map(|m| base_flops(cost, m)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_costs_nothing_for_maxact() {
        let c = CostModel {
            n_nonembed_params: 1e6,
            corpus_tokens: 0.0,
            feature_count: 3.0,
            d_model: 8.0,
            vocab_size: 10.0,
            k_prompts: 2.0,
            prompt_len: 4.0,
        };
        assert_eq!(estimate_flops(&c, &Method::MaxAct), 0.0);
        assert_eq!(estimate_flops(&c, &Method::VocabProj), 480.0);
        assert_eq!(estimate_flops(&c, &Method::TokenChange), 6e6 * 16.0 * 3.0);
        assert_eq!(
            estimate_flops(&c, &Method::all()[3]),
            480.0 + 6e6 * 16.0 * 3.0
        );
    }
}
