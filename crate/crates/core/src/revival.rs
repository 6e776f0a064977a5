//! Searching for out-of-corpus prompts that activate dead features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::describe::{token_change_scores, vocab_projection_tokens, Describer, TokenScore};
use crate::error::{Error, Result};
use crate::eval::{calibrate_clamp, derive_seed, gen_eval_sentences, max_activation_tokens, EvalConfig, Sign};
use crate::featurizer::{FeatureRef, FeaturizerParams};
use crate::gateway::Gateway;
use crate::model::Model;
use crate::prompts::Templates;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RevivalConfig {
    pub t_vocabproj: usize,
    pub t_tokenchange: usize,
    /// KL target used to pick the TokenChange clamp value.
    pub tokenchange_kl: f64,
    /// Total LLM sentences, split evenly over the VocabProj and TokenChange descriptions.
    pub llm_sentences: usize,
    /// (prompt length, count) for the random token combinations.
    pub schedule: Vec<(usize, usize)>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RevivalConfig {
    fn default() -> Self {
        Self {
            t_vocabproj: 50,
            t_tokenchange: 20,
            tokenchange_kl: 0.5,
            llm_sentences: 150,
            schedule: vec![(2, 250), (3, 250), (5, 200), (12, 200), (25, 100), (32, 50)],
            batch_size: 64,
            seed: 0,
        }
    }
}

impl RevivalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("revival batch_size must be at least 1".into()));
        }
        if self.schedule.iter().any(|&(len, _)| len < 2) {
            return Err(Error::InvalidConfig("schedule lengths must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevivalPlan {
    pub feature: FeatureRef,
    pub token_pool: Vec<u32>,
    pub llm_sentences: Vec<String>,
    /// BOS-prefixed prompts: one single per pool token, then the schedule.
    pub combo_prompts: Vec<Vec<u32>>,
    pub seed: u64,
    /// Set when the LLM part of the plan could not be produced.
    pub degraded: bool,
}

impl RevivalPlan {
    pub fn n_candidates(&self) -> usize {
        self.combo_prompts.len() + self.llm_sentences.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    SingleToken,
    TokenCombo,
    LlmSentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub kind: WitnessKind,
    pub tokens: Vec<u32>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevivalResult {
    pub feature: FeatureRef,
    pub activated: bool,
    pub witness: Option<Witness>,
    /// Witness activation, or the best activation seen when nothing fired.
    pub witness_activation: f32,
    pub candidates_tried: usize,
    pub seed: u64,
}

/// Union of the lists in order of first appearance, special tokens dropped.
pub fn token_pool(lists: &[&[TokenScore]], tokenizer: &Tokenizer) -> Vec<u32> {
    let mut pool = Vec::new();
    for list in lists {
        for s in list.iter() {
            if !tokenizer.is_special(s.token_id) && !pool.contains(&s.token_id) {
                pool.push(s.token_id);
            }
        }
    }
    pool
}

/// Singles then seeded random combinations; every prompt starts with `bos`.
pub fn combo_prompts(pool: &[u32], schedule: &[(usize, usize)], bos: u32, seed: u64) -> Vec<Vec<u32>> {
    if pool.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<Vec<u32>> = pool.iter().map(|&t| vec![bos, t]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &(len, count) in schedule {
        for _ in 0..count {
            let mut p = Vec::with_capacity(len + 1);
            p.push(bos);
            p.extend((0..len).map(|_| pool[rng.random_range(0..pool.len())]));
            out.push(p);
        }
    }
    out
}

/// Assemble a plan from already computed token lists and sentences.
pub fn plan_from_parts(
    feature: &FeatureRef,
    lists: &[&[TokenScore]],
    llm_sentences: Vec<String>,
    tokenizer: &Tokenizer,
    config: &RevivalConfig,
    degraded: bool,
) -> RevivalPlan {
    let pool = token_pool(lists, tokenizer);
    let seed = derive_seed(config.seed, &[&feature.to_string(), "revival"]);
    RevivalPlan {
        feature: feature.clone(),
        combo_prompts: combo_prompts(&pool, &config.schedule, tokenizer.bos_id(), seed),
        token_pool: pool,
        llm_sentences,
        seed: config.seed,
        degraded,
    }
}

/// VocabProj and TokenChange evidence, their descriptions, and sentences
/// written from those descriptions. TokenChange is skipped when no clamp
/// value reaches the KL target. Gateway failures leave a degraded plan
/// with token combinations only.
#[allow(clippy::too_many_arguments)]
pub fn build_revival_plan(
    gateway: &Gateway,
    templates: &Templates,
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    tc_prompts: &[Vec<u32>],
    config: &RevivalConfig,
) -> Result<RevivalPlan> {
    config.validate()?;
    let vocab = model.config().vocab_size;
    let vp = vocab_projection_tokens(model, featurizer, feature.index, config.t_vocabproj.min(vocab), tokenizer)?;

    let calibration = EvalConfig::default();
    let tc = match calibrate_clamp(model, featurizer, feature, tc_prompts, config.tokenchange_kl, Sign::Positive, &calibration) {
        Ok(c) => {
            let m = c.m as f32;
            let lists = token_change_scores(model, featurizer, feature, tc_prompts, m, config.t_tokenchange.min(vocab), tokenizer)?;
            Some((lists, m))
        }
        Err(Error::CalibrationFailed { achieved_max, .. }) => {
            log::warn!("{feature}: no TokenChange clamp reaches the KL target (max {achieved_max:.3e}); skipping");
            None
        }
        Err(e) => return Err(e),
    };

    let describer = Describer::new(gateway, templates, tokenizer);
    let mut descriptions = Vec::new();
    let mut degraded = false;
    match describer.vocabproj(feature, &vp.0, &vp.1) {
        Ok(d) => descriptions.push(d.text),
        Err(e) => {
            log::warn!("{feature}: VocabProj description failed: {e}");
            degraded = true;
        }
    }
    if let Some(((top, bottom), m)) = &tc {
        match describer.tokenchange(feature, top, bottom, Some(*m)) {
            Ok(d) => descriptions.push(d.text),
            Err(e) => {
                log::warn!("{feature}: TokenChange description failed: {e}");
                degraded = true;
            }
        }
    }

    let mut sentences = Vec::new();
    if !descriptions.is_empty() && config.llm_sentences > 0 {
        let per = config.llm_sentences.div_ceil(descriptions.len());
        for d in &descriptions {
            match gen_eval_sentences(gateway, templates, d, per, 3) {
                Ok((activating, _)) => sentences.extend(activating),
                Err(e) => {
                    log::warn!("{feature}: revival sentences failed: {e}");
                    degraded = true;
                }
            }
        }
        sentences.truncate(config.llm_sentences);
    }

    let mut lists: Vec<&[TokenScore]> = vec![&vp.0, &vp.1];
    if let Some(((top, bottom), _)) = &tc {
        lists.push(top);
        lists.push(bottom);
    }
    Ok(plan_from_parts(feature, &lists, sentences, tokenizer, config, degraded))
}

fn candidate_kind(plan: &RevivalPlan, i: usize) -> WitnessKind {
    if i < plan.token_pool.len() {
        WitnessKind::SingleToken
    } else if i < plan.combo_prompts.len() {
        WitnessKind::TokenCombo
    } else {
        WitnessKind::LlmSentence
    }
}

/// Try candidates in plan order (singles, combinations by schedule, then
/// sentences) and stop at the first positive activation. Batches run in
/// parallel; the witness is the earliest firing candidate in plan order.
pub fn revive(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    plan: &RevivalPlan,
    batch_size: usize,
) -> Result<RevivalResult> {
    if &plan.feature != feature {
        return Err(Error::Precondition(format!("plan for {} used on {feature}", plan.feature)));
    }
    let limit = model.config().context_length;
    let mut candidates: Vec<Vec<u32>> = plan.combo_prompts.clone();
    for s in &plan.llm_sentences {
        let mut toks = tokenizer.encode_with_bos(s)?;
        toks.truncate(limit);
        candidates.push(toks);
    }
    let mut best = f32::NEG_INFINITY;
    let mut tried = 0;
    for (b, batch) in candidates.chunks(batch_size.max(1)).enumerate() {
        let acts: Vec<f32> = batch
            .par_iter()
            .map(|toks| max_activation_tokens(model, featurizer, feature, toks))
            .collect::<Result<_>>()?;
        if let Some(j) = acts.iter().position(|&a| a > 0.0) {
            let i = b * batch_size.max(1) + j;
            let tokens = candidates[i].clone();
            return Ok(RevivalResult {
                feature: feature.clone(),
                activated: true,
                witness: Some(Witness {
                    kind: candidate_kind(plan, i),
                    text: tokenizer.decode(&tokens),
                    tokens,
                }),
                witness_activation: acts[j],
                candidates_tried: i + 1,
                seed: plan.seed,
            });
        }
        best = acts.iter().copied().fold(best, f32::max);
        tried += batch.len();
    }
    Ok(RevivalResult {
        feature: feature.clone(),
        activated: false,
        witness: None,
        witness_activation: if tried == 0 { 0.0 } else { best },
        candidates_tried: tried,
        seed: plan.seed,
    })
}
