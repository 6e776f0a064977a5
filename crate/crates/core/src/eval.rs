//! Input-based and output-based evaluation of descriptions.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurizer::{FeatureRef, FeaturizerParams, FeaturizerSet};
use crate::gateway::{ChatRequest, Decoding, Gateway, Message, RoleClass};
use crate::index::ActivationIndex;
use crate::model::{kl_divergence, DecodeMode, Intervention, Model, SamplingConfig};
use crate::prompts::{markers, one_line, render, Templates};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn apply(self, magnitude: f64) -> f64 {
        match self {
            Self::Positive => magnitude,
            Self::Negative => -magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_sentences_per_set: usize,
    pub open_ended_prompts: Vec<String>,
    pub max_gen_tokens: usize,
    pub kl_targets: Vec<f64>,
    pub signs: Vec<Sign>,
    pub calibration_tolerance: f64,
    /// Largest |m| tried while bracketing.
    pub max_clamp: f64,
    pub max_bisection_steps: usize,
    /// Decoding of steered generations.
    pub decode: DecodeMode,
    /// Attempts (first ask plus re-asks) for sentence-generator and judge replies.
    pub llm_attempts: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_sentences_per_set: 5,
            open_ended_prompts: vec!["I think".into(), "Honestly,".into(), "The most important thing".into()],
            max_gen_tokens: 25,
            kl_targets: vec![0.25, 0.5],
            signs: vec![Sign::Positive, Sign::Negative],
            calibration_tolerance: 0.01,
            max_clamp: 65_536.0,
            max_bisection_steps: 60,
            decode: DecodeMode::Temperature { tau: 1.0 },
            llm_attempts: 3,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sentences_per_set == 0 {
            return Err(Error::InvalidConfig("n_sentences_per_set must be at least 1".into()));
        }
        if self.open_ended_prompts.is_empty() || self.open_ended_prompts.iter().any(|p| p.trim().is_empty()) {
            return Err(Error::InvalidConfig("open_ended_prompts must be non-empty strings".into()));
        }
        if self.kl_targets.is_empty() || self.kl_targets.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidConfig("kl_targets must be positive".into()));
        }
        if self.signs.is_empty() {
            return Err(Error::InvalidConfig("signs must be non-empty".into()));
        }
        if !(self.calibration_tolerance > 0.0) || !(self.max_clamp >= 1.0) {
            return Err(Error::InvalidConfig("calibration tolerance and max_clamp must be positive".into()));
        }
        if self.llm_attempts == 0 {
            return Err(Error::InvalidConfig("llm_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// (target, sign) pairs: every target for the first sign, then the next.
    pub fn clamp_schedule(&self) -> Vec<(f64, Sign)> {
        self.signs
            .iter()
            .flat_map(|&s| self.kl_targets.iter().map(move |&t| (t, s)))
            .collect()
    }

    /// Open-ended prompts tokenized with a leading BOS.
    pub fn prompt_tokens(&self, tokenizer: &Tokenizer) -> Result<Vec<Vec<u32>>> {
        self.open_ended_prompts.iter().map(|p| tokenizer.encode_with_bos(p)).collect()
    }
}

/// Stable seed derived from a base seed and labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

// ---------------------------------------------------------------- input metric

const SENTENCE_DECODING: Decoding = Decoding { temperature: 0.0, max_tokens: 1024 };

fn numbered_item(line: &str) -> Option<&str> {
    let t = line.trim();
    let rest = if let Some(r) = t.strip_prefix(markers::ITEM_PREFIX) {
        r
    } else {
        let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits == 0 {
            return None;
        }
        t[digits..].strip_prefix('.').or_else(|| t[digits..].strip_prefix(')'))?
    };
    let rest = rest.trim();
    (!rest.is_empty()).then_some(rest)
}

/// Split a generator reply into its activating and neutral lists.
pub fn parse_sentence_sets(reply: &str, n: usize) -> std::result::Result<(Vec<String>, Vec<String>), String> {
    let mut activating = Vec::new();
    let mut neutral = Vec::new();
    let mut current: Option<&mut Vec<String>> = None;
    for line in reply.lines() {
        let t = line.trim().trim_matches('*');
        if t.eq_ignore_ascii_case(markers::ACTIVATING_HEADER) {
            current = Some(&mut activating);
        } else if t.eq_ignore_ascii_case(markers::NEUTRAL_HEADER) {
            current = Some(&mut neutral);
        } else if let (Some(list), Some(item)) = (current.as_deref_mut(), numbered_item(line)) {
            list.push(item.to_string());
        }
    }
    if activating.len() < n || neutral.len() < n {
        return Err(format!(
            "expected {n} activating and {n} neutral sentences, found {} and {}",
            activating.len(),
            neutral.len()
        ));
    }
    activating.truncate(n);
    neutral.truncate(n);
    Ok((activating, neutral))
}

/// Ask the sentence generator for `n` activating and `n` neutral sentences.
pub fn gen_eval_sentences(
    gateway: &Gateway,
    templates: &Templates,
    description: &str,
    n: usize,
    attempts: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    if description.trim().is_empty() {
        return Err(Error::Precondition("empty description".into()));
    }
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    let prompt = render(
        &templates.sentences,
        &[("description", &one_line(description)), ("n", &n.to_string())],
    );
    let request = ChatRequest::new(RoleClass::SentenceGenerator, vec![Message::user(prompt)], SENTENCE_DECODING);
    let mut current = request.clone();
    let mut last = String::new();
    for attempt in 1..=attempts.max(1) {
        let reply = gateway.complete(&current)?;
        match parse_sentence_sets(&reply, n) {
            Ok(sets) => return Ok(sets),
            Err(e) => {
                log::warn!("sentence generator reply unusable (attempt {attempt}): {e}");
                last = e;
                current = request.with_followup(format!(
                    "{last}. Reply again using exactly the ACTIVATING:/NEUTRAL: numbered format (attempt {}).",
                    attempt + 1
                ));
            }
        }
    }
    Err(Error::Parse { attempts: attempts.max(1), detail: last })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEvalResult {
    pub mean_activating: f64,
    pub mean_neutral: f64,
    pub activating_max: Vec<f32>,
    pub neutral_max: Vec<f32>,
    pub pass: bool,
}

/// Largest activation of the feature over every position of `text`.
pub fn max_activation(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    text: &str,
) -> Result<f32> {
    let tokens = tokenizer.encode_with_bos(text)?;
    max_activation_tokens(model, featurizer, feature, &tokens)
}

pub fn max_activation_tokens(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokens: &[u32],
) -> Result<f32> {
    let hidden = model.forward_capture(tokens, feature.site, None)?.hidden;
    Ok(featurizer
        .activations(hidden.view(), feature.index)?
        .into_iter()
        .fold(f32::NEG_INFINITY, f32::max))
}

pub fn input_eval(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    activating: &[String],
    neutral: &[String],
) -> Result<InputEvalResult> {
    if activating.is_empty() || neutral.is_empty() {
        return Err(Error::Precondition("both sentence sets must be non-empty".into()));
    }
    let scan = |set: &[String]| -> Result<Vec<f32>> {
        set.iter()
            .map(|s| max_activation(model, featurizer, feature, tokenizer, s))
            .collect()
    };
    let activating_max = scan(activating)?;
    let neutral_max = scan(neutral)?;
    let mean = |xs: &[f32]| xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64;
    let (mean_activating, mean_neutral) = (mean(&activating_max), mean(&neutral_max));
    Ok(InputEvalResult {
        mean_activating,
        mean_neutral,
        activating_max,
        neutral_max,
        pass: mean_activating > mean_neutral,
    })
}

// ---------------------------------------------------------------- calibration

/// Mean next-token KL between clamped and unclamped runs over fixed prompts.
pub struct KlProbe<'a> {
    model: &'a Model,
    featurizer: &'a FeaturizerParams,
    feature: &'a FeatureRef,
    prompts: &'a [Vec<u32>],
    baseline: Vec<Vec<f64>>,
}

impl<'a> KlProbe<'a> {
    pub fn new(
        model: &'a Model,
        featurizer: &'a FeaturizerParams,
        feature: &'a FeatureRef,
        prompts: &'a [Vec<u32>],
    ) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Precondition("calibration needs at least one prompt".into()));
        }
        let baseline = prompts
            .iter()
            .map(|p| model.next_token_distribution(p, None))
            .collect::<Result<_>>()?;
        Ok(Self { model, featurizer, feature, prompts, baseline })
    }

    pub fn kl(&self, m: f64) -> Result<f64> {
        let iv = Intervention {
            site: self.feature.site,
            featurizer: self.featurizer,
            feature: self.feature.index,
            value: m as f32,
        };
        let mut total = 0.0;
        for (p, base) in self.prompts.iter().zip(&self.baseline) {
            let clamped = self.model.next_token_distribution(p, Some(&iv))?;
            total += kl_divergence(&clamped, base)?;
        }
        Ok(total / self.prompts.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_kl: f64,
    pub sign: Sign,
    pub m: f64,
    pub achieved_kl: f64,
    pub evaluations: usize,
}

const GRID_POINTS: usize = 256;

/// Find `m` with the requested sign whose mean KL is within tolerance of
/// `target_kl`: geometric bracketing from |m| = 1, then bisection, then a
/// grid scan if the function misbehaves.
pub fn calibrate_clamp(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    prompts: &[Vec<u32>],
    target_kl: f64,
    sign: Sign,
    config: &EvalConfig,
) -> Result<Calibration> {
    if !(target_kl > 0.0) {
        return Err(Error::Precondition(format!("target KL must be positive, got {target_kl}")));
    }
    let probe = KlProbe::new(model, featurizer, feature, prompts)?;
    let tol = config.calibration_tolerance;
    let mut evaluations = 0usize;
    let mut eval = |mag: f64| -> Result<f64> {
        evaluations += 1;
        probe.kl(sign.apply(mag))
    };
    let mut best_seen = 0.0f64;
    let done = |mag: f64, kl: f64, evaluations: usize| Calibration {
        target_kl,
        sign,
        m: sign.apply(mag),
        achieved_kl: kl,
        evaluations,
    };

    // bracket: magnitudes 0, 1, 2, 4, … up to the cap
    let mut prev = (0.0, eval(0.0)?);
    if (prev.1 - target_kl).abs() <= tol {
        return Ok(done(0.0, prev.1, evaluations));
    }
    best_seen = best_seen.max(prev.1);
    let mut bracket = None;
    let mut mag = 1.0;
    while mag <= config.max_clamp {
        let kl = eval(mag)?;
        best_seen = best_seen.max(kl);
        if (kl - target_kl).abs() <= tol {
            return Ok(done(mag, kl, evaluations));
        }
        if (prev.1 - target_kl).signum() != (kl - target_kl).signum() {
            bracket = Some((prev, (mag, kl)));
            break;
        }
        prev = (mag, kl);
        mag *= 2.0;
    }

    if let Some((mut lo, mut hi)) = bracket {
        for _ in 0..config.max_bisection_steps {
            let mid = 0.5 * (lo.0 + hi.0);
            let kl = eval(mid)?;
            if (kl - target_kl).abs() <= tol {
                return Ok(done(mid, kl, evaluations));
            }
            if (kl - target_kl).signum() == (lo.1 - target_kl).signum() {
                lo = (mid, kl);
            } else {
                hi = (mid, kl);
            }
        }
    }

    // grid fallback over [0, cap] on a log scale
    let top = config.max_clamp.log2();
    for i in 0..=GRID_POINTS {
        let mag = 2f64.powf(-8.0 + (top + 8.0) * i as f64 / GRID_POINTS as f64);
        let kl = eval(mag)?;
        best_seen = best_seen.max(kl);
        if (kl - target_kl).abs() <= tol {
            return Ok(done(mag, kl, evaluations));
        }
    }
    Err(Error::CalibrationFailed {
        target: target_kl,
        achieved_max: best_seen,
        cap: config.max_clamp,
    })
}

// ---------------------------------------------------------------- steering

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeredText {
    pub prompt: String,
    pub clamp_value: f64,
    pub tokens: Vec<u32>,
    /// Prompt followed by the generated continuation.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeredTextSet {
    pub steered_feature: FeatureRef,
    pub calibrations: Vec<Calibration>,
    pub texts: Vec<SteeredText>,
}

impl SteeredTextSet {
    pub fn clamp_values(&self) -> Vec<f64> {
        self.calibrations.iter().map(|c| c.m).collect()
    }
}

/// Calibrated clamp values for the configured (target, sign) schedule.
pub fn calibrate_all(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    config: &EvalConfig,
) -> Result<Vec<Calibration>> {
    let prompts = config.prompt_tokens(tokenizer)?;
    config
        .clamp_schedule()
        .into_iter()
        .map(|(t, s)| calibrate_clamp(model, featurizer, feature, &prompts, t, s, config))
        .collect()
}

/// Generations with the feature clamped, one per (prompt, clamp value).
pub fn generate_with_clamps(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    config: &EvalConfig,
    clamp_values: &[f64],
) -> Result<Vec<SteeredText>> {
    let mut texts = Vec::new();
    for (pi, prompt) in config.open_ended_prompts.iter().enumerate() {
        let tokens = tokenizer.encode_with_bos(prompt)?;
        for (ci, &m) in clamp_values.iter().enumerate() {
            let seed = derive_seed(config.seed, &[&feature.to_string(), "steer", &pi.to_string(), &ci.to_string()]);
            let sampling = SamplingConfig {
                mode: config.decode,
                seed,
                max_new_tokens: config.max_gen_tokens,
                stop_token: Some(tokenizer.eos_id()),
            };
            let iv = Intervention {
                site: feature.site,
                featurizer,
                feature: feature.index,
                value: m as f32,
            };
            let out = model.generate(&tokens, &sampling, Some(&iv))?;
            texts.push(SteeredText {
                prompt: prompt.clone(),
                clamp_value: m,
                text: format!("{prompt}{}", tokenizer.decode(&out)),
                tokens: out,
            });
        }
    }
    Ok(texts)
}

pub fn steered_generations(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    tokenizer: &Tokenizer,
    config: &EvalConfig,
) -> Result<SteeredTextSet> {
    config.validate()?;
    let calibrations = calibrate_all(model, featurizer, feature, tokenizer, config)?;
    let values: Vec<f64> = calibrations.iter().map(|c| c.m).collect();
    let texts = generate_with_clamps(model, featurizer, feature, tokenizer, config, &values)?;
    Ok(SteeredTextSet {
        steered_feature: feature.clone(),
        calibrations,
        texts,
    })
}

// ---------------------------------------------------------------- output metric

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEvalResult {
    pub target_feature: FeatureRef,
    pub distractors: [FeatureRef; 2],
    /// `presentation_order[i]` is the set shown as `Set i+1`: 0 is the
    /// target, 1 and 2 the distractors.
    pub presentation_order: [usize; 3],
    pub judge_choice: usize,
    pub pass: bool,
}

const JUDGE_DECODING: Decoding = Decoding { temperature: 0.0, max_tokens: 8 };

fn answer_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([1-3])\b").unwrap())
}

pub fn parse_judge_answer(reply: &str) -> Option<usize> {
    answer_regex().captures(reply).and_then(|c| c[1].parse().ok())
}

pub fn render_sets(sets: &[&SteeredTextSet]) -> String {
    let mut out = String::new();
    for (i, set) in sets.iter().enumerate() {
        out.push_str(&format!("{}{}:\n", markers::SET_PREFIX, i + 1));
        for t in &set.texts {
            out.push_str(markers::ITEM_PREFIX);
            out.push_str(&serde_json::to_string(&t.text).expect("string serializes"));
            out.push('\n');
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

pub fn output_eval(
    gateway: &Gateway,
    templates: &Templates,
    description: &str,
    target: &SteeredTextSet,
    distractors: [&SteeredTextSet; 2],
    seed: u64,
    attempts: usize,
) -> Result<OutputEvalResult> {
    if description.trim().is_empty() {
        return Err(Error::Precondition("empty description".into()));
    }
    let n = target.texts.len();
    if distractors.iter().any(|d| d.texts.len() != n) {
        return Err(Error::Precondition("steered sets differ in size".into()));
    }
    let (f, d1, d2) = (&target.steered_feature, &distractors[0].steered_feature, &distractors[1].steered_feature);
    if d1 == f || d2 == f || d1 == d2 {
        return Err(Error::Precondition("distractors must differ from the target and each other".into()));
    }
    let mut order = [0usize, 1, 2];
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let all = [target, distractors[0], distractors[1]];
    let shown: Vec<&SteeredTextSet> = order.iter().map(|&i| all[i]).collect();
    let prompt = render(
        &templates.judge,
        &[("description", &one_line(description)), ("sets", &render_sets(&shown))],
    );
    let request = ChatRequest::new(RoleClass::Judge, vec![Message::user(prompt)], JUDGE_DECODING);
    let mut current = request.clone();
    for attempt in 1..=attempts.max(1) {
        let reply = gateway.complete(&current)?;
        if let Some(choice) = parse_judge_answer(&reply) {
            return Ok(OutputEvalResult {
                target_feature: f.clone(),
                distractors: [d1.clone(), d2.clone()],
                presentation_order: order,
                judge_choice: choice,
                pass: order[choice - 1] == 0,
            });
        }
        log::warn!("judge reply {reply:?} has no set number (attempt {attempt})");
        current = request.with_followup(format!("Answer with 1, 2 or 3 only (attempt {}).", attempt + 1));
    }
    Err(Error::Parse {
        attempts: attempts.max(1),
        detail: "judge reply names no set".into(),
    })
}

/// Every other feature of the target's featurizer that the index does not
/// mark dead, in a seeded uniform random order.
pub fn distractor_candidates(
    featurizers: &FeaturizerSet,
    target: &FeatureRef,
    index: Option<&ActivationIndex>,
    seed: u64,
) -> Result<Vec<FeatureRef>> {
    let width = featurizers.width_of(target)?;
    let mut candidates: Vec<FeatureRef> = (0..width)
        .filter(|&i| i != target.index)
        .map(|i| FeatureRef { index: i, ..target.clone() })
        .filter(|f| match index.and_then(|ix| ix.get(f).ok()) {
            Some(summary) => !summary.is_dead(0.0),
            None => true,
        })
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(candidates)
}

/// The first two of [`distractor_candidates`].
pub fn sample_distractors(
    featurizers: &FeaturizerSet,
    target: &FeatureRef,
    index: Option<&ActivationIndex>,
    seed: u64,
) -> Result<[FeatureRef; 2]> {
    let candidates = distractor_candidates(featurizers, target, index, seed)?;
    match candidates.as_slice() {
        [a, b, ..] => Ok([a.clone(), b.clone()]),
        _ => Err(Error::Precondition(format!("fewer than two live distractors for {target}"))),
    }
}
