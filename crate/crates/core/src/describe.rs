//! Description methods: MaxAct, VocabProj, TokenChange and the two ensembles.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{FeatureRef, FeaturizerParams};
use crate::gateway::{ChatRequest, Decoding, Gateway, Message, RoleClass};
use crate::index::{ActivationRecord, FeatureActivationSummary};
use crate::model::{Intervention, Model};
use crate::prompts::{markers, render, Templates};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_id: u32,
    pub token_text: String,
    pub score: f64,
}

/// The three single-source methods, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaseMethod {
    MaxAct,
    VocabProj,
    TokenChange,
}

impl BaseMethod {
    pub const ALL: [BaseMethod; 3] = [Self::MaxAct, Self::VocabProj, Self::TokenChange];
}

impl fmt::Display for BaseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MaxAct => "MaxAct",
            Self::VocabProj => "VocabProj",
            Self::TokenChange => "TokenChange",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum Method {
    MaxAct,
    VocabProj,
    TokenChange,
    EnsembleRaw { members: Vec<BaseMethod> },
    EnsembleConcat { members: Vec<BaseMethod> },
}

impl Method {
    pub fn base(m: BaseMethod) -> Self {
        match m {
            BaseMethod::MaxAct => Self::MaxAct,
            BaseMethod::VocabProj => Self::VocabProj,
            BaseMethod::TokenChange => Self::TokenChange,
        }
    }

    pub fn as_base(&self) -> Option<BaseMethod> {
        match self {
            Self::MaxAct => Some(BaseMethod::MaxAct),
            Self::VocabProj => Some(BaseMethod::VocabProj),
            Self::TokenChange => Some(BaseMethod::TokenChange),
            _ => None,
        }
    }

    pub fn members(&self) -> Vec<BaseMethod> {
        match self {
            Self::EnsembleRaw { members } | Self::EnsembleConcat { members } => members.clone(),
            other => vec![other.as_base().expect("base method")],
        }
    }

    /// The five methods with ensembles over all three bases.
    pub fn all() -> Vec<Method> {
        vec![
            Self::MaxAct,
            Self::VocabProj,
            Self::TokenChange,
            Self::EnsembleRaw { members: BaseMethod::ALL.to_vec() },
            Self::EnsembleConcat { members: BaseMethod::ALL.to_vec() },
        ]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |m: &[BaseMethod]| m.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("+");
        match self {
            Self::EnsembleRaw { members } => write!(f, "EnsembleRaw({})", join(members)),
            Self::EnsembleConcat { members } => write!(f, "EnsembleConcat({})", join(members)),
            other => write!(f, "{}", other.as_base().expect("base method")),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `maxact`, `vocabproj`, `tokenchange`, and `ensemble_raw` /
    /// `ensemble_concat` optionally followed by `(a+b…)`; case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let base = |n: &str| -> Result<BaseMethod> {
            match n.trim() {
                "maxact" => Ok(BaseMethod::MaxAct),
                "vocabproj" => Ok(BaseMethod::VocabProj),
                "tokenchange" => Ok(BaseMethod::TokenChange),
                other => Err(Error::Config(format!("unknown method `{other}`"))),
            }
        };
        let (head, members) = match lower.split_once('(') {
            Some((h, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("bad method `{s}`")))?;
                let mut ms = inner.split('+').map(base).collect::<Result<Vec<_>>>()?;
                ms.sort();
                ms.dedup();
                (h.to_string(), Some(ms))
            }
            None => (lower.clone(), None),
        };
        let members = members.unwrap_or_else(|| BaseMethod::ALL.to_vec());
        match head.as_str() {
            "ensemble_raw" | "ensembleraw" | "ensembler" => Ok(Self::EnsembleRaw { members }),
            "ensemble_concat" | "ensembleconcat" | "ensemblec" => Ok(Self::EnsembleConcat { members }),
            other => base(other).map(Self::base),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenActivation {
    pub token_id: u32,
    pub text: String,
    pub activation: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub doc_id: String,
    pub max_activation: f32,
    /// Activation band for quantile samples; absent for top examples.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub band: Option<usize>,
    pub tokens: Vec<TokenActivation>,
}

/// Raw inputs handed to the explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Examples { top: Vec<Example>, samples: Vec<Example> },
    TokenLists {
        top: Vec<TokenScore>,
        bottom: Vec<TokenScore>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        clamp_value: Option<f32>,
    },
    Sections { sections: Vec<EvidenceSection> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSection {
    pub method: BaseMethod,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmFingerprint {
    pub model: String,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub feature: FeatureRef,
    pub method: Method,
    pub text: String,
    pub evidence: Option<Evidence>,
    pub llm: Option<LlmFingerprint>,
}

fn check_t(t: usize, vocab: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::Precondition("t must be at least 1".into()));
    }
    if t > vocab {
        return Err(Error::Precondition(format!("t = {t} exceeds vocabulary size {vocab}")));
    }
    Ok(())
}

/// Top `t` (descending) and bottom `t` (ascending) entries, ties by id.
pub fn rank_tokens(scores: &[f64], t: usize, tokenizer: &Tokenizer) -> Result<(Vec<TokenScore>, Vec<TokenScore>)> {
    check_t(t, scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let score = |i: usize| TokenScore {
        token_id: i as u32,
        token_text: tokenizer.piece(i as u32).to_string(),
        score: scores[i],
    };
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = order[..t].iter().map(|&i| score(i)).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let bottom = order[..t].iter().map(|&i| score(i)).collect();
    Ok((top, bottom))
}

/// Vocabulary logits of a direction: `W_U · LN_final(v)`, in f64. The
/// normalization uses no epsilon, so rankings are unchanged by any positive
/// rescaling or constant shift of `v`.
pub fn vocab_logits(model: &Model, direction: ndarray::ArrayView1<f32>) -> Vec<f64> {
    let normed = model.final_layer_norm().apply_f64_with_eps(direction, 0.0);
    let u = model.unembed();
    (0..u.ncols())
        .map(|j| u.column(j).iter().zip(&normed).map(|(&w, &x)| w as f64 * x).sum())
        .collect()
}

pub fn vocab_projection_tokens(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: usize,
    t: usize,
    tokenizer: &Tokenizer,
) -> Result<(Vec<TokenScore>, Vec<TokenScore>)> {
    check_t(t, model.config().vocab_size)?;
    let v = featurizer.feature_vector(feature)?;
    if v.len() != model.config().d_model {
        return Err(Error::Precondition(format!(
            "feature direction has width {}, the unembedding reads {}",
            v.len(),
            model.config().d_model
        )));
    }
    rank_tokens(&vocab_logits(model, v.view()), t, tokenizer)
}

/// Mean over every position of every prompt of (clamped − baseline) logits.
pub fn token_change_deltas(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    prompts: &[Vec<u32>],
    m: f32,
) -> Result<Vec<f64>> {
    if prompts.is_empty() || prompts.iter().any(|p| p.is_empty()) {
        return Err(Error::Precondition("token change needs non-empty prompts".into()));
    }
    let iv = Intervention {
        site: feature.site,
        featurizer,
        feature: feature.index,
        value: m,
    };
    let per_prompt: Vec<Vec<f64>> = prompts
        .par_iter()
        .map(|p| {
            let base = model.logits(p, None)?;
            let clamped = model.logits(p, Some(&iv))?;
            let mut sums = vec![0.0f64; base.ncols()];
            for (b, c) in base.axis_iter(Axis(0)).zip(clamped.axis_iter(Axis(0))) {
                for (s, (&x, &y)) in sums.iter_mut().zip(b.iter().zip(c.iter())) {
                    *s += y as f64 - x as f64;
                }
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;
    let positions: usize = prompts.iter().map(Vec::len).sum();
    let mut total = vec![0.0f64; model.config().vocab_size];
    for sums in per_prompt {
        for (t, s) in total.iter_mut().zip(sums) {
            *t += s;
        }
    }
    Ok(total.into_iter().map(|s| s / positions as f64).collect())
}

pub fn token_change_scores(
    model: &Model,
    featurizer: &FeaturizerParams,
    feature: &FeatureRef,
    prompts: &[Vec<u32>],
    m: f32,
    t: usize,
    tokenizer: &Tokenizer,
) -> Result<(Vec<TokenScore>, Vec<TokenScore>)> {
    check_t(t, model.config().vocab_size)?;
    let deltas = token_change_deltas(model, featurizer, feature, prompts, m)?;
    rank_tokens(&deltas, t, tokenizer)
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn render_scores(out: &mut String, label: &str, list: &[TokenScore]) {
    out.push_str(label);
    out.push('\n');
    for s in list {
        out.push_str(&format!("{} {:.4}\n", quoted(&s.token_text), s.score));
    }
}

fn render_example(out: &mut String, heading: &str, ex: &Example) {
    out.push_str(&format!("{heading} (max activation {:.4}):\n", ex.max_activation));
    for t in &ex.tokens {
        out.push_str(&format!("{} {:.4}\n", quoted(&t.text), t.activation));
    }
}

/// Evidence rendered as one `### <method>` section.
pub fn render_section(method: BaseMethod, evidence: &Evidence) -> String {
    let mut out = format!("{}{method}\n", markers::SECTION);
    match evidence {
        Evidence::Examples { top, samples } => {
            for (i, ex) in top.iter().enumerate() {
                render_example(&mut out, &format!("Top example {}", i + 1), ex);
            }
            for ex in samples {
                let band = ex.band.map(|b| format!(" from activation band {b}")).unwrap_or_default();
                render_example(&mut out, &format!("Sample{band}"), ex);
            }
        }
        Evidence::TokenLists { top, bottom, .. } => {
            let (up, down) = match method {
                BaseMethod::TokenChange => ("Increased:", "Decreased:"),
                _ => ("Promoted:", "Suppressed:"),
            };
            render_scores(&mut out, up, top);
            render_scores(&mut out, down, bottom);
        }
        Evidence::Sections { sections } => {
            for s in sections {
                out.push_str(&render_section(s.method, &s.evidence));
            }
        }
    }
    out
}

fn example(record: &ActivationRecord, band: Option<usize>, tokenizer: &Tokenizer) -> Example {
    Example {
        doc_id: record.doc_id.clone(),
        max_activation: record.max_activation,
        band,
        tokens: record
            .tokens
            .iter()
            .zip(&record.activations)
            .filter(|(&t, _)| !tokenizer.is_special(t))
            .map(|(&t, &a)| TokenActivation {
                token_id: t,
                text: tokenizer.piece(t).to_string(),
                activation: a,
            })
            .collect(),
    }
}

/// MaxAct evidence: the top five records and the quantile samples.
pub fn maxact_evidence(summary: &FeatureActivationSummary, tokenizer: &Tokenizer) -> Result<Evidence> {
    if summary.top_records.is_empty() {
        return Err(Error::Precondition(format!("no activation records for {}", summary.feature)));
    }
    Ok(Evidence::Examples {
        top: summary.top_records.iter().take(5).map(|r| example(r, None, tokenizer)).collect(),
        samples: summary
            .quantile_samples
            .iter()
            .map(|q| example(&q.record, Some(q.band), tokenizer))
            .collect(),
    })
}

pub fn token_list_evidence(top: &[TokenScore], bottom: &[TokenScore], clamp_value: Option<f32>) -> Result<Evidence> {
    if top.is_empty() || bottom.is_empty() {
        return Err(Error::Precondition("token lists must be non-empty".into()));
    }
    Ok(Evidence::TokenLists {
        top: top.to_vec(),
        bottom: bottom.to_vec(),
        clamp_value,
    })
}

/// How many times an empty explainer reply is re-asked before giving up.
pub const EXPLAINER_ATTEMPTS: usize = 3;

/// Explainer calls over rendered evidence.
pub struct Describer<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a Templates,
    pub tokenizer: &'a Tokenizer,
    pub decoding: Decoding,
}

impl<'a> Describer<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a Templates, tokenizer: &'a Tokenizer) -> Self {
        Self {
            gateway,
            templates,
            tokenizer,
            decoding: Decoding { temperature: 0.0, max_tokens: 256 },
        }
    }

    fn explain(&self, template: &str, evidence_text: &str) -> Result<(String, LlmFingerprint)> {
        let request = ChatRequest::new(
            RoleClass::Explainer,
            vec![
                Message::system(self.templates.explainer_system.trim()),
                Message::user(render(template, &[("evidence", evidence_text.trim_end())])),
            ],
            self.decoding,
        );
        let fingerprint = LlmFingerprint {
            model: self.gateway.model_name(RoleClass::Explainer).to_string(),
            prompt_hash: request.prompt_hash(),
        };
        let mut current = request.clone();
        for attempt in 1..=EXPLAINER_ATTEMPTS {
            let text = self.gateway.complete(&current)?;
            let text = text.trim();
            if !text.is_empty() {
                return Ok((text.to_string(), fingerprint));
            }
            current = request.with_followup(format!(
                "Your previous reply was empty (attempt {attempt}). Reply with the description."
            ));
        }
        Err(Error::Parse {
            attempts: EXPLAINER_ATTEMPTS,
            detail: "explainer returned empty text".into(),
        })
    }

    fn describe_single(
        &self,
        feature: &FeatureRef,
        method: BaseMethod,
        template: &str,
        evidence: Evidence,
    ) -> Result<Description> {
        let (text, fp) = self.explain(template, &render_section(method, &evidence))?;
        Ok(Description {
            feature: feature.clone(),
            method: Method::base(method),
            text,
            evidence: Some(evidence),
            llm: Some(fp),
        })
    }

    pub fn maxact(&self, summary: &FeatureActivationSummary) -> Result<Description> {
        let evidence = maxact_evidence(summary, self.tokenizer)?;
        self.describe_single(&summary.feature, BaseMethod::MaxAct, &self.templates.explain_maxact, evidence)
    }

    pub fn vocabproj(&self, feature: &FeatureRef, top: &[TokenScore], bottom: &[TokenScore]) -> Result<Description> {
        let evidence = token_list_evidence(top, bottom, None)?;
        self.describe_single(feature, BaseMethod::VocabProj, &self.templates.explain_vocabproj, evidence)
    }

    pub fn tokenchange(
        &self,
        feature: &FeatureRef,
        top: &[TokenScore],
        bottom: &[TokenScore],
        clamp_value: Option<f32>,
    ) -> Result<Description> {
        let evidence = token_list_evidence(top, bottom, clamp_value)?;
        self.describe_single(feature, BaseMethod::TokenChange, &self.templates.explain_tokenchange, evidence)
    }

    /// One explainer call over all members' evidence, sections in canonical
    /// method order.
    pub fn ensemble_raw(&self, feature: &FeatureRef, evidence: &[EvidenceSection]) -> Result<Description> {
        let mut sections = evidence.to_vec();
        sections.sort_by_key(|s| s.method);
        let members: Vec<BaseMethod> = sections.iter().map(|s| s.method).collect();
        if members.len() < 2 {
            return Err(Error::Precondition("an ensemble needs at least two member methods".into()));
        }
        if members.iter().collect::<BTreeSet<_>>().len() != members.len() {
            return Err(Error::Precondition("ensemble members must be distinct methods".into()));
        }
        let rendered: String = sections.iter().map(|s| render_section(s.method, &s.evidence)).collect();
        let (text, fp) = self.explain(&self.templates.explain_ensemble, &rendered)?;
        Ok(Description {
            feature: feature.clone(),
            method: Method::EnsembleRaw { members },
            text,
            evidence: Some(Evidence::Sections { sections }),
            llm: Some(fp),
        })
    }
}

/// Member texts joined by `"; "` in canonical method order; no LLM call.
pub fn ensemble_concat(descriptions: &[Description]) -> Result<Description> {
    if descriptions.len() < 2 {
        return Err(Error::Precondition("an ensemble needs at least two descriptions".into()));
    }
    let feature = &descriptions[0].feature;
    if descriptions.iter().any(|d| &d.feature != feature) {
        return Err(Error::Precondition("ensemble members describe different features".into()));
    }
    let mut members: Vec<(BaseMethod, &str)> = Vec::new();
    for d in descriptions {
        let m = d
            .method
            .as_base()
            .ok_or_else(|| Error::Precondition(format!("{} cannot be an ensemble member", d.method)))?;
        members.push((m, d.text.as_str()));
    }
    members.sort_by_key(|(m, _)| *m);
    if members.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Precondition("ensemble members must be distinct methods".into()));
    }
    Ok(Description {
        feature: feature.clone(),
        method: Method::EnsembleConcat { members: members.iter().map(|(m, _)| *m).collect() },
        text: members.iter().map(|(_, t)| *t).collect::<Vec<_>>().join("; "),
        evidence: None,
        llm: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::all() {
            let parsed: Method = m.to_string().parse().unwrap();
            assert_eq!(parsed, m);
        }
        assert_eq!(
            "ensemble_raw(vocabproj+maxact)".parse::<Method>().unwrap(),
            Method::EnsembleRaw { members: vec![BaseMethod::MaxAct, BaseMethod::VocabProj] }
        );
        assert!("simulation".parse::<Method>().is_err());
    }
}
