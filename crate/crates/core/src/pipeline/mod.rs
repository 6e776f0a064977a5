//! Orchestration of the index, describe, eval and revive commands over a
//! TOML configuration, with JSONL stores under the output directory.

mod config;
pub mod flops;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Document, Sequence};
use crate::describe::{
    ensemble_concat, maxact_evidence, token_change_scores, token_list_evidence, vocab_projection_tokens, BaseMethod,
    Describer, Description, EvidenceSection, Method, TokenScore,
};
use crate::error::{Error, Result};
use crate::eval::{
    calibrate_clamp, derive_seed, distractor_candidates, gen_eval_sentences, input_eval, output_eval,
    steered_generations, Sign, SteeredTextSet,
};
use crate::featurizer::{FeatureRef, FeaturizerParams, FeaturizerSet, SaeManifest};
use crate::gateway::{BackendKind, Gateway, GatewayError};
use crate::index::{build_index, ActivationIndex};
use crate::model::{Model, ModelConfig};
use crate::prompts::Templates;
use crate::revival::{build_revival_plan, revive, WitnessKind};
use crate::tokenizer::Tokenizer;

pub use config::{CorpusConfig, DescribeConfig, FeaturizerPaths, ModelPaths, PipelineConfig};
pub use flops::{base_flops, estimate_flops, CostModel};
pub use store::{
    pass_rate_ci, summarize_evals, DescriptionRecord, EvalRecord, Metric, RateSummary, RevivalRecord, Timestamps,
};

/// A per-feature (or per-description) failure that did not stop the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub feature: String,
    pub method: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RevivalSummary {
    pub dead: usize,
    pub revived: usize,
    pub fraction: f64,
    pub by_witness: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<Failure>,
    pub notices: Vec<String>,
    pub eval_summary: Vec<RateSummary>,
    pub revival_summary: Option<RevivalSummary>,
}

impl Report {
    /// 0 when everything succeeded, 1 when some items failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// 2 for usage, configuration and missing-input errors, 1 otherwise.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::InvalidConfig(_) | Error::Io { .. } => 2,
        Error::Gateway(GatewayError::Config(_)) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub template_version: String,
    pub backend: String,
    pub version: String,
}

/// Loaded model, featurizers, corpus and gateway for one configuration.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub featurizers: FeaturizerSet,
    pub corpus: Vec<Document>,
    pub sequences: Vec<Sequence>,
    pub gateway: Gateway,
    pub templates: Templates,
    /// Prompts shared by every TokenChange run.
    pub tokenchange_prompts: Vec<Vec<u32>>,
}

impl Pipeline {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(PipelineConfig::load(path)?)
    }

    /// Section seeds are replaced by the top-level seed.
    pub fn new(mut config: PipelineConfig) -> Result<Self> {
        config.apply_seed(config.seed);
        config.validate()?;
        let model_config = ModelConfig::load(&config.model.config)?;
        let model = Model::load(&config.model.weights, model_config.clone())?;
        let tokenizer = Tokenizer::load(&config.model.tokenizer)?;
        if tokenizer.vocab_size() != model_config.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} pieces, the model expects {}",
                tokenizer.vocab_size(),
                model_config.vocab_size
            )));
        }
        let manifest = SaeManifest::load(&config.featurizers.manifest)?;
        let base = config.featurizers.manifest.parent().unwrap_or(Path::new("."));
        let featurizers = FeaturizerSet::from_manifest(config.model.id.clone(), model_config.clone(), &manifest, base)?;
        let corpus = corpus::read_jsonl(&config.corpus.path)?;
        let window = config.corpus.window.min(model_config.context_length);
        let sequences = corpus::tokenize(&corpus, &tokenizer, window)?;
        let d = &config.describe;
        let tokenchange_prompts = corpus::sample_windows(
            &sequences,
            d.k_prompts,
            d.prompt_len.min(model_config.context_length),
            derive_seed(config.seed, &["tokenchange_prompts"]),
        )?;
        let gateway = Gateway::new(config.gateway.clone())?;
        let templates = match &config.templates_dir {
            Some(dir) => Templates::with_overrides(dir)?,
            None => Templates::builtin(),
        };
        Ok(Self {
            config,
            model,
            tokenizer,
            featurizers,
            corpus,
            sequences,
            gateway,
            templates,
            tokenchange_prompts,
        })
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn created_at(&self) -> String {
        match self.config.gateway.backend {
            BackendKind::Mock => store::FIXED_TIMESTAMP.to_string(),
            BackendKind::Http => humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
        }
    }

    /// Feature specs, or the configured defaults when `specs` is empty.
    /// Duplicates are dropped and the result is sorted.
    pub fn resolve_features(&self, specs: &[String]) -> Result<Vec<FeatureRef>> {
        let specs = if specs.is_empty() { &self.config.features } else { specs };
        if specs.is_empty() {
            return Err(Error::Usage("no features selected".into()));
        }
        let mut out = BTreeSet::new();
        for s in specs {
            out.extend(self.featurizers.parse_features(s.trim())?);
        }
        Ok(out.into_iter().collect())
    }

    pub fn resolve_methods(&self, methods: &[Method]) -> Result<Vec<Method>> {
        let mut ms: Vec<Method> = if methods.is_empty() {
            self.config.default_methods()?
        } else {
            methods.to_vec()
        };
        ms.sort();
        ms.dedup();
        Ok(ms)
    }

    pub fn load_index(&self) -> Result<Option<ActivationIndex>> {
        let path = self.output_path(store::INDEX_FILE);
        if path.exists() {
            ActivationIndex::load(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            template_version: self.templates.version(),
            backend: match self.config.gateway.backend {
                BackendKind::Mock => "mock".into(),
                BackendKind::Http => "http".into(),
            },
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    fn write_manifest(&self) -> Result<()> {
        store::write_json(&self.output_path(store::MANIFEST_FILE), &self.manifest())
    }

    fn params(&self, feature: &FeatureRef) -> Result<Arc<FeaturizerParams>> {
        self.featurizers.params(feature)
    }

    // ------------------------------------------------------------ index

    pub fn cmd_index(&self, features: &[FeatureRef], force: bool) -> Result<Report> {
        let path = self.output_path(store::INDEX_FILE);
        if path.exists() && !force {
            return Err(Error::Usage(format!("{} exists; pass --force to overwrite", path.display())));
        }
        let index = build_index(&self.model, &self.featurizers, features, &self.sequences, &self.config.index)?;
        let mut buf = Vec::new();
        index.write_jsonl(&mut buf)?;
        store::write_atomic(&path, &buf)?;
        self.write_manifest()?;
        let dead = index.summaries().filter(|s| s.is_dead(0.0)).count();
        Ok(Report {
            written: index.len(),
            notices: vec![format!("{} features indexed, {dead} dead", index.len())],
            ..Report::default()
        })
    }

    // ------------------------------------------------------------ describe

    fn token_change_clamp(&self, feature: &FeatureRef, params: &FeaturizerParams) -> Result<f64> {
        let c = calibrate_clamp(
            &self.model,
            params,
            feature,
            &self.tokenchange_prompts,
            self.config.describe.tokenchange_kl,
            Sign::Positive,
            &self.config.eval,
        )?;
        Ok(c.m)
    }

    pub fn cmd_describe(&self, features: &[FeatureRef], methods: &[Method], force: bool) -> Result<Report> {
        let methods = self.resolve_methods(methods)?;
        let path = self.output_path(store::DESCRIPTIONS_FILE);
        let mut records: BTreeMap<(FeatureRef, Method), DescriptionRecord> = store::read_jsonl_or_empty(&path)?
            .into_iter()
            .map(|r: DescriptionRecord| (r.key(), r))
            .collect();
        let index = self.load_index()?;
        let created_at = self.created_at();
        let existing = &records;
        let outcomes: Vec<FeatureOutcome> = features
            .par_iter()
            .map(|f| {
                let mut ev = FeatureEvidence::new(self, f, index.as_ref());
                let mut out = FeatureOutcome::default();
                for m in &methods {
                    let key = (f.clone(), m.clone());
                    if existing.contains_key(&key) && !force {
                        out.skipped += 1;
                        continue;
                    }
                    match ev.describe(m, existing, &out.records) {
                        Ok(d) => out.records.push(DescriptionRecord::new(d, &created_at)),
                        Err(e) => {
                            log::warn!("{f} {m}: {e}");
                            out.failures.push(Failure {
                                feature: f.to_string(),
                                method: Some(m.to_string()),
                                error: e.to_string(),
                            });
                        }
                    }
                }
                out
            })
            .collect();
        let mut report = Report::default();
        for o in outcomes {
            report.written += o.records.len();
            report.skipped += o.skipped;
            report.failures.extend(o.failures);
            for r in o.records {
                records.insert(r.key(), r);
            }
        }
        store::write_jsonl(&path, records.values())?;
        self.write_manifest()?;
        Ok(report)
    }

    // ------------------------------------------------------------ eval

    pub fn cmd_eval(&self, features: &[FeatureRef], methods: &[Method], metrics: &[Metric], force: bool) -> Result<Report> {
        let methods = self.resolve_methods(methods)?;
        let desc_path = self.output_path(store::DESCRIPTIONS_FILE);
        if !desc_path.exists() {
            return Err(Error::Usage(format!("{} not found; run describe first", desc_path.display())));
        }
        let wanted: BTreeSet<&FeatureRef> = features.iter().collect();
        let descriptions: Vec<DescriptionRecord> = store::read_jsonl::<DescriptionRecord>(&desc_path)?
            .into_iter()
            .filter(|d| wanted.contains(&d.feature) && methods.contains(&d.method))
            .collect();
        let eval_path = self.output_path(store::EVALS_FILE);
        let mut records: BTreeMap<(FeatureRef, Method, Metric), EvalRecord> = store::read_jsonl_or_empty(&eval_path)?
            .into_iter()
            .map(|r: EvalRecord| (r.key(), r))
            .collect();
        let mut report = Report::default();
        if descriptions.is_empty() {
            log::warn!("no stored descriptions match the selected features and methods");
            report.notices.push("no descriptions matched".into());
        }

        let mut jobs: Vec<(&DescriptionRecord, Metric)> = Vec::new();
        for d in &descriptions {
            for &metric in metrics {
                if records.contains_key(&(d.feature.clone(), d.method.clone(), metric)) && !force {
                    report.skipped += 1;
                } else {
                    jobs.push((d, metric));
                }
            }
        }

        let targets: BTreeSet<FeatureRef> = jobs
            .iter()
            .filter(|(_, m)| *m == Metric::Output)
            .map(|(d, _)| d.feature.clone())
            .collect();
        let steering = self.steering_plan(&targets)?;

        let created_at = self.created_at();
        let results: Vec<Result<EvalRecord>> = jobs
            .par_iter()
            .map(|(d, metric)| match metric {
                Metric::Input => self.eval_input(d, &created_at),
                Metric::Output => self.eval_output(d, &steering, &created_at),
            })
            .collect();
        for ((d, metric), r) in jobs.iter().zip(results) {
            match r {
                Ok(rec) => {
                    report.written += 1;
                    records.insert(rec.key(), rec);
                }
                Err(e) => {
                    log::warn!("{} {} {metric}: {e}", d.feature, d.method);
                    report.failures.push(Failure {
                        feature: d.feature.to_string(),
                        method: Some(format!("{} ({metric})", d.method)),
                        error: e.to_string(),
                    });
                }
            }
        }
        store::write_jsonl(&eval_path, records.values())?;
        // the summary is recounted from what is on disk
        let stored: Vec<EvalRecord> = store::read_jsonl(&eval_path)?;
        let in_scope: Vec<EvalRecord> = stored
            .into_iter()
            .filter(|r| wanted.contains(&r.feature) && methods.contains(&r.description_method) && metrics.contains(&r.metric))
            .collect();
        report.eval_summary = summarize_evals(&in_scope);
        store::write_json(&self.output_path(store::EVAL_SUMMARY_FILE), &report.eval_summary)?;
        self.write_manifest()?;
        Ok(report)
    }

    fn eval_input(&self, d: &DescriptionRecord, created_at: &str) -> Result<EvalRecord> {
        let cfg = &self.config.eval;
        let (activating, neutral) =
            gen_eval_sentences(&self.gateway, &self.templates, &d.text, cfg.n_sentences_per_set, cfg.llm_attempts)?;
        let params = self.params(&d.feature)?;
        let r = input_eval(&self.model, &params, &d.feature, &self.tokenizer, &activating, &neutral)?;
        Ok(EvalRecord {
            feature: d.feature.clone(),
            description_method: d.method.clone(),
            metric: Metric::Input,
            payload: serde_json::json!({
                "activating": activating,
                "neutral": neutral,
                "activating_max": r.activating_max,
                "neutral_max": r.neutral_max,
                "mean_activating": r.mean_activating,
                "mean_neutral": r.mean_neutral,
            }),
            pass: r.pass,
            seeds: BTreeMap::from([("global".to_string(), self.config.seed)]),
            timestamps: Timestamps { created_at: created_at.to_string() },
        })
    }

    /// Steered sets for every target, and two steerable distractors each.
    fn steering_plan(&self, targets: &BTreeSet<FeatureRef>) -> Result<SteeringPlan> {
        let mut plan = SteeringPlan::default();
        if targets.is_empty() {
            return Ok(plan);
        }
        let index = self.load_index()?;
        let steer = |f: &FeatureRef| -> std::result::Result<SteeredTextSet, String> {
            let params = self.params(f).map_err(|e| e.to_string())?;
            steered_generations(&self.model, &params, f, &self.tokenizer, &self.config.eval).map_err(|e| e.to_string())
        };
        let first: Vec<(FeatureRef, std::result::Result<SteeredTextSet, String>)> =
            targets.par_iter().map(|f| (f.clone(), steer(f))).collect();
        plan.sets.extend(first);
        for f in targets {
            if plan.sets[f].is_err() {
                continue;
            }
            let seed = derive_seed(self.config.seed, &[&f.to_string(), "distractors"]);
            let mut chosen = Vec::new();
            for c in distractor_candidates(&self.featurizers, f, index.as_ref(), seed)? {
                if !plan.sets.contains_key(&c) {
                    let s = steer(&c);
                    plan.sets.insert(c.clone(), s);
                }
                if plan.sets[&c].is_ok() {
                    chosen.push(c);
                    if chosen.len() == 2 {
                        break;
                    }
                }
            }
            if let [a, b] = chosen.as_slice() {
                plan.distractors.insert(f.clone(), ([a.clone(), b.clone()], seed));
            }
        }
        Ok(plan)
    }

    fn eval_output(&self, d: &DescriptionRecord, steering: &SteeringPlan, created_at: &str) -> Result<EvalRecord> {
        let target = match steering.sets.get(&d.feature) {
            Some(Ok(s)) => s,
            Some(Err(e)) => return Err(Error::Precondition(format!("target cannot be steered: {e}"))),
            None => return Err(Error::Precondition("target was not steered".into())),
        };
        let ([a, b], distractor_seed) = steering
            .distractors
            .get(&d.feature)
            .ok_or_else(|| Error::Precondition("fewer than two steerable distractors".into()))?;
        let set = |f: &FeatureRef| steering.sets[f].as_ref().expect("chosen distractors steer");
        let order_seed = derive_seed(self.config.seed, &[&d.feature.to_string(), &d.method.to_string(), "order"]);
        let r = output_eval(
            &self.gateway,
            &self.templates,
            &d.text,
            target,
            [set(a), set(b)],
            order_seed,
            self.config.eval.llm_attempts,
        )?;
        Ok(EvalRecord {
            feature: d.feature.clone(),
            description_method: d.method.clone(),
            metric: Metric::Output,
            payload: serde_json::json!({
                "distractors": r.distractors,
                "presentation_order": r.presentation_order,
                "judge_choice": r.judge_choice,
                "clamp_values": target.clamp_values(),
                "target_texts": target.texts.iter().map(|t| &t.text).collect::<Vec<_>>(),
            }),
            pass: r.pass,
            seeds: BTreeMap::from([
                ("global".to_string(), self.config.seed),
                ("distractors".to_string(), *distractor_seed),
                ("presentation_order".to_string(), order_seed),
            ]),
            timestamps: Timestamps { created_at: created_at.to_string() },
        })
    }

    // ------------------------------------------------------------ revive

    pub fn cmd_revive(&self, features: &[FeatureRef], force: bool) -> Result<Report> {
        let index = self
            .load_index()?
            .ok_or_else(|| Error::Usage("no index found; run index first".into()))?;
        let path = self.output_path(store::REVIVAL_FILE);
        let mut records: BTreeMap<FeatureRef, RevivalRecord> = store::read_jsonl_or_empty(&path)?
            .into_iter()
            .map(|r: RevivalRecord| (r.feature.clone(), r))
            .collect();
        let mut report = Report::default();
        let mut todo = Vec::new();
        for f in features {
            match index.get(f) {
                Err(e) => report.failures.push(Failure { feature: f.to_string(), method: None, error: e.to_string() }),
                Ok(s) if !s.is_dead(0.0) => report.notices.push(format!("{f} is not dead; skipped")),
                Ok(_) if records.contains_key(f) && !force => report.skipped += 1,
                Ok(_) => todo.push(f),
            }
        }
        let results: Vec<Result<RevivalRecord>> = todo.par_iter().map(|f| self.revive_one(f)).collect();
        for (f, r) in todo.iter().zip(results) {
            match r {
                Ok(rec) => {
                    report.written += 1;
                    records.insert(rec.feature.clone(), rec);
                }
                Err(e) => report.failures.push(Failure { feature: f.to_string(), method: None, error: e.to_string() }),
            }
        }
        store::write_jsonl(&path, records.values())?;
        let wanted: BTreeSet<&FeatureRef> = features.iter().collect();
        let in_scope: Vec<&RevivalRecord> = records.values().filter(|r| wanted.contains(&r.feature)).collect();
        let summary = summarize_revival(&in_scope);
        store::write_json(&self.output_path(store::REVIVAL_SUMMARY_FILE), &summary)?;
        report.revival_summary = Some(summary);
        self.write_manifest()?;
        Ok(report)
    }

    fn revive_one(&self, f: &FeatureRef) -> Result<RevivalRecord> {
        let params = self.params(f)?;
        let plan = build_revival_plan(
            &self.gateway,
            &self.templates,
            &self.model,
            &params,
            f,
            &self.tokenizer,
            &self.tokenchange_prompts,
            &self.config.revival,
        )?;
        let r = revive(&self.model, &params, f, &self.tokenizer, &plan, self.config.revival.batch_size)?;
        Ok(RevivalRecord {
            feature: r.feature,
            activated: r.activated,
            witness: r.witness,
            witness_activation: r.witness_activation,
            candidates_tried: r.candidates_tried,
            seed: r.seed,
            degraded: plan.degraded,
        })
    }

    // ------------------------------------------------------------ flops

    pub fn cost_model(&self, feature_count: usize) -> CostModel {
        let corpus_tokens = self.sequences.iter().map(|s| s.tokens.len()).sum();
        CostModel::for_model(
            self.model.config(),
            corpus_tokens,
            feature_count,
            self.config.describe.k_prompts,
            self.config.describe.prompt_len,
        )
    }
}

pub fn summarize_revival(records: &[&RevivalRecord]) -> RevivalSummary {
    let mut by_witness = BTreeMap::new();
    for r in records {
        if let Some(w) = &r.witness {
            let key = match w.kind {
                WitnessKind::SingleToken => "single_token",
                WitnessKind::TokenCombo => "token_combo",
                WitnessKind::LlmSentence => "llm_sentence",
            };
            *by_witness.entry(key.to_string()).or_insert(0) += 1;
        }
    }
    let revived = records.iter().filter(|r| r.activated).count();
    RevivalSummary {
        dead: records.len(),
        revived,
        fraction: if records.is_empty() { 0.0 } else { revived as f64 / records.len() as f64 },
        by_witness,
    }
}

#[derive(Default)]
struct SteeringPlan {
    sets: BTreeMap<FeatureRef, std::result::Result<SteeredTextSet, String>>,
    distractors: BTreeMap<FeatureRef, ([FeatureRef; 2], u64)>,
}

#[derive(Default)]
struct FeatureOutcome {
    records: Vec<DescriptionRecord>,
    failures: Vec<Failure>,
    skipped: usize,
}

type TokenLists = (Vec<TokenScore>, Vec<TokenScore>);

/// Lazily computed evidence for one feature, shared by all its methods.
struct FeatureEvidence<'a> {
    p: &'a Pipeline,
    feature: &'a FeatureRef,
    index: Option<&'a ActivationIndex>,
    vocabproj: Option<TokenLists>,
    tokenchange: Option<(TokenLists, f32)>,
}

impl<'a> FeatureEvidence<'a> {
    fn new(p: &'a Pipeline, feature: &'a FeatureRef, index: Option<&'a ActivationIndex>) -> Self {
        Self { p, feature, index, vocabproj: None, tokenchange: None }
    }

    fn describer(&self) -> Describer<'a> {
        Describer::new(&self.p.gateway, &self.p.templates, &self.p.tokenizer)
    }

    fn summary(&self) -> Result<&'a crate::index::FeatureActivationSummary> {
        self.index
            .ok_or_else(|| Error::Dependency("MaxAct needs an activation index; run index first".into()))?
            .get(self.feature)
    }

    fn vocabproj(&mut self) -> Result<&TokenLists> {
        if self.vocabproj.is_none() {
            let params = self.p.params(self.feature)?;
            let t = self.p.config.describe.t_vocabproj;
            self.vocabproj = Some(vocab_projection_tokens(&self.p.model, &params, self.feature.index, t, &self.p.tokenizer)?);
        }
        Ok(self.vocabproj.as_ref().expect("just set"))
    }

    fn tokenchange(&mut self) -> Result<&(TokenLists, f32)> {
        if self.tokenchange.is_none() {
            let params = self.p.params(self.feature)?;
            let m = self.p.token_change_clamp(self.feature, &params)? as f32;
            let lists = token_change_scores(
                &self.p.model,
                &params,
                self.feature,
                &self.p.tokenchange_prompts,
                m,
                self.p.config.describe.t_tokenchange,
                &self.p.tokenizer,
            )?;
            self.tokenchange = Some((lists, m));
        }
        Ok(self.tokenchange.as_ref().expect("just set"))
    }

    fn section(&mut self, method: BaseMethod) -> Result<EvidenceSection> {
        let evidence = match method {
            BaseMethod::MaxAct => maxact_evidence(self.summary()?, &self.p.tokenizer)?,
            BaseMethod::VocabProj => {
                let (top, bottom) = self.vocabproj()?;
                token_list_evidence(top, bottom, None)?
            }
            BaseMethod::TokenChange => {
                let ((top, bottom), m) = self.tokenchange()?;
                token_list_evidence(top, bottom, Some(*m))?
            }
        };
        Ok(EvidenceSection { method, evidence })
    }

    fn describe(
        &mut self,
        method: &Method,
        stored: &BTreeMap<(FeatureRef, Method), DescriptionRecord>,
        fresh: &[DescriptionRecord],
    ) -> Result<Description> {
        let describer = self.describer();
        match method {
            Method::MaxAct => describer.maxact(self.summary()?),
            Method::VocabProj => {
                let (top, bottom) = self.vocabproj()?.clone();
                describer.vocabproj(self.feature, &top, &bottom)
            }
            Method::TokenChange => {
                let ((top, bottom), m) = self.tokenchange()?.clone();
                describer.tokenchange(self.feature, &top, &bottom, Some(m))
            }
            Method::EnsembleRaw { members } => {
                let sections = members.iter().map(|&m| self.section(m)).collect::<Result<Vec<_>>>()?;
                describer.ensemble_raw(self.feature, &sections)
            }
            Method::EnsembleConcat { members } => {
                let parts = members
                    .iter()
                    .map(|&m| {
                        let key = (self.feature.clone(), Method::base(m));
                        fresh
                            .iter()
                            .find(|r| r.key() == key)
                            .or_else(|| stored.get(&key))
                            .map(DescriptionRecord::description)
                            .ok_or_else(|| Error::Dependency(format!("{m} description for {} is missing", self.feature)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ensemble_concat(&parts)
            }
        }
    }
}

/// Pipeline configuration shipped with the toy fixture; paths are relative
/// to the fixture directory.
pub fn toy_pipeline_toml() -> String {
    r#"# Toy pipeline: 2-layer model, residual and MLP SAEs, 200-document corpus.
output_dir = "out"
seed = 0
features = ["toy_sae/0-22"]

[model]
id = "toy"
weights = "model.safetensors"
config = "model_config.json"
tokenizer = "tokenizer.json"

[featurizers]
manifest = "featurizers.json"

[corpus]
path = "corpus.jsonl"
window = 128

[describe]
t_vocabproj = 50
t_tokenchange = 20
k_prompts = 32
prompt_len = 32
tokenchange_kl = 0.5

[gateway]
backend = "mock"
"#
    .to_string()
}
