//! Corpus scan collecting per-feature top activating sequences, quantile
//! samples, density and dead flags.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Sequence;
use crate::error::{Error, Result};
use crate::featurizer::{FeatureRef, FeaturizerParams, FeaturizerSet};
use crate::model::{HookSite, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub k_top: usize,
    /// Equal-width bands over `(0, corpus_max]`.
    pub bands: usize,
    pub samples_per_band: usize,
    /// Random active sequences kept per feature to draw band samples from.
    pub candidate_pool: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            k_top: 5,
            bands: 4,
            samples_per_band: 2,
            candidate_pool: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub doc_id: String,
    pub tokens: Vec<u32>,
    pub activations: Vec<f32>,
    pub max_activation: f32,
}

impl ActivationRecord {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<u32>, activations: Vec<f32>) -> Self {
        let max_activation = activations.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        Self {
            doc_id: doc_id.into(),
            tokens,
            activations,
            max_activation,
        }
    }
}

/// Descending max activation, then ascending doc id.
pub fn record_order(a: &ActivationRecord, b: &ActivationRecord) -> Ordering {
    b.max_activation
        .total_cmp(&a.max_activation)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSample {
    /// 1-based band; band `b` of `B` covers `((b−1)/B, b/B]` of corpus max.
    pub band: usize,
    pub record: ActivationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureActivationSummary {
    pub feature: FeatureRef,
    pub top_records: Vec<ActivationRecord>,
    pub quantile_samples: Vec<QuantileSample>,
    pub activation_density: f64,
    pub active_tokens: u64,
    pub total_tokens: u64,
    pub corpus_max: f32,
}

impl FeatureActivationSummary {
    pub fn is_dead(&self, threshold: f32) -> bool {
        self.corpus_max <= threshold
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationIndex {
    summaries: BTreeMap<FeatureRef, FeatureActivationSummary>,
}

impl ActivationIndex {
    pub fn get(&self, feature: &FeatureRef) -> Result<&FeatureActivationSummary> {
        self.summaries
            .get(feature)
            .ok_or_else(|| Error::FeatureNotIndexed(feature.to_string()))
    }

    pub fn contains(&self, feature: &FeatureRef) -> bool {
        self.summaries.contains_key(feature)
    }

    pub fn insert(&mut self, summary: FeatureActivationSummary) {
        self.summaries.insert(summary.feature.clone(), summary);
    }

    pub fn len(&self) -> usize {
        self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }

    pub fn summaries(&self) -> impl Iterator<Item = &FeatureActivationSummary> {
        self.summaries.values()
    }

    pub fn features(&self) -> impl Iterator<Item = &FeatureRef> {
        self.summaries.keys()
    }

    /// One summary per line, in feature order.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for s in self.summaries.values() {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(|e| Error::io("<index>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut index = Self::default();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                index.insert(serde_json::from_str(&line)?);
            }
        }
        Ok(index)
    }
}

/// First `min(n, available)` top records, descending, ties by doc id.
pub fn top_sequences(index: &ActivationIndex, feature: &FeatureRef, n: usize) -> Result<Vec<ActivationRecord>> {
    let s = index.get(feature)?;
    let mut records = s.top_records.clone();
    records.sort_by(record_order);
    records.truncate(n);
    Ok(records)
}

pub fn is_dead(index: &ActivationIndex, feature: &FeatureRef, threshold: f32) -> Result<bool> {
    Ok(index.get(feature)?.is_dead(threshold))
}

#[derive(Debug, Clone)]
struct Partial {
    top: Vec<ActivationRecord>,
    pool: Vec<(u64, ActivationRecord)>,
    active: u64,
    total: u64,
    max: f32,
}

impl Partial {
    fn empty() -> Self {
        Self {
            top: Vec::new(),
            pool: Vec::new(),
            active: 0,
            total: 0,
            max: f32::NEG_INFINITY,
        }
    }

    fn push(&mut self, record: ActivationRecord, priority: u64, cfg: &IndexConfig) {
        self.total += record.activations.len() as u64;
        self.active += record.activations.iter().filter(|&&a| a > 0.0).count() as u64;
        self.max = self.max.max(record.max_activation);
        if record.max_activation > 0.0 && cfg.candidate_pool > 0 {
            insert_bounded(&mut self.pool, (priority, record.clone()), cfg.candidate_pool, pool_order);
        }
        if cfg.k_top > 0 {
            insert_bounded(&mut self.top, record, cfg.k_top, record_order);
        }
    }

    /// Associative and commutative, so any reduction tree gives the same result.
    fn merge(mut self, other: Self, cfg: &IndexConfig) -> Self {
        self.active += other.active;
        self.total += other.total;
        self.max = self.max.max(other.max);
        for r in other.top {
            insert_bounded(&mut self.top, r, cfg.k_top, record_order);
        }
        for p in other.pool {
            insert_bounded(&mut self.pool, p, cfg.candidate_pool, pool_order);
        }
        self
    }

    fn finish(self, feature: FeatureRef, cfg: &IndexConfig) -> FeatureActivationSummary {
        let corpus_max = if self.total == 0 { 0.0 } else { self.max };
        let mut quantile_samples = Vec::new();
        if corpus_max > 0.0 && cfg.bands > 0 {
            let mut taken = vec![0usize; cfg.bands];
            for (_, r) in self.pool {
                if self.top.contains(&r) {
                    continue;
                }
                let frac = (r.max_activation / corpus_max) as f64;
                let band = ((frac * cfg.bands as f64).ceil() as usize).clamp(1, cfg.bands);
                if taken[band - 1] < cfg.samples_per_band {
                    taken[band - 1] += 1;
                    quantile_samples.push(QuantileSample { band, record: r });
                }
            }
            quantile_samples.sort_by_key(|q| q.band);
        }
        FeatureActivationSummary {
            feature,
            top_records: self.top,
            quantile_samples,
            activation_density: if self.total == 0 {
                0.0
            } else {
                self.active as f64 / self.total as f64
            },
            active_tokens: self.active,
            total_tokens: self.total,
            corpus_max,
        }
    }
}

fn pool_order(a: &(u64, ActivationRecord), b: &(u64, ActivationRecord)) -> Ordering {
    a.0.cmp(&b.0).then_with(|| record_order(&a.1, &b.1))
}

fn insert_bounded<T>(items: &mut Vec<T>, item: T, cap: usize, cmp: fn(&T, &T) -> Ordering) {
    let pos = items.partition_point(|x| cmp(x, &item) == Ordering::Less);
    if pos < cap {
        items.insert(pos, item);
        items.truncate(cap);
    }
}

fn priority(seed: u64, doc_id: &str, tokens: &[u32]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    h.update([0]);
    for t in tokens {
        h.update(t.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

struct Group {
    site_slot: usize,
    params: Arc<FeaturizerParams>,
    /// (feature indices within the featurizer, positions in the feature list)
    indices: Vec<usize>,
    slots: Vec<usize>,
}

/// Scan `corpus` once (in parallel shards) and summarize every feature.
/// The result depends only on the corpus contents and `config.seed`, not on
/// corpus order or thread count.
pub fn build_index(
    model: &Model,
    featurizers: &FeaturizerSet,
    features: &[FeatureRef],
    corpus: &[Sequence],
    config: &IndexConfig,
) -> Result<ActivationIndex> {
    if corpus.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let features: Vec<FeatureRef> = features.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut sites: Vec<HookSite> = Vec::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut group_of: BTreeMap<(HookSite, String), usize> = BTreeMap::new();
    for (slot, f) in features.iter().enumerate() {
        let params = featurizers.params(f)?;
        let site_slot = match sites.iter().position(|&s| s == f.site) {
            Some(i) => i,
            None => {
                sites.push(f.site);
                sites.len() - 1
            }
        };
        let key = (f.site, f.featurizer.to_string());
        let g = *group_of.entry(key).or_insert_with(|| {
            groups.push(Group {
                site_slot,
                params,
                indices: Vec::new(),
                slots: Vec::new(),
            });
            groups.len() - 1
        });
        groups[g].indices.push(f.index);
        groups[g].slots.push(slot);
    }

    let n = features.len();
    let partials = corpus
        .par_iter()
        .filter(|s| !s.tokens.is_empty())
        .try_fold(
            || vec![Partial::empty(); n],
            |mut acc, seq| -> Result<Vec<Partial>> {
                let (hidden, _) = model.forward_capture_sites(&seq.tokens, &sites, None)?;
                let prio = priority(config.seed, &seq.doc_id, &seq.tokens);
                for g in &groups {
                    let acts = g.params.activations_many(hidden[g.site_slot].view(), &g.indices)?;
                    for (a, &slot) in acts.into_iter().zip(&g.slots) {
                        let record = ActivationRecord::new(seq.doc_id.clone(), seq.tokens.clone(), a);
                        acc[slot].push(record, prio, config);
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![Partial::empty(); n],
            |a, b| Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y, config)).collect()),
        )?;

    let mut index = ActivationIndex::default();
    for (f, p) in features.into_iter().zip(partials) {
        index.insert(p.finish(f, config));
    }
    Ok(index)
}
