//! JSONL stores written under the output directory.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::describe::{Description, Evidence, LlmFingerprint, Method};
use crate::error::{Error, Result};
use crate::featurizer::FeatureRef;
use crate::revival::Witness;

pub const INDEX_FILE: &str = "index.jsonl";
pub const DESCRIPTIONS_FILE: &str = "descriptions.jsonl";
pub const EVALS_FILE: &str = "evals.jsonl";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";
pub const REVIVAL_FILE: &str = "revival.jsonl";
pub const REVIVAL_SUMMARY_FILE: &str = "revival_summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Timestamp written under the mock backend so stores stay reproducible.
pub const FIXED_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub feature: FeatureRef,
    pub method: Method,
    pub text: String,
    pub evidence: Option<Evidence>,
    pub llm: Option<LlmFingerprint>,
    pub created_at: String,
}

impl DescriptionRecord {
    pub fn new(d: Description, created_at: &str) -> Self {
        Self {
            feature: d.feature,
            method: d.method,
            text: d.text,
            evidence: d.evidence,
            llm: d.llm,
            created_at: created_at.to_string(),
        }
    }

    pub fn description(&self) -> Description {
        Description {
            feature: self.feature.clone(),
            method: self.method.clone(),
            text: self.text.clone(),
            evidence: self.evidence.clone(),
            llm: self.llm.clone(),
        }
    }

    pub fn key(&self) -> (FeatureRef, Method) {
        (self.feature.clone(), self.method.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Input,
    Output,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Input => "input",
            Self::Output => "output",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub feature: FeatureRef,
    pub description_method: Method,
    pub metric: Metric,
    pub payload: serde_json::Value,
    pub pass: bool,
    pub seeds: BTreeMap<String, u64>,
    pub timestamps: Timestamps,
}

impl EvalRecord {
    pub fn key(&self) -> (FeatureRef, Method, Metric) {
        (self.feature.clone(), self.description_method.clone(), self.metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevivalRecord {
    pub feature: FeatureRef,
    pub activated: bool,
    pub witness: Option<Witness>,
    pub witness_activation: f32,
    pub candidates_tried: usize,
    pub seed: u64,
    pub degraded: bool,
}

/// Pass rate with a 95% normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub method: Method,
    pub metric: Metric,
    pub n: usize,
    pub passes: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn pass_rate_ci(passes: usize, n: usize) -> (f64, f64, f64) {
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = passes as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    (p, p - half, p + half)
}

/// One row per (method, metric), in canonical order.
pub fn summarize_evals(records: &[EvalRecord]) -> Vec<RateSummary> {
    let mut counts: BTreeMap<(Method, Metric), (usize, usize)> = BTreeMap::new();
    for r in records {
        let c = counts.entry((r.description_method.clone(), r.metric)).or_default();
        c.0 += 1;
        c.1 += r.pass as usize;
    }
    counts
        .into_iter()
        .map(|((method, metric), (n, passes))| {
            let (rate, ci_low, ci_high) = pass_rate_ci(passes, n);
            RateSummary { method, metric, n, passes, rate, ci_low, ci_high }
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Missing file reads as empty.
pub fn read_jsonl_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}
