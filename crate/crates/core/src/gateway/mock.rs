//! Deterministic offline backend.
//!
//! The rules read the rendered prompts, so they depend on the markers the
//! built-in templates emit (see [`crate::prompts`]):
//!
//! * Explainer: `"concept: "` followed by the three highest-scoring tokens of
//!   each `### ` evidence section (score = largest value paired with the token,
//!   ties by frequency then first appearance), comma-joined, de-duplicated.
//! * Sentence generator: `n` activating sentences embedding the description's
//!   first content word, then `n` neutral sentences from a fixed pool that
//!   avoid it.
//! * Judge: scores each `Set i:` block by occurrences of the description's
//!   content words and answers the best (lowest index on ties), or answers
//!   uniformly at random under [`JudgePolicy::Uniform`].

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, EndpointConfig, Role, RoleClass, Transport, TransportFailure};
use crate::prompts::markers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgePolicy {
    #[default]
    KeywordOverlap,
    Uniform { seed: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub judge: JudgePolicy,
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "activates", "concept", "concepts", "feature", "fires", "for", "in", "mention",
    "mentions", "of", "on", "or", "reference", "references", "related", "text", "the", "to", "token", "tokens",
    "with", "word", "words",
];

const ACTIVATING: &[&str] = &[
    "I wrote {w} on the board.",
    "Everyone kept talking about {w} all day.",
    "There was {w} in the old story.",
    "She said {w} twice before leaving.",
    "The note mentioned {w} again.",
    "We saw {w} near the station.",
];

const NEUTRAL_POOL: &[&str] = &[
    "The weather was mild this afternoon.",
    "He opened the window for some air.",
    "Trains to the coast leave at noon.",
    "She planted tomatoes in the garden.",
    "The meeting ended earlier than planned.",
    "A small boat drifted across the bay.",
    "Our neighbor painted the fence green.",
    "The library closes at nine tonight.",
    "Bread is cheaper at the corner store.",
    "They walked home along the river.",
    "I need to return the borrowed pen.",
    "The soup needed a little more salt.",
    "Sunlight filled the empty room.",
    "Her brother studies history in the city.",
    "The clock on the wall stopped at ten.",
    "Rain is expected later this evening.",
];

/// Lowercased alphanumeric words minus stopwords, in order of appearance.
pub fn content_words(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
    {
        if !STOPWORDS.contains(&w.as_str()) && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"("(?:[^"\\]|\\.)*")\s+(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"#).unwrap())
}

fn user_text(request: &ChatRequest) -> String {
    request
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

fn line_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.trim().strip_prefix(prefix)).map(str::trim)
}

/// Top tokens of one evidence section.
fn section_top(section: &str, n: usize) -> Vec<String> {
    struct Stat {
        best: f64,
        count: usize,
        first: usize,
    }
    let mut stats: HashMap<String, Stat> = HashMap::new();
    for (i, cap) in pair_regex().captures_iter(section).enumerate() {
        let Ok(token) = serde_json::from_str::<String>(&cap[1]) else { continue };
        let Ok(value) = cap[2].parse::<f64>() else { continue };
        let s = stats.entry(token).or_insert(Stat { best: f64::NEG_INFINITY, count: 0, first: i });
        s.best = s.best.max(value);
        s.count += 1;
    }
    let mut ranked: Vec<(String, Stat)> = stats.into_iter().collect();
    ranked.sort_by(|(_, a), (_, b)| {
        b.best
            .total_cmp(&a.best)
            .then(b.count.cmp(&a.count))
            .then(a.first.cmp(&b.first))
    });
    ranked.into_iter().take(n).map(|(t, _)| t).collect()
}

pub fn explain(text: &str) -> String {
    let mut tokens: Vec<String> = Vec::new();
    let sections: Vec<&str> = text.split(markers::SECTION).skip(1).collect();
    for section in sections {
        for t in section_top(section, 3) {
            if !tokens.contains(&t) {
                tokens.push(t);
            }
        }
    }
    if tokens.is_empty() {
        return "concept: unknown".into();
    }
    format!("concept: {}", tokens.join(", "))
}

pub fn generate_sentences(description: &str, n: usize) -> String {
    let word = content_words(description)
        .into_iter()
        .next()
        .unwrap_or_else(|| "thing".to_string());
    let mut out = String::from(markers::ACTIVATING_HEADER);
    out.push('\n');
    for i in 0..n {
        let s = ACTIVATING[i % ACTIVATING.len()].replace("{w}", &word);
        out.push_str(&format!("{}. {s}\n", i + 1));
    }
    out.push_str(markers::NEUTRAL_HEADER);
    out.push('\n');
    let avoiding: Vec<&str> = NEUTRAL_POOL
        .iter()
        .copied()
        .filter(|s| !s.to_lowercase().contains(&word))
        .collect();
    for i in 0..n {
        let s = if avoiding.is_empty() {
            NEUTRAL_POOL[i % NEUTRAL_POOL.len()].to_lowercase().replace(&word, "")
        } else {
            avoiding[i % avoiding.len()].to_string()
        };
        out.push_str(&format!("{}. {s}\n", i + 1));
    }
    out
}

/// Keyword-overlap score of each `Set i:` block.
pub fn judge_scores(text: &str) -> Vec<usize> {
    let words = content_words(line_value(text, markers::DESCRIPTION).unwrap_or(""));
    let mut scores = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with(markers::SET_PREFIX) && t.ends_with(':') {
            if let Some(block) = current.take() {
                scores.push(block);
            }
            current = Some(String::new());
        } else if let Some(block) = current.as_mut() {
            if let Some(item) = t.strip_prefix(markers::ITEM_PREFIX) {
                block.push_str(&item.to_lowercase());
                block.push('\n');
            }
        }
    }
    scores.extend(current);
    scores
        .iter()
        .map(|block| words.iter().map(|w| block.matches(w.as_str()).count()).sum())
        .collect()
}

fn judge(text: &str, policy: JudgePolicy) -> String {
    let scores = judge_scores(text);
    let n = scores.len().max(1);
    let pick = match policy {
        JudgePolicy::KeywordOverlap => {
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            best
        }
        JudgePolicy::Uniform { seed } => {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(text.as_bytes());
            let digest = h.finalize();
            (u64::from_le_bytes(digest[..8].try_into().unwrap()) % n as u64) as usize
        }
    };
    format!("{}", pick + 1)
}

impl Transport for MockBackend {
    fn send(
        &self,
        _endpoint: &EndpointConfig,
        _api_key: Option<&str>,
        request: &ChatRequest,
    ) -> Result<String, TransportFailure> {
        let text = user_text(request);
        Ok(match request.role_class {
            RoleClass::Explainer => explain(&text),
            RoleClass::SentenceGenerator => {
                let description = line_value(&text, markers::DESCRIPTION).unwrap_or("");
                let n = line_value(&text, markers::COUNT)
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(5);
                generate_sentences(description, n)
            }
            RoleClass::Judge => judge(&text, self.judge),
        })
    }
}
