//! Prompt templates for the three LLM roles.
//!
//! Templates are plain text with `{name}` placeholders. The built-in set is
//! compiled in; any file of the same name in an override directory replaces
//! its built-in counterpart.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Line markers shared by the templates, the response parsers and the mock
/// backend.
pub mod markers {
    /// Evidence section header, followed by the method name.
    pub const SECTION: &str = "### ";
    pub const DESCRIPTION: &str = "Feature description:";
    pub const COUNT: &str = "Number of sentences per set:";
    pub const ACTIVATING_HEADER: &str = "ACTIVATING:";
    pub const NEUTRAL_HEADER: &str = "NEUTRAL:";
    /// Judge set header is `Set <i>:`.
    pub const SET_PREFIX: &str = "Set ";
    pub const ITEM_PREFIX: &str = "- ";
}

const NAMES: [&str; 7] = [
    "explainer_system",
    "explain_maxact",
    "explain_vocabproj",
    "explain_tokenchange",
    "explain_ensemble",
    "sentences",
    "judge",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub explainer_system: String,
    pub explain_maxact: String,
    pub explain_vocabproj: String,
    pub explain_tokenchange: String,
    pub explain_ensemble: String,
    pub sentences: String,
    pub judge: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            explainer_system: include_str!("../templates/explainer_system.txt").into(),
            explain_maxact: include_str!("../templates/explain_maxact.txt").into(),
            explain_vocabproj: include_str!("../templates/explain_vocabproj.txt").into(),
            explain_tokenchange: include_str!("../templates/explain_tokenchange.txt").into(),
            explain_ensemble: include_str!("../templates/explain_ensemble.txt").into(),
            sentences: include_str!("../templates/sentences.txt").into(),
            judge: include_str!("../templates/judge.txt").into(),
        }
    }

    fn slot(&mut self, name: &str) -> &mut String {
        match name {
            "explainer_system" => &mut self.explainer_system,
            "explain_maxact" => &mut self.explain_maxact,
            "explain_vocabproj" => &mut self.explain_vocabproj,
            "explain_tokenchange" => &mut self.explain_tokenchange,
            "explain_ensemble" => &mut self.explain_ensemble,
            "sentences" => &mut self.sentences,
            "judge" => &mut self.judge,
            _ => unreachable!("unknown template {name}"),
        }
    }

    /// Built-ins overridden by `<dir>/<name>.txt` where present.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut t = Self::builtin();
        for name in NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *t.slot(name) = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(t)
    }

    /// Short content hash identifying this template set.
    pub fn version(&self) -> String {
        let mut h = Sha256::new();
        let mut t = self.clone();
        for name in NAMES {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(t.slot(name).as_bytes());
            h.update([0]);
        }
        hex::encode(&h.finalize()[..6])
    }
}

/// Substitute `{key}` placeholders.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Collapse whitespace so a value fits on one template line.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
