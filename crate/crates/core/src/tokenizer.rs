//! Vocabulary-file tokenizer.
//!
//! The vocabulary is a JSON object of token string to id plus special-token
//! ids. Text is segmented by greedy longest match, which covers both the
//! byte/char-level toy vocabulary and word-piece style vocabularies whose
//! pieces are plain strings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenizerFile {
    pub vocab: HashMap<String, u32>,
    pub bos_id: u32,
    pub eos_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unk_id: Option<u32>,
    #[serde(default)]
    pub lowercase: bool,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pieces: HashMap<String, u32>,
    id_to_piece: Vec<String>,
    special: Vec<bool>,
    bos_id: u32,
    eos_id: u32,
    unk_id: Option<u32>,
    lowercase: bool,
    max_piece_chars: usize,
}

impl Tokenizer {
    pub fn from_file_spec(spec: TokenizerFile) -> Result<Self> {
        let vocab_size = spec.vocab.values().map(|&id| id as usize + 1).max().unwrap_or(0);
        let mut id_to_piece = vec![String::new(); vocab_size];
        let mut seen = vec![false; vocab_size];
        for (piece, &id) in &spec.vocab {
            if seen[id as usize] {
                return Err(Error::Tokenize(format!("duplicate token id {id}")));
            }
            seen[id as usize] = true;
            id_to_piece[id as usize] = piece.clone();
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::Tokenize(format!("vocabulary has no token with id {gap}")));
        }
        let mut special = vec![false; vocab_size];
        for id in [Some(spec.bos_id), Some(spec.eos_id), spec.unk_id].into_iter().flatten() {
            let slot = special
                .get_mut(id as usize)
                .ok_or_else(|| Error::Tokenize(format!("special id {id} outside vocabulary")))?;
            *slot = true;
        }
        let pieces: HashMap<String, u32> = spec
            .vocab
            .iter()
            .filter(|(_, &id)| !special[id as usize])
            .map(|(p, &id)| (p.clone(), id))
            .collect();
        let max_piece_chars = pieces.keys().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self {
            pieces,
            id_to_piece,
            special,
            bos_id: spec.bos_id,
            eos_id: spec.eos_id,
            unk_id: spec.unk_id,
            lowercase: spec.lowercase,
            max_piece_chars,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_spec(serde_json::from_str(&text)?)
    }

    pub fn to_file_spec(&self) -> TokenizerFile {
        TokenizerFile {
            vocab: self
                .id_to_piece
                .iter()
                .enumerate()
                .map(|(id, p)| (p.clone(), id as u32))
                .collect(),
            bos_id: self.bos_id,
            eos_id: self.eos_id,
            unk_id: self.unk_id,
            lowercase: self.lowercase,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_piece.len()
    }

    pub fn bos_id(&self) -> u32 {
        self.bos_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special.get(id as usize).copied().unwrap_or(false)
    }

    /// Raw piece for an id, including special-token names.
    pub fn piece(&self, id: u32) -> &str {
        self.id_to_piece.get(id as usize).map(String::as_str).unwrap_or("")
    }

    pub fn token_id(&self, piece: &str) -> Option<u32> {
        self.pieces.get(piece).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let text = if self.lowercase { text.to_lowercase() } else { text.to_string() };
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::with_capacity(chars.len());
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let mut matched = None;
            for len in (1..=self.max_piece_chars.min(chars.len() - i)).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if let Some(&id) = self.pieces.get(&buf) {
                    matched = Some((id, len));
                    break;
                }
            }
            match (matched, self.unk_id) {
                (Some((id, len)), _) => {
                    out.push(id);
                    i += len;
                }
                (None, Some(unk)) => {
                    out.push(unk);
                    i += 1;
                }
                (None, None) => {
                    return Err(Error::Tokenize(format!(
                        "no vocabulary piece matches {:?} at char {i}",
                        chars[i]
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Encode with a leading BOS token.
    pub fn encode_with_bos(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = vec![self.bos_id];
        ids.extend(self.encode(text)?);
        Ok(ids)
    }

    /// Concatenate pieces, dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !self.is_special(id))
            .map(|&id| self.piece(id))
            .collect()
    }
}
