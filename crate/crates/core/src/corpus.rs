//! JSONL corpus of `{doc_id, text}` records.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

/// A tokenized, window-truncated document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub doc_id: String,
    pub tokens: Vec<u32>,
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(serde_json::from_str(&line)?);
    }
    Ok(docs)
}

/// Tokenize with a leading BOS and truncate to `window` tokens.
pub fn tokenize(docs: &[Document], tokenizer: &Tokenizer, window: usize) -> Result<Vec<Sequence>> {
    docs.iter()
        .map(|d| {
            let mut tokens = tokenizer.encode_with_bos(&d.text)?;
            tokens.truncate(window);
            Ok(Sequence {
                doc_id: d.doc_id.clone(),
                tokens,
            })
        })
        .collect()
}

/// `count` random windows of up to `len` tokens, seeded. Documents are drawn
/// uniformly, then a start offset uniformly within the document.
pub fn sample_windows(seqs: &[Sequence], count: usize, len: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    let usable: Vec<&Sequence> = seqs.iter().filter(|s| !s.tokens.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let seq = usable[rng.random_range(0..usable.len())];
            let n = seq.tokens.len();
            let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
            seq.tokens[start..(start + len).min(n)].to_vec()
        })
        .collect())
}
