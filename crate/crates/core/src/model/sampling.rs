use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Temperature { tau: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub mode: DecodeMode,
    pub seed: u64,
    pub max_new_tokens: usize,
    /// Generation stops before emitting this token.
    #[serde(default)]
    pub stop_token: Option<u32>,
}

impl SamplingConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            seed: 0,
            max_new_tokens,
            stop_token: None,
        }
    }

    pub fn temperature(tau: f32, seed: u64, max_new_tokens: usize) -> Self {
        Self {
            mode: DecodeMode::Temperature { tau },
            seed,
            max_new_tokens,
            stop_token: None,
        }
    }

    pub fn with_stop_token(mut self, token: u32) -> Self {
        self.stop_token = Some(token);
        self
    }

    pub(crate) fn pick<R: Rng>(&self, logits: &[f32], rng: &mut R) -> u32 {
        match self.mode {
            DecodeMode::Greedy => argmax(logits),
            DecodeMode::Temperature { tau } => {
                let scaled: Vec<f32> = logits.iter().map(|&x| x / tau).collect();
                let probs = softmax(&scaled);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as u32;
                    }
                }
                // u landed in the rounding slack above the last cumulative sum
                probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
            }
        }
    }
}

/// Index of the largest logit; lowest index on ties.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best as u32
}
