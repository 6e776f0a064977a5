//! Pre-LayerNorm GPT-style forward pass.
//!
//! Tensor names in the weight container:
//!
//! | name                         | shape              |
//! |------------------------------|--------------------|
//! | `embed`                      | `vocab × d_model`  |
//! | `pos_embed` (learned only)   | `context × d_model`|
//! | `blocks.{l}.ln1.{weight,bias}`, `blocks.{l}.ln2.{weight,bias}` | `d_model` |
//! | `blocks.{l}.attn.{w_q,w_k,w_v,w_o}` | `d_model × d_model` |
//! | `blocks.{l}.attn.{b_q,b_k,b_v,b_o}` | `d_model` |
//! | `blocks.{l}.mlp.w_in` / `b_in`  | `d_model × d_mlp` / `d_mlp` |
//! | `blocks.{l}.mlp.w_out` / `b_out`| `d_mlp × d_model` / `d_model` |
//! | `ln_final.{weight,bias}`     | `d_model`          |
//! | `unembed`                    | `d_model × vocab`  |
//!
//! Hook sites are visited in order; an active intervention edits the site's
//! vectors in place (every position) before any capture or later read.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{HookSite, ModelConfig, PositionalScheme};
use super::dist::softmax;
use super::sampling::SamplingConfig;
use crate::error::{Error, Result};
use crate::featurizer::FeaturizerParams;
use crate::weights::TensorStore;

/// Clamp one feature to `value` at every position of `site`.
#[derive(Debug, Clone, Copy)]
pub struct Intervention<'a> {
    pub site: HookSite,
    pub featurizer: &'a FeaturizerParams,
    pub feature: usize,
    pub value: f32,
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Array1<f32>,
    bias: Array1<f32>,
    eps: f32,
    enabled: bool,
}

impl LayerNorm {
    fn load(store: &TensorStore, prefix: &str, d: usize, eps: f32, enabled: bool) -> Result<Self> {
        let (gain, bias) = if enabled {
            (
                store.vector(&format!("{prefix}.weight"), d)?,
                store.vector(&format!("{prefix}.bias"), d)?,
            )
        } else {
            (Array1::ones(d), Array1::zeros(d))
        };
        Ok(Self { gain, bias, eps, enabled })
    }

    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        if !self.enabled {
            return x.clone();
        }
        let mut out = x.clone();
        let d = x.ncols() as f32;
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
            let inv = 1.0 / (var + self.eps).sqrt();
            row.iter_mut()
                .zip(self.gain.iter().zip(&self.bias))
                .for_each(|(v, (g, b))| *v = (*v - mean) * inv * g + b);
        }
        out
    }

    /// Double-precision normalization of a single vector.
    pub fn apply_f64(&self, v: ArrayView1<f32>) -> Vec<f64> {
        self.apply_f64_with_eps(v, self.eps as f64)
    }

    /// As [`Self::apply_f64`] with an explicit epsilon. With `eps = 0` the
    /// result is exactly invariant to positive rescaling of `v`; a constant
    /// vector normalizes to the bias.
    pub fn apply_f64_with_eps(&self, v: ArrayView1<f32>, eps: f64) -> Vec<f64> {
        let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        if !self.enabled {
            return v;
        }
        let d = v.len() as f64;
        let mean = v.iter().sum::<f64>() / d;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
        let inv = if var + eps > 0.0 { 1.0 / (var + eps).sqrt() } else { 0.0 };
        v.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(x, (&g, &b))| (x - mean) * inv * g as f64 + b as f64)
            .collect()
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    w_q: Array2<f32>,
    b_q: Array1<f32>,
    w_k: Array2<f32>,
    b_k: Array1<f32>,
    w_v: Array2<f32>,
    b_v: Array1<f32>,
    w_o: Array2<f32>,
    b_o: Array1<f32>,
    ln2: LayerNorm,
    w_in: Array2<f32>,
    b_in: Array1<f32>,
    w_out: Array2<f32>,
    b_out: Array1<f32>,
}

impl Block {
    fn load(store: &TensorStore, cfg: &ModelConfig, l: usize) -> Result<Self> {
        let (d, m) = (cfg.d_model, cfg.d_mlp);
        let p = format!("blocks.{l}");
        let mat = |n: &str, r, c| store.matrix(&format!("{p}.{n}"), r, c);
        let vec = |n: &str, len| store.vector(&format!("{p}.{n}"), len);
        Ok(Self {
            ln1: LayerNorm::load(store, &format!("{p}.ln1"), d, cfg.ln_eps, cfg.layernorm_enabled)?,
            w_q: mat("attn.w_q", d, d)?,
            b_q: vec("attn.b_q", d)?,
            w_k: mat("attn.w_k", d, d)?,
            b_k: vec("attn.b_k", d)?,
            w_v: mat("attn.w_v", d, d)?,
            b_v: vec("attn.b_v", d)?,
            w_o: mat("attn.w_o", d, d)?,
            b_o: vec("attn.b_o", d)?,
            ln2: LayerNorm::load(store, &format!("{p}.ln2"), d, cfg.ln_eps, cfg.layernorm_enabled)?,
            w_in: mat("mlp.w_in", d, m)?,
            b_in: vec("mlp.b_in", m)?,
            w_out: mat("mlp.w_out", m, d)?,
            b_out: vec("mlp.b_out", d)?,
        })
    }
}

pub(crate) fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Per-layer key/value rows for incremental decoding.
struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }
}

struct Hooks<'a> {
    intervention: Option<&'a Intervention<'a>>,
    captures: Vec<(HookSite, Option<Array2<f32>>)>,
}

impl Hooks<'_> {
    fn visit(&mut self, site: HookSite, x: &mut Array2<f32>) -> Result<()> {
        if let Some(iv) = self.intervention.filter(|iv| iv.site == site) {
            for row in x.rows_mut() {
                iv.featurizer.clamp_edit_in_place(row, iv.feature, iv.value)?;
            }
        }
        for (s, slot) in &mut self.captures {
            if *s == site {
                *slot = Some(x.clone());
            }
        }
        Ok(())
    }
}

/// Hidden states at one site plus final logits, one row per position.
#[derive(Debug, Clone)]
pub struct Capture {
    pub hidden: Array2<f32>,
    pub logits: Array2<f32>,
}

/// Immutable model handle; every call owns its own inference context.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    embed: Array2<f32>,
    pos_embed: Option<Array2<f32>>,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    unembed: Array2<f32>,
}

impl Model {
    pub fn load(weights_path: impl AsRef<Path>, config: ModelConfig) -> Result<Self> {
        Self::from_store(&TensorStore::load(weights_path)?, config)
    }

    pub fn from_store(store: &TensorStore, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers_present: BTreeSet<usize> = store
            .names()
            .filter_map(|n| n.strip_prefix("blocks.")?.split('.').next()?.parse().ok())
            .collect();
        if layers_present.len() != config.n_layers {
            return Err(Error::ShapeMismatch {
                name: "blocks".into(),
                expected: vec![config.n_layers],
                actual: vec![layers_present.len()],
            });
        }
        let (d, v) = (config.d_model, config.vocab_size);
        let embed = store.matrix("embed", v, d)?;
        let pos_embed = match config.positional {
            PositionalScheme::Learned => Some(store.matrix("pos_embed", config.context_length, d)?),
            PositionalScheme::None => None,
        };
        let blocks = (0..config.n_layers)
            .map(|l| Block::load(store, &config, l))
            .collect::<Result<Vec<_>>>()?;
        let ln_final = LayerNorm::load(store, "ln_final", d, config.ln_eps, config.layernorm_enabled)?;
        let unembed = store.matrix("unembed", d, v)?;
        Ok(Self {
            config,
            embed,
            pos_embed,
            blocks,
            ln_final,
            unembed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `d_model × vocab`.
    pub fn unembed(&self) -> &Array2<f32> {
        &self.unembed
    }

    /// `vocab × d_model`.
    pub fn embed(&self) -> &Array2<f32> {
        &self.embed
    }

    pub fn final_layer_norm(&self) -> &LayerNorm {
        &self.ln_final
    }

    fn validate_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.len() > self.config.context_length {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                limit: self.config.context_length,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn validate_site(&self, site: HookSite) -> Result<()> {
        self.config.check_site(site)
    }

    fn validate_intervention(&self, iv: Option<&Intervention<'_>>) -> Result<()> {
        if let Some(iv) = iv {
            self.validate_site(iv.site)?;
            let dim = self.config.site_dim(iv.site);
            if iv.featurizer.input_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: iv.featurizer.input_dim(),
                });
            }
            if iv.feature >= iv.featurizer.width() {
                return Err(Error::IndexOutOfRange {
                    index: iv.feature,
                    size: iv.featurizer.width(),
                });
            }
        }
        Ok(())
    }

    fn forward_chunk(&self, cache: &mut KvCache, tokens: &[u32], hooks: &mut Hooks<'_>) -> Result<Array2<f32>> {
        let cfg = &self.config;
        let (n, d) = (tokens.len(), cfg.d_model);
        let start = cache.len;
        let n_heads = cfg.n_heads;
        let head_dim = d / n_heads;
        let scale = 1.0 / (head_dim as f32).sqrt();

        let mut x = Array2::<f32>::zeros((n, d));
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&self.embed.row(t as usize));
            if let Some(pos) = &self.pos_embed {
                row += &pos.row(start + i);
            }
        }

        let mut scores = Vec::with_capacity(start + n);
        for (l, block) in self.blocks.iter().enumerate() {
            let h = block.ln1.forward(&x);
            let q = h.dot(&block.w_q) + &block.b_q;
            let k = h.dot(&block.w_k) + &block.b_k;
            let v = h.dot(&block.w_v) + &block.b_v;
            cache.keys[l].extend(k.iter());
            cache.values[l].extend(v.iter());
            let (keys, values) = (&cache.keys[l], &cache.values[l]);

            let mut attn = Array2::<f32>::zeros((n, d));
            for head in 0..n_heads {
                let off = head * head_dim;
                for i in 0..n {
                    let p = start + i;
                    let qi = q.slice(s![i, off..off + head_dim]);
                    scores.clear();
                    for j in 0..=p {
                        let kj = &keys[j * d + off..j * d + off + head_dim];
                        let dot: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                        scores.push(dot * scale);
                    }
                    let max = scores.iter().fold(f32::NEG_INFINITY, |m, &s| m.max(s));
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let mut out = attn.slice_mut(s![i, off..off + head_dim]);
                    for (j, &w) in scores.iter().enumerate() {
                        let vj = &values[j * d + off..j * d + off + head_dim];
                        out.iter_mut().zip(vj).for_each(|(o, &vv)| *o += w / total * vv);
                    }
                }
            }
            x += &(attn.dot(&block.w_o) + &block.b_o);

            let h2 = block.ln2.forward(&x);
            let mut act = (h2.dot(&block.w_in) + &block.b_in).mapv(gelu);
            hooks.visit(HookSite::mlp_hidden(l), &mut act)?;
            x += &(act.dot(&block.w_out) + &block.b_out);
            hooks.visit(HookSite::resid_post(l), &mut x)?;
        }
        cache.len += n;
        Ok(self.ln_final.forward(&x).dot(&self.unembed))
    }

    fn run(
        &self,
        tokens: &[u32],
        sites: &[HookSite],
        intervention: Option<&Intervention<'_>>,
    ) -> Result<(Vec<Array2<f32>>, Array2<f32>)> {
        self.validate_tokens(tokens)?;
        for &site in sites {
            self.validate_site(site)?;
        }
        self.validate_intervention(intervention)?;
        let mut hooks = Hooks {
            intervention,
            captures: sites.iter().map(|&s| (s, None)).collect(),
        };
        let mut cache = KvCache::new(self.config.n_layers);
        let logits = self.forward_chunk(&mut cache, tokens, &mut hooks)?;
        let hidden = hooks
            .captures
            .into_iter()
            .map(|(_, h)| h.expect("every validated site is visited"))
            .collect();
        Ok((hidden, logits))
    }

    /// Hidden states at `site` (after any edit) and logits for every position.
    pub fn forward_capture(
        &self,
        tokens: &[u32],
        site: HookSite,
        intervention: Option<&Intervention<'_>>,
    ) -> Result<Capture> {
        let (mut hidden, logits) = self.run(tokens, &[site], intervention)?;
        Ok(Capture {
            hidden: hidden.pop().expect("one site requested"),
            logits,
        })
    }

    /// One forward pass capturing several sites at once.
    pub fn forward_capture_sites(
        &self,
        tokens: &[u32],
        sites: &[HookSite],
        intervention: Option<&Intervention<'_>>,
    ) -> Result<(Vec<Array2<f32>>, Array2<f32>)> {
        self.run(tokens, sites, intervention)
    }

    pub fn logits(&self, tokens: &[u32], intervention: Option<&Intervention<'_>>) -> Result<Array2<f32>> {
        Ok(self.run(tokens, &[], intervention)?.1)
    }

    /// Softmax of the last position's logits.
    pub fn next_token_distribution(
        &self,
        tokens: &[u32],
        intervention: Option<&Intervention<'_>>,
    ) -> Result<Vec<f64>> {
        let logits = self.logits(tokens, intervention)?;
        let last = logits.index_axis(Axis(0), logits.nrows() - 1);
        Ok(softmax(last.as_slice().expect("contiguous row")))
    }

    /// Autoregressive generation; the intervention stays active on the prompt
    /// and on every decoded position.
    pub fn generate(
        &self,
        prompt: &[u32],
        sampling: &SamplingConfig,
        intervention: Option<&Intervention<'_>>,
    ) -> Result<Vec<u32>> {
        self.validate_tokens(prompt)?;
        self.validate_intervention(intervention)?;
        let mut out = Vec::new();
        if sampling.max_new_tokens == 0 {
            return Ok(out);
        }
        let mut hooks = Hooks {
            intervention,
            captures: Vec::new(),
        };
        let mut cache = KvCache::new(self.config.n_layers);
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut logits = self.forward_chunk(&mut cache, prompt, &mut hooks)?;
        loop {
            let last = logits.row(logits.nrows() - 1);
            let next = sampling.pick(last.as_slice().expect("contiguous row"), &mut rng);
            if sampling.stop_token == Some(next) {
                break;
            }
            out.push(next);
            if out.len() >= sampling.max_new_tokens || cache.len >= self.config.context_length {
                break;
            }
            logits = self.forward_chunk(&mut cache, &[next], &mut hooks)?;
        }
        Ok(out)
    }
}
