//! Seeded toy fixture: a 2-layer transformer, a 64-symbol character
//! vocabulary, a synthetic corpus and hand-built SAEs.
//!
//! Everything here is a pure function of [`TOY_SEED`], so the files written by
//! [`write_toy_fixture`] are byte-identical across machines with IEEE floats.
//! The residual stream is dominated by the token embedding (block outputs are
//! scaled down), which makes single-token detector features constructible.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::featurizer::{ActivationKind, FeatureRef, FeaturizerSet, ManifestEntry, Sae, SaeActivation, SaeManifest};
use crate::model::{HookSite, Model, ModelConfig, PositionalScheme};
use crate::tokenizer::{Tokenizer, TokenizerFile};
use crate::weights::TensorStore;

pub const TOY_SEED: u64 = 20_250_117;
pub const TOY_MODEL_ID: &str = "toy";
pub const TOY_SAE_ID: &str = "toy_sae";
pub const TOY_MLP_SAE_ID: &str = "toy_mlp_sae";
pub const PROBE_PROMPT: &str = "the cat sat on the mat.";

/// Tokens covered by detector features of the toy SAE, in feature order.
/// `z` and `q` never occur in the toy corpus, so those two are dead there.
pub const TOY_DETECTOR_TOKENS: [&str; 8] = ["x", "k", "v", "j", "w", "y", "z", "q"];
pub const TOY_SAE_WIDTH: usize = 24;
/// Feature with an all-zero encoder column.
pub const TOY_ZERO_ENCODER_FEATURE: usize = 22;
/// Feature with an all-zero decoder row.
pub const TOY_ZERO_DECODER_FEATURE: usize = 23;

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        d_mlp: 32,
        n_heads: 2,
        vocab_size: 64,
        context_length: 128,
        ln_eps: 1e-5,
        positional: PositionalScheme::Learned,
        layernorm_enabled: true,
    }
}

/// `<bos>`, `<eos>`, `<unk>`, space, a–z, 0–9 and 24 punctuation marks.
pub fn toy_tokenizer() -> Tokenizer {
    let mut pieces: Vec<String> = vec!["<bos>".into(), "<eos>".into(), "<unk>".into(), " ".into()];
    pieces.extend(('a'..='z').map(String::from));
    pieces.extend(('0'..='9').map(String::from));
    pieces.extend(
        [".", ",", "!", "?", "'", "\"", "-", ":", ";", "(", ")", "\n", "/", "&", "%", "$", "#", "@", "*", "+", "=", "_", "[", "]"]
            .into_iter()
            .map(String::from),
    );
    debug_assert_eq!(pieces.len(), 64);
    let vocab = pieces.into_iter().enumerate().map(|(i, p)| (p, i as u32)).collect();
    Tokenizer::from_file_spec(TokenizerFile {
        vocab,
        bos_id: 0,
        eos_id: 1,
        unk_id: Some(2),
        lowercase: true,
    })
    .expect("static vocabulary is well formed")
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f32) -> Array2<f32> {
    // uniform on [-a, a] has standard deviation a/sqrt(3)
    let a = std * 3f32.sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-a..a))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, std: f32) -> Array1<f32> {
    uniform(rng, (1, len), std).index_axis_move(Axis(0), 0)
}

pub fn toy_model_store(seed: u64) -> TensorStore {
    let cfg = toy_config();
    let (d, m, v, ctx) = (cfg.d_model, cfg.d_mlp, cfg.vocab_size, cfg.context_length);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = TensorStore::new();
    let inv_d = 1.0 / (d as f32).sqrt();
    let inv_m = 1.0 / (m as f32).sqrt();
    store.insert_matrix("embed", &uniform(&mut rng, (v, d), 1.0));
    store.insert_matrix("pos_embed", &uniform(&mut rng, (ctx, d), 0.05));
    for l in 0..cfg.n_layers {
        let p = format!("blocks.{l}");
        for ln in ["ln1", "ln2"] {
            store.insert_vector(format!("{p}.{ln}.weight"), &(uniform_vec(&mut rng, d, 0.1) + 1.0));
            store.insert_vector(format!("{p}.{ln}.bias"), &uniform_vec(&mut rng, d, 0.05));
        }
        for w in ["w_q", "w_k", "w_v"] {
            store.insert_matrix(format!("{p}.attn.{w}"), &uniform(&mut rng, (d, d), inv_d));
        }
        store.insert_matrix(format!("{p}.attn.w_o"), &uniform(&mut rng, (d, d), 0.25 * inv_d));
        for b in ["b_q", "b_k", "b_v", "b_o"] {
            store.insert_vector(format!("{p}.attn.{b}"), &uniform_vec(&mut rng, d, 0.02));
        }
        store.insert_matrix(format!("{p}.mlp.w_in"), &uniform(&mut rng, (d, m), inv_d));
        store.insert_vector(format!("{p}.mlp.b_in"), &uniform_vec(&mut rng, m, 0.05));
        store.insert_matrix(format!("{p}.mlp.w_out"), &uniform(&mut rng, (m, d), 0.25 * inv_m));
        store.insert_vector(format!("{p}.mlp.b_out"), &uniform_vec(&mut rng, d, 0.02));
    }
    store.insert_vector("ln_final.weight", &(uniform_vec(&mut rng, d, 0.1) + 1.0));
    store.insert_vector("ln_final.bias", &uniform_vec(&mut rng, d, 0.05));
    store.insert_matrix("unembed", &uniform(&mut rng, (d, v), 0.5));
    store
}

pub fn toy_model() -> Model {
    Model::from_store(&toy_model_store(TOY_SEED), toy_config()).expect("toy weights match toy config")
}

/// SHA-256 over the little-endian bytes of the probe prompt's logits.
pub fn probe_checksum(model: &Model, tokenizer: &Tokenizer) -> Result<String> {
    let tokens = tokenizer.encode_with_bos(PROBE_PROMPT)?;
    let logits = model.logits(&tokens, None)?;
    let mut hasher = Sha256::new();
    for x in logits.iter() {
        hasher.update(x.to_le_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

const CORPUS_WORDS: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "a", "dog", "ran", "to", "park", "and", "then", "it", "rained",
    "sun", "is", "bright", "we", "ate", "bread", "with", "honey", "for", "lunch", "my", "friend", "read",
    "book", "about", "ships", "sea", "birds", "sing", "in", "morning", "children", "play", "games",
    "music", "loud", "old", "man", "walked", "home", "slowly", "rain", "fell", "all", "night", "tea",
    "hot", "cold", "river", "runs", "past", "mill", "people", "talk", "market", "fresh", "fish", "apples",
    "red", "green", "blue", "door", "opened", "letter", "arrived", "garden", "flowers", "bloom", "spring",
    "boats", "harbor", "stars", "shine", "moon", "rose", "hill", "train", "left", "station", "early",
    "student", "learned", "math", "history", "art", "painted", "portrait", "chef", "cooked", "soup",
    "farmer", "planted", "corn", "baker", "sold", "cakes",
];

/// 200 synthetic documents over a word list that avoids `z` and `q`.
pub fn toy_corpus(seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    (0..200)
        .map(|i| {
            let n_words = rng.random_range(6..18);
            let mut words: Vec<&str> = (0..n_words)
                .map(|_| *CORPUS_WORDS.choose(&mut rng).expect("non-empty list"))
                .collect();
            if i % 7 == 0 {
                words.push("123");
            }
            let text = format!("{}.", words.join(" "));
            Document {
                doc_id: format!("doc{i:04}"),
                text,
            }
        })
        .collect()
}

/// Unit direction that raises `token`'s logit relative to the others.
pub fn boost_direction(model: &Model, token: u32) -> Array1<f32> {
    let u = model.unembed();
    let mean = u.mean_axis(Axis(1)).expect("non-empty vocab");
    let dir = &u.column(token as usize) - &mean;
    let norm = dir.dot(&dir).sqrt();
    dir / norm
}

/// Encoder column, bias and JumpReLU threshold for a feature that fires
/// exactly on positions holding `token`.
#[derive(Debug, Clone)]
pub struct Detector {
    pub direction: Array1<f32>,
    pub bias: f32,
    pub threshold: f32,
    pub margin: f32,
}

fn detector_samples(
    model: &Model,
    site: HookSite,
    token: u32,
    pool: &[u32],
    n_seqs: usize,
    seed: u64,
) -> Result<(Vec<Array1<f32>>, Vec<Array1<f32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for _ in 0..n_seqs {
        let len = rng.random_range(2..24);
        let mut seq = vec![0u32];
        for _ in 1..len {
            let t = if rng.random_bool(0.15) { token } else { *pool.choose(&mut rng).expect("pool") };
            seq.push(t);
        }
        let hidden = model.forward_capture(&seq, site, None)?.hidden;
        for (i, row) in hidden.axis_iter(Axis(0)).enumerate() {
            if seq[i] == token {
                pos.push(row.to_owned());
            } else {
                neg.push(row.to_owned());
            }
        }
    }
    Ok((pos, neg))
}

/// Fit a linear detector for `token` at `site` from sampled random contexts,
/// then confirm it on an independent sample.
pub fn fit_token_detector(model: &Model, site: HookSite, token: u32, seed: u64) -> Result<Detector> {
    let pool: Vec<u32> = (3..model.config().vocab_size as u32).filter(|&t| t != token).collect();
    let (pos, neg) = detector_samples(model, site, token, &pool, 300, seed)?;
    if pos.is_empty() {
        return Err(Error::Precondition("no positive samples for detector".into()));
    }
    let mean = |xs: &[Array1<f32>]| xs.iter().fold(Array1::zeros(xs[0].len()), |a, x| a + x) / xs.len() as f32;
    let mut w: Array1<f32> = mean(&pos) - mean(&neg);
    let normalize = |w: &mut Array1<f32>| {
        let n = w.dot(w).sqrt();
        *w /= n;
    };
    normalize(&mut w);
    let gap = |w: &Array1<f32>| {
        let lo = pos.iter().map(|x| x.dot(w)).fold(f32::INFINITY, f32::min);
        let hi = neg.iter().map(|x| x.dot(w)).fold(f32::NEG_INFINITY, f32::max);
        (lo, hi)
    };
    for _ in 0..500 {
        let (lo, hi) = gap(&w);
        if lo - hi > 0.5 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let mut step = Array1::<f32>::zeros(w.len());
        for x in &pos {
            if x.dot(&w) < mid + 0.25 {
                step += x;
            }
        }
        for x in &neg {
            if x.dot(&w) > mid - 0.25 {
                step -= x;
            }
        }
        w.scaled_add(0.01, &step);
        normalize(&mut w);
    }
    let (lo, hi) = gap(&w);
    if lo <= hi {
        return Err(Error::Precondition(format!(
            "token {token} is not linearly separable at {site} (gap {})",
            lo - hi
        )));
    }
    let mid = 0.5 * (lo + hi);
    let (check_pos, check_neg) = detector_samples(model, site, token, &pool, 300, seed ^ 0x5EED)?;
    let lo2 = check_pos.iter().map(|x| x.dot(&w)).fold(f32::INFINITY, f32::min);
    let hi2 = check_neg.iter().map(|x| x.dot(&w)).fold(f32::NEG_INFINITY, f32::max);
    if lo2 <= mid || hi2 >= mid {
        return Err(Error::Precondition(format!(
            "detector for token {token} at {site} does not generalize"
        )));
    }
    Ok(Detector {
        direction: w,
        bias: 1.0 - mid,
        threshold: 1.0,
        margin: lo - hi,
    })
}

/// The shipped residual SAE: detectors for [`TOY_DETECTOR_TOKENS`] whose
/// decoder rows boost the same token, random features, a zero-encoder feature
/// and a zero-decoder feature.
pub fn toy_sae(model: &Model, tokenizer: &Tokenizer, seed: u64) -> Result<Sae> {
    let site = HookSite::resid_post(0);
    let d = model.config().d_model;
    let k = TOY_SAE_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5AE);
    let mut w_enc = Array2::<f32>::zeros((d, k));
    let mut b_enc = Array1::<f32>::zeros(k);
    let mut w_dec = Array2::<f32>::zeros((k, d));
    let mut threshold = Array1::<f32>::zeros(k);
    for (f, piece) in TOY_DETECTOR_TOKENS.iter().enumerate() {
        let token = tokenizer
            .token_id(piece)
            .ok_or_else(|| Error::Tokenize(format!("toy vocabulary lacks {piece:?}")))?;
        let det = fit_token_detector(model, site, token, seed.wrapping_add(f as u64))?;
        w_enc.column_mut(f).assign(&det.direction);
        b_enc[f] = det.bias;
        threshold[f] = det.threshold;
        w_dec.row_mut(f).assign(&boost_direction(model, token));
    }
    for f in TOY_DETECTOR_TOKENS.len()..TOY_ZERO_ENCODER_FEATURE {
        let enc = uniform_vec(&mut rng, d, 1.0);
        let enc = &enc / enc.dot(&enc).sqrt();
        w_enc.column_mut(f).assign(&enc);
        b_enc[f] = -0.5;
        let dec = uniform_vec(&mut rng, d, 1.0);
        w_dec.row_mut(f).assign(&(&dec / dec.dot(&dec).sqrt()));
    }
    let dec = uniform_vec(&mut rng, d, 1.0);
    w_dec
        .row_mut(TOY_ZERO_ENCODER_FEATURE)
        .assign(&(&dec / dec.dot(&dec).sqrt()));
    let enc = uniform_vec(&mut rng, d, 1.0);
    w_enc
        .column_mut(TOY_ZERO_DECODER_FEATURE)
        .assign(&(&enc / enc.dot(&enc).sqrt()));
    let b_dec = uniform_vec(&mut rng, d, 0.01);
    Sae::new(w_enc, b_enc, w_dec, b_dec, SaeActivation::JumpRelu { threshold })
}

/// Random TopK SAE on the layer-1 MLP hidden layer.
pub fn toy_mlp_sae(model: &Model, seed: u64) -> Result<Sae> {
    let m = model.config().d_mlp;
    let k = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3170);
    let w_enc = uniform(&mut rng, (m, k), 1.0 / (m as f32).sqrt());
    let b_enc = uniform_vec(&mut rng, k, 0.05);
    let mut w_dec = uniform(&mut rng, (k, m), 1.0);
    for mut row in w_dec.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    let b_dec = Array1::zeros(m);
    Sae::new(w_enc, b_enc, w_dec, b_dec, SaeActivation::TopK { k: 4 })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeRecord {
    pub prompt: String,
    pub logits_sha256: String,
}

/// File names inside a fixture directory.
pub mod files {
    pub const WEIGHTS: &str = "model.safetensors";
    pub const CONFIG: &str = "model_config.json";
    pub const TOKENIZER: &str = "tokenizer.json";
    pub const MANIFEST: &str = "featurizers.json";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const PIPELINE: &str = "pipeline.toml";
    pub const PROBE: &str = "probe.json";
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Write the full toy fixture into `dir` and return the probe checksum.
pub fn write_toy_fixture(dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let store = toy_model_store(TOY_SEED);
    store.save(dir.join(files::WEIGHTS))?;
    let config = toy_config();
    write(&dir.join(files::CONFIG), pretty_json(&config)?)?;

    let tokenizer = toy_tokenizer();
    // sorted by id so the file is stable
    let spec = tokenizer.to_file_spec();
    let mut vocab: Vec<(&String, &u32)> = spec.vocab.iter().collect();
    vocab.sort_by_key(|(_, &id)| id);
    let vocab_json: serde_json::Map<String, serde_json::Value> = vocab
        .into_iter()
        .map(|(p, &id)| (p.clone(), serde_json::Value::from(id)))
        .collect();
    let tok_json = serde_json::json!({
        "vocab": vocab_json,
        "bos_id": spec.bos_id,
        "eos_id": spec.eos_id,
        "unk_id": spec.unk_id,
        "lowercase": spec.lowercase,
    });
    write(&dir.join(files::TOKENIZER), pretty_json(&tok_json)?)?;

    let model = Model::from_store(&store, config)?;
    let sae = toy_sae(&model, &tokenizer, TOY_SEED)?;
    sae.to_store().save(dir.join(format!("{TOY_SAE_ID}.safetensors")))?;
    let mlp_sae = toy_mlp_sae(&model, TOY_SEED)?;
    mlp_sae.to_store().save(dir.join(format!("{TOY_MLP_SAE_ID}.safetensors")))?;
    let mut manifest = SaeManifest::default();
    manifest.saes.insert(
        TOY_SAE_ID.into(),
        ManifestEntry {
            file: format!("{TOY_SAE_ID}.safetensors").into(),
            site: HookSite::resid_post(0),
            activation: ActivationKind::JumpRelu,
            k: TOY_SAE_WIDTH,
        },
    );
    manifest.saes.insert(
        TOY_MLP_SAE_ID.into(),
        ManifestEntry {
            file: format!("{TOY_MLP_SAE_ID}.safetensors").into(),
            site: HookSite::mlp_hidden(1),
            activation: mlp_sae.activation_kind(),
            k: mlp_sae.w_enc().ncols(),
        },
    );
    write(&dir.join(files::MANIFEST), pretty_json(&manifest)?)?;

    let mut corpus = String::new();
    for doc in toy_corpus(TOY_SEED) {
        corpus.push_str(&serde_json::to_string(&doc)?);
        corpus.push('\n');
    }
    write(&dir.join(files::CORPUS), corpus)?;
    write(&dir.join(files::PIPELINE), crate::pipeline::toy_pipeline_toml())?;

    let checksum = probe_checksum(&model, &tokenizer)?;
    let probe = ProbeRecord {
        prompt: PROBE_PROMPT.into(),
        logits_sha256: checksum.clone(),
    };
    write(&dir.join(files::PROBE), pretty_json(&probe)?)?;
    Ok(checksum)
}

/// The toy model, tokenizer, both SAEs and the corpus, built in memory.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub featurizers: FeaturizerSet,
    pub corpus: Vec<Document>,
}

impl ToyFixture {
    pub fn build() -> Result<Self> {
        let model = toy_model();
        let tokenizer = toy_tokenizer();
        let mut featurizers = FeaturizerSet::new(TOY_MODEL_ID, toy_config());
        featurizers.insert_sae(TOY_SAE_ID, HookSite::resid_post(0), toy_sae(&model, &tokenizer, TOY_SEED)?)?;
        featurizers.insert_sae(TOY_MLP_SAE_ID, HookSite::mlp_hidden(1), toy_mlp_sae(&model, TOY_SEED)?)?;
        Ok(Self {
            model,
            tokenizer,
            featurizers,
            corpus: toy_corpus(TOY_SEED),
        })
    }

    /// Residual SAE feature `index`.
    pub fn sae_feature(&self, index: usize) -> FeatureRef {
        self.featurizers
            .sae_feature(TOY_SAE_ID, index)
            .expect("index within the toy SAE")
    }

    /// Residual SAE detector feature for one of [`TOY_DETECTOR_TOKENS`].
    pub fn detector(&self, piece: &str) -> FeatureRef {
        let i = TOY_DETECTOR_TOKENS
            .iter()
            .position(|p| *p == piece)
            .expect("known detector token");
        self.sae_feature(i)
    }
}
