//! Invertible featurizers over hidden vectors.
//!
//! A featurizer maps a hidden vector `v ∈ ℝ^d` to feature activations in
//! `ℝ^k` and back. Two kinds are supported: the neuron basis (identity map,
//! `k = d`) and sparse autoencoders with ReLU, JumpReLU or TopK activations.
//! A feature's direction is the decoder row for an SAE latent and the standard
//! basis vector for a neuron; the decoder bias is shared by all latents and is
//! not part of any direction.

mod manifest;

pub use manifest::{FeatureRef, FeaturizerKind, FeaturizerSet, ManifestEntry, SaeManifest};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::TensorStore;

#[derive(Debug, Clone, PartialEq)]
pub enum SaeActivation {
    Relu,
    /// Zero below a per-feature threshold, identity at or above it.
    JumpRelu { threshold: Array1<f32> },
    /// Keep the `k` largest post-ReLU pre-activations.
    TopK { k: usize },
}

/// Serialized form of the activation choice; JumpReLU thresholds live in the
/// weight file under `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    JumpRelu,
    TopK { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sae {
    w_enc: Array2<f32>,
    b_enc: Array1<f32>,
    w_dec: Array2<f32>,
    b_dec: Array1<f32>,
    activation: SaeActivation,
}

impl Sae {
    /// `w_enc` is `d × k`, `w_dec` is `k × d`.
    pub fn new(
        w_enc: Array2<f32>,
        b_enc: Array1<f32>,
        w_dec: Array2<f32>,
        b_dec: Array1<f32>,
        activation: SaeActivation,
    ) -> Result<Self> {
        let (d, k) = w_enc.dim();
        let shape_err = |name: &str, expected: Vec<usize>, actual: Vec<usize>| Error::ShapeMismatch {
            name: name.to_string(),
            expected,
            actual,
        };
        if b_enc.len() != k {
            return Err(shape_err("b_enc", vec![k], vec![b_enc.len()]));
        }
        if w_dec.dim() != (k, d) {
            return Err(shape_err("W_dec", vec![k, d], w_dec.shape().to_vec()));
        }
        if b_dec.len() != d {
            return Err(shape_err("b_dec", vec![d], vec![b_dec.len()]));
        }
        match &activation {
            SaeActivation::Relu => {}
            SaeActivation::JumpRelu { threshold } => {
                if threshold.len() != k {
                    return Err(shape_err("threshold", vec![k], vec![threshold.len()]));
                }
                if threshold.iter().any(|&t| !(t >= 0.0)) {
                    return Err(Error::InvalidConfig("JumpReLU thresholds must be non-negative".into()));
                }
            }
            SaeActivation::TopK { k: top } => {
                if *top > k {
                    return Err(Error::InvalidConfig(format!("TopK K={top} exceeds width {k}")));
                }
            }
        }
        Ok(Self { w_enc, b_enc, w_dec, b_dec, activation })
    }

    pub fn from_store(store: &TensorStore, activation: ActivationKind) -> Result<Self> {
        let shape = store.get("W_enc")?.shape.clone();
        let [d, k] = shape[..] else {
            return Err(Error::ShapeMismatch {
                name: "W_enc".into(),
                expected: vec![0, 0],
                actual: shape,
            });
        };
        let activation = match activation {
            ActivationKind::Relu => SaeActivation::Relu,
            ActivationKind::JumpRelu => SaeActivation::JumpRelu {
                threshold: store.vector("threshold", k)?,
            },
            ActivationKind::TopK { k } => SaeActivation::TopK { k },
        };
        Self::new(
            store.matrix("W_enc", d, k)?,
            store.vector("b_enc", k)?,
            store.matrix("W_dec", k, d)?,
            store.vector("b_dec", d)?,
            activation,
        )
    }

    pub fn load(path: impl AsRef<Path>, activation: ActivationKind) -> Result<Self> {
        Self::from_store(&TensorStore::load(path)?, activation)
    }

    pub fn to_store(&self) -> TensorStore {
        let mut store = TensorStore::new();
        store.insert_matrix("W_enc", &self.w_enc);
        store.insert_vector("b_enc", &self.b_enc);
        store.insert_matrix("W_dec", &self.w_dec);
        store.insert_vector("b_dec", &self.b_dec);
        if let SaeActivation::JumpRelu { threshold } = &self.activation {
            store.insert_vector("threshold", threshold);
        }
        store
    }

    pub fn activation_kind(&self) -> ActivationKind {
        match self.activation {
            SaeActivation::Relu => ActivationKind::Relu,
            SaeActivation::JumpRelu { .. } => ActivationKind::JumpRelu,
            SaeActivation::TopK { k } => ActivationKind::TopK { k },
        }
    }

    pub fn activation(&self) -> &SaeActivation {
        &self.activation
    }

    pub fn w_enc(&self) -> &Array2<f32> {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &Array1<f32> {
        &self.b_enc
    }

    pub fn w_dec(&self) -> &Array2<f32> {
        &self.w_dec
    }

    pub fn b_dec(&self) -> &Array1<f32> {
        &self.b_dec
    }

    fn pre_activation(&self, v: ArrayView1<f32>) -> Array1<f32> {
        v.dot(&self.w_enc) + &self.b_enc
    }

    fn apply(&self, mut pre: Array1<f32>) -> Array1<f32> {
        match &self.activation {
            SaeActivation::Relu => pre.mapv_inplace(|x| x.max(0.0)),
            SaeActivation::JumpRelu { threshold } => {
                pre.zip_mut_with(threshold, |x, &t| {
                    if !(*x >= t && *x > 0.0) {
                        *x = 0.0;
                    }
                });
            }
            SaeActivation::TopK { k } => {
                pre.mapv_inplace(|x| x.max(0.0));
                let mut order: Vec<usize> = (0..pre.len()).collect();
                // descending value, ascending index on ties
                order.sort_by(|&a, &b| pre[b].total_cmp(&pre[a]).then(a.cmp(&b)));
                for &i in &order[*k..] {
                    pre[i] = 0.0;
                }
            }
        }
        pre
    }

    fn activation_at(&self, v: ArrayView1<f32>, index: usize) -> f32 {
        match &self.activation {
            SaeActivation::TopK { .. } => self.apply(self.pre_activation(v))[index],
            SaeActivation::Relu => (v.dot(&self.w_enc.column(index)) + self.b_enc[index]).max(0.0),
            SaeActivation::JumpRelu { threshold } => {
                let pre = v.dot(&self.w_enc.column(index)) + self.b_enc[index];
                if pre >= threshold[index] && pre > 0.0 {
                    pre
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeaturizerParams {
    /// Identity featurizer over the site's coordinates.
    Neuron { dim: usize },
    Sae(Sae),
}

impl FeaturizerParams {
    pub fn input_dim(&self) -> usize {
        match self {
            Self::Neuron { dim } => *dim,
            Self::Sae(sae) => sae.w_enc.nrows(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::Neuron { dim } => *dim,
            Self::Sae(sae) => sae.w_enc.ncols(),
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.width() {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.width(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, v: ArrayView1<f32>) -> Result<Array1<f32>> {
        self.check_dim(v.len())?;
        Ok(match self {
            Self::Neuron { .. } => v.to_owned(),
            Self::Sae(sae) => sae.apply(sae.pre_activation(v)),
        })
    }

    /// Activation of a single feature; avoids the full encode except for TopK.
    pub fn activation(&self, v: ArrayView1<f32>, index: usize) -> Result<f32> {
        self.check_dim(v.len())?;
        self.check_index(index)?;
        Ok(match self {
            Self::Neuron { .. } => v[index],
            Self::Sae(sae) => sae.activation_at(v, index),
        })
    }

    /// Per-row activation of one feature over a `positions × d` matrix.
    pub fn activations(&self, rows: ArrayView2<f32>, index: usize) -> Result<Vec<f32>> {
        self.check_dim(rows.ncols())?;
        self.check_index(index)?;
        Ok(rows
            .axis_iter(Axis(0))
            .map(|row| match self {
                Self::Neuron { .. } => row[index],
                Self::Sae(sae) => sae.activation_at(row, index),
            })
            .collect())
    }

    /// Per-row activations of several features, `result[j][t]` for
    /// `indices[j]` at row `t`. Values equal [`Self::activations`] exactly.
    pub fn activations_many(&self, rows: ArrayView2<f32>, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
        self.check_dim(rows.ncols())?;
        for &i in indices {
            self.check_index(i)?;
        }
        let mut out = vec![Vec::with_capacity(rows.nrows()); indices.len()];
        for row in rows.axis_iter(Axis(0)) {
            match self {
                Self::Sae(sae) if matches!(sae.activation, SaeActivation::TopK { .. }) => {
                    let full = sae.apply(sae.pre_activation(row));
                    for (j, &i) in indices.iter().enumerate() {
                        out[j].push(full[i]);
                    }
                }
                Self::Sae(sae) => {
                    for (j, &i) in indices.iter().enumerate() {
                        out[j].push(sae.activation_at(row, i));
                    }
                }
                Self::Neuron { .. } => {
                    for (j, &i) in indices.iter().enumerate() {
                        out[j].push(row[i]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Direction `v_f` of a feature in the hidden space.
    pub fn feature_vector(&self, index: usize) -> Result<Array1<f32>> {
        self.check_index(index)?;
        Ok(match self {
            Self::Neuron { dim } => {
                let mut e = Array1::zeros(*dim);
                e[index] = 1.0;
                e
            }
            Self::Sae(sae) => sae.w_dec.row(index).to_owned(),
        })
    }

    /// `v + (m − a)·v_f` where `a` is the feature's current activation.
    pub fn clamp_edit(&self, v: ArrayView1<f32>, index: usize, value: f32) -> Result<Array1<f32>> {
        let mut out = v.to_owned();
        self.clamp_edit_in_place(out.view_mut(), index, value)?;
        Ok(out)
    }

    pub fn clamp_edit_in_place(&self, mut v: ArrayViewMut1<f32>, index: usize, value: f32) -> Result<()> {
        self.check_dim(v.len())?;
        self.check_index(index)?;
        match self {
            Self::Neuron { .. } => v[index] = value,
            Self::Sae(sae) => {
                let delta = value - sae.activation_at(v.view(), index);
                if delta != 0.0 {
                    v.scaled_add(delta, &sae.w_dec.row(index));
                }
            }
        }
        Ok(())
    }
}
