//! Toy decoder-only transformer: configuration, weights, tokenizer and the
//! forward pass.

mod format;
mod forward;
mod readout;
mod tokenizer;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{InterventionSpec, SiteId};
use crate::rng::GaussianStream;
use crate::tensor::Matrix;

pub use format::{load_model, read_model, save_model, write_model, MAGIC};
pub use forward::{ActivationTape, ForwardOutput, ROPE_THETA};
pub use readout::{fit_readout, ReadoutFit};
pub use tokenizer::{detokenize, tokenize, TokenSequence};

fn default_norm_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return Err(Error::Config(format!(
                "norm_eps must be positive, got {}",
                self.norm_eps
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Names and shapes of every tensor, in file order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, m, v) = (self.d_model, self.d_mlp, self.vocab_size);
        let mut out = vec![("embed_tokens".to_string(), vec![v, d])];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.push((p("attn_norm"), vec![d]));
            out.push((p("q_proj"), vec![d, d]));
            out.push((p("k_proj"), vec![d, d]));
            out.push((p("v_proj"), vec![d, d]));
            out.push((p("o_proj"), vec![d, d]));
            out.push((p("mlp_norm"), vec![d]));
            out.push((p("gate_proj"), vec![m, d]));
            out.push((p("up_proj"), vec![m, d]));
            out.push((p("down_proj"), vec![d, m]));
        }
        out.push(("final_norm".to_string(), vec![d]));
        if !self.tie_embeddings {
            out.push(("lm_head".to_string(), vec![v, d]));
        }
        out
    }
}

/// A named weight tensor stored row-major; linear weights are `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

const TENSORS_PER_LAYER: usize = 9;

/// Borrowed view of one transformer block's weights.
pub struct LayerWeights<'a> {
    pub attn_norm: &'a [f32],
    pub q_proj: &'a [f32],
    pub k_proj: &'a [f32],
    pub v_proj: &'a [f32],
    pub o_proj: &'a [f32],
    pub mlp_norm: &'a [f32],
    pub gate_proj: &'a [f32],
    pub up_proj: &'a [f32],
    pub down_proj: &'a [f32],
}

/// Configuration plus validated weights. Immutable once built.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    config: ModelConfig,
    tensors: Vec<Tensor>,
    content_hash: u64,
}

impl ModelBundle {
    /// Validates shapes and finiteness against `config` and computes the
    /// content hash of the serialized form.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.tensor_layout();
        if layout.len() != tensors.len() {
            return Err(Error::format(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if &t.name != name {
                return Err(Error::format_in(
                    &t.name,
                    format!("expected tensor `{name}` here"),
                ));
            }
            let numel: usize = shape.iter().product();
            if &t.shape != shape || t.data.len() != numel {
                return Err(Error::format_in(
                    name,
                    format!("shape {:?} does not match expected {:?}", t.shape, shape),
                ));
            }
            if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::format_in(
                    name,
                    format!("non-finite value at element {pos}"),
                ));
            }
        }
        let mut bundle = Self {
            config,
            tensors,
            content_hash: 0,
        };
        bundle.content_hash = format::digest_of(&bundle)?;
        Ok(bundle)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Returns a copy with `edit` applied to the named tensor. The edited
    /// bundle is re-validated and re-hashed.
    pub fn with_tensor_edit(
        &self,
        name: &str,
        edit: impl FnOnce(&mut Tensor),
    ) -> Result<ModelBundle> {
        let mut tensors = self.tensors.clone();
        let t = tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Input(format!("no tensor named `{name}`")))?;
        edit(t);
        ModelBundle::from_tensors(self.config.clone(), tensors)
    }

    pub fn embedding_table(&self) -> &[f32] {
        &self.tensors[0].data
    }

    pub fn layer(&self, l: usize) -> LayerWeights<'_> {
        let base = 1 + l * TENSORS_PER_LAYER;
        let t = |i: usize| self.tensors[base + i].data.as_slice();
        LayerWeights {
            attn_norm: t(0),
            q_proj: t(1),
            k_proj: t(2),
            v_proj: t(3),
            o_proj: t(4),
            mlp_norm: t(5),
            gate_proj: t(6),
            up_proj: t(7),
            down_proj: t(8),
        }
    }

    pub fn final_norm(&self) -> &[f32] {
        &self.tensors[1 + self.config.n_layers * TENSORS_PER_LAYER].data
    }

    /// Output projection `(vocab, d_model)`; the embedding table when tied.
    pub fn output_head(&self) -> &[f32] {
        if self.config.tie_embeddings {
            self.embedding_table()
        } else {
            &self.tensors[2 + self.config.n_layers * TENSORS_PER_LAYER].data
        }
    }
}

/// Draws a model with Gaussian weights. Linear maps use standard deviation
/// `1/sqrt(fan_in)`; the embedding table is a lookup from a one-hot input, so
/// its fan-in is 1 and entries are standard normal. Norm gains start at 1.
/// Each tensor is filled from its own stream `(seed, tensor position)`.
pub fn generate_model(config: &ModelConfig, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    let tensors = config
        .tensor_layout()
        .into_iter()
        .enumerate()
        .map(|(pos, (name, shape))| {
            let numel: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![1.0; numel]
            } else {
                let fan_in = if name == "embed_tokens" { 1 } else { shape[1] };
                let mut data = vec![0.0f32; numel];
                GaussianStream::new(seed, pos as u64)
                    .fill_normal_f32(&mut data, 1.0 / (fan_in as f64).sqrt());
                data
            };
            Tensor { name, shape, data }
        })
        .collect();
    ModelBundle::from_tensors(config.clone(), tensors)
}

/// The surface the analysis pipeline needs from a model.
pub trait LanguageModel: Sync {
    fn config(&self) -> &ModelConfig;

    fn content_hash(&self) -> u64;

    /// Embedding-table lookup, `(T, d_model)`.
    fn embed(&self, tokens: &TokenSequence) -> Result<Matrix>;

    /// Full-sequence forward from embeddings. `interventions` are applied in
    /// order at the moment each addressed activation is produced; `capture`
    /// records the listed sites after intervention.
    fn forward(
        &self,
        embeddings: &Matrix,
        interventions: &[InterventionSpec],
        capture: &[SiteId],
    ) -> Result<ForwardOutput>;
}

impl LanguageModel for ModelBundle {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn content_hash(&self) -> u64 {
        self.content_hash
    }

    fn embed(&self, tokens: &TokenSequence) -> Result<Matrix> {
        forward::embed(self, tokens)
    }

    fn forward(
        &self,
        embeddings: &Matrix,
        interventions: &[InterventionSpec],
        capture: &[SiteId],
    ) -> Result<ForwardOutput> {
        forward::forward(self, embeddings, interventions, capture)
    }
}

/// Wraps a model and counts forward calls.
pub struct CountingModel<'a, M: LanguageModel + ?Sized> {
    inner: &'a M,
    forwards: AtomicUsize,
}

impl<'a, M: LanguageModel + ?Sized> CountingModel<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            forwards: AtomicUsize::new(0),
        }
    }

    pub fn forwards(&self) -> usize {
        self.forwards.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.forwards.store(0, Ordering::SeqCst);
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for CountingModel<'_, M> {
    fn config(&self) -> &ModelConfig {
        self.inner.config()
    }

    fn content_hash(&self) -> u64 {
        self.inner.content_hash()
    }

    fn embed(&self, tokens: &TokenSequence) -> Result<Matrix> {
        self.inner.embed(tokens)
    }

    fn forward(
        &self,
        embeddings: &Matrix,
        interventions: &[InterventionSpec],
        capture: &[SiteId],
    ) -> Result<ForwardOutput> {
        self.forwards.fetch_add(1, Ordering::SeqCst);
        self.inner.forward(embeddings, interventions, capture)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_mlp: 128,
            vocab_size: 256,
            max_seq_len: 128,
            norm_eps: 1e-5,
            tie_embeddings: false,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_model(&small_config(), 42).unwrap();
        let b = generate_model(&small_config(), 42).unwrap();
        let c = generate_model(&small_config(), 43).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.tensors(), b.tensors());
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ModelConfig {
            n_heads: 3,
            ..small_config()
        };
        assert!(matches!(generate_model(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_dimension_rejected() {
        let cfg = ModelConfig {
            d_mlp: 0,
            ..small_config()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let m = generate_model(&small_config(), 5).unwrap();
        let std = |name: &str| {
            let d = &m.tensor(name).unwrap().data;
            let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
            (d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        };
        assert!((std("embed_tokens") - 1.0).abs() < 0.05);
        assert!((std("layers.0.q_proj") - 0.125).abs() < 0.01);
        assert!((std("layers.1.down_proj") - 1.0 / 128f64.sqrt()).abs() < 0.01);
        assert!(m
            .tensor("final_norm")
            .unwrap()
            .data
            .iter()
            .all(|&g| g == 1.0));
    }

    #[test]
    fn tied_model_has_no_head_tensor() {
        let cfg = ModelConfig {
            tie_embeddings: true,
            ..small_config()
        };
        let m = generate_model(&cfg, 1).unwrap();
        assert!(m.tensor("lm_head").is_none());
        assert_eq!(m.output_head(), m.embedding_table());
    }
}
