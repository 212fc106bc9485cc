//! Parameter tensors keyed by canonical names.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Rng;

use super::{ModelError, TransformerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.next_normal() * std).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_norm: Tensor, // [d]
    pub wq: Tensor,        // [d, d]
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub mlp_norm: Tensor, // [d]
    pub w_gate: Tensor,   // [d, d_ff]
    pub w_up: Tensor,     // [d, d_ff]
    pub w_down: Tensor,   // [d_ff, d]
}

/// All model weights. `lm_head` is `None` when embeddings are tied; the
/// embedding matrix then doubles as the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: Tensor, // [vocab, d]
    pub layers: Vec<LayerParams>,
    pub final_norm: Tensor,      // [d]
    pub lm_head: Option<Tensor>, // [vocab, d]
}

impl ModelParams {
    /// Zero-filled parameters (norm gains included, so the forward output is
    /// exactly zero logits -> uniform softmax).
    pub fn zeros(config: &TransformerConfig) -> Self {
        Self::build(config, |shape, _| Tensor::zeros(shape))
    }

    /// Gaussian init, std 0.02 for weights, ones for norm gains.
    pub fn init(config: &TransformerConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        Self::build(config, |shape, is_norm| {
            if is_norm {
                Tensor::filled(shape, 1.0)
            } else {
                Tensor::randn(shape, 0.02, &mut rng)
            }
        })
    }

    fn build(
        config: &TransformerConfig,
        mut make: impl FnMut(&[usize], bool) -> Tensor,
    ) -> Self {
        let d = config.d_model;
        let ff = config.d_ff;
        let v = config.vocab_size;
        let embed = make(&[v, d], false);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                attn_norm: make(&[d], true),
                wq: make(&[d, d], false),
                wk: make(&[d, d], false),
                wv: make(&[d, d], false),
                wo: make(&[d, d], false),
                mlp_norm: make(&[d], true),
                w_gate: make(&[d, ff], false),
                w_up: make(&[d, ff], false),
                w_down: make(&[ff, d], false),
            })
            .collect();
        let final_norm = make(&[d], true);
        let lm_head = if config.tie_embeddings { None } else { Some(make(&[v, d], false)) };
        ModelParams { embed, layers, final_norm, lm_head }
    }

    /// Tensors in a fixed canonical order. The order defines the layout of
    /// checkpoints, flattened parameter vectors, and optimizer state.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![(String::from("embed.weight"), &self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.attn_norm.weight"), &layer.attn_norm));
            out.push((format!("layers.{l}.attn.wq"), &layer.wq));
            out.push((format!("layers.{l}.attn.wk"), &layer.wk));
            out.push((format!("layers.{l}.attn.wv"), &layer.wv));
            out.push((format!("layers.{l}.attn.wo"), &layer.wo));
            out.push((format!("layers.{l}.mlp_norm.weight"), &layer.mlp_norm));
            out.push((format!("layers.{l}.mlp.w_gate"), &layer.w_gate));
            out.push((format!("layers.{l}.mlp.w_up"), &layer.w_up));
            out.push((format!("layers.{l}.mlp.w_down"), &layer.w_down));
        }
        out.push((String::from("final_norm.weight"), &self.final_norm));
        if let Some(head) = &self.lm_head {
            out.push((String::from("lm_head.weight"), head));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> =
            vec![(String::from("embed.weight"), &mut self.embed)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{l}.attn_norm.weight"), &mut layer.attn_norm));
            out.push((format!("layers.{l}.attn.wq"), &mut layer.wq));
            out.push((format!("layers.{l}.attn.wk"), &mut layer.wk));
            out.push((format!("layers.{l}.attn.wv"), &mut layer.wv));
            out.push((format!("layers.{l}.attn.wo"), &mut layer.wo));
            out.push((format!("layers.{l}.mlp_norm.weight"), &mut layer.mlp_norm));
            out.push((format!("layers.{l}.mlp.w_gate"), &mut layer.w_gate));
            out.push((format!("layers.{l}.mlp.w_up"), &mut layer.w_up));
            out.push((format!("layers.{l}.mlp.w_down"), &mut layer.w_down));
        }
        out.push((String::from("final_norm.weight"), &mut self.final_norm));
        if let Some(head) = &mut self.lm_head {
            out.push((String::from("lm_head.weight"), head));
        }
        out
    }

    /// Total scalar parameter count.
    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation of all tensors in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (_, t) in self.named() {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Inverse of `flatten` against this parameter set's own shapes.
    pub fn unflatten_into(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.len() {
            return Err(ModelError::ShapeMismatch("flattened length mismatch"));
        }
        let mut pos = 0;
        for (_, t) in self.named_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// Consistency with a config: shapes of every tensor.
    pub fn check_shapes(&self, config: &TransformerConfig) -> Result<(), ModelError> {
        let d = config.d_model;
        let expect = ModelParams::zeros(config);
        if self.layers.len() != expect.layers.len() {
            return Err(ModelError::ShapeMismatch("layer count"));
        }
        for ((_, a), (_, b)) in self.named().iter().zip(expect.named()) {
            if a.shape != b.shape {
                return Err(ModelError::ShapeMismatch("tensor shape"));
            }
        }
        let _ = d;
        Ok(())
    }
}
