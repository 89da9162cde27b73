use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{softmax, Init, LayerNorm, Linear};

/// Multi-head attention over token matrices `(T, d_model)` with an optional
/// additive key mask of length `S`.
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    n_heads: usize,
    head_dim: usize,
}

pub struct AttentionOutput {
    pub output: Tensor,
    /// `(heads, T, S)` attention probabilities.
    pub probs: Tensor,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, d_model: usize, n_heads: usize, head_dim: usize) -> Result<Self> {
        let inner = n_heads * head_dim;
        Ok(Self {
            q: Linear::new(&mut init.pp("q"), d_model, inner)?,
            k: Linear::new(&mut init.pp("k"), d_model, inner)?,
            v: Linear::new(&mut init.pp("v"), d_model, inner)?,
            out: Linear::new(&mut init.pp("out"), inner, d_model)?,
            n_heads,
            head_dim,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(0)?;
        Ok(x
            .reshape((t, self.n_heads, self.head_dim))?
            .transpose(0, 1)?
            .contiguous()?)
    }

    pub fn forward(
        &self,
        queries: &Tensor,
        keys_values: &Tensor,
        key_mask: Option<&Tensor>,
    ) -> Result<AttentionOutput> {
        let t = queries.dim(0)?;
        let s = keys_values.dim(0)?;
        let q = self.split_heads(&self.q.forward(queries)?)?;
        let k = self.split_heads(&self.k.forward(keys_values)?)?;
        let v = self.split_heads(&self.v.forward(keys_values)?)?;
        let mut scores = (q.matmul(&k.t()?)? / (self.head_dim as f64).sqrt())?;
        if let Some(mask) = key_mask {
            scores = scores.broadcast_add(&mask.reshape((1, 1, s))?)?;
        }
        let probs = softmax(&scores, 2)?;
        let mixed = probs
            .matmul(&v)?
            .transpose(0, 1)?
            .reshape((t, self.n_heads * self.head_dim))?;
        Ok(AttentionOutput {
            output: self.out.forward(&mixed)?,
            probs,
        })
    }
}

/// Pre-norm block: `T' = MHA(LN(T)) + T`, `T'' = FFN(LN(T')) + T'`.
pub struct TransformerLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl TransformerLayer {
    pub fn new(init: &mut Init, d_model: usize, n_heads: usize, head_dim: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&mut init.pp("norm1"), d_model)?,
            attn: MultiHeadAttention::new(&mut init.pp("attn"), d_model, n_heads, head_dim)?,
            norm2: LayerNorm::new(&mut init.pp("norm2"), d_model)?,
            ff_in: Linear::new(&mut init.pp("ff_in"), d_model, 2 * d_model)?,
            ff_out: Linear::new(&mut init.pp("ff_out"), 2 * d_model, d_model)?,
        })
    }

    pub fn forward(&self, tokens: &Tensor, key_mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let normed = self.norm1.forward(tokens)?;
        let att = self.attn.forward(&normed, &normed, Some(key_mask))?;
        let mid = (att.output + tokens)?;
        let ff = self
            .ff_out
            .forward(&self.ff_in.forward(&self.norm2.forward(&mid)?)?.gelu()?)?;
        Ok(((ff + &mid)?, att.probs))
    }
}
