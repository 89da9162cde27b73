use candle_core::Tensor;

use super::attention::TransformerLayer;
use crate::error::{Error, Result};
use crate::nn::{additive_mask, device, resize_bilinear, softmax, to_tokens, Conv2d, Init, Linear};

/// Output of one fusion level.
pub struct FusionLevel {
    /// `(1, C, H, W)` fused feature.
    pub fused: Tensor,
    /// `(M, H·W)` per-pixel modality weights; columns sum to 1 over present modalities.
    pub weights: Tensor,
    /// Attention probabilities per transformer layer, each `(heads, M·S, M·S)`.
    pub attention: Vec<Tensor>,
}

/// Attention-driven reweighting of the modality features at one scale.
pub struct DmafLevel {
    down: Conv2d,
    pos: Tensor,
    layers: Vec<TransformerLayer>,
    head: Linear,
    grid: (usize, usize),
}

impl DmafLevel {
    pub fn new(
        init: &mut Init,
        n_modalities: usize,
        channels: usize,
        size: (usize, usize),
        grid: (usize, usize),
        n_layers: usize,
        n_heads: usize,
        head_dim: usize,
    ) -> Result<Self> {
        if size.0 % grid.0 != 0 || size.1 % grid.1 != 0 {
            return Err(Error::Config(format!(
                "feature map {}×{} not divisible into {}×{} tokens",
                size.0, size.1, grid.0, grid.1
            )));
        }
        let kernel = (size.0 / grid.0, size.1 / grid.1);
        let down = Conv2d::new(&mut init.pp("down"), channels, channels, kernel, kernel, (0, 0))?;
        let tokens = n_modalities * grid.0 * grid.1;
        let pos = init.normal("pos", &[tokens, channels], 0.02)?;
        let layers = (0..n_layers)
            .map(|k| TransformerLayer::new(&mut init.pp(format!("layer{k}")), channels, n_heads, head_dim))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut init.pp("head"), channels, 1)?;
        Ok(Self {
            down,
            pos,
            layers,
            head,
            grid,
        })
    }

    /// `features` holds one `(1, C, H, W)` map per modality; absent ones should already be zero.
    pub fn forward(&self, features: &[Tensor], presence: &[bool]) -> Result<FusionLevel> {
        let m = features.len();
        let s = self.grid.0 * self.grid.1;
        let (_, _, h, w) = features[0].dims4()?;
        let masked = mask_features(features, presence)?;
        let stacked = Tensor::cat(&masked, 0)?;
        let down = self.down.forward(&stacked)?;
        let tokens = (0..m)
            .map(|i| to_tokens(&down.narrow(0, i, 1)?))
            .collect::<Result<Vec<_>>>()?;
        let mut t = Tensor::cat(&tokens, 0)?.broadcast_add(&self.pos)?;
        let visible: Vec<bool> = presence
            .iter()
            .flat_map(|&p| std::iter::repeat_n(p, s))
            .collect();
        let key_mask = additive_mask(&visible)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, probs) = layer.forward(&t, &key_mask)?;
            t = next;
            attention.push(probs);
        }
        let logits = self
            .head
            .forward(&t)?
            .reshape((m, 1, self.grid.0, self.grid.1))?;
        let logits = resize_bilinear(&logits, h, w)?.reshape((m, h * w))?;
        let (fused, weights) = reweight(&masked, &logits, presence)?;
        Ok(FusionLevel {
            fused,
            weights,
            attention,
        })
    }
}

/// Zero the features of absent modalities.
pub fn mask_features(features: &[Tensor], presence: &[bool]) -> Result<Vec<Tensor>> {
    features
        .iter()
        .zip(presence)
        .map(|(e, &p)| Ok(if p { e.clone() } else { e.affine(0.0, 0.0)? }))
        .collect()
}

/// Softmax the `(M, H·W)` logits across modalities, with absent modalities
/// excluded, and take the weighted sum of the `(1, C, H, W)` features.
pub fn reweight(features: &[Tensor], logits: &Tensor, presence: &[bool]) -> Result<(Tensor, Tensor)> {
    let m = features.len();
    let (_, c, h, w) = features[0].dims4()?;
    if !presence.iter().any(|&p| p) {
        return Err(Error::NoModalityPresent);
    }
    let mask = additive_mask(presence)?.reshape((m, 1))?;
    let weights = softmax(&logits.broadcast_add(&mask)?, 0)?;
    let stacked = Tensor::cat(features, 0)?.reshape((m, c, h * w))?;
    let fused = stacked
        .broadcast_mul(&weights.reshape((m, 1, h * w))?)?
        .sum(0)?
        .reshape((1, c, h, w))?;
    Ok((fused, weights))
}

/// Uniform average over present modalities, used when the attention reweighting is disabled.
pub fn masked_mean(features: &[Tensor], presence: &[bool]) -> Result<(Tensor, Tensor)> {
    let m = features.len();
    let (_, _, h, w) = features[0].dims4()?;
    let logits = Tensor::zeros((m, h * w), crate::nn::DTYPE, &device())?;
    reweight(&mask_features(features, presence)?, &logits, presence)
}
