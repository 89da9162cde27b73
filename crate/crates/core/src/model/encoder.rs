use candle_core::Tensor;

use super::config::NetConfig;
use crate::error::Result;
use crate::nn::{upsample2x, Conv2d, ConvBlock, Init};

/// Modality-specific encoder: two conv blocks per level, the first of every
/// level after the first with stride 2.
pub struct Encoder {
    levels: Vec<(ConvBlock, ConvBlock)>,
}

impl Encoder {
    pub fn new(init: &mut Init, cfg: &NetConfig) -> Result<Self> {
        let mut levels = Vec::with_capacity(cfg.n_levels);
        for l in 1..=cfg.n_levels {
            let cout = cfg.channels(l);
            let (cin, stride) = if l == 1 { (1, 1) } else { (cfg.channels(l - 1), 2) };
            let mut lp = init.pp(format!("l{l}"));
            let a = ConvBlock::new(&mut lp.pp("b0"), cin, cout, stride)?;
            let b = ConvBlock::new(&mut lp.pp("b1"), cout, cout, 1)?;
            levels.push((a, b));
        }
        Ok(Self { levels })
    }

    /// `image` is `(1, 1, H, W)`; returns one feature map per level, finest first.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.levels.len());
        let mut x = image.clone();
        for (a, b) in &self.levels {
            x = b.forward(&a.forward(&x)?)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// U-Net style decoder with a logit tap at every level.
pub struct Decoder {
    ups: Vec<(ConvBlock, ConvBlock)>,
    heads: Vec<Conv2d>,
}

impl Decoder {
    pub fn new(init: &mut Init, cfg: &NetConfig) -> Result<Self> {
        let l_max = cfg.n_levels;
        let mut ups = Vec::new();
        for l in 1..l_max {
            let below = cfg.decoder_channels[l];
            let cin = below + cfg.channels(l);
            let cout = cfg.decoder_channels[l - 1];
            let mut lp = init.pp(format!("l{l}"));
            ups.push((
                ConvBlock::new(&mut lp.pp("b0"), cin, cout, 1)?,
                ConvBlock::new(&mut lp.pp("b1"), cout, cout, 1)?,
            ));
        }
        let heads = (1..=l_max)
            .map(|l| {
                Conv2d::pointwise(
                    &mut init.pp(format!("head{l}")),
                    cfg.decoder_channels[l - 1],
                    cfg.n_classes,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ups, heads })
    }

    fn run(&self, features: &[Tensor], all_taps: bool) -> Result<Vec<Tensor>> {
        let l_max = features.len();
        let mut taps = vec![None; l_max];
        let mut x = features[l_max - 1].clone();
        if all_taps {
            taps[l_max - 1] = Some(self.heads[l_max - 1].forward(&x)?);
        }
        for l in (1..l_max).rev() {
            let up = upsample2x(&x)?;
            let cat = Tensor::cat(&[&up, &features[l - 1]], 1)?;
            let (a, b) = &self.ups[l - 1];
            x = b.forward(&a.forward(&cat)?)?;
            if all_taps || l == 1 {
                taps[l - 1] = Some(self.heads[l - 1].forward(&x)?);
            }
        }
        Ok(taps.into_iter().flatten().collect())
    }

    /// Logits at every level, finest (full resolution) first.
    pub fn forward_all(&self, features: &[Tensor]) -> Result<Vec<Tensor>> {
        self.run(features, true)
    }

    /// Full-resolution logits only.
    pub fn forward_final(&self, features: &[Tensor]) -> Result<Tensor> {
        Ok(self.run(features, false)?.remove(0))
    }
}
