//! Per-modality encoders, multi-scale attention fusion and the two decoders.

mod attention;
mod config;
mod encoder;
mod fusion;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{AttentionOutput, MultiHeadAttention, TransformerLayer};
pub use config::{DmafConfig, NetConfig};
pub use encoder::{Decoder, Encoder};
pub use fusion::{mask_features, masked_mean, reweight, DmafLevel, FusionLevel};

use crate::datagen::ModalitySample;
use crate::distill::{AttentionAlign, Projector, RelationMix};
use crate::error::{Error, Result};
use crate::nn::{device, Init, ParamStore};

/// Initial value of the relation mixing weight.
pub const ALPHA1_INIT: f64 = 0.6;

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Use attention reweighting; otherwise a uniform mean over present modalities.
    pub use_dmaf: bool,
    /// Also run the shared decoder on every present modality.
    pub uni_decoders: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            use_dmaf: true,
            uni_decoders: true,
        }
    }
}

pub struct ForwardOutput {
    /// `[m][l]` encoder features after presence masking.
    pub uni_features: Vec<Vec<Tensor>>,
    /// `[l]` fused features.
    pub fused: Vec<Tensor>,
    /// `[l]` `(M, H_l·W_l)` modality weights.
    pub weights: Vec<Tensor>,
    /// `[l][k]` attention probabilities of the fusion transformers.
    pub attention: Vec<Vec<Tensor>>,
    /// `[l]` fusion-decoder logits, `(1, n_classes, H_l, W_l)`.
    pub fused_logits: Vec<Tensor>,
    /// `[m]` full-resolution shared-decoder logits for present modalities.
    pub uni_logits: Vec<Option<Tensor>>,
}

impl ForwardOutput {
    /// Per-modality summands `a_m ⊙ e^m` of the fused feature at level `l` (0-based).
    pub fn contributions(&self, l: usize) -> Result<Vec<Tensor>> {
        let w = &self.weights[l];
        self.uni_features
            .iter()
            .enumerate()
            .map(|(m, feats)| {
                let e = &feats[l];
                let (_, _, h, wd) = e.dims4()?;
                let a = w.narrow(0, m, 1)?.reshape((1, 1, h, wd))?;
                Ok(e.broadcast_mul(&a)?)
            })
            .collect()
    }
}

pub struct DmafNet {
    cfg: NetConfig,
    store: ParamStore,
    encoders: Vec<Encoder>,
    fusion: Vec<DmafLevel>,
    fusion_decoder: Decoder,
    shared_decoder: Decoder,
    pub projector: Projector,
    pub align: AttentionAlign,
    pub relation_mix: RelationMix,
}

impl DmafNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        Self::with_alpha1(cfg, seed, ALPHA1_INIT)
    }

    pub fn with_alpha1(cfg: NetConfig, seed: u64, alpha1: f64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let encoders = (0..cfg.n_modalities)
            .map(|m| Encoder::new(&mut init.pp(format!("enc{m}")), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let d = &cfg.dmaf;
        let fusion = (1..=cfg.n_levels)
            .map(|l| {
                DmafLevel::new(
                    &mut init.pp(format!("dmaf{l}")),
                    cfg.n_modalities,
                    cfg.channels(l),
                    cfg.level_size(l),
                    d.token_grid,
                    d.n_layers,
                    d.n_heads,
                    d.head_dim,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion_decoder = Decoder::new(&mut init.pp("fdec"), &cfg)?;
        let shared_decoder = Decoder::new(&mut init.pp("sdec"), &cfg)?;
        let c = cfg.bottleneck_channels();
        let mut dp = init.pp("distill");
        let projector = Projector::new(&mut dp.pp("proj"), c)?;
        let align = AttentionAlign::new(&mut dp.pp("align"), c, d.n_heads, d.head_dim)?;
        let relation_mix = RelationMix::new(&mut dp, alpha1)?;
        drop(init);
        Ok(Self {
            cfg,
            store,
            encoders,
            fusion,
            fusion_decoder,
            shared_decoder,
            projector,
            align,
            relation_mix,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Parameter-name prefix of the encoder for modality `m`.
    pub fn encoder_prefix(m: usize) -> String {
        format!("enc{m}.")
    }

    /// Image planes of a sample as `(1, 1, H, W)` tensors.
    pub fn inputs(&self, sample: &ModalitySample) -> Result<Vec<Tensor>> {
        let (h, w) = self.cfg.image_size;
        if sample.images.len() != self.cfg.n_modalities
            || sample.presence.len() != self.cfg.n_modalities
        {
            return Err(Error::Shape(format!(
                "sample {} has {} modalities, network expects {}",
                sample.sample_id,
                sample.images.len(),
                self.cfg.n_modalities
            )));
        }
        if (sample.height, sample.width) != (h, w) {
            return Err(Error::Shape(format!(
                "sample {} is {}×{}, network expects {h}×{w}",
                sample.sample_id, sample.height, sample.width
            )));
        }
        sample
            .images
            .iter()
            .map(|img| {
                let data: Vec<f64> = img.iter().map(|&v| v as f64).collect();
                Ok(Tensor::from_vec(data, (1, 1, h, w), &device())?)
            })
            .collect()
    }

    pub fn forward(
        &self,
        images: &[Tensor],
        presence: &[bool],
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let m_count = self.cfg.n_modalities;
        if images.len() != m_count || presence.len() != m_count {
            return Err(Error::Shape(format!(
                "expected {m_count} modalities, got {} images and {} flags",
                images.len(),
                presence.len()
            )));
        }
        if !presence.iter().any(|&p| p) {
            return Err(Error::NoModalityPresent);
        }
        let mut uni_features = Vec::with_capacity(m_count);
        for (m, img) in images.iter().enumerate() {
            let feats = self.encoders[m].forward(img)?;
            let feats = if presence[m] {
                feats
            } else {
                feats
                    .iter()
                    .map(|e| e.affine(0.0, 0.0))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            };
            uni_features.push(feats);
        }
        let mut fused = Vec::new();
        let mut weights = Vec::new();
        let mut attention = Vec::new();
        for l in 0..self.cfg.n_levels {
            let level: Vec<Tensor> = uni_features.iter().map(|f| f[l].clone()).collect();
            if opts.use_dmaf {
                let out = self.fusion[l].forward(&level, presence)?;
                fused.push(out.fused);
                weights.push(out.weights);
                attention.push(out.attention);
            } else {
                let (f, a) = masked_mean(&level, presence)?;
                fused.push(f);
                weights.push(a);
                attention.push(Vec::new());
            }
        }
        let fused_logits = self.fusion_decoder.forward_all(&fused)?;
        let uni_logits = if opts.uni_decoders {
            uni_features
                .iter()
                .zip(presence)
                .map(|(f, &p)| {
                    if p {
                        Ok(Some(self.shared_decoder.forward_final(f)?))
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![None; m_count]
        };
        Ok(ForwardOutput {
            uni_features,
            fused,
            weights,
            attention,
            fused_logits,
            uni_logits,
        })
    }

    /// Argmax of the full-resolution fused logits.
    pub fn predict(&self, sample: &ModalitySample, use_dmaf: bool) -> Result<Vec<u8>> {
        let images = self.inputs(sample)?;
        let out = self.forward(
            &images,
            &sample.presence,
            ForwardOptions {
                use_dmaf,
                uni_decoders: false,
            },
        )?;
        let z = &out.fused_logits[0];
        let (_, c, h, w) = z.dims4()?;
        let idx = z.reshape((c, h * w))?.argmax(0)?.to_vec1::<u32>()?;
        Ok(idx.into_iter().map(|v| v as u8).collect())
    }
}
