//! Relation and prototype distillation from the fused bottleneck to each modality.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MultiHeadAttention;
use crate::nn::{additive_mask, device, flatten_f64, scalar, to_tokens, Init, DTYPE};

pub const PROTO_EPS: f64 = 1e-6;
/// Class prototypes with a smaller norm than this are treated as empty.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    Fused,
    Modality(usize),
}

/// Channel covariance `(1/HW)(X − μ)(X − μ)ᵀ` of a `(1, C, H, W)` feature, as `(C, C)`.
pub fn covariance(feature: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = feature.dims4()?;
    let x = feature.reshape((c, h * w))?;
    let centred = x.broadcast_sub(&x.mean_keepdim(1)?)?;
    Ok((centred.matmul(&centred.t()?)? / (h * w) as f64)?)
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.sqr()?.mean_all()?)
}

/// Learnable linear map on vectorised covariances, initialised to the identity.
pub struct Projector {
    weight: Tensor,
    dim: usize,
}

impl Projector {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        let n = channels * channels;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        Ok(Self {
            weight: init.from_vec("weight", &[n, n], eye)?,
            dim: channels,
        })
    }

    pub fn forward(&self, cov: &Tensor) -> Result<Tensor> {
        let n = self.dim * self.dim;
        Ok(cov
            .reshape((1, n))?
            .matmul(&self.weight.t()?)?
            .reshape((self.dim, self.dim))?)
    }
}

/// `MSE(P(Σ_m), sg(Σ_f))`.
pub fn covariance_loss(projector: &Projector, uni: &Tensor, fused: &Tensor) -> Result<Tensor> {
    let target = covariance(fused)?.detach();
    mse(&projector.forward(&covariance(uni)?)?, &target)
}

/// Cross-attention from uni-modal tokens onto the fused bottleneck.
///
/// Keys and values are the per-modality summands `a_m ⊙ e^m` of the fused
/// feature, so the presence mask hides the tokens of absent modalities.
pub struct AttentionAlign {
    mha: MultiHeadAttention,
}

pub struct AlignOutput {
    pub aligned: Tensor,
    pub probs: Tensor,
    pub loss: Tensor,
}

impl AttentionAlign {
    pub fn new(init: &mut Init, channels: usize, n_heads: usize, head_dim: usize) -> Result<Self> {
        Ok(Self {
            mha: MultiHeadAttention::new(&mut init.pp("mha"), channels, n_heads, head_dim)?,
        })
    }

    /// `uni` is `(1, C, H, W)`; `contributions` has one `(1, C, H, W)` entry per
    /// modality; `fused` is their sum.
    pub fn forward(
        &self,
        uni: &Tensor,
        contributions: &[Tensor],
        presence: &[bool],
        fused: &Tensor,
    ) -> Result<AlignOutput> {
        let q = to_tokens(uni)?;
        let hw = q.dim(0)?;
        let kv = contributions
            .iter()
            .map(|c| to_tokens(&c.detach()))
            .collect::<Result<Vec<_>>>()?;
        let kv = Tensor::cat(&kv, 0)?;
        let visible: Vec<bool> = presence
            .iter()
            .flat_map(|&p| std::iter::repeat_n(p, hw))
            .collect();
        let mask = additive_mask(&visible)?;
        let out = self.mha.forward(&q, &kv, Some(&mask))?;
        let target = to_tokens(&fused.detach())?;
        let loss = mse(&out.output, &target)?;
        Ok(AlignOutput {
            aligned: out.output,
            probs: out.probs,
            loss,
        })
    }
}

/// Learned mixing weight `α₁ = σ(θ)` between the covariance and attention terms.
pub struct RelationMix {
    logit: Tensor,
}

impl RelationMix {
    pub fn new(init: &mut Init, alpha: f64) -> Result<Self> {
        let logit = (alpha / (1.0 - alpha)).ln();
        Ok(Self {
            logit: init.constant("alpha_logit", &[1], logit)?,
        })
    }

    pub fn alpha(&self) -> Result<Tensor> {
        Ok((self.logit.neg()?.exp()? + 1.0)?.recip()?.reshape(())?)
    }

    /// `α L_cov + (1 − α) L_attn`.
    pub fn mix(&self, cov: &Tensor, attn: &Tensor) -> Result<Tensor> {
        let a = self.alpha()?;
        Ok((cov.mul(&a)? + attn.mul(&a.affine(-1.0, 1.0)?)?)?)
    }
}

/// Per-modality relation loss and the resulting gap `g_r(m)`.
pub struct RelationTerm {
    pub modality: usize,
    pub cov: Tensor,
    pub attn: Tensor,
    pub loss: Tensor,
    pub gap: f64,
}

/// `L_rel = mean over present modalities of α L_cov + (1 − α) L_attn`.
pub fn relation_loss(terms: &[RelationTerm]) -> Result<Tensor> {
    if terms.is_empty() {
        return Err(Error::NoModalityPresent);
    }
    let losses: Vec<Tensor> = terms.iter().map(|t| t.loss.clone()).collect();
    Ok(Tensor::stack(&losses, 0)?.mean(0)?)
}

/// Majority label of each `factor × factor` block; ties go to the higher class.
pub fn mode_pool(label: &[u8], h: usize, w: usize, factor: usize, n_classes: usize) -> Result<Vec<u8>> {
    if factor == 0 || h % factor != 0 || w % factor != 0 || label.len() != h * w {
        return Err(Error::Shape(format!(
            "cannot pool a {h}×{w} label by {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0u8; oh * ow];
    let mut counts = vec![0usize; n_classes];
    for y in 0..oh {
        for x in 0..ow {
            counts.iter_mut().for_each(|c| *c = 0);
            for dy in 0..factor {
                for dx in 0..factor {
                    let v = label[(y * factor + dy) * w + x * factor + dx] as usize;
                    if v >= n_classes {
                        return Err(Error::Shape(format!("label {v} ≥ {n_classes} classes")));
                    }
                    counts[v] += 1;
                }
            }
            let mut best = 0;
            for (c, &n) in counts.iter().enumerate() {
                if n >= counts[best] {
                    best = c;
                }
            }
            out[y * ow + x] = best as u8;
        }
    }
    Ok(out)
}

pub struct PrototypeSet {
    /// `(n_classes, C)` class-mean features.
    pub prototypes: Tensor,
    pub counts: Vec<usize>,
    pub source: FeatureSource,
}

/// Class prototypes `p_c = Σ_{y=c} F / (|Ω_c| + ε)` from a `(1, C, H, W)` feature and a
/// label at the same resolution, scaled by the presence indicator.
pub fn prototypes(
    feature: &Tensor,
    label: &[u8],
    n_classes: usize,
    indicator: bool,
    source: FeatureSource,
) -> Result<PrototypeSet> {
    let (_, c, h, w) = feature.dims4()?;
    if label.len() != h * w {
        return Err(Error::Shape(format!(
            "label has {} pixels, feature has {}",
            label.len(),
            h * w
        )));
    }
    let mut onehot = vec![0.0; n_classes * h * w];
    let mut counts = vec![0usize; n_classes];
    for (p, &y) in label.iter().enumerate() {
        let y = y as usize;
        if y >= n_classes {
            return Err(Error::Shape(format!("label {y} ≥ {n_classes} classes")));
        }
        onehot[y * h * w + p] = 1.0;
        counts[y] += 1;
    }
    let onehot = Tensor::from_vec(onehot, (n_classes, h * w), &device())?;
    let denom: Vec<f64> = counts
        .iter()
        .map(|&n| if indicator { 1.0 } else { 0.0 } / (n as f64 + PROTO_EPS))
        .collect();
    let denom = Tensor::from_vec(denom, (n_classes, 1), &device())?;
    let sums = onehot.matmul(&to_tokens(feature)?)?;
    let _ = c;
    Ok(PrototypeSet {
        prototypes: sums.broadcast_mul(&denom)?,
        counts,
        source,
    })
}

pub struct PrototypeTerm {
    pub modality: usize,
    pub loss: Tensor,
    /// Mean of `1 − cos/τ` over the valid classes.
    pub gap: f64,
    pub valid_classes: usize,
}

/// `Σ_c (1 − cos(p_c^f, p_c^m)/τ_m)` over classes non-empty in both sets. The fused
/// prototypes act as a fixed teacher.
pub fn prototype_term(
    fused: &PrototypeSet,
    uni: &PrototypeSet,
    modality: usize,
    tau: f64,
) -> Result<PrototypeTerm> {
    if tau < 1.0 {
        return Err(Error::Config(format!("prototype temperature {tau} < 1")));
    }
    let n = fused.counts.len();
    let f_norms = row_norms(&fused.prototypes)?;
    let u_norms = row_norms(&uni.prototypes)?;
    let valid: Vec<u32> = (0..n)
        .filter(|&c| {
            fused.counts[c] > 0
                && uni.counts[c] > 0
                && f_norms[c] >= NORM_FLOOR
                && u_norms[c] >= NORM_FLOOR
        })
        .map(|c| c as u32)
        .collect();
    if valid.is_empty() {
        let zero = Tensor::zeros((), DTYPE, &device())?;
        return Ok(PrototypeTerm {
            modality,
            loss: zero,
            gap: 0.0,
            valid_classes: 0,
        });
    }
    let idx = Tensor::new(valid.as_slice(), &device())?;
    let pf = fused.prototypes.detach().index_select(&idx, 0)?;
    let pu = uni.prototypes.index_select(&idx, 0)?;
    let dot = (&pf * &pu)?.sum(1)?;
    let norms = (pf.sqr()?.sum(1)?.sqrt()? * pu.sqr()?.sum(1)?.sqrt()?)?;
    let terms = (dot / norms)?.affine(-1.0 / tau, 1.0)?;
    let loss = terms.sum_all()?;
    // cos can exceed 1 by rounding
    let gap = (scalar(&loss)? / valid.len() as f64).max(0.0);
    Ok(PrototypeTerm {
        modality,
        loss,
        gap,
        valid_classes: valid.len(),
    })
}

/// `L_proto = (1/|P|) Σ_{m∈P} Σ_c (1 − cos/τ_m)`.
pub fn prototype_loss(terms: &[PrototypeTerm]) -> Result<Tensor> {
    if terms.is_empty() {
        return Err(Error::NoModalityPresent);
    }
    let losses: Vec<Tensor> = terms.iter().map(|t| t.loss.clone()).collect();
    Ok(Tensor::stack(&losses, 0)?.mean(0)?)
}

fn row_norms(x: &Tensor) -> Result<Vec<f64>> {
    flatten_f64(&x.sqr()?.sum(1)?.sqrt()?)
}
