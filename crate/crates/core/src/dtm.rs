//! Dynamic training monitor: tracks per-modality distillation gaps and turns
//! them into loss weights and encoder gradient scales.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtmConfig {
    pub eps: f64,
    /// Decay of the running means of the relation and prototype gaps.
    pub mean_decay: f64,
    pub max_decay: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub conflict_threshold: f64,
    pub damping: f64,
}

impl Default for DtmConfig {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            mean_decay: 0.99,
            max_decay: 0.9,
            scale_min: 0.1,
            scale_max: 10.0,
            conflict_threshold: -0.5,
            damping: 0.7,
        }
    }
}

/// Per-modality monitor state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityGap {
    pub relation_ema: Option<f64>,
    pub prototype_ema: Option<f64>,
    /// Raw gaps from the last step the modality was present.
    pub last_relation: Option<f64>,
    pub last_prototype: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapState {
    pub modalities: Vec<ModalityGap>,
    pub mean_relation: Option<f64>,
    pub mean_prototype: Option<f64>,
    pub steps: u64,
}

/// Everything derived from one monitor update.
#[derive(Clone, Debug, PartialEq)]
pub struct DtmStep {
    pub alpha2: f64,
    /// `α₂ G_r + (1 − α₂) G_p` per present modality.
    pub total_gap: BTreeMap<usize, f64>,
    /// Normalised loss weights over the present modalities; they sum to 1.
    pub weights: BTreeMap<usize, f64>,
    pub decay: BTreeMap<usize, f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `α_decay = max_decay (1 − σ((g_r + ε)/(g_p + ε)))`.
pub fn adaptive_decay(relation: f64, prototype: f64, cfg: &DtmConfig) -> f64 {
    cfg.max_decay * (1.0 - sigmoid((relation + cfg.eps) / (prototype + cfg.eps)))
}

/// `α₂ = (ḡ_r + ε)/(ḡ_r + ḡ_p + 2ε)`.
pub fn alpha2(mean_relation: f64, mean_prototype: f64, eps: f64) -> f64 {
    (mean_relation + eps) / (mean_relation + mean_prototype + 2.0 * eps)
}

/// Loss weights `w_m ∝ 1/(g_m + ε)`, normalised to sum to one.
pub fn inverse_gap_weights(gaps: &BTreeMap<usize, f64>, eps: f64) -> BTreeMap<usize, f64> {
    let raw: BTreeMap<usize, f64> = gaps.iter().map(|(&m, &g)| (m, 1.0 / (g + eps))).collect();
    let sum: f64 = raw.values().sum();
    raw.into_iter().map(|(m, v)| (m, v / sum)).collect()
}

fn check_gap(name: &str, m: usize, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::NonFinite {
            component: format!("{name} gap of modality {m} = {v}"),
        })
    }
}

impl GapState {
    pub fn new(n_modalities: usize) -> Self {
        Self {
            modalities: vec![ModalityGap::default(); n_modalities],
            mean_relation: None,
            mean_prototype: None,
            steps: 0,
        }
    }

    /// Fold in the raw gaps `(g_r, g_p)` of the modalities present this step.
    /// Absent modalities keep their state.
    pub fn update(&mut self, raw: &BTreeMap<usize, (f64, f64)>, cfg: &DtmConfig) -> Result<DtmStep> {
        if raw.is_empty() {
            return Err(Error::NoModalityPresent);
        }
        for (&m, &(r, p)) in raw {
            if m >= self.modalities.len() {
                return Err(Error::Shape(format!("modality {m} out of range")));
            }
            check_gap("relation", m, r)?;
            check_gap("prototype", m, p)?;
        }
        let mut decay = BTreeMap::new();
        for (&m, &(r, p)) in raw {
            let st = &mut self.modalities[m];
            let d = adaptive_decay(
                st.last_relation.unwrap_or(r),
                st.last_prototype.unwrap_or(p),
                cfg,
            );
            st.relation_ema = Some(match st.relation_ema {
                Some(prev) => d * prev + (1.0 - d) * r,
                None => r,
            });
            st.prototype_ema = Some(match st.prototype_ema {
                Some(prev) => d * prev + (1.0 - d) * p,
                None => p,
            });
            st.last_relation = Some(r);
            st.last_prototype = Some(p);
            decay.insert(m, d);
        }
        let n = raw.len() as f64;
        let step_r: f64 = raw.values().map(|v| v.0).sum::<f64>() / n;
        let step_p: f64 = raw.values().map(|v| v.1).sum::<f64>() / n;
        let k = cfg.mean_decay;
        self.mean_relation = Some(self.mean_relation.map_or(step_r, |g| k * g + (1.0 - k) * step_r));
        self.mean_prototype = Some(self.mean_prototype.map_or(step_p, |g| k * g + (1.0 - k) * step_p));
        let a2 = alpha2(
            self.mean_relation.unwrap_or(0.0),
            self.mean_prototype.unwrap_or(0.0),
            cfg.eps,
        );
        let total_gap: BTreeMap<usize, f64> = raw
            .keys()
            .map(|&m| {
                let st = &self.modalities[m];
                let g = a2 * st.relation_ema.unwrap_or(0.0)
                    + (1.0 - a2) * st.prototype_ema.unwrap_or(0.0);
                (m, g)
            })
            .collect();
        let weights = inverse_gap_weights(&total_gap, cfg.eps);
        self.steps += 1;
        Ok(DtmStep {
            alpha2: a2,
            total_gap,
            weights,
            decay,
        })
    }
}

/// Gradient scale `clip(1/w, min, max)`, damped when the current gradient
/// points against the previous one.
pub fn gradient_scale(weight: f64, similarity: f64, cfg: &DtmConfig) -> f64 {
    let base = (1.0 / weight).clamp(cfg.scale_min, cfg.scale_max);
    if similarity < cfg.conflict_threshold {
        base * cfg.damping
    } else {
        base
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
