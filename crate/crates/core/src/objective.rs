//! Segmentation losses, the combined training objective, and evaluation metrics.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{device, log_softmax, resize_bilinear, softmax};

pub const DICE_SMOOTH: f64 = 1e-5;
pub const CLASS_WEIGHT_MIN: f64 = 0.1;
pub const CLASS_WEIGHT_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub fuse: f64,
    pub sep: f64,
    pub rel: f64,
    pub proto: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fuse: 2.0,
            sep: 1.0,
            rel: 0.5,
            proto: 0.5,
        }
    }
}

/// Ground truth prepared once per sample.
pub struct SegTarget {
    pub label: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    onehot: Tensor,
    pixel_weights: Tensor,
    weight_total: f64,
}

/// Inverse-frequency class weights clipped to `[0.1, 10]`; classes absent from
/// the label get the upper bound.
pub fn class_weights(label: &[u8], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &y in label {
        counts[y as usize] += 1;
    }
    let n = label.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                CLASS_WEIGHT_MAX
            } else {
                (n / (n_classes as f64 * c as f64)).clamp(CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX)
            }
        })
        .collect()
}

impl SegTarget {
    pub fn new(label: &[u8], height: usize, width: usize, n_classes: usize) -> Result<Self> {
        if label.len() != height * width {
            return Err(Error::Shape(format!(
                "label has {} pixels, expected {height}×{width}",
                label.len()
            )));
        }
        if let Some(&bad) = label.iter().find(|&&y| y as usize >= n_classes) {
            return Err(Error::Shape(format!("label {bad} ≥ {n_classes} classes")));
        }
        let hw = height * width;
        let w = class_weights(label, n_classes);
        let mut onehot = vec![0.0; n_classes * hw];
        let mut pw = vec![0.0; n_classes * hw];
        let mut total = 0.0;
        for (p, &y) in label.iter().enumerate() {
            let y = y as usize;
            onehot[y * hw + p] = 1.0;
            pw[y * hw + p] = w[y];
            total += w[y];
        }
        Ok(Self {
            label: label.to_vec(),
            height,
            width,
            n_classes,
            onehot: Tensor::from_vec(onehot, (n_classes, hw), &device())?,
            pixel_weights: Tensor::from_vec(pw, (n_classes, hw), &device())?,
            weight_total: total,
        })
    }
}

/// Soft Dice over the foreground classes plus class-weighted cross-entropy,
/// for `(1, n_classes, H, W)` logits at the target's resolution.
pub fn seg_loss(logits: &Tensor, target: &SegTarget) -> Result<Tensor> {
    let (_, c, h, w) = logits.dims4()?;
    if (c, h, w) != (target.n_classes, target.height, target.width) {
        return Err(Error::Shape(format!(
            "logits {c}×{h}×{w} do not match target {}×{}×{}",
            target.n_classes, target.height, target.width
        )));
    }
    let z = logits.reshape((c, h * w))?;
    let logp = log_softmax(&z, 0)?;
    let ce = ((&logp * &target.pixel_weights)?.sum_all()? / -target.weight_total)?;
    let probs = softmax(&z, 0)?.narrow(0, 1, c - 1)?;
    let g = target.onehot.narrow(0, 1, c - 1)?;
    let inter = (&probs * &g)?.sum(1)?;
    let denom = (probs.sum(1)? + g.sum(1)?)?;
    let dice = ((inter * 2.0)? + DICE_SMOOTH)?.div(&(denom + DICE_SMOOTH)?)?;
    let dice_loss = dice.mean(0)?.affine(-1.0, 1.0)?;
    Ok((dice_loss + ce)?)
}

/// Deep-supervision loss `Σ_l 2^{-l} ℓ(upsample(z_l))` over the decoder taps, finest first.
pub fn fuse_loss(taps: &[Tensor], target: &SegTarget) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (i, z) in taps.iter().enumerate() {
        let up = resize_bilinear(z, target.height, target.width)?;
        let term = (seg_loss(&up, target)? * 0.5f64.powi(i as i32 + 1))?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Shape("no decoder outputs".into()))
}

/// Weighted sum of the separate uni-modal losses.
pub fn weighted_sum(terms: &[(f64, Tensor)]) -> Result<Tensor> {
    let mut total = Tensor::zeros((), crate::nn::DTYPE, &device())?;
    for (w, t) in terms {
        total = (total + (t * *w)?)?;
    }
    Ok(total)
}

/// `λ₁ L_fuse + λ₂ L_sep + λ₃ L_rel + λ₄ L_proto`.
pub fn total_loss(
    lambda: &LossWeights,
    fuse: &Tensor,
    sep: &Tensor,
    rel: &Tensor,
    proto: &Tensor,
) -> Result<Tensor> {
    weighted_sum(&[
        (lambda.fuse, fuse.clone()),
        (lambda.sep, sep.clone()),
        (lambda.rel, rel.clone()),
        (lambda.proto, proto.clone()),
    ])
}

// ---------------------------------------------------------------------------
// metrics

/// Dice similarity of two binary masks; 1 when both are empty.
pub fn dice(pred: &[bool], truth: &[bool]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(a, b)| **a && **b).count();
    let total = pred.iter().filter(|v| **v).count() + truth.iter().filter(|v| **v).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Nested region `label ≥ c`.
pub fn region_mask(label: &[u8], class: u8) -> Vec<bool> {
    label.iter().map(|&y| y >= class).collect()
}

/// Pixels of the mask with a 4-neighbour outside it; pixels beyond the image count as outside.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask[(y - 1) * w + x]
                || !mask[(y + 1) * w + x]
                || !mask[y * w + x - 1]
                || !mask[y * w + x + 1];
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// 1-D squared distance transform of `f` (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest `true` pixel.
pub fn squared_distance_map(seeds: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut tmp);
        for y in 0..h {
            grid[y * w + x] = tmp[y];
        }
    }
    let mut row = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row);
        grid[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    grid
}

fn directed(from: &[(usize, usize)], to_map: &[f64], w: usize) -> Vec<f64> {
    from.iter().map(|&(y, x)| to_map[y * w + x].sqrt()).collect()
}

/// Symmetric boundary Hausdorff distance in pixels at quantile `q` (1.0 = maximum).
/// `None` when either mask is empty.
pub fn hausdorff_quantile(a: &[bool], b: &[bool], h: usize, w: usize, q: f64) -> Option<f64> {
    let ba = boundary(a, h, w);
    let bb = boundary(b, h, w);
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let seeds = |pts: &[(usize, usize)]| {
        let mut m = vec![false; h * w];
        for &(y, x) in pts {
            m[y * w + x] = true;
        }
        m
    };
    let da = squared_distance_map(&seeds(&ba), h, w);
    let db = squared_distance_map(&seeds(&bb), h, w);
    let quant = |mut d: Vec<f64>| {
        d.sort_by(|x, y| x.total_cmp(y));
        let idx = ((q * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
        d[idx]
    };
    Some(quant(directed(&ba, &db, w)).max(quant(directed(&bb, &da, w))))
}

pub fn hausdorff(a: &[bool], b: &[bool], h: usize, w: usize) -> Option<f64> {
    hausdorff_quantile(a, b, h, w, 1.0)
}
