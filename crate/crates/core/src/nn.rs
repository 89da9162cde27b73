//! Differentiable building blocks on top of candle tensors.
//!
//! Everything runs on the CPU device. Parameters live in a [`ParamStore`]
//! keyed by dotted names; initialisation draws from a caller-owned seeded
//! generator so that two stores built from the same seed are bit-identical.

use std::collections::{BTreeMap, HashMap};

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

/// Named trainable parameters, iterated in lexicographic name order.
#[derive(Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&value)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Names of the parameters whose name starts with `prefix`, in store order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> {
        self.vars.keys().filter(move |k| k.starts_with(prefix))
    }

    pub fn snapshot(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().copy().expect("cpu copy")))
            .collect()
    }

    /// Overwrites every parameter from `values`. The key sets and shapes must match exactly.
    pub fn load(&self, values: &HashMap<String, Tensor>) -> Result<()> {
        if values.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.vars.len(),
                values.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DTYPE)?.copy()?)?;
        }
        Ok(())
    }
}

/// Scoped initialiser handing out parameters under a dotted prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn pp(&mut self, name: impl AsRef<str>) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn from_vec(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape, &device())?;
        let full = self.full_name(name);
        self.store.insert(full, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Internal(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut *self.rng)).collect();
        self.from_vec(name, shape, data)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.from_vec(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.from_vec(name, shape, vec![value; n])
    }
}

// ---------------------------------------------------------------------------
// im2col

#[derive(Debug, Clone, Copy)]
struct Window {
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
}

impl Window {
    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap of a single
    /// image plane stack of `c` channels.
    fn for_each_tap(&self, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let (ho, wo) = self.out_size(h, w);
        for ch in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ch * kh + ky) * kw + kx;
                    for oy in 0..ho {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = (ch * h + iy as usize) * w;
                        let out_row = (row * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f(out_row + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

struct Im2Col(Window);

struct Col2Im {
    window: Window,
    height: usize,
    width: usize,
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

fn im2col_impl<T: Copy + Default>(
    x: &[T],
    window: Window,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (ho, wo) = window.out_size(h, w);
    let per_in = c * h * w;
    let per_out = c * window.kernel.0 * window.kernel.1 * ho * wo;
    let mut out = vec![T::default(); n * per_out];
    for b in 0..n {
        let src = &x[b * per_in..(b + 1) * per_in];
        let dst = &mut out[b * per_out..(b + 1) * per_out];
        window.for_each_tap(c, h, w, |o, i| dst[o] = src[i]);
    }
    out
}

fn col2im_impl<T: Copy + Default + std::ops::AddAssign>(
    cols: &[T],
    window: Window,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (ho, wo) = window.out_size(h, w);
    let per_in = c * h * w;
    let per_out = c * window.kernel.0 * window.kernel.1 * ho * wo;
    let mut out = vec![T::default(); n * per_in];
    for b in 0..n {
        let src = &cols[b * per_out..(b + 1) * per_out];
        let dst = &mut out[b * per_in..(b + 1) * per_in];
        window.for_each_tap(c, h, w, |o, i| dst[i] += src[o]);
    }
    out
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = layout.shape().dims4()?;
        let (ho, wo) = self.0.out_size(h, w);
        let shape = Shape::from((n, c * self.0.kernel.0 * self.0.kernel.1, ho * wo));
        let out = match storage {
            CpuStorage::F64(v) => {
                CpuStorage::F64(im2col_impl(contiguous(v, layout)?, self.0, n, c, h, w))
            }
            CpuStorage::F32(v) => {
                CpuStorage::F32(im2col_impl(contiguous(v, layout)?, self.0, n, c, h, w))
            }
            _ => candle_core::bail!("im2col: unsupported dtype"),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        let (_, _, h, w) = arg.dims4()?;
        let op = Col2Im {
            window: self.0,
            height: h,
            width: w,
        };
        let (n, _, _) = grad_res.dims3()?;
        let c = arg.dim(1)?;
        let g = grad_res.contiguous()?.apply_op1_no_bwd(&op)?;
        Ok(Some(g.reshape((n, c, h, w))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, rows, _) = layout.shape().dims3()?;
        let c = rows / (self.window.kernel.0 * self.window.kernel.1);
        let (h, w) = (self.height, self.width);
        let shape = Shape::from((n, c, h, w));
        let out = match storage {
            CpuStorage::F64(v) => {
                CpuStorage::F64(col2im_impl(contiguous(v, layout)?, self.window, n, c, h, w))
            }
            CpuStorage::F32(v) => {
                CpuStorage::F32(col2im_impl(contiguous(v, layout)?, self.window, n, c, h, w))
            }
            _ => candle_core::bail!("col2im: unsupported dtype"),
        };
        Ok((out, shape))
    }
}

// ---------------------------------------------------------------------------
// layers

pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    window: Window,
    out_channels: usize,
}

impl Conv2d {
    pub fn new(
        init: &mut Init,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let weight = init.normal(
            "weight",
            &[out_channels, in_channels, kernel.0, kernel.1],
            (2.0 / fan_in as f64).sqrt(),
        )?;
        let bias = init.constant("bias", &[out_channels], 0.0)?;
        Ok(Self {
            weight,
            bias,
            window: Window {
                kernel,
                stride,
                padding,
            },
            out_channels,
        })
    }

    /// 3×3 convolution with unit padding.
    pub fn same3x3(init: &mut Init, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Self::new(init, cin, cout, (3, 3), (stride, stride), (1, 1))
    }

    pub fn pointwise(init: &mut Init, cin: usize, cout: usize) -> Result<Self> {
        Self::new(init, cin, cout, (1, 1), (1, 1), (0, 0))
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// `x` is `(N, C, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let (ho, wo) = self.window.out_size(h, w);
        let cols = x.contiguous()?.apply_op1(Im2Col(self.window))?;
        let k = cols.dim(1)?;
        let w2 = self.weight.reshape((self.out_channels, k))?;
        let y = w2
            .broadcast_matmul(&cols)?
            .broadcast_add(&self.bias.reshape((1, self.out_channels, 1))?)?;
        Ok(y.reshape((n, self.out_channels, ho, wo))?)
    }
}

pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(init: &mut Init, input: usize, output: usize) -> Result<Self> {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weight = init.uniform("weight", &[output, input], bound)?;
        let bias = init.constant("bias", &[output], 0.0)?;
        Ok(Self { weight, bias })
    }

    /// `x` is `(T, input)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(init: &mut Init, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[dim], 1.0)?,
            beta: init.constant("beta", &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(normalize_last(x, 1e-5)?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

/// Per-sample, per-channel normalisation over the spatial extent.
pub struct InstanceNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl InstanceNorm {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[channels], 1.0)?,
            beta: init.constant("beta", &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let y = normalize_last(&x.reshape((n, c, h * w))?, 1e-5)?
            .broadcast_mul(&self.gamma.reshape((1, c, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1))?)?;
        Ok(y.reshape((n, c, h, w))?)
    }
}

/// conv → instance norm → SiLU.
pub struct ConvBlock {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ConvBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::same3x3(&mut init.pp("conv"), cin, cout, stride)?,
            norm: InstanceNorm::new(&mut init.pp("norm"), cout)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.silu()?)
    }
}

// ---------------------------------------------------------------------------
// functional helpers

/// Numerically stable softmax along `dim`. Entries equal to `-inf` map to exactly 0.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Additive key mask: 0 for visible keys, `-inf` for hidden ones.
pub fn additive_mask(visible: &[bool]) -> Result<Tensor> {
    let data: Vec<f64> = visible
        .iter()
        .map(|&v| if v { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    Ok(Tensor::from_vec(data, visible.len(), &device())?)
}

/// Row-stochastic linear interpolation weights mapping `input` samples onto
/// `output` samples with half-pixel centres (identity when the sizes agree).
pub fn interp_weights(output: usize, input: usize) -> Vec<f64> {
    let mut m = vec![0.0; output * input];
    let scale = input as f64 / output as f64;
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[i * input + i0] += 1.0 - frac;
        m[i * input + i1] += frac;
    }
    m
}

/// Bilinear resize of `(N, C, H, W)` to `(N, C, out_h, out_w)`, expressed as two
/// matrix products so that it is differentiable end to end.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows = Tensor::from_vec(interp_weights(out_h, h), (out_h, h), &device())?;
    let cols_t = Tensor::from_vec(interp_weights(out_w, w), (out_w, w), &device())?.t()?;
    let planes = x.reshape((n * c, h, w))?;
    let y = rows.broadcast_matmul(&planes)?.broadcast_matmul(&cols_t)?;
    Ok(y.reshape((n, c, out_h, out_w))?)
}

/// Nearest-neighbour ×2 upsampling, written as a broadcast so it has a gradient.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// `(1, C, H, W)` → `(H·W, C)` token matrix.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 {
        return Err(Error::Shape(format!("expected batch of 1, got {n}")));
    }
    Ok(x.reshape((c, h * w))?.t()?.contiguous()?)
}

pub fn scalar(x: &Tensor) -> Result<f64> {
    Ok(x.to_dtype(DTYPE)?.to_scalar::<f64>()?)
}

pub fn flatten_f64(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.flatten_all()?.to_dtype(DTYPE)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store_with<F: FnOnce(&mut Init) -> R, R>(seed: u64, f: F) -> (ParamStore, R) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = {
            let mut init = Init::new(&mut store, &mut rng);
            f(&mut init)
        };
        (store, r)
    }

    fn direct_conv(
        x: &[f64],
        (c, h, w): (usize, usize, usize),
        wt: &[f64],
        co: usize,
        k: usize,
        s: usize,
        p: usize,
    ) -> Vec<f64> {
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * c + ci) * k + ky) * k + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(stride, size) in &[(1usize, 7usize), (2, 8), (2, 7)] {
            let (_, conv) = store_with(3, |i| Conv2d::same3x3(i, 2, 3, stride).unwrap());
            let x: Vec<f64> = (0..2 * size * size).map(|i| (i as f64 * 0.37).sin()).collect();
            let xt = Tensor::from_vec(x.clone(), (1, 2, size, size), &device()).unwrap();
            let y = flatten_f64(&conv.forward(&xt).unwrap()).unwrap();
            let expect = direct_conv(
                &x,
                (2, size, size),
                &flatten_f64(conv.weight()).unwrap(),
                3,
                3,
                stride,
                1,
            );
            assert_eq!(y.len(), expect.len());
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn im2col_backward_matches_finite_differences() {
        let (store, conv) = store_with(5, |i| Conv2d::same3x3(i, 2, 2, 2).unwrap());
        let x0: Vec<f64> = (0..2 * 6 * 6).map(|i| (i as f64 * 0.13).cos()).collect();
        let x = Var::from_tensor(&Tensor::from_vec(x0.clone(), (1, 2, 6, 6), &device()).unwrap())
            .unwrap();
        let loss = |t: &Tensor| conv.forward(t).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss(x.as_tensor()).backward().unwrap();
        let gx = flatten_f64(grads.get(x.as_tensor()).unwrap()).unwrap();
        let h = 1e-6;
        for idx in [0usize, 7, 20, 41, 71] {
            let mut xp = x0.clone();
            xp[idx] += h;
            let mut xm = x0.clone();
            xm[idx] -= h;
            let f = |v: Vec<f64>| {
                scalar(&loss(&Tensor::from_vec(v, (1, 2, 6, 6), &device()).unwrap())).unwrap()
            };
            let fd = (f(xp) - f(xm)) / (2.0 * h);
            assert!((fd - gx[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", gx[idx]);
        }
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn masked_softmax_zeroes_hidden_entries() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0]], &device()).unwrap();
        let m = additive_mask(&[true, false, true]).unwrap();
        let p = softmax(&x.broadcast_add(&m).unwrap(), 1).unwrap();
        let v = flatten_f64(&p).unwrap();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_rows_sum_to_one_and_identity_on_equal_sizes() {
        for (o, i) in [(8, 2), (16, 8), (5, 3), (4, 4)] {
            let m = interp_weights(o, i);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let m = interp_weights(3, 3);
        assert_eq!(m, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (a, _) = store_with(9, |i| Linear::new(&mut i.pp("l"), 4, 3).unwrap());
        let (b, _) = store_with(9, |i| Linear::new(&mut i.pp("l"), 4, 3).unwrap());
        for ((na, va), (nb, vb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(
                flatten_f64(va.as_tensor()).unwrap(),
                flatten_f64(vb.as_tensor()).unwrap()
            );
        }
    }
}
