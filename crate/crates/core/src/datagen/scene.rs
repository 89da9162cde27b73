use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotated ellipse in pixel coordinates; `axes.0` lies along the rotated x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub angle: f64,
}

impl Ellipse {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.axes;
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(Error::InvalidScene(format!(
                "degenerate ellipse axes ({a}, {b})"
            )));
        }
        if !(self.center.0.is_finite() && self.center.1.is_finite() && self.angle.is_finite()) {
            return Err(Error::InvalidScene("non-finite ellipse parameters".into()));
        }
        Ok(())
    }

    /// Inside test for the point `(y, x)`.
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }
}

/// Concrete nested geometry of one sample: `regions[k]` is the region of
/// class `k + 1`, and each region lies inside the previous one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nesting {
    pub regions: Vec<Ellipse>,
}

impl Nesting {
    /// Label of the pixel whose centre is `(y + 0.5, x + 0.5)`.
    pub fn label_at(&self, y: usize, x: usize) -> u8 {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        self.regions
            .iter()
            .take_while(|e| e.contains(py, px))
            .count() as u8
    }

    pub fn rasterize(&self, height: usize, width: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                out.push(self.label_at(y, x));
            }
        }
        out
    }
}

/// Ranges the per-sample nested geometry is drawn from, as fractions of the
/// image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestingPrior {
    pub center_jitter: f64,
    pub outer_axis: (f64, f64),
    pub inner_scale: (f64, f64),
}

impl Default for NestingPrior {
    fn default() -> Self {
        Self {
            center_jitter: 0.1,
            outer_axis: (0.2, 0.32),
            inner_scale: (0.45, 0.65),
        }
    }
}

/// How one modality turns the label geometry into intensities.
///
/// A pixel of class `c` takes `intensities[c']`, where `c'` is the deepest
/// visible class not exceeding `c` (class 0 is always visible).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityRenderer {
    pub visible: Vec<bool>,
    pub intensities: Vec<f64>,
    pub noise_sigma: f64,
}

impl ModalityRenderer {
    fn shown_class(&self, label: u8) -> usize {
        (0..=label as usize).rev().find(|&c| self.visible[c]).unwrap_or(0)
    }

    pub fn value(&self, label: u8) -> f64 {
        self.intensities[self.shown_class(label)]
    }

    /// Whether class `c` is distinguishable from the class just outside it.
    fn renders_contrast(&self, c: usize) -> bool {
        self.visible[c] && self.value(c as u8) != self.value((c - 1) as u8)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub nesting: NestingPrior,
    pub modalities: Vec<ModalityRenderer>,
}

impl SceneSpec {
    /// Default surrogate: modality 0 shows every class with distinct
    /// intensity, modality `m ≥ 1` shows only the silhouette of class
    /// `((m − 1) mod (C − 1)) + 1`.
    pub fn new(height: usize, width: usize, n_classes: usize, n_modalities: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidScene("need at least 2 classes".into()));
        }
        let modalities = (0..n_modalities)
            .map(|m| {
                if m == 0 {
                    ModalityRenderer {
                        visible: vec![true; n_classes],
                        intensities: (0..n_classes).map(|c| c as f64).collect(),
                        noise_sigma: 0.3,
                    }
                } else {
                    let shown = (m - 1) % (n_classes - 1) + 1;
                    let mut visible = vec![false; n_classes];
                    visible[0] = true;
                    visible[shown] = true;
                    let mut intensities = vec![0.0; n_classes];
                    intensities[shown] = 1.5;
                    ModalityRenderer {
                        visible,
                        intensities,
                        noise_sigma: 0.3,
                    }
                }
            })
            .collect();
        let spec = Self {
            height,
            width,
            n_classes,
            nesting: NestingPrior::default(),
            modalities,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidScene("image must be at least 4×4".into()));
        }
        if self.n_classes < 2 || self.n_classes > 255 {
            return Err(Error::InvalidScene(format!("bad class count {}", self.n_classes)));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidScene("no modalities".into()));
        }
        for (m, r) in self.modalities.iter().enumerate() {
            if r.visible.len() != self.n_classes || r.intensities.len() != self.n_classes {
                return Err(Error::InvalidScene(format!(
                    "renderer {m} does not cover {} classes",
                    self.n_classes
                )));
            }
            if !r.visible[0] {
                return Err(Error::InvalidScene(format!("renderer {m} hides background")));
            }
            if !(r.noise_sigma >= 0.0 && r.noise_sigma.is_finite()) {
                return Err(Error::InvalidScene(format!("renderer {m} has bad noise level")));
            }
        }
        for c in 1..self.n_classes {
            if !self.modalities.iter().any(|r| r.renders_contrast(c)) {
                return Err(Error::InvalidScene(format!(
                    "no modality renders class {c} with contrast"
                )));
            }
        }
        let p = &self.nesting;
        if !(p.outer_axis.0 > 0.0 && p.outer_axis.0 <= p.outer_axis.1)
            || !(p.inner_scale.0 > 0.0 && p.inner_scale.0 <= p.inner_scale.1 && p.inner_scale.1 < 1.0)
            || p.center_jitter < 0.0
        {
            return Err(Error::InvalidScene("inconsistent nesting prior".into()));
        }
        Ok(())
    }

    /// Draws a strictly nested geometry. Inner regions are scaled copies of
    /// their parent (same rotation) displaced by at most `0.8 · (1 − s)` in the
    /// parent's normalised frame, which keeps them inside the parent.
    pub fn draw_nesting(&self, rng: &mut ChaCha8Rng) -> Nesting {
        let (h, w) = (self.height as f64, self.width as f64);
        let p = &self.nesting;
        let jitter = |rng: &mut ChaCha8Rng, size: f64| {
            if p.center_jitter > 0.0 {
                rng.random_range(-p.center_jitter..=p.center_jitter) * size
            } else {
                0.0
            }
        };
        let cy = h / 2.0 + jitter(rng, h);
        let cx = w / 2.0 + jitter(rng, w);
        let a = rng.random_range(p.outer_axis.0..=p.outer_axis.1) * w.min(h);
        let b = rng.random_range(p.outer_axis.0..=p.outer_axis.1) * w.min(h);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let mut regions = vec![Ellipse {
            center: (cy, cx),
            axes: (a, b),
            angle,
        }];
        for _ in 2..self.n_classes {
            let parent = *regions.last().expect("outer region");
            let s = rng.random_range(p.inner_scale.0..=p.inner_scale.1);
            let r = rng.random_range(0.0..=0.8 * (1.0 - s));
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let (u, v) = (r * phi.cos() * parent.axes.0, r * phi.sin() * parent.axes.1);
            let (sn, cs) = parent.angle.sin_cos();
            let dx = cs * u - sn * v;
            let dy = sn * u + cs * v;
            regions.push(Ellipse {
                center: (parent.center.0 + dy, parent.center.1 + dx),
                axes: (parent.axes.0 * s, parent.axes.1 * s),
                angle: parent.angle,
            });
        }
        Nesting { regions }
    }
}

/// One rendered sample: `M` zero-filled-when-absent image planes, a label map
/// and the presence row.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySample {
    pub sample_id: String,
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f32>>,
    pub label: Vec<u8>,
    pub presence: Vec<bool>,
}

impl ModalitySample {
    pub fn n_modalities(&self) -> usize {
        self.images.len()
    }

    /// Copy with modality `m` zero-filled and marked absent wherever `keep[m]` is false.
    pub fn restricted(&self, keep: &[bool]) -> Self {
        let mut out = self.clone();
        for (m, &k) in keep.iter().enumerate() {
            if !k {
                out.presence[m] = false;
                out.images[m].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }
}

/// Zero mean, unit variance; constant images are only centred.
pub fn standardize(img: &mut [f64]) {
    let n = img.len() as f64;
    let mean = img.iter().sum::<f64>() / n;
    let var = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var < 1e-8 { 1.0 } else { var.sqrt() };
    img.iter_mut().for_each(|v| *v = (*v - mean) / scale);
}

/// Renders a sample with freshly drawn geometry.
pub fn render_sample(
    spec: &SceneSpec,
    presence: &[bool],
    sample_id: impl Into<String>,
    rng: &mut ChaCha8Rng,
) -> Result<ModalitySample> {
    spec.validate()?;
    let nesting = spec.draw_nesting(rng);
    render_with_nesting(spec, &nesting, presence, sample_id, rng)
}

/// Renders a sample for a given geometry. Noise is drawn for every modality,
/// present or not, so a sample's present images do not depend on which other
/// modalities are missing.
pub fn render_with_nesting(
    spec: &SceneSpec,
    nesting: &Nesting,
    presence: &[bool],
    sample_id: impl Into<String>,
    rng: &mut ChaCha8Rng,
) -> Result<ModalitySample> {
    if presence.len() != spec.n_modalities() {
        return Err(Error::Shape(format!(
            "presence row has {} entries for {} modalities",
            presence.len(),
            spec.n_modalities()
        )));
    }
    if nesting.regions.len() != spec.n_classes - 1 {
        return Err(Error::InvalidScene(format!(
            "nesting has {} regions, expected {}",
            nesting.regions.len(),
            spec.n_classes - 1
        )));
    }
    for e in &nesting.regions {
        e.validate()?;
    }
    let (h, w) = (spec.height, spec.width);
    let label = nesting.rasterize(h, w);
    let mut images = Vec::with_capacity(spec.n_modalities());
    for (renderer, &present) in spec.modalities.iter().zip(presence) {
        let mut plane: Vec<f64> = label.iter().map(|&c| renderer.value(c)).collect();
        if renderer.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, renderer.noise_sigma)
                .map_err(|e| Error::InvalidScene(e.to_string()))?;
            plane.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
        if present {
            standardize(&mut plane);
            images.push(plane.into_iter().map(|v| v as f32).collect());
        } else {
            images.push(vec![0.0f32; h * w]);
        }
    }
    Ok(ModalitySample {
        sample_id: sample_id.into(),
        height: h,
        width: w,
        images,
        label,
        presence: presence.to_vec(),
    })
}
