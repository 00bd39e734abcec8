//! Seeded augmentation pipeline: random flips, a threshold-gated transpose,
//! photometric jitter, and crop-and-resize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::{ImageTensor, MODEL_SIDE};

/// A uniform draw strictly above this value transposes the image.
pub const TRANSPOSE_THRESHOLD: f64 = 0.75;

/// Rec. 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_flip_v: f64,
    pub p_flip_h: f64,
    /// When false the transpose draw is still consumed but never applied.
    pub transpose: bool,
    pub brightness_delta: (f64, f64),
    pub saturation_factor: (f64, f64),
    pub contrast_factor: (f64, f64),
    pub crop_fraction: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_flip_v: 0.5,
            p_flip_h: 0.5,
            transpose: true,
            brightness_delta: (-0.1, 0.1),
            saturation_factor: (0.8, 1.2),
            contrast_factor: (0.8, 1.2),
            crop_fraction: (0.8, 1.0),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration whose every step is the identity.
    pub fn neutral(seed: u64) -> Self {
        Self {
            p_flip_v: 0.0,
            p_flip_h: 0.0,
            transpose: false,
            brightness_delta: (0.0, 0.0),
            saturation_factor: (1.0, 1.0),
            contrast_factor: (1.0, 1.0),
            crop_fraction: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_flip_v", self.p_flip_v), ("p_flip_h", self.p_flip_h)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} not in [0,1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("brightness_delta", self.brightness_delta),
            ("saturation_factor", self.saturation_factor),
            ("contrast_factor", self.contrast_factor),
            ("crop_fraction", self.crop_fraction),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} range [{lo}, {hi}] is empty"
                )));
            }
        }
        if self.saturation_factor.0 < 0.0 || self.contrast_factor.0 < 0.0 {
            return Err(Error::InvalidArgument(
                "saturation and contrast factors must be non-negative".into(),
            ));
        }
        let (clo, chi) = self.crop_fraction;
        if clo <= 0.0 || chi > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "crop_fraction [{clo}, {chi}] must lie in (0, 1]"
            )));
        }
        Ok(())
    }
}

pub fn flip_vertical(t: &ImageTensor) -> ImageTensor {
    let (h, w) = (t.height(), t.width());
    let row = w * 3;
    let mut data = Vec::with_capacity(t.data().len());
    for y in (0..h).rev() {
        data.extend_from_slice(&t.data()[y * row..(y + 1) * row]);
    }
    ImageTensor::new(h, w, data).expect("shape preserved")
}

pub fn flip_horizontal(t: &ImageTensor) -> ImageTensor {
    let (h, w) = (t.height(), t.width());
    ImageTensor::from_fn(h, w, |y, x| t.pixel(y, w - 1 - x))
}

pub fn transpose(t: &ImageTensor) -> ImageTensor {
    ImageTensor::from_fn(t.width(), t.height(), |i, j| t.pixel(j, i))
}

/// Swaps the spatial axes when `u` exceeds [`TRANSPOSE_THRESHOLD`].
pub fn transpose_gate(t: &ImageTensor, u: f64) -> ImageTensor {
    if u > TRANSPOSE_THRESHOLD {
        transpose(t)
    } else {
        t.clone()
    }
}

/// Brightness shift, then saturation around per-pixel luma, then contrast
/// around the per-channel image mean, then a clamp to `[0,1]`. Steps with
/// neutral parameters are skipped so the identity is exact.
pub fn photometric(t: &ImageTensor, brightness: f64, saturation: f64, contrast: f64) -> ImageTensor {
    let mut out = t.clone();
    let data = out.data_mut();

    if brightness != 0.0 {
        let d = brightness as f32;
        data.iter_mut().for_each(|v| *v += d);
    }
    if saturation != 1.0 {
        let s = saturation as f32;
        for px in data.chunks_exact_mut(3) {
            let gray = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
            px.iter_mut().for_each(|v| *v = gray + s * (*v - gray));
        }
    }
    if contrast != 1.0 {
        let mut mean = [0.0f64; 3];
        for px in data.chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c] as f64;
            }
        }
        let n = (data.len() / 3) as f64;
        let mean = mean.map(|m| (m / n) as f32);
        let k = contrast as f32;
        for px in data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = mean[c] + k * (px[c] - mean[c]);
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Extracts the window at fractional offset (`top`, `left`) whose sides are
/// `size` times the image sides, then resamples it to 299×299.
pub fn crop_resize(t: &ImageTensor, top: f64, left: f64, size: f64) -> Result<ImageTensor> {
    const EPS: f64 = 1e-9;
    if !(size > 0.0 && size <= 1.0 + EPS)
        || top < 0.0
        || left < 0.0
        || top + size > 1.0 + EPS
        || left + size > 1.0 + EPS
    {
        return Err(Error::InvalidArgument(format!(
            "crop window (top={top}, left={left}, size={size}) outside image"
        )));
    }
    let (h, w) = (t.height(), t.width());
    let wh = ((size * h as f64).round() as usize).clamp(1, h);
    let ww = ((size * w as f64).round() as usize).clamp(1, w);
    let y0 = ((top * h as f64).round() as usize).min(h - wh);
    let x0 = ((left * w as f64).round() as usize).min(w - ww);
    Ok(t.window(y0, x0, wh, ww)?.resize_bilinear(MODEL_SIDE, MODEL_SIDE))
}

/// One pipeline draw. Consumes exactly nine uniforms from `rng`, in order:
/// vertical flip, horizontal flip, transpose gate, brightness, saturation,
/// contrast, crop size, crop top, crop left.
pub fn augment_sample(t: &ImageTensor, rng: &mut RandomStream, cfg: &AugmentConfig) -> ImageTensor {
    let flip_v = rng.bernoulli(cfg.p_flip_v);
    let flip_h = rng.bernoulli(cfg.p_flip_h);
    let u = rng.uniform();
    let brightness = rng.uniform_in(cfg.brightness_delta.0, cfg.brightness_delta.1);
    let saturation = rng.uniform_in(cfg.saturation_factor.0, cfg.saturation_factor.1);
    let contrast = rng.uniform_in(cfg.contrast_factor.0, cfg.contrast_factor.1);
    let size = rng.uniform_in(cfg.crop_fraction.0, cfg.crop_fraction.1);
    let top = rng.uniform_in(0.0, 1.0 - size);
    let left = rng.uniform_in(0.0, 1.0 - size);

    let mut out = if flip_v { flip_vertical(t) } else { t.clone() };
    if flip_h {
        out = flip_horizontal(&out);
    }
    if cfg.transpose {
        out = transpose_gate(&out, u);
    }
    out = photometric(&out, brightness, saturation, contrast);
    crop_resize(&out, top, left, size).expect("drawn crop window lies within bounds")
}

/// Augments item `index` of a dataset from its own substream, so results do
/// not depend on processing order.
pub fn augment_indexed(t: &ImageTensor, index: u64, cfg: &AugmentConfig) -> ImageTensor {
    let mut rng = RandomStream::substream(cfg.seed, index);
    augment_sample(t, &mut rng, cfg)
}
