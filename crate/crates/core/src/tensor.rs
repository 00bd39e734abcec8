//! Dense H×W×3 image tensors and bilinear resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the model input grid.
pub const MODEL_SIDE: usize = 299;
pub const CHANNELS: usize = 3;

/// Row-major H×W×3 tensor of `f32` samples, channel-interleaved (RGB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::LengthMismatch {
                what: "tensor data vs height*width*3",
                left: data.len(),
                right: height * width * CHANNELS,
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "tensor dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    /// Builds a tensor by evaluating `f(y, x)` for every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "tensor dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_model_shape(&self) -> bool {
        self.height == MODEL_SIDE && self.width == MODEL_SIDE
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Quantizes to 8-bit RGB, rounding to nearest and clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Bilinear resampling with half-pixel centers and edge clamping.
    ///
    /// Samples are interpolated as `a + (b - a) * t`, so same-size resampling
    /// is the identity and constant images stay exactly constant.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> ImageTensor {
        assert!(out_h > 0 && out_w > 0, "output dimensions must be positive");
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let ys = axis_taps(self.height, out_h);
        let xs = axis_taps(self.width, out_w);
        let mut data = Vec::with_capacity(out_h * out_w * CHANNELS);
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                for c in 0..CHANNELS {
                    let top = lerp(self.get(y0, x0, c), self.get(y0, x1, c), tx);
                    let bottom = lerp(self.get(y1, x0, c), self.get(y1, x1, c), tx);
                    data.push(lerp(top, bottom, ty));
                }
            }
        }
        ImageTensor {
            height: out_h,
            width: out_w,
            data,
        }
    }

    /// Copies out the rectangle `[y0, y0+h) × [x0, x0+w)`.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageTensor> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "window {h}x{w} at ({y0},{x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * CHANNELS);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + w * CHANNELS]);
        }
        Ok(ImageTensor {
            height: h,
            width: w,
            data,
        })
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Source taps `(lo, hi, frac)` for each output coordinate along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}
