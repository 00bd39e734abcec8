//! Overlay renderings of a segmentation and an explanation, plus PNG output.

use std::collections::HashMap;
use std::path::Path;

use super::slic::SegmentMap;
use super::Explanation;
use crate::augment::LUMA;
use crate::error::{Error, Result};
use crate::rng::splitmix64;
use crate::tensor::{ImageTensor, CHANNELS};

pub const DEFAULT_TOP_K: usize = 5;
const SEGMENT_OPACITY: f32 = 0.4;
const HEATMAP_MAX_OPACITY: f64 = 0.5;
const BOUNDARY_COLOR: [f32; 3] = [1.0, 1.0, 0.0];
const POSITIVE_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
const NEGATIVE_COLOR: [f32; 3] = [0.0, 1.0, 0.0];

fn check_dims(image: &ImageTensor, seg: &SegmentMap) -> Result<()> {
    if (image.height(), image.width()) != (seg.height(), seg.width()) {
        return Err(Error::InvalidArgument(format!(
            "image is {}x{} but segment map is {}x{}",
            image.height(),
            image.width(),
            seg.height(),
            seg.width()
        )));
    }
    Ok(())
}

/// Deterministic color for a segment id.
pub fn segment_color(id: usize) -> [f32; 3] {
    let h = splitmix64(id as u64);
    [0, 8, 16].map(|shift| ((h >> shift) & 0xff) as f32 / 255.0)
}

fn blend(px: &mut [f32], color: [f32; 3], a: f32) {
    for c in 0..CHANNELS {
        px[c] = (1.0 - a) * px[c] + a * color[c];
    }
}

pub fn render_segments(image: &ImageTensor, seg: &SegmentMap) -> Result<ImageTensor> {
    check_dims(image, seg)?;
    let mut out = image.clone();
    for (px, &s) in out.data_mut().chunks_exact_mut(CHANNELS).zip(seg.labels()) {
        blend(px, segment_color(s as usize), SEGMENT_OPACITY);
    }
    Ok(out)
}

/// Paints every pixel with a 4-neighbour in another segment yellow.
pub fn render_boundaries(image: &ImageTensor, seg: &SegmentMap) -> Result<ImageTensor> {
    check_dims(image, seg)?;
    let mut out = image.clone();
    for y in 0..seg.height() {
        for x in 0..seg.width() {
            if seg.is_boundary(y, x) {
                for (c, v) in BOUNDARY_COLOR.iter().enumerate() {
                    out.set(y, x, c, *v);
                }
            }
        }
    }
    Ok(out)
}

/// Tints the `top_k` strongest positive segments red and the `top_k`
/// strongest negative ones green, with opacity `0.5·|c|/max|c|` over the
/// tinted set. With `positive_only`, every pixel outside the positive set is
/// rendered in grayscale.
pub fn render_heatmap(
    image: &ImageTensor,
    seg: &SegmentMap,
    expl: &Explanation,
    positive_only: bool,
    top_k: usize,
) -> Result<ImageTensor> {
    check_dims(image, seg)?;
    if expl.n_segments != seg.n_segments() {
        return Err(Error::LengthMismatch {
            what: "explanation vs segment map segments",
            left: expl.n_segments,
            right: seg.n_segments(),
        });
    }
    let positive: Vec<_> = expl
        .segment_weights
        .iter()
        .filter(|w| w.weight > 0.0)
        .take(top_k)
        .collect();
    let negative: Vec<_> = expl
        .segment_weights
        .iter()
        .rev()
        .filter(|w| w.weight < 0.0)
        .take(top_k)
        .collect();
    let max = positive
        .iter()
        .chain(&negative)
        .map(|w| w.weight.abs())
        .fold(0.0f64, f64::max);

    let mut tint: HashMap<usize, ([f32; 3], f32, bool)> = HashMap::new();
    for w in &positive {
        let a = (HEATMAP_MAX_OPACITY * w.weight / max) as f32;
        tint.insert(w.segment, (POSITIVE_COLOR, a, true));
    }
    for w in &negative {
        let a = (HEATMAP_MAX_OPACITY * w.weight.abs() / max) as f32;
        tint.insert(w.segment, (NEGATIVE_COLOR, a, false));
    }

    let mut out = image.clone();
    for (px, &s) in out.data_mut().chunks_exact_mut(CHANNELS).zip(seg.labels()) {
        let t = tint.get(&(s as usize));
        if let Some(&(color, a, _)) = t {
            blend(px, color, a);
        }
        if positive_only && !matches!(t, Some(&(_, _, true))) {
            let g = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
            px.fill(g.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Encodes as 8-bit RGB PNG with `tEXt` chunks for `metadata`.
pub fn encode_png(image: &ImageTensor, metadata: &[(&str, String)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in metadata {
            enc.add_text_chunk(k.to_string(), v.clone())?;
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(&image.to_rgb8())?;
        writer.finish()?;
    }
    Ok(buf)
}

pub fn write_png(path: &Path, image: &ImageTensor, metadata: &[(&str, String)]) -> Result<()> {
    let bytes = encode_png(image, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
