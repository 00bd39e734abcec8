//! Uncompressed BMP reader and writer.
//!
//! Reads 24-bit (`BI_RGB`) and 32-bit (`BI_RGB` or `BI_BITFIELDS` with the
//! standard BGRA masks) streams with a `BITMAPINFOHEADER` or any later header
//! version. Bottom-up and top-down row orders are both handled; output is
//! always top-left origin, RGB.

use crate::error::{Error, Result};

const FILE_HEADER_LEN: usize = 14;
const INFO_HEADER_LEN: usize = 40;

const BI_RGB: u32 = 0;
const BI_BITFIELDS: u32 = 3;

/// 8-bit RGB pixel grid, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::LengthMismatch {
                what: "pixel data vs height*width*3",
                left: data.len(),
                right: height * width * 3,
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn err(offset: usize, field: &'static str, reason: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        field,
        reason: reason.into(),
    }
}

fn read_u16(bytes: &[u8], offset: usize, field: &'static str) -> Result<u16> {
    bytes
        .get(offset..offset + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| err(offset, field, "header truncated"))
}

fn read_u32(bytes: &[u8], offset: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| err(offset, field, "header truncated"))
}

fn read_i32(bytes: &[u8], offset: usize, field: &'static str) -> Result<i32> {
    read_u32(bytes, offset, field).map(|v| v as i32)
}

pub fn decode_bmp(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < 2 || &bytes[0..2] != b"BM" {
        return Err(err(0, "signature", "expected \"BM\""));
    }
    let pixel_offset = read_u32(bytes, 10, "pixel_offset")? as usize;
    let dib_size = read_u32(bytes, 14, "dib_header_size")? as usize;
    if dib_size < INFO_HEADER_LEN {
        return Err(err(
            14,
            "dib_header_size",
            format!("unsupported header size {dib_size} (need >= 40)"),
        ));
    }
    let raw_width = read_i32(bytes, 18, "width")?;
    let raw_height = read_i32(bytes, 22, "height")?;
    let planes = read_u16(bytes, 26, "planes")?;
    let bpp = read_u16(bytes, 28, "bits_per_pixel")?;
    let compression = read_u32(bytes, 30, "compression")?;

    if raw_width <= 0 {
        return Err(err(18, "width", format!("non-positive width {raw_width}")));
    }
    if raw_height == 0 || raw_height == i32::MIN {
        return Err(err(22, "height", format!("invalid height {raw_height}")));
    }
    if planes != 1 {
        return Err(err(26, "planes", format!("expected 1, got {planes}")));
    }
    if bpp != 24 && bpp != 32 {
        return Err(err(
            28,
            "bits_per_pixel",
            format!("unsupported bit depth {bpp} (need 24 or 32)"),
        ));
    }
    match (compression, bpp) {
        (BI_RGB, _) => {}
        (BI_BITFIELDS, 32) => check_standard_masks(bytes)?,
        _ => {
            return Err(err(
                30,
                "compression",
                format!("unsupported compression {compression} for {bpp}-bit"),
            ))
        }
    }

    let width = raw_width as usize;
    let top_down = raw_height < 0;
    let height = raw_height.unsigned_abs() as usize;
    let bytes_pp = bpp as usize / 8;
    let stride = (width * bytes_pp).div_ceil(4) * 4;

    if pixel_offset < FILE_HEADER_LEN + dib_size {
        return Err(err(
            10,
            "pixel_offset",
            format!("offset {pixel_offset} overlaps the headers"),
        ));
    }
    let needed = stride
        .checked_mul(height - 1)
        .and_then(|v| v.checked_add(width * bytes_pp))
        .and_then(|v| v.checked_add(pixel_offset))
        .ok_or_else(|| err(18, "width", "image dimensions overflow"))?;
    if bytes.len() < needed {
        return Err(err(
            bytes.len(),
            "pixel_array",
            format!("truncated: need {needed} bytes, have {}", bytes.len()),
        ));
    }

    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let file_row = if top_down { y } else { height - 1 - y };
        let start = pixel_offset + file_row * stride;
        let row = &bytes[start..start + width * bytes_pp];
        for px in row.chunks_exact(bytes_pp) {
            data.extend_from_slice(&[px[2], px[1], px[0]]);
        }
    }
    RawImage::new(height, width, data)
}

fn check_standard_masks(bytes: &[u8]) -> Result<()> {
    // Masks sit inside the header for v2+ headers and directly after it for
    // a plain BITMAPINFOHEADER; both cases start at byte 54.
    let r = read_u32(bytes, 54, "red_mask")?;
    let g = read_u32(bytes, 58, "green_mask")?;
    let b = read_u32(bytes, 62, "blue_mask")?;
    if (r, g, b) != (0x00FF_0000, 0x0000_FF00, 0x0000_00FF) {
        return Err(err(
            54,
            "color_masks",
            format!("non-standard masks r={r:#010x} g={g:#010x} b={b:#010x}"),
        ));
    }
    Ok(())
}

/// Encodes as a bottom-up 24-bit `BI_RGB` BMP with a `BITMAPINFOHEADER`.
pub fn encode_bmp(image: &RawImage) -> Vec<u8> {
    let (w, h) = (image.width, image.height);
    let stride = (w * 3).div_ceil(4) * 4;
    let pixel_offset = FILE_HEADER_LEN + INFO_HEADER_LEN;
    let file_len = pixel_offset + stride * h;

    let mut out = Vec::with_capacity(file_len);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_len as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(pixel_offset as u32).to_le_bytes());

    out.extend_from_slice(&(INFO_HEADER_LEN as u32).to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&BI_RGB.to_le_bytes());
    out.extend_from_slice(&((stride * h) as u32).to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes()); // 72 dpi
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());

    let pad = stride - w * 3;
    for y in (0..h).rev() {
        for x in 0..w {
            let [r, g, b] = image.pixel(y, x);
            out.extend_from_slice(&[b, g, r]);
        }
        out.extend(std::iter::repeat_n(0u8, pad));
    }
    out
}
