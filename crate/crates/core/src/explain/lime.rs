use super::slic::SegmentMap;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::{ImageTensor, CHANNELS};

pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;

/// Row-major binary matrix, one row per perturbation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "mask data vs rows*cols",
                left: data.len(),
                right: rows * cols,
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged mask rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }
}

/// Row 0 keeps every segment; rows `1..n` switch each segment on with
/// probability 1/2, drawn row-major from `rng`.
pub fn sample_masks(s: usize, n: usize, rng: &mut RandomStream) -> Result<MaskMatrix> {
    if n < 2 || s < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples and 1 segment, got n={n}, S={s}"
        )));
    }
    let mut data = vec![1u8; s];
    data.reserve(s * (n - 1));
    for _ in s..s * n {
        data.push(rng.bernoulli(0.5) as u8);
    }
    MaskMatrix::new(n, s, data)
}

/// Mean color of every segment, accumulated in f64.
pub fn segment_means(image: &ImageTensor, seg: &SegmentMap) -> Result<Vec<[f32; 3]>> {
    if (image.height(), image.width()) != (seg.height(), seg.width()) {
        return Err(Error::InvalidArgument(format!(
            "image is {}x{} but segment map is {}x{}",
            image.height(),
            image.width(),
            seg.height(),
            seg.width()
        )));
    }
    let mut sums = vec![[0.0f64; 3]; seg.n_segments()];
    for (px, &s) in image.data().chunks_exact(CHANNELS).zip(seg.labels()) {
        let acc = &mut sums[s as usize];
        for c in 0..CHANNELS {
            acc[c] += px[c] as f64;
        }
    }
    Ok(sums
        .iter()
        .zip(seg.areas())
        .map(|(s, a)| s.map(|v| (v / a as f64) as f32))
        .collect())
}

/// Builds perturbed copies of one image; segment means are computed once.
#[derive(Debug, Clone)]
pub struct Perturber<'a> {
    image: &'a ImageTensor,
    seg: &'a SegmentMap,
    means: Vec<[f32; 3]>,
}

impl<'a> Perturber<'a> {
    pub fn new(image: &'a ImageTensor, seg: &'a SegmentMap) -> Result<Self> {
        Ok(Self {
            means: segment_means(image, seg)?,
            image,
            seg,
        })
    }

    pub fn means(&self) -> &[[f32; 3]] {
        &self.means
    }

    pub fn apply(&self, mask: &[u8]) -> Result<ImageTensor> {
        if mask.len() != self.seg.n_segments() {
            return Err(Error::LengthMismatch {
                what: "mask vs segment count",
                left: mask.len(),
                right: self.seg.n_segments(),
            });
        }
        let mut out = self.image.clone();
        for (px, &s) in out.data_mut().chunks_exact_mut(CHANNELS).zip(self.seg.labels()) {
            if mask[s as usize] == 0 {
                px.copy_from_slice(&self.means[s as usize]);
            }
        }
        Ok(out)
    }
}

/// Keeps segments whose mask entry is 1 and paints the rest with their mean color.
pub fn perturb(image: &ImageTensor, seg: &SegmentMap, mask: &[u8]) -> Result<ImageTensor> {
    Perturber::new(image, seg)?.apply(mask)
}

/// `exp(-d²/σ²)` where `d` is the cosine distance from each row to the
/// all-ones row. For a binary row with `m` ones out of `S` the cosine is
/// `sqrt(m/S)`; an all-zero row is taken to be at distance 1.
pub fn kernel_weights(masks: &MaskMatrix, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument("kernel width must be positive".into()));
    }
    let s = masks.cols() as f64;
    Ok((0..masks.rows())
        .map(|i| {
            let ones = masks.row(i).iter().filter(|&&v| v == 1).count() as f64;
            let d = if ones == 0.0 { 1.0 } else { 1.0 - (ones / s).sqrt() };
            (-(d * d) / (sigma * sigma)).exp()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tone() -> (ImageTensor, SegmentMap) {
        let img = ImageTensor::from_fn(4, 6, |_, x| if x < 3 { [0.8, 0.1, 0.3] } else { [0.2, 0.6, 0.9] });
        let labels = (0..24).map(|i| (i % 6 >= 3) as u32).collect();
        (img, SegmentMap::from_labels(4, 6, labels).unwrap())
    }

    #[test]
    fn first_row_is_all_ones_and_seeded() {
        let a = sample_masks(7, 20, &mut RandomStream::new(3)).unwrap();
        assert!(a.row(0).iter().all(|&v| v == 1));
        let b = sample_masks(7, 20, &mut RandomStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(sample_masks(7, 1, &mut RandomStream::new(3)).is_err());
    }

    #[test]
    fn columns_are_fair_coins() {
        let m = sample_masks(10, 10_001, &mut RandomStream::new(11)).unwrap();
        for j in 0..10 {
            let mean = (1..m.rows()).map(|i| m.get(i, j) as f64).sum::<f64>() / 10_000.0;
            assert!((0.47..=0.53).contains(&mean), "column {j}: {mean}");
        }
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let (img, seg) = two_tone();
        assert_eq!(perturb(&img, &seg, &[1, 1]).unwrap(), img);
    }

    #[test]
    fn all_zeros_mask_is_piecewise_mean() {
        let img = ImageTensor::from_fn(2, 2, |y, x| [(y * 2 + x) as f32 / 4.0, 0.0, 1.0]);
        let seg = SegmentMap::from_labels(2, 2, vec![0, 0, 1, 1]).unwrap();
        let out = perturb(&img, &seg, &[0, 0]).unwrap();
        assert_eq!(out.pixel(0, 0), [0.125, 0.0, 1.0]);
        assert_eq!(out.pixel(0, 1), [0.125, 0.0, 1.0]);
        assert_eq!(out.pixel(1, 0), [0.625, 0.0, 1.0]);
    }

    #[test]
    fn switching_off_a_uniform_segment_keeps_its_color() {
        let (img, seg) = two_tone();
        let out = perturb(&img, &seg, &[1, 0]).unwrap();
        assert_eq!(out, img);
        assert!(perturb(&img, &seg, &[1]).is_err());
    }

    #[test]
    fn kernel_closed_form() {
        let m = MaskMatrix::from_rows(&[vec![1; 8], vec![1, 1, 1, 1, 0, 0, 0, 0], vec![0; 8]]).unwrap();
        let w = kernel_weights(&m, DEFAULT_KERNEL_WIDTH).unwrap();
        assert_eq!(w[0], 1.0);
        let d = 1.0 - 1.0 / 2.0_f64.sqrt();
        assert!((d - 0.292893).abs() < 1e-6);
        assert!((w[1] - (-d * d / 0.0625).exp()).abs() < 1e-15);
        assert!((w[1] - 0.25346).abs() < 1e-5);
        assert!((w[2] - (-16.0f64).exp()).abs() < 1e-20);
    }

    #[test]
    fn kernel_decreases_as_segments_drop() {
        let s = 12;
        let rows: Vec<Vec<u8>> = (0..=s).map(|k| (0..s).map(|j| (j >= k) as u8).collect()).collect();
        let w = kernel_weights(&MaskMatrix::from_rows(&rows).unwrap(), 0.25).unwrap();
        assert!(w.windows(2).all(|p| p[1] < p[0]), "{w:?}");
    }
}
