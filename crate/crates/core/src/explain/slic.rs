//! SLIC superpixels with a connectivity pass.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_segments: 50,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments < 2 {
            return Err(Error::InvalidArgument("n_segments must be at least 2".into()));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::InvalidArgument("compactness must be positive".into()));
        }
        Ok(())
    }
}

/// Per-pixel segment ids. Ids are `0..n_segments`, every id is used, and
/// every segment is 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    seg_of: Vec<u32>,
    n_segments: usize,
}

impl SegmentMap {
    /// Validates an arbitrary labelling: ids must be contiguous from 0.
    pub fn from_labels(height: usize, width: usize, seg_of: Vec<u32>) -> Result<Self> {
        if seg_of.len() != height * width || seg_of.is_empty() {
            return Err(Error::LengthMismatch {
                what: "segment labels vs pixel count",
                left: seg_of.len(),
                right: height * width,
            });
        }
        let n = *seg_of.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; n];
        for &s in &seg_of {
            seen[s as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&b| !b) {
            return Err(Error::InvalidArgument(format!("segment id {missing} is unused")));
        }
        Ok(Self {
            height,
            width,
            seg_of,
            n_segments: n,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn labels(&self) -> &[u32] {
        &self.seg_of
    }

    #[inline]
    pub fn segment_at(&self, y: usize, x: usize) -> usize {
        self.seg_of[y * self.width + x] as usize
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut a = vec![0; self.n_segments];
        for &s in &self.seg_of {
            a[s as usize] += 1;
        }
        a
    }

    /// True when some 4-neighbour lies in a different segment.
    pub fn is_boundary(&self, y: usize, x: usize) -> bool {
        let s = self.segment_at(y, x);
        (y > 0 && self.segment_at(y - 1, x) != s)
            || (y + 1 < self.height && self.segment_at(y + 1, x) != s)
            || (x > 0 && self.segment_at(y, x - 1) != s)
            || (x + 1 < self.width && self.segment_at(y, x + 1) != s)
    }

    /// Number of 4-connected components of each segment.
    pub fn component_counts(&self) -> Vec<usize> {
        let comp = components(self.height, self.width, &self.seg_of);
        let mut counts = vec![0; self.n_segments];
        for c in &comp.first_pixel {
            counts[self.seg_of[*c] as usize] += 1;
        }
        counts
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIELAB under D65.
pub fn rgb_to_lab(rgb: [f32; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| srgb_to_linear(v.clamp(0.0, 1.0) as f64));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / 0.950_47), lab_f(y), lab_f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

#[inline]
fn dist2_lab(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Partitions `image` into roughly `p.n_segments` compact superpixels.
///
/// Centers start on a regular grid, each nudged to the lowest-gradient pixel
/// of its 3×3 neighbourhood, then `p.iterations` rounds of k-means restricted
/// to a `2S × 2S` window run with distance `d_lab + (compactness / S)·d_xy`.
/// Afterwards, components smaller than a quarter of the nominal area are
/// absorbed into their largest neighbour and ids are renumbered in scan order.
pub fn slic_segment(image: &ImageTensor, p: &SlicParams) -> Result<SegmentMap> {
    p.validate()?;
    let (h, w) = (image.height(), image.width());
    if p.n_segments > h * w {
        return Err(Error::InvalidArgument(format!(
            "{} segments requested for {} pixels",
            p.n_segments,
            h * w
        )));
    }

    let lab: Vec<[f64; 3]> = (0..h * w).map(|i| rgb_to_lab(image.pixel(i / w, i % w))).collect();
    let mut centers = initial_centers(&lab, h, w, p.n_segments);
    let k = centers.len();
    let step = ((h * w) as f64 / k as f64).sqrt();
    let spatial = p.compactness / step;
    let reach = step.ceil() as isize;

    let mut label = vec![u32::MAX; h * w];
    let mut best = vec![f64::INFINITY; h * w];
    for _ in 0..p.iterations.max(1) {
        best.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cy, cx) = (c.y.round() as isize, c.x.round() as isize);
            let y0 = (cy - reach).max(0) as usize;
            let y1 = ((cy + reach) as usize).min(h - 1);
            let x0 = (cx - reach).max(0) as usize;
            let x1 = ((cx + reach) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let dxy = ((y as f64 - c.y).powi(2) + (x as f64 - c.x).powi(2)).sqrt();
                    let d = dist2_lab(&lab[i], &c.lab).sqrt() + spatial * dxy;
                    if d < best[i] {
                        best[i] = d;
                        label[i] = ci as u32;
                    }
                }
            }
        }
        assign_unreached(&lab, w, &centers, spatial, &best, &mut label);
        update_centers(&lab, w, &label, &mut centers);
    }

    Ok(enforce_connectivity(h, w, &label, k))
}

fn initial_centers(lab: &[[f64; 3]], h: usize, w: usize, n: usize) -> Vec<Center> {
    let ny = ((n as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let nx = ((n as f64 / ny as f64).round() as usize).clamp(1, w);
    let (sy, sx) = (h as f64 / ny as f64, w as f64 / nx as f64);

    let grad = |y: usize, x: usize| {
        let at = |yy: usize, xx: usize| &lab[yy * w + xx];
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        dist2_lab(at(y, xr), at(y, xl)) + dist2_lab(at(yd, x), at(yu, x))
    };

    let mut centers = Vec::with_capacity(ny * nx);
    for gy in 0..ny {
        for gx in 0..nx {
            let y = (((gy as f64 + 0.5) * sy) as usize).min(h - 1);
            let x = (((gx as f64 + 0.5) * sx) as usize).min(w - 1);
            let (mut by, mut bx, mut bg) = (y, x, grad(y, x));
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let g = grad(yy, xx);
                    if g < bg {
                        (by, bx, bg) = (yy, xx, g);
                    }
                }
            }
            centers.push(Center {
                lab: lab[by * w + bx],
                y: by as f64,
                x: bx as f64,
            });
        }
    }
    centers
}

/// Pixels outside every search window go to the nearest center overall.
fn assign_unreached(
    lab: &[[f64; 3]],
    w: usize,
    centers: &[Center],
    spatial: f64,
    best: &[f64],
    label: &mut [u32],
) {
    for (i, b) in best.iter().enumerate() {
        if b.is_finite() {
            continue;
        }
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let mut min = f64::INFINITY;
        for (ci, c) in centers.iter().enumerate() {
            let dxy = ((y - c.y).powi(2) + (x - c.x).powi(2)).sqrt();
            let d = dist2_lab(&lab[i], &c.lab).sqrt() + spatial * dxy;
            if d < min {
                min = d;
                label[i] = ci as u32;
            }
        }
    }
}

fn update_centers(lab: &[[f64; 3]], w: usize, label: &[u32], centers: &mut [Center]) {
    let mut acc = vec![[0.0f64; 6]; centers.len()];
    for (i, &l) in label.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += lab[i][0];
        a[1] += lab[i][1];
        a[2] += lab[i][2];
        a[3] += (i / w) as f64;
        a[4] += (i % w) as f64;
        a[5] += 1.0;
    }
    for (c, a) in centers.iter_mut().zip(&acc) {
        if a[5] > 0.0 {
            c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
            c.y = a[3] / a[5];
            c.x = a[4] / a[5];
        }
    }
}

struct Components {
    comp_of: Vec<u32>,
    first_pixel: Vec<usize>,
    size: Vec<usize>,
}

fn components(h: usize, w: usize, label: &[u32]) -> Components {
    let mut comp_of = vec![u32::MAX; h * w];
    let mut first_pixel = Vec::new();
    let mut size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if comp_of[start] != u32::MAX {
            continue;
        }
        let id = first_pixel.len() as u32;
        first_pixel.push(start);
        comp_of[start] = id;
        queue.push_back(start);
        let mut n = 0;
        while let Some(i) = queue.pop_front() {
            n += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp_of[j] == u32::MAX && label[j] == label[i] {
                    comp_of[j] = id;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        size.push(n);
    }
    Components {
        comp_of,
        first_pixel,
        size,
    }
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

fn enforce_connectivity(h: usize, w: usize, label: &[u32], k: usize) -> SegmentMap {
    let comps = components(h, w, label);
    let nc = comps.size.len();
    let min_size = (h * w) / (4 * k);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (i, &c) in comps.comp_of.iter().enumerate() {
        members[c as usize].push(i);
    }
    let mut parent: Vec<usize> = (0..nc).collect();
    let mut size = comps.size.clone();

    for c in 0..nc {
        if comps.size[c] >= min_size {
            continue;
        }
        let root = find(&mut parent, c);
        if size[root] >= min_size {
            continue;
        }
        let mut target: Option<usize> = None;
        for &i in &members[c] {
            let (y, x) = (i / w, i % w);
            let mut neighbours = [None; 4];
            if y > 0 {
                neighbours[0] = Some(i - w);
            }
            if y + 1 < h {
                neighbours[1] = Some(i + w);
            }
            if x > 0 {
                neighbours[2] = Some(i - 1);
            }
            if x + 1 < w {
                neighbours[3] = Some(i + 1);
            }
            for j in neighbours.into_iter().flatten() {
                let r = find(&mut parent, comps.comp_of[j] as usize);
                if r == root {
                    continue;
                }
                let better = match target {
                    None => true,
                    Some(t) => size[r] > size[t] || (size[r] == size[t] && r < t),
                };
                if better {
                    target = Some(r);
                }
            }
        }
        if let Some(t) = target {
            parent[root] = t;
            size[t] += size[root];
        }
    }

    let mut new_id = vec![u32::MAX; nc];
    let mut next = 0u32;
    let mut seg_of = Vec::with_capacity(h * w);
    for &c in &comps.comp_of {
        let r = find(&mut parent, c as usize);
        if new_id[r] == u32::MAX {
            new_id[r] = next;
            next += 1;
        }
        seg_of.push(new_id[r]);
    }
    SegmentMap {
        height: h,
        width: w,
        seg_of,
        n_segments: next as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_reference_colors() {
        let white = rgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        assert_eq!(rgb_to_lab([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        // sRGB red is L*=53.24, a*=80.09, b*=67.20 under D65.
        let red = rgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.02);
        assert!((red[1] - 80.09).abs() < 0.05);
        assert!((red[2] - 67.20).abs() < 0.05);
    }

    #[test]
    fn uniform_image_gives_equal_quadrants() {
        let img = ImageTensor::filled(299, 299, 0.6);
        let seg = slic_segment(
            &img,
            &SlicParams {
                n_segments: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seg.n_segments(), 4);
        let ideal = 299.0 * 299.0 / 4.0;
        for a in seg.areas() {
            assert!((a as f64 - ideal).abs() / ideal <= 0.05, "area {a}");
        }
        // Grid layout: one segment per quadrant corner.
        let corners = [
            seg.segment_at(0, 0),
            seg.segment_at(0, 298),
            seg.segment_at(298, 0),
            seg.segment_at(298, 298),
        ];
        let mut sorted = corners.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn two_tone_boundary_follows_color_edge() {
        let edge = 120;
        let img = ImageTensor::from_fn(299, 299, |_, x| if x < edge { [0.9, 0.2, 0.2] } else { [0.1, 0.3, 0.8] });
        let seg = slic_segment(
            &img,
            &SlicParams {
                n_segments: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seg.n_segments(), 2);
        for y in 0..299 {
            let col = (1..299)
                .find(|&x| seg.segment_at(y, x) != seg.segment_at(y, 0))
                .expect("row crosses the boundary");
            assert!((col as i64 - edge as i64).abs() <= 2, "row {y} splits at {col}");
        }
    }

    #[test]
    fn ids_are_contiguous_and_connected() {
        let img = ImageTensor::from_fn(299, 299, |y, x| {
            let v = ((x * 7 + y * 13) % 97) as f32 / 96.0;
            [v, ((x / 30 + y / 40) % 2) as f32, 1.0 - v]
        });
        let seg = slic_segment(&img, &SlicParams::default()).unwrap();
        assert!(seg.areas().iter().all(|&a| a > 0));
        assert!(seg.component_counts().iter().all(|&c| c == 1));
        assert!(seg.labels().iter().all(|&l| (l as usize) < seg.n_segments()));
        let again = slic_segment(&img, &SlicParams::default()).unwrap();
        assert_eq!(seg, again);
    }

    #[test]
    fn too_many_segments() {
        let img = ImageTensor::filled(3, 3, 0.0);
        let p = SlicParams {
            n_segments: 10,
            ..Default::default()
        };
        assert!(slic_segment(&img, &p).is_err());
    }

    #[test]
    fn small_non_square_image() {
        let img = ImageTensor::from_fn(5, 40, |_, x| [x as f32 / 40.0, 0.5, 0.5]);
        let seg = slic_segment(
            &img,
            &SlicParams {
                n_segments: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(seg.component_counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn from_labels_rejects_gaps() {
        assert!(SegmentMap::from_labels(1, 3, vec![0, 2, 2]).is_err());
        assert_eq!(SegmentMap::from_labels(1, 3, vec![0, 1, 1]).unwrap().n_segments(), 2);
    }
}
