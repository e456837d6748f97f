//! Binary masks, square dilation, connected-component blobs and bilinear
//! plane resampling.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Pixels strictly above `threshold`.
    pub fn from_threshold(values: &[f64], width: usize, height: usize, threshold: f64) -> Result<Self> {
        Self::new(width, height, values.iter().map(|&v| v > threshold).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Binary dilation with an `s x s` square element centred on each pixel and
/// clipped at the borders. `s` must be odd.
pub fn dilate(mask: &BinaryMask, s: usize) -> Result<BinaryMask> {
    if s == 0 || s % 2 == 0 {
        return Err(Error::param(format!(
            "structuring element size must be odd and positive, got {s}"
        )));
    }
    if s == 1 {
        return Ok(mask.clone());
    }
    let r = s / 2;
    let (w, h) = (mask.width, mask.height);
    // The square element is separable: a horizontal then a vertical pass.
    let mut horiz = vec![false; w * h];
    let mut prefix = vec![0usize; w.max(h) + 1];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            horiz[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horiz[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    Ok(BinaryMask {
        width: w,
        height: h,
        bits: out,
    })
}

/// A labelled 8-connected component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blob {
    pub bbox: BBox,
    pub pixels: usize,
}

/// Tight boxes of the 8-connected components holding at least `min_area`
/// pixels, largest first; ties ordered by `(y0, x0)`.
pub fn blobs(mask: &BinaryMask, min_area: usize) -> Vec<BBox> {
    labelled_blobs(mask, min_area)
        .into_iter()
        .map(|b| b.bbox)
        .collect()
}

pub fn labelled_blobs(mask: &BinaryMask, min_area: usize) -> Vec<Blob> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut found = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut pixels = 0;
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            pixels += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let n = ny * w + nx;
                    if mask.bits[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if pixels >= min_area.max(1) {
            let bbox = BBox::new(x0 as u32, y0 as u32, x1 as u32 + 1, y1 as u32 + 1)
                .expect("component box is non-empty");
            found.push(Blob { bbox, pixels });
        }
    }
    found.sort_by(|a, b| {
        b.pixels
            .cmp(&a.pixels)
            .then(a.bbox.y0().cmp(&b.bbox.y0()))
            .then(a.bbox.x0().cmp(&b.bbox.x0()))
    });
    found
}

/// Corner-aligned bilinear resampling of a 2-D tensor to `out_h x out_w`.
pub fn resize_bilinear(t: &Tensor, out_w: usize, out_h: usize) -> Result<Tensor> {
    let (h, w) = t.plane_dims()?;
    if out_w == 0 || out_h == 0 {
        return Err(Error::param(format!("target size {out_w}x{out_h}")));
    }
    let src: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    let out = resize_plane(&src, w, h, out_w, out_h);
    Tensor::new(vec![out_h, out_w], out.into_iter().map(|v| v as f32).collect())
}

/// `f64` plane resampling shared by the tensor wrapper and the localization
/// pipeline. Output pixel `i` samples source coordinate `i * (n_in - 1) /
/// (n_out - 1)`, so the corner pixels coincide.
pub(crate) fn resize_plane(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if w == out_w && h == out_h {
        return src.to_vec();
    }
    let xs = axis_samples(w, out_w);
    let ys = axis_samples(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

fn axis_samples(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_with(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for &(x, y) in on {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn dilate_single_pixel() {
        let m = mask_with(10, 10, &[(5, 5)]);
        let d = dilate(&m, 3).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let inside = (4..=6).contains(&x) && (4..=6).contains(&y);
                assert_eq!(d.get(x, y), inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn dilate_clips_at_border() {
        let m = mask_with(6, 4, &[(0, 0), (2, 0)]);
        let d = dilate(&m, 3).unwrap();
        // Union of clipped 3x3 blocks: rows 0-1, cols 0-3.
        assert_eq!(d.count(), 8);
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(d.get(x, y), y <= 1 && x <= 3);
            }
        }
    }

    #[test]
    fn dilate_parameters() {
        let m = mask_with(4, 4, &[(1, 1)]);
        assert_eq!(dilate(&m, 1).unwrap(), m);
        assert!(dilate(&m, 0).is_err());
        assert!(dilate(&m, 4).is_err());
        let empty = BinaryMask::empty(8, 8);
        assert_eq!(dilate(&empty, 5).unwrap(), empty);
    }

    #[test]
    fn blob_examples() {
        assert!(blobs(&BinaryMask::empty(5, 5), 1).is_empty());
        let block: Vec<_> = (0..4).flat_map(|y| (0..4).map(move |x| (x, y))).collect();
        assert_eq!(
            blobs(&mask_with(8, 8, &block), 1),
            vec![BBox::new(0, 0, 4, 4).unwrap()]
        );
        assert_eq!(
            blobs(&mask_with(4, 4, &[(0, 0), (1, 1)]), 1),
            vec![BBox::new(0, 0, 2, 2).unwrap()]
        );
    }

    #[test]
    fn blobs_sorted_and_filtered() {
        let m = mask_with(10, 10, &[(8, 8), (0, 5), (1, 5), (5, 0)]);
        let got = blobs(&m, 1);
        assert_eq!(got[0], BBox::new(0, 5, 2, 6).unwrap());
        assert_eq!(got[1], BBox::new(5, 0, 6, 1).unwrap());
        assert_eq!(got[2], BBox::new(8, 8, 9, 9).unwrap());
        assert_eq!(blobs(&m, 2).len(), 1);
    }

    #[test]
    fn resize_examples() {
        let t = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&t, 4, 2).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..2 {
            for (c, e) in expect.iter().enumerate() {
                assert!((r.at2(row, c) as f64 - e).abs() < 1e-6);
            }
        }
        assert_eq!(resize_bilinear(&t, 2, 2).unwrap(), t);
        let c = Tensor::filled(vec![3, 5], 2.5).unwrap();
        let r = resize_bilinear(&c, 11, 7).unwrap();
        assert!(r.data().iter().all(|&v| v == 2.5));
        assert!(resize_bilinear(&t, 0, 3).is_err());
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.3), w * h)
                .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dilate_extensive_and_monotone(m in arb_mask(), k in 0usize..4) {
            let s = 2 * k + 1;
            let a = dilate(&m, s).unwrap();
            let b = dilate(&m, s + 2).unwrap();
            for i in 0..m.bits().len() {
                prop_assert!(!m.bits()[i] || a.bits()[i]);
                prop_assert!(!a.bits()[i] || b.bits()[i]);
            }
        }

        #[test]
        fn blobs_partition_set_pixels(m in arb_mask()) {
            let found = labelled_blobs(&m, 1);
            let total: usize = found.iter().map(|b| b.pixels).sum();
            prop_assert_eq!(total, m.count());
            for blob in &found {
                prop_assert!(blob.pixels as u64 <= blob.bbox.area());
            }
            // every set pixel lies inside some component box
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(x, y) {
                        let covered = found.iter().any(|b| {
                            (b.bbox.x0() as usize..b.bbox.x1() as usize).contains(&x)
                                && (b.bbox.y0() as usize..b.bbox.y1() as usize).contains(&y)
                        });
                        prop_assert!(covered, "pixel ({}, {}) not covered", x, y);
                    }
                }
            }
        }

        #[test]
        fn resize_preserves_bounds(
            vals in proptest::collection::vec(-5.0f32..5.0, 12),
            ow in 1usize..20, oh in 1usize..20,
        ) {
            let t = Tensor::new(vec![3, 4], vals.clone()).unwrap();
            let r = resize_bilinear(&t, ow, oh).unwrap();
            let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            for &v in r.data() {
                prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
            }
        }
    }
}
