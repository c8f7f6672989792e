//! Histogram-of-oriented-gradients descriptors of segment patches.

use serde::{Deserialize, Serialize};

use crate::raster::{BBox, GrayImage};

/// Side of the canonical descriptor patch.
pub const PATCH_SIZE: usize = 48;
pub const BINS: usize = 9;
pub const BLOCKS: usize = 9;
pub const HOG_LEN: usize = BINS * BLOCKS;

const BLOCK_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HogError {
    #[error("degenerate bounding box {0}x{1}")]
    Degenerate(u32, u32),
    #[error("bounding box outside image")]
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogParams {
    /// Use 24×24 blocks at stride 12 instead of disjoint 16×16 blocks.
    pub overlapping_blocks: bool,
}

/// 3×3 blocks × 9 unsigned orientation bins, each block unit-norm or zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogDescriptor(pub [f64; HOG_LEN]);

impl HogDescriptor {
    pub const ZERO: HogDescriptor = HogDescriptor([0.0; HOG_LEN]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.0[i * BINS..(i + 1) * BINS]
    }

    /// Copies up to `HOG_LEN` values; missing components stay zero.
    pub fn from_slice(values: &[f64]) -> HogDescriptor {
        let mut d = [0.0; HOG_LEN];
        for (o, v) in d.iter_mut().zip(values) {
            *o = *v;
        }
        HogDescriptor(d)
    }
}

/// Crops `bbox`, stretches it to a square on its longest side, then
/// resamples to the canonical patch size.
pub fn extract_patch(gray: &GrayImage, bbox: &BBox) -> Result<GrayImage, HogError> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(HogError::Degenerate(bbox.w, bbox.h));
    }
    if bbox.x0 < 0 || bbox.y0 < 0 || bbox.x1() as usize > gray.width() || bbox.y1() as usize > gray.height() {
        return Err(HogError::OutOfBounds);
    }
    let side = bbox.w.max(bbox.h) as usize;
    let square = gray.crop(bbox).resize_bilinear(side, side);
    Ok(square.resize_bilinear(PATCH_SIZE, PATCH_SIZE))
}

/// Descriptor of a square patch (normally `PATCH_SIZE` wide).
pub fn hog_descriptor(patch: &GrayImage, params: &HogParams) -> HogDescriptor {
    let (w, h) = (patch.width(), patch.height());
    let (block, stride) = if params.overlapping_blocks { (w / 2, w / 4) } else { (w / 3, w / 3) };
    let mut hist = [0.0; HOG_LEN];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = (patch.get_clamped(xi + 1, yi) - patch.get_clamped(xi - 1, yi)) * 0.5;
            let gy = (patch.get_clamped(xi, yi + 1) - patch.get_clamped(xi, yi - 1)) * 0.5;
            let mag = libm::sqrt(gx * gx + gy * gy);
            if mag == 0.0 {
                continue;
            }
            let mut deg = libm::atan2(gy, gx).to_degrees();
            deg = libm::fmod(deg, 180.0);
            if deg < 0.0 {
                deg += 180.0;
            }
            let pos = deg / (180.0 / BINS as f64);
            let lo = libm::floor(pos);
            let frac = pos - lo;
            let b0 = (lo as usize) % BINS;
            let b1 = (b0 + 1) % BINS;
            for by in 0..3 {
                let oy = by * stride;
                if y < oy || y >= oy + block {
                    continue;
                }
                for bx in 0..3 {
                    let ox = bx * stride;
                    if x < ox || x >= ox + block {
                        continue;
                    }
                    let base = (by * 3 + bx) * BINS;
                    hist[base + b0] += mag * (1.0 - frac);
                    hist[base + b1] += mag * frac;
                }
            }
        }
    }
    for b in hist.chunks_mut(BINS) {
        let norm = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>());
        if norm < BLOCK_NORM_EPS {
            b.iter_mut().for_each(|v| *v = 0.0);
        } else {
            b.iter_mut().for_each(|v| *v /= norm);
        }
    }
    HogDescriptor(hist)
}

/// a·b / (‖a‖‖b‖), or 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "descriptor length mismatch");
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (libm::sqrt(aa) * libm::sqrt(bb))).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn textured(seed: u32) -> GrayImage {
        GrayImage::from_fn(PATCH_SIZE, PATCH_SIZE, |x, y| {
            let v = libm::sin(x as f64 * 0.37 + seed as f64) * libm::sin(y as f64 * 0.21 * (1 + seed % 3) as f64);
            0.4 + 0.25 * v
        })
    }

    #[test]
    fn identity_size_patch_is_the_crop() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * 3) % 17) as f64 / 16.0);
        let b = BBox::new(5, 9, 48, 48);
        assert_eq!(extract_patch(&img, &b).unwrap(), img.crop(&b));
    }

    #[test]
    fn rectangular_patch_becomes_canonical_square() {
        let img = GrayImage::from_fn(64, 64, |x, _| x as f64 / 63.0);
        let p = extract_patch(&img, &BBox::new(3, 3, 10, 20)).unwrap();
        assert_eq!((p.width(), p.height()), (PATCH_SIZE, PATCH_SIZE));
    }

    #[test]
    fn degenerate_and_outside_boxes_fail() {
        let img = GrayImage::filled(32, 32, 0.5);
        assert_eq!(extract_patch(&img, &BBox::new(0, 0, 1, 0)), Err(HogError::Degenerate(1, 0)));
        assert_eq!(extract_patch(&img, &BBox::new(30, 0, 4, 4)), Err(HogError::OutOfBounds));
    }

    #[test]
    fn uniform_patch_is_zero() {
        let d = hog_descriptor(&GrayImage::filled(48, 48, 0.3), &HogParams::default());
        assert_eq!(d, HogDescriptor::ZERO);
    }

    #[test]
    fn vertical_edge_fills_bin_zero() {
        // edge at x = 20 lies inside the middle block column
        let p = GrayImage::from_fn(48, 48, |x, _| if x < 20 { 0.1 } else { 0.9 });
        let d = hog_descriptor(&p, &HogParams::default());
        for i in 0..BLOCKS {
            let b = d.block(i);
            if i % 3 == 1 {
                assert!((b[0] - 1.0).abs() < 1e-12, "{b:?}");
                assert!(b[1..].iter().all(|&v| v.abs() < 1e-12));
            } else {
                assert!(b.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn blocks_are_unit_or_zero() {
        for params in [HogParams::default(), HogParams { overlapping_blocks: true }] {
            let d = hog_descriptor(&textured(2), &params);
            for i in 0..BLOCKS {
                let n: f64 = d.block(i).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-9 || n == 0.0);
            }
            assert!(d.0.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn cosine_examples() {
        let a = hog_descriptor(&textured(1), &HogParams::default());
        assert!((cosine_similarity(&a.0, &a.0) - 1.0).abs() < 1e-12);
        let twice: alloc::vec::Vec<f64> = a.0.iter().map(|v| v * 2.0).collect();
        assert!((cosine_similarity(&a.0, &twice) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    proptest! {
        #[test]
        fn photometric_invariances(seed in 0u32..50, offset in -0.14f64..0.3, gain in 0.5f64..1.5) {
            let base = textured(seed);
            let d = hog_descriptor(&base, &HogParams::default());
            let neg = GrayImage::from_fn(48, 48, |x, y| 1.0 - base.get(x, y));
            let shifted = GrayImage::from_fn(48, 48, |x, y| base.get(x, y) + offset);
            let scaled = GrayImage::from_fn(48, 48, |x, y| base.get(x, y) * gain * 0.5);
            let scaled2 = GrayImage::from_fn(48, 48, |x, y| base.get(x, y) * gain);
            for other in [neg, shifted] {
                let e = hog_descriptor(&other, &HogParams::default());
                for k in 0..HOG_LEN {
                    prop_assert!((d.0[k] - e.0[k]).abs() < 1e-6);
                }
            }
            let (s1, s2) = (hog_descriptor(&scaled, &HogParams::default()), hog_descriptor(&scaled2, &HogParams::default()));
            for k in 0..HOG_LEN {
                prop_assert!((s1.0[k] - s2.0[k]).abs() < 1e-6);
            }
        }

        #[test]
        fn similarity_of_descriptors_in_unit_interval(a in 0u32..30, b in 0u32..30) {
            let s = cosine_similarity(&hog_descriptor(&textured(a), &HogParams::default()).0, &hog_descriptor(&textured(b), &HogParams::default()).0);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
