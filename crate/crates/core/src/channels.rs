//! Network input: downsampled RGB plus one binary location plane per
//! selected category.

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::{BBox, Frame};

pub const NET_HEIGHT: usize = 48;
pub const NET_WIDTH: usize = 64;
pub const NET_PIXELS: usize = NET_HEIGHT * NET_WIDTH;

/// Planes at network resolution. RGB is kept as bytes (the rounded area
/// average), category planes as 0/1 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationTensor {
    pub rgb: Vec<u8>,
    pub masks: Vec<u8>,
    category_planes: usize,
}

impl ObservationTensor {
    pub fn zeros(category_planes: usize) -> Self {
        ObservationTensor { rgb: vec![0; 3 * NET_PIXELS], masks: vec![0; category_planes * NET_PIXELS], category_planes }
    }

    pub fn planes(&self) -> usize {
        3 + self.category_planes
    }

    pub fn category_planes(&self) -> usize {
        self.category_planes
    }

    pub fn mask_plane(&self, k: usize) -> &[u8] {
        &self.masks[k * NET_PIXELS..(k + 1) * NET_PIXELS]
    }

    /// Plane-major floats: RGB in [0,1], then the category planes.
    pub fn write_f64(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.planes() * NET_PIXELS);
        let (rgb, masks) = out.split_at_mut(3 * NET_PIXELS);
        for (o, &v) in rgb.iter_mut().zip(&self.rgb) {
            *o = v as f64 / 255.0;
        }
        for (o, &v) in masks.iter_mut().zip(&self.masks) {
            *o = v as f64;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.planes() * NET_PIXELS];
        self.write_f64(&mut out);
        out
    }
}

/// Source pixel span of output cell `i` when `src` pixels map onto `dst`.
#[inline]
fn span(i: usize, src: usize, dst: usize) -> (usize, usize) {
    let a = i * src / dst;
    let b = ((i + 1) * src / dst).max(a + 1);
    (a, b.min(src))
}

/// Builds the network input. Each selected category (in ascending order)
/// gets a plane that is 1 over the boxes of its segments, max-pooled to
/// network resolution; unused planes stay zero. `boxes` pairs each segment
/// box with its category.
pub fn encode(frame: &Frame, boxes: &[(BBox, Option<usize>)], selected: &[usize], category_planes: usize) -> ObservationTensor {
    let (w, h) = (frame.width(), frame.height());
    let mut obs = ObservationTensor::zeros(category_planes);
    let px = frame.pixels();
    for oy in 0..NET_HEIGHT {
        let (y0, y1) = span(oy, h, NET_HEIGHT);
        for ox in 0..NET_WIDTH {
            let (x0, x1) = span(ox, w, NET_WIDTH);
            let mut acc = [0u32; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = (y * w + x) * 3;
                    for c in 0..3 {
                        acc[c] += px[i + c] as u32;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as u32;
            for c in 0..3 {
                obs.rgb[c * NET_PIXELS + oy * NET_WIDTH + ox] = ((acc[c] + n / 2) / n) as u8;
            }
        }
    }
    let mut sorted: Vec<usize> = selected.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for (k, &cat) in sorted.iter().take(category_planes).enumerate() {
        let plane = &mut obs.masks[k * NET_PIXELS..(k + 1) * NET_PIXELS];
        for (bbox, _) in boxes.iter().filter(|(_, c)| *c == Some(cat)) {
            let Some(b) = bbox.clamped(w, h) else { continue };
            // output cells whose source span meets the box
            for oy in 0..NET_HEIGHT {
                let (y0, y1) = span(oy, h, NET_HEIGHT);
                if y1 as i32 <= b.y0 || y0 as i32 >= b.y1() {
                    continue;
                }
                for ox in 0..NET_WIDTH {
                    let (x0, x1) = span(ox, w, NET_WIDTH);
                    if (x1 as i32) > b.x0 && (x0 as i32) < b.x1() {
                        plane[oy * NET_WIDTH + ox] = 1;
                    }
                }
            }
        }
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame() -> Frame {
        let px = (0..96 * 128 * 3).map(|i| (i * 7 % 256) as u8).collect();
        Frame::new(128, 96, px).unwrap()
    }

    #[test]
    fn no_segments_gives_zero_planes() {
        let o = encode(&frame(), &[], &[0, 2], 4);
        assert_eq!(o.planes(), 7);
        assert!(o.masks.iter().all(|&v| v == 0));
    }

    #[test]
    fn full_frame_segment_saturates() {
        let o = encode(&frame(), &[(BBox::new(0, 0, 128, 96), Some(3))], &[3], 1);
        assert!(o.mask_plane(0).iter().all(|&v| v == 1));
    }

    #[test]
    fn box_maxpools_to_half_resolution() {
        let o = encode(&frame(), &[(BBox::new(10, 10, 12, 12), Some(1))], &[1], 1);
        for y in 0..NET_HEIGHT {
            for x in 0..NET_WIDTH {
                let inside = (5..11).contains(&x) && (5..11).contains(&y);
                assert_eq!(o.mask_plane(0)[y * NET_WIDTH + x], inside as u8, "({x},{y})");
            }
        }
    }

    #[test]
    fn rgb_is_area_average() {
        let mut f = Frame::filled(128, 96, [0, 0, 0]).unwrap();
        f.set_pixel(0, 0, [255, 100, 0]);
        f.set_pixel(1, 1, [255, 101, 0]);
        let o = encode(&f, &[], &[], 0);
        assert_eq!((o.rgb[0], o.rgb[NET_PIXELS], o.rgb[2 * NET_PIXELS]), (128, 50, 0));
        let v = o.to_f64();
        assert!((v[0] - 128.0 / 255.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn planes_only_light_inside_their_boxes(
            boxes in proptest::collection::vec((0i32..128, 0i32..96, 1u32..40, 1u32..40, 0usize..3), 0..6),
            selected in proptest::collection::btree_set(0usize..3, 0..3),
        ) {
            let segs: Vec<(BBox, Option<usize>)> = boxes.iter().map(|&(x, y, w, h, c)| (BBox::new(x, y, w, h), Some(c))).collect();
            let sel: Vec<usize> = selected.iter().copied().collect();
            let o = encode(&frame(), &segs, &sel, 3);
            prop_assert_eq!(&o, &encode(&frame(), &segs, &sel, 3));
            for (k, &cat) in sel.iter().enumerate() {
                for (i, &v) in o.mask_plane(k).iter().enumerate() {
                    prop_assert!(v <= 1);
                    if v == 1 {
                        let (cx, cy) = ((i % NET_WIDTH) as i32 * 2, (i / NET_WIDTH) as i32 * 2);
                        let cell = BBox::new(cx, cy, 2, 2);
                        prop_assert!(segs.iter().any(|(b, c)| *c == Some(cat) && b.intersects(&cell)));
                    }
                }
            }
            for k in sel.len()..3 {
                prop_assert!(o.mask_plane(k).iter().all(|&v| v == 0));
            }
        }
    }
}
