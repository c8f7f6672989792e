//! Flow segmentation: background extraction by seeded region growing on
//! smoothed flow gradients, then marker-based watershed of the remaining
//! pixels into object segments.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow::FlowGradient;
use crate::raster::BBox;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegParams {
    /// Largest Euclidean distance between neighbouring smoothed gradients
    /// for the pixels to join the same region.
    pub eps_seg: f64,
    /// Regions larger than this fraction of the frame are background.
    pub background_min_fraction: f64,
    /// Frames with less background than this fraction are skipped.
    pub frame_skip_background_fraction: f64,
    pub min_region_fraction: f64,
    pub max_region_fraction: f64,
    /// Side of the tiles that each receive one random seed.
    pub seed_tile: usize,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams {
            eps_seg: 0.02,
            background_min_fraction: 0.13,
            frame_skip_background_fraction: 0.5,
            min_region_fraction: 0.001,
            max_region_fraction: 0.12,
            seed_tile: 16,
        }
    }
}

/// Pixels assigned to the background.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl BackgroundMask {
    pub fn fraction(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundOutcome {
    Found(BackgroundMask),
    /// Too little of the frame is background: the flow is unreliable.
    FrameSkipped { background_fraction: f64 },
}

/// Label value for pixels dropped as noise or never reached.
pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Index used in [`SegLabeling::labels`], starting at 1.
    pub id: i32,
    pub pixel_count: usize,
    pub bbox: BBox,
}

/// Partition of a frame into background (0), regions (1..) and noise (−1).
#[derive(Debug, Clone, PartialEq)]
pub struct SegLabeling {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<i32>,
    pub regions: Vec<Region>,
}

/// 3×3 box filter on each gradient component, averaging in-bounds pixels.
pub fn smooth_gradient(grad: &FlowGradient) -> Vec<[f64; 4]> {
    let (w, h) = (grad.width(), grad.height());
    let data = grad.data();
    let mut out = vec![[0.0; 4]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 4];
            let mut n = 0.0;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let g = data[ny * w + nx];
                    for k in 0..4 {
                        acc[k] += g[k];
                    }
                    n += 1.0;
                }
            }
            out[y * w + x] = acc.map(|a| a / n);
        }
    }
    out
}

#[inline]
fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for k in 0..4 {
        let d = a[k] - b[k];
        s += d * d;
    }
    libm::sqrt(s)
}

#[inline]
fn neighbours(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let left = (x > 0).then(|| i - 1);
    let right = (x + 1 < w).then(|| i + 1);
    let up = (y > 0).then(|| i - w);
    let down = (y + 1 < h).then(|| i + w);
    [left, right, up, down].into_iter().flatten()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so results do not depend on call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// One uniformly random seed pixel per `tile`×`tile` tile.
pub fn tile_seeds(width: usize, height: usize, tile: usize, seed: u64) -> Vec<usize> {
    let tile = tile.max(1);
    let mut rng = stream_rng(seed, 0x5eed);
    let mut seeds = Vec::new();
    for ty in (0..height).step_by(tile) {
        for tx in (0..width).step_by(tile) {
            let x = rng.random_range(tx..(tx + tile).min(width));
            let y = rng.random_range(ty..(ty + tile).min(height));
            seeds.push(y * width + x);
        }
    }
    seeds
}

/// Grows regions from `seeds`; a label crosses from a pixel to a neighbour
/// when their smoothed gradients are within `eps`, and regions that meet are
/// merged. Returns the merged region root per pixel (`usize::MAX` if
/// unreached).
fn grow_regions(smoothed: &[[f64; 4]], w: usize, h: usize, seeds: &[usize], eps: f64) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut labels = vec![NONE; w * h];
    let mut uf = UnionFind((0..seeds.len()).collect());
    let mut queue = Vec::new();
    for (si, &s) in seeds.iter().enumerate() {
        if labels[s] != NONE {
            uf.union(si, labels[s]);
            continue;
        }
        labels[s] = si;
        queue.clear();
        queue.push(s);
        while let Some(p) = queue.pop() {
            for q in neighbours(p, w, h) {
                if distance(&smoothed[p], &smoothed[q]) > eps {
                    continue;
                }
                if labels[q] == NONE {
                    labels[q] = si;
                    queue.push(q);
                } else if labels[q] != si {
                    uf.union(si, labels[q]);
                }
            }
        }
    }
    labels.iter().map(|&l| if l == NONE { NONE } else { uf.find(l) }).collect()
}

/// Background extraction from explicit seed pixels.
pub fn extract_background_with_seeds(grad: &FlowGradient, params: &SegParams, seeds: &[usize]) -> BackgroundOutcome {
    let (w, h) = (grad.width(), grad.height());
    let n = w * h;
    let smoothed = smooth_gradient(grad);
    let roots = grow_regions(&smoothed, w, h, seeds, params.eps_seg);
    let mut sizes = vec![0usize; seeds.len()];
    for &r in &roots {
        if r != usize::MAX {
            sizes[r] += 1;
        }
    }
    let min_size = params.background_min_fraction * n as f64;
    let mask: Vec<bool> = roots.iter().map(|&r| r != usize::MAX && sizes[r] as f64 > min_size).collect();
    let bg = BackgroundMask { width: w, height: h, mask };
    let fraction = bg.fraction();
    if fraction < params.frame_skip_background_fraction {
        BackgroundOutcome::FrameSkipped { background_fraction: fraction }
    } else {
        BackgroundOutcome::Found(bg)
    }
}

/// Background extraction with one random seed per tile drawn from `seed`.
pub fn extract_background(grad: &FlowGradient, params: &SegParams, seed: u64) -> BackgroundOutcome {
    let seeds = tile_seeds(grad.width(), grad.height(), params.seed_tile, seed);
    extract_background_with_seeds(grad, params, &seeds)
}

#[derive(Clone, Copy, PartialEq)]
struct Priority(f64);

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Splits the non-background pixels into object segments.
///
/// Markers are the ε-connected components that form a regional minimum of
/// the smoothed gradient magnitude; the background competes as one more
/// marker. Pixels are then flooded in order of increasing magnitude, so
/// basin borders fall on the flow discontinuities. Basins outside the size
/// bounds become noise.
pub fn segment_foreground(grad: &FlowGradient, background: &BackgroundMask, params: &SegParams) -> SegLabeling {
    let (w, h) = (grad.width(), grad.height());
    let n = w * h;
    let smoothed = smooth_gradient(grad);
    let mag: Vec<f64> = smoothed.iter().map(|g| distance(g, &[0.0; 4])).collect();
    let fg = |i: usize| !background.mask[i];

    // ε-components of the foreground
    const NONE: usize = usize::MAX;
    let mut comp = vec![NONE; n];
    let mut comp_min: Vec<f64> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if !fg(start) || comp[start] != NONE {
            continue;
        }
        let c = comp_min.len();
        comp[start] = c;
        let mut min = mag[start];
        stack.push(start);
        while let Some(p) = stack.pop() {
            for q in neighbours(p, w, h) {
                if fg(q) && comp[q] == NONE && distance(&smoothed[p], &smoothed[q]) <= params.eps_seg {
                    comp[q] = c;
                    min = min.min(mag[q]);
                    stack.push(q);
                }
            }
        }
        comp_min.push(min);
    }
    let mut outside_min = vec![f64::INFINITY; comp_min.len()];
    for p in 0..n {
        if comp[p] == NONE {
            continue;
        }
        for q in neighbours(p, w, h) {
            if comp[q] != comp[p] {
                outside_min[comp[p]] = outside_min[comp[p]].min(mag[q]);
            }
        }
    }

    // labels: 0 background, k+1 for marker component k, NONE unlabeled
    const UNSET: i64 = -1;
    let mut label = vec![UNSET; n];
    for p in 0..n {
        if !fg(p) {
            label[p] = 0;
        } else if comp_min[comp[p]] <= outside_min[comp[p]] {
            label[p] = comp[p] as i64 + 1;
        }
    }
    let mut heap: BinaryHeap<Reverse<(Priority, u64, usize, i64)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for p in 0..n {
        if label[p] == UNSET {
            continue;
        }
        for q in neighbours(p, w, h) {
            if label[q] == UNSET {
                heap.push(Reverse((Priority(mag[q]), seq, q, label[p])));
                seq += 1;
            }
        }
    }
    while let Some(Reverse((_, _, q, l))) = heap.pop() {
        if label[q] != UNSET {
            continue;
        }
        label[q] = l;
        for r in neighbours(q, w, h) {
            if label[r] == UNSET {
                heap.push(Reverse((Priority(mag[r]), seq, r, l)));
                seq += 1;
            }
        }
    }

    // size filter and renumbering in raster order of first pixel
    let mut sizes = vec![0usize; comp_min.len() + 1];
    for &l in &label {
        if l > 0 {
            sizes[l as usize] += 1;
        }
    }
    let min_size = params.min_region_fraction * n as f64;
    let max_size = params.max_region_fraction * n as f64;
    let mut remap = vec![0i32; comp_min.len() + 1];
    let mut next = 1;
    let mut labels = vec![0i32; n];
    let mut extents: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    for p in 0..n {
        let l = label[p];
        labels[p] = match l {
            UNSET => NOISE,
            0 => 0,
            l => {
                let l = l as usize;
                let s = sizes[l] as f64;
                if s < min_size || s > max_size {
                    NOISE
                } else {
                    if remap[l] == 0 {
                        remap[l] = next;
                        next += 1;
                        extents.push((usize::MAX, usize::MAX, 0, 0, 0));
                    }
                    let (x, y) = (p % w, p / w);
                    let e = &mut extents[remap[l] as usize - 1];
                    e.0 = e.0.min(x);
                    e.1 = e.1.min(y);
                    e.2 = e.2.max(x + 1);
                    e.3 = e.3.max(y + 1);
                    e.4 += 1;
                    remap[l]
                }
            }
        };
    }
    let regions = extents
        .iter()
        .enumerate()
        .map(|(k, e)| Region {
            id: k as i32 + 1,
            pixel_count: e.4,
            bbox: BBox::new(e.0 as i32, e.1 as i32, (e.2 - e.0) as u32, (e.3 - e.1) as u32),
        })
        .collect();
    SegLabeling { width: w, height: h, labels, regions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, CategorySpec, EnvConfig, Gallery, Role, Shape, SpriteSpec};
    use crate::flow::{flow_gradient, FlowField};
    use crate::raster::bbox_iou;
    use rand::SeedableRng;

    fn seg_params() -> SegParams {
        SegParams::default()
    }

    fn foreground(flow: &FlowField, seed: u64) -> Option<SegLabeling> {
        let g = flow_gradient(flow);
        match extract_background(&g, &seg_params(), seed) {
            BackgroundOutcome::Found(bg) => Some(segment_foreground(&g, &bg, &seg_params())),
            BackgroundOutcome::FrameSkipped { .. } => None,
        }
    }

    #[test]
    fn zero_gradient_is_all_background() {
        let g = flow_gradient(&FlowField::zeros(128, 96));
        match extract_background(&g, &seg_params(), 1) {
            BackgroundOutcome::Found(bg) => assert!(bg.mask.iter().all(|&b| b)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadrants_are_all_background() {
        let flow = FlowField::from_fn(128, 96, |x, y| match (x < 64, y < 48) {
            (true, true) => (0.0, 0.0),
            (false, true) => (2.0, 0.0),
            (true, false) => (0.0, 2.0),
            (false, false) => (-2.0, -2.0),
        });
        let seg = foreground(&flow, 3).expect("background found");
        assert!(seg.regions.is_empty(), "{:?}", seg.regions);
    }

    #[test]
    fn noisy_gradient_skips_frame() {
        let mut rng = crate::SeedRng::seed_from_u64(4);
        let data = (0..128 * 96).map(|_| [0; 4].map(|_: i32| rng.random_range(-1.0..1.0))).collect();
        let g = FlowGradient::from_parts(128, 96, data);
        assert!(matches!(extract_background(&g, &seg_params(), 2), BackgroundOutcome::FrameSkipped { .. }));
    }

    #[test]
    fn tiny_flicker_is_noise() {
        let flow = FlowField::from_fn(128, 96, |x, y| if (50..52).contains(&x) && (30..32).contains(&y) { (3.0, 1.0) } else { (0.0, 0.0) });
        let seg = foreground(&flow, 5).unwrap();
        assert!(seg.regions.is_empty(), "{:?}", seg.regions);
    }

    fn sprite_config(velocities: &[[i32; 2]]) -> EnvConfig {
        EnvConfig {
            categories: velocities
                .iter()
                .map(|&v| CategorySpec {
                    name: "s".into(),
                    role: Role::Target,
                    sprite: SpriteSpec { shape: Shape::Square, width: 12, height: 12, color: [200, 30, 30], accent: [30, 30, 200] },
                    count: 1,
                    velocity: v,
                    random_direction: false,
                })
                .collect(),
            ..EnvConfig::default()
        }
    }

    /// Runs the env until all sprites are fully visible and separate, then
    /// segments the oracle flow of one NOOP step.
    fn oracle_segments(velocities: &[[i32; 2]], seed: u64) -> (SegLabeling, Vec<BBox>) {
        let cfg = sprite_config(velocities);
        let mut s = seed;
        loop {
            let (mut g, first) = Gallery::reset(&cfg, s).unwrap();
            let boxes: Vec<BBox> = (1..=velocities.len() as u8).filter_map(|id| first.truth.mask.bbox_of(id)).collect();
            let apart = boxes.iter().enumerate().all(|(i, a)| {
                a.area() == 144 && boxes.iter().skip(i + 1).all(|b| !a.translated(-4, -4).clamped(200, 200).map_or(false, |a| BBox::new(a.x0, a.y0, 20, 20).intersects(b)))
            });
            if boxes.len() == velocities.len() && apart {
                let out = g.step(Action::Noop).unwrap();
                let seg = foreground(&out.truth.flow, seed).unwrap();
                return (seg, boxes);
            }
            s += 1000;
        }
    }

    #[test]
    fn single_sprite_gives_one_tight_segment() {
        for seed in 0..5 {
            let (seg, truth) = oracle_segments(&[[2, 0]], seed);
            assert_eq!(seg.regions.len(), 1, "seed {seed}");
            assert!(bbox_iou(&seg.regions[0].bbox, &truth[0]) >= 0.7);
        }
    }

    #[test]
    fn opposing_sprites_give_two_segments() {
        for seed in 0..5 {
            let (seg, truth) = oracle_segments(&[[2, 0], [-2, 0]], seed);
            assert_eq!(seg.regions.len(), 2, "seed {seed}");
            for t in &truth {
                let best = seg.regions.iter().map(|r| bbox_iou(&r.bbox, t)).fold(0.0, f64::max);
                assert!(best >= 0.7);
            }
        }
    }

    #[test]
    fn labeling_is_a_partition_with_consistent_counts() {
        let (seg, _) = oracle_segments(&[[2, 0], [0, -3]], 11);
        for r in &seg.regions {
            assert_eq!(seg.labels.iter().filter(|&&l| l == r.id).count(), r.pixel_count);
        }
        let max = seg.regions.len() as i32;
        assert!(seg.labels.iter().all(|&l| l == NOISE || (0..=max).contains(&l)));
    }

    #[test]
    fn seed_order_does_not_change_background() {
        let flow = FlowField::from_fn(64, 48, |x, y| {
            let base = if x < 30 { 0.0 } else { 1.5 };
            (base + if (40..46).contains(&x) && (10..20).contains(&y) { 2.0 } else { 0.0 }, 0.0)
        });
        let g = flow_gradient(&flow);
        let params = SegParams { seed_tile: 8, ..seg_params() };
        let seeds = tile_seeds(64, 48, 8, 9);
        let mut rev = seeds.clone();
        rev.reverse();
        let a = extract_background_with_seeds(&g, &params, &seeds);
        let b = extract_background_with_seeds(&g, &params, &rev);
        match (a, b) {
            (BackgroundOutcome::Found(a), BackgroundOutcome::Found(b)) => assert_eq!(a.mask, b.mask),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn region_growing_is_order_independent() {
        use proptest::prelude::*;
        let flow = FlowField::from_fn(40, 30, |x, y| (((x / 7) % 3) as f64 * 0.5, ((y / 9) % 2) as f64));
        let g = flow_gradient(&flow);
        let smoothed = smooth_gradient(&g);
        let seeds = tile_seeds(40, 30, 5, 1);
        let reference = partition_key(&grow_regions(&smoothed, 40, 30, &seeds, 0.02));
        proptest!(|(perm in Just(seeds.clone()).prop_shuffle())| {
            let roots = grow_regions(&smoothed, 40, 30, &perm, 0.02);
            prop_assert_eq!(partition_key(&roots), reference.clone());
        });
    }

    /// Canonical relabeling: regions numbered by first appearance.
    fn partition_key(roots: &[usize]) -> Vec<i64> {
        let mut map = alloc::collections::BTreeMap::new();
        roots
            .iter()
            .map(|&r| {
                if r == usize::MAX {
                    -1
                } else {
                    let next = map.len() as i64;
                    *map.entry(r).or_insert(next)
                }
            })
            .collect()
    }
}
