//! Segment tracking: flow propagation, HoG verification, lifetimes.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::flow::FlowField;
use crate::hog::{cosine_similarity, extract_patch, hog_descriptor, HogDescriptor, HogParams};
use crate::raster::{BBox, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    Detected,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub bbox: BBox,
    pub descriptor: HogDescriptor,
    pub category: Option<usize>,
    /// Steps since detection.
    pub age: u32,
    /// Remaining steps before the segment expires.
    pub ttl: u32,
    pub source: SegmentSource,
}

impl Segment {
    pub fn detected(bbox: BBox, descriptor: HogDescriptor, params: &TrackParams) -> Segment {
        Segment { bbox, descriptor, category: None, age: 0, ttl: params.lifetime, source: SegmentSource::Detected }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackParams {
    /// Minimum cosine similarity to accept a prediction or a replacement.
    pub eps_track: f64,
    pub lifetime: u32,
    /// Predictions are dropped when fewer bbox pixels carry valid flow.
    pub min_valid_fraction: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams { eps_track: 0.85, lifetime: 6, min_valid_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Expired,
    UnreliableFlow,
    LeftFrame,
    Dissimilar,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Propagation {
    Kept(Segment),
    Dropped(DropReason),
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

/// Mean flow of the object inside `bbox`, with the valid-pixel fraction.
///
/// Box pixels whose flow matches the median flow of the one-pixel ring
/// around the box are treated as background and left out, so hollow or
/// non-rectangular sprites are not dragged toward the background motion.
/// When no pixel stands out the plain mean of valid pixels is used.
pub fn mean_flow(flow: &FlowField, bbox: &BBox) -> Option<((f64, f64), f64)> {
    const OBJECT_MARGIN: f64 = 0.5;
    let b = bbox.clamped(flow.width(), flow.height())?;
    let (w, h) = (flow.width() as i32, flow.height() as i32);
    let (mut ru, mut rv) = (Vec::new(), Vec::new());
    for y in b.y0 - 1..=b.y1() {
        for x in b.x0 - 1..=b.x1() {
            let ring = x == b.x0 - 1 || x == b.x1() || y == b.y0 - 1 || y == b.y1();
            if ring && (0..w).contains(&x) && (0..h).contains(&y) && flow.is_valid(x as usize, y as usize) {
                ru.push(flow.u(x as usize, y as usize));
                rv.push(flow.v(x as usize, y as usize));
            }
        }
    }
    let ring = (!ru.is_empty()).then(|| (median(&mut ru), median(&mut rv)));
    let (mut all, mut obj) = ((0.0, 0.0, 0usize), (0.0, 0.0, 0usize));
    for y in b.y0 as usize..b.y1() as usize {
        for x in b.x0 as usize..b.x1() as usize {
            if !flow.is_valid(x, y) {
                continue;
            }
            let (u, v) = (flow.u(x, y), flow.v(x, y));
            all = (all.0 + u, all.1 + v, all.2 + 1);
            if ring.is_some_and(|(bu, bv)| libm::hypot(u - bu, v - bv) > OBJECT_MARGIN) {
                obj = (obj.0 + u, obj.1 + v, obj.2 + 1);
            }
        }
    }
    let frac = all.2 as f64 / b.area() as f64;
    let pick = if obj.2 > 0 { obj } else { all };
    (pick.2 > 0).then(|| ((pick.0 / pick.2 as f64, pick.1 / pick.2 as f64), frac))
}

/// Moves a segment from step t−1 to t along `flow` (t−1 → t) and verifies
/// the prediction against the HoG descriptor stored at t−1.
pub fn propagate(seg: &Segment, flow: &FlowField, cur: &GrayImage, params: &TrackParams, hog: &HogParams) -> Propagation {
    if seg.ttl <= 1 {
        return Propagation::Dropped(DropReason::Expired);
    }
    let ((u, v), frac) = match mean_flow(flow, &seg.bbox) {
        Some(m) => m,
        None => return Propagation::Dropped(DropReason::UnreliableFlow),
    };
    if frac < params.min_valid_fraction {
        return Propagation::Dropped(DropReason::UnreliableFlow);
    }
    let moved = seg.bbox.translated(libm::round(u) as i32, libm::round(v) as i32);
    let Some(bbox) = moved.clamped(cur.width(), cur.height()) else {
        return Propagation::Dropped(DropReason::LeftFrame);
    };
    let Ok(patch) = extract_patch(cur, &bbox) else {
        return Propagation::Dropped(DropReason::LeftFrame);
    };
    let descriptor = hog_descriptor(&patch, hog);
    if cosine_similarity(&seg.descriptor.0, &descriptor.0) < params.eps_track {
        return Propagation::Dropped(DropReason::Dissimilar);
    }
    Propagation::Kept(Segment {
        bbox,
        descriptor,
        category: seg.category,
        age: seg.age + 1,
        ttl: seg.ttl - 1,
        source: SegmentSource::Predicted,
    })
}

fn order_key(s: &Segment) -> (SegmentSource, i32, i32, u32, u32) {
    (s.source, s.bbox.y0, s.bbox.x0, s.bbox.h, s.bbox.w)
}

/// Detected segments replace the predictions they overlap and resemble.
/// Output: detected first, then surviving predictions, each by (y0, x0).
pub fn reconcile(predicted: &[Segment], detected: &[Segment], params: &TrackParams) -> Vec<Segment> {
    let mut out: Vec<Segment> = detected
        .iter()
        .map(|d| Segment { ttl: params.lifetime, age: 0, source: SegmentSource::Detected, ..d.clone() })
        .collect();
    out.extend(
        predicted
            .iter()
            .filter(|p| {
                !detected.iter().any(|d| {
                    p.bbox.intersects(&d.bbox) && cosine_similarity(&p.descriptor.0, &d.descriptor.0) >= params.eps_track
                })
            })
            .cloned(),
    );
    out.sort_by_key(order_key);
    out
}
