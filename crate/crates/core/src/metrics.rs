//! Perception scores against ground truth and learning-curve statistics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::raster::{bbox_iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("stream lengths differ: {0} truth frames vs {1} detection frames")]
    LengthMismatch(usize, usize),
    #[error("no labeled segments")]
    NoLabeled,
}

/// Ground-truth instance in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthInstance {
    pub category: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RateCount {
    pub hits: usize,
    pub total: usize,
}

impl RateCount {
    /// hits/total, 0 when nothing was counted.
    pub fn rate(&self) -> f64 {
        if self.total == 0 { 0.0 } else { self.hits as f64 / self.total as f64 }
    }
}

/// Per category, how many (frame, instance) pairs had at least one
/// overlapping detection.
pub fn detection_rate(truth: &[Vec<TruthInstance>], detected: &[Vec<BBox>], categories: usize) -> Result<Vec<RateCount>, MetricsError> {
    if truth.len() != detected.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), detected.len()));
    }
    let mut out = vec![RateCount::default(); categories];
    for (inst, det) in truth.iter().zip(detected) {
        for t in inst {
            let c = &mut out[t.category];
            c.total += 1;
            if det.iter().any(|d| d.intersects(&t.bbox)) {
                c.hits += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub truth: usize,
    pub detection: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching by descending IoU (ties by truth then
/// detection index); only overlapping pairs are matched.
pub fn greedy_match(truth: &[BBox], detected: &[BBox]) -> Vec<Match> {
    let mut pairs = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (di, d) in detected.iter().enumerate() {
            let iou = bbox_iou(t, d);
            if iou > 0.0 {
                pairs.push(Match { truth: ti, detection: di, iou });
            }
        }
    }
    pairs.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.truth.cmp(&b.truth)).then(a.detection.cmp(&b.detection)));
    let (mut tu, mut du) = (vec![false; truth.len()], vec![false; detected.len()]);
    let mut out = Vec::new();
    for p in pairs {
        if !tu[p.truth] && !du[p.detection] {
            tu[p.truth] = true;
            du[p.detection] = true;
            out.push(p);
        }
    }
    out
}

/// Mean IoU over matched pairs, with the pair count (0 and 0 when empty).
pub fn mean_iou(matches: &[Match]) -> (f64, usize) {
    if matches.is_empty() {
        return (0.0, 0);
    }
    (matches.iter().map(|m| m.iou).sum::<f64>() / matches.len() as f64, matches.len())
}

/// `pairs` holds (assigned cluster, truth category) for matched segments.
/// Each cluster's majority truth label (lowest label on ties) is computed
/// from the labeled pairs; accuracy is the fraction agreeing with it.
pub fn categorization_accuracy(pairs: &[(Option<usize>, usize)]) -> Result<f64, MetricsError> {
    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut n = 0;
    for &(c, t) in pairs {
        if let Some(c) = c {
            *votes.entry(c).or_default().entry(t).or_default() += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoLabeled);
    }
    let correct: usize = votes
        .values()
        .map(|v| {
            // BTreeMap iterates labels ascending, so `>` keeps the lowest on ties
            let mut best = 0;
            for &count in v.values() {
                if count > best {
                    best = count;
                }
            }
            best
        })
        .sum();
    Ok(correct as f64 / n as f64)
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let (mut ra, mut rb): (BTreeMap<usize, usize>, BTreeMap<usize, usize>) = (BTreeMap::new(), BTreeMap::new());
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len());
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// First step at which the curve reaches `threshold`.
pub fn steps_to_threshold(curve: &[(u64, f64)], threshold: f64) -> Option<u64> {
    curve.iter().find(|(_, v)| *v >= threshold).map(|(s, _)| *s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: i32, y: i32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h)
    }

    #[test]
    fn detection_rate_examples() {
        let inst = TruthInstance { category: 0, bbox: b(10, 10, 12, 12) };
        let truth = vec![vec![inst]; 10];
        let perfect: Vec<Vec<BBox>> = vec![vec![inst.bbox]; 10];
        assert_eq!(detection_rate(&truth, &perfect, 1).unwrap()[0].rate(), 1.0);
        let none: Vec<Vec<BBox>> = vec![vec![]; 10];
        assert_eq!(detection_rate(&truth, &none, 1).unwrap()[0].rate(), 0.0);
        let seven: Vec<Vec<BBox>> = (0..10).map(|i| if i < 7 { vec![b(15, 15, 3, 3)] } else { vec![b(50, 50, 3, 3)] }).collect();
        assert!((detection_rate(&truth, &seven, 1).unwrap()[0].rate() - 0.7).abs() < 1e-12);
        assert_eq!(detection_rate(&truth, &none[..3], 1), Err(MetricsError::LengthMismatch(10, 3)));
    }

    #[test]
    fn mean_iou_examples() {
        let t = [b(0, 0, 10, 10), b(30, 30, 5, 5)];
        assert_eq!(mean_iou(&greedy_match(&t, &t)), (1.0, 2));
        let m = greedy_match(&[b(0, 0, 2, 1)], &[b(1, 0, 2, 1)]);
        assert!((mean_iou(&m).0 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(mean_iou(&[]), (0.0, 0));
    }

    #[test]
    fn categorization_examples() {
        assert_eq!(categorization_accuracy(&[(Some(0), 0), (Some(1), 1), (Some(0), 0)]), Ok(1.0));
        assert_eq!(categorization_accuracy(&[(Some(0), 0), (Some(0), 1)]), Ok(0.5));
        assert_eq!(categorization_accuracy(&[(None, 0), (None, 1)]), Err(MetricsError::NoLabeled));
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 3, 3]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn curve_helpers() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(steps_to_threshold(&[(0, 0.1), (100, 0.5), (200, 0.9)], 0.5), Some(100));
        assert_eq!(steps_to_threshold(&[(0, 0.1)], 0.5), None);
    }

    fn brute_force_best(truth: &[BBox], det: &[BBox]) -> f64 {
        // maximise the sum of IoU over injective assignments, counting only overlapping pairs
        fn rec(t: usize, truth: &[BBox], det: &[BBox], used: &mut Vec<bool>) -> f64 {
            if t == truth.len() {
                return 0.0;
            }
            let mut best = rec(t + 1, truth, det, used);
            for d in 0..det.len() {
                let iou = bbox_iou(&truth[t], &det[d]);
                if !used[d] && iou > 0.0 {
                    used[d] = true;
                    best = best.max(iou + rec(t + 1, truth, det, used));
                    used[d] = false;
                }
            }
            best
        }
        rec(0, truth, det, &mut vec![false; det.len()])
    }

    fn sparse_frame() -> impl Strategy<Value = (Vec<BBox>, Vec<BBox>)> {
        // up to three objects in disjoint 40-px lanes, detections jittered around them
        (1usize..=3, proptest::collection::vec((-8i32..8, -8i32..8, 6u32..18, 6u32..18), 3))
            .prop_map(|(k, jit)| {
                let truth: Vec<BBox> = (0..k).map(|i| b(i as i32 * 40 + 10, 20, 12, 12)).collect();
                let det = truth.iter().zip(&jit).map(|(t, &(dx, dy, w, h))| b(t.x0 + dx, t.y0 + dy, w, h)).collect();
                (truth, det)
            })
    }

    proptest! {
        #[test]
        fn greedy_matches_brute_force_when_sparse((truth, det) in sparse_frame()) {
            let m = greedy_match(&truth, &det);
            let sum: f64 = m.iter().map(|p| p.iou).sum();
            prop_assert!((sum - brute_force_best(&truth, &det)).abs() < 1e-12);
        }

        #[test]
        fn scores_are_order_invariant_and_bounded(frames in proptest::collection::vec(sparse_frame(), 1..6), rot in 0usize..6) {
            let truth: Vec<Vec<TruthInstance>> = frames.iter().map(|(t, _)| t.iter().enumerate().map(|(i, &bbox)| TruthInstance { category: i % 2, bbox }).collect()).collect();
            let det: Vec<Vec<BBox>> = frames.iter().map(|(_, d)| d.clone()).collect();
            let r = rot % frames.len();
            let (mut t2, mut d2) = (truth.clone(), det.clone());
            t2.rotate_left(r);
            d2.rotate_left(r);
            let a = detection_rate(&truth, &det, 2).unwrap();
            prop_assert_eq!(&a, &detection_rate(&t2, &d2, 2).unwrap());
            prop_assert!(a.iter().all(|c| (0.0..=1.0).contains(&c.rate())));
        }
    }
}
