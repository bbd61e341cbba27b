//! Reference computations that share no code with the library.

use std::collections::BTreeMap;

use hazeforge::eval::{BBox, DetectionBox, TruthBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `e^{-x}` as the reciprocal of the all-positive Taylor series of `e^{x}`.
pub fn exp_neg_series(x: f64) -> f64 {
    assert!(x >= 0.0);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..200 {
        term *= x / k as f64;
        sum += term;
        if term < sum * 1e-20 {
            break;
        }
    }
    1.0 / sum
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    let lo = if a0 > b0 { a0 } else { b0 };
    let hi = if a1 < b1 { a1 } else { b1 };
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

pub fn iou_oracle(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let inter = overlap(a.x_min, a.x_max, b.x_min, b.x_max) * overlap(a.y_min, a.y_max, b.y_min, b.y_max);
    if inter == 0.0 {
        return 0.0;
    }
    let area = |r: &BBox<f64>| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    inter / (area(a) + area(b) - inter)
}

/// Greedy claims by repeated selection of the highest-confidence
/// unprocessed detection (earliest index wins ties). Returns per-detection
/// TP flags in input order.
pub fn match_oracle(dets: &[DetectionBox], truths: &[TruthBox], tau: f64) -> Vec<bool> {
    let mut tp = vec![false; dets.len()];
    let mut done = vec![false; dets.len()];
    let mut taken = vec![false; truths.len()];
    for _ in 0..dets.len() {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if done[i] {
                continue;
            }
            match pick {
                None => pick = Some(i),
                Some(p) if dets[i].confidence > dets[p].confidence => pick = Some(i),
                _ => {}
            }
        }
        let d = pick.unwrap();
        done[d] = true;
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if taken[t] || truth.sample_id != dets[d].sample_id || truth.class_id != dets[d].class_id {
                continue;
            }
            let o = iou_oracle(&dets[d].bbox, &truth.bbox);
            if o >= tau && best.map_or(true, |(_, b)| o > b) {
                best = Some((t, o));
            }
        }
        if let Some((t, _)) = best {
            taken[t] = true;
            tp[d] = true;
        }
    }
    tp
}

/// Envelope integral over distinct recall levels:
/// `Σ (r_k − r_{k−1}) · max{ p_j : r_j ≥ r_k }`, O(n²).
pub fn ap_oracle(ranked_tp: &[bool], truth_count: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp as f64 / truth_count as f64, tp as f64 / (i + 1) as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut prev = 0.0;
    let mut ap = 0.0;
    for r in levels {
        let best = points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0f64, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}

/// Per-class AP for classes present in the truths.
pub fn per_class_ap_oracle(dets: &[DetectionBox], truths: &[TruthBox], tau: f64) -> BTreeMap<i64, f64> {
    let tp = match_oracle(dets, truths, tau);
    let mut out = BTreeMap::new();
    let mut classes: Vec<i64> = truths.iter().map(|t| t.class_id).collect();
    classes.sort();
    classes.dedup();
    for c in classes {
        let n = truths.iter().filter(|t| t.class_id == c).count();
        // insertion sort by confidence desc, stable on index
        let mut idx: Vec<usize> = Vec::new();
        for i in (0..dets.len()).filter(|&i| dets[i].class_id == c) {
            let pos = idx
                .iter()
                .position(|&j| dets[j].confidence < dets[i].confidence)
                .unwrap_or(idx.len());
            idx.insert(pos, i);
        }
        let ranked: Vec<bool> = idx.iter().map(|&i| tp[i]).collect();
        out.insert(c, ap_oracle(&ranked, n));
    }
    out
}

/// Small random scene: ≤ 8 detections, ≤ 5 truths, ≤ 3 classes, boxes on a
/// coarse grid so exact overlaps and confidence ties occur.
pub fn random_scene(seed: u64) -> (Vec<DetectionBox>, Vec<TruthBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = rng.random_range(1..=3i64);
    let ids = ["a", "b"];
    let rand_box = |rng: &mut ChaCha8Rng| {
        let x = rng.random_range(0..6) as f64;
        let y = rng.random_range(0..6) as f64;
        let w = rng.random_range(1..5) as f64;
        let h = rng.random_range(1..5) as f64;
        BBox::new(x, y, x + w, y + h)
    };
    let truths: Vec<TruthBox> = (0..rng.random_range(1..=5))
        .map(|_| TruthBox {
            sample_id: ids[rng.random_range(0..2)].into(),
            class_id: rng.random_range(0..n_classes),
            bbox: rand_box(&mut rng),
        })
        .collect();
    let dets: Vec<DetectionBox> = (0..rng.random_range(0..=8))
        .map(|_| {
            // half the detections jitter a truth, half are anywhere
            let (sample_id, class_id, bbox) = if rng.random_bool(0.5) {
                let t = &truths[rng.random_range(0..truths.len())];
                let dx = rng.random_range(-1..=1) as f64;
                (t.sample_id.clone(), t.class_id, BBox::new(t.bbox.x_min + dx, t.bbox.y_min, t.bbox.x_max + dx, t.bbox.y_max))
            } else {
                (ids[rng.random_range(0..2)].to_string(), rng.random_range(0..n_classes), rand_box(&mut rng))
            };
            DetectionBox {
                sample_id,
                class_id,
                bbox,
                confidence: rng.random_range(0..=10) as f64 / 10.0,
            }
        })
        .collect();
    (dets, truths)
}
