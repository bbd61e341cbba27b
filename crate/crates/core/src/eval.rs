//! Detection metrics: IoU, greedy matching, all-point AP, mAP, and
//! precision/recall at a confidence operating point.
//!
//! File formats, one box per line, whitespace separated:
//!
//! ```text
//! truths:      <sample_id> <class> <xmin> <ymin> <xmax> <ymax>
//! detections:  <sample_id> <class> <xmin> <ymin> <xmax> <ymax> <confidence>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid option: {0}")]
    Option(String),
}

/// Axis-aligned box, `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Float> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Float>(a: &BBox<T>, b: &BBox<T>) -> T {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= T::zero() || h <= T::zero() {
        return T::zero();
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub sample_id: String,
    pub class_id: i64,
    pub bbox: BBox<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub sample_id: String,
    pub class_id: i64,
    pub bbox: BBox<f64>,
    pub confidence: f64,
}

/// Result of matching one image/class group.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Per detection, in input order: true for a true positive.
    pub true_positive: Vec<bool>,
    /// Per detection: index of the claimed truth.
    pub claimed: Vec<Option<usize>>,
    pub false_negatives: usize,
}

/// Detections in descending confidence, ties in input order.
fn rank_order(confidences: impl Iterator<Item = f64>) -> Vec<usize> {
    let conf: Vec<f64> = confidences.collect();
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
    order
}

/// Greedy matching for one sample and class: in confidence order, each
/// detection claims the unclaimed truth with the highest IoU that reaches
/// `iou_threshold` (lowest truth index on ties).
pub fn match_detections(dets: &[DetectionBox], truths: &[TruthBox], iou_threshold: f64) -> Matching {
    let mut taken = vec![false; truths.len()];
    let mut true_positive = vec![false; dets.len()];
    let mut claimed = vec![None; dets.len()];
    for d in rank_order(dets.iter().map(|d| d.confidence)) {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if taken[t] {
                continue;
            }
            let o = iou(&dets[d].bbox, &truth.bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((t, o));
            }
        }
        if let Some((t, _)) = best {
            taken[t] = true;
            true_positive[d] = true;
            claimed[d] = Some(t);
        }
    }
    Matching {
        true_positive,
        claimed,
        false_negatives: taken.iter().filter(|&&c| !c).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMethod {
    /// Exact area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

impl std::str::FromStr for ApMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all-point" => Ok(Self::AllPoint),
            "11-point" | "eleven-point" => Ok(Self::ElevenPoint),
            other => Err(format!("unknown AP method {other:?} (all-point, 11-point)")),
        }
    }
}

/// A detection after matching: its score and whether it hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub confidence: f64,
    pub true_positive: bool,
}

/// Average precision of one class. `None` when the class has no truths.
pub fn average_precision(labeled: &[ScoredMatch], truth_count: usize, method: ApMethod) -> Option<f64> {
    if truth_count == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(labeled.len());
    let mut precision = Vec::with_capacity(labeled.len());
    let mut tp = 0usize;
    for (rank, i) in rank_order(labeled.iter().map(|m| m.confidence)).into_iter().enumerate() {
        if labeled[i].true_positive {
            tp += 1;
        }
        recall.push(tp as f64 / truth_count as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // envelope: best precision at this or any higher recall
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = match method {
        ApMethod::AllPoint => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (&r, &p) in recall.iter().zip(&precision) {
                area += (r - prev) * p;
                prev = r;
            }
            area
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let level = k as f64 / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= level)
                        .map_or(0.0, |i| precision[i])
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_threshold: 0.25,
            ap_method: ApMethod::AllPoint,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::Option(format!(
                "iou threshold must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(EvalError::Option(format!(
                "confidence threshold must lie in [0, 1], got {}",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<i64, f64>,
    pub map: f64,
    pub map_percent: f64,
    pub precision: f64,
    pub recall: f64,
    /// No detections passed the confidence threshold; precision reported as 0.
    pub precision_undefined: bool,
    /// No ground truth at all; recall and mAP reported as 0.
    pub recall_undefined: bool,
    pub counts: Counts,
    pub options: EvalOptions,
}

impl EvalReport {
    /// Plain-text summary with mAP, Precision and Recall in percent.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8}", "class", "AP (%)");
        for (class, ap) in &self.per_class_ap {
            let _ = writeln!(s, "{:<10} {:>8.2}", class, ap * 100.0);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>8} {:>10} {:>8}", "mAP", "Precision", "Recall");
        let _ = writeln!(
            s,
            "{:>8.2} {:>10.2} {:>8.2}",
            self.map_percent,
            self.precision * 100.0,
            self.recall * 100.0
        );
        let c = &self.counts;
        let _ = write!(
            s,
            "TP {}  FP {}  FN {}  (IoU >= {}, confidence >= {})",
            c.true_positives, c.false_positives, c.false_negatives, self.options.iou_threshold, self.options.confidence_threshold
        );
        if self.precision_undefined {
            s.push_str("\nnote: no detections at the operating point; precision reported as 0");
        }
        if self.recall_undefined {
            s.push_str("\nnote: no ground truth boxes; recall and mAP reported as 0");
        }
        s.push('\n');
        s
    }
}

/// Computes the full report. AP uses every detection; precision and recall
/// count only detections with `confidence >= confidence_threshold`.
pub fn evaluate(dets: &[DetectionBox], truths: &[TruthBox], options: &EvalOptions) -> EvalReport {
    type Group = (Vec<usize>, Vec<usize>);
    let mut groups: BTreeMap<(&str, i64), Group> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups.entry((&d.sample_id, d.class_id)).or_default().0.push(i);
    }
    for (i, t) in truths.iter().enumerate() {
        groups.entry((&t.sample_id, t.class_id)).or_default().1.push(i);
    }

    let mut hit = vec![false; dets.len()];
    for (det_idx, truth_idx) in groups.values() {
        if det_idx.is_empty() {
            continue;
        }
        let gd: Vec<DetectionBox> = det_idx.iter().map(|&i| dets[i].clone()).collect();
        let gt: Vec<TruthBox> = truth_idx.iter().map(|&i| truths[i].clone()).collect();
        let m = match_detections(&gd, &gt, options.iou_threshold);
        for (k, &i) in det_idx.iter().enumerate() {
            hit[i] = m.true_positive[k];
        }
    }

    let mut truth_per_class: BTreeMap<i64, usize> = BTreeMap::new();
    for t in truths {
        *truth_per_class.entry(t.class_id).or_default() += 1;
    }
    let classes: BTreeSet<i64> = truth_per_class.keys().copied().collect();

    let mut per_class_ap = BTreeMap::new();
    for &class in &classes {
        // keep input order so ties rank stably
        let labeled: Vec<ScoredMatch> = dets
            .iter()
            .zip(&hit)
            .filter(|(d, _)| d.class_id == class)
            .map(|(d, &h)| ScoredMatch {
                confidence: d.confidence,
                true_positive: h,
            })
            .collect();
        if let Some(ap) = average_precision(&labeled, truth_per_class[&class], options.ap_method) {
            per_class_ap.insert(class, ap);
        }
    }
    let map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };

    let mut counts = Counts::default();
    for (d, &h) in dets.iter().zip(&hit) {
        if d.confidence >= options.confidence_threshold {
            if h {
                counts.true_positives += 1;
            } else {
                counts.false_positives += 1;
            }
        }
    }
    counts.false_negatives = truths.len() - counts.true_positives;
    let predicted = counts.true_positives + counts.false_positives;
    let precision_undefined = predicted == 0;
    let recall_undefined = truths.is_empty();
    EvalReport {
        per_class_ap,
        map,
        map_percent: map * 100.0,
        precision: if precision_undefined {
            0.0
        } else {
            counts.true_positives as f64 / predicted as f64
        },
        recall: if recall_undefined {
            0.0
        } else {
            counts.true_positives as f64 / truths.len() as f64
        },
        precision_undefined,
        recall_undefined,
        counts,
        options: *options,
    }
}

fn parse_fields(line: usize, text: &str, expected: usize) -> Result<Option<Vec<&str>>, EvalError> {
    let t = text.trim();
    if t.is_empty() || t.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = t.split_whitespace().collect();
    if fields.len() != expected {
        return Err(EvalError::Parse {
            line,
            message: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    Ok(Some(fields))
}

fn parse_box(line: usize, fields: &[&str]) -> Result<(i64, BBox<f64>), EvalError> {
    let bad = |message: String| EvalError::Parse { line, message };
    let class = fields[0]
        .parse::<i64>()
        .map_err(|_| bad(format!("bad class id {:?}", fields[0])))?;
    let mut c = [0.0f64; 4];
    for (slot, f) in c.iter_mut().zip(&fields[1..5]) {
        *slot = f
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("bad coordinate {f:?}")))?;
    }
    let b = BBox::new(c[0], c[1], c[2], c[3]);
    if !b.is_valid() {
        return Err(bad(format!("degenerate box {:?}", c)));
    }
    Ok((class, b))
}

pub fn parse_truths(text: &str) -> Result<Vec<TruthBox>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let Some(f) = parse_fields(i + 1, raw, 6)? else { continue };
        let (class_id, bbox) = parse_box(i + 1, &f[1..])?;
        out.push(TruthBox {
            sample_id: f[0].to_string(),
            class_id,
            bbox,
        });
    }
    Ok(out)
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionBox>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some(f) = parse_fields(line, raw, 7)? else { continue };
        let (class_id, bbox) = parse_box(line, &f[1..6])?;
        let confidence = f[6]
            .parse::<f64>()
            .ok()
            .filter(|c| (0.0..=1.0).contains(c))
            .ok_or_else(|| EvalError::Parse {
                line,
                message: format!("confidence {:?} not in [0, 1]", f[6]),
            })?;
        out.push(DetectionBox {
            sample_id: f[0].to_string(),
            class_id,
            bbox,
            confidence,
        });
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn evaluate_files(dets_path: &Path, truths_path: &Path, options: &EvalOptions) -> Result<EvalReport, EvalError> {
    options.validate()?;
    let dets = parse_detections(&read_text(dets_path)?)?;
    let truths = parse_truths(&read_text(truths_path)?)?;
    Ok(evaluate(&dets, &truths, options))
}
