//! Coverage-test evaluation: cluster boxes, IoU matching against ground
//! truth, and precision / recall / F-measure.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry};

/// IoU needed for a detection to count as a true positive.
pub const COVERAGE_THRESHOLD: f64 = 0.85;

pub const FORMAT_VERSION: u32 = 1;

/// Pixel box, inclusive minimum and exclusive maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BoundingBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "empty box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn within(&self, geometry: SensorGeometry) -> bool {
        self.x_min >= 0 && self.y_min >= 0 && self.x_max <= geometry.width as i64 && self.y_max <= geometry.height as i64
    }

    pub fn to_array(self) -> [i64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [a, b, c, e] = <[i64; 4]>::deserialize(d)?;
        BoundingBox::new(a, b, c, e).map_err(serde::de::Error::custom)
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box spanning the `[q, 1 - q]` quantiles of the events' x and y, rounded
/// outward. `q = 0` gives the exact extent.
pub fn cluster_bbox(events: &[Event], trim_quantile: f64, min_events: usize) -> Result<BoundingBox> {
    if !(0.0..0.5).contains(&trim_quantile) {
        return Err(Error::invalid(format!("trim quantile must lie in [0, 0.5), got {trim_quantile}")));
    }
    if events.is_empty() || events.len() < min_events {
        return Err(Error::TooFewPoints(format!(
            "box needs at least {} events, got {}",
            min_events.max(1),
            events.len()
        )));
    }
    let mut xs: Vec<f64> = events.iter().map(|e| e.x as f64).collect();
    let mut ys: Vec<f64> = events.iter().map(|e| e.y as f64).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let x_min = quantile(&xs, trim_quantile).floor() as i64;
    let x_max = quantile(&xs, 1.0 - trim_quantile).ceil() as i64 + 1;
    let y_min = quantile(&ys, trim_quantile).floor() as i64;
    let y_max = quantile(&ys, 1.0 - trim_quantile).ceil() as i64 + 1;
    BoundingBox::new(x_min, y_min, x_max, y_max)
}

/// Intersection over union of the pixel areas.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub cluster_id: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub window_index: usize,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.detections.iter().map(|d| d.bbox).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub detection: usize,
    pub truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    #[serde(default)]
    pub window_index: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchPair>,
}

/// Greedy one-to-one matching in descending IoU order. Pairs at or above
/// `threshold` are true positives; leftover detections are false positives
/// and leftover truth boxes false negatives.
pub fn match_boxes(detections: &[BoundingBox], truth: &[BoundingBox], threshold: f64) -> Result<MatchResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let mut candidates: Vec<MatchPair> = Vec::new();
    for (d, db) in detections.iter().enumerate() {
        for (t, tb) in truth.iter().enumerate() {
            let v = iou(db, tb);
            if v >= threshold {
                candidates.push(MatchPair {
                    detection: d,
                    truth: t,
                    iou: v,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.detection.cmp(&b.detection))
            .then(a.truth.cmp(&b.truth))
    });
    let mut det_used = vec![false; detections.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if det_used[c.detection] || truth_used[c.truth] {
            continue;
        }
        det_used[c.detection] = true;
        truth_used[c.truth] = true;
        pairs.push(c);
    }
    Ok(MatchResult {
        window_index: 0,
        tp: pairs.len(),
        fp: detections.len() - pairs.len(),
        fn_: truth.len() - pairs.len(),
        pairs,
    })
}

/// Match one window's detections against its ground truth.
pub fn match_window(detections: &DetectionSet, truth: &[BoundingBox], threshold: f64) -> Result<MatchResult> {
    let mut r = match_boxes(&detections.boxes(), truth, threshold)?;
    r.window_index = detections.window_index;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub totals: Counts,
    /// Set when a denominator vanished and a metric was defined as 0.
    pub degenerate: bool,
    /// No detections and no ground truth at all.
    pub empty: bool,
    pub per_window: Vec<MatchResult>,
}

/// `P = TP / (TP + FP)`, `R = TP / (TP + FN)`, `F = 2PR / (P + R)`, with 0 for
/// every vanishing denominator.
pub fn prf(counts: Counts) -> (f64, f64, f64, bool) {
    let mut degenerate = false;
    let ratio = |num: usize, den: usize, flag: &mut bool| {
        if den == 0 {
            *flag = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let p = ratio(counts.tp, counts.tp + counts.fp, &mut degenerate);
    let r = ratio(counts.tp, counts.tp + counts.fn_, &mut degenerate);
    let f = f_measure(p, r).unwrap_or_else(|| {
        degenerate = true;
        0.0
    });
    (p, r, f, degenerate)
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f_measure(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

/// Micro-averaged metrics: counts are summed over windows first.
pub fn metrics(results: &[MatchResult]) -> MetricsReport {
    let totals = results.iter().fold(Counts::default(), |acc, r| Counts {
        tp: acc.tp + r.tp,
        fp: acc.fp + r.fp,
        fn_: acc.fn_ + r.fn_,
    });
    let (precision, recall, f_measure, degenerate) = prf(totals);
    MetricsReport {
        precision,
        recall,
        f_measure,
        totals,
        degenerate,
        empty: totals.tp + totals.fp + totals.fn_ == 0,
        per_window: results.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWindow {
    pub index: usize,
    pub boxes: Vec<BoundingBox>,
}

/// Ground-truth boxes per window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub windows: Vec<TruthWindow>,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

impl GroundTruth {
    pub fn new(windows: Vec<TruthWindow>) -> Self {
        GroundTruth {
            format_version: FORMAT_VERSION,
            windows,
        }
    }

    pub fn window(&self, index: usize) -> Option<&TruthWindow> {
        self.windows.iter().find(|w| w.index == index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionWindow {
    pub index: usize,
    pub boxes: Vec<BoundingBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cluster_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub event_counts: Vec<usize>,
}

impl DetectionWindow {
    pub fn from_set(set: &DetectionSet) -> Self {
        DetectionWindow {
            index: set.window_index,
            boxes: set.boxes(),
            cluster_ids: set.detections.iter().map(|d| d.cluster_id).collect(),
            event_counts: set.detections.iter().map(|d| d.events).collect(),
        }
    }

    pub fn to_set(&self) -> DetectionSet {
        DetectionSet {
            window_index: self.index,
            detections: self
                .boxes
                .iter()
                .enumerate()
                .map(|(i, b)| Detection {
                    bbox: *b,
                    cluster_id: self.cluster_ids.get(i).copied().unwrap_or(i),
                    events: self.event_counts.get(i).copied().unwrap_or(0),
                })
                .collect(),
        }
    }
}

/// Detections per window. Shares the ground-truth layout, so a truth file is
/// also a valid detections file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionsFile {
    #[serde(default = "format_version")]
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<SensorGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub windows: Vec<DetectionWindow>,
}

/// Match every detection window against the truth window with the same
/// index. Window sets must agree.
pub fn evaluate(detections: &DetectionsFile, truth: &GroundTruth, threshold: f64) -> Result<MetricsReport> {
    let mut det_idx: Vec<usize> = detections.windows.iter().map(|w| w.index).collect();
    let mut truth_idx: Vec<usize> = truth.windows.iter().map(|w| w.index).collect();
    det_idx.sort_unstable();
    truth_idx.sort_unstable();
    if det_idx != truth_idx {
        return Err(Error::invalid(format!(
            "window indices differ: detections {:?} vs truth {:?}",
            summarize(&det_idx),
            summarize(&truth_idx)
        )));
    }
    let mut results = Vec::with_capacity(detections.windows.len());
    for w in &detections.windows {
        let t = truth.window(w.index).expect("indices checked above");
        results.push(match_window(&w.to_set(), &t.boxes, threshold)?);
    }
    results.sort_by_key(|r| r.window_index);
    Ok(metrics(&results))
}

fn summarize(idx: &[usize]) -> String {
    match (idx.first(), idx.last()) {
        (Some(a), Some(b)) => format!("{} windows in [{a}, {b}]", idx.len()),
        _ => "none".to_string(),
    }
}

pub const METRICS_CSV_HEADER: &str = "sequence,method,tp,fp,fn,precision,recall,f_measure";

pub fn write_metrics_row<W: Write>(mut out: W, sequence: &str, method: &str, report: &MetricsReport) -> std::io::Result<()> {
    writeln!(
        out,
        "{sequence},{method},{},{},{},{:.6},{:.6},{:.6}",
        report.totals.tp, report.totals.fp, report.totals.fn_, report.precision, report.recall, report.f_measure
    )
}
