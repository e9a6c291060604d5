//! Scoring of externally produced face detections against ground truth.
//!
//! Matching is greedy per image: detections in descending confidence claim
//! the unclaimed ground-truth box of highest IoU at or above the threshold.
//! Confidence ties are broken by the box coordinates in lexicographic order,
//! IoU ties by the lower ground-truth index.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub image_id: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// Detector score; ground-truth boxes carry `None`.
    pub confidence: Option<f64>,
}

impl BoundingBox {
    pub fn new(image_id: impl Into<String>, coords: [f64; 4], confidence: Option<f64>) -> Result<Self> {
        let [x_min, y_min, x_max, y_max] = coords;
        if coords.iter().any(|v| !v.is_finite()) || !(x_max > x_min && y_max > y_min) {
            return Err(Error::invalid(format!("invalid box {coords:?}")));
        }
        if let Some(c) = confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    fn score(&self) -> f64 {
        self.confidence.unwrap_or(1.0)
    }
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Descending confidence, then ascending coordinates.
fn priority(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| {
        a.coords()
            .iter()
            .zip(b.coords())
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMatch {
    /// Index into the detection list passed in.
    pub detection: usize,
    /// Index into the ground-truth list, when matched.
    pub ground_truth: Option<usize>,
    pub iou: f64,
}

impl DetectionMatch {
    pub fn is_tp(&self) -> bool {
        self.ground_truth.is_some()
    }
}

/// Greedy matching within one image; the result is in processing order.
pub fn match_image(dets: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> Vec<DetectionMatch> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| priority(&dets[a], &dets[b]).then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] {
                    continue;
                }
                let v = iou(&dets[d], gt);
                if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                claimed[g] = true;
            }
            DetectionMatch {
                detection: d,
                ground_truth: best.map(|b| b.0),
                iou: best.map_or(0.0, |b| b.1),
            }
        })
        .collect()
}

/// Matches for one image id.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatches {
    pub image_id: String,
    pub ground_truths: usize,
    /// Detection indices refer to the input detection list.
    pub matches: Vec<DetectionMatch>,
}

/// Groups boxes by image and matches each image, images in id order.
pub fn match_detections(dets: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> Vec<ImageMatches> {
    let mut images: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        images.entry(&d.image_id).or_default().0.push(i);
    }
    for (i, g) in gts.iter().enumerate() {
        images.entry(&g.image_id).or_default().1.push(i);
    }
    images
        .into_iter()
        .map(|(id, (di, gi))| {
            let d: Vec<BoundingBox> = di.iter().map(|&i| dets[i].clone()).collect();
            let g: Vec<BoundingBox> = gi.iter().map(|&i| gts[i].clone()).collect();
            let matches = match_image(&d, &g, iou_threshold)
                .into_iter()
                .map(|m| DetectionMatch {
                    detection: di[m.detection],
                    ground_truth: m.ground_truth.map(|k| gi[k]),
                    iou: m.iou,
                })
                .collect();
            ImageMatches {
                image_id: id.to_string(),
                ground_truths: gi.len(),
                matches,
            }
        })
        .collect()
}

/// All-point interpolated AP from `(confidence, is_tp)` flags.
pub fn average_precision(flags: &[(f64, bool)], total_gt: usize) -> Result<f64> {
    if total_gt == 0 {
        return Err(Error::invalid("average precision needs at least one ground-truth box"));
    }
    let mut sorted = flags.to_vec();
    // stable, so equal confidences keep the caller's order
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(sorted.len());
    for (k, &(_, hit)) in sorted.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for i in (0..points.len()).rev() {
        envelope = envelope.max(points[i].1);
        let lower = if i == 0 { 0.0 } else { points[i - 1].0 };
        ap += (points[i].0 - lower) * envelope;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub map: f64,
    pub tpr: f64,
    /// False positives divided by the number of distinct images.
    pub fpr_per_image: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
    pub images: Vec<ImageMatches>,
    pub iou_threshold: f64,
}

pub fn detection_report(dets: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> Result<DetectionReport> {
    if gts.is_empty() {
        return Err(Error::invalid("no ground-truth boxes"));
    }
    let images = match_detections(dets, gts, iou_threshold);
    let mut flagged: Vec<(usize, bool)> = images
        .iter()
        .flat_map(|im| im.matches.iter().map(|m| (m.detection, m.is_tp())))
        .collect();
    // global ranking: confidence, then image id, then coordinates
    flagged.sort_by(|&(a, _), &(b, _)| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score()
            .total_cmp(&da.score())
            .then_with(|| da.image_id.cmp(&db.image_id))
            .then_with(|| priority(da, db))
            .then(a.cmp(&b))
    });
    let flags: Vec<(f64, bool)> = flagged.iter().map(|&(d, tp)| (dets[d].score(), tp)).collect();
    let tp = flags.iter().filter(|f| f.1).count();
    let fp = flags.len() - tp;
    Ok(DetectionReport {
        map: average_precision(&flags, gts.len())?,
        tpr: tp as f64 / gts.len() as f64,
        fpr_per_image: fp as f64 / images.len() as f64,
        true_positives: tp,
        false_positives: fp,
        ground_truths: gts.len(),
        images,
        iou_threshold,
    })
}

/// Reads `image_id,x_min,y_min,x_max,y_max[,confidence]` rows. A leading
/// header row starting with `image_id` and `#` comment lines are skipped.
/// With `detections` set, the confidence column is required.
pub fn load_boxes(path: &Path, detections: bool) -> Result<Vec<BoundingBox>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        if rec.get(0) == Some("image_id") {
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if !(5..=6).contains(&rec.len()) {
            return Err(parse_err(format!("expected 5 or 6 fields, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| parse_err(format!("field {} `{}` is not a number", i + 1, &rec[i])))
        };
        let coords = [num(1)?, num(2)?, num(3)?, num(4)?];
        let confidence = if rec.len() == 6 { Some(num(5)?) } else { None };
        if detections && confidence.is_none() {
            return Err(parse_err("detection row has no confidence".into()));
        }
        let b = BoundingBox::new(&rec[0], coords, confidence).map_err(|e| parse_err(e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("{other:?}"),
        },
    }
}
