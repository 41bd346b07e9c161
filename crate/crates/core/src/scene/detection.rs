use serde::{Deserialize, Serialize};

use super::SceneError;

/// IoU above which a grounded detection adopts the detector's class.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.35;

/// Axis-aligned box in pixels, `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(SceneError::DegenerateBox((*self).into()));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// Pixel containing the box midpoint.
    pub fn center_pixel(&self) -> (f64, f64) {
        (
            ((self.x_min + self.x_max) / 2.0).floor(),
            ((self.y_min + self.y_max) / 2.0).floor(),
        )
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64, SceneError> {
    a.validate()?;
    b.validate()?;
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    /// Open-vocabulary segmenter with cross-frame tracking.
    Grounded,
    /// Closed-set detector, better at classification, no track ids.
    Detector,
}

/// Pixel set stored as row-major `(start, length)` runs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask {
    pub runs: Vec<(u64, u32)>,
}

impl Mask {
    pub fn is_empty(&self) -> bool {
        self.runs.iter().all(|&(_, len)| len == 0)
    }

    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|&(_, len)| u64::from(len)).sum()
    }

    /// Row-major pixel indices in run order.
    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.runs
            .iter()
            .flat_map(|&(start, len)| start..start + u64::from(len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub frame_id: u32,
    pub bbox: BBox,
    pub class_label: String,
    pub source: DetectionSource,
    /// `-1` marks an object without cross-frame identity.
    pub track_id: i64,
    pub mask: Option<Mask>,
    pub confidence: f64,
    /// Image embedding of the box crop, present for sign detections.
    pub sign_embedding: Option<Vec<f32>>,
}

impl Detection2D {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.bbox.validate()?;
        if self.source == DetectionSource::Grounded && self.track_id < 0 {
            return Err(SceneError::UntrackedGrounded {
                frame_id: self.frame_id,
                track_id: self.track_id,
            });
        }
        Ok(())
    }
}

/// Fuses one frame's grounded detections with the detector's.
///
/// Pairs are matched greedily by descending IoU (ties by input order).
/// A matched grounded detection takes the detector's class when the IoU
/// is strictly above `threshold`. Unmatched detector boxes are appended
/// with track id `-1`. Every grounded detection survives, in input order.
pub fn merge_detections(
    grounded: &[Detection2D],
    detector: &[Detection2D],
    threshold: f64,
) -> Result<Vec<Detection2D>, SceneError> {
    let frame = grounded.first().or(detector.first()).map(|d| d.frame_id);
    for d in grounded.iter().chain(detector) {
        if Some(d.frame_id) != frame {
            return Err(SceneError::FrameMismatch(
                frame.unwrap_or_default(),
                d.frame_id,
            ));
        }
        d.validate()?;
    }

    let mut pairs = Vec::new();
    for (gi, g) in grounded.iter().enumerate() {
        for (di, d) in detector.iter().enumerate() {
            let score = iou(&g.bbox, &d.bbox)?;
            if score > threshold {
                pairs.push((score, gi, di));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut grounded_match = vec![None; grounded.len()];
    let mut detector_used = vec![false; detector.len()];
    for (_, gi, di) in pairs {
        if grounded_match[gi].is_none() && !detector_used[di] {
            grounded_match[gi] = Some(di);
            detector_used[di] = true;
        }
    }

    let mut out = Vec::with_capacity(grounded.len() + detector.len());
    for (g, m) in grounded.iter().zip(&grounded_match) {
        let mut merged = g.clone();
        if let Some(di) = *m {
            merged.class_label = detector[di].class_label.clone();
        }
        out.push(merged);
    }
    for (d, used) in detector.iter().zip(&detector_used) {
        if !used {
            let mut extra = d.clone();
            extra.track_id = -1;
            extra.source = DetectionSource::Detector;
            out.push(extra);
        }
    }
    Ok(out)
}
