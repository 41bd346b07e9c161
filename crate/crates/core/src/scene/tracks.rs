use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::depth::{normalize_depth, object_depth, DepthFrame};
use super::detection::Detection2D;
use super::signs::{classify_sign, SignDatabase, SignMatch};
use super::SceneError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthSample {
    pub frame_id: u32,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackedObject {
    pub track_id: i64,
    pub class_label: String,
    /// Sorted by frame, one sample per frame.
    pub depths: Vec<DepthSample>,
    pub traffic_light_state: Option<String>,
    pub sign_category: Option<String>,
    pub sign_description: Option<String>,
}

impl TrackedObject {
    pub fn new(track_id: i64, class_label: impl Into<String>, depths: Vec<DepthSample>) -> Self {
        Self {
            track_id,
            class_label: class_label.into(),
            depths,
            traffic_light_state: None,
            sign_category: None,
            sign_description: None,
        }
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.depths.last().map(|s| s.frame_id)
    }
}

/// Accepts "traffic light", "traffic_light", "Traffic-Light" and the like.
pub fn is_traffic_light(class_label: &str) -> bool {
    let canon: String = class_label
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect();
    canon.split_whitespace().collect::<Vec<_>>() == ["traffic", "light"]
}

pub fn annotate_traffic_light(
    mut obj: TrackedObject,
    external_state: &str,
) -> Result<TrackedObject, SceneError> {
    if !is_traffic_light(&obj.class_label) {
        return Err(SceneError::NotATrafficLight {
            class_label: obj.class_label,
        });
    }
    obj.traffic_light_state = Some(external_state.to_string());
    Ok(obj)
}

/// Most frequent label; ties go to the lexicographically smallest.
fn majority_label<'a>(labels: impl Iterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (label, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((label, n));
        }
    }
    best.map(|(l, _)| l.to_string()).unwrap_or_default()
}

/// Groups merged detections into objects with per-frame scaled depth.
///
/// Track ids `>= 0` are grouped across frames; each `-1` detection becomes
/// its own single-frame object. Output is sorted by track id, then first
/// frame, then class.
pub fn build_tracks(
    detections: &[Detection2D],
    depths: &BTreeMap<u32, DepthFrame>,
) -> Result<Vec<TrackedObject>, SceneError> {
    build_tracks_with_signs(detections, depths, None)
}

fn best_sign<'a>(
    dets: impl Iterator<Item = &'a Detection2D>,
    signs: Option<&SignDatabase>,
) -> Result<Option<SignMatch>, SceneError> {
    let Some(db) = signs else { return Ok(None) };
    let mut best: Option<SignMatch> = None;
    for d in dets {
        let Some(emb) = &d.sign_embedding else {
            continue;
        };
        if let Some(m) = classify_sign(emb, db)? {
            if best.as_ref().is_none_or(|b| m.score > b.score) {
                best = Some(m);
            }
        }
    }
    Ok(best)
}

fn attach_sign(obj: &mut TrackedObject, m: Option<SignMatch>) {
    if let Some(m) = m {
        obj.sign_category = Some(m.category);
        obj.sign_description = Some(m.description);
    }
}

/// As [`build_tracks`], also attaching each object's best sign match over
/// its detections' crop embeddings.
pub fn build_tracks_with_signs(
    detections: &[Detection2D],
    depths: &BTreeMap<u32, DepthFrame>,
    signs: Option<&SignDatabase>,
) -> Result<Vec<TrackedObject>, SceneError> {
    let mut scales = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut tracked: BTreeMap<i64, Vec<(&Detection2D, f64)>> = BTreeMap::new();
    let mut untracked = Vec::new();

    for det in detections {
        det.validate()?;
        let frame = depths
            .get(&det.frame_id)
            .ok_or(SceneError::MissingDepth(det.frame_id))?;
        let scale = match scales.get(&det.frame_id) {
            Some(&s) => s,
            None => {
                let s = normalize_depth(frame)?;
                scales.insert(det.frame_id, s);
                s
            }
        };
        let depth = object_depth(det, frame, scale)?;
        if det.track_id < 0 {
            let mut obj = TrackedObject::new(
                -1,
                det.class_label.clone(),
                vec![DepthSample {
                    frame_id: det.frame_id,
                    depth,
                }],
            );
            attach_sign(&mut obj, best_sign(std::iter::once(det), signs)?);
            untracked.push(obj);
            continue;
        }
        if !seen.insert((det.track_id, det.frame_id)) {
            return Err(SceneError::DuplicateTrackFrame {
                track_id: det.track_id,
                frame_id: det.frame_id,
            });
        }
        tracked.entry(det.track_id).or_default().push((det, depth));
    }

    let mut out = Vec::with_capacity(tracked.len() + untracked.len());
    for (track_id, mut samples) in tracked {
        samples.sort_by_key(|(d, _)| d.frame_id);
        let label = majority_label(samples.iter().map(|(d, _)| d.class_label.as_str()));
        let depths = samples
            .iter()
            .map(|(d, depth)| DepthSample {
                frame_id: d.frame_id,
                depth: *depth,
            })
            .collect();
        let mut obj = TrackedObject::new(track_id, label, depths);
        attach_sign(&mut obj, best_sign(samples.iter().map(|(d, _)| *d), signs)?);
        out.push(obj);
    }
    untracked.sort_by(|a, b| {
        a.depths[0]
            .frame_id
            .cmp(&b.depths[0].frame_id)
            .then_with(|| a.class_label.cmp(&b.class_label))
            .then_with(|| a.depths[0].depth.total_cmp(&b.depths[0].depth))
            .then_with(|| a.sign_category.cmp(&b.sign_category))
    });
    out.splice(0..0, untracked);
    Ok(out)
}
